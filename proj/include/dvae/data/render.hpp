#pragma once

// Procedural scenes: a 5-joint, two-finger stick hand over a procedural
// background, rendered orthographically as anti-aliased capsules.
//
// Joints: 0 root, 1 and 2 finger bases, 3 and 4 finger tips. In the canonical
// frame joint 1 sits at (0, 1, 0) and joint 2 in the x >= 0 half of the xy-plane.

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dvae/data/image.hpp"
#include "dvae/data/sample.hpp"
#include "dvae/pose.hpp"

namespace dvae::data {

inline constexpr int kSyntheticJoints = 5;
inline constexpr int kNuisanceCount = 9;  // c1 rgb, c2 rgb, direction, phase, frequency

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

struct JointLimits {
  double splay_min = deg(20), splay_max = deg(60);
  double flex_min = 0.0, flex_max = deg(90);
  double abd_min = deg(-20), abd_max = deg(20);
  double about_z = deg(180), about_y = deg(60), about_x = deg(60);  // symmetric ranges
  double scale_min = 32, scale_max = 40;                            // mm, reference bone
  double root_jitter = 2;                                           // mm per axis
};

struct SceneParams {
  std::array<double, 5> articulation{};  // splay, flex A, abduction A, flex B, abduction B
  std::array<double, 3> view{};          // about z, y, x (applied as Rz Ry Rx)
  double scale = 36;
  pose::Vector3d root = pose::Vector3d::Zero();
  int content_id = 0;  // 0 flat, 1 linear gradient, 2 sinusoid
  std::array<double, kNuisanceCount> nuisance{};
  std::uint64_t seed = 0;
};

struct RenderPreset {
  std::string name = "desk32";
  int size = 32;
  double px_per_mm = 0.19;
  double radius_px = 1.3;
};

inline RenderPreset render_preset(const std::string& name) {
  if (name == "desk32") return {"desk32", 32, 0.19, 1.3};
  if (name == "desk64") return {"desk64", 64, 0.38, 2.6};
  throw ConfigError("unknown render preset '" + name + "' (expected desk32 or desk64)");
}

inline SceneParams sample_scene(std::mt19937_64& rng, const JointLimits& lim = {}) {
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  SceneParams p;
  p.articulation = {u(lim.splay_min, lim.splay_max), u(lim.flex_min, lim.flex_max), u(lim.abd_min, lim.abd_max),
                    u(lim.flex_min, lim.flex_max), u(lim.abd_min, lim.abd_max)};
  p.view = {u(-lim.about_z, lim.about_z), u(-lim.about_y, lim.about_y), u(-lim.about_x, lim.about_x)};
  p.scale = u(lim.scale_min, lim.scale_max);
  p.root = {u(-lim.root_jitter, lim.root_jitter), u(-lim.root_jitter, lim.root_jitter),
            u(-lim.root_jitter, lim.root_jitter)};
  p.content_id = std::uniform_int_distribution<int>(0, 2)(rng);
  for (int i = 0; i < 6; ++i) p.nuisance[i] = u(-0.9, 0.2);
  p.nuisance[6] = u(-std::numbers::pi, std::numbers::pi);
  p.nuisance[7] = u(-std::numbers::pi, std::numbers::pi);
  p.nuisance[8] = u(0.2, 0.6);
  p.seed = rng();
  return p;
}

inline void check_scene(const SceneParams& p, const JointLimits& lim = {}) {
  auto in = [](double v, double lo, double hi, const char* what) {
    if (!(v >= lo - 1e-12 && v <= hi + 1e-12)) {
      throw GenerationError(std::string(what) + " = " + std::to_string(v) + " outside [" + std::to_string(lo) +
                            ", " + std::to_string(hi) + "]");
    }
  };
  in(p.articulation[0], lim.splay_min, lim.splay_max, "splay");
  in(p.articulation[1], lim.flex_min, lim.flex_max, "flex A");
  in(p.articulation[2], lim.abd_min, lim.abd_max, "abduction A");
  in(p.articulation[3], lim.flex_min, lim.flex_max, "flex B");
  in(p.articulation[4], lim.abd_min, lim.abd_max, "abduction B");
  in(p.view[0], -lim.about_z, lim.about_z, "rotation about z");
  in(p.view[1], -lim.about_y, lim.about_y, "rotation about y");
  in(p.view[2], -lim.about_x, lim.about_x, "rotation about x");
  in(p.scale, lim.scale_min, lim.scale_max, "scale");
  if (p.content_id < 0 || p.content_id > 2) throw GenerationError("content id must be 0, 1 or 2");
  if (!p.root.allFinite()) throw GenerationError("root is not finite");
}

// Canonical joints from the articulation angles (reference bone length 1).
inline pose::Joints canonical_joints(const std::array<double, 5>& a) {
  const pose::Vector3d n = pose::Vector3d::UnitZ();
  const pose::Vector3d base_a = pose::Vector3d::UnitY();
  const pose::Vector3d base_b(std::sin(a[0]), std::cos(a[0]), 0.0);
  auto tip_dir = [&](const pose::Vector3d& d, double flex, double abd) -> pose::Vector3d {
    const pose::Vector3d side = n.cross(d);
    return std::cos(flex) * (std::cos(abd) * d + std::sin(abd) * side) + std::sin(flex) * n;
  };
  pose::Joints j(kSyntheticJoints, 3);
  j.row(0).setZero();
  j.row(1) = base_a.transpose();
  j.row(2) = 0.9 * base_b.transpose();
  j.row(3) = j.row(1) + 0.8 * tip_dir(base_a, a[1], a[2]).transpose();
  j.row(4) = j.row(2) + 0.7 * tip_dir(base_b, a[3], a[4]).transpose();
  return j;
}

inline Image render_background(const SceneParams& p, int size) {
  Image im(size, size);
  const auto& q = p.nuisance;
  const double c = size / 2.0;
  const double dx = std::cos(q[6]), dy = std::sin(q[6]);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5 - c, py = y + 0.5 - c;
      double t = 0.0;
      if (p.content_id == 1) t = std::clamp(0.5 + 0.5 * (px * dx + py * dy) / c, 0.0, 1.0);
      if (p.content_id == 2) t = 0.5 + 0.5 * std::sin(q[8] * (32.0 / size) * (px * dx + py * dy) + q[7]);
      for (int ch = 0; ch < 3; ++ch) im.at(y, x, ch) = static_cast<float>((1 - t) * q[ch] + t * q[3 + ch]);
    }
  }
  return im;
}

namespace detail {

struct Capsule {
  double x0, y0, x1, y1, radius, depth;
  std::array<double, 3> color;  // in [0, 1]
};

inline double segment_distance(double px, double py, const Capsule& s) {
  const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - s.x0) * vx + (py - s.y0) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * vx), ey = py - (s.y0 + t * vy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

// Draws the skeleton over `im`. Orthographic camera: u = c + k X, v = c - k Y;
// +Z points at the viewer, so nearer bones are drawn last, thicker and brighter.
inline void render_skeleton(Image& im, const pose::Pose3D& pose3d, double scale, const RenderPreset& preset) {
  static constexpr std::array<std::array<int, 2>, 4> kBones{{{0, 1}, {1, 3}, {0, 2}, {2, 4}}};
  static constexpr std::array<std::array<double, 3>, 4> kColors{
      {{1.0, 0.35, 0.2}, {1.0, 0.8, 0.15}, {0.2, 0.45, 1.0}, {0.3, 1.0, 0.9}}};
  const double c = im.width / 2.0, k = preset.px_per_mm;
  const auto& j = pose3d.joints;
  const pose::Vector3d root = j.row(0).transpose();
  std::vector<detail::Capsule> caps;
  for (std::size_t b = 0; b < kBones.size(); ++b) {
    const auto a = j.row(kBones[b][0]), e = j.row(kBones[b][1]);
    const double zn = std::clamp((0.5 * (a(2) + e(2)) - root(2)) / (1.8 * scale), -1.0, 1.0);
    caps.push_back({c + k * a(0), c - k * a(1), c + k * e(0), c - k * e(1), preset.radius_px * (1 + 0.25 * zn), zn,
                    {kColors[b][0] * (0.8 + 0.2 * zn), kColors[b][1] * (0.8 + 0.2 * zn),
                     kColors[b][2] * (0.8 + 0.2 * zn)}});
  }
  std::stable_sort(caps.begin(), caps.end(), [](const auto& l, const auto& r) { return l.depth < r.depth; });
  for (const auto& s : caps) {
    for (int y = 0; y < im.height; ++y) {
      for (int x = 0; x < im.width; ++x) {
        const double cover = std::clamp(s.radius + 0.5 - detail::segment_distance(x + 0.5, y + 0.5, s), 0.0, 1.0);
        if (cover <= 0) continue;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = 2 * s.color[ch] - 1;
          im.at(y, x, ch) = static_cast<float>((1 - cover) * im.at(y, x, ch) + cover * v);
        }
      }
    }
  }
}

inline Sample generate_sample(const SceneParams& params, const RenderPreset& preset = {},
                              const JointLimits& limits = {}) {
  check_scene(params, limits);
  const pose::Matrix3d r = pose::rotation_zyx(params.view[0], params.view[1], params.view[2]);
  const pose::Joints canon = canonical_joints(params.articulation);
  Sample s;
  s.pose3d = pose::Pose3D((params.scale * (canon * r.transpose())).rowwise() + params.root.transpose());
  const auto f = pose::canonicalize(*s.pose3d);
  s.cpose = f.cpose;
  s.viewpoint = pose::Viewpoint{r};
  s.root = f.root;
  s.scale = f.scale;
  s.content_tag = render_background(params, preset.size);
  s.image = *s.content_tag;
  render_skeleton(s.image, *s.pose3d, params.scale, preset);
  s.label_mask = kAllLabels;
  s.content_id = params.content_id;
  return s;
}

}  // namespace dvae::data
