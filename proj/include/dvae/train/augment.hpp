#pragma once

// In-plane rotation and mirror augmentation applied to images and labels alike.

#include <cmath>
#include <numbers>
#include <random>

#include "dvae/data/sample.hpp"
#include "dvae/pose.hpp"

namespace dvae::train {

struct AugmentOptions {
  double rotation_deg = 0;  // theta ~ U(-rotation_deg, rotation_deg)
  bool flip = false;        // mirror with probability 1/2
};

namespace detail {

inline float bilinear(const data::Image& im, double x, double y, int c) {
  x = std::clamp(x, 0.0, im.width - 1.0);
  y = std::clamp(y, 0.0, im.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, im.width - 1), y1 = std::min(y0 + 1, im.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * im.at(y0, x0, c) + fx * im.at(y0, x1, c);
  const double bottom = (1 - fx) * im.at(y1, x0, c) + fx * im.at(y1, x1, c);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

// Image of the scene after rotating it by theta about the camera axis
// (counter-clockwise on screen for positive theta).
inline data::Image rotate_image(const data::Image& im, double theta) {
  if (theta == 0.0) return im;
  data::Image out(im.height, im.width);
  const double cu = im.width / 2.0, cv = im.height / 2.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      const double du = x + 0.5 - cu, dv = y + 0.5 - cv;
      const double su = c * du - s * dv, sv = s * du + c * dv;
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = bilinear(im, su + cu - 0.5, sv + cv - 0.5, ch);
    }
  }
  return out;
}

inline data::Image mirror_image(const data::Image& im) {
  data::Image out(im.height, im.width);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = im.at(y, im.width - 1 - x, ch);
  return out;
}

// Applies p -> p M (row form) to every label; cpose and root/scale are
// recomputed from pose3d when it is present.
inline void transform_labels(data::Sample& s, const pose::Matrix3d& m, const pose::Matrix3d& view_left,
                             const pose::Matrix3d& view_right) {
  if (s.viewpoint) s.viewpoint->rotation = view_left * s.viewpoint->rotation * view_right;
  if (s.pose3d) {
    s.pose3d = pose::Pose3D(pose::Joints(s.pose3d->joints * m));
    const auto f = pose::canonicalize(*s.pose3d);
    s.root = f.root;
    s.scale = f.scale;
    if (s.cpose) s.cpose = f.cpose;
    if (s.viewpoint) s.viewpoint = f.viewpoint;
  } else if (s.cpose) {
    s.cpose->joints = s.cpose->joints * view_right;
  }
}

}  // namespace detail

// Rotation by theta about the camera z axis, then an optional mirror x -> -x.
inline data::Sample augment(const data::Sample& in, double theta, bool flip) {
  data::Sample s = in;
  if (theta != 0.0) {
    const pose::Matrix3d rz = pose::rotation_zyx(theta, 0, 0);
    if (s.image.pixels.size()) s.image = detail::rotate_image(s.image, theta);
    if (s.content_tag) s.content_tag = detail::rotate_image(*s.content_tag, theta);
    detail::transform_labels(s, rz.transpose(), rz, pose::Matrix3d::Identity());
  }
  if (flip) {
    const pose::Matrix3d f = pose::Vector3d(-1, 1, 1).asDiagonal();
    const pose::Matrix3d d = pose::Vector3d(1, 1, -1).asDiagonal();
    if (s.image.pixels.size()) s.image = detail::mirror_image(s.image);
    if (s.content_tag) s.content_tag = detail::mirror_image(*s.content_tag);
    detail::transform_labels(s, f, f, d);
    s.mirrored = !s.mirrored;
  }
  return s;
}

inline data::Sample augment(const data::Sample& in, std::mt19937_64& rng, const AugmentOptions& opt) {
  double theta = 0;
  bool flip = false;
  if (opt.rotation_deg > 0) {
    theta = std::uniform_real_distribution<double>(-opt.rotation_deg, opt.rotation_deg)(rng) * std::numbers::pi / 180;
  }
  if (opt.flip) flip = std::bernoulli_distribution(0.5)(rng);
  return augment(in, theta, flip);
}

}  // namespace dvae::train
