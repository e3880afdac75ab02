#pragma once

#include <optional>
#include <string>

#include "dvae/data/image.hpp"
#include "dvae/pose.hpp"

namespace dvae::data {

enum Label : unsigned {
  kPose3D = 1u << 0,
  kCPose = 1u << 1,
  kViewpoint = 1u << 2,
  kContentTag = 1u << 3,
};
inline constexpr unsigned kAllLabels = kPose3D | kCPose | kViewpoint | kContentTag;

struct Sample {
  std::size_t index = 0;
  Image image;
  std::optional<pose::Pose3D> pose3d;
  std::optional<pose::CanonicalPose> cpose;
  std::optional<pose::Viewpoint> viewpoint;
  std::optional<Image> content_tag;
  unsigned label_mask = 0;
  // Root joint and reference-bone length of pose3d (set whenever pose3d is).
  pose::Vector3d root = pose::Vector3d::Zero();
  double scale = 0.0;
  int content_id = -1;
  bool mirrored = false;  // handedness flipped by augmentation

  bool has(Label l) const { return (label_mask & l) != 0; }
};

inline std::string describe_mask(unsigned m) {
  std::string s;
  auto add = [&](Label l, const char* name) {
    if (m & l) s += (s.empty() ? "" : "+") + std::string(name);
  };
  add(kPose3D, "pose3d");
  add(kCPose, "cpose");
  add(kViewpoint, "viewpoint");
  add(kContentTag, "content_tag");
  return s.empty() ? "none" : s;
}

// Fields present iff named in the mask; complete pose triples compose exactly.
inline void check_sample(const Sample& s, double tol = 1e-5) {
  auto agree = [&](Label l, bool present, const char* name) {
    if (s.has(l) != present) throw InvariantError(std::string(name) + " presence disagrees with label mask");
  };
  agree(kPose3D, s.pose3d.has_value(), "pose3d");
  agree(kCPose, s.cpose.has_value(), "cpose");
  agree(kViewpoint, s.viewpoint.has_value(), "viewpoint");
  agree(kContentTag, s.content_tag.has_value(), "content_tag");
  if (s.pose3d && s.cpose && s.viewpoint) {
    const auto back = pose::compose(*s.cpose, *s.viewpoint, s.root, s.scale);
    const double err = (back.joints - s.pose3d->joints).cwiseAbs().maxCoeff();
    if (!(err <= tol)) {
      throw InvariantError("record " + std::to_string(s.index) + ": compose(cpose, viewpoint) is " +
                           std::to_string(err) + " mm from pose3d");
    }
  }
}

}  // namespace dvae::data
