#pragma once

// Network roles per task and the batch featurization the trainer feeds them.
//
// pose_estimation  x = root-relative 3DPose / scale, y1 = CPose, y2 = viewpoint
//                  (9 entries), x_hat = RGB image encoded by q_xhat.
// synthesis_tags   x = image, y1 = 3DPose / pose_unit_mm, y2 = tag image.
// synthesis_zu     x = image, y1 = 3DPose / pose_unit_mm, z_u from q_u(x);
//                  the y1 decoder reads the whole code.

#include <map>
#include <span>
#include <string>

#include "dvae/data/sample.hpp"
#include "dvae/nets/checkpoint.hpp"
#include "dvae/train/config.hpp"

namespace dvae::train {

using Matf = Mat<float>;
using Vecf = Vec<float>;

struct ModelShape {
  int joints = 5;
  int image_size = 32;
};

inline std::string embed_role(Task t) { return t == Task::pose_estimation ? "q_xhat" : "q_x"; }

inline const std::string& y1_name(const TrainConfig& c) { return c.partition.segments()[0].name; }
inline const std::string& y2_name(const TrainConfig& c) { return c.partition.segments()[1].name; }

inline std::map<std::string, nets::NetSpec> model_specs(const TrainConfig& c, const ModelShape& shape) {
  using nets::NetKind;
  const int j3 = 3 * shape.joints;
  const std::vector<int> img{shape.image_size, shape.image_size, 3};
  const int d = c.partition.total_dim();
  const int d1 = c.partition.segments()[0].dim, d2 = c.partition.segments()[1].dim;
  auto vec_enc = [&](int in, int latent) {
    return nets::NetSpec{NetKind::vector_encoder, {in}, {latent}, c.vector_width, c.vector_depth, c.preset};
  };
  auto vec_dec = [&](int latent, int out) {
    return nets::NetSpec{NetKind::vector_decoder, {latent}, {out}, c.vector_width, c.vector_depth, c.preset};
  };
  auto img_enc = [&](int latent) {
    return nets::NetSpec{NetKind::image_encoder, img, {latent}, c.image_encoder_width, 1, c.preset};
  };
  auto img_dec = [&](int latent) {
    return nets::NetSpec{NetKind::image_decoder, {latent}, img, c.image_decoder_width, 1, c.preset};
  };
  const std::string q1 = "q_" + y1_name(c), q2 = "q_" + y2_name(c);
  const std::string p1 = "p_" + y1_name(c), p2 = "p_" + y2_name(c);
  switch (c.task) {
    case Task::pose_estimation:
      return {{q1, vec_enc(j3, d1)}, {q2, vec_enc(9, d2)},  {"p_x", vec_dec(d, j3)},
              {p1, vec_dec(d1, j3)}, {p2, vec_dec(d2, 9)},  {"q_xhat", img_enc(d)}};
    case Task::synthesis_tags:
      return {{q1, vec_enc(j3, d1)}, {q2, img_enc(d2)}, {"p_x", img_dec(d)},
              {p1, vec_dec(d1, j3)}, {p2, img_dec(d2)}, {"q_x", img_enc(d)}};
    case Task::synthesis_zu:
      return {{q1, vec_enc(j3, d1)}, {q2, img_enc(d2)}, {"p_x", img_dec(d)}, {p1, vec_dec(d, j3)}, {"q_x", img_enc(d)}};
  }
  throw ConfigError("unknown task");
}

// Freshly initialized checkpoint; each role gets its own seed stream.
inline nets::Checkpoint init_model(const TrainConfig& c, const ModelShape& shape) {
  nets::Checkpoint ck;
  ck.task = to_string(c.task);
  ck.partition = c.partition;
  ck.config_hash = c.hash;
  ck.config_text = c.text;
  ck.phase = "init";
  for (const auto& [role, spec] : model_specs(c, shape)) {
    ck.nets.emplace(role, nets::build_network<float>(spec, data::fnv1a(role, c.seed ^ 0x9e3779b97f4a7c15ull)));
  }
  return ck;
}

inline ModelShape model_shape(const nets::Checkpoint& ck) {
  const auto& spec = ck.nets.count("q_x") ? ck.net("q_x").spec() : ck.net("q_xhat").spec();
  const auto& p1 = ck.net("p_" + ck.partition.segments()[0].name).spec();
  return {nets::shape_size(p1.output_shape) / 3, spec.input_shape[0]};
}

// Checks that a checkpoint holds exactly the networks its embedded config implies.
inline TrainConfig checkpoint_config(const nets::Checkpoint& ck, const std::string& expect_task = "") {
  if (!expect_task.empty() && ck.task != expect_task) {
    throw CompatibilityError("checkpoint was trained for " + ck.task + ", need " + expect_task);
  }
  TrainConfig c = parse_config(ck.config_text);
  nets::require_compatible(ck, model_specs(c, model_shape(ck)), c.partition);
  return c;
}

// ---- featurization (one column per sample) ----

inline Vecf image_column(const data::Image& im) { return im.pixels; }

inline Vecf flat_rowmajor(const pose::Joints& j, double unit) {
  Vecf v(j.size());
  for (Eigen::Index r = 0; r < j.rows(); ++r)
    for (int k = 0; k < 3; ++k) v[3 * r + k] = static_cast<float>(j(r, k) / unit);
  return v;
}

inline pose::Joints joints_from(const Eigen::Ref<const Vecf>& v, double unit) {
  pose::Joints j(v.size() / 3, 3);
  for (Eigen::Index r = 0; r < j.rows(); ++r)
    for (int k = 0; k < 3; ++k) j(r, k) = static_cast<double>(v[3 * r + k]) * unit;
  return j;
}

inline Vecf rotation_column(const pose::Matrix3d& r) { return pose::flatten(r).cast<float>(); }

// Root-relative pose in units of the reference bone.
inline Vecf normalized_pose(const data::Sample& s) {
  pose::Joints j = s.pose3d->joints;
  j.rowwise() -= s.root.transpose();
  return flat_rowmajor(j, s.scale);
}

struct Batch {
  Matf x, y1, y2, x_hat;
  Vecf mask_x, mask_y1, mask_y2;  // 1 where the record carries the label
};

inline Batch make_batch(const TrainConfig& c, std::span<const data::Sample* const> records, const ModelShape& shape) {
  const auto n = static_cast<Eigen::Index>(records.size());
  const int j3 = 3 * shape.joints, pix = 3 * shape.image_size * shape.image_size;
  Batch b;
  b.mask_x = b.mask_y1 = b.mask_y2 = Vecf::Zero(n);
  if (c.task == Task::pose_estimation) {
    b.x = Matf::Zero(j3, n);
    b.y1 = Matf::Zero(j3, n);
    b.y2 = Matf::Zero(9, n);
    b.x_hat = Matf::Zero(pix, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = *records[i];
      if (s.image.pixels.size() == pix) b.x_hat.col(i) = s.image.pixels;
      if (s.pose3d) {
        b.x.col(i) = normalized_pose(s);
        b.mask_x[i] = 1;
      }
      if (s.cpose) {
        b.y1.col(i) = flat_rowmajor(s.cpose->joints, 1.0);
        b.mask_y1[i] = 1;
      }
      if (s.viewpoint) {
        b.y2.col(i) = rotation_column(s.viewpoint->rotation);
        b.mask_y2[i] = 1;
      }
    }
    return b;
  }
  b.x = Matf::Zero(pix, n);
  b.y1 = Matf::Zero(j3, n);
  if (c.task == Task::synthesis_tags) b.y2 = Matf::Zero(pix, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = *records[i];
    b.x.col(i) = s.image.pixels;
    b.mask_x[i] = 1;
    if (s.pose3d) {
      b.y1.col(i) = flat_rowmajor(s.pose3d->joints, c.pose_unit_mm);
      b.mask_y1[i] = 1;
    }
    if (c.task == Task::synthesis_tags && s.content_tag) {
      b.y2.col(i) = s.content_tag->pixels;
      b.mask_y2[i] = 1;
    }
  }
  return b;
}

}  // namespace dvae::train
