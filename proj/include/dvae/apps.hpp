#pragma once

// Inference on trained checkpoints. Every encoding is a posterior mean, and
// records are pushed through the networks one at a time so results do not
// depend on batch composition.

#include <span>

#include "dvae/data/image.hpp"
#include "dvae/data/sample.hpp"
#include "dvae/metrics.hpp"
#include "dvae/train/model.hpp"

namespace dvae::apps {

using train::Matf;
using train::Vecf;

inline Vecf encode_mean(const nets::Network<float>& encoder, const Vecf& input) {
  const Matf out = encoder.forward(Matf(input));
  return out.topRows(out.rows() / 2).col(0);
}

inline Vecf decode(const nets::Network<float>& decoder, const Vecf& z) { return decoder.forward(Matf(z)).col(0); }

inline data::Image as_image(const Vecf& v, int size) {
  data::Image im(size, size);
  im.pixels = v;
  return im;
}

// ---- pose estimation ----

struct PoseEstimate {
  pose::CanonicalPose cpose;
  pose::Viewpoint viewpoint;
  pose::Pose3D pose3d;
  bool repaired = false;  // decoder output was projected onto the rotations
};

class PoseEstimator {
 public:
  explicit PoseEstimator(const nets::Checkpoint& ck)
      : ck_(ck), cfg_(train::checkpoint_config(ck, "pose_estimation")) {}

  // Root and scale are given, as in the evaluation protocol.
  PoseEstimate operator()(const data::Image& image, const pose::Vector3d& root, double scale) const {
    const auto& p = cfg_.partition;
    const Vecf z = encode_mean(ck_.net("q_xhat"), image.pixels);
    const auto& s1 = p.segments()[0].name;
    const auto& s2 = p.segments()[1].name;
    const Vecf c = decode(ck_.net("p_" + s1), z.segment(p.offset(s1), p.dim(s1)));
    const Vecf r = decode(ck_.net("p_" + s2), z.segment(p.offset(s2), p.dim(s2)));
    PoseEstimate e;
    e.cpose.joints = train::joints_from(c, 1.0);
    const pose::Matrix3d raw = pose::rotation_from_flat(r.cast<double>());
    e.repaired = !pose::is_rotation(raw, 1e-9);
    e.viewpoint.rotation = e.repaired ? pose::nearest_rotation(raw) : raw;
    e.pose3d = pose::compose(e.cpose, e.viewpoint, root, scale);
    return e;
  }

  const train::TrainConfig& config() const { return cfg_; }

 private:
  const nets::Checkpoint& ck_;
  train::TrainConfig cfg_;
};

inline PoseEstimate estimate_pose(const nets::Checkpoint& ck, const data::Image& image, const pose::Vector3d& root,
                                  double scale) {
  return PoseEstimator(ck)(image, root, scale);
}

enum class Predictor { model, ground_truth, mean_pose };

inline Predictor predictor_from_string(const std::string& s) {
  if (s == "model") return Predictor::model;
  if (s == "ground-truth" || s == "ground_truth") return Predictor::ground_truth;
  if (s == "mean-pose" || s == "mean_pose") return Predictor::mean_pose;
  throw ConfigError("unknown predictor '" + s + "' (expected model, ground-truth, mean-pose)");
}

inline std::string to_string(Predictor p) {
  return p == Predictor::model ? "model" : p == Predictor::ground_truth ? "ground-truth" : "mean-pose";
}

// Mean of (pose3d - root) / scale over the records that carry a pose.
inline pose::Joints mean_normalized_pose(std::span<const data::Sample> samples) {
  pose::Joints sum;
  int n = 0;
  for (const auto& s : samples) {
    if (!s.pose3d) continue;
    pose::Joints j = s.pose3d->joints;
    j.rowwise() -= s.root.transpose();
    j /= s.scale;
    if (n == 0) sum = pose::Joints::Zero(j.rows(), 3);
    sum += j;
    ++n;
  }
  if (n == 0) throw SupervisionError("mean pose needs records with pose3d labels");
  return sum / n;
}

struct EvalInput {
  const nets::Checkpoint* checkpoint = nullptr;  // Predictor::model
  const pose::Joints* mean_pose = nullptr;        // Predictor::mean_pose
};

inline metrics::Report evaluate(std::span<const data::Sample> test, Predictor predictor, const EvalInput& in) {
  std::vector<pose::Pose3D> preds, gts;
  for (const auto& s : test) {
    if (!s.pose3d) throw SupervisionError("record " + std::to_string(s.index) + " has no pose3d label to evaluate against");
    gts.push_back(*s.pose3d);
  }
  if (gts.empty()) throw SupervisionError("evaluation set is empty");
  int repaired = 0;
  double cpose_err = -1;
  std::string hash;
  switch (predictor) {
    case Predictor::ground_truth:
      preds = gts;
      break;
    case Predictor::mean_pose: {
      if (!in.mean_pose) throw ConfigError("mean-pose predictor needs the training mean pose");
      for (const auto& s : test) {
        pose::Joints j = *in.mean_pose * s.scale;
        j.rowwise() += s.root.transpose();
        preds.emplace_back(std::move(j));
      }
      break;
    }
    case Predictor::model: {
      if (!in.checkpoint) throw ConfigError("model predictor needs a checkpoint");
      const PoseEstimator est(*in.checkpoint);
      hash = in.checkpoint->config_hash;
      double total = 0;
      int counted = 0;
      for (const auto& s : test) {
        if (!s.image.pixels.size()) throw SupervisionError("record " + std::to_string(s.index) + " has no image");
        const auto e = est(s.image, s.root, s.scale);
        repaired += e.repaired;
        preds.push_back(e.pose3d);
        if (s.cpose) {
          total += (e.cpose.joints - s.cpose->joints).rowwise().norm().mean() * s.scale;
          ++counted;
        }
      }
      if (counted) cpose_err = total / counted;
      break;
    }
  }
  auto r = metrics::evaluate_poses(preds, gts);
  r.predictor = to_string(predictor);
  r.repaired_viewpoints = repaired;
  r.cpose_epe = cpose_err;
  r.config_hash = hash;
  return r;
}

// ---- synthesis ----

class Synthesizer {
 public:
  explicit Synthesizer(const nets::Checkpoint& ck) : ck_(ck), cfg_(train::checkpoint_config(ck)) {
    if (cfg_.task == train::Task::pose_estimation) throw CompatibilityError("synthesis needs a synthesis checkpoint");
    size_ = train::model_shape(ck).image_size;
  }

  const LatentPartition& partition() const { return cfg_.partition; }
  bool has_tags() const { return cfg_.task == train::Task::synthesis_tags; }
  int image_size() const { return size_; }

  Vecf encode_pose(const pose::Pose3D& p) const {
    return encode_mean(ck_.net("q_" + seg(0)), train::flat_rowmajor(p.joints, cfg_.pose_unit_mm));
  }

  // Content from a tag image (tags model) or a reference image (z_u model).
  Vecf encode_content(const data::Image& im) const {
    check_size(im);
    return encode_mean(ck_.net("q_" + seg(1)), im.pixels);
  }

  Vecf code(const pose::Pose3D& p, const data::Image& content) const {
    Vecf z(cfg_.partition.total_dim());
    z << encode_pose(p), encode_content(content);
    return z;
  }

  // Content input of a sample: its tag for the tags model, its image otherwise.
  const data::Image& content_of(const data::Sample& s) const {
    if (has_tags()) {
      if (!s.content_tag) throw SupervisionError("record " + std::to_string(s.index) + " has no content tag");
      return *s.content_tag;
    }
    return s.image;
  }

  Vecf code(const data::Sample& s) const {
    if (!s.pose3d) throw SupervisionError("record " + std::to_string(s.index) + " has no pose3d");
    return code(*s.pose3d, content_of(s));
  }

  data::Image decode_image(const Vecf& z) const { return as_image(decode(ck_.net("p_x"), z), size_); }

  pose::Pose3D decode_pose(const Vecf& z) const {
    const auto& p = cfg_.partition;
    const Vecf in = has_tags() ? Vecf(z.segment(p.offset(0), p.segments()[0].dim)) : z;
    return pose::Pose3D(train::joints_from(decode(ck_.net("p_" + seg(0)), in), cfg_.pose_unit_mm));
  }

  // Pose read back from an image through the embedding encoder.
  pose::Pose3D pose_of_image(const data::Image& im) const {
    check_size(im);
    return decode_pose(encode_mean(ck_.net("q_x"), im.pixels));
  }

 private:
  const std::string& seg(std::size_t i) const { return cfg_.partition.segments()[i].name; }
  void check_size(const data::Image& im) const {
    if (im.height != size_ || im.width != size_) {
      throw DimensionError("image is " + std::to_string(im.height) + "x" + std::to_string(im.width) + ", model needs " +
                           std::to_string(size_) + "x" + std::to_string(size_));
    }
  }

  const nets::Checkpoint& ck_;
  train::TrainConfig cfg_;
  int size_ = 32;
};

struct Synthesis {
  data::Image image;
  pose::Pose3D pose;
};

inline Synthesis synthesize(const nets::Checkpoint& ck, const pose::Pose3D& p, const data::Image& content) {
  const Synthesizer s(ck);
  const Vecf z = s.code(p, content);
  return {s.decode_image(z), s.decode_pose(z)};
}

struct Walk {
  std::vector<Vecf> codes;
  std::vector<data::Image> images;
  std::vector<pose::Pose3D> poses;
};

// Linear path on one segment from A's code to B's, other segments held at A.
inline Walk latent_walk(const nets::Checkpoint& ck, const data::Sample& a, const data::Sample& b,
                        const std::string& segment, int steps) {
  if (steps < 2) throw ConfigError("a latent walk needs at least 2 steps");
  const Synthesizer s(ck);
  if (!s.partition().contains(segment)) {
    throw LookupError("no latent segment '" + segment + "' (partition " + s.partition().to_string() + ")");
  }
  const Vecf za = s.code(a), zb = s.code(b);
  const int off = s.partition().offset(segment), len = s.partition().dim(segment);
  Walk w;
  for (int i = 0; i < steps; ++i) {
    const float t = static_cast<float>(i) / static_cast<float>(steps - 1);
    Vecf z = za;
    z.segment(off, len) = (1 - t) * za.segment(off, len) + t * zb.segment(off, len);
    if (i == steps - 1) z.segment(off, len) = zb.segment(off, len);
    w.images.push_back(s.decode_image(z));
    w.poses.push_back(s.decode_pose(z));
    w.codes.push_back(std::move(z));
  }
  return w;
}

struct Transfer {
  // transfers[i][j]: pose of pose_donors[i], content of content_donors[j]
  std::vector<std::vector<data::Image>> transfers;
  data::Image sheet;  // content donors along the top, pose donors down the left
};

inline Transfer pose_transfer(const nets::Checkpoint& ck, std::span<const data::Sample> pose_donors,
                              std::span<const data::Sample> content_donors) {
  const Synthesizer s(ck);
  Transfer t;
  data::Image blank(s.image_size(), s.image_size());
  blank.pixels.setConstant(1.0f);
  std::vector<data::Image> tiles{blank};
  for (const auto& c : content_donors) tiles.push_back(s.content_of(c));
  for (const auto& p : pose_donors) {
    auto& row = t.transfers.emplace_back();
    const Vecf zp = s.encode_pose(*p.pose3d);
    tiles.push_back(p.image);
    for (const auto& c : content_donors) {
      Vecf z(s.partition().total_dim());
      z << zp, s.encode_content(s.content_of(c));
      row.push_back(s.decode_image(z));
      tiles.push_back(row.back());
    }
  }
  t.sheet = data::montage(tiles, static_cast<int>(content_donors.size()) + 1);
  return t;
}

}  // namespace dvae::apps
