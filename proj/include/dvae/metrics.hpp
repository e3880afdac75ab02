#pragma once

// Keypoint error metrics: mean end-point error, pooled PCK and its normalized AUC.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvae/pose.hpp"

namespace dvae::metrics {

using pose::Pose3D;

inline void check_pair(const Pose3D& pred, const Pose3D& gt) {
  if (pred.joint_count() != gt.joint_count()) {
    throw DimensionError("joint counts differ: " + std::to_string(pred.joint_count()) + " vs " +
                         std::to_string(gt.joint_count()));
  }
}

inline std::vector<double> joint_errors(const Pose3D& pred, const Pose3D& gt) {
  check_pair(pred, gt);
  std::vector<double> e(static_cast<std::size_t>(gt.joint_count()));
  for (int j = 0; j < gt.joint_count(); ++j) e[j] = (pred.joints.row(j) - gt.joints.row(j)).norm();
  return e;
}

inline double mean_epe(const Pose3D& pred, const Pose3D& gt) {
  const auto e = joint_errors(pred, gt);
  double s = 0;
  for (double v : e) s += v;
  return s / static_cast<double>(e.size());
}

// All per-joint errors pooled over the set, sorted ascending.
inline std::vector<double> pooled_errors(std::span<const Pose3D> preds, std::span<const Pose3D> gts) {
  if (preds.size() != gts.size()) throw DimensionError("prediction and ground-truth counts differ");
  std::vector<double> all;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto e = joint_errors(preds[i], gts[i]);
    all.insert(all.end(), e.begin(), e.end());
  }
  std::sort(all.begin(), all.end());
  return all;
}

inline double pck_sorted(const std::vector<double>& sorted, double threshold) {
  if (sorted.empty()) return 0.0;
  const auto n = std::upper_bound(sorted.begin(), sorted.end(), threshold) - sorted.begin();
  return static_cast<double>(n) / static_cast<double>(sorted.size());
}

inline double pck(std::span<const Pose3D> preds, std::span<const Pose3D> gts, double threshold) {
  return pck_sorted(pooled_errors(preds, gts), threshold);
}

inline std::vector<double> thresholds(double t_min, double t_max, int steps) {
  if (!(t_min < t_max) || steps < 2) throw ConfigError("auc needs t_min < t_max and steps >= 2");
  std::vector<double> t(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) t[i] = t_min + (t_max - t_min) * i / (steps - 1);
  return t;
}

inline double auc_sorted(const std::vector<double>& sorted, double t_min, double t_max, int steps) {
  const auto t = thresholds(t_min, t_max, steps);
  double area = 0;
  for (int i = 1; i < steps; ++i) {
    area += 0.5 * (pck_sorted(sorted, t[i - 1]) + pck_sorted(sorted, t[i])) * (t[i] - t[i - 1]);
  }
  return area / (t_max - t_min);
}

inline double auc_pck(std::span<const Pose3D> preds, std::span<const Pose3D> gts, double t_min = 20.0,
                      double t_max = 50.0, int steps = 31) {
  return auc_sorted(pooled_errors(preds, gts), t_min, t_max, steps);
}

struct Report {
  double mean_epe = 0;
  double cpose_epe = -1;  // < 0: not measured
  std::vector<double> pck_thresholds;
  std::vector<double> pck_curve;
  double auc = 0;
  double t_min = 20, t_max = 50;
  int poses = 0;
  int joints = 0;
  int repaired_viewpoints = 0;
  std::string predictor;
  std::string config_hash;
  std::vector<double> per_sample_epe;
};

inline Report evaluate_poses(std::span<const Pose3D> preds, std::span<const Pose3D> gts, double t_min = 20.0,
                             double t_max = 50.0, int steps = 31) {
  Report r;
  const auto sorted = pooled_errors(preds, gts);
  r.t_min = t_min;
  r.t_max = t_max;
  r.pck_thresholds = thresholds(t_min, t_max, steps);
  for (double t : r.pck_thresholds) r.pck_curve.push_back(pck_sorted(sorted, t));
  r.auc = auc_sorted(sorted, t_min, t_max, steps);
  r.poses = static_cast<int>(gts.size());
  r.joints = gts.empty() ? 0 : gts.front().joint_count();
  double total = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    r.per_sample_epe.push_back(mean_epe(preds[i], gts[i]));
    total += r.per_sample_epe.back();
  }
  r.mean_epe = gts.empty() ? 0.0 : total / static_cast<double>(gts.size());
  return r;
}

inline nlohmann::ordered_json to_json(const Report& r) {
  nlohmann::ordered_json j;
  j["predictor"] = r.predictor;
  j["config_hash"] = r.config_hash;
  j["poses"] = r.poses;
  j["joints"] = r.joints;
  j["mean_epe_mm"] = r.mean_epe;
  if (r.cpose_epe >= 0) j["cpose_epe"] = r.cpose_epe;
  j["auc"] = r.auc;
  j["threshold_range_mm"] = {r.t_min, r.t_max};
  j["pck_thresholds_mm"] = r.pck_thresholds;
  j["pck"] = r.pck_curve;
  j["repaired_viewpoints"] = r.repaired_viewpoints;
  j["per_sample_epe_mm"] = r.per_sample_epe;
  return j;
}

}  // namespace dvae::metrics
