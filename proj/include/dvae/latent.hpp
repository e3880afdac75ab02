#pragma once

// Probabilistic primitives shared by every objective: diagonal Gaussians in
// (mean, log-variance) form, reparameterized sampling, the closed-form KL to
// N(0, I), and named partitions of the latent code.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "dvae/errors.hpp"

namespace dvae {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
T clamp_log_var(T v) {
  return std::clamp(v, T(kLogVarMin), T(kLogVarMax));
}

template <typename T = double>
struct GaussianParams {
  Vec<T> mean;
  Vec<T> log_var;

  GaussianParams() = default;
  GaussianParams(Vec<T> m, Vec<T> lv) : mean(std::move(m)), log_var(std::move(lv)) {
    if (mean.size() != log_var.size()) {
      throw DimensionError("mean has " + std::to_string(mean.size()) +
                           " entries but log_var has " + std::to_string(log_var.size()));
    }
  }

  Eigen::Index size() const { return mean.size(); }

  // Per-dimension standard deviation with log_var clamped to [-10, 10].
  Vec<T> stddev() const {
    return log_var.unaryExpr([](T v) { return std::exp(T(0.5) * clamp_log_var(v)); });
  }
};

template <typename T>
void require_finite(const GaussianParams<T>& p) {
  if (!p.mean.allFinite() || !p.log_var.allFinite()) {
    throw NumericError("Gaussian parameters contain non-finite values");
  }
}

template <typename T>
Vec<T> reparameterize(const GaussianParams<T>& params, const Vec<T>& noise) {
  if (noise.size() != params.size()) {
    throw DimensionError("noise has " + std::to_string(noise.size()) + " entries, params have " +
                         std::to_string(params.size()));
  }
  return params.mean + params.stddev().cwiseProduct(noise);
}

// 0.5 * sum(exp(lv) + mu^2 - 1 - lv), with lv clamped.
template <typename T>
double kl_standard_normal(const GaussianParams<T>& params) {
  require_finite(params);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double lv = clamp_log_var(static_cast<double>(params.log_var[i]));
    const double mu = static_cast<double>(params.mean[i]);
    kl += std::expm1(lv) - lv + mu * mu;
  }
  return 0.5 * kl;
}

// d KL / d mean and d KL / d log_var. Zero log_var gradient outside the clamp.
template <typename T>
GaussianParams<T> kl_standard_normal_gradient(const GaussianParams<T>& params) {
  require_finite(params);
  Vec<T> d_mean = params.mean;
  Vec<T> d_lv(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const T lv = params.log_var[i];
    d_lv[i] = (lv < T(kLogVarMin) || lv > T(kLogVarMax)) ? T(0) : T(0.5) * std::expm1(lv);
  }
  return {std::move(d_mean), std::move(d_lv)};
}

struct Segment {
  std::string name;
  int dim = 0;
  bool operator==(const Segment&) const = default;
};

class LatentPartition {
 public:
  LatentPartition() = default;
  explicit LatentPartition(std::vector<Segment> segments) : segments_(std::move(segments)) {
    std::unordered_set<std::string> seen;
    int offset = 0;
    for (const auto& s : segments_) {
      if (s.name.empty()) throw ConfigError("latent segment with empty name");
      if (s.dim <= 0) throw ConfigError("latent segment '" + s.name + "' must have positive dim");
      if (!seen.insert(s.name).second) throw ConfigError("duplicate latent segment '" + s.name + "'");
      offsets_.push_back(offset);
      offset += s.dim;
    }
    total_ = offset;
  }

  const std::vector<Segment>& segments() const { return segments_; }
  int total_dim() const { return total_; }
  std::size_t size() const { return segments_.size(); }

  bool contains(const std::string& name) const {
    return std::any_of(segments_.begin(), segments_.end(),
                       [&](const Segment& s) { return s.name == name; });
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      if (segments_[i].name == name) return i;
    }
    throw LookupError("no latent segment named '" + name + "'");
  }

  int offset(const std::string& name) const { return offsets_[index_of(name)]; }
  int offset(std::size_t i) const { return offsets_.at(i); }
  int dim(const std::string& name) const { return segments_[index_of(name)].dim; }

  // "pose:32,content:32"
  std::string to_string() const {
    std::string out;
    for (const auto& s : segments_) {
      if (!out.empty()) out += ',';
      out += s.name + ':' + std::to_string(s.dim);
    }
    return out;
  }

  static LatentPartition parse(const std::string& text) {
    std::vector<Segment> segs;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto end = std::min(text.find(',', start), text.size());
      const std::string item = text.substr(start, end - start);
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("bad partition entry '" + item + "'");
      int dim = 0;
      try {
        std::size_t used = 0;
        dim = std::stoi(item.substr(colon + 1), &used);
        if (used != item.size() - colon - 1) throw std::invalid_argument(item);
      } catch (const std::logic_error&) {
        throw ConfigError("bad partition dim in '" + item + "'");
      }
      segs.push_back({item.substr(0, colon), dim});
      start = end + 1;
    }
    return LatentPartition(std::move(segs));
  }

  bool operator==(const LatentPartition& o) const { return segments_ == o.segments_; }

 private:
  std::vector<Segment> segments_;
  std::vector<int> offsets_;
  int total_ = 0;
};

template <typename T = double>
class LatentCode {
 public:
  LatentCode(Vec<T> values, LatentPartition partition)
      : values_(std::move(values)), partition_(std::move(partition)) {
    if (values_.size() != partition_.total_dim()) {
      throw DimensionError("code has " + std::to_string(values_.size()) + " values, partition needs " +
                           std::to_string(partition_.total_dim()));
    }
  }

  const Vec<T>& values() const { return values_; }
  const LatentPartition& partition() const { return partition_; }

  auto segment(const std::string& name) const {
    return values_.segment(partition_.offset(name), partition_.dim(name));
  }
  auto segment(const std::string& name) {
    return values_.segment(partition_.offset(name), partition_.dim(name));
  }

 private:
  Vec<T> values_;
  LatentPartition partition_;
};

template <typename T>
LatentCode<T> concat_latent(std::span<const Vec<T>> parts, const LatentPartition& partition) {
  if (parts.size() != partition.size()) {
    throw DimensionError("got " + std::to_string(parts.size()) + " parts for a partition of " +
                         std::to_string(partition.size()) + " segments");
  }
  Vec<T> values(partition.total_dim());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& seg = partition.segments()[i];
    if (parts[i].size() != seg.dim) {
      throw DimensionError("segment '" + seg.name + "' expects " + std::to_string(seg.dim) +
                           " values, got " + std::to_string(parts[i].size()));
    }
    values.segment(partition.offset(i), seg.dim) = parts[i];
  }
  return LatentCode<T>(std::move(values), partition);
}

template <typename T>
LatentCode<T> concat_latent(const std::vector<Vec<T>>& parts, const LatentPartition& partition) {
  return concat_latent(std::span<const Vec<T>>(parts), partition);
}

template <typename T>
Vec<T> split_latent(const LatentCode<T>& code, const std::string& name) {
  return code.segment(name);
}

}  // namespace dvae
