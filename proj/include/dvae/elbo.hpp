#pragma once

// Evidence lower bounds of the cross-modal and disentangled VAEs.
//
// All objectives are single-sample reparameterized estimates: the caller
// supplies the standard-normal noise, so re-evaluating with the same noise is
// bit-reproducible. Every term is summed over elements and averaged over the
// batch (columns). Gradients are returned per network role; roles whose
// networks are frozen get an all-zero entry.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/latent.hpp"
#include "dvae/nets/network.hpp"

namespace dvae::elbo {

using nets::Gradients;
using nets::Network;

enum class Likelihood {
  gaussian_unit_variance,  // -0.5 * sum (t - r)^2
  laplace_unit_scale,      // -sum |t - r|
};

template <typename T>
struct ReconTerm {
  const Mat<T>& target;
  const Mat<T>& reconstruction;
  Likelihood likelihood = Likelihood::gaussian_unit_variance;
};

namespace detail {

template <typename T>
void check_recon(const Mat<T>& target, const Mat<T>& recon, const Vec<T>* mask) {
  if (target.rows() != recon.rows() || target.cols() != recon.cols()) {
    throw DimensionError("reconstruction is " + std::to_string(recon.rows()) + "x" +
                         std::to_string(recon.cols()) + " but target is " + std::to_string(target.rows()) +
                         "x" + std::to_string(target.cols()));
  }
  if (mask && mask->size() != target.cols()) throw DimensionError("label mask length != batch size");
}

}  // namespace detail

// Batch-mean log-likelihood; mask (one entry per column) zeroes records whose
// label is absent. The batch mean still divides by the full batch size.
template <typename T>
double recon_log_likelihood(const ReconTerm<T>& term, const Vec<T>* mask = nullptr) {
  detail::check_recon(term.target, term.reconstruction, mask);
  const auto batch = term.target.cols();
  if (batch == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (mask && (*mask)[b] == T(0)) continue;
    double s = 0.0;
    for (Eigen::Index i = 0; i < term.target.rows(); ++i) {
      const double diff = static_cast<double>(term.target(i, b)) - static_cast<double>(term.reconstruction(i, b));
      s += term.likelihood == Likelihood::gaussian_unit_variance ? 0.5 * diff * diff : std::abs(diff);
    }
    total -= mask ? static_cast<double>((*mask)[b]) * s : s;
  }
  return total / static_cast<double>(batch);
}

// d recon_log_likelihood / d reconstruction.
template <typename T>
Mat<T> recon_log_likelihood_grad(const ReconTerm<T>& term, const Vec<T>* mask = nullptr) {
  detail::check_recon(term.target, term.reconstruction, mask);
  const T inv_batch = T(1) / static_cast<T>(std::max<Eigen::Index>(1, term.target.cols()));
  Mat<T> diff = term.target - term.reconstruction;
  Mat<T> g = term.likelihood == Likelihood::gaussian_unit_variance
                 ? Mat<T>(diff * inv_batch)
                 : Mat<T>(diff.unaryExpr([](T v) { return T((v > 0) - (v < 0)); }) * inv_batch);
  if (mask) g = g * mask->asDiagonal();
  return g;
}

struct ElboWeights {
  double lambda_x = 1.0;
  std::map<std::string, double> lambda_y;  // keyed by latent segment name
  double beta = 1.0;

  void validate() const {
    auto check = [](const std::string& what, double v) {
      if (!std::isfinite(v) || v < 0) throw ConfigError(what + " must be finite and >= 0");
    };
    check("lambda_x", lambda_x);
    for (const auto& [k, v] : lambda_y) check("lambda_y[" + k + "]", v);
    check("beta", beta);
  }

  double lambda(const std::string& segment) const {
    auto it = lambda_y.find(segment);
    if (it == lambda_y.end()) throw LookupError("no lambda weight for latent segment '" + segment + "'");
    return it->second;
  }
};

// Where the rows of the latent code come from: an encoder's posterior or a
// fixed Gaussian (mean, stddev), the latter broadcasting when it has one column.
template <typename T>
struct LatentSource {
  std::string role;
  const Network<T>* encoder = nullptr;
  const Mat<T>* input = nullptr;
  Mat<T> fixed_mean;
  Mat<T> fixed_stddev;
  std::string segment;  // empty: the whole code
  bool trainable = true;
  bool in_kl = true;
};

template <typename T>
struct ReconSpec {
  std::string term;  // "x" or a segment name
  std::string role;
  const Network<T>* decoder = nullptr;
  const Mat<T>* target = nullptr;
  std::string segment;  // decoder input; empty: the whole code
  double weight = 1.0;
  Likelihood likelihood = Likelihood::gaussian_unit_variance;
  const Vec<T>* mask = nullptr;
  bool trainable = true;
};

template <typename T>
struct Posterior {
  Mat<T> mean;
  Mat<T> log_var;  // clamped
};

template <typename T>
struct ElboResult {
  double value = 0.0;                  // the weighted objective
  std::map<std::string, double> recon;  // unweighted batch-mean log-likelihood per term
  double kl = 0.0;                      // batch-mean KL, summed over sources
  std::map<std::string, Gradients<T>> grads;  // d value / d parameters
  std::map<std::string, Posterior<T>> posteriors;
  Mat<T> code;  // the sampled z
};

namespace detail {

inline std::pair<int, int> rows_of(const LatentPartition& p, const std::string& segment) {
  if (segment.empty()) return {0, p.total_dim()};
  return {p.offset(segment), p.dim(segment)};
}

template <typename T>
struct SourceState {
  std::optional<nets::GradientContext<T>> ctx;
  Mat<T> lv_raw;
  int offset = 0, len = 0;
};

}  // namespace detail

template <typename T>
ElboResult<T> evaluate(const LatentPartition& partition, std::span<const LatentSource<T>> sources,
                       std::span<const ReconSpec<T>> recons, double beta, const Mat<T>& noise,
                       bool compute_gradients = true) {
  if (!std::isfinite(beta) || beta < 0) throw ConfigError("beta must be finite and >= 0");
  const int d = partition.total_dim();
  const Eigen::Index batch = noise.cols();
  if (noise.rows() != d) {
    throw DimensionError("noise has " + std::to_string(noise.rows()) + " rows, latent code has " +
                         std::to_string(d));
  }
  if (!noise.allFinite()) throw NumericError("noise contains non-finite values");

  ElboResult<T> res;
  res.code.setZero(d, batch);
  std::vector<int> covered(d, 0);
  std::vector<detail::SourceState<T>> states(sources.size());

  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    auto& st = states[s];
    std::tie(st.offset, st.len) = detail::rows_of(partition, src.segment);
    for (int r = st.offset; r < st.offset + st.len; ++r) ++covered[r];
    const auto eps = noise.middleRows(st.offset, st.len);
    if (src.encoder) {
      if (!src.input) throw DimensionError("latent source '" + src.role + "' has no input");
      if (src.input->cols() != batch) throw DimensionError("encoder input batch != noise batch");
      st.ctx = src.encoder->forward_with_gradients(*src.input);
      const Mat<T>& out = st.ctx->output();
      if (out.rows() != 2 * st.len) {
        throw DimensionError("encoder '" + src.role + "' emits " + std::to_string(out.rows() / 2) +
                             " latent dims, segment needs " + std::to_string(st.len));
      }
      Posterior<T> post{out.topRows(st.len), out.bottomRows(st.len).unaryExpr([](T v) { return clamp_log_var(v); })};
      st.lv_raw = out.bottomRows(st.len);
      if (!post.mean.allFinite() || !post.log_var.allFinite()) {
        throw NumericError("encoder '" + src.role + "' produced non-finite output");
      }
      res.code.middleRows(st.offset, st.len) =
          post.mean + ((T(0.5) * post.log_var.array()).exp() * eps.array()).matrix();
      if (src.in_kl) {
        const double kl = 0.5 * ((post.log_var.array().exp() - T(1) - post.log_var.array() +
                                  post.mean.array().square())
                                     .template cast<double>()
                                     .sum());
        res.kl += kl / static_cast<double>(batch);
      }
      res.posteriors[src.role] = std::move(post);
    } else {
      if (src.fixed_mean.rows() != st.len || src.fixed_stddev.rows() != st.len) {
        throw DimensionError("fixed latent source '" + src.role + "' has wrong dimension");
      }
      for (Eigen::Index b = 0; b < batch; ++b) {
        const Eigen::Index c = src.fixed_mean.cols() == 1 ? 0 : b;
        res.code.col(b).segment(st.offset, st.len) =
            src.fixed_mean.col(c) + src.fixed_stddev.col(c).cwiseProduct(eps.col(b));
      }
    }
  }
  for (int r = 0; r < d; ++r) {
    if (covered[r] != 1) throw DimensionError("latent sources must cover every code dimension exactly once");
  }

  res.value = -beta * res.kl;
  Mat<T> dz = Mat<T>::Zero(d, batch);
  for (const auto& rc : recons) {
    if (!rc.decoder || !rc.target) throw DimensionError("reconstruction term '" + rc.term + "' is incomplete");
    const auto [off, len] = detail::rows_of(partition, rc.segment);
    const Mat<T> zin = res.code.middleRows(off, len);
    auto ctx = rc.decoder->forward_with_gradients(zin);
    const ReconTerm<T> term{*rc.target, ctx.output(), rc.likelihood};
    const double ll = recon_log_likelihood(term, rc.mask);
    res.recon[rc.term] = ll;
    res.value += rc.weight * ll;
    if (!compute_gradients) continue;
    auto& g = res.grads[rc.role];
    if (g.empty()) g = nets::zero_gradients(rc.decoder->params());
    const Mat<T> d_out = recon_log_likelihood_grad(term, rc.mask) * static_cast<T>(rc.weight);
    dz.middleRows(off, len) += ctx.backward(d_out, rc.trainable ? &g : nullptr, true);
  }
  if (!std::isfinite(res.value)) throw NumericError("objective is not finite");
  if (!compute_gradients) return res;

  const T inv_batch = T(1) / static_cast<T>(std::max<Eigen::Index>(1, batch));
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    if (!src.encoder) continue;
    auto& st = states[s];
    auto& g = res.grads[src.role];
    if (g.empty()) g = nets::zero_gradients(src.encoder->params());
    if (!src.trainable) continue;
    const auto& post = res.posteriors[src.role];
    const auto eps = noise.middleRows(st.offset, st.len);
    const auto dz_s = dz.middleRows(st.offset, st.len);
    const auto stddev = (T(0.5) * post.log_var.array()).exp();
    Mat<T> d_mean = dz_s;
    Mat<T> d_lv = (dz_s.array() * eps.array() * T(0.5) * stddev).matrix();
    if (src.in_kl) {
      d_mean -= static_cast<T>(beta) * inv_batch * post.mean;
      d_lv -= (static_cast<T>(beta) * inv_batch * T(0.5) * (post.log_var.array().exp() - T(1))).matrix();
    }
    d_lv = (st.lv_raw.array() < T(kLogVarMin) || st.lv_raw.array() > T(kLogVarMax)).select(T(0), d_lv);
    Mat<T> d_out(2 * st.len, batch);
    d_out.topRows(st.len) = d_mean;
    d_out.bottomRows(st.len) = d_lv;
    st.ctx->backward(d_out, &g, false);
  }
  return res;
}

template <typename T>
ElboResult<T> evaluate(const LatentPartition& partition, const std::vector<LatentSource<T>>& sources,
                       const std::vector<ReconSpec<T>>& recons, double beta, const Mat<T>& noise,
                       bool compute_gradients = true) {
  return evaluate<T>(partition, std::span<const LatentSource<T>>(sources),
                     std::span<const ReconSpec<T>>(recons), beta, noise, compute_gradients);
}

// Cross-modal VAE: z ~ q(z|x) over a single segment "z"; both decoders read all of z.
template <typename T>
ElboResult<T> elbo_cvae(const Mat<T>& x, const Mat<T>& y, const Network<T>& encoder_x,
                        const Network<T>& decoder_x, const Network<T>& decoder_y,
                        const ElboWeights& weights, const Mat<T>& noise) {
  weights.validate();
  const LatentPartition partition({{"z", static_cast<int>(noise.rows())}});
  std::vector<LatentSource<T>> sources{{.role = "q_x", .encoder = &encoder_x, .input = &x}};
  std::vector<ReconSpec<T>> recons{
      {.term = "x", .role = "p_x", .decoder = &decoder_x, .target = &x, .weight = weights.lambda_x},
      {.term = "y", .role = "p_y", .decoder = &decoder_y, .target = &y, .weight = weights.lambda("y")}};
  return evaluate<T>(partition, sources, recons, weights.beta, noise);
}

// One observed factor y_i: its encoder fills segment i, its decoder reads segment i.
template <typename T>
struct Factor {
  const Mat<T>* y = nullptr;
  const Network<T>* encoder = nullptr;
  const Network<T>* decoder = nullptr;
};

// Disentangling step for a fully specified code z = [z_y1, ..., z_yN].
// Roles: q_<segment>, p_<segment>, p_x.
template <typename T>
ElboResult<T> elbo_dis(const Mat<T>& x, std::span<const Factor<T>> factors, const Network<T>& decoder_x,
                       const LatentPartition& partition, const ElboWeights& weights, const Mat<T>& noise) {
  weights.validate();
  if (factors.size() != partition.size()) {
    throw DimensionError("need one factor per latent segment (" + std::to_string(partition.size()) + ")");
  }
  std::vector<LatentSource<T>> sources;
  std::vector<ReconSpec<T>> recons{
      {.term = "x", .role = "p_x", .decoder = &decoder_x, .target = &x, .weight = weights.lambda_x}};
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto& seg = partition.segments()[i].name;
    sources.push_back({.role = "q_" + seg, .encoder = factors[i].encoder, .input = factors[i].y, .segment = seg});
    recons.push_back({.term = seg,
                      .role = "p_" + seg,
                      .decoder = factors[i].decoder,
                      .target = factors[i].y,
                      .segment = seg,
                      .weight = weights.lambda(seg)});
  }
  return evaluate<T>(partition, sources, recons, weights.beta, noise);
}

template <typename T>
ElboResult<T> elbo_dis(const Mat<T>& x, const Mat<T>& y1, const Mat<T>& y2, const Network<T>& q_y1,
                       const Network<T>& q_y2, const Network<T>& p_x, const Network<T>& p_y1,
                       const Network<T>& p_y2, const LatentPartition& partition, const ElboWeights& weights,
                       const Mat<T>& noise) {
  const std::vector<Factor<T>> factors{{&y1, &q_y1, &p_y1}, {&y2, &q_y2, &p_y2}};
  return elbo_dis<T>(x, std::span<const Factor<T>>(factors), p_x, partition, weights, noise);
}

// Per-record label availability for the embedding objectives (nullptr = all present).
template <typename T>
struct TermMasks {
  const Vec<T>* x = nullptr;
  std::map<std::string, const Vec<T>*> y;
};

// Embedding step: z ~ q(z|input) over the whole code, decoders frozen.
// y decoders read their own segment unless y_reads_full_code (the z_u model).
template <typename T>
ElboResult<T> elbo_embed(const std::string& encoder_role, const Mat<T>& input, const Network<T>& encoder,
                         const Mat<T>* x, const Network<T>* decoder_x, std::span<const Factor<T>> factors,
                         const LatentPartition& partition, const ElboWeights& weights, const Mat<T>& noise,
                         const TermMasks<T>& masks = {}, bool y_reads_full_code = false) {
  weights.validate();
  std::vector<LatentSource<T>> sources{{.role = encoder_role, .encoder = &encoder, .input = &input}};
  std::vector<ReconSpec<T>> recons;
  if (decoder_x && x) {
    recons.push_back({.term = "x",
                      .role = "p_x",
                      .decoder = decoder_x,
                      .target = x,
                      .weight = weights.lambda_x,
                      .mask = masks.x,
                      .trainable = false});
  }
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (!factors[i].decoder || !factors[i].y) continue;
    const auto& seg = partition.segments().at(i).name;
    auto m = masks.y.find(seg);
    recons.push_back({.term = seg,
                      .role = "p_" + seg,
                      .decoder = factors[i].decoder,
                      .target = factors[i].y,
                      .segment = y_reads_full_code ? std::string() : seg,
                      .weight = weights.lambda(seg),
                      .mask = m == masks.y.end() ? nullptr : m->second,
                      .trainable = false});
  }
  return evaluate<T>(partition, sources, recons, weights.beta, noise);
}

template <typename T>
ElboResult<T> elbo_emb(const Mat<T>& x, const Mat<T>& y1, const Mat<T>& y2, const Network<T>& q_x,
                       const Network<T>& p_x, const Network<T>& p_y1, const Network<T>& p_y2,
                       const LatentPartition& partition, const ElboWeights& weights, const Mat<T>& noise,
                       const TermMasks<T>& masks = {}) {
  const std::vector<Factor<T>> factors{{&y1, nullptr, &p_y1}, {&y2, nullptr, &p_y2}};
  return elbo_embed<T>("q_x", x, q_x, &x, &p_x, std::span<const Factor<T>>(factors), partition, weights,
                       noise, masks);
}

// Second input modality x_hat embedded against decoders trained on x.
template <typename T>
ElboResult<T> elbo_emb_prime(const Mat<T>& x_hat, const Mat<T>& x, const Mat<T>& y1, const Mat<T>& y2,
                             const Network<T>& q_xhat, const Network<T>& p_x, const Network<T>& p_y1,
                             const Network<T>& p_y2, const LatentPartition& partition,
                             const ElboWeights& weights, const Mat<T>& noise, const TermMasks<T>& masks = {}) {
  const std::vector<Factor<T>> factors{{&y1, nullptr, &p_y1}, {&y2, nullptr, &p_y2}};
  return elbo_embed<T>("q_xhat", x_hat, q_xhat, &x, &p_x, std::span<const Factor<T>>(factors), partition,
                       weights, noise, masks);
}

// Disentangling step with a residual factor: z = [z_y1 ~ q(.|y1), z_u ~ q_u(.|x)].
// The y1 decoder reads the whole code. Roles: q_<y1>, q_<u>, p_x, p_<y1>.
template <typename T>
ElboResult<T> elbo_dis_u(const Mat<T>& x, const Mat<T>& y1, const Network<T>& q_y1, const Network<T>& q_u,
                         const Network<T>& p_x, const Network<T>& p_y1, const LatentPartition& partition,
                         const ElboWeights& weights, const Mat<T>& noise) {
  weights.validate();
  if (partition.size() != 2) throw DimensionError("residual-factor model needs a [y1, u] partition");
  const auto& seg_y = partition.segments()[0].name;
  const auto& seg_u = partition.segments()[1].name;
  std::vector<LatentSource<T>> sources{
      {.role = "q_" + seg_y, .encoder = &q_y1, .input = &y1, .segment = seg_y},
      {.role = "q_" + seg_u, .encoder = &q_u, .input = &x, .segment = seg_u}};
  std::vector<ReconSpec<T>> recons{
      {.term = "x", .role = "p_x", .decoder = &p_x, .target = &x, .weight = weights.lambda_x},
      {.term = seg_y, .role = "p_" + seg_y, .decoder = &p_y1, .target = &y1, .weight = weights.lambda(seg_y)}};
  return evaluate<T>(partition, sources, recons, weights.beta, noise);
}

// Gaussian the inner consistency loop samples z_u from. One column
// broadcasts over the batch; otherwise one column per record.
template <typename T>
struct ZuStats {
  Mat<T> mean;
  Mat<T> stddev;
};

enum class ZuStatsMode { aggregate, per_record };

// Batch statistics of q_u's posteriors. aggregate: moment-matched Gaussian of
// the batch mixture (mean of means; variance = mean variance + variance of means).
template <typename T>
ZuStats<T> capture_zu_stats(const Posterior<T>& post, ZuStatsMode mode) {
  if (mode == ZuStatsMode::per_record) {
    return {post.mean, (T(0.5) * post.log_var.array()).exp().matrix()};
  }
  const Vec<T> mu = post.mean.rowwise().mean();
  const Vec<T> mean_var = post.log_var.array().exp().matrix().rowwise().mean();
  const Vec<T> var_of_means = (post.mean.colwise() - mu).array().square().matrix().rowwise().mean();
  return {mu, (mean_var + var_of_means).cwiseSqrt()};
}

// Negative y1 log-likelihood under p_y1([z_y1, z_noise]) with z_noise drawn
// from the stored z_u statistics. value is the loss (>= 0 for Gaussian terms
// up to the constant); grads are d loss / d parameters for q_<y1> and p_<y1>.
template <typename T>
ElboResult<T> consistency_loss_zu(const Mat<T>& y1, const Network<T>& q_y1, const Network<T>& p_y1,
                                  const LatentPartition& partition, const ZuStats<T>& stats,
                                  const Mat<T>& noise, Likelihood likelihood = Likelihood::gaussian_unit_variance) {
  if (partition.size() != 2) throw DimensionError("residual-factor model needs a [y1, u] partition");
  const auto& seg_y = partition.segments()[0].name;
  const auto& seg_u = partition.segments()[1].name;
  if (stats.mean.cols() != 1 && stats.mean.cols() != y1.cols()) {
    throw DimensionError("z_u statistics must have one column or one per record");
  }
  std::vector<LatentSource<T>> sources{
      {.role = "q_" + seg_y, .encoder = &q_y1, .input = &y1, .segment = seg_y, .in_kl = false},
      {.role = "z_noise", .fixed_mean = stats.mean, .fixed_stddev = stats.stddev, .segment = seg_u,
       .trainable = false, .in_kl = false}};
  std::vector<ReconSpec<T>> recons{
      {.term = seg_y, .role = "p_" + seg_y, .decoder = &p_y1, .target = &y1, .weight = 1.0,
       .likelihood = likelihood}};
  auto res = evaluate<T>(partition, sources, recons, 0.0, noise);
  res.value = -res.value;
  for (auto& [role, g] : res.grads) {
    for (auto& v : g) v = -v;
  }
  return res;
}

}  // namespace dvae::elbo
