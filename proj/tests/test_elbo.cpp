#include <gtest/gtest.h>

#include <random>

#include "dvae/elbo.hpp"
#include "gradcheck.hpp"

using namespace dvae;
using namespace dvae::elbo;
using nets::NetKind;
using nets::NetSpec;
using nets::Network;

namespace {

constexpr int kBatch = 3;

Mat<double> randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  return Mat<double>::NullaryExpr(r, c, [&] { return n(rng); });
}

Network<double> enc(int in, int latent, std::uint64_t seed) {
  return nets::build_encoder<double>({NetKind::vector_encoder, {in}, {latent}, 6, 2, nets::ScalePreset::desk},
                                     seed);
}
Network<double> dec(int latent, int out, std::uint64_t seed) {
  return nets::build_decoder<double>({NetKind::vector_decoder, {latent}, {out}, 6, 2, nets::ScalePreset::desk},
                                     seed);
}

// Plain-loop oracle for one reconstruction term.
double gaussian_ll(const Mat<double>& t, const Mat<double>& r) {
  double s = 0;
  for (Eigen::Index b = 0; b < t.cols(); ++b)
    for (Eigen::Index i = 0; i < t.rows(); ++i) s -= 0.5 * (t(i, b) - r(i, b)) * (t(i, b) - r(i, b));
  return s / t.cols();
}

struct Encoded {
  Mat<double> mean, log_var, z;
  double kl = 0;
};

Encoded encode(const Network<double>& q, const Mat<double>& in, const Mat<double>& eps) {
  const Mat<double> out = q.forward(in);
  const auto d = out.rows() / 2;
  Encoded e{out.topRows(d), out.bottomRows(d), Mat<double>(d, in.cols())};
  for (Eigen::Index b = 0; b < in.cols(); ++b) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double lv = std::clamp(e.log_var(i, b), -10.0, 10.0);
      e.z(i, b) = e.mean(i, b) + std::exp(0.5 * lv) * eps(i, b);
      e.kl += 0.5 * (std::exp(lv) - 1 - lv + e.mean(i, b) * e.mean(i, b));
    }
  }
  e.kl /= in.cols();
  return e;
}

// Checks every role in res.grads whose network is in `nets` against
// central differences of f().value.
template <typename F>
void expect_role_gradients(const ElboResult<double>& res, std::map<std::string, Network<double>*> nets, F f,
                           double tol = 1e-4) {
  for (auto& [role, net] : nets) {
    auto it = res.grads.find(role);
    ASSERT_NE(it, res.grads.end()) << role;
    const auto rep = gradcheck::check_gradients(*net, it->second, [&] { return f().value; });
    EXPECT_LT(rep.max_rel_error, tol) << role << ": " << rep.worst;
    EXPECT_GT(rep.checked, 0);
  }
}

// Two-factor fixture: x (8), y1 (5), y2 (4); partition a:3, b:2.
struct TwoFactor {
  LatentPartition partition{{{"a", 3}, {"b", 2}}};
  Mat<double> x = randn(8, kBatch, 1), y1 = randn(5, kBatch, 2), y2 = randn(4, kBatch, 3);
  Mat<double> xhat = randn(6, kBatch, 4);
  Mat<double> noise = randn(5, kBatch, 5);
  Network<double> q_a = enc(5, 3, 10), q_b = enc(4, 2, 11), q_x = enc(8, 5, 12), q_xhat = enc(6, 5, 13);
  Network<double> p_x = dec(5, 8, 20), p_a = dec(3, 5, 21), p_b = dec(2, 4, 22);
  ElboWeights w{.lambda_x = 1.0, .lambda_y = {{"a", 0.7}, {"b", 0.3}}, .beta = 0.5};
};

}  // namespace

TEST(ReconLogLikelihood, WorkedExamples) {
  Mat<double> t(2, 1), r(2, 1);
  t << 1, 2;
  r << 1, 1;
  EXPECT_DOUBLE_EQ(recon_log_likelihood<double>({t, r}), -0.5);
  EXPECT_DOUBLE_EQ(recon_log_likelihood<double>({t, r, Likelihood::laplace_unit_scale}), -1.0);
  EXPECT_DOUBLE_EQ(recon_log_likelihood<double>({t, t}), 0.0);
  Mat<double> bad(3, 1);
  EXPECT_THROW(recon_log_likelihood<double>({t, bad}), DimensionError);
}

TEST(ReconLogLikelihood, MaskDropsRecordsButKeepsBatchSize) {
  Mat<double> t = Mat<double>::Ones(2, 2), r = Mat<double>::Zero(2, 2);
  Vec<double> m(2);
  m << 1, 0;
  EXPECT_DOUBLE_EQ(recon_log_likelihood<double>({t, r}, &m), -0.5);
  EXPECT_DOUBLE_EQ(recon_log_likelihood<double>({t, r}), -1.0);
}

TEST(ElboWeights, RejectsNegativeOrNonFinite) {
  EXPECT_THROW((ElboWeights{.lambda_x = -1, .lambda_y = {}, .beta = 1}).validate(), ConfigError);
  EXPECT_THROW((ElboWeights{.lambda_x = 1, .lambda_y = {{"a", NAN}}, .beta = 1}).validate(), ConfigError);
  EXPECT_THROW((ElboWeights{.lambda_x = 1, .lambda_y = {}, .beta = INFINITY}).validate(), ConfigError);
  EXPECT_THROW(ElboWeights{}.lambda("a"), LookupError);
}

TEST(ElboCvae, MatchesManualComposition) {
  const Mat<double> x = randn(6, kBatch, 1), y = randn(4, kBatch, 2), eps = randn(3, kBatch, 3);
  const auto q = enc(6, 3, 1);
  const auto px = dec(3, 6, 2), py = dec(3, 4, 3);
  const ElboWeights w{.lambda_x = 0.8, .lambda_y = {{"y", 0.05}}, .beta = 2.0};
  const auto res = elbo_cvae(x, y, q, px, py, w, eps);
  const auto e = encode(q, x, eps);
  const double expect = 0.8 * gaussian_ll(x, px.forward(e.z)) + 0.05 * gaussian_ll(y, py.forward(e.z)) - 2.0 * e.kl;
  EXPECT_NEAR(res.value, expect, 1e-6);
  EXPECT_NEAR(res.kl, e.kl, 1e-12);
  EXPECT_NEAR(res.code(1, 2), e.z(1, 2), 1e-14);
}

TEST(ElboCvae, GradientsMatchFiniteDifferences) {
  const Mat<double> x = randn(6, kBatch, 1), y = randn(4, kBatch, 2), eps = randn(3, kBatch, 3);
  auto q = enc(6, 3, 1);
  auto px = dec(3, 6, 2), py = dec(3, 4, 3);
  const ElboWeights w{.lambda_x = 1.0, .lambda_y = {{"y", 0.5}}, .beta = 1.5};
  auto f = [&] { return elbo_cvae(x, y, q, px, py, w, eps); };
  expect_role_gradients(f(), {{"q_x", &q}, {"p_x", &px}, {"p_y", &py}}, f);
}

TEST(ElboDis, MatchesManualComposition) {
  TwoFactor s;
  const auto res = elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  const auto ea = encode(s.q_a, s.y1, s.noise.topRows(3));
  const auto eb = encode(s.q_b, s.y2, s.noise.bottomRows(2));
  Mat<double> z(5, kBatch);
  z << ea.z, eb.z;
  const double expect = gaussian_ll(s.x, s.p_x.forward(z)) + 0.7 * gaussian_ll(s.y1, s.p_a.forward(ea.z)) +
                        0.3 * gaussian_ll(s.y2, s.p_b.forward(eb.z)) - 0.5 * (ea.kl + eb.kl);
  EXPECT_NEAR(res.value, expect, 1e-6);
  EXPECT_NEAR(res.recon.at("a"), gaussian_ll(s.y1, s.p_a.forward(ea.z)), 1e-12);
}

TEST(ElboDis, ReducesToCvaeWithOneFactor) {
  // One segment whose observed factor is x itself: the dis objective is the
  // cross-modal objective with y = x.
  const Mat<double> x = randn(5, kBatch, 7), eps = randn(3, kBatch, 8);
  const auto q = enc(5, 3, 1);
  const auto px = dec(3, 5, 2), py = dec(3, 5, 3);
  const LatentPartition part({{"y", 3}});
  const ElboWeights w{.lambda_x = 0.9, .lambda_y = {{"y", 0.2}}, .beta = 1.3};
  const std::vector<Factor<double>> factors{{&x, &q, &py}};
  const auto dis = elbo_dis<double>(x, std::span<const Factor<double>>(factors), px, part, w, eps);
  const auto cvae = elbo_cvae(x, x, q, px, py, w, eps);
  EXPECT_NEAR(dis.value, cvae.value, 1e-10);
  for (const auto& [dr, cr] : {std::pair{"q_y", "q_x"}, {"p_x", "p_x"}, {"p_y", "p_y"}}) {
    const auto& gd = dis.grads.at(dr);
    const auto& gc = cvae.grads.at(cr);
    for (std::size_t t = 0; t < gd.size(); ++t) EXPECT_LT((gd[t] - gc[t]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ElboDis, GradientsMatchFiniteDifferences) {
  TwoFactor s;
  auto f = [&] { return elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise); };
  expect_role_gradients(f(), {{"q_a", &s.q_a}, {"q_b", &s.q_b}, {"p_x", &s.p_x}, {"p_a", &s.p_a}, {"p_b", &s.p_b}},
                        f);
}

TEST(ElboDis, FactorCountMustMatchPartition) {
  TwoFactor s;
  const std::vector<Factor<double>> one{{&s.y1, &s.q_a, &s.p_a}};
  EXPECT_THROW(elbo_dis<double>(s.x, std::span<const Factor<double>>(one), s.p_x, s.partition, s.w, s.noise),
               DimensionError);
}

TEST(ElboDis, WrongNoiseShapeThrows) {
  TwoFactor s;
  EXPECT_THROW(
      elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, randn(4, kBatch, 1)),
      DimensionError);
}

TEST(ElboEmb, MatchesManualCompositionAndFreezesDecoders) {
  TwoFactor s;
  const auto res = elbo_emb(s.x, s.y1, s.y2, s.q_x, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  const auto e = encode(s.q_x, s.x, s.noise);
  const double expect = gaussian_ll(s.x, s.p_x.forward(e.z)) +
                        0.7 * gaussian_ll(s.y1, s.p_a.forward(Mat<double>(e.z.topRows(3)))) +
                        0.3 * gaussian_ll(s.y2, s.p_b.forward(Mat<double>(e.z.bottomRows(2)))) - 0.5 * e.kl;
  EXPECT_NEAR(res.value, expect, 1e-6);
  for (const char* role : {"p_x", "p_a", "p_b"}) {
    for (const auto& g : res.grads.at(role)) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0) << role;
  }
}

TEST(ElboEmb, EncoderGradientsMatchFiniteDifferences) {
  TwoFactor s;
  auto f = [&] { return elbo_emb(s.x, s.y1, s.y2, s.q_x, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise); };
  expect_role_gradients(f(), {{"q_x", &s.q_x}}, f);
}

TEST(ElboEmbPrime, EncoderGradientsMatchFiniteDifferences) {
  TwoFactor s;
  auto f = [&] {
    return elbo_emb_prime(s.xhat, s.x, s.y1, s.y2, s.q_xhat, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  };
  const auto res = f();
  EXPECT_TRUE(res.posteriors.count("q_xhat"));
  expect_role_gradients(res, {{"q_xhat", &s.q_xhat}}, f);
}

TEST(ElboEmbPrime, MasksRemoveMissingLabels) {
  TwoFactor s;
  Vec<double> none = Vec<double>::Zero(kBatch), some(kBatch);
  some << 1, 0, 1;
  TermMasks<double> masks{.x = &none, .y = {{"a", &none}, {"b", &some}}};
  auto f = [&] {
    return elbo_emb_prime(s.xhat, s.x, s.y1, s.y2, s.q_xhat, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise,
                          masks);
  };
  const auto res = f();
  EXPECT_EQ(res.recon.at("x"), 0.0);
  EXPECT_EQ(res.recon.at("a"), 0.0);
  const auto e = encode(s.q_xhat, s.xhat, s.noise);
  const Mat<double> rb = s.p_b.forward(Mat<double>(e.z.bottomRows(2)));
  double expect_b = 0;
  for (int b : {0, 2}) expect_b += gaussian_ll(s.y2.col(b), rb.col(b)) / kBatch;
  EXPECT_NEAR(res.recon.at("b"), expect_b, 1e-12);
  expect_role_gradients(res, {{"q_xhat", &s.q_xhat}}, f);
}

TEST(ElboDisU, GradientsMatchFiniteDifferences) {
  const LatentPartition part({{"pose", 3}, {"u", 2}});
  const Mat<double> x = randn(8, kBatch, 1), y1 = randn(5, kBatch, 2), eps = randn(5, kBatch, 3);
  auto q_pose = enc(5, 3, 1), q_u = enc(8, 2, 2);
  auto p_x = dec(5, 8, 3), p_pose = dec(5, 5, 4);
  const ElboWeights w{.lambda_x = 1, .lambda_y = {{"pose", 0.4}}, .beta = 0.7};
  auto f = [&] { return elbo_dis_u(x, y1, q_pose, q_u, p_x, p_pose, part, w, eps); };
  const auto res = f();
  const auto ep = encode(q_pose, y1, eps.topRows(3));
  const auto eu = encode(q_u, x, eps.bottomRows(2));
  Mat<double> z(5, kBatch);
  z << ep.z, eu.z;
  EXPECT_NEAR(res.value,
              gaussian_ll(x, p_x.forward(z)) + 0.4 * gaussian_ll(y1, p_pose.forward(z)) - 0.7 * (ep.kl + eu.kl),
              1e-6);
  expect_role_gradients(res, {{"q_pose", &q_pose}, {"q_u", &q_u}, {"p_x", &p_x}, {"p_pose", &p_pose}}, f);
}

TEST(ConsistencyLoss, MatchesManualLossAndGradients) {
  const LatentPartition part({{"pose", 3}, {"u", 2}});
  const Mat<double> y1 = randn(5, kBatch, 2), eps = randn(5, kBatch, 3);
  auto q_pose = enc(5, 3, 1);
  auto p_pose = dec(5, 5, 4);
  ZuStats<double> stats{randn(2, 1, 9), Mat<double>::Constant(2, 1, 0.5)};
  auto f = [&] { return consistency_loss_zu(y1, q_pose, p_pose, part, stats, eps); };
  const auto res = f();
  const auto ep = encode(q_pose, y1, eps.topRows(3));
  Mat<double> z(5, kBatch);
  z << ep.z, (0.5 * eps.bottomRows(2)).colwise() + stats.mean.col(0);
  EXPECT_NEAR(res.value, -gaussian_ll(y1, p_pose.forward(z)), 1e-10);
  EXPECT_GE(res.value, 0.0);
  EXPECT_EQ(res.kl, 0.0);
  // The loss descends: grads are of the loss itself.
  expect_role_gradients(res, {{"q_pose", &q_pose}, {"p_pose", &p_pose}}, f);
}

TEST(ConsistencyLoss, PerRecordStatsNeedMatchingBatch) {
  const LatentPartition part({{"pose", 3}, {"u", 2}});
  const auto q_pose = enc(5, 3, 1);
  const auto p_pose = dec(5, 5, 4);
  ZuStats<double> stats{randn(2, 2, 9), Mat<double>::Ones(2, 2)};
  EXPECT_THROW(consistency_loss_zu(randn(5, kBatch, 1), q_pose, p_pose, part, stats, randn(5, kBatch, 2)),
               DimensionError);
}

TEST(CaptureZuStats, AggregateIsMomentMatchedMixture) {
  Posterior<double> post{Mat<double>(1, 2), Mat<double>(1, 2)};
  post.mean << -1, 1;
  post.log_var << 0, std::log(3.0);
  const auto agg = capture_zu_stats(post, ZuStatsMode::aggregate);
  EXPECT_NEAR(agg.mean(0, 0), 0.0, 1e-15);
  // mean variance 2 + variance of means 1.
  EXPECT_NEAR(agg.stddev(0, 0), std::sqrt(3.0), 1e-12);
  const auto per = capture_zu_stats(post, ZuStatsMode::per_record);
  EXPECT_EQ(per.mean.cols(), 2);
  EXPECT_NEAR(per.stddev(0, 1), std::sqrt(3.0), 1e-12);
}

TEST(Elbo, LargerBetaNeverIncreasesObjective) {
  TwoFactor s;
  double prev = INFINITY;
  for (double beta : {0.0, 0.01, 1.0, 100.0}) {
    s.w.beta = beta;
    const double v = elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise).value;
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Elbo, SameNoiseIsBitReproducible) {
  TwoFactor s;
  const auto a = elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  const auto b = elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  EXPECT_EQ(a.value, b.value);
  for (const auto& [role, g] : a.grads) {
    for (std::size_t t = 0; t < g.size(); ++t) EXPECT_EQ(g[t], b.grads.at(role)[t]);
  }
}

TEST(Elbo, ClampedLogVarPassesNoGradient) {
  TwoFactor s;
  // Push the log-variance half of q_a's output far above the clamp.
  auto& bias = s.q_a.params().tensors.back().values;
  bias.tail(3).setConstant(40.0);
  const auto res = elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise);
  EXPECT_LE(res.posteriors.at("q_a").log_var.maxCoeff(), 10.0);
  const auto& g = res.grads.at("q_a").back();
  EXPECT_EQ(g.tail(3).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(g.head(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Elbo, NonFiniteEncoderOutputThrows) {
  TwoFactor s;
  s.q_a.params().tensors.back().values[0] = NAN;
  EXPECT_THROW(elbo_dis(s.x, s.y1, s.y2, s.q_a, s.q_b, s.p_x, s.p_a, s.p_b, s.partition, s.w, s.noise),
               NumericError);
}
