#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dvae/latent.hpp"

using namespace dvae;

namespace {

// Independent oracle: E_q[log q(z) - log N(z; 0, I)] by plain sampling.
double monte_carlo_kl(const GaussianParams<double>& p, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double sigma = std::exp(0.5 * p.log_var[i]);
      const double eps = normal(rng);
      const double z = p.mean[i] + sigma * eps;
      log_ratio += -std::log(sigma) - 0.5 * eps * eps + 0.5 * z * z;
    }
    acc += log_ratio;
  }
  return acc / samples;
}

GaussianParams<double> make(std::initializer_list<double> m, std::initializer_list<double> lv) {
  Vec<double> mean(static_cast<Eigen::Index>(m.size())), log_var(static_cast<Eigen::Index>(lv.size()));
  Eigen::Index i = 0;
  for (double v : m) mean[i++] = v;
  i = 0;
  for (double v : lv) log_var[i++] = v;
  return {mean, log_var};
}

}  // namespace

TEST(Reparameterize, ZeroNoiseReturnsMean) {
  const auto p = make({2, -1}, {0, 0});
  const Vec<double> out = reparameterize(p, Vec<double>(Vec<double>::Zero(2)));
  EXPECT_EQ(out, p.mean);
}

TEST(Reparameterize, UnitVarianceAddsNoise) {
  const auto p = make({0}, {0});
  Vec<double> noise(1);
  noise << 1.5;
  EXPECT_DOUBLE_EQ(reparameterize(p, noise)[0], 1.5);
}

TEST(Reparameterize, LengthMismatchThrows) {
  const auto p = make({0, 1}, {0, 0});
  EXPECT_THROW(reparameterize(p, Vec<double>(Vec<double>::Zero(3))), DimensionError);
}

TEST(Reparameterize, MonteCarloMoments) {
  const auto p = make({1}, {std::log(4.0)});
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  const int n = 100000;
  std::vector<double> draws(n);
  Vec<double> eps(1);
  for (auto& d : draws) {
    eps[0] = normal(rng);
    d = reparameterize(p, eps)[0];
  }
  double mean = 0;
  for (double d : draws) mean += d;
  mean /= n;
  double var = 0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= n - 1;
  const double se_mean = 2.0 / std::sqrt(n);
  const double se_var = 4.0 * std::sqrt(2.0 / (n - 1));
  EXPECT_NEAR(mean, 1.0, 3 * se_mean);
  EXPECT_NEAR(var, 4.0, 3 * se_var);
}

TEST(Reparameterize, LogVarIsClamped) {
  const auto p = make({0}, {50.0});
  Vec<double> noise(1);
  noise << 1.0;
  EXPECT_DOUBLE_EQ(reparameterize(p, noise)[0], std::exp(5.0));
}

TEST(KlStandardNormal, PriorIsZero) {
  EXPECT_EQ(kl_standard_normal(make({0, 0, 0}, {0, 0, 0})), 0.0);
}

TEST(KlStandardNormal, MeanOnlyReducesToHalfSquare) {
  EXPECT_DOUBLE_EQ(kl_standard_normal(make({1}, {0})), 0.5);
}

TEST(KlStandardNormal, MatchesMonteCarloAtLog2Variance) {
  const auto p = make({0}, {std::log(2.0)});
  const double closed = kl_standard_normal(p);
  const double mc = monte_carlo_kl(p, 1000000, 5);
  EXPECT_LT(std::abs(closed - mc) / closed, 0.01);
}

TEST(KlStandardNormal, NonFiniteInputThrows) {
  EXPECT_THROW(kl_standard_normal(make({NAN}, {0})), NumericError);
  EXPECT_THROW(kl_standard_normal(make({0}, {INFINITY})), NumericError);
}

TEST(KlStandardNormal, NonNegativeAndZeroOnlyAtPrior) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 2000; ++trial) {
    GaussianParams<double> p(Vec<double>::NullaryExpr(4, [&] { return u(rng); }),
                             Vec<double>::NullaryExpr(4, [&] { return u(rng); }));
    EXPECT_GT(kl_standard_normal(p), 0.0);
  }
  EXPECT_LE(kl_standard_normal(make({1e-7}, {0})), 1e-12);
}

TEST(KlStandardNormal, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> um(-3, 3), ul(-2, 2);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    GaussianParams<double> p(Vec<double>::NullaryExpr(5, [&] { return um(rng); }),
                             Vec<double>::NullaryExpr(5, [&] { return ul(rng); }));
    const auto g = kl_standard_normal_gradient(p);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      for (int which = 0; which < 2; ++which) {
        auto plus = p, minus = p;
        (which ? plus.log_var : plus.mean)[i] += h;
        (which ? minus.log_var : minus.mean)[i] -= h;
        const double fd = (kl_standard_normal(plus) - kl_standard_normal(minus)) / (2 * h);
        const double an = which ? g.log_var[i] : g.mean[i];
        EXPECT_LE(std::abs(fd - an), 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-6}))
            << "trial " << trial << " index " << i << " which " << which;
      }
    }
  }
}

TEST(LatentPartition, RejectsDuplicatesAndBadDims) {
  EXPECT_THROW(LatentPartition({{"a", 2}, {"a", 3}}), ConfigError);
  EXPECT_THROW(LatentPartition({{"a", 0}}), ConfigError);
  EXPECT_EQ(LatentPartition({{"a", 2}, {"b", 3}}).total_dim(), 5);
}

TEST(LatentPartition, ParseAndPrint) {
  const auto p = LatentPartition::parse("pose:32,content:32");
  EXPECT_EQ(p.total_dim(), 64);
  EXPECT_EQ(p.to_string(), "pose:32,content:32");
  EXPECT_THROW(LatentPartition::parse("pose"), ConfigError);
  EXPECT_THROW(LatentPartition::parse("pose:x"), ConfigError);
}

TEST(ConcatLatent, DefaultSplit32Plus32) {
  const LatentPartition p({{"pose", 32}, {"content", 32}});
  std::vector<Vec<double>> parts{Vec<double>::LinSpaced(32, 0, 31), Vec<double>::LinSpaced(32, 100, 131)};
  const auto code = concat_latent(parts, p);
  EXPECT_EQ(code.values().size(), 64);
  EXPECT_EQ(split_latent(code, "pose"), parts[0]);
  EXPECT_EQ(Vec<double>(code.values().head(32)), parts[0]);
  EXPECT_EQ(split_latent(code, "content"), parts[1]);
}

TEST(ConcatLatent, UnevenLayout) {
  const LatentPartition p({{"p", 3}, {"q", 5}});
  std::vector<Vec<double>> parts{Vec<double>::Constant(3, 1.0), Vec<double>::LinSpaced(5, 2, 6)};
  EXPECT_EQ(split_latent(concat_latent(parts, p), "q"), parts[1]);
}

TEST(ConcatLatent, MismatchThrows) {
  const LatentPartition p({{"p", 3}, {"q", 5}});
  std::vector<Vec<double>> wrong_len{Vec<double>::Zero(3), Vec<double>::Zero(4)};
  std::vector<Vec<double>> wrong_count{Vec<double>::Zero(3)};
  EXPECT_THROW(concat_latent(wrong_len, p), DimensionError);
  EXPECT_THROW(concat_latent(wrong_count, p), DimensionError);
}

TEST(SplitLatent, SliceAndUnknownName) {
  const LatentPartition p({{"a", 1}, {"b", 3}});
  Vec<double> v(4);
  v << 1, 2, 3, 4;
  const LatentCode<double> code(v, p);
  Vec<double> expect(3);
  expect << 2, 3, 4;
  EXPECT_EQ(split_latent(code, "b"), expect);
  EXPECT_THROW(split_latent(code, "c"), LookupError);
  EXPECT_THROW(LatentCode<double>(Vec<double>::Zero(3), p), DimensionError);
}

TEST(ConcatLatent, RoundTripOnRandomPartitions) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> nseg(1, 6), dim(1, 40);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Segment> segs;
    const int n = nseg(rng);
    for (int i = 0; i < n; ++i) segs.push_back({"s" + std::to_string(i), dim(rng)});
    const LatentPartition p(segs);
    const Vec<double> values = Vec<double>::NullaryExpr(p.total_dim(), [&] { return normal(rng); });
    const LatentCode<double> code(values, p);
    std::vector<Vec<double>> parts;
    for (const auto& s : p.segments()) parts.push_back(split_latent(code, s.name));
    EXPECT_EQ(concat_latent(parts, p).values(), values);
  }
}
