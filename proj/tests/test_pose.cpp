#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dvae/metrics.hpp"
#include "dvae/pose.hpp"

using namespace dvae;
using namespace dvae::pose;

namespace {

Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

Pose3D random_pose(std::mt19937_64& rng, int joints = 21) {
  std::uniform_real_distribution<double> u(-100, 100);
  return Pose3D(Joints::NullaryExpr(joints, 3, [&] { return u(rng); }));
}

double loop_epe(const Pose3D& a, const Pose3D& b) {
  double s = 0;
  for (int j = 0; j < a.joint_count(); ++j) {
    double d2 = 0;
    for (int k = 0; k < 3; ++k) d2 += (a.joints(j, k) - b.joints(j, k)) * (a.joints(j, k) - b.joints(j, k));
    s += std::sqrt(d2);
  }
  return s / a.joint_count();
}

}  // namespace

TEST(Canonicalize, CanonicalPoseIsFixedPoint) {
  Joints j(4, 3);
  j << 0, 0, 0, 0, 1, 0, 0.5, 0.8, 0, 0.2, 1.5, -0.4;
  const auto f = canonicalize(Pose3D(j));
  EXPECT_LT((f.cpose.joints - j).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.viewpoint.rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(f.root.norm(), 1e-12);
  EXPECT_NEAR(f.scale, 1.0, 1e-12);
}

TEST(Canonicalize, OutputSatisfiesFrameInvariants) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto f = canonicalize(random_pose(rng));
    EXPECT_EQ(f.cpose.joints.row(0).norm(), 0.0);
    EXPECT_NEAR(f.cpose.joints(1, 1), 1.0, 1e-12);
    EXPECT_NEAR(f.cpose.joints.row(1).norm(), 1.0, 1e-12);
    EXPECT_GE(f.cpose.joints(2, 0), 0.0);
    EXPECT_EQ(f.cpose.joints(2, 2), 0.0);
    EXPECT_TRUE(is_rotation(f.viewpoint.rotation));
  }
}

TEST(Canonicalize, RoundTripOnRandomPoses) {
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = random_pose(rng);
    worst = std::max(worst, (compose(canonicalize(p)).joints - p.joints).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Canonicalize, QuarterTurnAboutZ) {
  std::mt19937_64 rng(2);
  const auto p = random_pose(rng, 5);
  const Matrix3d rz = rotation_zyx(M_PI / 2, 0, 0);
  const Pose3D q(p.joints * rz.transpose());
  const auto a = canonicalize(p), b = canonicalize(q);
  EXPECT_LT((a.cpose.joints - b.cpose.joints).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((b.viewpoint.rotation - rz * a.viewpoint.rotation).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Canonicalize, InvariantUnderSimilarityTransforms) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> us(0.1, 10), ut(-500, 500);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_pose(rng);
    const Matrix3d r = random_rotation(rng);
    const double s = us(rng);
    const Eigen::RowVector3d t(ut(rng), ut(rng), ut(rng));
    const Pose3D q((s * (p.joints * r.transpose())).rowwise() + t);
    worst = std::max(worst, (canonicalize(q).cpose.joints - canonicalize(p).cpose.joints).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Canonicalize, DegeneratePosesAreRejected) {
  Joints zero_bone(3, 3);
  zero_bone << 1, 1, 1, 1, 1, 1, 2, 0, 0;
  EXPECT_THROW(canonicalize(Pose3D(zero_bone)), DegeneratePoseError);
  Joints collinear(3, 3);
  collinear << 0, 0, 0, 0, 1, 0, 0, 3, 0;
  EXPECT_THROW(canonicalize(Pose3D(collinear)), DegeneratePoseError);
  Joints two(2, 3);
  two << 0, 0, 0, 0, 1, 0;
  EXPECT_THROW(canonicalize(Pose3D(two)), DegeneratePoseError);
  EXPECT_THROW(Pose3D(Joints(1, 3)), DimensionError);
}

TEST(Compose, IdentityAndScale) {
  Joints j(3, 3);
  j << 0, 0, 0, 0, 1, 0, 1, 1, 1;
  const CanonicalPose c{j};
  EXPECT_EQ(compose(c, Viewpoint{}, Vector3d::Zero(), 1.0).joints, j);
  const auto doubled = compose(c, Viewpoint{}, Vector3d::Zero(), 2.0);
  EXPECT_DOUBLE_EQ((doubled.joints.row(2) - doubled.joints.row(1)).norm(), 2 * (j.row(2) - j.row(1)).norm());
}

TEST(Compose, RejectsNonRotation) {
  Joints j = Joints::Zero(3, 3);
  Viewpoint reflect;
  reflect.rotation(0, 0) = -1;
  EXPECT_THROW(compose(CanonicalPose{j}, reflect, Vector3d::Zero(), 1.0), InvariantError);
  Viewpoint sheared;
  sheared.rotation(0, 1) = 1e-3;
  EXPECT_THROW(compose(CanonicalPose{j}, sheared, Vector3d::Zero(), 1.0), InvariantError);
  EXPECT_THROW(compose(CanonicalPose{j}, Viewpoint{}, Vector3d::Zero(), 0.0), InvariantError);
}

TEST(NearestRotation, ProjectsOntoSo3) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    const Matrix3d r = random_rotation(rng);
    EXPECT_LT((nearest_rotation(r) - r).cwiseAbs().maxCoeff(), 1e-12);
    const Matrix3d noisy = r + 0.1 * Matrix3d::NullaryExpr([&] { return n(rng); });
    EXPECT_TRUE(is_rotation(nearest_rotation(noisy)));
    EXPECT_TRUE(is_rotation(nearest_rotation(-r)));
  }
}

TEST(MeanEpe, WorkedExamples) {
  std::mt19937_64 rng(5);
  const auto p = random_pose(rng);
  EXPECT_EQ(metrics::mean_epe(p, p), 0.0);
  Joints a = Joints::Zero(2, 3), b = Joints::Zero(2, 3);
  b.row(0) << 3, 4, 0;
  b.row(1) = b.row(0);
  a.row(1) = a.row(0);
  EXPECT_DOUBLE_EQ(metrics::mean_epe(Pose3D(a), Pose3D(b)), 5.0);
  EXPECT_THROW(metrics::mean_epe(p, random_pose(rng, 5)), DimensionError);
}

TEST(MeanEpe, MatchesLoopOracle) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_pose(rng), b = random_pose(rng);
    EXPECT_NEAR(metrics::mean_epe(a, b), loop_epe(a, b), 1e-9);
  }
}

TEST(Pck, WorkedExamples) {
  std::mt19937_64 rng(7);
  std::vector<Pose3D> gts{random_pose(rng), random_pose(rng)};
  EXPECT_EQ(metrics::pck(gts, gts, 0.0), 1.0);
  std::vector<Pose3D> shifted;
  for (const auto& g : gts) shifted.emplace_back(g.joints.rowwise() + Eigen::RowVector3d(3, 4, 0));
  EXPECT_EQ(metrics::pck(shifted, gts, 4.0), 0.0);
  EXPECT_EQ(metrics::pck(shifted, gts, 5.0 + 1e-9), 1.0);
}

TEST(Pck, CraftedQuantiles) {
  // Joint j of pose i displaced by exactly 10 * (i * 4 + j) mm along x.
  std::vector<Pose3D> gts, preds;
  for (int i = 0; i < 5; ++i) {
    Joints g = Joints::Zero(4, 3);
    Joints p = g;
    for (int j = 0; j < 4; ++j) p(j, 0) = 10.0 * (i * 4 + j);
    gts.emplace_back(g);
    preds.emplace_back(p);
  }
  for (double t : {-1.0, 0.0, 5.0, 10.0, 95.0, 190.0, 500.0}) {
    int count = 0;
    for (int e = 0; e < 20; ++e) count += 10.0 * e <= t;
    EXPECT_EQ(metrics::pck(preds, gts, t), count / 20.0) << t;
  }
}

TEST(AucPck, OracleAndBounds) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> noise(-30, 30);
  std::vector<Pose3D> gts, preds, far;
  for (int i = 0; i < 1000; ++i) {
    gts.push_back(random_pose(rng, 5));
    preds.emplace_back(gts.back().joints + Joints::NullaryExpr(5, 3, [&] { return noise(rng); }));
    far.emplace_back(gts.back().joints.array() + 1000.0);
  }
  EXPECT_EQ(metrics::auc_pck(gts, gts), 1.0);
  EXPECT_EQ(metrics::auc_pck(far, gts), 0.0);

  // Independent trapezoid over brute-force counts.
  std::vector<double> errs;
  for (int i = 0; i < 1000; ++i)
    for (int j = 0; j < 5; ++j) errs.push_back((preds[i].joints.row(j) - gts[i].joints.row(j)).norm());
  auto count = [&](double t) {
    int c = 0;
    for (double e : errs) c += e <= t;
    return static_cast<double>(c) / errs.size();
  };
  const int steps = 7;
  double area = 0;
  for (int k = 1; k < steps; ++k) {
    const double t0 = 20 + 30.0 * (k - 1) / (steps - 1), t1 = 20 + 30.0 * k / (steps - 1);
    area += 0.5 * (count(t0) + count(t1)) * (t1 - t0);
  }
  EXPECT_NEAR(metrics::auc_pck(preds, gts, 20, 50, steps), area / 30.0, 1e-9);
  EXPECT_THROW(metrics::auc_pck(preds, gts, 50, 20, 5), ConfigError);
  EXPECT_THROW(metrics::auc_pck(preds, gts, 20, 50, 1), ConfigError);

  double prev = -1;
  for (double t = 0; t < 80; t += 2.5) {
    const double v = metrics::pck(preds, gts, t);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(MetricsReport, SelfEvaluation) {
  std::mt19937_64 rng(10);
  std::vector<Pose3D> gts{random_pose(rng, 5), random_pose(rng, 5)};
  const auto r = metrics::evaluate_poses(gts, gts);
  EXPECT_EQ(r.mean_epe, 0.0);
  EXPECT_EQ(r.auc, 1.0);
  const auto j = metrics::to_json(r);
  EXPECT_EQ(j["poses"], 2);
  EXPECT_EQ(j["pck"].size(), 31u);
}
