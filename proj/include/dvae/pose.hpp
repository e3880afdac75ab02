#pragma once

// Keypoint skeletons and the 3DPose = scale * CPose * R^T + root factorization.
//
// Canonical frame: joint 0 at the origin, the joint 0 -> joint 1 bone of unit
// length along +y, joint 2 in the x >= 0 half of the xy-plane.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <string>

#include "dvae/errors.hpp"

namespace dvae::pose {

using Joints = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Eigen::Matrix3d;
using Eigen::Vector3d;

inline constexpr double kRotationTolerance = 1e-9;

struct Pose3D {
  Joints joints;  // millimetres

  Pose3D() = default;
  explicit Pose3D(Joints j) : joints(std::move(j)) {
    if (joints.rows() < 2) throw DimensionError("a pose needs at least 2 joints");
    if (!joints.allFinite()) throw NumericError("pose has non-finite coordinates");
  }
  int joint_count() const { return static_cast<int>(joints.rows()); }
};

struct CanonicalPose {
  Joints joints;  // dimensionless
  int joint_count() const { return static_cast<int>(joints.rows()); }
};

struct Viewpoint {
  Matrix3d rotation = Matrix3d::Identity();
};

inline bool is_rotation(const Matrix3d& r, double tol = kRotationTolerance) {
  if (!r.allFinite()) return false;
  return (r.transpose() * r - Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

// Closest rotation in Frobenius norm (orthogonal polar factor with det fixed to +1).
inline Matrix3d nearest_rotation(const Matrix3d& m) {
  if (!m.allFinite()) throw NumericError("cannot project a non-finite matrix onto SO(3)");
  Eigen::JacobiSVD<Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d d = Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

// R = Rz(yaw) * Ry(pitch) * Rx(roll_x); angles in radians.
inline Matrix3d rotation_zyx(double about_z, double about_y, double about_x) {
  return (Eigen::AngleAxisd(about_z, Vector3d::UnitZ()) * Eigen::AngleAxisd(about_y, Vector3d::UnitY()) *
          Eigen::AngleAxisd(about_x, Vector3d::UnitX()))
      .toRotationMatrix();
}

struct Canonicalization {
  CanonicalPose cpose;
  Viewpoint viewpoint;
  Vector3d root = Vector3d::Zero();
  double scale = 1.0;
};

inline Canonicalization canonicalize(const Pose3D& pose) {
  const Joints& p = pose.joints;
  if (p.rows() < 3) throw DegeneratePoseError("orientation needs joints 0, 1 and 2");
  if (!p.allFinite()) throw NumericError("pose has non-finite coordinates");
  const Vector3d root = p.row(0).transpose();
  const Vector3d bone = p.row(1).transpose() - root;
  const double scale = bone.norm();
  const double extent = std::max(1.0, (p.rowwise() - root.transpose()).cwiseAbs().maxCoeff());
  if (!(scale > 1e-12 * extent)) throw DegeneratePoseError("reference bone (joint 0 -> 1) has zero length");
  const Vector3d y = bone / scale;
  const Vector3d v = p.row(2).transpose() - root;
  const Vector3d perp = v - v.dot(y) * y;
  if (!(perp.norm() > 1e-9 * std::max(v.norm(), scale))) {
    throw DegeneratePoseError("joints 0, 1 and 2 are collinear");
  }
  const Vector3d x = perp.normalized();
  const Vector3d z = x.cross(y);
  Canonicalization out;
  out.viewpoint.rotation.col(0) = x;
  out.viewpoint.rotation.col(1) = y;
  out.viewpoint.rotation.col(2) = z;
  out.root = root;
  out.scale = scale;
  out.cpose.joints = ((p.rowwise() - root.transpose()) * out.viewpoint.rotation) / scale;
  // Exact zeros where the frame pins them.
  out.cpose.joints.row(0).setZero();
  out.cpose.joints.row(1) << 0.0, 1.0, 0.0;
  out.cpose.joints(2, 2) = 0.0;
  return out;
}

inline Pose3D compose(const CanonicalPose& c, const Viewpoint& v, const Vector3d& root, double scale) {
  if (!is_rotation(v.rotation)) throw InvariantError("viewpoint is not a rotation matrix");
  if (!std::isfinite(scale) || scale <= 0) throw InvariantError("scale must be positive and finite");
  if (!root.allFinite() || !c.joints.allFinite()) throw InvariantError("non-finite root or canonical pose");
  Joints j = (scale * (c.joints * v.rotation.transpose())).rowwise() + root.transpose();
  return Pose3D(std::move(j));
}

inline Pose3D compose(const Canonicalization& f) { return compose(f.cpose, f.viewpoint, f.root, f.scale); }

// Flattening used by the vector networks: row-major x0 y0 z0 x1 ...
inline Eigen::VectorXd flatten(const Joints& j) {
  return Eigen::Map<const Eigen::VectorXd>(j.data(), j.size());
}

inline Joints unflatten(const Eigen::VectorXd& v) {
  if (v.size() % 3 != 0) throw DimensionError("pose vector length must be a multiple of 3");
  return Eigen::Map<const Joints>(v.data(), v.size() / 3, 3);
}

inline Eigen::VectorXd flatten(const Matrix3d& r) {
  Eigen::Matrix<double, 3, 3, Eigen::RowMajor> rm = r;
  return Eigen::Map<const Eigen::VectorXd>(rm.data(), 9);
}

inline Matrix3d rotation_from_flat(const Eigen::VectorXd& v) {
  if (v.size() != 9) throw DimensionError("rotation vector must have 9 entries");
  return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(v.data());
}

}  // namespace dvae::pose
