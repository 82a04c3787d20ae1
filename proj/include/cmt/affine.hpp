#pragma once

#include <Eigen/Dense>

namespace cmt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Voxel index -> world (mm) transform. The last row is always (0,0,0,1).
class Affine4 {
 public:
  Affine4() : m_(Mat4::Identity()) {}
  explicit Affine4(const Mat4& m);

  static Affine4 identity() { return Affine4(); }
  static Affine4 from_linear(const Mat3& linear, const Vec3& offset);
  static Affine4 diagonal(const Vec3& spacing, const Vec3& offset = Vec3::Zero());

  const Mat4& matrix() const noexcept { return m_; }
  Mat3 linear() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 offset() const { return m_.topRightCorner<3, 1>(); }

  /// Column norms of the linear part (mm per voxel step along each index axis).
  Vec3 spacing() const;

  Vec3 apply(const Vec3& p) const { return linear() * p + offset(); }
  Affine4 inverse() const;
  Affine4 operator*(const Affine4& other) const { return Affine4(m_ * other.m_); }

  bool approx_equal(const Affine4& other, double tol) const;

 private:
  Mat4 m_;
};

/// Rotation built as Rz(gamma) * Ry(beta) * Rx(alpha), angles in radians.
Mat3 euler_rotation(double alpha, double beta, double gamma);

}  // namespace cmt
