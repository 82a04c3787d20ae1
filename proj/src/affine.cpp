#include "cmt/affine.hpp"

#include <cmath>

#include "cmt/error.hpp"

namespace cmt {

Affine4::Affine4(const Mat4& m) : m_(m) {
  m_.row(3) << 0.0, 0.0, 0.0, 1.0;
}

Affine4 Affine4::from_linear(const Mat3& linear, const Vec3& offset) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = linear;
  m.topRightCorner<3, 1>() = offset;
  return Affine4(m);
}

Affine4 Affine4::diagonal(const Vec3& spacing, const Vec3& offset) {
  return from_linear(spacing.asDiagonal(), offset);
}

Vec3 Affine4::spacing() const {
  const Mat3 l = linear();
  return {l.col(0).norm(), l.col(1).norm(), l.col(2).norm()};
}

Affine4 Affine4::inverse() const {
  const Mat3 l = linear();
  const double det = l.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) {
    throw Error(ErrorCode::SingularAffine, "affine linear part is not invertible");
  }
  const Mat3 inv = l.inverse();
  return from_linear(inv, -inv * offset());
}

bool Affine4::approx_equal(const Affine4& other, double tol) const {
  return (m_ - other.m_).cwiseAbs().maxCoeff() <= tol;
}

Mat3 euler_rotation(double alpha, double beta, double gamma) {
  const Mat3 rx = Eigen::AngleAxisd(alpha, Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(beta, Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(gamma, Vec3::UnitZ()).toRotationMatrix();
  return rz * ry * rx;
}

}  // namespace cmt
