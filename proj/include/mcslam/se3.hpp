#pragma once

// Rigid-body arithmetic on SE(3). Poses are stored as a rotation matrix plus
// a translation; increments are 6-vector twists (rho, phi) applied on the
// right: T * exp(v).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <string>

#include "mcslam/errors.hpp"

namespace mcslam {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Matrix6 = Eigen::Matrix<Scalar, 6, 6>;

template <typename Scalar>
Matrix3<Scalar> hat(const Vector3<Scalar>& w) {
  Matrix3<Scalar> m;
  m << Scalar(0), -w.z(), w.y(),  //
      w.z(), Scalar(0), -w.x(),   //
      -w.y(), w.x(), Scalar(0);
  return m;
}

template <typename Scalar>
Vector3<Scalar> vee(const Matrix3<Scalar>& m) {
  return Vector3<Scalar>(m(2, 1), m(0, 2), m(1, 0));
}

/// Tangent-space increment. rho is the translational part (m), phi the
/// rotational part (rad).
template <typename Scalar>
struct Twist {
  Vector3<Scalar> rho = Vector3<Scalar>::Zero();
  Vector3<Scalar> phi = Vector3<Scalar>::Zero();

  Twist() = default;
  Twist(const Vector3<Scalar>& rho_, const Vector3<Scalar>& phi_) : rho(rho_), phi(phi_) {}
  explicit Twist(const Vector6<Scalar>& v) : rho(v.template head<3>()), phi(v.template tail<3>()) {}

  static Twist Zero() { return Twist(); }

  Vector6<Scalar> vector() const {
    Vector6<Scalar> v;
    v << rho, phi;
    return v;
  }

  bool allFinite() const { return rho.allFinite() && phi.allFinite(); }

  friend Twist operator*(Scalar s, const Twist& v) { return Twist(s * v.rho, s * v.phi); }
  friend Twist operator+(const Twist& a, const Twist& b) { return Twist(a.rho + b.rho, a.phi + b.phi); }
  friend Twist operator-(const Twist& a) { return Twist(-a.rho, -a.phi); }
};

template <typename Scalar>
struct Pose {
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  Pose() = default;
  Pose(const Matrix3<Scalar>& r, const Vector3<Scalar>& t) : rotation(r), translation(t) {}

  static Pose Identity() { return Pose(); }
  static Pose Translation(const Vector3<Scalar>& t) { return Pose(Matrix3<Scalar>::Identity(), t); }
  static Pose Translation(Scalar x, Scalar y, Scalar z) { return Translation(Vector3<Scalar>(x, y, z)); }
  static Pose Rotation(const Matrix3<Scalar>& r) { return Pose(r, Vector3<Scalar>::Zero()); }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation;
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }

  Eigen::Quaternion<Scalar> quaternion() const { return Eigen::Quaternion<Scalar>(rotation).normalized(); }

  bool allFinite() const { return rotation.allFinite() && translation.allFinite(); }

  template <typename Other>
  Pose<Other> cast() const {
    return Pose<Other>(rotation.template cast<Other>(), translation.template cast<Other>());
  }

  friend Pose operator*(const Pose& a, const Pose& b) {
    return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
  }
  friend Vector3<Scalar> operator*(const Pose& p, const Vector3<Scalar>& x) { return p.rotation * x + p.translation; }
  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

using Pose3d = Pose<double>;
using Twist3d = Twist<double>;
using Vector3d = Vector3<double>;
using Matrix3d = Matrix3<double>;
using Vector6d = Vector6<double>;
using Matrix6d = Matrix6<double>;

template <typename Scalar>
Pose<Scalar> compose(const Pose<Scalar>& a, const Pose<Scalar>& b) {
  return a * b;
}

template <typename Scalar>
Pose<Scalar> inverse(const Pose<Scalar>& p) {
  const Matrix3<Scalar> rt = p.rotation.transpose();
  return Pose<Scalar>(rt, -(rt * p.translation));
}

template <typename Scalar>
Vector3<Scalar> transform_point(const Pose<Scalar>& p, const Vector3<Scalar>& x) {
  return p * x;
}

/// Projects the rotation back onto SO(3) by polar decomposition.
template <typename Scalar>
Pose<Scalar> orthonormalized(const Pose<Scalar>& p) {
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(p.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3<Scalar> r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < Scalar(0)) {
    Matrix3<Scalar> u = svd.matrixU();
    u.col(2) *= Scalar(-1);
    r = u * svd.matrixV().transpose();
  }
  return Pose<Scalar>(r, p.translation);
}

template <typename Scalar>
Pose<Scalar> exp(const Twist<Scalar>& v) {
  if (!v.allFinite()) throw InvalidArgument("se3 exp: non-finite twist");
  const Scalar theta2 = v.phi.squaredNorm();
  const Scalar theta = std::sqrt(theta2);
  const Matrix3<Scalar> k = hat(v.phi);
  const Matrix3<Scalar> k2 = k * k;

  Scalar a, b, c;
  if (theta < Scalar(1e-5)) {
    a = Scalar(1) - theta2 / Scalar(6);
    b = Scalar(0.5) - theta2 / Scalar(24);
    c = Scalar(1) / Scalar(6) - theta2 / Scalar(120);
  } else {
    const Scalar s = std::sin(theta);
    const Scalar co = std::cos(theta);
    a = s / theta;
    b = (Scalar(1) - co) / theta2;
    c = (theta - s) / (theta2 * theta);
  }
  const Matrix3<Scalar> id = Matrix3<Scalar>::Identity();
  const Matrix3<Scalar> r = id + a * k + b * k2;
  const Matrix3<Scalar> jl = id + b * k + c * k2;
  return Pose<Scalar>(r, jl * v.rho);
}

/// Rotation angle of a pose in [0, pi].
template <typename Scalar>
Scalar rotation_angle(const Matrix3<Scalar>& r) {
  const Scalar s = Scalar(0.5) * vee<Scalar>(r - r.transpose()).norm();
  const Scalar c = Scalar(0.5) * (r.trace() - Scalar(1));
  return std::atan2(s, c);
}

template <typename Scalar>
Twist<Scalar> log(const Pose<Scalar>& p) {
  if (!p.allFinite()) throw InvalidArgument("se3 log: non-finite pose");
  const Scalar theta = rotation_angle(p.rotation);
  if (theta > Scalar(std::numbers::pi) - Scalar(1e-6)) {
    throw NumericalError("se3 log: rotation angle " + std::to_string(static_cast<double>(theta)) +
                         " too close to pi");
  }
  const Scalar theta2 = theta * theta;
  const Vector3<Scalar> axis_sin = vee<Scalar>(p.rotation - p.rotation.transpose());  // 2 sin(theta) n

  Scalar scale, d;
  if (theta < Scalar(1e-5)) {
    scale = Scalar(0.5) * (Scalar(1) + theta2 / Scalar(6));
    d = Scalar(1) / Scalar(12) + theta2 / Scalar(720);
  } else {
    const Scalar s = std::sin(theta);
    const Scalar co = std::cos(theta);
    scale = theta / (Scalar(2) * s);
    d = (Scalar(1) - (theta * s) / (Scalar(2) * (Scalar(1) - co))) / theta2;
  }
  const Vector3<Scalar> phi = scale * axis_sin;
  const Matrix3<Scalar> k = hat(phi);
  const Matrix3<Scalar> jl_inv = Matrix3<Scalar>::Identity() - Scalar(0.5) * k + d * k * k;
  return Twist<Scalar>(jl_inv * p.translation, phi);
}

/// Point with a surface covariance (m^2).
template <typename Scalar>
struct GaussianPoint {
  Vector3<Scalar> mean = Vector3<Scalar>::Zero();
  Matrix3<Scalar> covariance = Matrix3<Scalar>::Zero();
};

using GaussianPoint3d = GaussianPoint<double>;

template <typename Scalar>
GaussianPoint<Scalar> transform_gaussian(const Pose<Scalar>& p, const GaussianPoint<Scalar>& g) {
  return GaussianPoint<Scalar>{p * g.mean, p.rotation * g.covariance * p.rotation.transpose()};
}

}  // namespace mcslam
