// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Exact numerics for the product manifold T^2 x SO(3): hat/vee maps,
// exponential/logarithm, geodesics, Haar-uniform sampling, and minimal-image
// torus arithmetic. Everything here is a pure function of its inputs.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>

#include "rigidflow/rng.hpp"
#include "rigidflow/types.hpp"

namespace rigidflow {

/// Rodrigues coefficients switch to a 2nd-order Taylor expansion below this
/// angle to avoid cancellation in sin(t)/t and (1-cos(t))/t^2.
inline constexpr double kThetaSmall = 1e-4;

/// Above this angle the log map uses symmetric-part axis extraction; the
/// sin-based formula is ill-conditioned as the angle approaches pi.
inline constexpr double kThetaAxisBranch = 3.0;

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> hat(const Eigen::Matrix<Scalar, 3, 1>& v) {
  Eigen::Matrix<Scalar, 3, 3> m;
  m << Scalar(0), -v.z(), v.y(),
       v.z(), Scalar(0), -v.x(),
       -v.y(), v.x(), Scalar(0);
  return m;
}

/// Inverse of hat. Throws NotSkewError if the symmetric part of m exceeds tol.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> vee(const Eigen::Matrix<Scalar, 3, 3>& m,
                                Scalar tol = Scalar(1e-8)) {
  if ((m + m.transpose()).cwiseAbs().maxCoeff() > tol) {
    throw NotSkewError("vee: matrix is not antisymmetric within tolerance");
  }
  return Eigen::Matrix<Scalar, 3, 1>(m(2, 1), m(0, 2), m(1, 0));
}

/// Exponential map so(3) -> SO(3), Rodrigues closed form.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> exp_so3(const Eigen::Matrix<Scalar, 3, 1>& v) {
  using Mat3s = Eigen::Matrix<Scalar, 3, 3>;
  const Scalar theta2 = v.squaredNorm();
  const Scalar theta = std::sqrt(theta2);
  Scalar a, b;  // sin(t)/t and (1-cos(t))/t^2
  if (theta < Scalar(kThetaSmall)) {
    a = Scalar(1) - theta2 / Scalar(6);
    b = Scalar(0.5) - theta2 / Scalar(24);
  } else {
    a = std::sin(theta) / theta;
    b = (Scalar(1) - std::cos(theta)) / theta2;
  }
  const Mat3s k = hat(v);
  return Mat3s::Identity() + a * k + b * (k * k);
}

/// Logarithm SO(3) -> so(3); canonical representative with norm <= pi.
/// The identity maps to the zero vector.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> log_so3(const Eigen::Matrix<Scalar, 3, 3>& r) {
  using Vec3s = Eigen::Matrix<Scalar, 3, 1>;
  const Vec3s s(Scalar(0.5) * (r(2, 1) - r(1, 2)),
                Scalar(0.5) * (r(0, 2) - r(2, 0)),
                Scalar(0.5) * (r(1, 0) - r(0, 1)));
  const Scalar sin_theta = s.norm();
  const Scalar cos_theta = Scalar(0.5) * (r.trace() - Scalar(1));
  const Scalar theta = std::atan2(sin_theta, cos_theta);  // in [0, pi]

  if (theta < Scalar(kThetaSmall)) {
    // theta/sin(theta) ~ 1 + theta^2/6
    return s * (Scalar(1) + theta * theta / Scalar(6));
  }
  if (theta < Scalar(kThetaAxisBranch)) {
    return s * (theta / sin_theta);
  }
  // Near pi: R + R^T = 2 cos(t) I + 2 (1-cos(t)) a a^T; extract the axis from
  // the column with the largest diagonal, fix the sign with s when possible.
  const Eigen::Matrix<Scalar, 3, 3> sym =
      r + r.transpose() - Scalar(2) * cos_theta * Eigen::Matrix<Scalar, 3, 3>::Identity();
  int col = 0;
  sym.diagonal().maxCoeff(&col);
  Vec3s axis = sym.col(col).normalized();
  if (sin_theta > Scalar(0)) {
    if (axis.dot(s) < Scalar(0)) axis = -axis;
  } else {
    // Exactly pi: a and -a are equivalent; pick the representative whose
    // first nonzero component is positive.
    for (int i = 0; i < 3; ++i) {
      if (axis[i] != Scalar(0)) {
        if (axis[i] < Scalar(0)) axis = -axis;
        break;
      }
    }
  }
  return axis * theta;
}

/// Geodesic from r0 (t=0) to r1 (t=1): exp(t log(r1 r0^T)) r0.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> geodesic(const Eigen::Matrix<Scalar, 3, 3>& r0,
                                     const Eigen::Matrix<Scalar, 3, 3>& r1,
                                     Scalar t) {
  if (t == Scalar(0)) return r0;
  if (t == Scalar(1)) return r1;
  const Eigen::Matrix<Scalar, 3, 1> w = log_so3<Scalar>(r1 * r0.transpose());
  return exp_so3<Scalar>((t * w).eval()) * r0;
}

/// Constant space-frame angular velocity of the geodesic r0 -> r1,
/// i.e. the teacher for dR/dt = hat(w) R.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> rotation_target(const Eigen::Matrix<Scalar, 3, 3>& r0,
                                            const Eigen::Matrix<Scalar, 3, 3>& r1) {
  return log_so3<Scalar>(r1 * r0.transpose());
}

inline bool is_rotation(const Mat3& m, double tol = 1e-9) {
  return (m.transpose() * m - Mat3::Identity()).norm() <= tol &&
         std::abs(m.determinant() - 1.0) <= tol;
}

/// Nearest rotation by symmetric polar projection (SVD); used to control
/// orthonormality drift after long exp-map chains.
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

/// Haar-uniform rotation via a normalized 4-normal quaternion. The quaternion
/// is an internal detail; callers only ever see the matrix.
inline Mat3 sample_rotation(Rng& rng) {
  const double a = rng.normal();
  const double b = rng.normal();
  const double c = rng.normal();
  const double d = rng.normal();
  Eigen::Quaterniond q(a, b, c, d);
  q.normalize();
  return q.toRotationMatrix();
}

// ---------------------------------------------------------------------------
// Torus arithmetic
// ---------------------------------------------------------------------------

struct TorusPoint {
  Vec2 p;    // wrapped position, componentwise in [0, L_i)
  Vec2 box;  // periods (L_x, L_y), both positive
};

/// Componentwise p mod L into [0, L). Note -1e-12 wraps to L - 1e-12.
inline Vec2 wrap_vec(const Vec2& p, const Vec2& box) {
  Vec2 out;
  for (int i = 0; i < 2; ++i) {
    double w = p[i] - box[i] * std::floor(p[i] / box[i]);
    if (w >= box[i]) w -= box[i];  // guard the rounding case p/L ~ 1 - eps
    out[i] = w;
  }
  return out;
}

inline TorusPoint torus_wrap(const Vec2& p, const Vec2& box) {
  return TorusPoint{wrap_vec(p, box), box};
}

/// Minimal-image displacement b - a, componentwise in [-L/2, L/2).
/// Ties at exactly L/2 resolve to the negative representative.
inline Vec2 torus_displacement(const TorusPoint& a, const TorusPoint& b) {
  if (a.box != b.box) {
    throw BoxMismatchError("torus_displacement: operands live on different tori");
  }
  Vec2 d = b.p - a.p;
  for (int i = 0; i < 2; ++i) {
    d[i] -= a.box[i] * std::floor(d[i] / a.box[i] + 0.5);
  }
  return d;
}

/// Minimal-image displacement for raw coordinates sharing one box.
inline Vec2 min_image(const Vec2& from, const Vec2& to, const Vec2& box) {
  Vec2 d = to - from;
  for (int i = 0; i < 2; ++i) {
    d[i] -= box[i] * std::floor(d[i] / box[i] + 0.5);
  }
  return d;
}

}  // namespace rigidflow
