#pragma once

// Linear inverted pendulum (LIP) at constant COM height.
//
//   state  x = (r_x, rdot_x, r_y, rdot_y)
//   input  u = (u_x, u_y)             center of pressure
//   rddot  = (g / r_z) (r - u)

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace hloco {

template <typename Scalar>
using LipState = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using CopInput = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
struct LipParams {
  Scalar com_height{0.5};
  Scalar gravity{9.81};
  Scalar total_mass{1};
  Scalar friction_coeff{0.4};

  Scalar natural_frequency() const { return std::sqrt(gravity / com_height); }

  void validate() const {
    if (!(com_height > 0)) throw std::invalid_argument("LipParams: com_height must be positive");
    if (!(gravity > 0)) throw std::invalid_argument("LipParams: gravity must be positive");
    if (!(total_mass > 0)) throw std::invalid_argument("LipParams: total_mass must be positive");
    if (!(friction_coeff > 0 && friction_coeff < 2))
      throw std::invalid_argument("LipParams: friction_coeff must lie in (0, 2)");
  }
};

template <typename Scalar>
struct LipDiscrete {
  Eigen::Matrix<Scalar, 4, 4> a_mat;
  Eigen::Matrix<Scalar, 4, 2> b_mat;
  Scalar sample_time{0};
};

/// Friction-pyramid constraint on the net force as halfspaces in (x, u):
/// Phi x + Psi u <= eta.
template <typename Scalar>
struct ConeHalfspaces {
  Eigen::Matrix<Scalar, 4, 4> phi;
  Eigen::Matrix<Scalar, 4, 2> psi;
  Eigen::Matrix<Scalar, 4, 1> eta;
};

/// Exact zero-order-hold discretization. The axes decouple, each with
///   A = [[cosh wT, sinh wT / w], [w sinh wT, cosh wT]],  B = [1 - cosh wT, -w sinh wT]'.
template <typename Scalar>
LipDiscrete<Scalar> discretize_zoh(const LipParams<Scalar>& params, Scalar sample_time) {
  params.validate();
  if (!(sample_time > 0)) throw std::invalid_argument("discretize_zoh: sample_time must be positive");
  const Scalar w = params.natural_frequency();
  const Scalar c = std::cosh(w * sample_time);
  const Scalar s = std::sinh(w * sample_time);

  Eigen::Matrix<Scalar, 2, 2> a_block;
  a_block << c, s / w, w * s, c;
  Eigen::Matrix<Scalar, 2, 1> b_block(Scalar(1) - c, -w * s);

  LipDiscrete<Scalar> d;
  d.a_mat.setZero();
  d.b_mat.setZero();
  d.a_mat.template block<2, 2>(0, 0) = a_block;
  d.a_mat.template block<2, 2>(2, 2) = a_block;
  d.b_mat.template block<2, 1>(0, 0) = b_block;
  d.b_mat.template block<2, 1>(2, 1) = b_block;
  d.sample_time = sample_time;
  return d;
}

/// Continuous-time matrices (A_c, B_c) of the LIP.
template <typename Scalar>
std::pair<Eigen::Matrix<Scalar, 4, 4>, Eigen::Matrix<Scalar, 4, 2>> continuous_lip(
    const LipParams<Scalar>& params) {
  const Scalar w2 = params.gravity / params.com_height;
  Eigen::Matrix<Scalar, 4, 4> a = Eigen::Matrix<Scalar, 4, 4>::Zero();
  Eigen::Matrix<Scalar, 4, 2> b = Eigen::Matrix<Scalar, 4, 2>::Zero();
  a(0, 1) = a(2, 3) = 1;
  a(1, 0) = a(3, 2) = w2;
  b(1, 0) = b(3, 1) = -w2;
  return {a, b};
}

template <typename Scalar>
LipState<Scalar> lip_step(const LipDiscrete<Scalar>& d, const LipState<Scalar>& x,
                          const CopInput<Scalar>& u) {
  return d.a_mat * x + d.b_mat * u;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> com_position(const LipState<Scalar>& x) {
  return {x(0), x(2)};
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> com_velocity(const LipState<Scalar>& x) {
  return {x(1), x(3)};
}

/// Equilibrium state resting above `u` with zero velocity.
template <typename Scalar>
LipState<Scalar> equilibrium_state(const CopInput<Scalar>& u) {
  return {u(0), Scalar(0), u(1), Scalar(0)};
}

/// Net ground reaction force m g ((r - u) / r_z, 1).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> net_force(const LipParams<Scalar>& params, const LipState<Scalar>& x,
                                      const CopInput<Scalar>& u) {
  const Scalar mg = params.total_mass * params.gravity;
  return {mg * (x(0) - u(0)) / params.com_height, mg * (x(2) - u(1)) / params.com_height, mg};
}

/// Membership in the four-facet friction pyramid |F_x|, |F_y| <= (mu / sqrt 2) F_z,
/// F_z > 0. Boundary points count as members.
template <typename Scalar>
bool in_friction_pyramid(const Eigen::Matrix<Scalar, 3, 1>& f, Scalar mu, Scalar tol = Scalar(0)) {
  const Scalar c = mu / std::sqrt(Scalar(2));
  return f(2) > 0 && std::abs(f(0)) <= c * f(2) + tol && std::abs(f(1)) <= c * f(2) + tol;
}

template <typename Scalar>
ConeHalfspaces<Scalar> cone_halfspaces(const LipParams<Scalar>& params) {
  ConeHalfspaces<Scalar> h;
  h.phi.setZero();
  h.psi.setZero();
  // +-(r_x - u_x) <= mu r_z / sqrt 2, same for y.
  h.phi(0, 0) = 1;
  h.psi(0, 0) = -1;
  h.phi(1, 0) = -1;
  h.psi(1, 0) = 1;
  h.phi(2, 2) = 1;
  h.psi(2, 1) = -1;
  h.phi(3, 2) = -1;
  h.psi(3, 1) = 1;
  h.eta.setConstant(params.friction_coeff * params.com_height / std::sqrt(Scalar(2)));
  return h;
}

/// Slack eta - (Phi x + Psi u); nonnegative iff the net force is in the pyramid.
template <typename Scalar>
Eigen::Matrix<Scalar, 4, 1> cone_slack(const ConeHalfspaces<Scalar>& h, const LipState<Scalar>& x,
                                       const CopInput<Scalar>& u) {
  return h.eta - h.phi * x - h.psi * u;
}

using LipParamsd = LipParams<double>;
using LipDiscreted = LipDiscrete<double>;
using LipStated = LipState<double>;
using CopInputd = CopInput<double>;

}  // namespace hloco
