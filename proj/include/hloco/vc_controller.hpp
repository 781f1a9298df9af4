#pragma once

// Low-level virtual-constraint controller. Outputs y = h0(q) - h_d(s) are
// driven to zero by a QP over (tau, F, omega):
//
//   min  1/2 |tau|^2 + gamma/2 |omega|^2
//   s.t. yddot(tau, F) = -K_P y - K_D ydot + omega
//        J_st qddot(tau, F) + drift_st = 0
//        F in the friction pyramid, tau_min <= tau <= tau_max

#include <Eigen/Dense>

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hloco/event_mpc.hpp"
#include "hloco/gait_graph.hpp"
#include "hloco/qp.hpp"
#include "hloco/rigid_body.hpp"

namespace hloco {

// ---------------------------------------------------------------------------
// Bezier curves

inline double binomial(int n, int k) {
  double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Rows are output channels, columns the degree + 1 control points.
template <typename Scalar>
struct BezierCurve {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> coeff;

  int degree() const { return static_cast<int>(coeff.cols()) - 1; }
  int channels() const { return static_cast<int>(coeff.rows()); }

  /// d^order/ds^order of the curve at s.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> eval(Scalar s, int order = 0) const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> pts = coeff;
    int n = degree();
    Scalar scale(1);
    for (int o = 0; o < order; ++o) {
      if (n == 0) return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(coeff.rows());
      pts = (pts.rightCols(n) - pts.leftCols(n)).eval();
      scale *= Scalar(n);
      --n;
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(coeff.rows());
    for (int i = 0; i <= n; ++i)
      out += pts.col(i) * (Scalar(binomial(n, i)) * std::pow(s, Scalar(i)) * std::pow(Scalar(1) - s, Scalar(n - i)));
    return scale * out;
  }
};

using BezierCurved = BezierCurve<double>;

/// Bernstein basis matrix: row i holds the basis at s_grid(i).
Eigen::MatrixXd bernstein_matrix(const Eigen::VectorXd& s_grid, int degree);

struct BezierFit {
  BezierCurved curve;
  Eigen::MatrixXd residual;  // channels x samples
  bool underdetermined{false};  // degree + 1 > samples; minimum-norm solution
};

/// Least-squares fit of `samples` (channels x count) at the phase grid.
BezierFit fit_bezier(const Eigen::MatrixXd& samples, const Eigen::VectorXd& s_grid, int degree);

/// Uniform grid 0, 1/n, ..., 1 with n + 1 points.
Eigen::VectorXd uniform_phase_grid(int intervals);

/// Degree-5 swing curve from liftoff to touchdown (ground height `ground`).
/// Horizontal control points (a, a, a, b, b, b), vertical (0, 0, c, c, 0, 0)
/// with c = 1.6 apex so that z(0.5) = apex.
BezierCurved swing_reference(const Eigen::Vector2d& prev, const Eigen::Vector2d& next, double apex_height,
                             double ground = 0.0);

/// s = (t - t_plus) / (N_d T_d) clamped to [0, 1].
double phasing(double t, double t_plus, int grid_count, double sample_time);

// ---------------------------------------------------------------------------
// Outputs

enum class OutputSource { Roll, Pitch, Yaw, ComX, ComY, ComZ, FootX, FootY, FootZ };

struct OutputChannel {
  OutputSource source;
  std::optional<ContactId> foot;
  std::string label;
};

struct OutputSpec {
  std::vector<ContactId> swing;  // feet with Cartesian outputs
  std::vector<OutputChannel> channels;

  int dim() const { return static_cast<int>(channels.size()); }
};

/// Torso attitude and COM position, then each swing foot (x, y, z).
OutputSpec make_output_spec(const std::vector<ContactId>& swing_legs);

/// Low-level decision count: actuators + 3 n_c + dim y.
inline int lowlevel_decision_count(int actuators, int contacts, int output_dim) {
  return actuators + 3 * contacts + output_dim;
}

/// Desired outputs over one domain.
struct DomainReference {
  BezierCurved com_xy;  // 2 channels
  double com_height{0.5};
  Eigen::Vector3d attitude{Eigen::Vector3d::Zero()};  // roll, pitch, yaw
  std::vector<std::pair<ContactId, BezierCurved>> swing;  // 3 channels each
  double duration{0.32};  // N_d T_d
};

/// y = h0 - h_d and the pieces of yddot = J_h qddot + bias.
struct OutputEval {
  Eigen::VectorXd y;
  Eigen::VectorXd ydot;
  Eigen::MatrixXd jacobian;  // dh0/dq, dim x 18
  Eigen::VectorXd bias;      // Jdot_h qdot - d^2 h_d/ds^2 sdot^2
  Eigen::VectorXd desired;   // h_d(s)
};

/// `s_rate` is ds/dt (zero once the phase is clamped).
OutputEval compute_outputs(const RobotModel& model, const FullState& state, const OutputSpec& spec,
                           const DomainReference& ref, double s, double s_rate);

/// Stacked h0(q) for the spec.
Eigen::VectorXd output_values(const Kinematics& kin, const FullState& state, const OutputSpec& spec);

// ---------------------------------------------------------------------------
// Low-level QP

struct Gains {
  Eigen::VectorXd kp;  // 1/s^2
  Eigen::VectorXd kd;  // 1/s

  static Gains uniform(int dim, double kp = 100, double kd = 20);
  void validate(int dim) const;
};

/// Homogeneous solution of yddot + kd ydot + kp y = 0 as
/// y(t) = phi_y y0 + phi_ydot ydot0. Requires kd^2 >= 4 kp, where the impulse
/// response is nonnegative with unit-step gain 1/kp.
struct PdResponse {
  double phi_y{1};
  double phi_ydot{0};
};
PdResponse pd_response(double kp, double kd, double t);

struct LowLevelQpConfig {
  double defect_weight{1e7};
  double friction_coeff{0.4};
  QpSettings qp{1e-9, 100};

  void validate() const;
};

/// Optional stance-foot stabilization for non-rigid ground: the stance rows
/// become J qddot + Jdot qdot = -kd pdot - kp [(p - anchor)_xy, 0]. With feet
/// on their anchors at rest this is the plain rigid-contact row.
struct StanceHold {
  Eigen::Matrix3Xd anchors;  // one column per active contact
  double kp{0};
  double kd{0};
};

struct LowLevelQp {
  QpProblemd qp;
  int tau_offset{0};
  int force_offset{kNumActuated};
  int defect_offset{0};
  double defect_scale{1};  // omega = defect_scale * x[defect_offset..]
  int num_contacts{0};
  int output_dim{0};
  Eigen::VectorXd v_pd;  // -K_P y - K_D ydot

  int num_variables() const { return static_cast<int>(qp.num_variables()); }
};

LowLevelQp build_lowlevel_qp(const RobotModel& model, const FullState& state, const OutputEval& outputs,
                             const Gains& gains, const LowLevelQpConfig& cfg, const std::vector<ContactId>& contacts,
                             double gravity = 9.81, const StanceHold* hold = nullptr);

struct ControlResult {
  Vector12d tau;
  Eigen::Matrix3Xd forces;  // per active contact
  Eigen::VectorXd defect;
  double y_norm{0};
  double ydot_norm{0};
  double defect_norm{0};
  int iterations{0};
  double max_pyramid_violation{0};
};

class ControllerFailure : public std::runtime_error {
 public:
  ControllerFailure(double time, QpStatus status, double residual)
      : std::runtime_error("low-level QP failed at t = " + std::to_string(time) + " s (" + to_string(status) +
                           ", KKT residual " + std::to_string(residual) + ")"),
        time_(time),
        status_(status),
        residual_(residual) {}
  double time() const { return time_; }
  QpStatus status() const { return status_; }
  double residual() const { return residual_; }

 private:
  double time_;
  QpStatus status_;
  double residual_;
};

/// Builds and solves the QP. Throws ControllerFailure unless optimal.
ControlResult control_step(const RobotModel& model, const FullState& state, const OutputEval& outputs,
                           const Gains& gains, const LowLevelQpConfig& cfg, const std::vector<ContactId>& contacts,
                           double time, double gravity = 9.81, const StanceHold* hold = nullptr);

/// Largest violation of |F_x|, |F_y| <= mu F_z, F_z >= 0 over the columns.
double pyramid_violation(const Eigen::Matrix3Xd& forces, double mu);

/// COM Bezier for a domain from the planner's predicted states.
BezierFit com_reference_fit(const MpcSolution& plan, int grid_count, int degree = 4);

// ---------------------------------------------------------------------------
// Diagnostics

struct DiagnosticsRow {
  double t{0};
  double s{0};
  int zeta{0};
  double y_norm{0};
  double ydot_norm{0};
  double defect_norm{0};
  Vector12d tau{Vector12d::Zero()};
  std::array<Eigen::Vector3d, 4> forces{zero_forces()};  // zero for feet not in contact
  int iterations{0};
};

/// CSV columns: t,s,zeta,y_norm,ydot_norm,omega_norm,tau_1..tau_12,
/// F_<leg>_{x,y,z} for FL, FR, RL, RR, qp_iterations.
void write_diagnostics_header(std::ostream& out);
void write_diagnostics_row(std::ostream& out, const DiagnosticsRow& row);

}  // namespace hloco
