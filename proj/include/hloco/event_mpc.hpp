#pragma once

// Event-based MPC for the LIP: one QP per domain boundary k = m N_d, whose
// first N_d optimal COP inputs are applied open-loop inside the domain.

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hloco/gait_graph.hpp"
#include "hloco/lip.hpp"
#include "hloco/qp.hpp"

namespace hloco {

/// Linear COM reference from the current state to the target, reached at the
/// steering time T_f and held afterwards.
struct ReferencePolicy {
  long steering_samples{0};  // T_f in samples
  double sample_time{0.08};
};

/// d_{k+i|k}: positions interpolate linearly from x_now (at i = 0) to x_f (at
/// sample T_f), velocities equal the interpolation slope, x_f after T_f. The
/// i = 0 entry is x_now itself.
LipStated reference_trajectory(const ReferencePolicy& policy, const LipStated& x_now, const LipStated& x_f,
                               long k, int i);

struct MpcConfig {
  int horizon{8};
  Eigen::Matrix4d terminal_weight{Eigen::Matrix4d::Identity() * 1e3};
  Eigen::Matrix4d stage_state_weight{Eigen::Matrix4d::Identity()};
  Eigen::Matrix2d cop_weight{Eigen::Matrix2d::Identity()};
  double lambda_weight{0.01};  // R_hat = lambda_weight * I
  LipStated target{LipStated::Zero()};
  long steering_samples{0};  // 0: M * N_d
  QpSettings qp{};

  void validate(int grid_count) const;
};

/// Everything an event solve depends on. Immutable once built.
struct MpcSetup {
  MpcConfig config;
  GaitGraph graph;
  LipParamsd params;
  LipDiscreted lip;

  static MpcSetup make(MpcConfig config, GaitGraph graph, const LipParamsd& params, double sample_time);

  int grid_count() const { return graph.grid_count(); }
  long steering_samples() const;
  ReferencePolicy reference_policy() const { return {steering_samples(), lip.sample_time}; }
  /// COP that holds the target: the final support-polygon point closest to
  /// the target COM projection.
  Eigen::Vector2d target_cop() const;
};

/// Target state resting over the final-domain support centroid.
LipStated centroid_target(const GaitGraph& graph);

struct MpcQp {
  QpProblemd qp;
  int horizon{0};
  int state_offset{0};   // x_1..x_N
  int input_offset{0};   // u_0..u_{N-1}
  int lambda_offset{0};  // lambda_0..lambda_{N-1}
  std::vector<int> lambda_start;  // per stage, absolute index
  std::vector<int> lambda_size;
  int dynamics_rows{0};
  int coupling_rows{0};
  int simplex_rows{0};
  std::vector<LipStated> state_reference;   // d_{k+i|k}, i = 0..N
  std::vector<Eigen::Vector2d> cop_reference;
  std::vector<Eigen::VectorXd> lambda_desired;
  std::vector<int> stage_domain;  // zeta[k + i]

  int num_variables() const { return static_cast<int>(qp.num_variables()); }
};

struct MpcSolution {
  std::vector<Eigen::Vector2d> cop_sequence;  // N
  std::vector<LipStated> predicted_states;    // N + 1, starting at x[k]
  std::vector<Eigen::VectorXd> lambda_sequence;
  std::vector<int> stage_domain;
  double objective{0};
  QpStatus status{QpStatus::MaxIterations};
  int iterations{0};
};

struct MpcLaw {
  long event_sample{0};
  std::vector<Eigen::Vector2d> controls;  // pi_j, j = 0..N_d-1
};

class MpcInfeasible : public std::runtime_error {
 public:
  MpcInfeasible(long event_sample, QpStatus status)
      : std::runtime_error("MPC infeasible at event sample " + std::to_string(event_sample) + " (" +
                           to_string(status) + ")"),
        event_sample_(event_sample),
        status_(status) {}
  long event_sample() const { return event_sample_; }
  QpStatus status() const { return status_; }

 private:
  long event_sample_;
  QpStatus status_;
};

MpcQp build_mpc_qp(const MpcSetup& setup, long k, const LipStated& x);

/// Cost of a candidate (states, inputs, lambdas) against the references.
double mpc_objective(const MpcSetup& setup, const MpcQp& layout, const std::vector<LipStated>& states,
                     const std::vector<Eigen::Vector2d>& cops, const std::vector<Eigen::VectorXd>& lambdas);

struct EventResult {
  MpcSolution solution;
  MpcLaw law;
};

/// Throws MpcInfeasible unless the QP is solved to optimality.
EventResult solve_event(const MpcSetup& setup, long k, const LipStated& x);

/// pi(m, x): the N_d controls applied inside domain m.
using LawFn = std::function<std::vector<Eigen::Vector2d>(int m, const LipStated& x)>;

LawFn mpc_law(const MpcSetup& setup);

struct ClosedLoopTrajectory {
  std::vector<LipStated> states;        // total_events * N_d + 1
  std::vector<Eigen::Vector2d> cops;    // total_events * N_d
  std::vector<int> domains;             // zeta[k] per applied sample
  std::vector<bool> solve_flags;        // true where a QP was solved
  std::vector<MpcLaw> laws;
  int solve_count{0};
};

ClosedLoopTrajectory rollout_closed_loop(const MpcSetup& setup, const LipStated& x0, int total_events);

/// CSV columns: k,zeta,r_x,rdot_x,r_y,rdot_y,u_x,u_y,solve_flag. The final
/// state row has empty COP fields and solve_flag 0.
void write_rollout_csv(const ClosedLoopTrajectory& traj, std::ostream& out);
void write_rollout_csv(const ClosedLoopTrajectory& traj, const std::filesystem::path& path);

/// x[(m+1) N_d] = A^N_d x + sum_l A^(N_d-1-l) B pi_l(m N_d, x).
LipStated downsample_map(const LipDiscreted& lip, int grid_count, const LawFn& law, int m, const LipStated& x);
LipStated downsample_map(const MpcSetup& setup, int m, const LipStated& x);

/// Number of event solves needed to cover `samples` samples.
inline long event_count(long samples, int grid_count) { return (samples + grid_count - 1) / grid_count; }

}  // namespace hloco
