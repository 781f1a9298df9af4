#pragma once

// Floating-base quadruped: 6 base coordinates (position, roll-pitch-yaw) and
// four 3-joint legs (abduction about x, hip and knee about y) ending in point
// feet. The base is modelled as a massless chain Px, Py, Pz, Rz, Ry, Rx, so the
// orientation is R = Rz(yaw) Ry(pitch) Rx(roll) and qdot holds Euler rates.
//
//   q    = (p_x, p_y, p_z, roll, pitch, yaw, FL(abad, hip, knee), FR, RL, RR)
//   D(q) qddot + H(q, qdot) = Upsilon tau + sum J_l' F_l

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hloco/gait_graph.hpp"

namespace hloco {

inline constexpr int kNumDof = 18;
inline constexpr int kNumActuated = 12;
inline constexpr int kBaseDof = 6;

using Vector18d = Eigen::Matrix<double, kNumDof, 1>;
using Matrix18d = Eigen::Matrix<double, kNumDof, kNumDof>;
using Vector12d = Eigen::Matrix<double, kNumActuated, 1>;
using Matrix3x18d = Eigen::Matrix<double, 3, kNumDof>;

struct LinkParams {
  double mass{1};
  Eigen::Vector3d com{Eigen::Vector3d::Zero()};  // in the link frame
  Eigen::Matrix3d inertia{Eigen::Matrix3d::Identity() * 1e-3};  // about the COM
};

struct LegParams {
  Eigen::Vector3d hip_offset;  // abad joint origin in the torso frame
  LinkParams abad;
  Eigen::Vector3d hip_joint{Eigen::Vector3d::Zero()};  // in the abad frame
  LinkParams thigh;
  Eigen::Vector3d knee_joint{0, 0, -0.3};  // in the thigh frame
  LinkParams shank;
  Eigen::Vector3d foot{0, 0, -0.3};  // in the shank frame
};

struct RobotModel {
  std::string name{"quadruped"};
  LinkParams torso;
  std::array<LegParams, 4> legs;  // ContactId order
  Vector12d torque_min;
  Vector12d torque_max;
  double pitch_limit{75.0 * 3.14159265358979323846 / 180.0};

  double total_mass() const;
  void validate() const;
};

/// Torso 20 kg (0.5 x 0.3 x 0.1 m box), three 1 kg links per leg, 0.35 m
/// thigh and shank, hips at the corners of the 0.5 x 0.3 rectangle.
RobotModel default_quadruped();

nlohmann::json robot_to_json(const RobotModel& model);
RobotModel robot_from_json(const nlohmann::json& doc);
RobotModel load_robot(const std::filesystem::path& path);
void save_robot(const RobotModel& model, const std::filesystem::path& path);

struct FullState {
  Vector18d q{Vector18d::Zero()};
  Vector18d qdot{Vector18d::Zero()};

  Eigen::Vector3d base_position() const { return q.head<3>(); }
  Eigen::Vector3d rpy() const { return q.segment<3>(3); }
};

/// Throws std::domain_error on non-finite entries or pitch beyond the guard.
void validate_state(const RobotModel& model, const FullState& state);

Eigen::Matrix3d rpy_to_matrix(const Eigen::Vector3d& rpy);

inline int joint_index(ContactId leg, int joint) { return kBaseDof + 3 * index_of(leg) + joint; }

/// Input distribution: tau enters the 12 leg coordinates.
Eigen::Matrix<double, kNumDof, kNumActuated> input_matrix();

struct Kinematics {
  std::array<Eigen::Vector3d, 4> foot_position;
  std::array<Matrix3x18d, 4> foot_jacobian;
  std::array<Eigen::Vector3d, 4> foot_drift;  // Jdot qdot
  std::array<Eigen::Vector3d, 4> foot_velocity;
  Eigen::Vector3d com;
  Matrix3x18d com_jacobian;
  Eigen::Vector3d com_drift;
  Eigen::Vector3d com_velocity;
};

Kinematics kinematics(const RobotModel& model, const FullState& state);

Matrix18d mass_matrix(const RobotModel& model, const Vector18d& q);

/// Inverse dynamics (RNEA): D qddot + H for the given acceleration.
Vector18d inverse_dynamics(const RobotModel& model, const Vector18d& q, const Vector18d& qdot,
                           const Vector18d& qddot, double gravity = 9.81);

/// H(q, qdot): inverse dynamics at zero acceleration.
Vector18d bias_forces(const RobotModel& model, const Vector18d& q, const Vector18d& qdot, double gravity = 9.81);

double kinetic_energy(const RobotModel& model, const FullState& state);
double potential_energy(const RobotModel& model, const Vector18d& q, double gravity = 9.81);

/// Stacked contact Jacobian (3 n_c x 18) and drift for the given feet.
struct ContactBlock {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd drift;
};
ContactBlock contact_block(const Kinematics& kin, const std::vector<ContactId>& feet);

struct ConstrainedDynamics {
  Vector18d qddot;
  Eigen::Matrix3Xd forces;  // one column per active foot
  double dynamics_residual{0};      // |D qddot + H - Upsilon tau - J'F|
  double acceleration_residual{0};  // |J qddot + drift|
  bool regularized{false};          // contact block was rank deficient
};

ConstrainedDynamics constrained_forward_dynamics(const RobotModel& model, const FullState& state, const Vector12d& tau,
                                                 const std::vector<ContactId>& feet, double gravity = 9.81);

/// Plastic impact: qdot+ = qdot- - D^-1 J' (J D^-1 J')^-1 J qdot-.
Vector18d impact_map(const RobotModel& model, const FullState& state, const std::vector<ContactId>& feet);

struct GroundParams {
  double stiffness{5e4};     // N/m
  double damping{1e3};       // N s/m
  double friction_coeff{0.4};
  double bristle_stiffness{1e4};  // N/m
  double bristle_damping{100};    // N s/m
  double height{0};
};

/// Per-foot bristle deflection (x, y) of the dynamic friction model.
using BristleState = std::array<Eigen::Vector2d, 4>;

inline BristleState zero_bristle() {
  return {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
}

inline std::array<Eigen::Vector3d, 4> zero_forces() {
  return {Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
}

struct CompliantForces {
  std::array<Eigen::Vector3d, 4> force;  // world frame, zero when airborne
  std::array<bool, 4> in_contact{};
  BristleState bristle;                  // deflection after the update
};

/// Normal spring-damper clamped at zero and a single-state bristle friction
/// model, advanced implicitly over dt.
CompliantForces compliant_contact_forces(const Kinematics& kin, const GroundParams& ground,
                                         const BristleState& bristle, double dt);

enum class ContactModelKind { Rigid, Compliant };

struct ContactMode {
  ContactModelKind kind{ContactModelKind::Rigid};
  std::vector<ContactId> feet;  // rigid: stance feet
  std::optional<Eigen::Matrix3Xd> anchors;  // rigid: where stance feet should stay
  GroundParams ground;
  BristleState bristle{zero_bristle()};
};

struct StepResult {
  FullState state;
  Vector18d qddot;
  std::array<Eigen::Vector3d, 4> forces{zero_forces()};  // per foot, world frame
  double acceleration_residual{0};
  bool regularized{false};
  BristleState bristle{zero_bristle()};
};

/// Semi-implicit Euler. For rigid contact the new velocity is projected so
/// that stance feet converge to their anchors.
StepResult integrate_step(const RobotModel& model, const FullState& state, const Vector12d& tau,
                          const ContactMode& mode, double dt, double gravity = 9.81);

/// Leg joint angles placing each foot at `feet` (world) for the given base
/// pose; damped Newton on the leg Jacobian.
Vector18d solve_leg_ik(const RobotModel& model, const Vector18d& q_guess,
                       const std::array<Eigen::Vector3d, 4>& feet, double tol = 1e-12, int max_iter = 50);

/// Level standing pose with feet at the given ground points and the COM at
/// `com_height` above the ground, horizontally at the foot centroid.
FullState standing_pose(const RobotModel& model, const std::array<Eigen::Vector2d, 4>& feet, double com_height);

}  // namespace hloco
