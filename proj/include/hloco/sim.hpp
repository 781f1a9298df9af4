#pragma once

// Scenario runner: parses TOML scenarios, wires planner, controller and
// simulator, and writes CSV/JSON results.

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hloco/event_mpc.hpp"
#include "hloco/gait_graph.hpp"
#include "hloco/lip.hpp"
#include "hloco/rigid_body.hpp"
#include "hloco/vc_controller.hpp"

namespace hloco {

enum class RunMode { ReducedOrderOnly, FullOrder };
const char* to_string(RunMode m);

struct Scenario {
  std::string name{"scenario"};
  std::string description;
  RunMode mode{RunMode::ReducedOrderOnly};

  // Gait and planner
  GaitDirection direction{GaitDirection::Forward};
  Eigen::Vector2d step{0.10, 0.0};
  int domain_count{20};
  int grid_count{4};
  double sample_time{0.08};
  int horizon{8};
  int events{30};
  double com_height{0.5};
  double gravity{9.81};
  double friction_coeff{0.4};
  double terminal_weight{1e3};
  double stage_weight{1.0};
  double cop_weight{1.0};
  double lambda_weight{0.01};
  std::optional<LipStated> initial_state;  // default: initial centroid at rest
  std::optional<LipStated> target;         // default: final centroid at rest
  double initial_perturbation{0};          // radius of a seeded random offset of x0
  double convergence_threshold{1e-3};

  // Full-order layer
  std::optional<std::filesystem::path> robot_file;
  ContactModelKind contact_model{ContactModelKind::Rigid};
  GroundParams ground;
  double control_rate_hz{1000};
  double latency_s{0};
  double sim_dt_max{1e-3};  // rigid; compliant runs use at most 1e-4
  double kp{100};
  double kd{20};
  double defect_weight{1e7};
  double stance_kp{400};  // tangential stance-foot hold, 1/s^2
  double stance_kd{40};   // 1/s
  double swing_apex{0.08};
  double output_bound{0.1};         // declared bound on max |y|
  double final_com_tolerance{0.02};

  std::uint64_t seed{1};
  std::filesystem::path output_dir{"out"};

  /// Itemized problems; empty when valid.
  std::vector<std::string> validation_errors() const;
};

class ScenarioError : public std::runtime_error {
 public:
  explicit ScenarioError(std::vector<std::string> items);
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> items_;
};

/// Throws ScenarioError on parse or validation failure. Relative robot model
/// paths resolve against the scenario file's directory.
Scenario parse_scenario(const std::filesystem::path& path);
Scenario parse_scenario_string(const std::string& text, const std::filesystem::path& base_dir = ".");

GaitGraph scenario_graph(const Scenario& s);
MpcSetup scenario_mpc(const Scenario& s, const GaitGraph& graph, double total_mass);

struct RunReport {
  std::string scenario;
  RunMode mode{RunMode::ReducedOrderOnly};
  bool success{false};
  std::string failure;
  std::optional<double> failure_time;
  bool converged{false};
  double final_error{0};  // |x - x_f| of the LIP state (COM-based in full order)
  int first_converged_event{-1};
  int events{0};
  long samples{0};
  int mpc_solves{0};
  long lowlevel_solves{0};
  std::vector<double> lowlevel_iteration_percentiles;  // p50, p90, p99, max
  int cop_outside_polygon{0};
  int cone_violations{0};
  int pyramid_violations{0};
  double max_pyramid_violation{0};
  double max_acceleration_residual{0};
  double max_output_norm{0};
  double output_bound{0};
  int domains_completed{0};
  int domains_without_decay{0};
  double max_defect_norm{0};
  Eigen::Vector3d final_com{Eigen::Vector3d::Zero()};
  LipStated target{LipStated::Zero()};
  double final_com_error{0};
  std::vector<std::string> notes;
  std::filesystem::path output_dir;
  std::vector<std::string> manifest;  // file names relative to output_dir
};

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);

struct RunOptions {
  bool verbose{false};
};

/// Runs the scenario and writes its outputs and report.json into
/// scenario.output_dir. Planner or controller infeasibility yields a failed
/// report rather than an exception.
RunReport run_scenario(const Scenario& scenario, const RunOptions& options = {});
RunReport run_scenario(const std::filesystem::path& file, const RunOptions& options = {});

/// Whitespace-delimited plot files next to the report: com_cop.dat,
/// com_path.dat, footholds.dat, support_polygons.dat and, for full-order
/// runs, outputs_torques.dat and grf.dat. Returns the written paths.
std::vector<std::filesystem::path> emit_plotdata(const RunReport& report);

struct CatalogEntry {
  std::string name;
  std::filesystem::path file;
  RunMode mode{RunMode::ReducedOrderOnly};
  GaitDirection direction{GaitDirection::Forward};
  ContactModelKind contact{ContactModelKind::Rigid};
  std::string description;
};

/// Bundled scenarios (sorted by file name).
std::vector<CatalogEntry> list_scenarios(const std::filesystem::path& dir);
std::filesystem::path default_scenario_dir();

}  // namespace hloco
