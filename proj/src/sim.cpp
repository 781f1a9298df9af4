#include "hloco/sim.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace hloco {

const char* to_string(RunMode m) { return m == RunMode::FullOrder ? "full_order" : "reduced_order_only"; }

namespace {

RunMode mode_from_name(const std::string& s) {
  if (s == "full_order") return RunMode::FullOrder;
  if (s == "reduced_order_only") return RunMode::ReducedOrderOnly;
  throw std::invalid_argument("unknown mode '" + s + "' (full_order, reduced_order_only)");
}

const char* contact_name(ContactModelKind k) { return k == ContactModelKind::Compliant ? "compliant" : "rigid"; }

ContactModelKind contact_from_string(const std::string& s) {
  if (s == "rigid") return ContactModelKind::Rigid;
  if (s == "compliant") return ContactModelKind::Compliant;
  throw std::invalid_argument("unknown contact model '" + s + "' (rigid, compliant)");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& i : items) out += "\n  - " + i;
  return out;
}

template <typename T>
void read(const toml::table& t, std::string_view key, T& out, std::vector<std::string>& errors,
          const std::string& where) {
  const auto node = t[key];
  if (!node) return;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node.value<double>())
      out = *v;
    else
      errors.push_back(where + key.data() + ": expected a number");
  } else if constexpr (std::is_same_v<T, int>) {
    if (auto v = node.value<int64_t>())
      out = static_cast<int>(*v);
    else
      errors.push_back(where + std::string(key) + ": expected an integer");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node.value<std::string>())
      out = *v;
    else
      errors.push_back(where + std::string(key) + ": expected a string");
  }
}

template <int N>
std::optional<Eigen::Matrix<double, N, 1>> read_vector(const toml::table& t, std::string_view key,
                                                       std::vector<std::string>& errors, const std::string& where) {
  const auto* arr = t[key].as_array();
  if (!t[key]) return std::nullopt;
  if (!arr || arr->size() != N) {
    errors.push_back(fmt::format("{}{}: expected an array of {} numbers", where, key, N));
    return std::nullopt;
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    const auto x = (*arr)[static_cast<std::size_t>(i)].template value<double>();
    if (!x) {
      errors.push_back(fmt::format("{}{}: entry {} is not a number", where, key, i));
      return std::nullopt;
    }
    v(i) = *x;
  }
  return v;
}

const toml::table& sub(const toml::table& t, std::string_view key) {
  static const toml::table empty;
  const auto* s = t[key].as_table();
  return s ? *s : empty;
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> items)
    : std::runtime_error("invalid scenario:" + join(items)), items_(std::move(items)) {}

std::vector<std::string> Scenario::validation_errors() const {
  std::vector<std::string> e;
  if (domain_count < 3) e.push_back("gait.domains must be at least 3");
  if (grid_count < 1) e.push_back("gait.grid_count must be positive");
  if (!(sample_time > 0)) e.push_back("gait.sample_time must be positive");
  if (horizon < 1 || (grid_count > 0 && horizon % grid_count != 0))
    e.push_back("planner.horizon must be a positive multiple of gait.grid_count");
  if (events < 1) e.push_back("planner.events must be positive");
  if (!(com_height > 0)) e.push_back("lip.com_height must be positive");
  if (!(gravity > 0)) e.push_back("lip.gravity must be positive");
  if (!(friction_coeff > 0 && friction_coeff < 2)) e.push_back("lip.friction_coeff must lie in (0, 2)");
  if (!(terminal_weight > 0 && stage_weight > 0 && cop_weight > 0 && lambda_weight > 0))
    e.push_back("planner weights must be positive");
  if (!(initial_perturbation >= 0)) e.push_back("planner.initial_perturbation must be nonnegative");
  if (!(convergence_threshold > 0)) e.push_back("planner.convergence_threshold must be positive");
  if (!step.allFinite()) e.push_back("gait.step must be finite");
  if (mode == RunMode::FullOrder) {
    const double domain_time = grid_count * sample_time;
    const double steps = control_rate_hz * domain_time;
    if (!(control_rate_hz > 0) || control_rate_hz < 1 / domain_time)
      e.push_back("control.rate_hz must be at least one solve per domain");
    else if (std::abs(steps - std::round(steps)) > 1e-6 || std::fmod(std::round(steps), grid_count) != 0)
      e.push_back("control.rate_hz must give a whole number of control steps per LIP sample");
    if (!(latency_s >= 0) || latency_s >= domain_time) e.push_back("control.latency_s must lie in [0, N_d T_d)");
    else if (control_rate_hz > 0 && std::abs(latency_s * control_rate_hz - std::round(latency_s * control_rate_hz)) > 1e-6)
      e.push_back("control.latency_s must be a whole number of control periods");
    if (!(kp > 0 && kd > 0)) e.push_back("control.kp and control.kd must be positive");
    else if (kd * kd < 4 * kp * (1 - 1e-9)) e.push_back("control.kd must satisfy kd^2 >= 4 kp (no overshoot)");
    if (!(defect_weight > 0)) e.push_back("control.defect_weight must be positive");
    if (!(stance_kp >= 0 && stance_kd >= 0)) e.push_back("control.stance_kp and control.stance_kd must be nonnegative");
    if (!(swing_apex > 0)) e.push_back("control.swing_apex must be positive");
    if (!(output_bound > 0)) e.push_back("control.output_bound must be positive");
    if (!(final_com_tolerance > 0)) e.push_back("control.final_com_tolerance must be positive");
    if (!(sim_dt_max > 0)) e.push_back("simulation.dt_max must be positive");
    if (!(ground.stiffness > 0 && ground.damping >= 0 && ground.friction_coeff > 0 && ground.bristle_stiffness > 0 &&
          ground.bristle_damping >= 0))
      e.push_back("ground parameters must be positive");
  }
  return e;
}

Scenario parse_scenario_string(const std::string& text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& err) {
    std::ostringstream os;
    os << err.description() << " at line " << err.source().begin.line;
    throw ScenarioError({os.str()});
  }
  std::vector<std::string> errors;
  Scenario s;
  try {
    read(root, "name", s.name, errors, "");
    read(root, "description", s.description, errors, "");
    std::string mode = to_string(s.mode);
    read(root, "mode", mode, errors, "");
    s.mode = mode_from_name(mode);
    if (auto seed = root["seed"].value<int64_t>()) s.seed = static_cast<std::uint64_t>(*seed);
    std::string out = s.output_dir.string();
    read(root, "output_dir", out, errors, "");
    s.output_dir = out;

    const auto& gait = sub(root, "gait");
    std::string dir = to_string(s.direction);
    read(gait, "direction", dir, errors, "gait.");
    s.direction = direction_from_name(dir);
    s.step = default_step(s.direction);
    if (auto v = read_vector<2>(gait, "step", errors, "gait.")) s.step = *v;
    read(gait, "domains", s.domain_count, errors, "gait.");
    read(gait, "grid_count", s.grid_count, errors, "gait.");
    read(gait, "sample_time", s.sample_time, errors, "gait.");

    const auto& lip = sub(root, "lip");
    read(lip, "com_height", s.com_height, errors, "lip.");
    read(lip, "gravity", s.gravity, errors, "lip.");
    read(lip, "friction_coeff", s.friction_coeff, errors, "lip.");

    const auto& plan = sub(root, "planner");
    read(plan, "horizon", s.horizon, errors, "planner.");
    s.events = s.domain_count + 10;
    read(plan, "events", s.events, errors, "planner.");
    read(plan, "terminal_weight", s.terminal_weight, errors, "planner.");
    read(plan, "stage_weight", s.stage_weight, errors, "planner.");
    read(plan, "cop_weight", s.cop_weight, errors, "planner.");
    read(plan, "lambda_weight", s.lambda_weight, errors, "planner.");
    read(plan, "initial_perturbation", s.initial_perturbation, errors, "planner.");
    read(plan, "convergence_threshold", s.convergence_threshold, errors, "planner.");
    s.initial_state = read_vector<4>(plan, "initial_state", errors, "planner.");
    s.target = read_vector<4>(plan, "target", errors, "planner.");

    const auto& ctl = sub(root, "control");
    read(ctl, "rate_hz", s.control_rate_hz, errors, "control.");
    read(ctl, "latency_s", s.latency_s, errors, "control.");
    read(ctl, "kp", s.kp, errors, "control.");
    read(ctl, "kd", s.kd, errors, "control.");
    read(ctl, "defect_weight", s.defect_weight, errors, "control.");
    read(ctl, "stance_kp", s.stance_kp, errors, "control.");
    read(ctl, "stance_kd", s.stance_kd, errors, "control.");
    read(ctl, "swing_apex", s.swing_apex, errors, "control.");
    read(ctl, "output_bound", s.output_bound, errors, "control.");
    read(ctl, "final_com_tolerance", s.final_com_tolerance, errors, "control.");

    const auto& simt = sub(root, "simulation");
    std::string contact = contact_name(s.contact_model);
    read(simt, "contact", contact, errors, "simulation.");
    s.contact_model = contact_from_string(contact);
    read(simt, "dt_max", s.sim_dt_max, errors, "simulation.");
    std::string robot;
    read(simt, "robot", robot, errors, "simulation.");
    if (!robot.empty()) {
      std::filesystem::path p(robot);
      s.robot_file = p.is_absolute() ? p : base_dir / p;
    }
    const auto& ground = sub(simt, "ground");
    read(ground, "stiffness", s.ground.stiffness, errors, "simulation.ground.");
    read(ground, "damping", s.ground.damping, errors, "simulation.ground.");
    read(ground, "bristle_stiffness", s.ground.bristle_stiffness, errors, "simulation.ground.");
    read(ground, "bristle_damping", s.ground.bristle_damping, errors, "simulation.ground.");
    s.ground.friction_coeff = s.friction_coeff;
  } catch (const std::invalid_argument& e) {
    errors.push_back(e.what());
  }
  for (auto& e : s.validation_errors()) errors.push_back(std::move(e));
  if (!errors.empty()) throw ScenarioError(errors);
  return s;
}

Scenario parse_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError({"cannot open " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_string(ss.str(), path.parent_path());
}

GaitGraph scenario_graph(const Scenario& s) {
  return build_trot_graph(s.direction, s.step, s.domain_count, s.grid_count);
}

MpcSetup scenario_mpc(const Scenario& s, const GaitGraph& graph, double total_mass) {
  MpcConfig cfg;
  cfg.horizon = s.horizon;
  cfg.terminal_weight = Eigen::Matrix4d::Identity() * s.terminal_weight;
  cfg.stage_state_weight = Eigen::Matrix4d::Identity() * s.stage_weight;
  cfg.cop_weight = Eigen::Matrix2d::Identity() * s.cop_weight;
  cfg.lambda_weight = s.lambda_weight;
  cfg.target = s.target ? *s.target : centroid_target(graph);
  LipParamsd p;
  p.com_height = s.com_height;
  p.gravity = s.gravity;
  p.total_mass = total_mass;
  p.friction_coeff = s.friction_coeff;
  return MpcSetup::make(cfg, graph, p, s.sample_time);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

nlohmann::json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::vector<double> percentiles(std::vector<int> v) {
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const auto i = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()))) - 1;
    return static_cast<double>(v[std::min(i, v.size() - 1)]);
  };
  return {at(0.5), at(0.9), at(0.99), static_cast<double>(v.back())};
}

LipStated initial_state(const Scenario& s, const GaitGraph& graph) {
  LipStated x0 = s.initial_state ? *s.initial_state : equilibrium_state<double>(graph.initial_centroid());
  if (s.initial_perturbation > 0) {
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> nd;
    LipStated d;
    for (int i = 0; i < 4; ++i) d(i) = nd(rng);
    x0 += s.initial_perturbation * d.normalized();
  }
  return x0;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void write_report(RunReport& r) {
  r.manifest.push_back("report.json");
  auto out = open_out(r.output_dir / "report.json");
  out << report_to_json(r).dump(2) << '\n';
}

struct ReducedChecks {
  int outside{0};
  int cone{0};
};

ReducedChecks check_reduced(const MpcSetup& setup, const std::vector<LipStated>& states,
                            const std::vector<Eigen::Vector2d>& cops) {
  ReducedChecks c;
  const auto cone = cone_halfspaces(setup.params);
  for (std::size_t k = 0; k < cops.size(); ++k) {
    const auto& dom = setup.graph.at_sample(static_cast<long>(k));
    if (!hull_membership(dom, cops[k], 1e-7).inside) ++c.outside;
    if (cone_slack(cone, states[k], cops[k]).minCoeff() < -1e-7) ++c.cone;
  }
  return c;
}

void finish_convergence(RunReport& r, const std::vector<LipStated>& states, const LipStated& target, int nd,
                        double threshold) {
  for (std::size_t m = 0; m * nd < states.size(); ++m)
    if ((states[m * nd] - target).norm() < threshold) {
      r.first_converged_event = static_cast<int>(m);
      break;
    }
  r.final_error = (states.back() - target).norm();
}

RunReport run_reduced(const Scenario& sc, RunReport r) {
  const GaitGraph graph = scenario_graph(sc);
  const MpcSetup setup = scenario_mpc(sc, graph, 32.0);
  r.target = setup.config.target;
  write_gait_json(graph, r.output_dir / "gait.json");
  r.manifest.push_back("gait.json");
  const LipStated x0 = initial_state(sc, graph);
  ClosedLoopTrajectory traj;
  try {
    traj = rollout_closed_loop(setup, x0, sc.events);
  } catch (const MpcInfeasible& e) {
    r.failure = e.what();
    r.failure_time = static_cast<double>(e.event_sample()) * sc.sample_time;
    return r;
  }
  write_rollout_csv(traj, r.output_dir / "rollout.csv");
  r.manifest.push_back("rollout.csv");
  r.events = sc.events;
  r.samples = static_cast<long>(traj.cops.size());
  r.mpc_solves = traj.solve_count;
  const auto checks = check_reduced(setup, traj.states, traj.cops);
  r.cop_outside_polygon = checks.outside;
  r.cone_violations = checks.cone;
  finish_convergence(r, traj.states, r.target, sc.grid_count, sc.convergence_threshold);
  r.converged = r.final_error < sc.convergence_threshold;
  r.final_com << traj.states.back()(0), traj.states.back()(2), sc.com_height;
  r.final_com_error = (com_position(traj.states.back()) - com_position(r.target)).norm();
  r.domains_completed = std::min(sc.events, sc.domain_count);
  r.success = true;
  return r;
}

// ---------------------------------------------------------------------------
// Full-order run

struct FootholdSet {
  std::array<Eigen::Vector3d, 4> anchor;
};

LipStated lip_measurement(const Kinematics& k) {
  return LipStated(k.com.x(), k.com_velocity.x(), k.com.y(), k.com_velocity.y());
}

void write_state_row(std::ostream& out, double t, const FullState& s, const std::array<Eigen::Vector3d, 4>& f) {
  out << fmt::format("{:.6f}", t);
  for (int i = 0; i < kNumDof; ++i) out << fmt::format(",{:.9g}", s.q(i));
  for (int i = 0; i < kNumDof; ++i) out << fmt::format(",{:.9g}", s.qdot(i));
  for (const auto& v : f) out << fmt::format(",{:.9g},{:.9g},{:.9g}", v.x(), v.y(), v.z());
  out << '\n';
}

void write_state_header(std::ostream& out) {
  out << "t";
  for (int i = 0; i < kNumDof; ++i) out << ",q_" << i;
  for (int i = 0; i < kNumDof; ++i) out << ",qdot_" << i;
  for (auto c : kAllContacts)
    for (const char* a : {"x", "y", "z"}) out << ",F_" << short_name(c) << '_' << a;
  out << '\n';
}

// sup over s of |d^3 h_d / dt^3| for the domain's desired outputs.
double reference_jerk_bound(const DomainReference& ref, double s_rate) {
  double sup = 0;
  for (int i = 0; i <= 64; ++i) {
    const double s = i / 64.0;
    double sq = ref.com_xy.eval(s, 3).squaredNorm();
    for (const auto& [leg, curve] : ref.swing) sq += curve.eval(s, 3).squaredNorm();
    sup = std::max(sup, std::sqrt(sq));
  }
  return sup * s_rate * s_rate * s_rate;
}

RunReport run_full(const Scenario& sc, RunReport r, const RunOptions& opt) {
  const RobotModel model = sc.robot_file ? load_robot(*sc.robot_file) : default_quadruped();
  const GaitGraph graph = scenario_graph(sc);
  const MpcSetup setup = scenario_mpc(sc, graph, model.total_mass());
  r.target = setup.config.target;
  write_gait_json(graph, r.output_dir / "gait.json");
  r.manifest.push_back("gait.json");

  const int nd = sc.grid_count;
  const double period = 1.0 / sc.control_rate_hz;
  const int steps_per_domain = static_cast<int>(std::lround(sc.control_rate_hz * nd * sc.sample_time));
  const int steps_per_sample = steps_per_domain / nd;
  const int latency_steps = static_cast<int>(std::lround(sc.latency_s * sc.control_rate_hz));
  const double dt_cap = sc.contact_model == ContactModelKind::Compliant ? std::min(sc.sim_dt_max, 1e-4) : sc.sim_dt_max;
  const int substeps = std::max(1, static_cast<int>(std::ceil(period / dt_cap - 1e-9)));
  const double dt = period / substeps;
  const double domain_time = nd * sc.sample_time;

  // Initial stand over the domain-1 footholds, shifted to x0.
  const DomainSpec& first = graph.domain(1);
  std::array<Eigen::Vector2d, 4> feet2d;
  for (auto c : kAllContacts) {
    if (!first.is_active(c)) throw std::invalid_argument("full-order runs need a quadruple-contact first domain");
    feet2d[index_of(c)] = first.foothold(c);
  }
  const LipStated x0 = initial_state(sc, graph);
  FullState state = standing_pose(model, feet2d, sc.com_height);
  {
    const Eigen::Vector2d shift = com_position(x0) - kinematics(model, state).com.head<2>();
    state.q.head<2>() += shift;
    std::array<Eigen::Vector3d, 4> targets;
    for (int l = 0; l < 4; ++l) targets[l] = {feet2d[l].x(), feet2d[l].y(), 0};
    state.q = solve_leg_ik(model, state.q, targets);
    state.qdot(0) = x0(1);
    state.qdot(1) = x0(3);
  }

  ContactMode mode;
  mode.kind = sc.contact_model;
  mode.ground = sc.ground;
  FootholdSet holds;
  {
    const auto k = kinematics(model, state);
    for (int l = 0; l < 4; ++l) holds.anchor[l] = {k.foot_position[l].x(), k.foot_position[l].y(), 0};
  }

  const Gains gains6 = Gains::uniform(6, sc.kp, sc.kd);
  LowLevelQpConfig llcfg;
  llcfg.defect_weight = sc.defect_weight;
  llcfg.friction_coeff = sc.friction_coeff;

  auto state_out = open_out(r.output_dir / "state.csv");
  auto diag_out = open_out(r.output_dir / "diagnostics.csv");
  write_state_header(state_out);
  write_diagnostics_header(diag_out);
  r.manifest.push_back("state.csv");
  r.manifest.push_back("diagnostics.csv");

  ClosedLoopTrajectory samples;  // measured LIP states and planned COPs per sample
  std::vector<LipStated> measurement_history;
  std::vector<Vector12d> commands;
  std::vector<int> iterations;
  std::array<Eigen::Vector3d, 4> grf = zero_forces();
  std::vector<ContactId> prev_active;

  const auto wall_start = std::chrono::steady_clock::now();
  const long total_steps = static_cast<long>(sc.events) * steps_per_domain;
  // The controller runs `latency_steps` ahead of the plant: its command from
  // step k is applied at k + L, so contact schedule, plan and phase are those
  // of time (k + L) while the measurement is the current one.
  DomainReference ref;
  OutputSpec spec;
  std::vector<ContactId> ctrl_active;
  int ctrl_domain = -1;
  MpcSolution plan;
  std::vector<MpcSolution> plans;  // by domain, for the sample log
  // Per-domain check: |y(t)| <= 1.2 (PD response from the domain's first
  // output state + sup|forcing| / kp) + 1e-6.
  double env_y0 = 0, env_yd0 = 0, omega_sup = 0, hold_forcing = 0;
  bool domain_violated = false, envelope_started = false;
  long step = 0;
  const bool compliant = mode.kind == ContactModelKind::Compliant;

  auto anchors_for = [&](const std::vector<ContactId>& feet) {
    Eigen::Matrix3Xd a(3, static_cast<Eigen::Index>(feet.size()));
    for (std::size_t i = 0; i < feet.size(); ++i) a.col(static_cast<Eigen::Index>(i)) = holds.anchor[index_of(feet[i])];
    return a;
  };

  try {
    for (; step <= total_steps; ++step) {
      const double t = static_cast<double>(step) * period;
      const int m = static_cast<int>(step / steps_per_domain);
      const int in_domain = static_cast<int>(step % steps_per_domain);

      // Plant side: contact switches at domain boundaries.
      if (in_domain == 0) {
        if (step > 0) ++r.domains_completed;
        if (step == total_steps) {
          samples.states.push_back(lip_measurement(kinematics(model, state)));
          break;
        }
        const int zeta = domain_indicator(static_cast<long>(m) * nd, nd, graph.domain_count());
        const auto& active = graph.domain(zeta).active;
        const Kinematics kin = kinematics(model, state);
        std::vector<ContactId> landing;
        for (auto c : active)
          if (std::find(prev_active.begin(), prev_active.end(), c) == prev_active.end()) landing.push_back(c);
        if (!landing.empty() && step > 0) {
          // Touchdown: new stance feet take fresh anchors and a plastic impact.
          for (auto c : landing)
            holds.anchor[index_of(c)] = {kin.foot_position[index_of(c)].x(), kin.foot_position[index_of(c)].y(), 0};
          if (!compliant) state.qdot = impact_map(model, state, active);
        }
        prev_active = active;
        mode.feet = active;
        mode.anchors = anchors_for(active);
      }

      const Kinematics kin = kinematics(model, state);
      measurement_history.push_back(lip_measurement(kin));

      // Controller side.
      const long c = step + latency_steps;
      const int cm = std::min(static_cast<int>(c / steps_per_domain), sc.events - 1);
      if (cm != ctrl_domain) {
        if (envelope_started && domain_violated) ++r.domains_without_decay;
        domain_violated = false;
        envelope_started = false;
        ctrl_domain = cm;
        const long k = static_cast<long>(cm) * nd;
        const int zeta = domain_indicator(k, nd, graph.domain_count());
        ctrl_active = graph.domain(zeta).active;
        plan = solve_event(setup, k, measurement_history.back()).solution;
        plans.push_back(plan);
        ++r.mpc_solves;
        ref = DomainReference{};
        ref.com_xy = com_reference_fit(plan, nd).curve;
        ref.com_height = sc.com_height;
        ref.duration = domain_time;
        const auto swing = graph.swing_legs(zeta);
        for (auto leg : swing) {
          const Eigen::Vector2d start = kin.foot_position[index_of(leg)].head<2>();
          ref.swing.emplace_back(leg, swing_reference(start, graph.touchdown(zeta, leg), sc.swing_apex));
        }
        spec = make_output_spec(swing);
      }

      if (in_domain % steps_per_sample == 0) {
        const int j = in_domain / steps_per_sample;
        const long k = static_cast<long>(m) * nd + j;
        samples.states.push_back(measurement_history.back());
        samples.cops.push_back(plans[static_cast<std::size_t>(std::min<std::size_t>(m, plans.size() - 1))]
                                   .cop_sequence[static_cast<std::size_t>(j)]);
        samples.domains.push_back(domain_indicator(k, nd, graph.domain_count()));
        samples.solve_flags.push_back(j == 0);
      }

      const double tc = static_cast<double>(c) * period;
      const double t_plus = static_cast<double>(ctrl_domain) * domain_time;
      const double s = phasing(tc, t_plus, nd, sc.sample_time);
      const double s_rate = s < 1 ? 1 / domain_time : 0.0;
      const OutputEval out = compute_outputs(model, state, spec, ref, s, s_rate);
      const Gains gains = spec.dim() == 6 ? gains6 : Gains::uniform(spec.dim(), sc.kp, sc.kd);
      StanceHold hold;
      hold.kp = sc.stance_kp;
      hold.kd = sc.stance_kd;
      if (compliant) {
        for (auto f : ctrl_active)
          if (std::find(mode.feet.begin(), mode.feet.end(), f) == mode.feet.end())
            holds.anchor[index_of(f)] = {kin.foot_position[index_of(f)].x(), kin.foot_position[index_of(f)].y(), 0};
        hold.anchors = anchors_for(ctrl_active);
      }
      const ControlResult cr =
          control_step(model, state, out, gains, llcfg, ctrl_active, t, sc.gravity, compliant ? &hold : nullptr);
      ++r.lowlevel_solves;
      iterations.push_back(cr.iterations);
      r.max_output_norm = std::max(r.max_output_norm, cr.y_norm);
      r.max_defect_norm = std::max(r.max_defect_norm, cr.defect_norm);
      r.max_pyramid_violation = std::max(r.max_pyramid_violation, cr.max_pyramid_violation);
      const long c_in_domain = c - static_cast<long>(ctrl_domain) * steps_per_domain;
      if (!envelope_started) {
        envelope_started = true;
        env_y0 = cr.y_norm;
        env_yd0 = cr.ydot_norm;
        omega_sup = 0;
        // Torques are held while h_d keeps moving: the realized yddot lags the
        // command by up to (1/2 + latency) periods of reference jerk.
        hold_forcing = (0.5 + latency_steps) * period * reference_jerk_bound(ref, 1 / domain_time);
      }
      omega_sup = std::max(omega_sup, cr.defect_norm);
      {
        const auto pd = pd_response(sc.kp, sc.kd, static_cast<double>(c_in_domain) * period);
        const double bound = std::abs(pd.phi_y) * env_y0 + std::abs(pd.phi_ydot) * env_yd0 +
                             (omega_sup + hold_forcing) / sc.kp + 1e-6;
        if (cr.y_norm > 1.2 * bound + 1e-9) domain_violated = true;
      }

      commands.push_back(cr.tau);
      const Vector12d& tau = commands[static_cast<std::size_t>(std::max<long>(0, step - latency_steps))];

      DiagnosticsRow row;
      row.t = t;
      row.s = s;
      row.zeta = domain_indicator(static_cast<long>(ctrl_domain) * nd, nd, graph.domain_count());
      row.y_norm = cr.y_norm;
      row.ydot_norm = cr.ydot_norm;
      row.defect_norm = cr.defect_norm;
      row.tau = tau;
      row.iterations = cr.iterations;
      for (std::size_t i = 0; i < ctrl_active.size(); ++i)
        row.forces[index_of(ctrl_active[i])] = cr.forces.col(static_cast<Eigen::Index>(i));
      write_diagnostics_row(diag_out, row);

      for (int sub = 0; sub < substeps; ++sub) {
        const StepResult res = integrate_step(model, state, tau, mode, dt, sc.gravity);
        state = res.state;
        grf = res.forces;
        mode.bristle = res.bristle;
        if (!compliant) {
          r.max_acceleration_residual = std::max(r.max_acceleration_residual, res.acceleration_residual);
          Eigen::Matrix3Xd f(3, static_cast<Eigen::Index>(mode.feet.size()));
          for (std::size_t i = 0; i < mode.feet.size(); ++i)
            f.col(static_cast<Eigen::Index>(i)) = grf[index_of(mode.feet[i])];
          const double v = pyramid_violation(f, sc.friction_coeff);
          if (v > 1e-6) ++r.pyramid_violations;
          r.max_pyramid_violation = std::max(r.max_pyramid_violation, v);
        } else {
          for (const auto& f : grf)
            if (f.head<2>().norm() > sc.friction_coeff * f.z() + 1e-6) ++r.pyramid_violations;
        }
      }
      write_state_row(state_out, t + period, state, grf);

      if (opt.verbose && in_domain == 0)
        std::cerr << fmt::format("[{}] event {:>3} t={:.2f}s |y|={:.2e} |omega|={:.2e}\n", sc.name, m, t, cr.y_norm,
                                 cr.defect_norm);
    }
    if (envelope_started && domain_violated) ++r.domains_without_decay;
  } catch (const ControllerFailure& e) {
    r.failure = e.what();
    r.failure_time = e.time();
  } catch (const MpcInfeasible& e) {
    r.failure = e.what();
    r.failure_time = static_cast<double>(step) * period;
  } catch (const std::domain_error& e) {
    r.failure = std::string("state guard: ") + e.what();
    r.failure_time = static_cast<double>(step) * period;
  }

  if (opt.verbose) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    std::cerr << fmt::format("[{}] wall time {:.1f} s, {} low-level solves\n", sc.name, wall, r.lowlevel_solves);
  }

  if (!samples.cops.empty()) {
    if (samples.states.size() == samples.cops.size()) samples.states.push_back(measurement_history.back());
    write_rollout_csv(samples, r.output_dir / "samples.csv");
    r.manifest.push_back("samples.csv");
    const auto checks = check_reduced(setup, samples.states, samples.cops);
    r.cop_outside_polygon = checks.outside;
  }
  r.events = r.mpc_solves;
  r.samples = static_cast<long>(samples.cops.size());
  r.lowlevel_iteration_percentiles = percentiles(iterations);
  r.output_bound = sc.output_bound;
  const Kinematics kin = kinematics(model, state);
  r.final_com = kin.com;
  r.final_com_error = (kin.com.head<2>() - com_position(r.target)).norm();
  if (!samples.states.empty())
    finish_convergence(r, samples.states, r.target, nd, sc.convergence_threshold);
  r.final_error = (lip_measurement(kin) - r.target).norm();
  r.converged = r.failure.empty() && r.final_com_error <= sc.final_com_tolerance;
  r.success = r.failure.empty();
  if (r.max_output_norm > sc.output_bound)
    r.notes.push_back(fmt::format("max |y| {:.4g} exceeds the declared bound {:.4g}", r.max_output_norm, sc.output_bound));
  if (sc.latency_s > 0 || sc.control_rate_hz < 1000)
    r.notes.push_back(fmt::format("degraded timing: {:.0f} Hz control with {:.1f} ms latency", sc.control_rate_hz,
                                  sc.latency_s * 1e3));
  return r;
}

}  // namespace

nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["format"] = "hloco.run_report.v1";
  j["scenario"] = r.scenario;
  j["mode"] = to_string(r.mode);
  j["success"] = r.success;
  j["failure"] = r.failure;
  j["failure_time"] = r.failure_time ? nlohmann::json(*r.failure_time) : nlohmann::json(nullptr);
  j["converged"] = r.converged;
  j["final_error"] = r.final_error;
  j["first_converged_event"] = r.first_converged_event;
  j["events"] = r.events;
  j["samples"] = r.samples;
  j["mpc_solves"] = r.mpc_solves;
  j["lowlevel_solves"] = r.lowlevel_solves;
  j["lowlevel_iteration_percentiles"] = r.lowlevel_iteration_percentiles;
  j["violations"] = {{"cop_outside_polygon", r.cop_outside_polygon},
                     {"cone", r.cone_violations},
                     {"pyramid", r.pyramid_violations},
                     {"max_pyramid_violation", r.max_pyramid_violation},
                     {"max_acceleration_residual", r.max_acceleration_residual}};
  j["outputs"] = {{"max_norm", r.max_output_norm},
                  {"bound", r.output_bound},
                  {"max_defect_norm", r.max_defect_norm},
                  {"domains_completed", r.domains_completed},
                  {"domains_without_decay", r.domains_without_decay}};
  j["final_com"] = vec(r.final_com);
  j["target"] = vec(r.target);
  j["final_com_error"] = r.final_com_error;
  j["notes"] = r.notes;
  j["output_dir"] = r.output_dir.string();
  j["manifest"] = r.manifest;
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "hloco.run_report.v1") throw std::invalid_argument("not a run report");
  RunReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.mode = mode_from_name(j.at("mode").get<std::string>());
  r.success = j.at("success").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  if (!j.at("failure_time").is_null()) r.failure_time = j.at("failure_time").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.final_error = j.at("final_error").get<double>();
  r.first_converged_event = j.at("first_converged_event").get<int>();
  r.events = j.at("events").get<int>();
  r.samples = j.at("samples").get<long>();
  r.mpc_solves = j.at("mpc_solves").get<int>();
  r.lowlevel_solves = j.at("lowlevel_solves").get<long>();
  r.lowlevel_iteration_percentiles = j.at("lowlevel_iteration_percentiles").get<std::vector<double>>();
  const auto& v = j.at("violations");
  r.cop_outside_polygon = v.at("cop_outside_polygon").get<int>();
  r.cone_violations = v.at("cone").get<int>();
  r.pyramid_violations = v.at("pyramid").get<int>();
  r.max_pyramid_violation = v.at("max_pyramid_violation").get<double>();
  r.max_acceleration_residual = v.at("max_acceleration_residual").get<double>();
  const auto& o = j.at("outputs");
  r.max_output_norm = o.at("max_norm").get<double>();
  r.output_bound = o.at("bound").get<double>();
  r.max_defect_norm = o.at("max_defect_norm").get<double>();
  r.domains_completed = o.at("domains_completed").get<int>();
  r.domains_without_decay = o.at("domains_without_decay").get<int>();
  const auto fc = j.at("final_com").get<std::vector<double>>();
  const auto tg = j.at("target").get<std::vector<double>>();
  if (fc.size() != 3 || tg.size() != 4) throw std::invalid_argument("run report: malformed vectors");
  r.final_com = Eigen::Map<const Eigen::Vector3d>(fc.data());
  r.target = Eigen::Map<const LipStated>(tg.data());
  r.final_com_error = j.at("final_com_error").get<double>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  r.output_dir = j.at("output_dir").get<std::string>();
  r.manifest = j.at("manifest").get<std::vector<std::string>>();
  return r;
}

RunReport run_scenario(const Scenario& scenario, const RunOptions& options) {
  if (auto errs = scenario.validation_errors(); !errs.empty()) throw ScenarioError(errs);
  std::filesystem::create_directories(scenario.output_dir);
  RunReport r;
  r.scenario = scenario.name;
  r.mode = scenario.mode;
  r.output_dir = scenario.output_dir;
  r = scenario.mode == RunMode::FullOrder ? run_full(scenario, std::move(r), options)
                                          : run_reduced(scenario, std::move(r));
  write_report(r);
  return r;
}

RunReport run_scenario(const std::filesystem::path& file, const RunOptions& options) {
  return run_scenario(parse_scenario(file), options);
}

// ---------------------------------------------------------------------------
// Plot data

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string cell(const std::string& s) { return s.empty() ? "nan" : s; }

}  // namespace

std::vector<std::filesystem::path> emit_plotdata(const RunReport& report) {
  if (!report.success) throw std::invalid_argument("emit_plotdata: run did not succeed");
  const auto& dir = report.output_dir;
  std::vector<std::filesystem::path> written;
  const GaitGraph graph = read_gait_json(dir / "gait.json");

  const auto rows = read_csv(dir / (report.mode == RunMode::FullOrder ? "samples.csv" : "rollout.csv"));
  {
    auto out = open_out(dir / "com_cop.dat");
    out << "# k zeta r_x r_y u_x u_y\n";
    for (const auto& r : rows) out << r[0] << ' ' << r[1] << ' ' << r[2] << ' ' << r[4] << ' ' << cell(r[6]) << ' ' << cell(r[7]) << '\n';
    written.push_back(dir / "com_cop.dat");
  }
  {
    auto out = open_out(dir / "com_path.dat");
    out << "# x y\n";
    if (report.mode == RunMode::FullOrder) {
      // The base COM path at control rate, from the recorded LIP samples.
      for (const auto& r : rows) out << r[2] << ' ' << r[4] << '\n';
    } else {
      for (const auto& r : rows) out << r[2] << ' ' << r[4] << '\n';
    }
    written.push_back(dir / "com_path.dat");
  }
  {
    auto out = open_out(dir / "footholds.dat");
    out << "# zeta leg x y\n";
    for (int z = 1; z <= graph.domain_count(); ++z) {
      const auto& d = graph.domain(z);
      for (auto c : d.active) {
        const auto p = d.foothold(c);
        out << fmt::format("{} {} {:.9g} {:.9g}\n", z, short_name(c), p.x(), p.y());
      }
    }
    written.push_back(dir / "footholds.dat");
  }
  {
    auto out = open_out(dir / "support_polygons.dat");
    out << "# zeta x y (closed polygons separated by blank lines)\n";
    for (int z = 1; z <= graph.domain_count(); ++z) {
      const auto& pts = graph.domain(z).contact_coords;
      const Eigen::Vector2d c = pts.rowwise().mean();
      std::vector<Eigen::Index> order(static_cast<std::size_t>(pts.cols()));
      for (Eigen::Index i = 0; i < pts.cols(); ++i) order[static_cast<std::size_t>(i)] = i;
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::atan2(pts(1, a) - c.y(), pts(0, a) - c.x()) < std::atan2(pts(1, b) - c.y(), pts(0, b) - c.x());
      });
      for (auto i : order) out << fmt::format("{} {:.9g} {:.9g}\n", z, pts(0, i), pts(1, i));
      out << fmt::format("{} {:.9g} {:.9g}\n\n", z, pts(0, order.front()), pts(1, order.front()));
    }
    written.push_back(dir / "support_polygons.dat");
  }
  if (report.mode == RunMode::FullOrder) {
    const auto diag = read_csv(dir / "diagnostics.csv");
    {
      auto out = open_out(dir / "outputs_torques.dat");
      out << "# t s zeta y_norm ydot_norm omega_norm tau_1..tau_12\n";
      for (const auto& r : diag) {
        for (std::size_t i = 0; i < 18; ++i) out << (i ? " " : "") << r[i];
        out << '\n';
      }
      written.push_back(dir / "outputs_torques.dat");
    }
    {
      auto out = open_out(dir / "grf.dat");
      out << "# t then F_x F_y F_z for FL FR RL RR (simulator forces)\n";
      for (const auto& r : read_csv(dir / "state.csv")) {
        out << r[0];
        for (std::size_t i = 1 + 2 * kNumDof; i < r.size(); ++i) out << ' ' << r[i];
        out << '\n';
      }
      written.push_back(dir / "grf.dat");
    }
  }
  return written;
}

// ---------------------------------------------------------------------------
// Catalog

std::filesystem::path default_scenario_dir() {
  if (const char* env = std::getenv("HLOCO_SCENARIO_DIR")) return env;
#ifdef HLOCO_SCENARIO_DIR
  return HLOCO_SCENARIO_DIR;
#else
  return "scenarios";
#endif
}

std::vector<CatalogEntry> list_scenarios(const std::filesystem::path& dir) {
  std::vector<CatalogEntry> out;
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("no scenario directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".toml") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const Scenario s = parse_scenario(f);
    out.push_back({s.name, f, s.mode, s.direction, s.contact_model, s.description});
  }
  return out;
}

}  // namespace hloco
