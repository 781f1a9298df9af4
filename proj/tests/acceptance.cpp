// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <fmt/format.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "hloco/event_mpc.hpp"
#include "hloco/qp.hpp"
#include "hloco/rigid_body.hpp"
#include "hloco/sim.hpp"
#include "hloco/stability.hpp"
#include "hloco/vc_controller.hpp"

using namespace hloco;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

fs::path g_out;

Scenario bundled(const std::string& name, const std::string& tag) {
  Scenario s = parse_scenario(default_scenario_dir() / (name + ".toml"));
  s.output_dir = g_out / tag;
  fs::remove_all(s.output_dir);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MpcSetup trot_setup(const Eigen::Vector2d& step) {
  const GaitGraph g = build_trot_graph(GaitDirection::Custom, step, 20, 4);
  MpcConfig c;
  c.target = centroid_target(g);
  return MpcSetup::make(c, g, LipParamsd{}, 0.08);
}

Outcome mpc_counts() {
  const MpcSetup s = trot_setup({0.10, 0.0});
  const LipStated x = equilibrium_state<double>(s.graph.initial_centroid());
  int bad = 0;
  std::vector<int> seen(3, 0);
  for (int zeta = 1; zeta <= 20; ++zeta) {
    const int n = build_mpc_qp(s, 4L * (zeta - 1), x).num_variables();
    const int want = zeta == 20 ? 80 : (zeta == 1 || zeta == 19) ? 72 : 64;
    if (n != want) ++bad;
    seen[n == 64 ? 0 : n == 72 ? 1 : 2] += n == want;
  }
  return {bad == 0, fmt::format("64 x{}, 72 x{}, 80 x{}, mismatches {}", seen[0], seen[1], seen[2], bad)};
}

BezierCurved constant_curve(const Eigen::VectorXd& v, int degree) {
  BezierCurved c;
  c.coeff = v.replicate(1, degree + 1);
  return c;
}

Outcome lowlevel_counts() {
  const RobotModel m = default_quadruped();
  StanceGeometry geo;
  std::array<Eigen::Vector2d, 4> feet;
  for (auto c : kAllContacts) feet[index_of(c)] = geo.corner(c);
  const FullState s = standing_pose(m, feet, 0.5);
  const Kinematics k = kinematics(m, s);
  std::vector<int> built;
  const std::vector<std::vector<ContactId>> swings = {{ContactId::FrontRight, ContactId::RearLeft},
                                                      {ContactId::FrontLeft, ContactId::RearRight}};
  for (const auto& swing : swings) {
    std::vector<ContactId> stance;
    for (auto c : kAllContacts)
      if (std::find(swing.begin(), swing.end(), c) == swing.end()) stance.push_back(c);
    const OutputSpec spec = make_output_spec(swing);
    DomainReference ref;
    ref.com_xy = constant_curve(k.com.head<2>(), 4);
    ref.com_height = k.com.z();
    for (auto leg : swing) ref.swing.emplace_back(leg, constant_curve(k.foot_position[index_of(leg)], 5));
    const OutputEval out = compute_outputs(m, s, spec, ref, 0.5, 1 / 0.32);
    built.push_back(build_lowlevel_qp(m, s, out, Gains::uniform(spec.dim()), {}, stance).num_variables());
  }
  const int formula = lowlevel_decision_count(kNumActuated, 2, make_output_spec(swings[0]).dim());
  const int scaled = lowlevel_decision_count(16, 2, 6 + 3 + 6);
  const bool ok = built[0] == 30 && built[1] == 30 && formula == 30 && scaled == 37;
  return {ok, fmt::format("built {} and {}, formula {}, 16-actuator instance {}", built[0], built[1], formula, scaled)};
}

Outcome zoh_oracle() {
  double worst = 0;
  int cases = 0;
  for (double t : {0.005, 0.02, 0.08, 0.2})
    for (double rz : {0.3, 0.5, 0.8, 1.2})
      for (double g : {9.81, 3.7}) {
        LipParamsd p;
        p.com_height = rz;
        p.gravity = g;
        const LipDiscreted d = discretize_zoh(p, t);
        const auto [ac, bc] = continuous_lip(p);
        Eigen::Matrix<double, 6, 6> gen = Eigen::Matrix<double, 6, 6>::Zero();
        gen.topLeftCorner<4, 4>() = ac * t;
        gen.topRightCorner<4, 2>() = bc * t;
        const Eigen::Matrix<double, 6, 6> e = gen.exp();
        worst = std::max({worst, (d.a_mat - e.topLeftCorner<4, 4>()).cwiseAbs().maxCoeff(),
                          (d.b_mat - e.topRightCorner<4, 2>()).cwiseAbs().maxCoeff()});
        ++cases;
      }
  return {worst <= 1e-10, fmt::format("{} parameter sets, max deviation {:.2e}", cases, worst)};
}

QpProblemd random_qp(std::mt19937& rng, int n, int mi, int me) {
  std::normal_distribution<double> nd;
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd a(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) a(i, j) = nd(rng);
    return a;
  };
  QpProblemd p = QpProblemd::unconstrained(n);
  const Eigen::MatrixXd l = randn(n, n);
  p.hessian = l * l.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  p.linear_cost = 3.0 * randn(n, 1);
  const Eigen::VectorXd x0 = 0.5 * randn(n, 1);
  p.ineq_matrix = randn(mi, n);
  std::uniform_real_distribution<double> slack(0.05, 1.0);
  p.ineq_rhs = p.ineq_matrix * x0;
  for (int i = 0; i < mi; ++i) p.ineq_rhs(i) += slack(rng);
  p.eq_matrix = randn(me, n);
  p.eq_rhs = p.eq_matrix * x0;
  return p;
}

Outcome qp_soundness() {
  std::mt19937 rng(4242);
  std::uniform_int_distribution<int> nd(1, 8), md(0, 6), ed(0, 2);
  int agree = 0, total = 0;
  double worst_x = 0, worst_kkt = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int n = nd(rng);
    const int mi = md(rng);
    const int me = std::min(ed(rng), n - 1);
    const QpProblemd p = random_qp(rng, n, mi, me);
    const auto s = solve_qp(p);
    const auto o = active_set_oracle(p);
    ++total;
    if (!s.optimal() || !o.optimal()) continue;
    const double dx = (s.x_star - o.x_star).norm() / std::max(1.0, o.x_star.norm());
    worst_x = std::max(worst_x, dx);
    worst_kkt = std::max(worst_kkt, s.kkt.max());
    if (dx <= 1e-8 && s.kkt.max() <= 1e-8) ++agree;
  }
  return {agree == total && total >= 100,
          fmt::format("{}/{} agree, max |dx| {:.1e}, max KKT {:.1e}", agree, total, worst_x, worst_kkt)};
}

RunReport g_reduced_forward, g_reduced_diagonal;

Outcome reduced_steering() {
  g_reduced_forward = run_scenario(bundled("reduced_forward_trot", "c5_forward"));
  g_reduced_diagonal = run_scenario(bundled("reduced_diagonal_trot", "c5_diagonal"));
  bool ok = true;
  std::string d;
  for (const RunReport* r : {&g_reduced_forward, &g_reduced_diagonal}) {
    ok = ok && r->success && r->converged && r->first_converged_event >= 0 && r->first_converged_event <= 30 &&
         r->cop_outside_polygon == 0 && r->cone_violations == 0;
    d += fmt::format("{}: converged at event {}, final {:.1e}, COP out {}, cone {}; ", r->scenario,
                     r->first_converged_event, r->final_error, r->cop_outside_polygon, r->cone_violations);
  }
  d.resize(d.size() - 2);
  return {ok, d};
}

Outcome event_economy() {
  bool ok = true;
  std::string d;
  for (const RunReport* r : {&g_reduced_forward, &g_reduced_diagonal}) {
    const long expected = event_count(r->samples, 4);
    ok = ok && r->success && r->mpc_solves == expected && 4L * r->mpc_solves == r->samples;
    d += fmt::format("{}: {} solves for {} samples; ", r->scenario, r->mpc_solves, r->samples);
  }
  d.resize(d.size() - 2);
  return {ok, d};
}

Outcome stability() {
  const MpcSetup s = trot_setup({0.10, 0.0});
  const LipStated x0 = equilibrium_state<double>(s.graph.initial_centroid());
  const ClosedLoopTrajectory traj = rollout_closed_loop(s, x0, 30);
  const LawFn law = mpc_law(s);
  double rho = 0;
  bool finite = true;
  for (int m = 0; m < 30; ++m) {
    for (const auto& e : estimate_lipschitz(law, 4, m, traj.states[static_cast<std::size_t>(4 * m)], 10, 0.01, 900 + m)) {
      finite = finite && std::isfinite(e.rho_hat) && e.sample_count > 0;
      rho = std::max(rho, e.rho_hat);
    }
  }
  const LConstants lc = l_constants(s.lip, rho, 4);
  bool l_ok = std::abs(lc.values[0] - 1) < 1e-12;
  Eigen::Matrix4d p = Eigen::Matrix4d::Identity();
  for (int j = 0; j < 4; ++j, p = s.lip.a_mat * p) l_ok = l_ok && lc.values[static_cast<std::size_t>(j)] >= spectral_norm(p);

  DecayOptions opt;
  opt.event_budget = 30;
  const DecayReport r = certify_downsample_decay(s, decay_grid(x0, 0.03, 8, 1), opt);
  const bool ok = finite && rho < 1e3 && l_ok && r.verdict == DecayVerdict::DecayObserved && r.envelope_rate < 1 &&
                  r.intersample_violations == 0;
  return {ok, fmt::format("rho_hat max {:.3f} over 30 events, L = [{:.3f}..{:.3f}], {}, envelope {:.3g}*{:.4f}^m, "
                          "inter-sample violations {}",
                          rho, lc.values.front(), lc.values.back(), to_string(r.verdict), r.envelope_c,
                          r.envelope_rate, r.intersample_violations)};
}

FullState random_state(std::mt19937_64& rng, double vel_scale) {
  std::uniform_real_distribution<double> u(-1, 1);
  FullState s;
  for (int i = 0; i < 3; ++i) s.q(i) = u(rng);
  for (int i = 3; i < 6; ++i) s.q(i) = 0.5 * u(rng);
  for (int i = 6; i < kNumDof; ++i) s.q(i) = u(rng);
  for (int i = 0; i < kNumDof; ++i) s.qdot(i) = vel_scale * u(rng);
  return s;
}

Outcome dynamics_suite() {
  const RobotModel m = default_quadruped();
  std::mt19937_64 rng(77);
  bool spd = true;
  for (int t = 0; t < 1000; ++t) {
    const Matrix18d d = mass_matrix(m, random_state(rng, 1).q);
    spd = spd && (d - d.transpose()).cwiseAbs().maxCoeff() <= 1e-10 && d.llt().info() == Eigen::Success;
  }
  double crba = 0, jac = 0;
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    const FullState s = random_state(rng, 1);
    const Matrix18d d = mass_matrix(m, s.q);
    const Kinematics k = kinematics(m, s);
    for (int i = 0; i < kNumDof; ++i) {
      crba = std::max(crba, (inverse_dynamics(m, s.q, Vector18d::Zero(), Vector18d::Unit(i), 0.0) - d.col(i))
                                .cwiseAbs()
                                .maxCoeff());
      FullState a = s, b = s;
      a.q(i) += h;
      b.q(i) -= h;
      const Kinematics ka = kinematics(m, a), kb = kinematics(m, b);
      for (int l = 0; l < 4; ++l)
        jac = std::max(jac, ((ka.foot_position[l] - kb.foot_position[l]) / (2 * h) - k.foot_jacobian[l].col(i))
                                .cwiseAbs()
                                .maxCoeff());
    }
  }

  // RK4 on the passive flight dynamics.
  auto acc = [&](const Vector18d& q, const Vector18d& v) -> Vector18d {
    return mass_matrix(m, q).ldlt().solve(-bias_forces(m, q, v));
  };
  FullState s = random_state(rng, 0.5);
  s.q.segment<3>(3) *= 0.2;
  auto energy = [&](const FullState& x) { return kinetic_energy(m, x) + potential_energy(m, x.q); };
  const double e0 = energy(s);
  const double dt = 1e-4;
  for (int i = 0; i < 5000; ++i) {
    const Vector18d q = s.q, v = s.qdot;
    const Vector18d k1q = v, k1v = acc(q, v);
    const Vector18d k2q = v + 0.5 * dt * k1v, k2v = acc(q + 0.5 * dt * k1q, k2q);
    const Vector18d k3q = v + 0.5 * dt * k2v, k3v = acc(q + 0.5 * dt * k2q, k3q);
    const Vector18d k4q = v + dt * k3v, k4v = acc(q + dt * k3q, k4q);
    s.q += dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q);
    s.qdot += dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  const double drift = std::abs(energy(s) - e0) / std::abs(e0);

  bool impact = true;
  const std::vector<std::vector<ContactId>> sets = {{ContactId::RearLeft},
                                                    {ContactId::FrontLeft, ContactId::RearRight},
                                                    {kAllContacts.begin(), kAllContacts.end()}};
  for (int t = 0; t < 60; ++t) {
    const FullState x = random_state(rng, 1);
    const auto& feet = sets[static_cast<std::size_t>(t) % sets.size()];
    FullState after = x;
    after.qdot = impact_map(m, x, feet);
    impact = impact && (impact_map(m, after, feet) - after.qdot).cwiseAbs().maxCoeff() <= 1e-10 &&
             kinetic_energy(m, after) <= kinetic_energy(m, x) + 1e-12;
  }
  const bool ok = spd && crba <= 1e-9 && jac <= 1e-6 && drift < 1e-5 && impact;
  return {ok, fmt::format("D SPD on 1000 states: {}, CRBA {:.1e}, Jacobian FD {:.1e}, energy drift {:.1e}, impact {}",
                          spd ? "yes" : "no", crba, jac, drift, impact ? "ok" : "bad")};
}

RunReport g_full;

Outcome full_trot() {
  g_full = run_scenario(bundled("forward_trot", "c9_forward"));
  const RunReport& r = g_full;
  const bool ok = r.success && r.domains_completed >= 20 && r.max_output_norm < r.output_bound &&
                  r.domains_without_decay == 0 && r.pyramid_violations == 0 && r.max_acceleration_residual <= 1e-8 &&
                  r.final_com_error <= 0.02;
  return {ok, fmt::format("{} domains, max |y| {:.4f} < {:.3f}, domains without decay {}, pyramid violations {}, "
                          "accel residual {:.1e}, final COM error {:.4f} m",
                          r.domains_completed, r.max_output_norm, r.output_bound, r.domains_without_decay,
                          r.pyramid_violations, r.max_acceleration_residual, r.final_com_error)};
}

Outcome robustness() {
  const double limit = 3 * g_full.output_bound;
  bool ok = true;
  std::string d;
  for (const char* name : {"robustness_500hz_2ms", "forward_trot_compliant"}) {
    Scenario s = bundled(name, std::string("c10_") + name);
    const RunReport r = run_scenario(s);
    ok = ok && r.success && r.domains_completed == s.events && r.max_output_norm <= limit;
    d += fmt::format("{}: {} ({}/{} domains, max |y| {:.4f}); ", name, r.success ? "ok" : r.failure,
                     r.domains_completed, s.events, r.max_output_norm);
  }
  d += fmt::format("limit {:.3f}", limit);
  return {ok, d};
}

Outcome determinism() {
  const std::vector<std::pair<std::string, const RunReport*>> runs = {{"reduced_forward_trot", &g_reduced_forward},
                                                                      {"reduced_diagonal_trot", &g_reduced_diagonal},
                                                                      {"forward_trot", &g_full}};
  int files = 0, differ = 0;
  for (const auto& [name, first] : runs) {
    const RunReport again = run_scenario(bundled(name, "c11_" + name));
    for (const auto& f : first->manifest) {
      if (f == "report.json") continue;
      ++files;
      if (slurp(first->output_dir / f) != slurp(again.output_dir / f)) ++differ;
    }
    auto a = report_to_json(*first), b = report_to_json(again);
    a.erase("output_dir");
    b.erase("output_dir");
    ++files;
    if (a != b) ++differ;
  }
  return {differ == 0 && files > 3, fmt::format("{} output files compared, {} differ", files, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  g_out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "hloco_acceptance";
  fs::create_directories(g_out);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"MPC decision-variable counts", mpc_counts},
      {"low-level QP decision-variable count", lowlevel_counts},
      {"ZOH against the matrix exponential", zoh_oracle},
      {"QP solver against the active-set oracle", qp_soundness},
      {"reduced-order steering", reduced_steering},
      {"event economy", event_economy},
      {"stability machinery", stability},
      {"dynamics consistency", dynamics_suite},
      {"full-order forward trot", full_trot},
      {"robustness scenarios", robustness},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    fmt::print("{} {:>2} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail, secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
