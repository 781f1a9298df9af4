#include <doctest.h>

#include <sstream>

#include "hloco/event_mpc.hpp"

using namespace hloco;

namespace {

MpcSetup trot_setup(const Eigen::Vector2d& step, int domains = 20) {
  auto g = build_trot_graph(GaitDirection::Custom, step, domains);
  MpcConfig c;
  c.target = centroid_target(g);
  return MpcSetup::make(c, g, LipParamsd{}, 0.08);
}

LipStated rest_start(const MpcSetup& s) { return equilibrium_state<double>(s.graph.initial_centroid()); }

double max_recursion_error(const MpcSetup& s, const MpcSolution& sol) {
  double err = 0;
  for (std::size_t i = 0; i < sol.cop_sequence.size(); ++i) {
    const LipStated next = lip_step(s.lip, sol.predicted_states[i], sol.cop_sequence[i]);
    err = std::max(err, (next - sol.predicted_states[i + 1]).cwiseAbs().maxCoeff());
  }
  return err;
}

}  // namespace

TEST_CASE("decision-variable counts per event domain") {
  const auto s = trot_setup({0.1, 0});
  const LipStated x = rest_start(s);
  for (int zeta = 1; zeta <= 20; ++zeta) {
    const auto qp = build_mpc_qp(s, 4L * (zeta - 1), x);
    const int expected = (zeta == 20) ? 80 : (zeta == 1 || zeta == 19) ? 72 : 64;
    CHECK(qp.num_variables() == expected);
    CHECK(qp.dynamics_rows == 32);
    CHECK(qp.simplex_rows == 8);
    CHECK(qp.coupling_rows == 16);
    CHECK(qp.qp.num_eq() == 56);
    CHECK(qp.qp.num_ineq() == 32);
    CHECK(is_strictly_convex(qp.qp));
  }
  CHECK(build_mpc_qp(s, 400, x).num_variables() == 80);
  CHECK_THROWS_AS(build_mpc_qp(s, 3, x), std::invalid_argument);
}

TEST_CASE("config validation") {
  auto g = build_trot_graph(GaitDirection::Forward, {0.1, 0}, 20);
  MpcConfig c;
  c.horizon = 6;
  CHECK_THROWS_AS(MpcSetup::make(c, g, LipParamsd{}, 0.08), std::invalid_argument);
  c = {};
  c.stage_state_weight(0, 0) = -1;
  CHECK_THROWS_AS(MpcSetup::make(c, g, LipParamsd{}, 0.08), std::invalid_argument);
  c = {};
  c.cop_weight(0, 1) = 0.5;
  CHECK_THROWS_AS(MpcSetup::make(c, g, LipParamsd{}, 0.08), std::invalid_argument);
}

TEST_CASE("reference trajectory") {
  const ReferencePolicy pol{80, 0.08};
  const LipStated a(0, 0, 0, 0), b(0.8, 0, 0.2, 0);
  CHECK(reference_trajectory(pol, a, b, 0, 0) == a);
  for (int i = 0; i <= 8; ++i) CHECK(reference_trajectory(pol, b, b, 16, i).head<1>() == b.head<1>());
  CHECK((reference_trajectory(pol, b, b, 16, 3) - b).norm() < 1e-15);
  // Midpoint of a pure-x translation with 8 samples remaining.
  const LipStated c(0.4, 0, 0, 0), d(0.8, 0, 0, 0);
  const auto mid = reference_trajectory(pol, c, d, 72, 4);
  CHECK(mid(0) == doctest::Approx(0.6));
  CHECK(mid(1) == doctest::Approx(0.4 / (8 * 0.08)));
  CHECK(reference_trajectory(pol, c, d, 72, 8) == d);
  CHECK(reference_trajectory(pol, c, d, 90, 1) == d);
}

TEST_CASE("zero-cost equilibrium and the origin anchor") {
  auto g = build_trot_graph(GaitDirection::InPlace, {0, 0}, 20);
  MpcConfig c;
  c.target = centroid_target(g);
  REQUIRE(c.target.norm() < 1e-15);
  const auto s = MpcSetup::make(c, g, LipParamsd{}, 0.08);
  for (long k : {0L, 4L, 40L, 76L, 120L}) {
    const auto r = solve_event(s, k, LipStated::Zero());
    for (const auto& u : r.law.controls) CHECK(u.norm() <= 1e-6);
    CHECK(r.solution.objective <= 1e-10);
  }

  // Target above a final-domain hull point away from the origin.
  auto g2 = build_trot_graph(GaitDirection::Forward, {0.1, 0}, 20);
  MpcConfig c2;
  const Eigen::Vector2d p = g2.final_centroid() + Eigen::Vector2d(0.1, -0.05);
  c2.target = equilibrium_state<double>(p);
  const auto s2 = MpcSetup::make(c2, g2, LipParamsd{}, 0.08);
  const auto r2 = solve_event(s2, 80, c2.target);
  CHECK(r2.solution.objective <= 1e-10);
  for (const auto& u : r2.solution.cop_sequence) CHECK((u - p).norm() <= 1e-6);
}

TEST_CASE("solution invariants along a rollout") {
  const auto s = trot_setup({0.07, 0.04});
  const auto cone = cone_halfspaces(s.params);
  LipStated x = rest_start(s);
  for (int m = 0; m < 25; ++m) {
    const auto r = solve_event(s, 4L * m, x);
    const auto& sol = r.solution;
    REQUIRE(sol.predicted_states.size() == 9);
    CHECK(max_recursion_error(s, sol) <= 1e-8);
    for (std::size_t i = 0; i < sol.lambda_sequence.size(); ++i) {
      const auto& l = sol.lambda_sequence[i];
      CHECK(l.minCoeff() >= -1e-8);
      CHECK(l.sum() == doctest::Approx(1.0).epsilon(1e-8));
      CHECK((cone_slack(cone, sol.predicted_states[i], sol.cop_sequence[i]).array() >= -1e-8).all());
    }
    REQUIRE(r.law.controls.size() == 4);
    x = downsample_map(s.lip, 4, [&](int, const LipStated&) { return r.law.controls; }, m, x);
  }
}

TEST_CASE("scaling every weight leaves the plan unchanged") {
  auto s = trot_setup({0.1, 0});
  const LipStated x = rest_start(s) + LipStated(0.02, 0.05, -0.01, 0);
  const auto a = solve_event(s, 8, x);
  s.config.terminal_weight *= 2;
  s.config.stage_state_weight *= 2;
  s.config.cop_weight *= 2;
  s.config.lambda_weight *= 2;
  const auto b = solve_event(s, 8, x);
  for (std::size_t i = 0; i < a.solution.cop_sequence.size(); ++i)
    CHECK((a.solution.cop_sequence[i] - b.solution.cop_sequence[i]).norm() < 1e-7);
}

TEST_CASE("closed-loop steering converges for forward and diagonal trots") {
  for (auto step : {Eigen::Vector2d(0.10, 0), Eigen::Vector2d(0.07, 0.04)}) {
    const auto s = trot_setup(step);
    const int events = 30;
    const auto t = rollout_closed_loop(s, rest_start(s), events);
    CHECK(t.solve_count == events);
    CHECK(t.solve_count == event_count(static_cast<long>(t.cops.size()), 4));
    REQUIRE(t.states.size() == static_cast<std::size_t>(events * 4 + 1));
    CHECK((t.states.back() - s.config.target).norm() < 1e-3);
    bool reached = false;
    for (int m = 0; m <= events && !reached; ++m) reached = (t.states[4 * m] - s.config.target).norm() < 1e-3;
    CHECK(reached);

    const auto cone = cone_halfspaces(s.params);
    LipStated x = t.states.front();
    for (std::size_t k = 0; k < t.cops.size(); ++k) {
      CHECK(hull_membership(s.graph.at_sample(static_cast<long>(k)), t.cops[k], 1e-7).inside);
      CHECK((cone_slack(cone, t.states[k], t.cops[k]).array() >= -1e-8).all());
      x = lip_step(s.lip, x, t.cops[k]);
      CHECK((x - t.states[k + 1]).norm() == 0);
    }
  }
}

TEST_CASE("equilibrium start stays put") {
  auto g = build_trot_graph(GaitDirection::InPlace, {0, 0}, 20);
  MpcConfig c;
  c.target = centroid_target(g);  // the diagonals cross here, so every domain can hold it
  const auto s = MpcSetup::make(c, g, LipParamsd{}, 0.08);
  const auto t = rollout_closed_loop(s, s.config.target, 24);
  for (const auto& x : t.states) CHECK((x - s.config.target).norm() < 1e-6);
}

TEST_CASE("downsample map") {
  const auto s = trot_setup({0.1, 0});
  const auto t = rollout_closed_loop(s, rest_start(s), 6);
  LipStated x = t.states.front();
  for (int m = 0; m < 6; ++m) {
    x = downsample_map(s, m, t.states[static_cast<std::size_t>(4 * m)]);
    CHECK((x - t.states[static_cast<std::size_t>(4 * (m + 1))]).norm() < 1e-10);
  }
  CHECK((downsample_map(s, 20, s.config.target) - s.config.target).norm() < 1e-8);

  const LawFn zero = [](int, const LipStated&) { return std::vector<Eigen::Vector2d>(4, Eigen::Vector2d::Zero()); };
  const LipStated y(0.01, -0.02, 0.03, 0.0);
  Eigen::Matrix4d a4 = Eigen::Matrix4d::Identity();
  for (int j = 0; j < 4; ++j) a4 = s.lip.a_mat * a4;
  CHECK((downsample_map(s.lip, 4, zero, 0, y) - a4 * y).norm() < 1e-15);
}

TEST_CASE("infeasibility surfaces with the event sample") {
  auto g = build_trot_graph(GaitDirection::Forward, {0.1, 0}, 20);
  MpcConfig c;
  c.target = centroid_target(g);
  LipParamsd p;
  p.friction_coeff = 0.01;
  const auto s = MpcSetup::make(c, g, p, 0.08);
  const LipStated far(2.0, 3.0, 0.0, 0.0);
  try {
    solve_event(s, 12, far);
    FAIL("expected MpcInfeasible");
  } catch (const MpcInfeasible& e) {
    CHECK(e.event_sample() == 12);
  }
}

TEST_CASE("rollout csv") {
  const auto s = trot_setup({0.1, 0});
  const auto t = rollout_closed_loop(s, rest_start(s), 2);
  std::ostringstream os;
  write_rollout_csv(t, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "k,zeta,r_x,rdot_x,r_y,rdot_y,u_x,u_y,solve_flag");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 9);
}
