#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "hloco/qp.hpp"
#include "hloco/qp_io.hpp"
#include "support/random_qp.hpp"

using namespace hloco;

namespace {

QpProblemd scalar_bound_problem() {
  // minimize 1/2 x^2 subject to x >= 1, written as -x <= -1.
  QpProblemd p = QpProblemd::unconstrained(1);
  p.hessian(0, 0) = 1;
  p.ineq_matrix = Eigen::MatrixXd::Constant(1, 1, -1.0);
  p.ineq_rhs = Eigen::VectorXd::Constant(1, -1.0);
  return p;
}

}  // namespace

TEST_CASE("single active constraint") {
  const auto p = scalar_bound_problem();
  const auto s = solve_qp(p);
  REQUIRE(s.status == QpStatus::Optimal);
  CHECK(s.x_star(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.ineq_duals(0) == doctest::Approx(1.0).epsilon(1e-8));
  const auto r = kkt_residual(p, s.x_star, s.duals());
  CHECK(r.max() <= 1e-8);

  QpDualsd exact{Eigen::VectorXd(0), Eigen::VectorXd::Constant(1, 1.0), {}, {}};
  CHECK(kkt_residual(p, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 1.0)), exact).max() <= 1e-10);

  const auto o = active_set_oracle(p);
  REQUIRE(o.optimal());
  CHECK(o.x_star(0) == doctest::Approx(1.0));
}

TEST_CASE("unconstrained identity hessian returns c") {
  QpProblemd p = QpProblemd::unconstrained(3);
  p.hessian.setIdentity();
  const Eigen::Vector3d c(1.5, -2.0, 0.25);
  p.linear_cost = -c;
  const auto s = solve_qp(p);
  REQUIRE(s.optimal());
  CHECK((s.x_star - c).norm() < 1e-10);
}

TEST_CASE("equality-only oracle equals the KKT linear solve") {
  std::mt19937 rng(3);
  auto p = testing::random_feasible_qp(rng, 5, 0, 2);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(7, 7);
  k.topLeftCorner(5, 5) = p.hessian;
  k.topRightCorner(5, 2) = p.eq_matrix.transpose();
  k.bottomLeftCorner(2, 5) = p.eq_matrix;
  Eigen::VectorXd rhs(7);
  rhs << -p.linear_cost, p.eq_rhs;
  const Eigen::VectorXd sol = k.fullPivLu().solve(rhs);
  const auto o = active_set_oracle(p);
  REQUIRE(o.optimal());
  CHECK((o.x_star - sol.head(5)).norm() < 1e-10);
  const auto s = solve_qp(p);
  REQUIRE(s.optimal());
  CHECK((s.x_star - sol.head(5)).norm() < 1e-8);
}

TEST_CASE("perturbing the optimum raises stationarity") {
  std::mt19937 rng(11);
  const auto p = testing::random_feasible_qp(rng, 4, 3);
  const auto s = solve_qp(p);
  REQUIRE(s.optimal());
  Eigen::VectorXd x = s.x_star;
  x(0) += 1e-3;
  CHECK(kkt_residual(p, x, s.duals()).stationarity > 0);
}

TEST_CASE("random QPs agree with the active-set oracle") {
  std::mt19937 rng(20240601);
  std::uniform_int_distribution<int> nd(2, 8), md(0, 6), ed(0, 1);
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const int n = nd(rng);
    const int mi = md(rng);
    const int me = std::min(ed(rng), n - 1);
    const auto p = testing::random_feasible_qp(rng, n, mi, me, trial % 5 == 0 && 2 * n + mi <= 20);
    const auto s = solve_qp(p);
    const auto o = active_set_oracle(p);
    REQUIRE(o.optimal());
    REQUIRE_MESSAGE(s.optimal(), "trial " << trial);
    CHECK((s.x_star - o.x_star).norm() <= 1e-8 * std::max(1.0, o.x_star.norm()));
    CHECK(s.kkt.max() <= 1e-8);
    CHECK(kkt_residual(p, o.x_star, o.duals()).max() <= 1e-8);
    if (mi > 0) CHECK(s.ineq_duals.minCoeff() >= 0);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("cost scaling leaves the minimizer unchanged") {
  std::mt19937 rng(7);
  for (int t = 0; t < 20; ++t) {
    auto p = testing::random_feasible_qp(rng, 6, 4);
    const auto a = solve_qp(p);
    p.hessian *= 37.5;
    p.linear_cost *= 37.5;
    const auto b = solve_qp(p);
    REQUIRE(a.optimal());
    REQUIRE(b.optimal());
    CHECK((a.x_star - b.x_star).norm() < 1e-8);
  }
}

TEST_CASE("box bounds") {
  QpProblemd p = QpProblemd::unconstrained(2);
  p.hessian.setIdentity();
  p.linear_cost = Eigen::Vector2d(-4, 4);
  p.lower = Eigen::Vector2d(-1, -1);
  p.upper = Eigen::Vector2d(1, 1);
  const auto s = solve_qp(p);
  REQUIRE(s.optimal());
  CHECK((s.x_star - Eigen::Vector2d(1, -1)).norm() < 1e-8);
  CHECK(s.upper_duals(0) == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(s.lower_duals(1) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("infeasible problems are detected") {
  QpProblemd p = QpProblemd::unconstrained(1);
  p.ineq_matrix = Eigen::MatrixXd(2, 1);
  p.ineq_matrix << 1, -1;
  p.ineq_rhs = Eigen::Vector2d(-1, -1);  // x <= -1 and x >= 1
  CHECK(solve_qp(p).status == QpStatus::Infeasible);
  CHECK(active_set_oracle(p).status == QpStatus::Infeasible);

  QpProblemd q = QpProblemd::unconstrained(2);
  q.eq_matrix = Eigen::MatrixXd(1, 2);
  q.eq_matrix << 1, 1;
  q.eq_rhs = Eigen::VectorXd::Constant(1, 5.0);
  q.lower = Eigen::Vector2d(0, 0);
  q.upper = Eigen::Vector2d(1, 1);
  CHECK(solve_qp(q).status == QpStatus::Infeasible);
}

TEST_CASE("validation rejects malformed problems") {
  QpProblemd p = QpProblemd::unconstrained(2);
  p.hessian(0, 1) = 1.0;
  CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
  QpProblemd q = QpProblemd::unconstrained(2);
  q.linear_cost = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(solve_qp(q), std::invalid_argument);
  QpSettings bad;
  bad.tol = 0;
  CHECK_THROWS_AS(solve_qp(QpProblemd::unconstrained(1), bad), std::invalid_argument);
  std::mt19937 rng(1);
  CHECK_THROWS_AS(active_set_oracle(testing::random_feasible_qp(rng, 3, 21)), std::invalid_argument);
}

TEST_CASE("strict convexity flag") {
  QpProblemd p = QpProblemd::unconstrained(2);
  p.hessian.setIdentity();
  CHECK(is_strictly_convex(p));
  p.hessian(1, 1) = 0;
  CHECK_FALSE(is_strictly_convex(p));
}

TEST_CASE("json round trip") {
  std::mt19937 rng(5);
  auto p = testing::random_feasible_qp(rng, 3, 2, 1, true);
  (*p.lower)(1) = -std::numeric_limits<double>::infinity();
  const auto path = std::filesystem::temp_directory_path() / "hloco_qp_roundtrip.json";
  write_qp_json(p, path);
  const auto q = read_qp_json(path);
  std::filesystem::remove(path);
  CHECK(q.hessian == p.hessian);
  CHECK(q.linear_cost == p.linear_cost);
  CHECK(q.eq_matrix == p.eq_matrix);
  CHECK(q.ineq_rhs == p.ineq_rhs);
  REQUIRE(q.lower.has_value());
  CHECK(std::isinf((*q.lower)(1)));
  CHECK(*q.upper == *p.upper);
}
