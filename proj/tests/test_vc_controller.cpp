#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hloco/vc_controller.hpp"

using namespace hloco;

namespace {

std::array<Eigen::Vector2d, 4> nominal_feet() {
  StanceGeometry g;
  std::array<Eigen::Vector2d, 4> f;
  for (auto c : kAllContacts) f[index_of(c)] = g.corner(c);
  return f;
}

BezierCurved constant_curve(const Eigen::VectorXd& v, int degree) {
  BezierCurved c;
  c.coeff = v.replicate(1, degree + 1);
  return c;
}

// Reference that the given state satisfies exactly (at rest).
DomainReference reference_at(const RobotModel& m, const FullState& s, const std::vector<ContactId>& swing) {
  const auto k = kinematics(m, s);
  DomainReference ref;
  ref.com_xy = constant_curve(k.com.head<2>(), 4);
  ref.com_height = k.com.z();
  ref.attitude = s.rpy();
  for (auto leg : swing) ref.swing.emplace_back(leg, constant_curve(k.foot_position[index_of(leg)], 5));
  return ref;
}

const std::vector<ContactId> kAll(kAllContacts.begin(), kAllContacts.end());

}  // namespace

TEST_CASE("phasing variable") {
  CHECK(phasing(1.0, 1.0, 4, 0.08) == 0.0);
  CHECK(phasing(1.0 + 4 * 0.08, 1.0, 4, 0.08) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(phasing(0.16, 0.0, 4, 0.08) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(phasing(5.0, 0.0, 4, 0.08) == 1.0);
  CHECK_THROWS_AS(phasing(0.0, 1.0, 4, 0.08), std::invalid_argument);
  CHECK_THROWS_AS(phasing(1.0, 0.0, 0, 0.08), std::invalid_argument);
}

TEST_CASE("Bezier evaluation and derivatives") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  BezierCurved c;
  c.coeff = Eigen::MatrixXd::NullaryExpr(3, 6, [&] { return u(rng); });
  CHECK((c.eval(0) - c.coeff.col(0)).norm() <= 1e-15);
  CHECK((c.eval(1) - c.coeff.col(5)).norm() <= 1e-15);
  const double h = 1e-5;
  for (double s : {0.1, 0.37, 0.5, 0.9}) {
    CHECK((c.eval(s, 1) - (c.eval(s + h) - c.eval(s - h)) / (2 * h)).norm() <= 1e-8);
    CHECK((c.eval(s, 2) - (c.eval(s + h, 1) - c.eval(s - h, 1)) / (2 * h)).norm() <= 1e-7);
  }
  CHECK(c.eval(0.3, 6).norm() == 0.0);

  BezierCurve<float> cf;
  cf.coeff = c.coeff.cast<float>();
  CHECK((cf.eval(0.4f).cast<double>() - c.eval(0.4)).norm() <= 1e-5);
}

TEST_CASE("Bezier least-squares fitting") {
  const Eigen::VectorXd grid = uniform_phase_grid(4);
  // Straight line is reproduced with zero residual.
  Eigen::MatrixXd line(2, 5);
  for (int j = 0; j < 5; ++j) line.col(j) << 0.1 + 0.3 * grid(j), -0.2 * grid(j);
  for (int deg : {1, 2, 3}) {
    const auto fit = fit_bezier(line, grid, deg);
    CHECK(fit.residual.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK_FALSE(fit.underdetermined);
  }
  // Five samples, degree four: exact interpolation.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1, 1);
  const Eigen::MatrixXd pts = Eigen::MatrixXd::NullaryExpr(2, 5, [&] { return u(rng); });
  const auto fit = fit_bezier(pts, grid, 4);
  CHECK(fit.residual.cwiseAbs().maxCoeff() <= 1e-10);
  for (int j = 0; j < 5; ++j) CHECK((fit.curve.eval(grid(j)) - pts.col(j)).norm() <= 1e-10);
  // Constant samples give constant control points.
  const auto cfit = fit_bezier(Eigen::MatrixXd::Constant(1, 5, 0.7), grid, 4);
  CHECK((cfit.curve.coeff.array() - 0.7).abs().maxCoeff() <= 1e-12);
  // Underdetermined: minimum-norm, still interpolating.
  const Eigen::VectorXd g3 = uniform_phase_grid(2);
  const auto under = fit_bezier(pts.leftCols(3), g3, 5);
  CHECK(under.underdetermined);
  CHECK(under.residual.cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(fit_bezier(pts, uniform_phase_grid(3), 2), std::invalid_argument);
}

TEST_CASE("swing reference shape") {
  const Eigen::Vector2d a(0.25, 0.15), b(0.35, 0.15);
  const auto c = swing_reference(a, b, 0.08);
  CHECK(c.degree() == 5);
  CHECK((c.eval(0) - Eigen::Vector3d(a.x(), a.y(), 0)).norm() <= 1e-15);
  CHECK((c.eval(1) - Eigen::Vector3d(b.x(), b.y(), 0)).norm() <= 1e-15);
  CHECK(c.eval(1, 1).norm() <= 1e-10);
  CHECK(std::abs(c.eval(0, 1)(2)) <= 1e-10);
  CHECK(c.eval(0.5)(2) == doctest::Approx(0.08).epsilon(1e-14));
  double zmax = 0, arg = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double s = i / 1000.0, z = c.eval(s)(2);
    if (z > zmax) zmax = z, arg = s;
  }
  CHECK(arg == doctest::Approx(0.5));
  CHECK(zmax == doctest::Approx(0.08).epsilon(1e-12));

  const auto same = swing_reference(a, a, 0.05);
  for (double s : {0.0, 0.3, 0.5, 0.8, 1.0}) CHECK((same.eval(s).head<2>() - a).norm() <= 1e-15);
  CHECK_THROWS_AS(swing_reference(a, b, 0.0), std::invalid_argument);
}

TEST_CASE("output dimensions and low-level decision counts") {
  const auto quad = make_output_spec({});
  const auto dbl = make_output_spec({ContactId::FrontRight, ContactId::RearLeft});
  CHECK(quad.dim() == 6);
  CHECK(dbl.dim() == 12);
  CHECK(lowlevel_decision_count(kNumActuated, 4, quad.dim()) == 30);
  CHECK(lowlevel_decision_count(kNumActuated, 2, dbl.dim()) == 30);
  // 16 actuators and three arm outputs.
  CHECK(lowlevel_decision_count(16, 4, 6 + 3) == 37);
  CHECK(lowlevel_decision_count(16, 2, 6 + 3 + 6) == 37);

  const auto m = default_quadruped();
  const auto s = standing_pose(m, nominal_feet(), 0.5);
  for (const auto& [spec, contacts] :
       {std::pair{quad, kAll}, std::pair{dbl, std::vector<ContactId>{ContactId::FrontLeft, ContactId::RearRight}}}) {
    const auto ref = reference_at(m, s, spec.swing);
    auto out = compute_outputs(m, s, spec, ref, 0.3, 1 / 0.32);
    out.y.setZero();
    out.ydot.setZero();
    const auto ll = build_lowlevel_qp(m, s, out, Gains::uniform(spec.dim()), {}, contacts);
    CHECK(ll.num_variables() == 30);
    CHECK(ll.v_pd.norm() == 0.0);
  }
}

TEST_CASE("outputs vanish on the reference and linearize correctly") {
  const auto m = default_quadruped();
  const auto spec = make_output_spec({ContactId::FrontLeft, ContactId::RearRight});
  auto s = standing_pose(m, nominal_feet(), 0.5);
  const auto ref = reference_at(m, s, spec.swing);
  const auto out = compute_outputs(m, s, spec, ref, 0.4, 1 / 0.32);
  CHECK(out.y.norm() <= 1e-14);
  CHECK(out.ydot.norm() <= 1e-14);

  // First-order response to a joint perturbation.
  const double delta = 1e-6;
  for (int i = 0; i < kNumDof; ++i) {
    FullState p = s;
    p.q(i) += delta;
    const auto op = compute_outputs(m, p, spec, ref, 0.4, 1 / 0.32);
    CHECK((op.y - out.y - out.jacobian.col(i) * delta).norm() <= 1e-10);
  }

  DomainReference bad = ref;
  bad.swing.pop_back();
  CHECK_THROWS_AS(compute_outputs(m, s, spec, bad, 0.4, 1.0), std::invalid_argument);
}

TEST_CASE("output acceleration terms match time differentiation") {
  // yddot = J qddot + bias along q(t) = q + t qd + t^2/2 qdd, s(t) = s + t sdot.
  const auto m = default_quadruped();
  const auto spec = make_output_spec({ContactId::FrontRight, ContactId::RearLeft});
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1, 1);
  auto s0 = standing_pose(m, nominal_feet(), 0.5);
  for (int i = 0; i < kNumDof; ++i) s0.qdot(i) = 0.5 * u(rng);
  Vector18d qdd;
  for (int i = 0; i < kNumDof; ++i) qdd(i) = u(rng);
  DomainReference ref;
  ref.com_xy.coeff = Eigen::MatrixXd::NullaryExpr(2, 5, [&] { return 0.1 * u(rng); });
  ref.swing.emplace_back(ContactId::FrontRight, swing_reference({0.25, -0.15}, {0.35, -0.15}, 0.08));
  ref.swing.emplace_back(ContactId::RearLeft, swing_reference({-0.25, 0.15}, {-0.15, 0.15}, 0.08));
  const double phase = 0.35, rate = 1 / 0.32, h = 1e-5;
  auto at = [&](double t) {
    FullState x = s0;
    x.q = s0.q + t * s0.qdot + 0.5 * t * t * qdd;
    x.qdot = s0.qdot + t * qdd;
    return compute_outputs(m, x, spec, ref, phase + t * rate, rate);
  };
  const auto mid = at(0);
  const Eigen::VectorXd fd = (at(h).ydot - at(-h).ydot) / (2 * h);
  CHECK((fd - (mid.jacobian * qdd + mid.bias)).cwiseAbs().maxCoeff() <= 1e-5);
  const Eigen::VectorXd fd_y = (at(h).y - at(-h).y) / (2 * h);
  CHECK((fd_y - mid.ydot).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("static stand returns gravity-compensation torques") {
  const auto m = default_quadruped();
  const auto spec = make_output_spec({});
  const auto s = standing_pose(m, nominal_feet(), 0.5);
  const auto out = compute_outputs(m, s, spec, reference_at(m, s, {}), 0.5, 1 / 0.32);
  const LowLevelQpConfig cfg;
  const auto r = control_step(m, s, out, Gains::uniform(6), cfg, kAll, 0.0);

  // Oracle: minimum-norm tau with Upsilon tau + J' F = H (F unpenalized).
  const auto blk = contact_block(kinematics(m, s), kAll);
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(24 + kNumDof, 24 + kNumDof);
  kkt.topLeftCorner(12, 12).setIdentity();
  Eigen::MatrixXd a(kNumDof, 24);
  a << input_matrix(), blk.jacobian.transpose();
  kkt.topRightCorner(24, kNumDof) = a.transpose();
  kkt.bottomLeftCorner(kNumDof, 24) = a;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(24 + kNumDof);
  rhs.tail(kNumDof) = bias_forces(m, s.q, s.qdot);
  const Eigen::VectorXd oracle = kkt.fullPivLu().solve(rhs);
  CHECK((r.tau - oracle.head(12)).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(r.defect_norm <= 1e-4);
  // Newton: the COM height channel accelerates by its defect.
  CHECK(std::abs(r.forces.row(2).sum() - m.total_mass() * (9.81 + r.defect(5))) <= 1e-6);
  CHECK(std::abs(r.forces.row(2).sum() - m.total_mass() * 9.81) <= 1e-3);
  CHECK(r.max_pyramid_violation <= 1e-9);

  // Applied through the simulator's contact solve.
  const auto cd = constrained_forward_dynamics(m, s, r.tau, kAll);
  CHECK(cd.acceleration_residual <= 1e-8);
  CHECK(cd.qddot.cwiseAbs().maxCoeff() <= 1e-4);
  CHECK((cd.forces - r.forces).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("tight torque limits on near-frictionless ground make the low-level QP infeasible") {
  auto m = default_quadruped();
  const auto spec = make_output_spec({});
  const auto s = standing_pose(m, nominal_feet(), 0.5);
  m.torque_max.setConstant(0.5);
  m.torque_min.setConstant(-0.5);
  const auto out = compute_outputs(m, s, spec, reference_at(m, s, {}), 0.0, 1.0);
  try {
    // Stance rows cannot be met with |tau| <= 0.5 and |F_xy| <= 1e-3 F_z.
    control_step(m, s, out, Gains::uniform(6), LowLevelQpConfig{1e7, 1e-3, {1e-9, 100}}, kAll, 1.25);
    FAIL("expected ControllerFailure");
  } catch (const ControllerFailure& e) {
    CHECK(e.time() == 1.25);
    CHECK(e.status() != QpStatus::Optimal);
  }
}

TEST_CASE("tight torque limits alone stay feasible through the output defect") {
  auto m = default_quadruped();
  const auto spec = make_output_spec({});
  const auto s = standing_pose(m, nominal_feet(), 0.5);
  m.torque_max.setConstant(0.5);
  m.torque_min.setConstant(-0.5);
  const auto out = compute_outputs(m, s, spec, reference_at(m, s, {}), 0.0, 1.0);
  const auto r = control_step(m, s, out, Gains::uniform(6), {}, kAll, 0.0);
  CHECK(r.tau.cwiseAbs().maxCoeff() <= 0.5 + 1e-8);
  // The torso cannot be held: the defect carries most of gravity on COM z.
  CHECK(r.defect(5) < -5.0);
}

TEST_CASE("configuration validation") {
  LowLevelQpConfig cfg;
  cfg.defect_weight = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  auto g = Gains::uniform(6);
  CHECK_NOTHROW(g.validate(6));
  CHECK_THROWS_AS(g.validate(12), std::invalid_argument);
  g.kd(2) = 0;
  CHECK_THROWS_AS(g.validate(6), std::invalid_argument);
}

TEST_CASE("pyramid violation measure") {
  Eigen::Matrix3Xd f(3, 2);
  f << 1, -2, 0.5, 0, 10, 10;
  CHECK(pyramid_violation(f, 0.4) == 0.0);
  f(0, 1) = -5;
  CHECK(pyramid_violation(f, 0.4) == doctest::Approx(1.0));
  f(2, 0) = -1;
  CHECK(pyramid_violation(f, 0.4) >= 1.0);
}

TEST_CASE("quadruple-stance hold follows the output envelope") {
  const auto m = default_quadruped();
  const auto spec = make_output_spec({});
  auto s = standing_pose(m, nominal_feet(), 0.5);
  auto ref = reference_at(m, s, {});
  ref.com_xy.coeff.row(0).array() += 0.01;
  ref.com_height -= 0.01;
  ref.attitude(1) = 0.02;
  const Gains gains = Gains::uniform(6);
  const LowLevelQpConfig cfg;
  ContactMode mode;
  mode.feet = kAll;

  const auto y0 = compute_outputs(m, s, spec, ref, 0, 0);
  const Eigen::VectorXd e0 = y0.y, de0 = y0.ydot;
  const double dt = 1e-3;
  double worst_ratio = 0, max_defect = 0;
  for (int i = 0; i <= 1000; ++i) {
    const double t = i * dt;
    const auto out = compute_outputs(m, s, spec, ref, 0, 0);
    // Critically damped at 10 rad/s: y(t) = (y0 + (ydot0 + 10 y0) t) e^(-10 t).
    const Eigen::VectorXd env = ((e0 + (de0 + 10 * e0) * t) * std::exp(-10 * t)).cwiseAbs();
    if (t > 0) worst_ratio = std::max(worst_ratio, out.y.norm() / (env.norm() + 1e-4));
    const auto r = control_step(m, s, out, gains, cfg, kAll, t);
    REQUIRE(r.max_pyramid_violation <= 1e-9);
    max_defect = std::max(max_defect, r.defect_norm);
    const auto step = integrate_step(m, s, r.tau, mode, dt);
    REQUIRE(step.acceleration_residual <= 1e-8);
    s = step.state;
  }
  CHECK(worst_ratio <= 1.2);
  CHECK(max_defect <= 1e-3);
  CHECK(compute_outputs(m, s, spec, ref, 0, 0).y.norm() <= 1e-4);
}

TEST_CASE("PD homogeneous response matches an integrated ODE") {
  for (const auto& [kp, kd] : {std::pair{100.0, 20.0}, std::pair{100.0, 30.0}, std::pair{25.0, 10.0}}) {
    for (const auto& [y0, v0] : {std::pair{1.0, 0.0}, std::pair{0.0, 1.0}, std::pair{-0.3, 2.0}}) {
      Eigen::Vector2d x(y0, v0);
      auto f = [&](const Eigen::Vector2d& z) { return Eigen::Vector2d(z(1), -kp * z(0) - kd * z(1)); };
      const double h = 1e-4;
      for (int i = 1; i <= 5000; ++i) {
        const Eigen::Vector2d k1 = f(x), k2 = f(x + h / 2 * k1), k3 = f(x + h / 2 * k2), k4 = f(x + h * k3);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        if (i % 500 == 0) {
          const auto r = pd_response(kp, kd, i * h);
          CHECK(std::abs(r.phi_y * y0 + r.phi_ydot * v0 - x(0)) <= 1e-10);
        }
      }
    }
  }
  CHECK_THROWS_AS(pd_response(100, 5, 0.1), std::invalid_argument);
}

TEST_CASE("diagnostics CSV layout") {
  std::ostringstream os;
  write_diagnostics_header(os);
  DiagnosticsRow row;
  row.t = 0.001;
  row.zeta = 3;
  write_diagnostics_row(os, row);
  std::istringstream in(os.str());
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  auto count = [](const std::string& x) { return std::count(x.begin(), x.end(), ',') + 1; };
  CHECK(count(header) == 6 + 12 + 12 + 1);
  CHECK(count(line) == count(header));
  CHECK(header.rfind("t,s,zeta,y_norm,ydot_norm,omega_norm,tau_1", 0) == 0);
}
