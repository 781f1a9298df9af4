#include "hloco/vc_controller.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hloco {

Eigen::MatrixXd bernstein_matrix(const Eigen::VectorXd& s_grid, int degree) {
  if (degree < 0) throw std::invalid_argument("bernstein_matrix: negative degree");
  Eigen::MatrixXd b(s_grid.size(), degree + 1);
  for (Eigen::Index r = 0; r < s_grid.size(); ++r) {
    const double s = s_grid(r);
    for (int i = 0; i <= degree; ++i) b(r, i) = binomial(degree, i) * std::pow(s, i) * std::pow(1 - s, degree - i);
  }
  return b;
}

BezierFit fit_bezier(const Eigen::MatrixXd& samples, const Eigen::VectorXd& s_grid, int degree) {
  if (samples.cols() != s_grid.size()) throw std::invalid_argument("fit_bezier: sample count and grid differ");
  if (samples.cols() < 2) throw std::invalid_argument("fit_bezier: need at least two samples");
  if (degree < 0) throw std::invalid_argument("fit_bezier: negative degree");
  const Eigen::MatrixXd b = bernstein_matrix(s_grid, degree);
  BezierFit fit;
  fit.underdetermined = degree + 1 > samples.cols();
  // Minimum-norm least squares: B alpha' = Y'.
  fit.curve.coeff = b.completeOrthogonalDecomposition().solve(samples.transpose()).transpose();
  fit.residual = samples - fit.curve.coeff * b.transpose();
  return fit;
}

Eigen::VectorXd uniform_phase_grid(int intervals) {
  if (intervals < 1) throw std::invalid_argument("uniform_phase_grid: need at least one interval");
  return Eigen::VectorXd::LinSpaced(intervals + 1, 0.0, 1.0);
}

BezierCurved swing_reference(const Eigen::Vector2d& prev, const Eigen::Vector2d& next, double apex_height,
                             double ground) {
  if (!(apex_height > 0)) throw std::invalid_argument("swing_reference: apex height must be positive");
  BezierCurved c;
  c.coeff.resize(3, 6);
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector2d& p = i < 3 ? prev : next;
    c.coeff.col(i) << p.x(), p.y(), ground;
  }
  // 10 s^2 (1 - s)^2 c peaks at s = 1/2 with value 0.625 c.
  c.coeff(2, 2) += 1.6 * apex_height;
  c.coeff(2, 3) += 1.6 * apex_height;
  return c;
}

double phasing(double t, double t_plus, int grid_count, double sample_time) {
  if (t < t_plus) throw std::invalid_argument("phasing: t precedes the domain start");
  if (grid_count < 1 || !(sample_time > 0)) throw std::invalid_argument("phasing: invalid domain duration");
  return std::clamp((t - t_plus) / (grid_count * sample_time), 0.0, 1.0);
}

OutputSpec make_output_spec(const std::vector<ContactId>& swing_legs) {
  OutputSpec spec;
  spec.swing = swing_legs;
  spec.channels = {{OutputSource::Roll, std::nullopt, "roll"},   {OutputSource::Pitch, std::nullopt, "pitch"},
                   {OutputSource::Yaw, std::nullopt, "yaw"},     {OutputSource::ComX, std::nullopt, "com_x"},
                   {OutputSource::ComY, std::nullopt, "com_y"},  {OutputSource::ComZ, std::nullopt, "com_z"}};
  for (auto leg : swing_legs) {
    const std::string n = short_name(leg);
    spec.channels.push_back({OutputSource::FootX, leg, n + "_x"});
    spec.channels.push_back({OutputSource::FootY, leg, n + "_y"});
    spec.channels.push_back({OutputSource::FootZ, leg, n + "_z"});
  }
  return spec;
}

namespace {

int axis_of(OutputSource s) {
  switch (s) {
    case OutputSource::Roll:
    case OutputSource::ComX:
    case OutputSource::FootX: return 0;
    case OutputSource::Pitch:
    case OutputSource::ComY:
    case OutputSource::FootY: return 1;
    default: return 2;
  }
}

bool is_attitude(OutputSource s) {
  return s == OutputSource::Roll || s == OutputSource::Pitch || s == OutputSource::Yaw;
}
bool is_com(OutputSource s) { return s == OutputSource::ComX || s == OutputSource::ComY || s == OutputSource::ComZ; }

const BezierCurved& swing_curve(const DomainReference& ref, ContactId leg) {
  for (const auto& [id, curve] : ref.swing)
    if (id == leg) return curve;
  throw std::invalid_argument(std::string("domain reference has no swing curve for ") + short_name(leg));
}

}  // namespace

Eigen::VectorXd output_values(const Kinematics& kin, const FullState& state, const OutputSpec& spec) {
  Eigen::VectorXd h(spec.dim());
  for (int i = 0; i < spec.dim(); ++i) {
    const auto& ch = spec.channels[static_cast<std::size_t>(i)];
    const int a = axis_of(ch.source);
    if (is_attitude(ch.source))
      h(i) = state.q(3 + a);
    else if (is_com(ch.source))
      h(i) = kin.com(a);
    else
      h(i) = kin.foot_position[index_of(*ch.foot)](a);
  }
  return h;
}

OutputEval compute_outputs(const RobotModel& model, const FullState& state, const OutputSpec& spec,
                           const DomainReference& ref, double s, double s_rate) {
  const Kinematics kin = kinematics(model, state);
  const int n = spec.dim();
  OutputEval out;
  out.jacobian = Eigen::MatrixXd::Zero(n, kNumDof);
  out.bias.resize(n);
  out.desired.resize(n);
  Eigen::VectorXd hd_rate(n), hd_acc(n);

  const Eigen::VectorXd com_p = ref.com_xy.eval(s), com_v = ref.com_xy.eval(s, 1), com_a = ref.com_xy.eval(s, 2);
  for (int i = 0; i < n; ++i) {
    const auto& ch = spec.channels[static_cast<std::size_t>(i)];
    const int a = axis_of(ch.source);
    if (is_attitude(ch.source)) {
      out.jacobian(i, 3 + a) = 1;
      out.bias(i) = 0;
      out.desired(i) = ref.attitude(a);
      hd_rate(i) = hd_acc(i) = 0;
    } else if (is_com(ch.source)) {
      out.jacobian.row(i) = kin.com_jacobian.row(a);
      out.bias(i) = kin.com_drift(a);
      if (a < 2) {
        out.desired(i) = com_p(a);
        hd_rate(i) = com_v(a);
        hd_acc(i) = com_a(a);
      } else {
        out.desired(i) = ref.com_height;
        hd_rate(i) = hd_acc(i) = 0;
      }
    } else {
      const int l = index_of(*ch.foot);
      const auto& curve = swing_curve(ref, *ch.foot);
      out.jacobian.row(i) = kin.foot_jacobian[l].row(a);
      out.bias(i) = kin.foot_drift[l](a);
      out.desired(i) = curve.eval(s)(a);
      hd_rate(i) = curve.eval(s, 1)(a);
      hd_acc(i) = curve.eval(s, 2)(a);
    }
  }
  out.y = output_values(kin, state, spec) - out.desired;
  out.ydot = out.jacobian * state.qdot - hd_rate * s_rate;
  out.bias -= hd_acc * (s_rate * s_rate);
  return out;
}

Gains Gains::uniform(int dim, double kp, double kd) {
  Gains g;
  g.kp = Eigen::VectorXd::Constant(dim, kp);
  g.kd = Eigen::VectorXd::Constant(dim, kd);
  return g;
}

void Gains::validate(int dim) const {
  if (kp.size() != dim || kd.size() != dim) throw std::invalid_argument("Gains: size does not match the outputs");
  if ((kp.array() <= 0).any() || (kd.array() <= 0).any())
    throw std::invalid_argument("Gains: entries must be positive");
}

void LowLevelQpConfig::validate() const {
  if (!(defect_weight > 0)) throw std::invalid_argument("LowLevelQpConfig: defect weight must be positive");
  if (!(friction_coeff > 0)) throw std::invalid_argument("LowLevelQpConfig: friction coefficient must be positive");
}

LowLevelQp build_lowlevel_qp(const RobotModel& model, const FullState& state, const OutputEval& outputs,
                             const Gains& gains, const LowLevelQpConfig& cfg, const std::vector<ContactId>& contacts,
                             double gravity, const StanceHold* hold) {
  cfg.validate();
  if (hold && (hold->anchors.cols() != static_cast<Eigen::Index>(contacts.size()) || hold->kp < 0 || hold->kd < 0))
    throw std::invalid_argument("build_lowlevel_qp: stance hold needs one anchor per contact and nonnegative gains");
  const int ny = static_cast<int>(outputs.y.size());
  gains.validate(ny);
  const int nc = static_cast<int>(contacts.size());
  const int nf = 3 * nc;

  LowLevelQp out;
  out.num_contacts = nc;
  out.output_dim = ny;
  out.tau_offset = 0;
  out.force_offset = kNumActuated;
  out.defect_offset = kNumActuated + nf;
  const int nz = lowlevel_decision_count(kNumActuated, nc, ny);

  const Kinematics kin = kinematics(model, state);
  const ContactBlock blk = contact_block(kin, contacts);
  const Matrix18d d = mass_matrix(model, state.q);
  const Vector18d h = bias_forces(model, state.q, state.qdot, gravity);
  const Eigen::LDLT<Matrix18d> ldlt(d);
  const Eigen::Matrix<double, kNumDof, kNumActuated> dinv_u = ldlt.solve(input_matrix());
  const Eigen::MatrixXd dinv_jt = ldlt.solve(blk.jacobian.transpose());
  const Vector18d dinv_h = ldlt.solve(h);

  out.v_pd = -(gains.kp.array() * outputs.y.array() + gains.kd.array() * outputs.ydot.array()).matrix();

  auto& qp = out.qp;
  qp = QpProblemd::unconstrained(nz);
  qp.hessian.diagonal().head(kNumActuated).setOnes();
  // omega is carried as sqrt(gamma) omega so every weighted block is unit.
  out.defect_scale = 1 / std::sqrt(cfg.defect_weight);
  qp.hessian.diagonal().tail(ny).setOnes();

  // Output dynamics with defect, then stance-foot acceleration.
  qp.eq_matrix = Eigen::MatrixXd::Zero(ny + nf, nz);
  qp.eq_rhs.resize(ny + nf);
  qp.eq_matrix.block(0, 0, ny, kNumActuated) = outputs.jacobian * dinv_u;
  if (nf > 0) qp.eq_matrix.block(0, kNumActuated, ny, nf) = outputs.jacobian * dinv_jt;
  qp.eq_matrix.block(0, out.defect_offset, ny, ny) = -out.defect_scale * Eigen::MatrixXd::Identity(ny, ny);
  qp.eq_rhs.head(ny) = out.v_pd - outputs.bias + outputs.jacobian * dinv_h;
  if (nf > 0) {
    qp.eq_matrix.block(ny, 0, nf, kNumActuated) = blk.jacobian * dinv_u;
    qp.eq_matrix.block(ny, kNumActuated, nf, nf) = blk.jacobian * dinv_jt;
    qp.eq_rhs.tail(nf) = -blk.drift + blk.jacobian * dinv_h;
    if (hold) {
      const Eigen::VectorXd pdot = blk.jacobian * state.qdot;
      for (int c = 0; c < nc; ++c) {
        Eigen::Vector3d err = kin.foot_position[index_of(contacts[static_cast<std::size_t>(c)])] - hold->anchors.col(c);
        err.z() = 0;
        qp.eq_rhs.segment<3>(ny + 3 * c) -= hold->kd * pdot.segment<3>(3 * c) + hold->kp * err;
      }
    }
  }

  const double mu = cfg.friction_coeff;
  qp.ineq_matrix = Eigen::MatrixXd::Zero(4 * nc, nz);
  qp.ineq_rhs = Eigen::VectorXd::Zero(4 * nc);
  for (int c = 0; c < nc; ++c) {
    const int f = kNumActuated + 3 * c;
    for (int axis = 0; axis < 2; ++axis)
      for (int sign = 0; sign < 2; ++sign) {
        const int r = 4 * c + 2 * axis + sign;
        qp.ineq_matrix(r, f + axis) = sign == 0 ? 1.0 : -1.0;
        qp.ineq_matrix(r, f + 2) = -mu;
      }
  }

  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(nz, -inf), hi = Eigen::VectorXd::Constant(nz, inf);
  lo.head(kNumActuated) = model.torque_min;
  hi.head(kNumActuated) = model.torque_max;
  for (int c = 0; c < nc; ++c) lo(kNumActuated + 3 * c + 2) = 0;
  qp.lower = lo;
  qp.upper = hi;
  return out;
}

double pyramid_violation(const Eigen::Matrix3Xd& forces, double mu) {
  double v = 0;
  for (Eigen::Index c = 0; c < forces.cols(); ++c) {
    const double fz = forces(2, c);
    v = std::max({v, -fz, std::abs(forces(0, c)) - mu * fz, std::abs(forces(1, c)) - mu * fz});
  }
  return v;
}

ControlResult control_step(const RobotModel& model, const FullState& state, const OutputEval& outputs,
                           const Gains& gains, const LowLevelQpConfig& cfg, const std::vector<ContactId>& contacts,
                           double time, double gravity, const StanceHold* hold) {
  const LowLevelQp ll = build_lowlevel_qp(model, state, outputs, gains, cfg, contacts, gravity, hold);
  const auto sol = solve_qp(ll.qp, cfg.qp);
  if (!sol.optimal()) throw ControllerFailure(time, sol.status, sol.kkt.max());
  ControlResult r;
  r.tau = sol.x_star.head<kNumActuated>();
  r.forces = Eigen::Map<const Eigen::Matrix3Xd>(sol.x_star.data() + ll.force_offset, 3, ll.num_contacts);
  r.defect = ll.defect_scale * sol.x_star.segment(ll.defect_offset, ll.output_dim);
  r.y_norm = outputs.y.norm();
  r.ydot_norm = outputs.ydot.norm();
  r.defect_norm = r.defect.norm();
  r.iterations = sol.iterations;
  r.max_pyramid_violation = pyramid_violation(r.forces, cfg.friction_coeff);
  return r;
}

PdResponse pd_response(double kp, double kd, double t) {
  const double disc = kd * kd - 4 * kp;
  if (!(kp > 0) || disc < -1e-9 * kd * kd) throw std::invalid_argument("pd_response: needs kd^2 >= 4 kp > 0");
  const double root = std::sqrt(std::max(disc, 0.0));
  const double l1 = (kd - root) / 2, l2 = (kd + root) / 2;
  if (l2 - l1 < 1e-6 * l2) {
    const double e = std::exp(-l1 * t);
    return {(1 + l1 * t) * e, t * e};
  }
  const double e1 = std::exp(-l1 * t), e2 = std::exp(-l2 * t);
  return {(l2 * e1 - l1 * e2) / (l2 - l1), (e1 - e2) / (l2 - l1)};
}

BezierFit com_reference_fit(const MpcSolution& plan, int grid_count, int degree) {
  if (static_cast<int>(plan.predicted_states.size()) < grid_count + 1)
    throw std::invalid_argument("com_reference_fit: plan shorter than one domain");
  Eigen::MatrixXd samples(2, grid_count + 1);
  for (int j = 0; j <= grid_count; ++j) {
    samples(0, j) = plan.predicted_states[static_cast<std::size_t>(j)](0);
    samples(1, j) = plan.predicted_states[static_cast<std::size_t>(j)](2);
  }
  return fit_bezier(samples, uniform_phase_grid(grid_count), degree);
}

void write_diagnostics_header(std::ostream& out) {
  out << "t,s,zeta,y_norm,ydot_norm,omega_norm";
  for (int i = 1; i <= kNumActuated; ++i) out << ",tau_" << i;
  for (auto c : kAllContacts)
    for (const char* a : {"x", "y", "z"}) out << ",F_" << short_name(c) << '_' << a;
  out << ",qp_iterations\n";
}

void write_diagnostics_row(std::ostream& out, const DiagnosticsRow& r) {
  out << fmt::format("{:.6f},{:.9g},{},{:.9g},{:.9g},{:.9g}", r.t, r.s, r.zeta, r.y_norm, r.ydot_norm,
                     r.defect_norm);
  for (int i = 0; i < kNumActuated; ++i) out << fmt::format(",{:.9g}", r.tau(i));
  for (const auto& f : r.forces) out << fmt::format(",{:.9g},{:.9g},{:.9g}", f.x(), f.y(), f.z());
  out << ',' << r.iterations << '\n';
}

}  // namespace hloco
