#include "hloco/event_mpc.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hloco {

LipStated reference_trajectory(const ReferencePolicy& policy, const LipStated& x_now, const LipStated& x_f,
                               long k, int i) {
  if (i < 0) throw std::invalid_argument("reference_trajectory: negative offset");
  if (i == 0) return x_now;
  const long remaining = policy.steering_samples - k;
  if (remaining <= 0 || i >= remaining) return x_f;
  const double frac = static_cast<double>(i) / static_cast<double>(remaining);
  const double duration = static_cast<double>(remaining) * policy.sample_time;
  const Eigen::Vector2d p_now = com_position(x_now);
  const Eigen::Vector2d p_f = com_position(x_f);
  const Eigen::Vector2d p = p_now + frac * (p_f - p_now);
  const Eigen::Vector2d v = (p_f - p_now) / duration;
  return {p.x(), v.x(), p.y(), v.y()};
}

namespace {

bool symmetric_pd(const Eigen::MatrixXd& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() > 0;
}

}  // namespace

void MpcConfig::validate(int grid_count) const {
  if (horizon < 1) throw std::invalid_argument("MpcConfig: horizon must be positive");
  if (grid_count < 1 || horizon % grid_count != 0)
    throw std::invalid_argument("MpcConfig: horizon must be a multiple of the grid count");
  if (!symmetric_pd(terminal_weight)) throw std::invalid_argument("MpcConfig: P must be symmetric positive definite");
  if (!symmetric_pd(stage_state_weight))
    throw std::invalid_argument("MpcConfig: Q must be symmetric positive definite");
  if (!symmetric_pd(cop_weight)) throw std::invalid_argument("MpcConfig: R must be symmetric positive definite");
  if (!(lambda_weight > 0)) throw std::invalid_argument("MpcConfig: lambda weight must be positive");
  if (!target.allFinite()) throw std::invalid_argument("MpcConfig: non-finite target");
  if (steering_samples < 0) throw std::invalid_argument("MpcConfig: negative steering time");
}

MpcSetup MpcSetup::make(MpcConfig config, GaitGraph graph, const LipParamsd& params, double sample_time) {
  graph.validate();
  config.validate(graph.grid_count());
  MpcSetup s{std::move(config), std::move(graph), params, discretize_zoh(params, sample_time)};
  return s;
}

long MpcSetup::steering_samples() const {
  return config.steering_samples > 0 ? config.steering_samples : graph.total_samples();
}

Eigen::Vector2d MpcSetup::target_cop() const {
  return project_onto_hull(graph.domain(graph.domain_count()).contact_coords, com_position(config.target));
}

LipStated centroid_target(const GaitGraph& graph) { return equilibrium_state<double>(graph.final_centroid()); }

MpcQp build_mpc_qp(const MpcSetup& setup, long k, const LipStated& x) {
  const int nd = setup.grid_count();
  if (k < 0 || k % nd != 0)
    throw std::invalid_argument("build_mpc_qp: sample " + std::to_string(k) + " is not a domain boundary");
  const auto& cfg = setup.config;
  const int n_h = cfg.horizon;
  const int m_dom = setup.graph.domain_count();
  const auto cone = cone_halfspaces(setup.params);
  const auto policy = setup.reference_policy();
  const Eigen::Matrix4d& a = setup.lip.a_mat;
  const Eigen::Matrix<double, 4, 2>& b = setup.lip.b_mat;

  MpcQp out;
  out.horizon = n_h;
  out.state_offset = 0;
  out.input_offset = 4 * n_h;
  out.lambda_offset = 6 * n_h;
  int n_lambda = 0;
  for (int i = 0; i < n_h; ++i) {
    const int zeta = domain_indicator(k + i, nd, m_dom);
    out.stage_domain.push_back(zeta);
    out.lambda_start.push_back(out.lambda_offset + n_lambda);
    const int nc = setup.graph.domain(zeta).num_contacts();
    out.lambda_size.push_back(nc);
    n_lambda += nc;
  }
  const int n = 6 * n_h + n_lambda;

  // References.
  for (int i = 0; i <= n_h; ++i) out.state_reference.push_back(reference_trajectory(policy, x, cfg.target, k, i));
  for (int i = 0; i < n_h; ++i) {
    const auto& coords = setup.graph.domain(out.stage_domain[i]).contact_coords;
    const Eigen::Vector2d u_ref = project_onto_hull(coords, com_position(out.state_reference[i]));
    out.cop_reference.push_back(u_ref);
    out.lambda_desired.push_back(barycentric_weights(coords, u_ref));
  }

  auto& qp = out.qp;
  qp = QpProblemd::unconstrained(n);
  auto xi = [&](int i) { return out.state_offset + 4 * (i - 1); };  // i = 1..N
  auto ui = [&](int i) { return out.input_offset + 2 * i; };        // i = 0..N-1

  // Cost: sum of weighted squares, written as 1/2 z'Hz + c'z (H = 2W).
  for (int i = 1; i <= n_h; ++i) {
    const Eigen::Matrix4d& w = (i == n_h) ? cfg.terminal_weight : cfg.stage_state_weight;
    qp.hessian.block<4, 4>(xi(i), xi(i)) += 2.0 * w;
    qp.linear_cost.segment<4>(xi(i)) -= 2.0 * w * out.state_reference[i];
  }
  for (int i = 0; i < n_h; ++i) {
    qp.hessian.block<2, 2>(ui(i), ui(i)) += 2.0 * cfg.cop_weight;
    qp.linear_cost.segment<2>(ui(i)) -= 2.0 * cfg.cop_weight * out.cop_reference[i];
    const int ls = out.lambda_start[i];
    const int lz = out.lambda_size[i];
    qp.hessian.block(ls, ls, lz, lz) += 2.0 * cfg.lambda_weight * Eigen::MatrixXd::Identity(lz, lz);
    qp.linear_cost.segment(ls, lz) -= 2.0 * cfg.lambda_weight * out.lambda_desired[i];
  }

  // Equalities: dynamics, COP = C lambda, simplex sums.
  out.dynamics_rows = 4 * n_h;
  out.coupling_rows = 2 * n_h;
  out.simplex_rows = n_h;
  const int me = out.dynamics_rows + out.coupling_rows + out.simplex_rows;
  qp.eq_matrix = Eigen::MatrixXd::Zero(me, n);
  qp.eq_rhs = Eigen::VectorXd::Zero(me);
  for (int i = 0; i < n_h; ++i) {
    const int r = 4 * i;
    qp.eq_matrix.block<4, 4>(r, xi(i + 1)) = Eigen::Matrix4d::Identity();
    qp.eq_matrix.block<4, 2>(r, ui(i)) = -b;
    if (i == 0)
      qp.eq_rhs.segment<4>(r) = a * x;
    else
      qp.eq_matrix.block<4, 4>(r, xi(i)) = -a;
  }
  for (int i = 0; i < n_h; ++i) {
    const int r = out.dynamics_rows + 2 * i;
    const auto& coords = setup.graph.domain(out.stage_domain[i]).contact_coords;
    qp.eq_matrix.block<2, 2>(r, ui(i)) = Eigen::Matrix2d::Identity();
    qp.eq_matrix.block(r, out.lambda_start[i], 2, out.lambda_size[i]) = -coords;
  }
  for (int i = 0; i < n_h; ++i) {
    const int r = out.dynamics_rows + out.coupling_rows + i;
    qp.eq_matrix.block(r, out.lambda_start[i], 1, out.lambda_size[i]).setOnes();
    qp.eq_rhs(r) = 1.0;
  }

  // Inequalities: friction pyramid on every (x_{k+i|k}, u_{k+i|k}).
  qp.ineq_matrix = Eigen::MatrixXd::Zero(4 * n_h, n);
  qp.ineq_rhs = Eigen::VectorXd::Zero(4 * n_h);
  for (int i = 0; i < n_h; ++i) {
    const int r = 4 * i;
    qp.ineq_matrix.block<4, 2>(r, ui(i)) = cone.psi;
    if (i == 0) {
      qp.ineq_rhs.segment<4>(r) = cone.eta - cone.phi * x;
    } else {
      qp.ineq_matrix.block<4, 4>(r, xi(i)) = cone.phi;
      qp.ineq_rhs.segment<4>(r) = cone.eta;
    }
  }

  // Box: 0 <= lambda <= 1, everything else free.
  constexpr double inf = std::numeric_limits<double>::infinity();
  qp.lower = Eigen::VectorXd::Constant(n, -inf);
  qp.upper = Eigen::VectorXd::Constant(n, inf);
  qp.lower->tail(n_lambda).setZero();
  qp.upper->tail(n_lambda).setOnes();
  return out;
}

double mpc_objective(const MpcSetup& setup, const MpcQp& layout, const std::vector<LipStated>& states,
                     const std::vector<Eigen::Vector2d>& cops, const std::vector<Eigen::VectorXd>& lambdas) {
  const auto& cfg = setup.config;
  const int n_h = layout.horizon;
  double j = 0;
  for (int i = 0; i <= n_h; ++i) {
    const LipStated e = states[i] - layout.state_reference[i];
    j += e.dot((i == n_h ? cfg.terminal_weight : cfg.stage_state_weight) * e);
  }
  for (int i = 0; i < n_h; ++i) {
    const Eigen::Vector2d du = cops[i] - layout.cop_reference[i];
    j += du.dot(cfg.cop_weight * du);
    j += cfg.lambda_weight * (lambdas[i] - layout.lambda_desired[i]).squaredNorm();
  }
  return j;
}

EventResult solve_event(const MpcSetup& setup, long k, const LipStated& x) {
  const MpcQp layout = build_mpc_qp(setup, k, x);
  const auto sol = solve_qp(layout.qp, setup.config.qp);
  if (sol.status != QpStatus::Optimal) throw MpcInfeasible(k, sol.status);

  const int n_h = layout.horizon;
  EventResult r;
  auto& s = r.solution;
  s.status = sol.status;
  s.iterations = sol.iterations;
  s.stage_domain = layout.stage_domain;
  s.predicted_states.push_back(x);
  for (int i = 1; i <= n_h; ++i) s.predicted_states.push_back(sol.x_star.segment<4>(layout.state_offset + 4 * (i - 1)));
  for (int i = 0; i < n_h; ++i) {
    s.cop_sequence.push_back(sol.x_star.segment<2>(layout.input_offset + 2 * i));
    s.lambda_sequence.push_back(sol.x_star.segment(layout.lambda_start[i], layout.lambda_size[i]));
  }
  s.objective = mpc_objective(setup, layout, s.predicted_states, s.cop_sequence, s.lambda_sequence);

  r.law.event_sample = k;
  const int nd = setup.grid_count();
  r.law.controls.assign(s.cop_sequence.begin(), s.cop_sequence.begin() + nd);
  return r;
}

LawFn mpc_law(const MpcSetup& setup) {
  return [&setup](int m, const LipStated& x) {
    return solve_event(setup, static_cast<long>(m) * setup.grid_count(), x).law.controls;
  };
}

ClosedLoopTrajectory rollout_closed_loop(const MpcSetup& setup, const LipStated& x0, int total_events) {
  if (total_events < 1) throw std::invalid_argument("rollout_closed_loop: need at least one event");
  const int nd = setup.grid_count();
  ClosedLoopTrajectory t;
  t.states.push_back(x0);
  LipStated x = x0;
  for (int m = 0; m < total_events; ++m) {
    const long k = static_cast<long>(m) * nd;
    auto ev = solve_event(setup, k, x);
    ++t.solve_count;
    for (int j = 0; j < nd; ++j) {
      const Eigen::Vector2d& u = ev.law.controls[static_cast<std::size_t>(j)];
      t.cops.push_back(u);
      t.domains.push_back(domain_indicator(k + j, nd, setup.graph.domain_count()));
      t.solve_flags.push_back(j == 0);
      x = lip_step(setup.lip, x, u);
      t.states.push_back(x);
    }
    t.laws.push_back(std::move(ev.law));
  }
  return t;
}

void write_rollout_csv(const ClosedLoopTrajectory& traj, std::ostream& out) {
  out << "k,zeta,r_x,rdot_x,r_y,rdot_y,u_x,u_y,solve_flag\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto& x = traj.states[k];
    if (k < traj.cops.size()) {
      fmt::print(out, "{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", k, traj.domains[k], x(0), x(1),
                 x(2), x(3), traj.cops[k].x(), traj.cops[k].y(), traj.solve_flags[k] ? 1 : 0);
    } else {
      const int zeta = traj.domains.empty() ? 1 : traj.domains.back();
      fmt::print(out, "{},{},{:.17g},{:.17g},{:.17g},{:.17g},,,0\n", k, zeta, x(0), x(1), x(2), x(3));
    }
  }
}

void write_rollout_csv(const ClosedLoopTrajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  write_rollout_csv(traj, out);
}

LipStated downsample_map(const LipDiscreted& lip, int grid_count, const LawFn& law, int m, const LipStated& x) {
  const auto controls = law(m, x);
  if (static_cast<int>(controls.size()) != grid_count)
    throw std::invalid_argument("downsample_map: law must return grid_count controls");
  std::vector<Eigen::Matrix4d> powers(static_cast<std::size_t>(grid_count) + 1);
  powers[0] = Eigen::Matrix4d::Identity();
  for (int j = 1; j <= grid_count; ++j) powers[j] = lip.a_mat * powers[j - 1];
  LipStated next = powers[grid_count] * x;
  for (int l = 0; l < grid_count; ++l) next += powers[grid_count - 1 - l] * lip.b_mat * controls[l];
  return next;
}

LipStated downsample_map(const MpcSetup& setup, int m, const LipStated& x) {
  return downsample_map(setup.lip, setup.grid_count(), mpc_law(setup), m, x);
}

}  // namespace hloco
