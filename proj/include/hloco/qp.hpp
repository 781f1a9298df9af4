#pragma once

// Dense convex QP solver:
//
//   minimize    1/2 x' H x + c' x
//   subject to  A x  = b
//               G x <= h
//               lower <= x <= upper
//
// Primal-dual interior point with Mehrotra predictor-corrector. Box bounds are
// folded into the inequality block. Everything is templated on the scalar type
// and header-only.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hloco {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct QpProblem {
  MatrixX<Scalar> hessian;
  VectorX<Scalar> linear_cost;
  MatrixX<Scalar> eq_matrix;
  VectorX<Scalar> eq_rhs;
  MatrixX<Scalar> ineq_matrix;  // ineq_matrix * x <= ineq_rhs
  VectorX<Scalar> ineq_rhs;
  std::optional<VectorX<Scalar>> lower;  // entries may be -inf
  std::optional<VectorX<Scalar>> upper;  // entries may be +inf

  Eigen::Index num_variables() const { return hessian.rows(); }
  Eigen::Index num_eq() const { return eq_matrix.rows(); }
  Eigen::Index num_ineq() const { return ineq_matrix.rows(); }

  /// Problem with n variables, no constraints and zero cost.
  static QpProblem unconstrained(Eigen::Index n) {
    QpProblem p;
    p.hessian = MatrixX<Scalar>::Zero(n, n);
    p.linear_cost = VectorX<Scalar>::Zero(n);
    p.eq_matrix.resize(0, n);
    p.eq_rhs.resize(0);
    p.ineq_matrix.resize(0, n);
    p.ineq_rhs.resize(0);
    return p;
  }
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIterations: return "max_iterations";
  }
  return "unknown";
}

/// KKT residual norms (infinity norms). In relative mode each entry is divided
/// by one plus the magnitude of the terms it is made of.
template <typename Scalar>
struct KktResidual {
  Scalar stationarity{0};
  Scalar primal_feasibility{0};
  Scalar dual_feasibility{0};
  Scalar complementarity{0};

  Scalar max() const {
    return std::max({stationarity, primal_feasibility, dual_feasibility, complementarity});
  }
  bool within(Scalar tol) const { return max() <= tol; }
};

enum class KktScale { Relative, Absolute };

template <typename Scalar>
struct QpDuals {
  VectorX<Scalar> eq;     // m_e
  VectorX<Scalar> ineq;   // m_i, >= 0
  VectorX<Scalar> lower;  // n, zero where the bound is infinite
  VectorX<Scalar> upper;  // n
};

template <typename Scalar>
struct QpSolution {
  VectorX<Scalar> x_star;
  VectorX<Scalar> eq_duals;
  VectorX<Scalar> ineq_duals;
  VectorX<Scalar> lower_duals;
  VectorX<Scalar> upper_duals;
  QpStatus status{QpStatus::MaxIterations};
  int iterations{0};
  KktResidual<Scalar> kkt;

  QpDuals<Scalar> duals() const { return {eq_duals, ineq_duals, lower_duals, upper_duals}; }
  bool optimal() const { return status == QpStatus::Optimal; }
};

struct QpSettings {
  double tol = 1e-8;
  int max_iter = 100;
};

// ---------------------------------------------------------------------------
// Validation

template <typename Scalar>
void validate(const QpProblem<Scalar>& p) {
  const auto n = p.hessian.rows();
  auto fail = [](const std::string& what) { throw std::invalid_argument("QpProblem: " + what); };
  if (p.hessian.cols() != n) fail("hessian is not square");
  if (p.linear_cost.size() != n) fail("linear_cost size mismatch");
  if (p.eq_matrix.cols() != n && p.eq_matrix.rows() > 0) fail("eq_matrix column mismatch");
  if (p.eq_rhs.size() != p.eq_matrix.rows()) fail("eq_rhs size mismatch");
  if (p.ineq_matrix.cols() != n && p.ineq_matrix.rows() > 0) fail("ineq_matrix column mismatch");
  if (p.ineq_rhs.size() != p.ineq_matrix.rows()) fail("ineq_rhs size mismatch");
  if (p.lower && p.lower->size() != n) fail("lower bound size mismatch");
  if (p.upper && p.upper->size() != n) fail("upper bound size mismatch");
  if (!p.hessian.allFinite() || !p.linear_cost.allFinite()) fail("non-finite cost data");
  const Scalar scale = std::max(Scalar(1), p.hessian.cwiseAbs().maxCoeff());
  if (n > 0 && (p.hessian - p.hessian.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale)
    fail("hessian is not symmetric");
  if (p.lower && p.upper) {
    for (Eigen::Index i = 0; i < n; ++i)
      if ((*p.lower)(i) > (*p.upper)(i)) fail("lower bound exceeds upper bound");
  }
}

/// True when the smallest eigenvalue of the hessian is at least `threshold`.
template <typename Scalar>
bool is_strictly_convex(const QpProblem<Scalar>& p, Scalar threshold = Scalar(1e-10)) {
  if (p.hessian.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(p.hessian, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= threshold;
}

namespace detail {

/// Inequality block with finite box bounds appended: [G; -I_lo; I_up].
template <typename Scalar>
struct FoldedInequalities {
  MatrixX<Scalar> matrix;
  VectorX<Scalar> rhs;
  std::vector<Eigen::Index> lower_index;  // variable index for each lower-bound row
  std::vector<Eigen::Index> upper_index;
  Eigen::Index base_rows{0};
};

template <typename Scalar>
FoldedInequalities<Scalar> fold_bounds(const QpProblem<Scalar>& p) {
  FoldedInequalities<Scalar> f;
  const auto n = p.num_variables();
  f.base_rows = p.num_ineq();
  if (p.lower)
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite((*p.lower)(i))) f.lower_index.push_back(i);
  if (p.upper)
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite((*p.upper)(i))) f.upper_index.push_back(i);
  const auto m = f.base_rows + static_cast<Eigen::Index>(f.lower_index.size() + f.upper_index.size());
  f.matrix = MatrixX<Scalar>::Zero(m, n);
  f.rhs.resize(m);
  if (f.base_rows > 0) {
    f.matrix.topRows(f.base_rows) = p.ineq_matrix;
    f.rhs.head(f.base_rows) = p.ineq_rhs;
  }
  Eigen::Index r = f.base_rows;
  for (auto i : f.lower_index) {
    f.matrix(r, i) = Scalar(-1);
    f.rhs(r++) = -(*p.lower)(i);
  }
  for (auto i : f.upper_index) {
    f.matrix(r, i) = Scalar(1);
    f.rhs(r++) = (*p.upper)(i);
  }
  return f;
}

template <typename Scalar>
void split_duals(const QpProblem<Scalar>& p, const FoldedInequalities<Scalar>& f,
                 const VectorX<Scalar>& z, QpSolution<Scalar>& sol) {
  const auto n = p.num_variables();
  sol.ineq_duals = z.head(f.base_rows);
  sol.lower_duals = VectorX<Scalar>::Zero(n);
  sol.upper_duals = VectorX<Scalar>::Zero(n);
  Eigen::Index r = f.base_rows;
  for (auto i : f.lower_index) sol.lower_duals(i) = z(r++);
  for (auto i : f.upper_index) sol.upper_duals(i) = z(r++);
}

template <typename Scalar>
Scalar inf_norm(const VectorX<Scalar>& v) {
  return v.size() == 0 ? Scalar(0) : v.template lpNorm<Eigen::Infinity>();
}

/// Regularized LU solve of the symmetric quasi-definite KKT system with a few
/// steps of iterative refinement against the unregularized matrix.
template <typename Scalar>
class KktSolver {
 public:
  // `scale` is the magnitude of the problem data, not of the barrier-augmented block.
  KktSolver(const MatrixX<Scalar>& kkt, Eigen::Index n, Scalar scale) : kkt_(kkt) {
    MatrixX<Scalar> reg = kkt;
    const Scalar delta = Scalar(1e-11) * std::max(Scalar(1), scale);
    for (Eigen::Index i = 0; i < reg.rows(); ++i) reg(i, i) += (i < n ? delta : -delta);
    lu_.compute(reg);
  }

  VectorX<Scalar> solve(const VectorX<Scalar>& rhs) const {
    VectorX<Scalar> sol = lu_.solve(rhs);
    for (int k = 0; k < 3; ++k) {
      VectorX<Scalar> res = rhs - kkt_ * sol;
      sol += lu_.solve(res);
    }
    return sol;
  }

 private:
  const MatrixX<Scalar>& kkt_;
  Eigen::PartialPivLU<MatrixX<Scalar>> lu_;
};

template <typename Scalar>
Scalar max_step(const VectorX<Scalar>& v, const VectorX<Scalar>& dv) {
  Scalar alpha = Scalar(1);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < Scalar(0)) alpha = std::min(alpha, -v(i) / dv(i));
  return alpha;
}

}  // namespace detail

template <typename Scalar>
KktResidual<Scalar> kkt_residual(const QpProblem<Scalar>& p, const VectorX<Scalar>& x,
                                 const QpDuals<Scalar>& duals, KktScale scale = KktScale::Relative);

namespace detail {

// Re-solve with the interior-point active set held as equalities. Accepted only
// when the result is a cleaner KKT point than the interior iterate.
template <typename Scalar>
void polish(const QpProblem<Scalar>& p, const FoldedInequalities<Scalar>& f, QpSolution<Scalar>& sol) {
  const auto n = p.num_variables();
  const auto me = p.num_eq();
  VectorX<Scalar> z(f.matrix.rows());
  z.head(f.base_rows) = sol.ineq_duals;
  Eigen::Index r = f.base_rows;
  for (auto i : f.lower_index) z(r++) = sol.lower_duals(i);
  for (auto i : f.upper_index) z(r++) = sol.upper_duals(i);
  const VectorX<Scalar> slack = f.rhs - f.matrix * sol.x_star;

  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (z(i) > slack(i)) active.push_back(i);
  const auto na = static_cast<Eigen::Index>(active.size());
  const auto dim = n + me + na;
  MatrixX<Scalar> k = MatrixX<Scalar>::Zero(dim, dim);
  VectorX<Scalar> rhs(dim);
  k.topLeftCorner(n, n) = p.hessian;
  rhs.head(n) = -p.linear_cost;
  if (me > 0) {
    k.block(0, n, n, me) = p.eq_matrix.transpose();
    k.block(n, 0, me, n) = p.eq_matrix;
    rhs.segment(n, me) = p.eq_rhs;
  }
  for (Eigen::Index a = 0; a < na; ++a) {
    k.block(0, n + me + a, n, 1) = f.matrix.row(active[a]).transpose();
    k.block(n + me + a, 0, 1, n) = f.matrix.row(active[a]);
    rhs(n + me + a) = f.rhs(active[a]);
  }
  const VectorX<Scalar> v = k.completeOrthogonalDecomposition().solve(rhs);
  if (!v.allFinite()) return;

  QpSolution<Scalar> cand = sol;
  cand.x_star = v.head(n);
  cand.eq_duals = v.segment(n, me);
  VectorX<Scalar> zc = VectorX<Scalar>::Zero(z.size());
  for (Eigen::Index a = 0; a < na; ++a) zc(active[a]) = v(n + me + a);
  split_duals(p, f, zc, cand);
  cand.kkt = kkt_residual(p, cand.x_star, cand.duals(), KktScale::Relative);
  if (cand.kkt.max() <= sol.kkt.max()) sol = std::move(cand);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// KKT diagnostics

template <typename Scalar>
KktResidual<Scalar> kkt_residual(const QpProblem<Scalar>& p, const VectorX<Scalar>& x,
                                 const QpDuals<Scalar>& duals, KktScale scale) {
  using detail::inf_norm;
  const auto n = p.num_variables();
  if (x.size() != n || duals.eq.size() != p.num_eq() || duals.ineq.size() != p.num_ineq())
    throw std::invalid_argument("kkt_residual: dimension mismatch");
  VectorX<Scalar> lo_d = duals.lower.size() == n ? duals.lower : VectorX<Scalar>::Zero(n);
  VectorX<Scalar> up_d = duals.upper.size() == n ? duals.upper : VectorX<Scalar>::Zero(n);

  const VectorX<Scalar> hx = p.hessian * x;
  const VectorX<Scalar> aty = p.num_eq() > 0 ? VectorX<Scalar>(p.eq_matrix.transpose() * duals.eq)
                                              : VectorX<Scalar>::Zero(n);
  const VectorX<Scalar> gtz = p.num_ineq() > 0
                                  ? VectorX<Scalar>(p.ineq_matrix.transpose() * duals.ineq)
                                  : VectorX<Scalar>::Zero(n);
  const VectorX<Scalar> bound_term = up_d - lo_d;
  const VectorX<Scalar> rd = hx + p.linear_cost + aty + gtz + bound_term;

  KktResidual<Scalar> r;
  r.stationarity = inf_norm(rd);

  Scalar primal = 0;
  Scalar primal_scale = 0;
  VectorX<Scalar> ax, gx;
  if (p.num_eq() > 0) {
    ax = p.eq_matrix * x;
    primal = std::max(primal, inf_norm<Scalar>(ax - p.eq_rhs));
    primal_scale = std::max({primal_scale, inf_norm(ax), inf_norm(p.eq_rhs)});
  }
  // Complementarity products z_i * slack_i.
  Scalar comp = 0;
  if (p.num_ineq() > 0) {
    gx = p.ineq_matrix * x;
    const VectorX<Scalar> slack = p.ineq_rhs - gx;
    primal = std::max(primal, inf_norm<Scalar>(VectorX<Scalar>((-slack).cwiseMax(Scalar(0)))));
    primal_scale = std::max({primal_scale, inf_norm(gx), inf_norm(p.ineq_rhs)});
    comp = std::max(comp, inf_norm<Scalar>(VectorX<Scalar>(duals.ineq.cwiseProduct(slack))));
  }
  Scalar dual_neg = p.num_ineq() > 0 ? std::max(Scalar(0), -duals.ineq.minCoeff()) : Scalar(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p.lower && std::isfinite((*p.lower)(i))) {
      const Scalar s = x(i) - (*p.lower)(i);
      primal = std::max(primal, std::max(Scalar(0), -s));
      primal_scale = std::max({primal_scale, std::abs(x(i)), std::abs((*p.lower)(i))});
      comp = std::max(comp, std::abs(lo_d(i) * s));
      dual_neg = std::max(dual_neg, -lo_d(i));
    }
    if (p.upper && std::isfinite((*p.upper)(i))) {
      const Scalar s = (*p.upper)(i) - x(i);
      primal = std::max(primal, std::max(Scalar(0), -s));
      primal_scale = std::max({primal_scale, std::abs(x(i)), std::abs((*p.upper)(i))});
      comp = std::max(comp, std::abs(up_d(i) * s));
      dual_neg = std::max(dual_neg, -up_d(i));
    }
  }
  r.primal_feasibility = primal;
  r.dual_feasibility = dual_neg;
  r.complementarity = comp;

  if (scale == KktScale::Relative) {
    const Scalar stat_scale = std::max({inf_norm(hx), inf_norm(p.linear_cost), inf_norm(aty),
                                        inf_norm(gtz), inf_norm(bound_term)});
    const Scalar objective = std::abs(Scalar(0.5) * x.dot(hx) + p.linear_cost.dot(x));
    r.stationarity /= Scalar(1) + stat_scale;
    r.primal_feasibility /= Scalar(1) + primal_scale;
    r.complementarity /= Scalar(1) + objective;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Interior-point solver

template <typename Scalar>
QpSolution<Scalar> solve_qp(const QpProblem<Scalar>& p, const QpSettings& settings = {}) {
  using detail::inf_norm;
  validate(p);
  if (!(settings.tol > 0)) throw std::invalid_argument("solve_qp: tol must be positive");

  const Scalar tol = static_cast<Scalar>(settings.tol);
  const auto n = p.num_variables();
  const auto me = p.num_eq();
  const auto f = detail::fold_bounds(p);
  const auto mi = f.matrix.rows();
  const MatrixX<Scalar>& G = f.matrix;
  const VectorX<Scalar>& h = f.rhs;
  const MatrixX<Scalar> A = me > 0 ? p.eq_matrix : MatrixX<Scalar>(0, n);

  QpSolution<Scalar> sol;
  auto finish = [&](const VectorX<Scalar>& x, const VectorX<Scalar>& y, const VectorX<Scalar>& z,
                    QpStatus status, int it) {
    sol.x_star = x;
    sol.eq_duals = y;
    detail::split_duals(p, f, z, sol);
    sol.iterations = it;
    sol.kkt = kkt_residual(p, x, sol.duals());
    sol.status = status;
    return sol;
  };

  const Scalar reg_scale = std::max(p.hessian.cwiseAbs().maxCoeff(),
                                    me > 0 ? p.eq_matrix.cwiseAbs().maxCoeff() : Scalar(0));
  MatrixX<Scalar> kkt = MatrixX<Scalar>::Zero(n + me, n + me);
  auto assemble = [&](const VectorX<Scalar>& sigma) {
    kkt.topLeftCorner(n, n) = p.hessian;
    if (mi > 0) kkt.topLeftCorner(n, n) += G.transpose() * sigma.asDiagonal() * G;
    if (me > 0) {
      kkt.topRightCorner(n, me) = A.transpose();
      kkt.bottomLeftCorner(me, n) = A;
    }
  };

  // Equality-constrained (or unconstrained) problems reduce to one linear solve.
  if (mi == 0) {
    assemble(VectorX<Scalar>());
    VectorX<Scalar> rhs(n + me);
    rhs << -p.linear_cost, p.eq_rhs;
    detail::KktSolver<Scalar> solver(kkt, n, reg_scale);
    const VectorX<Scalar> xy = solver.solve(rhs);
    finish(xy.head(n), xy.tail(me), VectorX<Scalar>(), QpStatus::Optimal, 1);
    if (!sol.kkt.within(tol)) sol.status = QpStatus::Infeasible;
    return sol;
  }

  // Initial point: solve the KKT system with unit scaling, then shift the
  // slacks and multipliers into the positive orthant.
  VectorX<Scalar> x, y, z, s;
  {
    assemble(VectorX<Scalar>::Ones(mi));
    VectorX<Scalar> rhs(n + me);
    rhs << -p.linear_cost + G.transpose() * h, p.eq_rhs;
    detail::KktSolver<Scalar> solver(kkt, n, reg_scale);
    const VectorX<Scalar> xy = solver.solve(rhs);
    x = xy.head(n);
    y = xy.tail(me);
    const VectorX<Scalar> zhat = G * x - h;
    s = -zhat;
    z = zhat;
    const Scalar alpha_p = -s.minCoeff();
    if (alpha_p >= Scalar(0)) s.array() += Scalar(1) + alpha_p;
    const Scalar alpha_d = -z.minCoeff();
    if (alpha_d >= Scalar(0)) z.array() += Scalar(1) + alpha_d;
  }

  const Scalar data_scale =
      Scalar(1) + std::max({inf_norm(h), me > 0 ? inf_norm<Scalar>(p.eq_rhs) : Scalar(0),
                            inf_norm<Scalar>(p.linear_cost)});
  Scalar best_primal = std::numeric_limits<Scalar>::infinity();
  int stalled = 0;

  for (int it = 0; it < settings.max_iter; ++it) {
    const VectorX<Scalar> rd =
        p.hessian * x + p.linear_cost + (me > 0 ? VectorX<Scalar>(A.transpose() * y) : VectorX<Scalar>::Zero(n)) +
        G.transpose() * z;
    const VectorX<Scalar> rp = me > 0 ? VectorX<Scalar>(A * x - p.eq_rhs) : VectorX<Scalar>();
    const VectorX<Scalar> ri = G * x + s - h;
    const Scalar mu = s.dot(z) / static_cast<Scalar>(mi);

    // Termination on the true KKT residual at (x, y, z).
    {
      QpSolution<Scalar> probe;
      detail::split_duals(p, f, z, probe);
      probe.eq_duals = y;
      const auto res = kkt_residual(p, x, probe.duals());
      if (res.within(tol)) {
        finish(x, y, z, QpStatus::Optimal, it);
        detail::polish(p, f, sol);
        return sol;
      }
    }

    // Primal infeasibility: the multipliers blow up along a Farkas direction
    // (A'y + G'z ~ 0, b'y + h'z < 0), or the primal residual stops improving
    // while the duality measure collapses.
    const Scalar dual_norm = std::max(inf_norm(z), me > 0 ? inf_norm(y) : Scalar(0));
    if (dual_norm > Scalar(1e6) * data_scale) {
      const VectorX<Scalar> cert = G.transpose() * z + (me > 0 ? VectorX<Scalar>(A.transpose() * y)
                                                                : VectorX<Scalar>::Zero(n));
      const Scalar gap = h.dot(z) + (me > 0 ? p.eq_rhs.dot(y) : Scalar(0));
      if (inf_norm(cert) <= Scalar(1e-6) * dual_norm && gap < Scalar(-1e-8) * dual_norm)
        return finish(x, y, z, QpStatus::Infeasible, it);
    }
    const Scalar primal_res = std::max(me > 0 ? inf_norm(rp) : Scalar(0), inf_norm(ri));
    if (primal_res < Scalar(0.9) * best_primal) {
      best_primal = primal_res;
      stalled = 0;
    } else if (++stalled >= 25 && primal_res > tol * data_scale && mu < tol) {
      return finish(x, y, z, QpStatus::Infeasible, it);
    }

    assemble(z.cwiseQuotient(s));
    detail::KktSolver<Scalar> solver(kkt, n, reg_scale);

    auto direction = [&](const VectorX<Scalar>& rc, VectorX<Scalar>& dx, VectorX<Scalar>& dy,
                         VectorX<Scalar>& dz, VectorX<Scalar>& ds) {
      const VectorX<Scalar> w = (rc + z.cwiseProduct(ri)).cwiseQuotient(s);
      VectorX<Scalar> rhs(n + me);
      rhs.head(n) = -rd - G.transpose() * w;
      if (me > 0) rhs.tail(me) = -rp;
      const VectorX<Scalar> d = solver.solve(rhs);
      dx = d.head(n);
      dy = d.tail(me);
      dz = (rc + z.cwiseProduct(ri) + z.cwiseProduct(G * dx)).cwiseQuotient(s);
      ds = -ri - G * dx;
    };

    VectorX<Scalar> dx, dy, dz, ds;
    direction(-s.cwiseProduct(z), dx, dy, dz, ds);
    const Scalar alpha_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
    const Scalar mu_aff = (s + alpha_aff * ds).dot(z + alpha_aff * dz) / static_cast<Scalar>(mi);
    const Scalar sigma = std::pow(std::max(Scalar(0), mu_aff / mu), 3);

    const VectorX<Scalar> rc = (-s.cwiseProduct(z)).array() + sigma * mu - (ds.cwiseProduct(dz)).array();
    direction(rc, dx, dy, dz, ds);
    const Scalar alpha = std::min(Scalar(1), Scalar(0.99) * std::min(detail::max_step(s, ds),
                                                                     detail::max_step(z, dz)));
    x += alpha * dx;
    if (me > 0) y += alpha * dy;
    z += alpha * dz;
    s += alpha * ds;
  }
  return finish(x, y, z, QpStatus::MaxIterations, settings.max_iter);
}

// ---------------------------------------------------------------------------
// Exhaustive active-set enumeration (test oracle)

inline constexpr int kMaxOracleInequalities = 20;

template <typename Scalar>
QpSolution<Scalar> active_set_oracle(const QpProblem<Scalar>& p, Scalar feas_tol = Scalar(1e-9)) {
  validate(p);
  const auto n = p.num_variables();
  const auto me = p.num_eq();
  const auto f = detail::fold_bounds(p);
  const auto mi = f.matrix.rows();
  if (mi > kMaxOracleInequalities)
    throw std::invalid_argument("active_set_oracle: too many inequality constraints");

  QpSolution<Scalar> best;
  best.status = QpStatus::Infeasible;
  Scalar best_obj = std::numeric_limits<Scalar>::infinity();
  VectorX<Scalar> best_z;

  const std::uint32_t combos = 1u << mi;
  for (std::uint32_t mask = 0; mask < combos; ++mask) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < mi; ++i)
      if (mask & (1u << i)) active.push_back(i);
    const auto na = static_cast<Eigen::Index>(active.size());
    const auto dim = n + me + na;
    MatrixX<Scalar> k = MatrixX<Scalar>::Zero(dim, dim);
    VectorX<Scalar> rhs(dim);
    k.topLeftCorner(n, n) = p.hessian;
    rhs.head(n) = -p.linear_cost;
    if (me > 0) {
      k.block(0, n, n, me) = p.eq_matrix.transpose();
      k.block(n, 0, me, n) = p.eq_matrix;
      rhs.segment(n, me) = p.eq_rhs;
    }
    for (Eigen::Index a = 0; a < na; ++a) {
      k.block(0, n + me + a, n, 1) = f.matrix.row(active[a]).transpose();
      k.block(n + me + a, 0, 1, n) = f.matrix.row(active[a]);
      rhs(n + me + a) = f.rhs(active[a]);
    }
    Eigen::FullPivLU<MatrixX<Scalar>> lu(k);
    if (!lu.isInvertible()) continue;
    const VectorX<Scalar> sol = lu.solve(rhs);
    const VectorX<Scalar> x = sol.head(n);
    const VectorX<Scalar> za = sol.tail(na);
    if (na > 0 && za.minCoeff() < -feas_tol) continue;
    if (mi > 0 && ((f.matrix * x - f.rhs).array() > feas_tol * (Scalar(1) + f.rhs.cwiseAbs().array())).any())
      continue;
    const Scalar obj = Scalar(0.5) * x.dot(p.hessian * x) + p.linear_cost.dot(x);
    if (obj < best_obj) {
      best_obj = obj;
      best.x_star = x;
      best.eq_duals = sol.segment(n, me);
      best_z = VectorX<Scalar>::Zero(mi);
      for (Eigen::Index a = 0; a < na; ++a) best_z(active[a]) = std::max(Scalar(0), za(a));
      best.status = QpStatus::Optimal;
    }
  }
  if (best.status == QpStatus::Optimal) {
    detail::split_duals(p, f, best_z, best);
    best.kkt = kkt_residual(p, best.x_star, best.duals());
    best.iterations = static_cast<int>(combos);
  }
  return best;
}

using QpProblemd = QpProblem<double>;
using QpSolutiond = QpSolution<double>;
using QpDualsd = QpDuals<double>;

}  // namespace hloco
