#include "hloco/stability.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace hloco {

namespace {

LipStated random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  LipStated v;
  do {
    for (int i = 0; i < 4; ++i) v(i) = nd(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

nlohmann::json state_json(const LipStated& x) { return {x(0), x(1), x(2), x(3)}; }

}  // namespace

std::vector<LipschitzEstimate> estimate_lipschitz(const LawFn& law, int grid_count, int m, const LipStated& center,
                                                  int samples, double radius, std::uint64_t seed) {
  if (samples < 10) throw std::invalid_argument("estimate_lipschitz: need at least 10 samples");
  if (!(radius > 0)) throw std::invalid_argument("estimate_lipschitz: radius must be positive");

  const auto base = law(m, center);
  if (static_cast<int>(base.size()) != grid_count)
    throw std::invalid_argument("estimate_lipschitz: law returned the wrong number of controls");

  std::vector<LipschitzEstimate> out(static_cast<std::size_t>(grid_count));
  for (int j = 0; j < grid_count; ++j) {
    out[j].event_index = m;
    out[j].control_offset = j;
    out[j].sample_radius = radius;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  int used = 0, excluded = 0;
  for (int s = 0; s < samples; ++s) {
    // Uniform in the 4-ball.
    const LipStated d = random_unit(rng) * radius * std::pow(ud(rng), 0.25);
    const double dn = d.norm();
    if (dn == 0) continue;
    try {
      const auto u = law(m, center + d);
      for (int j = 0; j < grid_count; ++j)
        out[j].rho_hat = std::max(out[j].rho_hat, (u[j] - base[j]).norm() / dn);
      ++used;
    } catch (const MpcInfeasible&) {
      ++excluded;
    }
  }
  for (auto& e : out) {
    e.sample_count = used;
    e.excluded_count = excluded;
  }
  return out;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

LConstants l_constants(const LipDiscreted& lip, double rho, int grid_count) {
  if (!(rho >= 0)) throw std::invalid_argument("l_constants: rho must be nonnegative");
  if (grid_count < 1) throw std::invalid_argument("l_constants: grid_count must be positive");
  std::vector<double> a_norm(static_cast<std::size_t>(grid_count));
  Eigen::Matrix4d p = Eigen::Matrix4d::Identity();
  for (int j = 0; j < grid_count; ++j) {
    a_norm[j] = spectral_norm(p);
    p = lip.a_mat * p;
  }
  const double b_norm = spectral_norm(lip.b_mat);
  LConstants lc;
  lc.rho = rho;
  for (int j = 0; j < grid_count; ++j) {
    double sum = 0;
    for (int l = 0; l < j; ++l) sum += a_norm[j - 1 - l] * b_norm;
    lc.values.push_back(a_norm[j] + rho * sum);
  }
  lc.max = *std::max_element(lc.values.begin(), lc.values.end());
  return lc;
}

std::vector<LipStated> decay_grid(const LipStated& center, double radius, int points, std::uint64_t seed) {
  if (points < 1) throw std::invalid_argument("decay_grid: need at least one point");
  std::vector<LipStated> grid;
  for (int i = 0; i < std::min(points, 8); ++i) {
    LipStated e = LipStated::Zero();
    e(i / 2) = (i % 2 == 0) ? radius : -radius;
    grid.push_back(center + e);
  }
  std::mt19937_64 rng(seed);
  while (static_cast<int>(grid.size()) < points) grid.push_back(center + radius * random_unit(rng));
  return grid;
}

const char* to_string(DecayVerdict v) {
  return v == DecayVerdict::DecayObserved ? "decay_observed" : "counterexample_found";
}

std::string DecayReport::coverage() const {
  std::ostringstream os;
  os << "evidence on " << initial_grid.size() << " initial states over " << event_budget
     << " events; not a proof outside the sampled set";
  return os.str();
}

DecayReport certify_downsample_decay(const MpcSetup& setup, const std::vector<LipStated>& initial_states,
                                     const DecayOptions& options) {
  if (initial_states.empty()) throw std::invalid_argument("certify_downsample_decay: empty grid");
  if (options.event_budget < 1) throw std::invalid_argument("certify_downsample_decay: event budget must be positive");
  const int nd = setup.grid_count();
  const LipStated xf = setup.config.target;
  const Eigen::Vector2d uf = setup.target_cop();

  DecayReport rep;
  rep.initial_grid = initial_states;
  rep.threshold = options.threshold;
  rep.event_budget = options.event_budget;

  double observed_rho = 0;
  for (const auto& x0 : initial_states) {
    DecayTrajectory tr;
    tr.initial = x0;
    LipStated x = x0;
    tr.norms.push_back((x - xf).norm());
    for (int m = 0; m < options.event_budget; ++m) {
      const long k = static_cast<long>(m) * nd;
      std::vector<Eigen::Vector2d> u;
      try {
        u = solve_event(setup, k, x).law.controls;
      } catch (const MpcInfeasible& e) {
        tr.infeasible_sample = e.event_sample();
        break;
      }
      const double e0 = (x - xf).norm();
      double inter = e0;
      LipStated y = x;
      for (int j = 0; j < nd; ++j) {
        if (e0 > 0) observed_rho = std::max(observed_rho, (u[j] - uf).norm() / e0);
        y = lip_step(setup.lip, y, u[j]);
        if (j + 1 < nd) inter = std::max(inter, (y - xf).norm());
      }
      tr.intersample_max.push_back(inter);
      x = y;
      tr.norms.push_back((x - xf).norm());
    }
    for (std::size_t m = 0; m < tr.norms.size(); ++m)
      if (tr.norms[m] < options.threshold) {
        tr.first_below = static_cast<int>(m);
        break;
      }
    tr.converged = !tr.infeasible_sample && tr.norms.back() < options.threshold;
    rep.trajectories.push_back(std::move(tr));
  }

  for (std::size_t i = 0; i < rep.trajectories.size() && !rep.counterexample; ++i)
    if (!rep.trajectories[i].converged) rep.counterexample = i;
  rep.verdict = rep.counterexample ? DecayVerdict::CounterexampleFound : DecayVerdict::DecayObserved;

  // Log-linear fit of c gamma^m, then c raised until the envelope majorizes
  // every event-boundary norm.
  constexpr double floor = 1e-12;
  double sm = 0, sl = 0, smm = 0, sml = 0;
  int cnt = 0;
  for (const auto& tr : rep.trajectories)
    for (std::size_t m = 0; m < tr.norms.size(); ++m)
      if (tr.norms[m] > floor) {
        const double mm = static_cast<double>(m), l = std::log(tr.norms[m]);
        sm += mm;
        sl += l;
        smm += mm * mm;
        sml += mm * l;
        ++cnt;
      }
  double log_rate = 0;
  if (cnt >= 2 && cnt * smm - sm * sm > 0) log_rate = (cnt * sml - sm * sl) / (cnt * smm - sm * sm);
  rep.envelope_rate = std::exp(log_rate);
  double log_c = -std::numeric_limits<double>::infinity();
  for (const auto& tr : rep.trajectories)
    for (std::size_t m = 0; m < tr.norms.size(); ++m)
      if (tr.norms[m] > 0) log_c = std::max(log_c, std::log(tr.norms[m]) - static_cast<double>(m) * log_rate);
  rep.envelope_c = std::isfinite(log_c) ? std::exp(log_c) : 0.0;

  rep.observed_rho = observed_rho;
  rep.l_consts = l_constants(setup.lip, std::max(options.rho, observed_rho), nd);
  for (const auto& tr : rep.trajectories)
    for (std::size_t m = 0; m < tr.intersample_max.size(); ++m) {
      const double bound = rep.l_consts.max * rep.envelope_c * std::pow(rep.envelope_rate, static_cast<double>(m));
      if (tr.intersample_max[m] > bound * (1 + 1e-9) + 1e-15) ++rep.intersample_violations;
    }
  return rep;
}

nlohmann::json decay_report_to_json(const DecayReport& r) {
  nlohmann::json j;
  j["format"] = "hloco.decay.v1";
  j["verdict"] = to_string(r.verdict);
  j["coverage"] = r.coverage();
  j["threshold"] = r.threshold;
  j["event_budget"] = r.event_budget;
  j["envelope"] = {{"c", r.envelope_c}, {"rate", r.envelope_rate}};
  j["observed_rho"] = r.observed_rho;
  j["l_constants"] = {{"rho", r.l_consts.rho}, {"values", r.l_consts.values}, {"max", r.l_consts.max}};
  j["intersample_violations"] = r.intersample_violations;
  j["counterexample"] = r.counterexample ? nlohmann::json(*r.counterexample) : nlohmann::json(nullptr);
  auto& trs = j["trajectories"] = nlohmann::json::array();
  for (const auto& t : r.trajectories) {
    trs.push_back({{"initial", state_json(t.initial)},
                   {"norms", t.norms},
                   {"intersample_max", t.intersample_max},
                   {"converged", t.converged},
                   {"first_below", t.first_below},
                   {"infeasible_sample", t.infeasible_sample ? nlohmann::json(*t.infeasible_sample)
                                                             : nlohmann::json(nullptr)}});
  }
  return j;
}

}  // namespace hloco
