#pragma once

// Numerical evidence for down-sample stability: Lipschitz gains of the event
// laws, the inter-sample constants L_j, and decay certification over a grid of
// initial conditions.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hloco/event_mpc.hpp"
#include "hloco/lip.hpp"

namespace hloco {

struct LipschitzEstimate {
  int event_index{0};
  int control_offset{0};  // j
  double rho_hat{0};      // max over samples, never a mean
  int sample_count{0};    // feasible samples used
  int excluded_count{0};  // samples dropped because the QP was infeasible
  double sample_radius{0};
};

/// rho_hat(j) = max over perturbations d with |d| <= radius of
/// |pi_j(m, center + d) - pi_j(m, center)| / |d|. With center = x_f and
/// pi(m, x_f) = u_f this is the gain of the law in target-shifted coordinates.
/// Throws MpcInfeasible if the law is infeasible at the center itself.
std::vector<LipschitzEstimate> estimate_lipschitz(const LawFn& law, int grid_count, int m, const LipStated& center,
                                                  int samples, double radius, std::uint64_t seed);

struct LConstants {
  double rho{0};
  std::vector<double> values;  // L_0 .. L_{N_d-1}
  double max{0};
};

/// L_j = |A^j| + rho sum_{l<j} |A^(j-1-l)| |B| in the spectral norm.
LConstants l_constants(const LipDiscreted& lip, double rho, int grid_count);

double spectral_norm(const Eigen::MatrixXd& m);

/// Axis points +-radius e_i first, then seeded random directions on the sphere.
std::vector<LipStated> decay_grid(const LipStated& center, double radius, int points, std::uint64_t seed);

enum class DecayVerdict { DecayObserved, CounterexampleFound };
const char* to_string(DecayVerdict v);

struct DecayOptions {
  int event_budget{30};
  double threshold{1e-3};
  double rho{0};  // lower bound for the inter-sample gain; the observed gain is used when larger
};

struct DecayTrajectory {
  LipStated initial;
  std::vector<double> norms;  // |x[m N_d] - x_f|, m = 0..events run
  std::vector<double> intersample_max;  // max_j |x[m N_d + j] - x_f| per event
  bool converged{false};
  int first_below{-1};  // first event index with norm < threshold
  std::optional<long> infeasible_sample;
};

struct DecayReport {
  std::vector<LipStated> initial_grid;
  std::vector<DecayTrajectory> trajectories;
  DecayVerdict verdict{DecayVerdict::CounterexampleFound};
  std::optional<std::size_t> counterexample;  // index into trajectories
  double envelope_c{0};
  double envelope_rate{0};
  double observed_rho{0};
  LConstants l_consts;
  int intersample_violations{0};
  double threshold{0};
  int event_budget{0};

  std::string coverage() const;
};

DecayReport certify_downsample_decay(const MpcSetup& setup, const std::vector<LipStated>& initial_states,
                                     const DecayOptions& options);

nlohmann::json decay_report_to_json(const DecayReport& report);

}  // namespace hloco
