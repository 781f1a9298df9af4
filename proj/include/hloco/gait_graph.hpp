#pragma once

// Locomotion graph: an ordered chain of contact domains, each holding the
// footholds of its stance legs, plus the support-polygon machinery used by the
// planner.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hloco {

enum class ContactId : int { FrontLeft = 0, FrontRight = 1, RearLeft = 2, RearRight = 3 };

inline constexpr std::array<ContactId, 4> kAllContacts = {ContactId::FrontLeft, ContactId::FrontRight,
                                                          ContactId::RearLeft, ContactId::RearRight};

inline int index_of(ContactId c) { return static_cast<int>(c); }
const char* short_name(ContactId c);
std::optional<ContactId> contact_from_name(const std::string& name);

struct DomainSpec {
  std::vector<ContactId> active;   // canonical ContactId order
  Eigen::Matrix2Xd contact_coords; // one column per active foot
  int grid_count{1};

  int num_contacts() const { return static_cast<int>(active.size()); }
  bool is_active(ContactId c) const;
  Eigen::Vector2d foothold(ContactId c) const;
  void validate() const;
};

enum class GaitDirection { Forward, Backward, Sideways, Diagonal, InPlace, Custom };

const char* to_string(GaitDirection d);
GaitDirection direction_from_name(const std::string& name);

/// Step vector used by the bundled scenarios for each direction.
Eigen::Vector2d default_step(GaitDirection d);

/// Nominal foot rectangle under the torso.
struct StanceGeometry {
  double length{0.5};
  double width{0.3};
  Eigen::Vector2d center{Eigen::Vector2d::Zero()};

  Eigen::Vector2d corner(ContactId c) const;
};

struct GaitGraph {
  GaitDirection direction{GaitDirection::Custom};
  Eigen::Vector2d step{Eigen::Vector2d::Zero()};
  std::vector<DomainSpec> domains;  // domain zeta lives at index zeta - 1

  int domain_count() const { return static_cast<int>(domains.size()); }
  int grid_count() const { return domains.empty() ? 0 : domains.front().grid_count; }
  long total_samples() const { return static_cast<long>(domain_count()) * grid_count(); }

  /// Domain by 1-based index.
  const DomainSpec& domain(int zeta) const;
  /// Domain active at sample k (saturates at the last domain).
  const DomainSpec& at_sample(long k) const;

  std::vector<ContactId> swing_legs(int zeta) const;
  /// Where `leg` lifted off before swinging in domain zeta.
  Eigen::Vector2d liftoff(int zeta, ContactId leg) const;
  /// Where `leg` lands after swinging in domain zeta.
  Eigen::Vector2d touchdown(int zeta, ContactId leg) const;

  Eigen::Vector2d initial_centroid() const;
  Eigen::Vector2d final_centroid() const;

  void validate() const;
};

/// zeta[k] = floor(k / N_d) + 1 for k < M N_d, and M afterwards.
int domain_indicator(long k, int grid_count, int domain_count);

/// Trot with quadruple-contact start and stop domains and alternating diagonal
/// stance pairs in between. Every swing advances the leg by `step`.
GaitGraph build_trot_graph(GaitDirection direction, const Eigen::Vector2d& step, int domain_count,
                           int grid_count = 4, const StanceGeometry& stance = {});

/// u = coeff * lambda with 0 <= lambda <= 1, sum(lambda) = 1.
struct CopParametrization {
  Eigen::Matrix2Xd coeff;

  int size() const { return static_cast<int>(coeff.cols()); }
  Eigen::Vector2d cop(const Eigen::VectorXd& lambda) const { return coeff * lambda; }
  bool admits(const Eigen::VectorXd& lambda, double tol = 1e-9) const;
};

CopParametrization cop_parametrization(const DomainSpec& spec);

struct HullMembership {
  bool inside{false};
  Eigen::VectorXd witness;    // lambda with u = C lambda, when inside
  Eigen::Vector2d nearest;    // closest hull point to u
  double distance{0};
  Eigen::Vector2d normal{Eigen::Vector2d::Zero()};  // separator n'v <= offset < n'u, when outside
  double offset{0};
};

HullMembership hull_membership(const DomainSpec& spec, const Eigen::Vector2d& u, double tol = 1e-9);

/// Closest point to `u` in the convex hull of the columns of `points`.
Eigen::Vector2d project_onto_hull(const Eigen::Matrix2Xd& points, const Eigen::Vector2d& u);

/// Convex weights lambda reproducing `p` (assumed inside the hull), closest to
/// uniform weights in the least-squares sense.
Eigen::VectorXd barycentric_weights(const Eigen::Matrix2Xd& points, const Eigen::Vector2d& p);

nlohmann::json gait_to_json(const GaitGraph& graph);
GaitGraph gait_from_json(const nlohmann::json& doc);
void write_gait_json(const GaitGraph& graph, const std::filesystem::path& path);
GaitGraph read_gait_json(const std::filesystem::path& path);

}  // namespace hloco
