#include "hloco/gait_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "hloco/qp.hpp"

namespace hloco {

const char* short_name(ContactId c) {
  switch (c) {
    case ContactId::FrontLeft: return "FL";
    case ContactId::FrontRight: return "FR";
    case ContactId::RearLeft: return "RL";
    case ContactId::RearRight: return "RR";
  }
  return "??";
}

std::optional<ContactId> contact_from_name(const std::string& name) {
  for (auto c : kAllContacts)
    if (name == short_name(c)) return c;
  return std::nullopt;
}

bool DomainSpec::is_active(ContactId c) const {
  return std::find(active.begin(), active.end(), c) != active.end();
}

Eigen::Vector2d DomainSpec::foothold(ContactId c) const {
  const auto it = std::find(active.begin(), active.end(), c);
  if (it == active.end()) throw std::out_of_range(std::string("leg not in contact: ") + short_name(c));
  return contact_coords.col(it - active.begin());
}

void DomainSpec::validate() const {
  const int nc = num_contacts();
  if (nc < 2 || nc > 4) throw std::invalid_argument("DomainSpec: active contact count must be 2, 3 or 4");
  if (contact_coords.cols() != nc) throw std::invalid_argument("DomainSpec: contact_coords column count");
  if (!contact_coords.allFinite()) throw std::invalid_argument("DomainSpec: non-finite footholds");
  if (grid_count < 1) throw std::invalid_argument("DomainSpec: grid_count must be >= 1");
  if (!std::is_sorted(active.begin(), active.end()) ||
      std::adjacent_find(active.begin(), active.end()) != active.end())
    throw std::invalid_argument("DomainSpec: active set must be sorted and unique");
}

const char* to_string(GaitDirection d) {
  switch (d) {
    case GaitDirection::Forward: return "forward";
    case GaitDirection::Backward: return "backward";
    case GaitDirection::Sideways: return "sideways";
    case GaitDirection::Diagonal: return "diagonal";
    case GaitDirection::InPlace: return "in_place";
    case GaitDirection::Custom: return "custom";
  }
  return "custom";
}

GaitDirection direction_from_name(const std::string& name) {
  for (auto d : {GaitDirection::Forward, GaitDirection::Backward, GaitDirection::Sideways,
                 GaitDirection::Diagonal, GaitDirection::InPlace, GaitDirection::Custom})
    if (name == to_string(d)) return d;
  throw std::invalid_argument("unknown gait direction: " + name);
}

Eigen::Vector2d default_step(GaitDirection d) {
  switch (d) {
    case GaitDirection::Forward: return {0.10, 0.0};
    case GaitDirection::Backward: return {-0.10, 0.0};
    case GaitDirection::Sideways: return {0.0, 0.05};
    case GaitDirection::Diagonal: return {0.07, 0.04};
    case GaitDirection::InPlace:
    case GaitDirection::Custom: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

Eigen::Vector2d StanceGeometry::corner(ContactId c) const {
  const double hx = 0.5 * length;
  const double hy = 0.5 * width;
  switch (c) {
    case ContactId::FrontLeft: return center + Eigen::Vector2d(hx, hy);
    case ContactId::FrontRight: return center + Eigen::Vector2d(hx, -hy);
    case ContactId::RearLeft: return center + Eigen::Vector2d(-hx, hy);
    case ContactId::RearRight: return center + Eigen::Vector2d(-hx, -hy);
  }
  return center;
}

const DomainSpec& GaitGraph::domain(int zeta) const {
  if (zeta < 1 || zeta > domain_count()) throw std::out_of_range("domain index out of range");
  return domains[static_cast<std::size_t>(zeta - 1)];
}

const DomainSpec& GaitGraph::at_sample(long k) const {
  return domain(domain_indicator(k, grid_count(), domain_count()));
}

std::vector<ContactId> GaitGraph::swing_legs(int zeta) const {
  std::vector<ContactId> legs;
  const auto& d = domain(zeta);
  for (auto c : kAllContacts)
    if (!d.is_active(c)) legs.push_back(c);
  return legs;
}

Eigen::Vector2d GaitGraph::liftoff(int zeta, ContactId leg) const {
  for (int z = zeta; z >= 1; --z)
    if (domain(z).is_active(leg)) return domain(z).foothold(leg);
  throw std::logic_error(std::string("leg never in stance before domain: ") + short_name(leg));
}

Eigen::Vector2d GaitGraph::touchdown(int zeta, ContactId leg) const {
  for (int z = zeta; z <= domain_count(); ++z)
    if (domain(z).is_active(leg)) return domain(z).foothold(leg);
  throw std::logic_error(std::string("leg never lands after domain: ") + short_name(leg));
}

Eigen::Vector2d GaitGraph::initial_centroid() const {
  return domain(1).contact_coords.rowwise().mean();
}

Eigen::Vector2d GaitGraph::final_centroid() const {
  return domain(domain_count()).contact_coords.rowwise().mean();
}

void GaitGraph::validate() const {
  if (domains.empty()) throw std::invalid_argument("GaitGraph: no domains");
  for (const auto& d : domains) {
    d.validate();
    if (d.grid_count != grid_count()) throw std::invalid_argument("GaitGraph: non-uniform grid_count");
  }
  // Swing endpoints are looked up from neighbouring stance domains.
  for (auto c : kAllContacts) {
    bool seen = false;
    for (const auto& d : domains) seen = seen || d.is_active(c);
    if (!seen) throw std::invalid_argument("GaitGraph: a leg is never in stance");
  }
}

int domain_indicator(long k, int grid_count, int domain_count) {
  if (k < 0) throw std::invalid_argument("domain_indicator: negative sample index");
  if (grid_count < 1 || domain_count < 1) throw std::invalid_argument("domain_indicator: bad sizes");
  if (k >= static_cast<long>(grid_count) * domain_count) return domain_count;
  return static_cast<int>(k / grid_count) + 1;
}

GaitGraph build_trot_graph(GaitDirection direction, const Eigen::Vector2d& step, int domain_count,
                           int grid_count, const StanceGeometry& stance) {
  if (domain_count < 3) throw std::invalid_argument("build_trot_graph: need at least 3 domains");
  if (!step.allFinite()) throw std::invalid_argument("build_trot_graph: non-finite step");
  if (grid_count < 1) throw std::invalid_argument("build_trot_graph: grid_count must be >= 1");

  std::array<Eigen::Vector2d, 4> feet;
  for (auto c : kAllContacts) feet[index_of(c)] = stance.corner(c);

  auto make_domain = [&](const std::vector<ContactId>& active) {
    DomainSpec d;
    d.active = active;
    d.grid_count = grid_count;
    d.contact_coords.resize(2, static_cast<Eigen::Index>(active.size()));
    for (std::size_t i = 0; i < active.size(); ++i)
      d.contact_coords.col(static_cast<Eigen::Index>(i)) = feet[index_of(active[i])];
    return d;
  };

  const std::vector<ContactId> all(kAllContacts.begin(), kAllContacts.end());
  const std::vector<ContactId> pair_a = {ContactId::FrontLeft, ContactId::RearRight};
  const std::vector<ContactId> pair_b = {ContactId::FrontRight, ContactId::RearLeft};

  GaitGraph g;
  g.direction = direction;
  g.step = step;
  g.domains.push_back(make_domain(all));
  for (int zeta = 2; zeta < domain_count; ++zeta) {
    const auto& stance_pair = (zeta % 2 == 0) ? pair_a : pair_b;
    const auto& swing_pair = (zeta % 2 == 0) ? pair_b : pair_a;
    g.domains.push_back(make_domain(stance_pair));
    for (auto c : swing_pair) feet[index_of(c)] += step;
  }
  g.domains.push_back(make_domain(all));
  g.validate();
  return g;
}

bool CopParametrization::admits(const Eigen::VectorXd& lambda, double tol) const {
  if (lambda.size() != size()) return false;
  return lambda.minCoeff() >= -tol && lambda.maxCoeff() <= 1 + tol && std::abs(lambda.sum() - 1) <= tol;
}

CopParametrization cop_parametrization(const DomainSpec& spec) {
  spec.validate();
  return {spec.contact_coords};
}

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; collinear points are dropped. Returns the hull in
// counter-clockwise order (possibly a single point or a segment).
std::vector<Eigen::Vector2d> convex_hull(const Eigen::Matrix2Xd& points) {
  std::vector<Eigen::Vector2d> pts;
  for (Eigen::Index i = 0; i < points.cols(); ++i) pts.emplace_back(points.col(i));
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return (a - b).norm() < 1e-14; }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 1e-15) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 1e-15) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

Eigen::Vector2d project_onto_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                     const Eigen::Vector2d& u) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0) return a;
  const double t = std::clamp((u - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

}  // namespace

Eigen::Vector2d project_onto_hull(const Eigen::Matrix2Xd& points, const Eigen::Vector2d& u) {
  if (points.cols() == 0) throw std::invalid_argument("project_onto_hull: no points");
  const auto hull = convex_hull(points);
  if (hull.size() == 1) return hull.front();
  if (hull.size() == 2) return project_onto_segment(hull[0], hull[1], u);
  bool inside = true;
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], u) < 0) inside = false;
  if (inside) return u;
  Eigen::Vector2d best = hull.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Eigen::Vector2d p = project_onto_segment(hull[i], hull[(i + 1) % hull.size()], u);
    const double d = (p - u).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

Eigen::VectorXd barycentric_weights(const Eigen::Matrix2Xd& points, const Eigen::Vector2d& p) {
  const auto nc = points.cols();
  if (nc == 1) return Eigen::VectorXd::Ones(1);
  // minimize 1/2 |lambda - 1/nc|^2  s.t.  C lambda = p, 1'lambda = 1, 0 <= lambda <= 1.
  // Rows of [C; 1'] that are linearly dependent (collinear footholds) are
  // dropped to keep the equality block full rank.
  Eigen::MatrixXd eq(3, nc);
  eq.topRows<2>() = points;
  eq.row(2).setOnes();
  Eigen::Vector3d rhs(p.x(), p.y(), 1.0);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(eq.transpose());
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  Eigen::MatrixXd eq_red(rank, nc);
  Eigen::VectorXd rhs_red(rank);
  for (Eigen::Index i = 0; i < rank; ++i) {
    const auto row = qr.colsPermutation().indices()(i);
    eq_red.row(i) = eq.row(row);
    rhs_red(i) = rhs(row);
  }

  auto qp = QpProblemd::unconstrained(nc);
  qp.hessian = Eigen::MatrixXd::Identity(nc, nc);
  qp.linear_cost = Eigen::VectorXd::Constant(nc, -1.0 / static_cast<double>(nc));
  qp.eq_matrix = eq_red;
  qp.eq_rhs = rhs_red;
  qp.lower = Eigen::VectorXd::Zero(nc);
  qp.upper = Eigen::VectorXd::Ones(nc);
  const auto sol = solve_qp(qp, {1e-12, 100});
  Eigen::VectorXd lambda = sol.x_star.cwiseMax(0.0).cwiseMin(1.0);
  lambda /= lambda.sum();
  return lambda;
}

HullMembership hull_membership(const DomainSpec& spec, const Eigen::Vector2d& u, double tol) {
  spec.validate();
  HullMembership m;
  m.nearest = project_onto_hull(spec.contact_coords, u);
  m.distance = (u - m.nearest).norm();
  m.inside = m.distance <= tol;
  if (m.inside) {
    m.witness = barycentric_weights(spec.contact_coords, m.nearest);
  } else {
    m.normal = (u - m.nearest) / m.distance;
    m.offset = m.normal.dot(m.nearest);
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json gait_to_json(const GaitGraph& graph) {
  using nlohmann::json;
  json doc;
  doc["format"] = "hloco.gait.v1";
  doc["direction"] = to_string(graph.direction);
  doc["step"] = {graph.step.x(), graph.step.y()};
  doc["domain_count"] = graph.domain_count();
  doc["grid_count"] = graph.grid_count();
  json domains = json::array();
  for (const auto& d : graph.domains) {
    json jd;
    json active = json::array();
    json coords = json::array();
    for (std::size_t i = 0; i < d.active.size(); ++i) {
      active.push_back(short_name(d.active[i]));
      const auto col = d.contact_coords.col(static_cast<Eigen::Index>(i));
      coords.push_back({col.x(), col.y()});
    }
    jd["active"] = active;
    jd["contact_coords"] = coords;
    domains.push_back(jd);
  }
  doc["domains"] = domains;
  return doc;
}

GaitGraph gait_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "hloco.gait.v1") throw std::invalid_argument("gait json: unknown format");
  GaitGraph g;
  g.direction = direction_from_name(doc.at("direction").get<std::string>());
  g.step = {doc.at("step").at(0).get<double>(), doc.at("step").at(1).get<double>()};
  const int grid = doc.at("grid_count").get<int>();
  for (const auto& jd : doc.at("domains")) {
    DomainSpec d;
    d.grid_count = grid;
    const auto& active = jd.at("active");
    const auto& coords = jd.at("contact_coords");
    if (active.size() != coords.size()) throw std::invalid_argument("gait json: active/coords mismatch");
    d.contact_coords.resize(2, static_cast<Eigen::Index>(active.size()));
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto c = contact_from_name(active[i].get<std::string>());
      if (!c) throw std::invalid_argument("gait json: unknown leg name");
      d.active.push_back(*c);
      d.contact_coords.col(static_cast<Eigen::Index>(i)) << coords[i].at(0).get<double>(),
          coords[i].at(1).get<double>();
    }
    g.domains.push_back(std::move(d));
  }
  if (doc.contains("domain_count") && doc.at("domain_count").get<int>() != g.domain_count())
    throw std::invalid_argument("gait json: domain_count mismatch");
  g.validate();
  return g;
}

void write_gait_json(const GaitGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << gait_to_json(graph).dump(2) << '\n';
}

GaitGraph read_gait_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return gait_from_json(nlohmann::json::parse(in));
}

}  // namespace hloco
