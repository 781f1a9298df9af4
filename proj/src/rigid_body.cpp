#include "hloco/rigid_body.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hloco {

namespace {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

enum class JointType { Prismatic, Revolute };

struct TreeJoint {
  int parent{-1};
  JointType type{JointType::Revolute};
  Eigen::Vector3d axis;
  Eigen::Vector3d offset;  // joint origin in the parent body frame
  int vidx{0};
  LinkParams link;
};

struct Tree {
  std::array<TreeJoint, kNumDof> joints;
  std::array<int, 4> foot_body{};
  std::array<Eigen::Vector3d, 4> foot_offset;
};

LinkParams massless() {
  LinkParams l;
  l.mass = 0;
  l.inertia.setZero();
  return l;
}

Tree build_tree(const RobotModel& m) {
  Tree t;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d zero = Eigen::Vector3d::Zero();
  t.joints[0] = {-1, JointType::Prismatic, ex, zero, 0, massless()};
  t.joints[1] = {0, JointType::Prismatic, ey, zero, 1, massless()};
  t.joints[2] = {1, JointType::Prismatic, ez, zero, 2, massless()};
  t.joints[3] = {2, JointType::Revolute, ez, zero, 5, massless()};  // yaw
  t.joints[4] = {3, JointType::Revolute, ey, zero, 4, massless()};  // pitch
  t.joints[5] = {4, JointType::Revolute, ex, zero, 3, m.torso};     // roll carries the torso
  for (int l = 0; l < 4; ++l) {
    const auto& leg = m.legs[static_cast<std::size_t>(l)];
    const int a = kBaseDof + 3 * l;
    t.joints[a] = {5, JointType::Revolute, ex, leg.hip_offset, a, leg.abad};
    t.joints[a + 1] = {a, JointType::Revolute, ey, leg.hip_joint, a + 1, leg.thigh};
    t.joints[a + 2] = {a + 1, JointType::Revolute, ey, leg.knee_joint, a + 2, leg.shank};
    t.foot_body[l] = a + 2;
    t.foot_offset[l] = leg.foot;
  }
  return t;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

// Plucker transform from parent to child coordinates: rotation E (parent to
// child), child origin at r in parent coordinates.
Matrix6d plux(const Eigen::Matrix3d& e, const Eigen::Vector3d& r) {
  Matrix6d x = Matrix6d::Zero();
  x.topLeftCorner<3, 3>() = e;
  x.bottomRightCorner<3, 3>() = e;
  x.bottomLeftCorner<3, 3>() = -e * skew(r);
  return x;
}

Matrix6d crm(const Vector6d& v) {
  Matrix6d m = Matrix6d::Zero();
  m.topLeftCorner<3, 3>() = skew(v.head<3>());
  m.bottomRightCorner<3, 3>() = skew(v.head<3>());
  m.bottomLeftCorner<3, 3>() = skew(v.tail<3>());
  return m;
}

Matrix6d crf(const Vector6d& v) { return -crm(v).transpose(); }

Matrix6d spatial_inertia(const LinkParams& l) {
  const Eigen::Matrix3d c = skew(l.com);
  Matrix6d i;
  i.topLeftCorner<3, 3>() = l.inertia + l.mass * c * c.transpose();
  i.topRightCorner<3, 3>() = l.mass * c;
  i.bottomLeftCorner<3, 3>() = l.mass * c.transpose();
  i.bottomRightCorner<3, 3>() = l.mass * Eigen::Matrix3d::Identity();
  return i;
}

Vector6d motion_subspace(const TreeJoint& j) {
  Vector6d s = Vector6d::Zero();
  if (j.type == JointType::Revolute)
    s.head<3>() = j.axis;
  else
    s.tail<3>() = j.axis;
  return s;
}

Matrix6d joint_transform(const TreeJoint& j, double q) {
  if (j.type == JointType::Revolute) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(q, j.axis).toRotationMatrix();
    return plux(r.transpose(), j.offset);
  }
  return plux(Eigen::Matrix3d::Identity(), j.offset + j.axis * q);
}

struct Frames {
  std::array<Eigen::Matrix3d, kNumDof> rot;  // body to world
  std::array<Eigen::Vector3d, kNumDof> origin;
  std::array<Eigen::Vector3d, kNumDof> axis;  // world joint axis
  std::array<Eigen::Vector3d, kNumDof> omega;
  std::array<Eigen::Vector3d, kNumDof> vel;  // origin velocity
};

Frames world_frames(const Tree& t, const Vector18d& q, const Vector18d& qd) {
  Frames f;
  for (int i = 0; i < kNumDof; ++i) {
    const auto& j = t.joints[i];
    const Eigen::Matrix3d rp = j.parent < 0 ? Eigen::Matrix3d::Identity() : f.rot[j.parent];
    const Eigen::Vector3d op = j.parent < 0 ? Eigen::Vector3d::Zero() : f.origin[j.parent];
    const Eigen::Vector3d wp = j.parent < 0 ? Eigen::Vector3d::Zero() : f.omega[j.parent];
    const Eigen::Vector3d vp = j.parent < 0 ? Eigen::Vector3d::Zero() : f.vel[j.parent];
    const double qi = q(j.vidx), qdi = qd(j.vidx);
    f.axis[i] = rp * j.axis;
    if (j.type == JointType::Revolute) {
      f.rot[i] = rp * Eigen::AngleAxisd(qi, j.axis).toRotationMatrix();
      f.origin[i] = op + rp * j.offset;
      f.omega[i] = wp + f.axis[i] * qdi;
      f.vel[i] = vp + wp.cross(f.origin[i] - op);
    } else {
      f.rot[i] = rp;
      f.origin[i] = op + rp * (j.offset + j.axis * qi);
      f.omega[i] = wp;
      f.vel[i] = vp + wp.cross(f.origin[i] - op) + f.axis[i] * qdi;
    }
  }
  return f;
}

struct PointTerms {
  Eigen::Vector3d position;
  Eigen::Vector3d velocity;
  Matrix3x18d jacobian;
  Eigen::Vector3d drift;
};

PointTerms point_terms(const Tree& t, const Frames& f, const Vector18d& qd, int body, const Eigen::Vector3d& local) {
  PointTerms pt;
  pt.position = f.origin[body] + f.rot[body] * local;
  pt.velocity = f.vel[body] + f.omega[body].cross(pt.position - f.origin[body]);
  pt.jacobian.setZero();
  pt.drift.setZero();
  for (int j = body; j >= 0; j = t.joints[j].parent) {
    const auto& jt = t.joints[j];
    const int p = jt.parent;
    const Eigen::Vector3d wp = p < 0 ? Eigen::Vector3d::Zero() : f.omega[p];
    const Eigen::Vector3d zdot = wp.cross(f.axis[j]);
    const double qdj = qd(jt.vidx);
    if (jt.type == JointType::Revolute) {
      const Eigen::Vector3d r = pt.position - f.origin[j];
      pt.jacobian.col(jt.vidx) = f.axis[j].cross(r);
      pt.drift += (zdot.cross(r) + f.axis[j].cross(pt.velocity - f.vel[j])) * qdj;
    } else {
      pt.jacobian.col(jt.vidx) = f.axis[j];
      pt.drift += zdot * qdj;
    }
  }
  return pt;
}

std::array<Matrix6d, kNumDof> parent_transforms(const Tree& t, const Vector18d& q) {
  std::array<Matrix6d, kNumDof> x;
  for (int i = 0; i < kNumDof; ++i) x[i] = joint_transform(t.joints[i], q(t.joints[i].vidx));
  return x;
}

// ---- JSON helpers

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("robot model: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json link_json(const LinkParams& l) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({l.inertia(r, 0), l.inertia(r, 1), l.inertia(r, 2)});
  return {{"mass", l.mass}, {"com", vec_json(l.com)}, {"inertia", rows}};
}

LinkParams link_from(const nlohmann::json& j) {
  LinkParams l;
  l.mass = j.at("mass").get<double>();
  l.com = vec_from(j.at("com"));
  const auto& rows = j.at("inertia");
  if (!rows.is_array() || rows.size() != 3) throw std::invalid_argument("robot model: inertia must be 3x3");
  for (int r = 0; r < 3; ++r) l.inertia.row(r) = vec_from(rows[static_cast<std::size_t>(r)]).transpose();
  return l;
}

LinkParams rod(double mass, double length) {
  LinkParams l;
  l.mass = mass;
  l.com = {0, 0, -length / 2};
  const double i = mass * length * length / 12;
  l.inertia = Eigen::Vector3d(i, i, 1e-4).asDiagonal();
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

double RobotModel::total_mass() const {
  double m = torso.mass;
  for (const auto& l : legs) m += l.abad.mass + l.thigh.mass + l.shank.mass;
  return m;
}

void RobotModel::validate() const {
  auto check_link = [](const LinkParams& l, const std::string& what) {
    if (!(l.mass > 0)) throw std::invalid_argument("robot model: " + what + " mass must be positive");
    if (!l.com.allFinite()) throw std::invalid_argument("robot model: " + what + " com not finite");
    if ((l.inertia - l.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("robot model: " + what + " inertia not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(l.inertia);
    if (es.eigenvalues().minCoeff() <= 0)
      throw std::invalid_argument("robot model: " + what + " inertia not positive definite");
  };
  check_link(torso, "torso");
  for (auto c : kAllContacts) {
    const auto& l = legs[static_cast<std::size_t>(index_of(c))];
    const std::string n = short_name(c);
    check_link(l.abad, n + " abad");
    check_link(l.thigh, n + " thigh");
    check_link(l.shank, n + " shank");
  }
  if ((torque_min.array() >= torque_max.array()).any())
    throw std::invalid_argument("robot model: torque_min must be below torque_max");
  if (!(pitch_limit > 0 && pitch_limit < 1.5707963267948966))
    throw std::invalid_argument("robot model: pitch limit must lie in (0, pi/2)");
}

RobotModel default_quadruped() {
  RobotModel m;
  m.name = "default_quadruped";
  m.torso.mass = 20;
  m.torso.com.setZero();
  const double lx = 0.5, ly = 0.3, lz = 0.1;
  m.torso.inertia = Eigen::Vector3d(m.torso.mass * (ly * ly + lz * lz) / 12, m.torso.mass * (lx * lx + lz * lz) / 12,
                                    m.torso.mass * (lx * lx + ly * ly) / 12)
                        .asDiagonal();
  const StanceGeometry stance;
  for (auto c : kAllContacts) {
    auto& leg = m.legs[static_cast<std::size_t>(index_of(c))];
    const Eigen::Vector2d corner = stance.corner(c);
    leg.hip_offset = {corner.x(), corner.y(), 0};
    leg.abad.mass = 1;
    leg.abad.com.setZero();
    leg.abad.inertia = Eigen::Vector3d(1e-3, 1e-3, 1e-3).asDiagonal();
    leg.hip_joint.setZero();
    leg.thigh = rod(1, 0.35);
    leg.knee_joint = {0, 0, -0.35};
    leg.shank = rod(1, 0.35);
    leg.foot = {0, 0, -0.35};
  }
  m.torque_max.setConstant(150);
  m.torque_min.setConstant(-150);
  return m;
}

nlohmann::json robot_to_json(const RobotModel& m) {
  nlohmann::json j;
  j["format"] = "hloco.robot.v1";
  j["name"] = m.name;
  j["torso"] = link_json(m.torso);
  auto& legs = j["legs"] = nlohmann::json::array();
  for (auto c : kAllContacts) {
    const auto& l = m.legs[static_cast<std::size_t>(index_of(c))];
    legs.push_back({{"name", short_name(c)},
                    {"hip_offset", vec_json(l.hip_offset)},
                    {"abad", link_json(l.abad)},
                    {"hip_joint", vec_json(l.hip_joint)},
                    {"thigh", link_json(l.thigh)},
                    {"knee_joint", vec_json(l.knee_joint)},
                    {"shank", link_json(l.shank)},
                    {"foot", vec_json(l.foot)}});
  }
  j["torque_min"] = std::vector<double>(m.torque_min.data(), m.torque_min.data() + kNumActuated);
  j["torque_max"] = std::vector<double>(m.torque_max.data(), m.torque_max.data() + kNumActuated);
  j["pitch_limit_deg"] = m.pitch_limit * 180.0 / 3.14159265358979323846;
  return j;
}

RobotModel robot_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "hloco.robot.v1") throw std::invalid_argument("robot model: unknown format");
  RobotModel m;
  m.name = doc.value("name", "quadruped");
  m.torso = link_from(doc.at("torso"));
  const auto& legs = doc.at("legs");
  if (!legs.is_array() || legs.size() != 4) throw std::invalid_argument("robot model: expected four legs");
  for (const auto& lj : legs) {
    const auto id = contact_from_name(lj.at("name").get<std::string>());
    if (!id) throw std::invalid_argument("robot model: unknown leg name");
    auto& l = m.legs[static_cast<std::size_t>(index_of(*id))];
    l.hip_offset = vec_from(lj.at("hip_offset"));
    l.abad = link_from(lj.at("abad"));
    l.hip_joint = vec_from(lj.at("hip_joint"));
    l.thigh = link_from(lj.at("thigh"));
    l.knee_joint = vec_from(lj.at("knee_joint"));
    l.shank = link_from(lj.at("shank"));
    l.foot = vec_from(lj.at("foot"));
  }
  const auto lo = doc.at("torque_min").get<std::vector<double>>();
  const auto hi = doc.at("torque_max").get<std::vector<double>>();
  if (lo.size() != kNumActuated || hi.size() != kNumActuated)
    throw std::invalid_argument("robot model: torque limits need 12 entries");
  m.torque_min = Eigen::Map<const Vector12d>(lo.data());
  m.torque_max = Eigen::Map<const Vector12d>(hi.data());
  m.pitch_limit = doc.value("pitch_limit_deg", 75.0) * 3.14159265358979323846 / 180.0;
  m.validate();
  return m;
}

RobotModel load_robot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open robot model " + path.string());
  return robot_from_json(nlohmann::json::parse(in));
}

void save_robot(const RobotModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << robot_to_json(model).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// State

void validate_state(const RobotModel& model, const FullState& s) {
  if (!s.q.allFinite() || !s.qdot.allFinite()) throw std::domain_error("state has non-finite entries");
  if (std::abs(s.q(4)) > model.pitch_limit)
    throw std::domain_error("pitch " + std::to_string(s.q(4)) + " rad beyond the guard");
}

Eigen::Matrix3d rpy_to_matrix(const Eigen::Vector3d& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

Eigen::Matrix<double, kNumDof, kNumActuated> input_matrix() {
  Eigen::Matrix<double, kNumDof, kNumActuated> u = Eigen::Matrix<double, kNumDof, kNumActuated>::Zero();
  u.bottomRows<kNumActuated>().setIdentity();
  return u;
}

// ---------------------------------------------------------------------------
// Kinematics and dynamics

Kinematics kinematics(const RobotModel& model, const FullState& state) {
  validate_state(model, state);
  const Tree t = build_tree(model);
  const Frames f = world_frames(t, state.q, state.qdot);
  Kinematics k;
  for (int l = 0; l < 4; ++l) {
    const auto pt = point_terms(t, f, state.qdot, t.foot_body[l], t.foot_offset[l]);
    k.foot_position[l] = pt.position;
    k.foot_jacobian[l] = pt.jacobian;
    k.foot_drift[l] = pt.drift;
    k.foot_velocity[l] = pt.velocity;
  }
  double mass = 0;
  k.com.setZero();
  k.com_jacobian.setZero();
  k.com_drift.setZero();
  k.com_velocity.setZero();
  for (int i = 0; i < kNumDof; ++i) {
    const double mi = t.joints[i].link.mass;
    if (mi <= 0) continue;
    const auto pt = point_terms(t, f, state.qdot, i, t.joints[i].link.com);
    k.com += mi * pt.position;
    k.com_jacobian += mi * pt.jacobian;
    k.com_drift += mi * pt.drift;
    k.com_velocity += mi * pt.velocity;
    mass += mi;
  }
  k.com /= mass;
  k.com_jacobian /= mass;
  k.com_drift /= mass;
  k.com_velocity /= mass;
  return k;
}

Matrix18d mass_matrix(const RobotModel& model, const Vector18d& q) {
  const Tree t = build_tree(model);
  const auto xup = parent_transforms(t, q);
  std::array<Matrix6d, kNumDof> ic;
  for (int i = 0; i < kNumDof; ++i) ic[i] = spatial_inertia(t.joints[i].link);
  for (int i = kNumDof - 1; i >= 0; --i) {
    const int p = t.joints[i].parent;
    if (p >= 0) ic[p] += xup[i].transpose() * ic[i] * xup[i];
  }
  Matrix18d d = Matrix18d::Zero();
  for (int i = 0; i < kNumDof; ++i) {
    const Vector6d si = motion_subspace(t.joints[i]);
    Vector6d fi = ic[i] * si;
    const int vi = t.joints[i].vidx;
    d(vi, vi) = si.dot(fi);
    int j = i;
    while (t.joints[j].parent >= 0) {
      fi = xup[j].transpose() * fi;
      j = t.joints[j].parent;
      const int vj = t.joints[j].vidx;
      d(vi, vj) = d(vj, vi) = motion_subspace(t.joints[j]).dot(fi);
    }
  }
  return d;
}

Vector18d inverse_dynamics(const RobotModel& model, const Vector18d& q, const Vector18d& qd, const Vector18d& qdd,
                           double gravity) {
  const Tree t = build_tree(model);
  const auto xup = parent_transforms(t, q);
  std::array<Vector6d, kNumDof> v, a, f;
  Vector6d a0 = Vector6d::Zero();
  a0(5) = gravity;  // base accelerates upward instead of applying gravity
  for (int i = 0; i < kNumDof; ++i) {
    const auto& j = t.joints[i];
    const Vector6d s = motion_subspace(j);
    const Vector6d vj = s * qd(j.vidx);
    if (j.parent < 0) {
      v[i] = vj;
      a[i] = xup[i] * a0 + s * qdd(j.vidx);
    } else {
      v[i] = xup[i] * v[j.parent] + vj;
      a[i] = xup[i] * a[j.parent] + s * qdd(j.vidx) + crm(v[i]) * vj;
    }
    const Matrix6d in = spatial_inertia(j.link);
    f[i] = in * a[i] + crf(v[i]) * in * v[i];
  }
  Vector18d tau;
  for (int i = kNumDof - 1; i >= 0; --i) {
    const auto& j = t.joints[i];
    tau(j.vidx) = motion_subspace(j).dot(f[i]);
    if (j.parent >= 0) f[j.parent] += xup[i].transpose() * f[i];
  }
  return tau;
}

Vector18d bias_forces(const RobotModel& model, const Vector18d& q, const Vector18d& qdot, double gravity) {
  return inverse_dynamics(model, q, qdot, Vector18d::Zero(), gravity);
}

double kinetic_energy(const RobotModel& model, const FullState& s) {
  return 0.5 * s.qdot.dot(mass_matrix(model, s.q) * s.qdot);
}

double potential_energy(const RobotModel& model, const Vector18d& q, double gravity) {
  FullState s;
  s.q = q;
  const Tree t = build_tree(model);
  const Frames f = world_frames(t, q, Vector18d::Zero());
  double pe = 0;
  for (int i = 0; i < kNumDof; ++i) {
    const auto& l = t.joints[i].link;
    if (l.mass > 0) pe += l.mass * gravity * (f.origin[i] + f.rot[i] * l.com).z();
  }
  return pe;
}

ContactBlock contact_block(const Kinematics& kin, const std::vector<ContactId>& feet) {
  ContactBlock b;
  const auto n = static_cast<Eigen::Index>(feet.size());
  b.jacobian.resize(3 * n, kNumDof);
  b.drift.resize(3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = index_of(feet[static_cast<std::size_t>(i)]);
    b.jacobian.middleRows<3>(3 * i) = kin.foot_jacobian[l];
    b.drift.segment<3>(3 * i) = kin.foot_drift[l];
  }
  return b;
}

namespace {

// Solves (J D^-1 J') x = rhs, falling back to Tikhonov regularization when the
// contact block is rank deficient.
struct ContactSchur {
  Eigen::LDLT<Matrix18d> d_ldlt;
  Eigen::MatrixXd dinv_jt;
  Eigen::MatrixXd schur;
  bool regularized{false};
  Eigen::LDLT<Eigen::MatrixXd> s_ldlt;

  ContactSchur(const Matrix18d& d, const Eigen::MatrixXd& j) : d_ldlt(d) {
    dinv_jt = d_ldlt.solve(j.transpose());
    schur = j * dinv_jt;
    if (schur.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(schur, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
      if (lo <= 1e-12 * std::max(1.0, hi)) {
        regularized = true;
        schur += 1e-10 * Eigen::MatrixXd::Identity(schur.rows(), schur.cols());
      }
    }
    s_ldlt.compute(schur);
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return s_ldlt.solve(rhs); }
};

}  // namespace

ConstrainedDynamics constrained_forward_dynamics(const RobotModel& model, const FullState& state, const Vector12d& tau,
                                                 const std::vector<ContactId>& feet, double gravity) {
  const Kinematics kin = kinematics(model, state);
  const auto blk = contact_block(kin, feet);
  const Matrix18d d = mass_matrix(model, state.q);
  const Vector18d h = bias_forces(model, state.q, state.qdot, gravity);
  const Vector18d rhs = input_matrix() * tau - h;

  ConstrainedDynamics out;
  ContactSchur sc(d, blk.jacobian);
  const Vector18d free_acc = sc.d_ldlt.solve(rhs);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(blk.jacobian.rows());
  if (f.size() > 0) f = sc.solve(-blk.drift - blk.jacobian * free_acc);
  out.qddot = free_acc + (f.size() > 0 ? Vector18d(sc.dinv_jt * f) : Vector18d::Zero());
  out.forces = Eigen::Map<const Eigen::Matrix3Xd>(f.data(), 3, static_cast<Eigen::Index>(feet.size()));
  out.regularized = sc.regularized;
  const Vector18d jt_f = f.size() > 0 ? Vector18d(blk.jacobian.transpose() * f) : Vector18d::Zero();
  out.dynamics_residual = (d * out.qddot + h - input_matrix() * tau - jt_f).norm();
  out.acceleration_residual = f.size() > 0 ? (blk.jacobian * out.qddot + blk.drift).norm() : 0.0;
  return out;
}

Vector18d impact_map(const RobotModel& model, const FullState& state, const std::vector<ContactId>& feet) {
  if (feet.empty()) return state.qdot;
  const Kinematics kin = kinematics(model, state);
  const auto blk = contact_block(kin, feet);
  ContactSchur sc(mass_matrix(model, state.q), blk.jacobian);
  const Eigen::VectorXd impulse = sc.solve(blk.jacobian * state.qdot);
  return state.qdot - sc.dinv_jt * impulse;
}

CompliantForces compliant_contact_forces(const Kinematics& kin, const GroundParams& g, const BristleState& bristle,
                                         double dt) {
  CompliantForces out;
  for (int l = 0; l < 4; ++l) {
    out.force[l].setZero();
    out.bristle[l].setZero();
    const double pen = g.height - kin.foot_position[l].z();
    if (pen <= 0) continue;
    const Eigen::Vector3d& v = kin.foot_velocity[l];
    const double fz = std::max(0.0, g.stiffness * pen - g.damping * v.z());
    out.in_contact[l] = true;
    out.force[l].z() = fz;
    if (fz <= 0) continue;
    const Eigen::Vector2d vt = v.head<2>();
    const double zmax = g.friction_coeff * fz / g.bristle_stiffness;
    Eigen::Vector2d z = (bristle[l] + dt * vt) / (1 + dt * vt.norm() / zmax);
    if (z.norm() > zmax) z *= zmax / z.norm();
    const Eigen::Vector2d zdot = (z - bristle[l]) / dt;
    Eigen::Vector2d ft = -(g.bristle_stiffness * z + g.bristle_damping * zdot);
    const double cap = g.friction_coeff * fz;
    if (ft.norm() > cap) ft *= cap / ft.norm();
    out.force[l].head<2>() = ft;
    out.bristle[l] = z;
  }
  return out;
}

StepResult integrate_step(const RobotModel& model, const FullState& state, const Vector12d& tau,
                          const ContactMode& mode, double dt, double gravity) {
  if (!(dt > 0)) throw std::invalid_argument("integrate_step: dt must be positive");
  validate_state(model, state);
  StepResult r;
  r.state = state;
  for (auto& f : r.forces) f.setZero();

  if (mode.kind == ContactModelKind::Rigid) {
    const auto cd = constrained_forward_dynamics(model, state, tau, mode.feet, gravity);
    r.qddot = cd.qddot;
    r.acceleration_residual = cd.acceleration_residual;
    r.regularized = cd.regularized;
    for (std::size_t i = 0; i < mode.feet.size(); ++i)
      r.forces[index_of(mode.feet[i])] = cd.forces.col(static_cast<Eigen::Index>(i));
    Vector18d qd = state.qdot + dt * cd.qddot;
    if (!mode.feet.empty()) {
      // Velocity projection: stance feet move toward their anchors.
      const Kinematics kin = kinematics(model, state);
      const auto blk = contact_block(kin, mode.feet);
      Eigen::VectorXd target = Eigen::VectorXd::Zero(blk.jacobian.rows());
      if (mode.anchors) {
        constexpr double beta = 0.2;
        for (std::size_t i = 0; i < mode.feet.size(); ++i)
          target.segment<3>(3 * static_cast<Eigen::Index>(i)) =
              -beta * (kin.foot_position[index_of(mode.feet[i])] - mode.anchors->col(static_cast<Eigen::Index>(i))) /
              dt;
      }
      ContactSchur sc(mass_matrix(model, state.q), blk.jacobian);
      qd -= sc.dinv_jt * sc.solve(blk.jacobian * qd - target);
    }
    r.state.qdot = qd;
  } else {
    const Kinematics kin = kinematics(model, state);
    const auto cf = compliant_contact_forces(kin, mode.ground, mode.bristle, dt);
    Vector18d gen = input_matrix() * tau - bias_forces(model, state.q, state.qdot, gravity);
    for (int l = 0; l < 4; ++l) gen += kin.foot_jacobian[l].transpose() * cf.force[l];
    r.qddot = mass_matrix(model, state.q).ldlt().solve(gen);
    r.forces = cf.force;
    r.bristle = cf.bristle;
    r.state.qdot = state.qdot + dt * r.qddot;
  }
  r.state.q = state.q + dt * r.state.qdot;
  validate_state(model, r.state);
  return r;
}

Vector18d solve_leg_ik(const RobotModel& model, const Vector18d& q_guess, const std::array<Eigen::Vector3d, 4>& feet,
                       double tol, int max_iter) {
  FullState s;
  s.q = q_guess;
  for (int it = 0; it < max_iter; ++it) {
    const Kinematics k = kinematics(model, s);
    double err = 0;
    for (auto c : kAllContacts) {
      const int l = index_of(c);
      const Eigen::Vector3d e = feet[l] - k.foot_position[l];
      err = std::max(err, e.norm());
      const int a = joint_index(c, 0);
      const Eigen::Matrix3d jl = k.foot_jacobian[l].middleCols<3>(a);
      const Eigen::Matrix3d jjt = jl * jl.transpose() + 1e-9 * Eigen::Matrix3d::Identity();
      s.q.segment<3>(a) += jl.transpose() * jjt.ldlt().solve(e);
    }
    if (err < tol) return s.q;
  }
  const Kinematics k = kinematics(model, s);
  for (int l = 0; l < 4; ++l)
    if ((feet[l] - k.foot_position[l]).norm() > 1e-8) throw std::runtime_error("solve_leg_ik: foot target unreachable");
  return s.q;
}

FullState standing_pose(const RobotModel& model, const std::array<Eigen::Vector2d, 4>& feet, double com_height) {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  for (const auto& f : feet) center += f / 4;
  FullState s;
  s.q.head<3>() << center.x(), center.y(), com_height + 0.08;
  for (auto c : kAllContacts) {
    s.q(joint_index(c, 1)) = 0.7;
    s.q(joint_index(c, 2)) = -1.4;
  }
  std::array<Eigen::Vector3d, 4> targets;
  for (int l = 0; l < 4; ++l) targets[l] = {feet[l].x(), feet[l].y(), 0};
  for (int it = 0; it < 30; ++it) {
    s.q = solve_leg_ik(model, s.q, targets);
    const Kinematics k = kinematics(model, s);
    const Eigen::Vector3d err = Eigen::Vector3d(center.x(), center.y(), com_height) - k.com;
    if (err.norm() < 1e-12) break;
    s.q.head<3>() += err;
  }
  return s;
}

}  // namespace hloco
