#include "hloco/qp_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace hloco {
namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::invalid_argument("qp json: matrix data size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[r * cols + c].get<double>();
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i)))
      a.push_back(v(i));
    else
      a.push_back(nullptr);
  }
  return a;
}

Eigen::VectorXd vector_from(const json& j, double null_value) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = j[i].is_null() ? null_value : j[i].get<double>();
  return v;
}

}  // namespace

json qp_to_json(const QpProblemd& p) {
  json doc;
  doc["format"] = "hloco.qp.v1";
  doc["n"] = p.num_variables();
  doc["hessian"] = matrix_json(p.hessian);
  doc["linear_cost"] = vector_json(p.linear_cost);
  doc["eq_matrix"] = matrix_json(p.eq_matrix);
  doc["eq_rhs"] = vector_json(p.eq_rhs);
  doc["ineq_matrix"] = matrix_json(p.ineq_matrix);
  doc["ineq_rhs"] = vector_json(p.ineq_rhs);
  doc["lower"] = p.lower ? vector_json(*p.lower) : json(nullptr);
  doc["upper"] = p.upper ? vector_json(*p.upper) : json(nullptr);
  return doc;
}

QpProblemd qp_from_json(const json& doc) {
  if (doc.value("format", "") != "hloco.qp.v1") throw std::invalid_argument("qp json: unknown format");
  constexpr double inf = std::numeric_limits<double>::infinity();
  QpProblemd p;
  p.hessian = matrix_from(doc.at("hessian"));
  p.linear_cost = vector_from(doc.at("linear_cost"), 0.0);
  p.eq_matrix = matrix_from(doc.at("eq_matrix"));
  p.eq_rhs = vector_from(doc.at("eq_rhs"), 0.0);
  p.ineq_matrix = matrix_from(doc.at("ineq_matrix"));
  p.ineq_rhs = vector_from(doc.at("ineq_rhs"), 0.0);
  if (!doc.at("lower").is_null()) p.lower = vector_from(doc.at("lower"), -inf);
  if (!doc.at("upper").is_null()) p.upper = vector_from(doc.at("upper"), inf);
  validate(p);
  return p;
}

void write_qp_json(const QpProblemd& problem, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << qp_to_json(problem).dump(2) << '\n';
}

QpProblemd read_qp_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return qp_from_json(json::parse(in));
}

}  // namespace hloco
