#pragma once

// JSON debug dump of a QpProblem<double>.
//
// Schema "hloco.qp.v1":
//   { "format": "hloco.qp.v1",
//     "n": <int>,
//     "hessian":     {"rows": r, "cols": c, "data": [row-major values]},
//     "linear_cost": [..],
//     "eq_matrix":   {..}, "eq_rhs":   [..],
//     "ineq_matrix": {..}, "ineq_rhs": [..],
//     "lower": null | [value or null for -inf],
//     "upper": null | [value or null for +inf] }

#include <filesystem>

#include <json.hpp>

#include "hloco/qp.hpp"

namespace hloco {

nlohmann::json qp_to_json(const QpProblemd& problem);
QpProblemd qp_from_json(const nlohmann::json& doc);

void write_qp_json(const QpProblemd& problem, const std::filesystem::path& path);
QpProblemd read_qp_json(const std::filesystem::path& path);

}  // namespace hloco
