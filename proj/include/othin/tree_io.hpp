#pragma once
// Versioned JSON documents for tree checkpoints. Matrices are flattened in
// row-major order.

#include <json.hpp>

#include "othin/mixture_tree.hpp"

namespace othin {

inline constexpr int kTreeFormatVersion = 1;

nlohmann::json tree_to_json(const MixtureTree& tree);
/// Throws std::invalid_argument on an unknown version or inconsistent shapes.
MixtureTree tree_from_json(const nlohmann::json& doc);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& flat, Eigen::Index rows, Eigen::Index cols);

}  // namespace othin
