#include "othin/tree_io.hpp"

#include <stdexcept>

namespace othin {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json flat = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  }
  return flat;
}

Matrix matrix_from_json(const nlohmann::json& flat, Eigen::Index rows, Eigen::Index cols) {
  if (!flat.is_array() || static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw std::invalid_argument("matrix has wrong number of entries");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[k++].get<double>();
  }
  return m;
}

nlohmann::json tree_to_json(const MixtureTree& tree) {
  nlohmann::json doc;
  doc["format"] = "othin-tree";
  doc["version"] = kTreeFormatVersion;
  doc["p"] = tree.dim();
  doc["rank"] = tree.rank();
  doc["cum_error"] = tree.cum_error();
  doc["root"] = tree.root();
  doc["next_id"] = tree.next_id();
  doc["rank_reduced"] = tree.rank_reduced();
  const TreeParams& prm = tree.params();
  doc["params"] = {{"alpha", prm.alpha}, {"tol", prm.tol}, {"gamma", prm.gamma},
                   {"k_max", prm.k_max}, {"tracker_init", prm.tracker_init}};
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [id, n] : tree.nodes()) {
    nlohmann::json j;
    j["id"] = id;
    j["kind"] = node_kind_name(n.kind);
    j["parent"] = n.parent;
    j["children"] = n.has_children() ? nlohmann::json::array({n.children[0], n.children[1]})
                                     : nlohmann::json::array();
    j["weight"] = n.weight;
    j["cum_score"] = n.cum_score;
    j["noise_var"] = n.gaussian.noise_var();
    j["mean"] = matrix_to_json(n.gaussian.mean());
    j["basis"] = matrix_to_json(n.gaussian.basis());
    j["eigs"] = matrix_to_json(n.gaussian.eigs());
    j["tracker"] = matrix_to_json(n.tracker.r_matrix);
    j["tracker_init"] = n.tracker.init_scale;
    nodes.push_back(std::move(j));
  }
  doc["nodes"] = std::move(nodes);
  return doc;
}

MixtureTree tree_from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != "othin-tree") throw std::invalid_argument("not an othin tree document");
  if (doc.at("version").get<int>() != kTreeFormatVersion) {
    throw std::invalid_argument("unsupported tree document version");
  }
  const auto p = doc.at("p").get<Eigen::Index>();
  const auto r = doc.at("rank").get<Eigen::Index>();
  const auto& pj = doc.at("params");
  TreeParams prm;
  prm.alpha = pj.at("alpha").get<double>();
  prm.tol = pj.at("tol").get<double>();
  prm.gamma = pj.at("gamma").get<double>();
  prm.k_max = pj.at("k_max").get<int>();
  prm.tracker_init = pj.at("tracker_init").get<double>();

  MixtureTree tree(prm, p, r);
  tree.set_cum_error(doc.at("cum_error").get<double>());
  tree.set_rank_reduced(doc.value("rank_reduced", false));
  const auto root = doc.at("root").get<NodeId>();
  const auto next_id = doc.at("next_id").get<NodeId>();
  for (const auto& j : doc.at("nodes")) {
    TreeNode n;
    n.id = j.at("id").get<NodeId>();
    n.kind = parse_node_kind(j.at("kind").get<std::string>());
    n.parent = j.at("parent").get<NodeId>();
    const auto& kids = j.at("children");
    if (kids.size() == 2) {
      n.children = {kids[0].get<NodeId>(), kids[1].get<NodeId>()};
    } else if (!kids.empty()) {
      throw std::invalid_argument("node must have zero or two children");
    }
    n.weight = j.at("weight").get<double>();
    n.cum_score = j.at("cum_score").get<double>();
    n.gaussian = LowRankGaussian(matrix_from_json(j.at("mean"), p, 1), matrix_from_json(j.at("basis"), p, r),
                                 matrix_from_json(j.at("eigs"), r, 1), j.at("noise_var").get<double>());
    n.tracker.r_matrix = matrix_from_json(j.at("tracker"), r, r);
    n.tracker.init_scale = j.at("tracker_init").get<double>();
    tree.restore(std::move(n), root, next_id);
  }
  return tree;
}

}  // namespace othin
