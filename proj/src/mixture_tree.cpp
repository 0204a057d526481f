#include "othin/mixture_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "othin/errors.hpp"

namespace othin {

const char* node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Internal: return "internal";
    case NodeKind::Leaf: return "leaf";
    case NodeKind::Virtual: return "virtual";
  }
  return "unknown";
}

NodeKind parse_node_kind(const std::string& name) {
  if (name == "internal") return NodeKind::Internal;
  if (name == "leaf") return NodeKind::Leaf;
  if (name == "virtual") return NodeKind::Virtual;
  throw std::invalid_argument("unknown node kind: " + name);
}

MixtureTree::MixtureTree(TreeParams params, Eigen::Index dim, Eigen::Index rank)
    : params_(params), dim_(dim), rank_(rank) {
  if (rank < 1 || rank >= dim) throw std::invalid_argument("tree rank must satisfy 1 <= r < p");
  if (!(params_.alpha > 0.0 && params_.alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
  if (params_.k_max < 1) throw std::invalid_argument("k_max must be at least 1");
}

const TreeNode& MixtureTree::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::out_of_range("no tree node with id " + std::to_string(id));
  return it->second;
}

TreeNode& MixtureTree::node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw std::out_of_range("no tree node with id " + std::to_string(id));
  return it->second;
}

std::vector<NodeId> MixtureTree::leaves() const {
  std::vector<NodeId> out;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::Leaf) out.push_back(id);
  }
  return out;
}

int MixtureTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(),
                                        [](const auto& kv) { return kv.second.kind == NodeKind::Leaf; }));
}

NodeId MixtureTree::insert(TreeNode node) {
  node.id = next_id_++;
  const NodeId id = node.id;
  nodes_.emplace(id, std::move(node));
  if (root_ == kNoNode) root_ = id;
  return id;
}

void MixtureTree::restore(TreeNode node, NodeId root, NodeId next_id) {
  const NodeId id = node.id;
  if (id < 0 || id >= next_id) throw std::invalid_argument("restored node id out of range");
  if (!nodes_.emplace(id, std::move(node)).second) {
    throw std::invalid_argument("duplicate node id " + std::to_string(id));
  }
  root_ = root;
  next_id_ = next_id;
}

std::array<NodeId, 2> MixtureTree::spawn_virtual_children(NodeId leaf_id) {
  const TreeNode& leaf = node(leaf_id);
  const LowRankGaussian& g = leaf.gaussian;
  const Vector offset = 0.5 * std::sqrt(g.eigs()[0]) * g.basis().col(0);
  Vector eigs = g.eigs();
  eigs[0] *= 0.5;

  std::array<NodeId, 2> ids{};
  for (int s = 0; s < 2; ++s) {
    TreeNode child;
    child.gaussian = LowRankGaussian(s == 0 ? Vector(g.mean() + offset) : Vector(g.mean() - offset),
                                     g.basis(), eigs, g.noise_var());
    child.weight = 0.5 * leaf.weight;
    child.cum_score = leaf.cum_score;
    child.tracker = leaf.tracker;
    child.kind = NodeKind::Virtual;
    child.parent = leaf_id;
    ids[static_cast<std::size_t>(s)] = insert(std::move(child));
  }
  node(leaf_id).children = ids;
  return ids;
}

void MixtureTree::split(NodeId leaf_id) {
  TreeNode& leaf = node(leaf_id);
  if (leaf.kind != NodeKind::Leaf || !leaf.has_children()) {
    throw std::logic_error("split: node is not a leaf with virtual children");
  }
  const auto kids = leaf.children;
  leaf.kind = NodeKind::Internal;
  for (NodeId k : kids) {
    node(k).kind = NodeKind::Leaf;
    spawn_virtual_children(k);
  }
}

void MixtureTree::merge(NodeId parent_id) {
  TreeNode& parent = node(parent_id);
  if (parent.kind != NodeKind::Internal) throw std::logic_error("merge: node is not internal");
  const auto kids = parent.children;
  for (NodeId k : kids) {
    if (node(k).kind != NodeKind::Leaf) throw std::logic_error("merge: children must both be leaves");
  }
  double weight = 0.0;
  for (NodeId k : kids) {
    TreeNode& child = node(k);
    for (NodeId v : child.children) nodes_.erase(v);
    child.children = {kNoNode, kNoNode};
    child.kind = NodeKind::Virtual;
    weight += child.weight;
  }
  TreeNode& p = node(parent_id);
  p.kind = NodeKind::Leaf;
  p.weight = weight;
}

bool split_condition(double eps, double tol, double gamma, int leaf_count, double leaf_score,
                     double q1, double e1, double q2, double e2) {
  if (!(eps < tol)) return false;
  const double qsum = q1 + q2;
  if (!(qsum > 0.0)) return false;
  const double children = (q1 * e1 + q2 * e2) / qsum;
  return leaf_score + gamma * leaf_count > children + gamma * (leaf_count + 1);
}

bool merge_condition(double eps, double tol, double gamma, int leaf_count, double parent_score,
                     double q1, double e1, double q2, double e2) {
  if (!(eps > tol) || leaf_count <= 1) return false;
  const double qsum = q1 + q2;
  if (!(qsum > 0.0)) return false;
  const double children = (q1 * e1 + q2 * e2) / qsum;
  return parent_score + gamma * (leaf_count - 1) < children + gamma * leaf_count;
}

bool MixtureTree::maybe_split(NodeId leaf_id) {
  const TreeNode& leaf = node(leaf_id);
  if (leaf.kind != NodeKind::Leaf || !leaf.has_children()) return false;
  const int k = leaf_count();
  if (k >= params_.k_max) return false;
  const TreeNode& a = node(leaf.children[0]);
  const TreeNode& b = node(leaf.children[1]);
  if (!split_condition(cum_error_, params_.tol, params_.gamma, k, leaf.cum_score, a.weight,
                       a.cum_score, b.weight, b.cum_score)) {
    return false;
  }
  split(leaf_id);
  return true;
}

bool MixtureTree::maybe_merge(NodeId leaf_id) {
  const TreeNode& leaf = node(leaf_id);
  if (leaf.kind != NodeKind::Leaf || leaf.parent == kNoNode) return false;
  const TreeNode& parent = node(leaf.parent);
  const TreeNode& a = node(parent.children[0]);
  const TreeNode& b = node(parent.children[1]);
  if (a.kind != NodeKind::Leaf || b.kind != NodeKind::Leaf) return false;
  if (!merge_condition(cum_error_, params_.tol, params_.gamma, leaf_count(), parent.cum_score,
                       a.weight, a.cum_score, b.weight, b.cum_score)) {
    return false;
  }
  merge(leaf.parent);
  return true;
}

std::vector<std::string> MixtureTree::invariant_violations(double weight_tol, double ortho_tol) const {
  std::vector<std::string> out;
  auto report = [&](NodeId id, const std::string& msg) {
    std::ostringstream os;
    os << "node " << id << ": " << msg;
    out.push_back(os.str());
  };
  double leaf_sum = 0.0;
  int leaves = 0;
  for (const auto& [id, n] : nodes_) {
    if (n.gaussian.orthonormality_error() > ortho_tol) report(id, "basis not orthonormal");
    switch (n.kind) {
      case NodeKind::Leaf:
        ++leaves;
        leaf_sum += n.weight;
        if (!n.has_children()) {
          report(id, "leaf without virtual children");
          break;
        }
        for (NodeId c : n.children) {
          if (!contains(c) || node(c).kind != NodeKind::Virtual) report(id, "leaf child is not virtual");
        }
        break;
      case NodeKind::Internal: {
        if (!n.has_children()) {
          report(id, "internal node without children");
          break;
        }
        double sum = 0.0;
        for (NodeId c : n.children) {
          if (!contains(c) || node(c).kind == NodeKind::Virtual) {
            report(id, "internal child missing or virtual");
            continue;
          }
          sum += node(c).weight;
        }
        if (std::abs(sum - n.weight) > weight_tol) report(id, "weight differs from children sum");
        break;
      }
      case NodeKind::Virtual:
        if (n.has_children()) report(id, "virtual node has children");
        break;
    }
    if (n.weight < 0.0 || n.weight > 1.0 + weight_tol) report(id, "weight outside [0,1]");
  }
  if (leaves < 1) out.push_back("tree has no leaves");
  if (leaves > params_.k_max) out.push_back("leaf count exceeds k_max");
  if (std::abs(leaf_sum - 1.0) > weight_tol) {
    std::ostringstream os;
    os << "leaf weights sum to " << leaf_sum;
    out.push_back(os.str());
  }
  return out;
}

// ---------------------------------------------------------------------------

NodeId argmax_node(std::span<const NodeId> ids, std::span<const double> log_likelihoods) {
  NodeId best = kNoNode;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double ll = log_likelihoods[i];
    if (best == kNoNode || ll > best_ll || (ll == best_ll && ids[i] < best)) {
      best = ids[i];
      best_ll = ll;
    }
  }
  return best;
}

NodeId assign(const MixtureTree& tree, const Vector& x, const SampleMask* mask) {
  const std::vector<NodeId> ids = tree.leaves();
  std::vector<double> ll(ids.size());
  const Vector x_obs = mask ? mask->gather(x) : Vector();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const LowRankGaussian& g = tree.node(ids[i]).gaussian;
    ll[i] = mask ? masked_log_likelihood(g, x_obs, *mask) : log_likelihood(g, x);
  }
  return argmax_node(ids, ll);
}

void update_leaf_statistics(TreeNode& node, const Matrix& assigned, Eigen::Index n_total,
                            double alpha, const SampleMask* mask) {
  const Eigen::Index n = assigned.cols();
  if (n < 1) throw std::invalid_argument("update_leaf_statistics: empty batch");
  if (n_total < n) throw std::invalid_argument("update_leaf_statistics: n_total < n");
  LowRankGaussian& g = node.gaussian;
  if (assigned.rows() != g.dim()) throw DimensionError("update_leaf_statistics: data rows != p");

  node.weight = alpha * node.weight + (1.0 - alpha) * static_cast<double>(n) / static_cast<double>(n_total);

  const Eigen::Index r = g.rank();
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector eigs = g.eigs();

  if (mask == nullptr || mask->is_full()) {
    const Matrix means = g.mean().replicate(1, n);
    const Matrix coeffs = compute_residual(g.basis(), assigned, means);
    for (Eigen::Index m = 0; m < r; ++m) {
      eigs[m] = alpha * eigs[m] + (1.0 - alpha) * coeffs.row(m).squaredNorm() * inv_n;
    }
    try {
      SubspaceUpdate up = petrels_update(g.basis(), node.tracker, assigned, means, alpha);
      g.set_basis(std::move(up.basis));
      node.tracker = std::move(up.state);
    } catch (const NumericalError&) {
      // Degenerate batch: keep the previous subspace.
    }
    g.set_mean(alpha * g.mean() + (1.0 - alpha) * assigned.rowwise().mean());
  } else {
    const Matrix x_obs = mask->gather_rows(assigned);
    const Vector mean_obs = mask->gather(g.mean());
    const Matrix means_obs = mean_obs.replicate(1, n);
    if (mask->size() >= r) {
      const Matrix coeffs = masked_projection(mask->gather_rows(g.basis()), x_obs - means_obs);
      for (Eigen::Index m = 0; m < r; ++m) {
        eigs[m] = alpha * eigs[m] + (1.0 - alpha) * coeffs.row(m).squaredNorm() * inv_n;
      }
      try {
        SubspaceUpdate up = petrels_update_masked(g.basis(), node.tracker, x_obs, means_obs, *mask, alpha);
        g.set_basis(std::move(up.basis));
        node.tracker = std::move(up.state);
      } catch (const NumericalError&) {
      }
    }
    Vector mean = g.mean();
    const Vector batch_mean = x_obs.rowwise().mean();
    const auto& idx = mask->indices();
    for (Eigen::Index k = 0; k < mask->size(); ++k) {
      double& mu = mean[idx[static_cast<std::size_t>(k)]];
      mu = alpha * mu + (1.0 - alpha) * batch_mean[k];
    }
    g.set_mean(std::move(mean));
  }
  g.set_eigs(std::move(eigs));
}

void decay_idle_leaf(TreeNode& node, double alpha) { node.weight *= alpha; }

void update_cumulative_scores(MixtureTree& tree,
                              const std::map<NodeId, std::vector<double>>& node_log_likelihoods,
                              std::span<const double> batch_scores) {
  const double alpha = tree.params().alpha;
  if (!batch_scores.empty()) {
    const double mean = std::accumulate(batch_scores.begin(), batch_scores.end(), 0.0) /
                        static_cast<double>(batch_scores.size());
    tree.set_cum_error(alpha * tree.cum_error() + mean);
  }
  for (const auto& [id, lls] : node_log_likelihoods) {
    if (lls.empty()) continue;
    double nll = 0.0;
    for (double ll : lls) nll -= ll;
    TreeNode& n = tree.node(id);
    n.cum_score = alpha * n.cum_score + nll / static_cast<double>(lls.size());
  }
}

// ---------------------------------------------------------------------------
// Initialization from training data

namespace {

struct ComponentFit {
  Vector mean;
  Matrix basis;
  Vector eigs;
  double residual_var = 0.0;
  Eigen::Index numeric_rank = 0;
};

// Leading eigenpairs of the centered second moment by block subspace
// iteration on the data (O(p n r) per sweep; the covariance is never formed).
ComponentFit fit_component(const Matrix& data, std::span<const Eigen::Index> cols, Eigen::Index r,
                           const Matrix* warm_start) {
  const Eigen::Index p = data.rows();
  const auto n = static_cast<Eigen::Index>(cols.size());
  ComponentFit fit;
  fit.mean = Vector::Zero(p);
  for (Eigen::Index c : cols) fit.mean += data.col(c);
  fit.mean /= static_cast<double>(std::max<Eigen::Index>(n, 1));

  Matrix centered(p, n);
  for (Eigen::Index k = 0; k < n; ++k) centered.col(k) = data.col(cols[static_cast<std::size_t>(k)]) - fit.mean;
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(n, 1));
  const double total_var = centered.squaredNorm() * inv_n;

  const Eigen::Index block = std::min<Eigen::Index>(p, r + std::min<Eigen::Index>(r, 8));
  Matrix q(p, block);
  int iterations = 60;
  {
    std::mt19937_64 rng(0x5eed1234ULL);
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
    if (warm_start != nullptr) {
      q.leftCols(warm_start->cols()) = *warm_start;
      iterations = 25;
    }
  }
  auto orth = [&](const Matrix& m) {
    Eigen::HouseholderQR<Matrix> qr(m);
    return Matrix(qr.householderQ() * Matrix::Identity(m.rows(), m.cols()));
  };
  q = orth(q);
  for (int it = 0; it < iterations && n > 0; ++it) q = orth(centered * (centered.transpose() * q));

  // Rayleigh-Ritz on the block.
  const Matrix proj = centered.transpose() * q;  // n x block
  Eigen::SelfAdjointEigenSolver<Matrix> eig(proj.transpose() * proj * inv_n);
  const Vector ritz = eig.eigenvalues().reverse();
  const Matrix rot = eig.eigenvectors().rowwise().reverse();
  const Matrix vecs = q * rot;

  fit.basis = vecs.leftCols(r);
  fit.eigs = ritz.head(r).cwiseMax(kMinEig);
  const double top = ritz.head(r).cwiseMax(0.0).sum();
  fit.residual_var = std::max(0.0, total_var - top) / static_cast<double>(p - r);
  const double max_ritz = std::max(ritz.maxCoeff(), 0.0);
  fit.numeric_rank = 0;
  for (Eigen::Index i = 0; i < ritz.size(); ++i) {
    if (ritz[i] > 1e-10 * max_ritz && ritz[i] > 0.0) ++fit.numeric_rank;
  }
  // Re-orthonormalize to machine precision.
  fit.basis = orthonormalize(fit.basis);
  return fit;
}

struct InitBuilder {
  const Matrix& data;
  const TreeInitConfig& config;
  MixtureTree& tree;
  Eigen::Index rank;
  double noise_var;
  double total;
  // Residual variance estimates of leaves, weighted by their point counts.
  double leaf_residual_sum = 0.0;
  double leaf_count_sum = 0.0;

  TreeNode make_node(const ComponentFit& fit, std::size_t count, NodeKind kind, NodeId parent) const {
    TreeNode n;
    n.gaussian = LowRankGaussian(fit.mean, fit.basis, fit.eigs, noise_var);
    n.weight = static_cast<double>(count) / total;
    n.tracker = TrackerState::initial(rank, config.params.tracker_init);
    if (config.warm_tracker && count > 0) {
      n.tracker.r_matrix = (static_cast<double>(count) * fit.eigs).asDiagonal();
    }
    n.kind = kind;
    n.parent = parent;
    return n;
  }

  // Splits `cols` between the two Alg.-2 seeds of `parent`, refining by
  // likelihood assignment and refitting.
  std::array<std::pair<ComponentFit, std::vector<Eigen::Index>>, 2> bisect(
      const ComponentFit& parent, std::span<const Eigen::Index> cols) const {
    std::array<ComponentFit, 2> fits;
    const Vector offset = 0.5 * std::sqrt(parent.eigs[0]) * parent.basis.col(0);
    for (int s = 0; s < 2; ++s) {
      fits[static_cast<std::size_t>(s)] = parent;
      fits[static_cast<std::size_t>(s)].mean = s == 0 ? Vector(parent.mean + offset) : Vector(parent.mean - offset);
      fits[static_cast<std::size_t>(s)].eigs[0] *= 0.5;
    }
    std::vector<int> side(cols.size(), -1);
    std::array<std::vector<Eigen::Index>, 2> members;
    Vector scratch(data.rows());
    const std::span<double> sp(scratch.data(), static_cast<std::size_t>(scratch.size()));
    for (int it = 0; it < std::max(1, config.refine_iterations); ++it) {
      const LowRankGaussian g0(fits[0].mean, fits[0].basis, fits[0].eigs, noise_var);
      const LowRankGaussian g1(fits[1].mean, fits[1].basis, fits[1].eigs, noise_var);
      const PreparedGaussian p0(g0), p1(g1);
      std::array<std::vector<Eigen::Index>, 2> next;
      std::vector<int> next_side(cols.size());
      for (std::size_t i = 0; i < cols.size(); ++i) {
        const std::span<const double> x(data.col(cols[i]).data(), static_cast<std::size_t>(data.rows()));
        const int s = p1.log_likelihood(x, sp) > p0.log_likelihood(x, sp) ? 1 : 0;
        next_side[i] = s;
        next[static_cast<std::size_t>(s)].push_back(cols[i]);
      }
      const auto min_size = static_cast<std::size_t>(rank + 1);
      if (next[0].size() < min_size || next[1].size() < min_size) {
        if (it == 0) members = std::move(next);
        break;
      }
      const bool stable = next_side == side;
      side = std::move(next_side);
      members = std::move(next);
      for (int s = 0; s < 2; ++s) {
        auto& f = fits[static_cast<std::size_t>(s)];
        f = fit_component(data, members[static_cast<std::size_t>(s)], rank, &f.basis);
      }
      if (stable) break;
    }
    return {std::make_pair(std::move(fits[0]), std::move(members[0])),
            std::make_pair(std::move(fits[1]), std::move(members[1]))};
  }

  void grow(NodeId id, const ComponentFit& fit, std::span<const Eigen::Index> cols, int depth) {
    auto halves = bisect(fit, cols);
    const bool leaf = depth >= config.init_depth;
    if (leaf) {
      leaf_residual_sum += fit.residual_var * static_cast<double>(cols.size());
      leaf_count_sum += static_cast<double>(cols.size());
    }
    std::array<NodeId, 2> kids{};
    for (int s = 0; s < 2; ++s) {
      auto& [child_fit, child_cols] = halves[static_cast<std::size_t>(s)];
      kids[static_cast<std::size_t>(s)] =
          tree.insert(make_node(child_fit, child_cols.size(), leaf ? NodeKind::Virtual : NodeKind::Leaf, id));
    }
    TreeNode& self = tree.node(id);
    self.children = kids;
    if (!leaf) {
      self.kind = NodeKind::Internal;
      for (int s = 0; s < 2; ++s) {
        auto& [child_fit, child_cols] = halves[static_cast<std::size_t>(s)];
        grow(kids[static_cast<std::size_t>(s)], child_fit, child_cols, depth + 1);
      }
    }
  }
};

}  // namespace

MixtureTree init_tree(const Matrix& training, const TreeInitConfig& config) {
  const Eigen::Index p = training.rows();
  const Eigen::Index n0 = training.cols();
  Eigen::Index rank = config.rank;
  if (rank < 1 || rank >= p) throw std::invalid_argument("init_tree: rank must satisfy 1 <= r < p");
  if (n0 < std::max<Eigen::Index>(2 * rank, 20)) {
    throw std::invalid_argument("init_tree: need at least max(2r, 20) training observations");
  }
  if (config.init_depth < 0) throw std::invalid_argument("init_tree: init_depth must be >= 0");
  if ((1LL << std::min(config.init_depth, 40)) > config.params.k_max) {
    throw std::invalid_argument("init_tree: 2^init_depth exceeds k_max");
  }
  if (!training.allFinite()) throw NumericalError("init_tree: training data has non-finite entries");
  if (config.noise_var && !(*config.noise_var > 0.0)) {
    throw std::invalid_argument("init_tree: noise variance must be positive");
  }

  std::vector<Eigen::Index> all(static_cast<std::size_t>(n0));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  ComponentFit root_fit = fit_component(training, all, rank, nullptr);

  bool reduced = false;
  if (root_fit.numeric_rank < rank) {
    reduced = true;
    rank = std::max<Eigen::Index>(1, root_fit.numeric_rank);
    root_fit = fit_component(training, all, rank, nullptr);
  }

  double noise = 0.0;
  if (config.noise_var) {
    noise = *config.noise_var;
  } else {
    const double total_var = (training.colwise() - root_fit.mean).squaredNorm() / static_cast<double>(n0);
    noise = std::max({root_fit.residual_var, 1e-8 * total_var / static_cast<double>(p), 1e-12});
  }

  MixtureTree tree(config.params, p, rank);
  tree.set_rank_reduced(reduced);
  InitBuilder builder{training, config, tree, rank, noise, static_cast<double>(n0)};
  const NodeId root = tree.insert(builder.make_node(root_fit, all.size(), NodeKind::Leaf, kNoNode));
  builder.grow(root, root_fit, all, 0);

  if (!config.noise_var && builder.leaf_count_sum > 0.0) {
    const double total_var = (training.colwise() - root_fit.mean).squaredNorm() / static_cast<double>(n0);
    const double leaf_noise = builder.leaf_residual_sum / builder.leaf_count_sum;
    const double estimate = std::max({leaf_noise, 1e-8 * total_var / static_cast<double>(p), 1e-12});
    for (const auto& [id, n] : tree.nodes()) tree.node(id).gaussian.set_noise_var(estimate);
  }
  tree.set_cum_error(0.0);
  return tree;
}

}  // namespace othin
