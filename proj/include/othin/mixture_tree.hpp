#pragma once
// Multiscale binary tree of low-rank Gaussian components.
//
// Leaves form the mixture. Every leaf carries two virtual children: candidate
// components that are tracked alongside it and become leaves when the leaf
// splits. Internal nodes summarize their subtree and are what a sibling pair
// collapses into on merge.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "othin/low_rank_gaussian.hpp"
#include "othin/subspace_tracking.hpp"

namespace othin {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class NodeKind { Internal, Leaf, Virtual };

const char* node_kind_name(NodeKind kind);
NodeKind parse_node_kind(const std::string& name);

struct TreeNode {
  NodeId id = kNoNode;
  LowRankGaussian gaussian;
  double weight = 0.0;     // q
  double cum_score = 0.0;  // e
  TrackerState tracker;
  NodeKind kind = NodeKind::Leaf;
  NodeId parent = kNoNode;
  std::array<NodeId, 2> children{kNoNode, kNoNode};

  bool has_children() const { return children[0] != kNoNode; }
};

struct TreeParams {
  double alpha = 0.9;
  double tol = 1.0;
  double gamma = 0.1;
  int k_max = 32;
  double tracker_init = kDefaultTrackerInit;
};

class MixtureTree {
 public:
  MixtureTree(TreeParams params, Eigen::Index dim, Eigen::Index rank);

  Eigen::Index dim() const { return dim_; }
  Eigen::Index rank() const { return rank_; }
  const TreeParams& params() const { return params_; }
  TreeParams& params() { return params_; }

  double cum_error() const { return cum_error_; }
  void set_cum_error(double eps) { cum_error_ = eps; }

  bool rank_reduced() const { return rank_reduced_; }
  void set_rank_reduced(bool flag) { rank_reduced_ = flag; }

  const std::map<NodeId, TreeNode>& nodes() const { return nodes_; }
  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const TreeNode& node(NodeId id) const;
  TreeNode& node(NodeId id);

  NodeId root() const { return root_; }
  NodeId next_id() const { return next_id_; }

  /// Leaf ids in ascending order.
  std::vector<NodeId> leaves() const;
  int leaf_count() const;

  /// Inserts a node, assigning it a fresh id (returned). Parent/children
  /// links are the caller's responsibility.
  NodeId insert(TreeNode node);
  /// Inserts with an explicit id (checkpoint restore).
  void restore(TreeNode node, NodeId root, NodeId next_id);
  void set_root(NodeId id) { root_ = id; }

  /// Creates two virtual children under `leaf` from its own parameters:
  /// means mu +/- sqrt(lambda_1) v_1 / 2, the first eigenvalue halved, the
  /// rest copied, weight halved. Tracker state and cumulative score are
  /// inherited from the leaf.
  std::array<NodeId, 2> spawn_virtual_children(NodeId leaf);

  /// Promotes the virtual children of `leaf` to leaves, each with fresh
  /// virtual children. No condition checks.
  void split(NodeId leaf);
  /// Collapses the two leaf children of `parent` back into it; they become its
  /// virtual children and their own virtual children are deleted.
  void merge(NodeId parent);

  /// Split if the cumulative error is below TOL, the penalized score of the
  /// leaf exceeds that of its virtual children, and K < K_max.
  bool maybe_split(NodeId leaf);
  /// Merge the leaf with its sibling if the error is above TOL, the sibling is
  /// a leaf, K > 1, and the parent's penalized score beats the pair's.
  bool maybe_merge(NodeId leaf);

  /// Empty when every structural and weight invariant holds.
  std::vector<std::string> invariant_violations(double weight_tol = 1e-9,
                                                double ortho_tol = 1e-8) const;

 private:
  TreeParams params_;
  Eigen::Index dim_;
  Eigen::Index rank_;
  std::map<NodeId, TreeNode> nodes_;
  NodeId root_ = kNoNode;
  NodeId next_id_ = 0;
  double cum_error_ = 0.0;
  bool rank_reduced_ = false;
};

// Structural decision rules, exposed for direct testing. They are strict on
// both sides of TOL: at eps == tol neither fires.
bool split_condition(double eps, double tol, double gamma, int leaf_count, double leaf_score,
                     double q1, double e1, double q2, double e2);
bool merge_condition(double eps, double tol, double gamma, int leaf_count, double parent_score,
                     double q1, double e1, double q2, double e2);

/// Index of the maximum log-likelihood; ties go to the smaller node id.
NodeId argmax_node(std::span<const NodeId> ids, std::span<const double> log_likelihoods);

/// Leaf maximizing the (masked) likelihood of x, ignoring weights. With a
/// mask, x is the full p-vector and only masked coordinates are used.
NodeId assign(const MixtureTree& tree, const Vector& x, const SampleMask* mask = nullptr);

/// Weight, mean, eigenvalue and subspace update of one node from the columns
/// assigned to it (p x n, full rows). With a mask only the masked coordinates
/// of the data are read. Coefficients are taken against the pre-update mean.
void update_leaf_statistics(TreeNode& node, const Matrix& assigned, Eigen::Index n_total,
                            double alpha, const SampleMask* mask = nullptr);

void decay_idle_leaf(TreeNode& node, double alpha);

/// eps <- alpha eps + mean(batch_scores); e_j <- alpha e_j + mean(-log p_j)
/// over each listed node's observations. Unlisted nodes keep e.
void update_cumulative_scores(MixtureTree& tree,
                              const std::map<NodeId, std::vector<double>>& node_log_likelihoods,
                              std::span<const double> batch_scores);

struct TreeInitConfig {
  Eigen::Index rank = 1;
  int init_depth = 0;
  std::optional<double> noise_var;  // estimated from the training data when empty
  int refine_iterations = 20;
  // Seeds each tracker with the information of the points it was fitted on
  // (R = n diag(lambda)) instead of params.tracker_init * ones.
  bool warm_tracker = true;
  TreeParams params;
};

/// Builds a tree from training columns (p x N0): a PCA root, recursively
/// bisected to init_depth levels with likelihood-assignment refinement, with
/// fitted virtual children under every leaf and empirical weights.
MixtureTree init_tree(const Matrix& training, const TreeInitConfig& config);

}  // namespace othin
