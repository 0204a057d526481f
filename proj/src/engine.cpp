#include "othin/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "othin/errors.hpp"
#include "othin/stats.hpp"
#include "othin/tree_io.hpp"

namespace othin {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Likelihood evaluator for one node under the step's coordinate mask.
class NodeScorer {
 public:
  NodeScorer(const LowRankGaussian& g, const SampleMask* mask) {
    if (mask == nullptr) {
      full_.emplace(g);
    } else {
      masked_.emplace(g, *mask);
    }
  }
  double log_likelihood(std::span<const double> x, std::span<double> scratch) const {
    return full_ ? full_->log_likelihood(x, scratch) : masked_->log_likelihood(x, scratch);
  }

 private:
  std::optional<PreparedGaussian> full_;
  std::optional<PreparedMaskedGaussian> masked_;
};

std::span<const double> column_span(const Matrix& m, Eigen::Index c) {
  return {m.col(c).data(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

void EngineConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
  if (tol && !(*tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (gamma && !(*gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (rank < 1) throw std::invalid_argument("rank must be at least 1");
  if (noise_var && !(*noise_var > 0.0)) throw std::invalid_argument("noise_var must be positive");
  if (k_max < 1) throw std::invalid_argument("k_max must be at least 1");
  if (!(subsample_rate > 0.0 && subsample_rate <= 1.0)) {
    throw std::invalid_argument("subsample_rate must be in (0,1]");
  }
  if (init_depth < 0) throw std::invalid_argument("init_depth must be non-negative");
  if (tau && std::isnan(*tau)) throw std::invalid_argument("tau must not be NaN");
}

nlohmann::json config_to_json(const EngineConfig& cfg) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    if (!v) return nullptr;
    if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
    return *v;
  };
  return {{"alpha", cfg.alpha},        {"tau", opt(cfg.tau)},
          {"tol", opt(cfg.tol)},       {"gamma", opt(cfg.gamma)},
          {"rank", cfg.rank},          {"noise_var", opt(cfg.noise_var)},
          {"k_max", cfg.k_max},        {"subsample_rate", cfg.subsample_rate},
          {"seed", cfg.seed},          {"init_depth", cfg.init_depth},
          {"freeze_model", cfg.freeze_model}};
}

EngineConfig config_from_json(const nlohmann::json& doc, EngineConfig base) {
  if (!doc.is_object()) throw std::invalid_argument("config document must be a JSON object");
  auto opt = [&](const char* key, std::optional<double>& out) {
    if (!doc.contains(key)) return;
    const auto& v = doc.at(key);
    if (v.is_null()) {
      out.reset();
    } else if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "+inf") out = kInf;
      else if (s == "-inf") out = -kInf;
      else throw std::invalid_argument(std::string("bad value for ") + key);
    } else {
      out = v.get<double>();
    }
  };
  if (doc.contains("alpha")) base.alpha = doc.at("alpha").get<double>();
  opt("tau", base.tau);
  opt("tol", base.tol);
  opt("gamma", base.gamma);
  if (doc.contains("rank")) base.rank = doc.at("rank").get<int>();
  opt("noise_var", base.noise_var);
  if (doc.contains("k_max")) base.k_max = doc.at("k_max").get<int>();
  if (doc.contains("subsample_rate")) base.subsample_rate = doc.at("subsample_rate").get<double>();
  if (doc.contains("seed")) base.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("init_depth")) base.init_depth = doc.at("init_depth").get<int>();
  if (doc.contains("freeze_model")) base.freeze_model = doc.at("freeze_model").get<bool>();
  return base;
}

double mixture_score(std::span<const double> weights, std::span<const double> log_likelihoods) {
  double top = -kInf;
  bool any = false;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!(weights[j] > 0.0)) continue;
    any = true;
    top = std::max(top, std::log(weights[j]) + log_likelihoods[j]);
  }
  if (!any) throw InvalidModel("mixture has no component with positive weight");
  if (!std::isfinite(top)) return -top;
  double acc = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (!(weights[j] > 0.0)) continue;
    acc += std::exp(std::log(weights[j]) + log_likelihoods[j] - top);
  }
  return -(top + std::log(acc));
}

double score(const MixtureTree& tree, const Vector& x, const SampleMask* mask) {
  if (x.size() != tree.dim()) throw DimensionError("score: observation length != p");
  const std::vector<NodeId> ids = tree.leaves();
  std::vector<double> w(ids.size()), ll(ids.size());
  const Vector x_obs = mask ? mask->gather(x) : Vector();
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const TreeNode& n = tree.node(ids[j]);
    w[j] = n.weight;
    ll[j] = mask ? masked_log_likelihood(n.gaussian, x_obs, *mask) : log_likelihood(n.gaussian, x);
  }
  return mixture_score(w, ll);
}

SampleMask subsample_mask(Eigen::Index p, double rate, Eigen::Index rank, std::mt19937_64& rng) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("subsample rate must be in (0,1]");
  if (rate == 1.0) return SampleMask::full(p);
  const auto target = static_cast<Eigen::Index>(std::llround(rate * static_cast<double>(p)));
  const Eigen::Index m = std::min(p, std::max(rank + 1, target));
  std::vector<std::int32_t> pool(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) pool[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  // Partial Fisher-Yates: the first m slots become a uniform m-subset.
  for (Eigen::Index i = 0; i < m; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, p - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(m));
  std::sort(pool.begin(), pool.end());
  return SampleMask(std::move(pool), p);
}

// ---------------------------------------------------------------------------

ThinningEngine::ThinningEngine(EngineConfig config, MixtureTree tree)
    : config_(std::move(config)), tree_(std::move(tree)), rng_(config_.seed) {
  config_.validate();
  if (!config_.tol || !config_.gamma) {
    throw std::invalid_argument("engine needs resolved tol and gamma (use ThinningEngine::train)");
  }
  tree_.params().alpha = config_.alpha;
  tree_.params().tol = *config_.tol;
  tree_.params().gamma = *config_.gamma;
  tree_.params().k_max = config_.k_max;
  if (!config_.tau) config_.tau = kInf;
}

ThinningEngine ThinningEngine::train(const Matrix& training, EngineConfig config) {
  config.validate();
  TreeInitConfig init;
  init.rank = config.rank;
  init.init_depth = config.init_depth;
  init.noise_var = config.noise_var;
  init.params.alpha = config.alpha;
  init.params.k_max = config.k_max;
  MixtureTree tree = init_tree(training, init);
  if (!config.noise_var) config.noise_var = tree.node(tree.root()).gaussian.noise_var();

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(training.cols()));
  const std::vector<NodeId> leaves = tree.leaves();
  std::vector<double> w, ll(leaves.size());
  std::vector<NodeScorer> scorers;
  for (NodeId id : leaves) {
    w.push_back(tree.node(id).weight);
    scorers.emplace_back(tree.node(id).gaussian, nullptr);
  }
  Vector scratch(training.rows());
  const std::span<double> sp(scratch.data(), static_cast<std::size_t>(scratch.size()));
  for (Eigen::Index c = 0; c < training.cols(); ++c) {
    for (std::size_t j = 0; j < leaves.size(); ++j) ll[j] = scorers[j].log_likelihood(column_span(training, c), sp);
    scores.push_back(mixture_score(w, ll));
  }
  if (!config.tol) config.tol = quantile(scores, 0.90) / (1.0 - config.alpha);
  if (!config.gamma) config.gamma = 0.1 * *config.tol;
  if (!config.tau) config.tau = quantile(scores, 0.95);
  return ThinningEngine(std::move(config), std::move(tree));
}

std::vector<double> ThinningEngine::score_columns(const Matrix& data) const {
  if (data.rows() != dim()) throw DimensionError("score_columns: data rows != p");
  const std::vector<NodeId> leaves = tree_.leaves();
  std::vector<double> w, ll(leaves.size()), out;
  std::vector<NodeScorer> scorers;
  for (NodeId id : leaves) {
    w.push_back(tree_.node(id).weight);
    scorers.emplace_back(tree_.node(id).gaussian, nullptr);
  }
  Vector scratch(dim());
  const std::span<double> sp(scratch.data(), static_cast<std::size_t>(scratch.size()));
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    if (!data.col(c).allFinite()) {
      out.push_back(kInf);
      continue;
    }
    for (std::size_t j = 0; j < leaves.size(); ++j) ll[j] = scorers[j].log_likelihood(column_span(data, c), sp);
    out.push_back(mixture_score(w, ll));
  }
  return out;
}

BatchResult ThinningEngine::process_batch(const ObservationBatch& batch) {
  const Matrix& x = batch.data;
  if (x.rows() != dim()) {
    throw DimensionError("batch dimension " + std::to_string(x.rows()) + " != engine dimension " +
                         std::to_string(dim()));
  }
  // The configuration may have been edited since the last batch.
  config_.validate();
  if (!config_.tol || !config_.gamma || !config_.tau) throw std::invalid_argument("engine config lost tol/gamma/tau");
  tree_.params().alpha = config_.alpha;
  tree_.params().tol = *config_.tol;
  tree_.params().gamma = *config_.gamma;
  tree_.params().k_max = config_.k_max;

  const Eigen::Index n_cols = x.cols();
  const double tau = *config_.tau;
  const double alpha = config_.alpha;

  std::optional<SampleMask> mask;
  if (config_.subsample_rate < 1.0) mask = subsample_mask(dim(), config_.subsample_rate, tree_.rank(), rng_);
  const SampleMask* mask_ptr = mask ? &*mask : nullptr;

  // --- Scoring against the frozen pre-update model ---------------------------
  const std::vector<NodeId> leaves = tree_.leaves();
  const std::size_t k = leaves.size();
  std::vector<double> weights(k);
  std::vector<NodeScorer> leaf_scorers;
  std::vector<std::array<NodeScorer, 2>> child_scorers;
  leaf_scorers.reserve(k);
  child_scorers.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    const TreeNode& leaf = tree_.node(leaves[j]);
    weights[j] = leaf.weight;
    leaf_scorers.emplace_back(leaf.gaussian, mask_ptr);
    child_scorers.push_back({NodeScorer(tree_.node(leaf.children[0]).gaussian, mask_ptr),
                             NodeScorer(tree_.node(leaf.children[1]).gaussian, mask_ptr)});
  }

  const Eigen::Index obs_len = mask ? mask->size() : dim();
  Vector x_obs(obs_len), scratch(obs_len);
  const std::span<double> sp(scratch.data(), static_cast<std::size_t>(obs_len));
  const std::span<const double> obs_span(x_obs.data(), static_cast<std::size_t>(obs_len));

  BatchResult result;
  result.scored.reserve(static_cast<std::size_t>(n_cols));
  std::vector<double> ll(k);
  std::vector<Eigen::Index> finite_cols;
  std::vector<double> finite_scores;
  std::map<NodeId, std::vector<Eigen::Index>> members;  // node -> assigned columns
  std::map<NodeId, std::vector<double>> node_lls;       // node -> log-likelihoods of its columns

  for (Eigen::Index c = 0; c < n_cols; ++c) {
    ScoredObservation so;
    so.time_index = batch.time_index;
    so.column_index = c;
    if (!x.col(c).allFinite()) {
      so.score = kInf;
      so.flagged = so.score > tau;
      result.scored.push_back(so);
      continue;
    }
    if (mask) {
      const auto& idx = mask->indices();
      for (Eigen::Index m = 0; m < obs_len; ++m) x_obs[m] = x(idx[static_cast<std::size_t>(m)], c);
    } else {
      x_obs = x.col(c);
    }
    for (std::size_t j = 0; j < k; ++j) ll[j] = leaf_scorers[j].log_likelihood(obs_span, sp);
    so.score = mixture_score(weights, ll);
    const NodeId best = argmax_node(leaves, ll);
    const auto best_pos = static_cast<std::size_t>(std::find(leaves.begin(), leaves.end(), best) - leaves.begin());
    so.assigned_leaf = best;
    so.flagged = so.score > tau;
    result.scored.push_back(so);

    finite_cols.push_back(c);
    finite_scores.push_back(so.score);
    members[best].push_back(c);
    node_lls[best].push_back(ll[best_pos]);

    const auto& kids = tree_.node(best).children;
    const std::array<double, 2> child_ll{child_scorers[best_pos][0].log_likelihood(obs_span, sp),
                                         child_scorers[best_pos][1].log_likelihood(obs_span, sp)};
    const NodeId child = argmax_node(kids, child_ll);
    members[child].push_back(c);
    node_lls[child].push_back(child_ll[child == kids[0] ? 0 : 1]);
  }
  for (const auto& so : result.scored) {
    if (so.flagged) result.thinned.push_back(so.column_index);
  }
  ++steps_;
  if (config_.freeze_model || finite_cols.empty()) return result;

  // --- Ancestors see the union of their descendants' columns -----------------
  for (NodeId leaf : leaves) {
    auto it = members.find(leaf);
    if (it == members.end()) continue;
    for (NodeId a = tree_.node(leaf).parent; a != kNoNode; a = tree_.node(a).parent) {
      auto& dst = members[a];
      dst.insert(dst.end(), it->second.begin(), it->second.end());
    }
  }
  for (auto& [id, cols] : members) {
    if (tree_.node(id).kind != NodeKind::Internal) continue;
    std::sort(cols.begin(), cols.end());
    const NodeScorer scorer(tree_.node(id).gaussian, mask_ptr);
    auto& lls = node_lls[id];
    for (Eigen::Index c : cols) {
      if (mask) {
        const auto& idx = mask->indices();
        for (Eigen::Index m = 0; m < obs_len; ++m) x_obs[m] = x(idx[static_cast<std::size_t>(m)], c);
      } else {
        x_obs = x.col(c);
      }
      lls.push_back(scorer.log_likelihood(obs_span, sp));
    }
  }

  // --- Cumulative scores, then node statistics --------------------------------
  update_cumulative_scores(tree_, node_lls, finite_scores);
  const auto n_total = static_cast<Eigen::Index>(finite_cols.size());
  std::vector<NodeId> all_ids;
  for (const auto& [id, n] : tree_.nodes()) all_ids.push_back(id);
  for (NodeId id : all_ids) {
    TreeNode& node = tree_.node(id);
    auto it = members.find(id);
    if (it == members.end() || it->second.empty()) {
      decay_idle_leaf(node, alpha);
      continue;
    }
    Matrix assigned(dim(), static_cast<Eigen::Index>(it->second.size()));
    for (std::size_t m = 0; m < it->second.size(); ++m) assigned.col(static_cast<Eigen::Index>(m)) = x.col(it->second[m]);
    update_leaf_statistics(node, assigned, n_total, alpha, mask_ptr);
  }

  // --- Structure: at most one change per node, ascending leaf ids -------------
  std::set<NodeId> touched;
  for (NodeId leaf : leaves) {
    if (!members.count(leaf) || touched.count(leaf)) continue;
    if (!tree_.contains(leaf) || tree_.node(leaf).kind != NodeKind::Leaf) continue;
    if (tree_.maybe_split(leaf)) {
      ++result.splits;
      touched.insert(leaf);
      continue;
    }
    const NodeId parent = tree_.node(leaf).parent;
    if (parent == kNoNode) continue;
    const auto kids = tree_.node(parent).children;
    const NodeId sibling = kids[0] == leaf ? kids[1] : kids[0];
    if (touched.count(sibling) || touched.count(parent)) continue;
    if (tree_.maybe_merge(leaf)) {
      ++result.merges;
      touched.insert({leaf, sibling, parent});
    }
  }
  return result;
}

nlohmann::json ThinningEngine::checkpoint() const {
  std::ostringstream rng_state;
  rng_state << rng_;
  return {{"format", "othin-engine"},
          {"version", 1},
          {"config", config_to_json(config_)},
          {"steps", steps_},
          {"rng", rng_state.str()},
          {"tree", tree_to_json(tree_)}};
}

ThinningEngine ThinningEngine::from_checkpoint(const nlohmann::json& doc) {
  if (doc.value("format", "") != "othin-engine") throw std::invalid_argument("not an engine checkpoint");
  if (doc.at("version").get<int>() != 1) throw std::invalid_argument("unsupported checkpoint version");
  ThinningEngine engine(config_from_json(doc.at("config")), tree_from_json(doc.at("tree")));
  engine.steps_ = doc.at("steps").get<std::int64_t>();
  std::istringstream in(doc.at("rng").get<std::string>());
  in >> engine.rng_;
  if (!in) throw std::invalid_argument("corrupt RNG state in checkpoint");
  return engine;
}

// ---------------------------------------------------------------------------

StreamSummary run_stream(ThinningEngine& engine, const BatchSource& source, const FlagSink& sink,
                         const ScoreObserver& observer) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  StreamSummary summary;
  double score_sum = 0.0;
  std::int64_t finite = 0;
  for (;;) {
    std::optional<ObservationBatch> batch;
    BatchResult res;
    try {
      batch = source();
      if (!batch) break;
      res = engine.process_batch(*batch);
      for (const auto& so : res.scored) {
        if (observer) observer(so);
        if (so.flagged && sink) sink(so);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("batch " + std::to_string(summary.batches) + ": " + e.what());
    }
    ++summary.batches;
    summary.observations += static_cast<std::int64_t>(res.scored.size());
    summary.flagged += static_cast<std::int64_t>(res.thinned.size());
    summary.splits += res.splits;
    summary.merges += res.merges;
    for (const auto& so : res.scored) {
      if (std::isfinite(so.score)) {
        score_sum += so.score;
        ++finite;
      }
    }
  }
  summary.mean_score = finite > 0 ? score_sum / static_cast<double>(finite) : 0.0;
  summary.final_leaves = engine.tree().leaf_count();
  summary.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return summary;
}

}  // namespace othin
