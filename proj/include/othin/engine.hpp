#pragma once
// Online thinning: score each incoming observation against the current
// mixture, flag those above the threshold, then update the mixture and its
// tree structure from the batch.

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "othin/mixture_tree.hpp"

namespace othin {

struct EngineConfig {
  double alpha = 0.9;
  std::optional<double> tau;        // default: 95th percentile of training scores
  std::optional<double> tol;        // default: 90th percentile of training scores / (1 - alpha)
  std::optional<double> gamma;      // default: 0.1 * tol
  int rank = 10;
  std::optional<double> noise_var;  // default: estimated by init_tree
  int k_max = 32;
  double subsample_rate = 1.0;
  std::uint64_t seed = 0;
  int init_depth = 1;
  bool freeze_model = false;        // score only; no parameter or structure updates

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

nlohmann::json config_to_json(const EngineConfig& cfg);
/// Reads the fields present in `doc` on top of `base`.
EngineConfig config_from_json(const nlohmann::json& doc, EngineConfig base = {});

struct ObservationBatch {
  std::int64_t time_index = 0;
  Matrix data;  // p x N_t, one observation per column
};

struct ScoredObservation {
  std::int64_t time_index = 0;
  Eigen::Index column_index = 0;
  double score = 0.0;
  NodeId assigned_leaf = kNoNode;  // kNoNode for quarantined columns
  bool flagged = false;
};

struct BatchResult {
  std::vector<ScoredObservation> scored;
  std::vector<Eigen::Index> thinned;  // columns with score > tau
  int splits = 0;
  int merges = 0;
};

/// -log sum_j q_j exp(ll_j) by log-sum-exp; zero-weight terms are skipped.
/// Throws InvalidModel when every weight is zero.
double mixture_score(std::span<const double> weights, std::span<const double> log_likelihoods);

/// Anomalousness score of x under the leaves of `tree`.
double score(const MixtureTree& tree, const Vector& x, const SampleMask* mask = nullptr);

/// max(rank + 1, round(rate * p)) distinct uniform indices (capped at p);
/// rate == 1 gives every index without consuming randomness.
SampleMask subsample_mask(Eigen::Index p, double rate, Eigen::Index rank, std::mt19937_64& rng);

class ThinningEngine {
 public:
  ThinningEngine(EngineConfig config, MixtureTree tree);

  /// Fits the initial tree to training columns and fills in the threshold
  /// defaults (tau, TOL, gamma) from the training scores.
  static ThinningEngine train(const Matrix& training, EngineConfig config);

  BatchResult process_batch(const ObservationBatch& batch);

  /// Scores without touching the model.
  std::vector<double> score_columns(const Matrix& data) const;

  const EngineConfig& config() const { return config_; }
  EngineConfig& config() { return config_; }
  const MixtureTree& tree() const { return tree_; }
  Eigen::Index dim() const { return tree_.dim(); }
  std::int64_t steps() const { return steps_; }

  nlohmann::json checkpoint() const;
  static ThinningEngine from_checkpoint(const nlohmann::json& doc);

 private:
  EngineConfig config_;
  MixtureTree tree_;
  std::mt19937_64 rng_;
  std::int64_t steps_ = 0;
};

struct StreamSummary {
  std::int64_t batches = 0;
  std::int64_t observations = 0;
  std::int64_t flagged = 0;
  double mean_score = 0.0;  // over finite scores
  int final_leaves = 0;
  int splits = 0;
  int merges = 0;
  double wall_seconds = 0.0;
};

using BatchSource = std::function<std::optional<ObservationBatch>()>;
using FlagSink = std::function<void(const ScoredObservation&)>;
using ScoreObserver = std::function<void(const ScoredObservation&)>;

/// Feeds every batch from `source` through the engine. Flagged observations
/// go to `sink`; every scored observation goes to `observer` when given.
/// Errors are rethrown as std::runtime_error naming the batch index.
StreamSummary run_stream(ThinningEngine& engine, const BatchSource& source, const FlagSink& sink,
                         const ScoreObserver& observer = {});

}  // namespace othin
