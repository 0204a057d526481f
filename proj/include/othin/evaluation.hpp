#pragma once
// Detection metrics, ROC curves, threshold selection, and the synthetic
// trial / sweep drivers behind the `eval` subcommand.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "othin/engine.hpp"
#include "othin/synthetic.hpp"

namespace othin {

struct DetectionMetrics {
  double p_d = 0.0;
  double p_f = 0.0;
  double detection_error = 1.0;  // 1 - p_d + p_f
  double tau_used = 0.0;
};

/// Labels are 1 for anomalies, 0 for inliers. Throws std::invalid_argument
/// on length mismatch or when either class is absent.
DetectionMetrics detection_rates(std::span<const double> scores, std::span<const int> labels, double tau);

/// Minimizes the detection error over midpoints of the sorted unique scores
/// and +/- infinity; ties go to the larger threshold.
DetectionMetrics best_threshold(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double p_f = 0.0;
  double p_d = 0.0;
};

/// Staircase from (0,0) to (1,1), one vertex per distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const RocPoint> curve);

/// Diagonal-covariance online GMM with a forgetting factor; the comparator
/// for the low-rank tree model.
class OnlineDiagonalGmm {
 public:
  OnlineDiagonalGmm(int k, double alpha, double var_floor = 1e-6);

  /// Batch EM on the training columns (deterministic farthest-point seeding).
  void fit(const Matrix& training, int iterations = 30);
  double score(const Vector& x) const;
  /// Responsibility-weighted moment updates, one observation at a time.
  void update(const Matrix& batch);

  int components() const { return k_; }
  const Matrix& means() const { return means_; }
  const Matrix& variances() const { return vars_; }
  const Vector& weights() const { return weights_; }

 private:
  Vector log_component_densities(const Vector& x) const;
  void refresh_from_stats();

  int k_;
  double alpha_;
  double var_floor_;
  Matrix means_, vars_;  // p x k
  Vector weights_;
  Vector s0_;
  Matrix s1_, s2_;
};

/// Scores of columns [train_count, N) with the model frozen per batch and
/// updated after each batch.
std::vector<double> baseline_online_gmm(const Matrix& stream, Eigen::Index train_count, int k, double alpha,
                                        Eigen::Index batch_size);

struct TrialResult {
  std::vector<double> scores;  // post-training observations only
  std::vector<int> labels;
  DetectionMetrics best;
  double auc = 0.5;
  double wall_seconds = 0.0;  // training + streaming
  StreamSummary summary;
};

/// Generates a synthetic stream, trains on the first train_count columns,
/// streams the rest in batches of batch_size, and scores the result.
TrialResult run_synthetic_trial(const SyntheticConfig& data, const EngineConfig& engine, Eigen::Index batch_size);
TrialResult run_trial_on_data(const SyntheticData& data, Eigen::Index train_count, const EngineConfig& engine,
                              Eigen::Index batch_size);

enum class SweepKind { Subsample, Batch };

struct SweepRow {
  double value = 0.0;
  double delta = 0.0;
  double detection_error = 0.0;  // mean over seeds
  double detection_error_sd = 0.0;
  double auc = 0.0;
  double wall_seconds = 0.0;     // mean over seeds
};

struct SweepBase {
  SyntheticConfig data;
  EngineConfig engine;
  Eigen::Index batch_size = 10;
  int seeds = 10;  // seeds 0 .. seeds-1
};

std::vector<SweepRow> tradeoff_sweep(SweepKind kind, std::span<const double> grid, const SweepBase& base);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows, SweepKind kind);

}  // namespace othin
