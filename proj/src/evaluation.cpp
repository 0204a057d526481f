#include "othin/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace othin {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ClassCounts {
  std::size_t anomalies = 0;
  std::size_t inliers = 0;
};

ClassCounts check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  ClassCounts c;
  for (int l : labels) {
    if (l == 1) ++c.anomalies;
    else if (l == 0) ++c.inliers;
    else throw std::invalid_argument("labels must be 0 or 1");
  }
  if (c.anomalies == 0 || c.inliers == 0) throw std::invalid_argument("both classes must be present");
  return c;
}

DetectionMetrics make_metrics(double pd, double pf, double tau) {
  return DetectionMetrics{pd, pf, 1.0 - pd + pf, tau};
}

}  // namespace

DetectionMetrics detection_rates(std::span<const double> scores, std::span<const int> labels, double tau) {
  const ClassCounts c = check_inputs(scores, labels);
  std::size_t hits = 0, false_alarms = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > tau) (labels[i] == 1 ? hits : false_alarms)++;
  }
  return make_metrics(static_cast<double>(hits) / static_cast<double>(c.anomalies),
                      static_cast<double>(false_alarms) / static_cast<double>(c.inliers), tau);
}

DetectionMetrics best_threshold(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk thresholds from -inf upward; "above" counts shrink as tau passes scores.
  std::size_t above_anom = c.anomalies, above_in = c.inliers;
  const double na = static_cast<double>(c.anomalies), ni = static_cast<double>(c.inliers);
  DetectionMetrics best = make_metrics(1.0, 1.0, -kInf);
  auto consider = [&](double tau) {
    const DetectionMetrics m = make_metrics(static_cast<double>(above_anom) / na, static_cast<double>(above_in) / ni, tau);
    if (m.detection_error <= best.detection_error) best = m;  // later = larger tau wins ties
  };
  std::size_t i = 0;
  while (i < order.size()) {
    const double v = scores[order[i]];
    while (i < order.size() && scores[order[i]] == v) {
      (labels[order[i]] == 1 ? above_anom : above_in)--;
      ++i;
    }
    if (i < order.size()) {
      consider(0.5 * (v + scores[order[i]]));
    }
  }
  above_anom = 0;
  above_in = 0;
  consider(kInf);
  return best;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const ClassCounts c = check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double v = scores[order[i]];
    while (i < order.size() && scores[order[i]] == v) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(c.inliers),
                     static_cast<double>(tp) / static_cast<double>(c.anomalies)});
  }
  return curve;
}

double auc(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].p_f - curve[i - 1].p_f) * 0.5 * (curve[i].p_d + curve[i - 1].p_d);
  }
  return area;
}

// ---------------------------------------------------------------------------

TrialResult run_trial_on_data(const SyntheticData& data, Eigen::Index train_count, const EngineConfig& engine_cfg,
                              Eigen::Index batch_size) {
  using Clock = std::chrono::steady_clock;
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  const auto start = Clock::now();
  ThinningEngine engine = ThinningEngine::train(data.data.leftCols(train_count), engine_cfg);

  TrialResult out;
  const Eigen::Index total = data.data.cols();
  Eigen::Index next = train_count;
  std::int64_t t = 0;
  BatchSource source = [&]() -> std::optional<ObservationBatch> {
    if (next >= total) return std::nullopt;
    const Eigen::Index n = std::min(batch_size, total - next);
    ObservationBatch b{t++, data.data.middleCols(next, n)};
    next += n;
    return b;
  };
  out.scores.reserve(static_cast<std::size_t>(total - train_count));
  out.summary = run_stream(engine, source, {}, [&](const ScoredObservation& so) { out.scores.push_back(so.score); });
  out.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  out.labels.assign(data.labels.begin() + train_count, data.labels.end());
  out.best = best_threshold(out.scores, out.labels);
  const auto curve = roc_curve(out.scores, out.labels);
  out.auc = auc(curve);
  return out;
}

TrialResult run_synthetic_trial(const SyntheticConfig& data_cfg, const EngineConfig& engine, Eigen::Index batch_size) {
  const SyntheticData data = gen_synthetic(data_cfg);
  return run_trial_on_data(data, data_cfg.train_count, engine, batch_size);
}

std::vector<SweepRow> tradeoff_sweep(SweepKind kind, std::span<const double> grid, const SweepBase& base) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  if (base.seeds < 1) throw std::invalid_argument("sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (double value : grid) {
    SweepRow row;
    row.value = value;
    row.delta = base.data.rotation_speed;
    std::vector<double> errors;
    double wall = 0.0, area = 0.0;
    for (int seed = 0; seed < base.seeds; ++seed) {
      SyntheticConfig dc = base.data;
      dc.seed = static_cast<std::uint64_t>(seed);
      EngineConfig ec = base.engine;
      ec.seed = static_cast<std::uint64_t>(seed);
      Eigen::Index batch = base.batch_size;
      if (kind == SweepKind::Subsample) {
        ec.subsample_rate = value;
      } else {
        batch = static_cast<Eigen::Index>(std::llround(value));
      }
      const TrialResult tr = run_synthetic_trial(dc, ec, batch);
      errors.push_back(tr.best.detection_error);
      wall += tr.wall_seconds;
      area += tr.auc;
    }
    const double n = static_cast<double>(errors.size());
    row.detection_error = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
    double var = 0.0;
    for (double e : errors) var += (e - row.detection_error) * (e - row.detection_error);
    row.detection_error_sd = errors.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    row.wall_seconds = wall / n;
    row.auc = area / n;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows, SweepKind kind) {
  out << (kind == SweepKind::Subsample ? "subsample_rate" : "batch_size")
      << ",delta,detection_error,detection_error_sd,auc,wall_seconds\n";
  for (const auto& r : rows) {
    out << r.value << ',' << r.delta << ',' << r.detection_error << ',' << r.detection_error_sd << ',' << r.auc << ','
        << r.wall_seconds << '\n';
  }
}

}  // namespace othin
