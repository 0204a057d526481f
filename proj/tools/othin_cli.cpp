// othin: online thinning of high-dimensional streams.
//
//   othin thin      score a stream, write flagged observations as JSON lines
//   othin synth     generate a labelled synthetic stream
//   othin eval      detection metrics, ROC/AUC, tradeoff sweeps, baseline comparison
//   othin anscombe  variance-stabilize count data

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "othin/data_io.hpp"
#include "othin/errors.hpp"
#include "othin/evaluation.hpp"
#include "othin/kernels.hpp"
#include "othin/synthetic.hpp"

namespace {

using othin::Matrix;
using nlohmann::json;

// Opens `path` for writing, or hands back stdout for "-" / empty.
class OutputTarget {
 public:
  explicit OutputTarget(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) throw std::runtime_error("cannot open output: " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw std::invalid_argument("bad grid value: " + item);
  }
  if (out.empty()) throw std::invalid_argument("empty grid");
  return out;
}

bool parse_number(const std::string& text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

// One numeric column: either the only column, or the one named `column` in a
// header line.
std::vector<double> read_column(const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> pick;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    double x = 0.0;
    if (!pick) {
      if (!parse_number(fields.front(), x)) {
        auto it = std::find(fields.begin(), fields.end(), column);
        if (it == fields.end()) throw std::runtime_error(path + ": no '" + column + "' column");
        pick = static_cast<std::size_t>(it - fields.begin());
        continue;
      }
      if (fields.size() != 1) throw std::runtime_error(path + ": expected one column or a header naming '" + column + "'");
      pick = 0;
    }
    if (*pick >= fields.size() || !parse_number(fields[*pick], x)) {
      throw othin::ParseError(line_no, "bad value in " + path);
    }
    out.push_back(x);
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

json metrics_json(const othin::DetectionMetrics& m) {
  return json{{"tau", std::isfinite(m.tau_used) ? json(m.tau_used) : json(format_double(m.tau_used))},
              {"p_d", m.p_d},
              {"p_f", m.p_f},
              {"detection_error", m.detection_error}};
}

// ---------------------------------------------------------------------------

struct ThinArgs {
  std::string input;
  std::string format;
  std::string config_path;
  std::string out = "-";
  std::string scores_out;
  std::string checkpoint;
  std::string resume;
  long batch_size = 1;
  long train = 1000;
  bool header = false;
  bool time_col = false;
  std::optional<double> alpha, tau, tol, gamma, noise_var, subsample_rate;
  std::optional<int> rank, k_max, init_depth;
  std::optional<std::uint64_t> seed;
};

void apply_overrides(othin::EngineConfig& cfg, const ThinArgs& a) {
  if (a.alpha) cfg.alpha = *a.alpha;
  if (a.tau) cfg.tau = *a.tau;
  if (a.tol) cfg.tol = *a.tol;
  if (a.gamma) cfg.gamma = *a.gamma;
  if (a.noise_var) cfg.noise_var = *a.noise_var;
  if (a.subsample_rate) cfg.subsample_rate = *a.subsample_rate;
  if (a.rank) cfg.rank = *a.rank;
  if (a.k_max) cfg.k_max = *a.k_max;
  if (a.init_depth) cfg.init_depth = *a.init_depth;
  if (a.seed) cfg.seed = *a.seed;
}

int run_thin(const ThinArgs& a) {
  othin::ReaderOptions ro;
  ro.format = a.format.empty() ? othin::infer_stream_format(a.input) : othin::parse_stream_format(a.format);
  ro.batch_size = a.batch_size;
  ro.header = a.header;
  ro.time_column = a.time_col;
  othin::StreamReader reader(a.input, ro);

  std::optional<othin::ThinningEngine> engine;
  if (!a.resume.empty()) {
    std::ifstream in(a.resume);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + a.resume);
    engine.emplace(othin::ThinningEngine::from_checkpoint(json::parse(in)));
    // Command-line values still take precedence over the checkpointed ones.
    apply_overrides(engine->config(), a);
    engine->config().validate();
  } else {
    othin::EngineConfig cfg;
    if (!a.config_path.empty()) {
      std::ifstream in(a.config_path);
      if (!in) throw std::runtime_error("cannot open config: " + a.config_path);
      cfg = othin::config_from_json(json::parse(in));
    }
    apply_overrides(cfg, a);
    cfg.validate();
    const Matrix training = reader.read_rows(a.train);
    if (training.cols() < a.train) {
      throw std::runtime_error("stream ended after " + std::to_string(training.cols()) + " rows; --train needs " +
                               std::to_string(a.train));
    }
    engine.emplace(othin::ThinningEngine::train(training, cfg));
  }

  OutputTarget flags(a.out);
  std::optional<OutputTarget> scores;
  if (!a.scores_out.empty()) {
    scores.emplace(a.scores_out);
    scores->stream() << "t,i,score,leaf,flagged\n";
  }
  const auto source = [&] { return reader.next(); };
  const auto sink = [&](const othin::ScoredObservation& so) { flags.stream() << othin::flag_record_json(so) << '\n'; };
  othin::ScoreObserver observer;
  if (scores) {
    observer = [&](const othin::ScoredObservation& so) {
      scores->stream() << so.time_index << ',' << so.column_index << ',' << format_double(so.score) << ','
                       << so.assigned_leaf << ',' << (so.flagged ? 1 : 0) << '\n';
    };
  }
  const auto summary = othin::run_stream(*engine, source, sink, observer);
  flags.stream().flush();

  if (!a.checkpoint.empty()) {
    std::ofstream out(a.checkpoint);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + a.checkpoint);
    out << engine->checkpoint().dump() << '\n';
  }
  const auto& cfg = engine->config();
  std::cerr << "batches " << summary.batches << ", observations " << summary.observations << ", flagged "
            << summary.flagged << ", mean score " << summary.mean_score << ", leaves " << summary.final_leaves
            << ", splits " << summary.splits << ", merges " << summary.merges << ", tau " << format_double(*cfg.tau)
            << ", " << summary.wall_seconds << " s (" << othin::simd::isa_name(othin::simd::active_isa())
            << " kernels)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  othin::SyntheticConfig cfg;
  std::string out = "-";
  std::string labels_out;
  std::string format;
};

int run_synth(const SynthArgs& a) {
  const auto data = othin::gen_synthetic(a.cfg);
  const auto fmt = a.format.empty() ? othin::infer_stream_format(a.out) : othin::parse_stream_format(a.format);
  if (a.out.empty() || a.out == "-") {
    if (fmt == othin::StreamFormat::Binary) othin::write_binary(std::cout, data.data);
    else othin::write_csv(std::cout, data.data);
  } else {
    othin::write_matrix(a.out, data.data, fmt);
  }
  if (!a.labels_out.empty()) {
    OutputTarget labels(a.labels_out);
    for (int l : data.labels) labels.stream() << l << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string scores;
  std::string labels;
  std::optional<double> tau;
  bool best = false;
  std::string roc_out;

  std::string sweep;
  std::string grid;
  bool compare = false;
  double delta = 0.0;
  int seeds = 10;
  std::string out = "-";
  double alpha = 0.9;
  long batch_size = 10;
  double subsample_rate = 1.0;
  int rank = 10;
  long p = 100;
  long total = 4000;
  long train = 1000;
  int baseline_k = 2;
};

int run_eval_scores(const EvalArgs& a) {
  const auto scores = read_column(a.scores, "score");
  const auto raw_labels = read_column(a.labels, "label");
  if (raw_labels.size() < scores.size()) throw std::runtime_error("fewer labels than scores");
  // Label files usually cover the training prefix too; align on the tail.
  const std::size_t skip = raw_labels.size() - scores.size();
  std::vector<int> labels;
  for (std::size_t i = skip; i < raw_labels.size(); ++i) labels.push_back(static_cast<int>(raw_labels[i]));

  const auto m = a.tau ? othin::detection_rates(scores, labels, *a.tau) : othin::best_threshold(scores, labels);
  const auto curve = othin::roc_curve(scores, labels);
  json doc = metrics_json(m);
  doc["threshold"] = a.tau ? "given" : "best";
  doc["auc"] = othin::auc(curve);
  doc["n"] = scores.size();
  doc["labels_skipped"] = skip;
  OutputTarget out(a.out);
  out.stream() << doc.dump() << '\n';
  if (!a.roc_out.empty()) {
    OutputTarget roc(a.roc_out);
    roc.stream() << "p_f,p_d\n";
    for (const auto& pt : curve) roc.stream() << format_double(pt.p_f) << ',' << format_double(pt.p_d) << '\n';
  }
  return 0;
}

othin::SweepBase sweep_base(const EvalArgs& a) {
  othin::SweepBase base;
  base.data.ambient_dim = a.p;
  base.data.subspace_rank = a.rank;
  base.data.total = a.total;
  base.data.train_count = a.train;
  base.data.rotation_speed = a.delta;
  base.engine.alpha = a.alpha;
  base.engine.rank = a.rank;
  base.engine.subsample_rate = a.subsample_rate;
  base.batch_size = a.batch_size;
  base.seeds = a.seeds;
  return base;
}

int run_eval_sweep(const EvalArgs& a) {
  othin::SweepKind kind;
  if (a.sweep == "subsample") kind = othin::SweepKind::Subsample;
  else if (a.sweep == "batch") kind = othin::SweepKind::Batch;
  else throw std::invalid_argument("--sweep must be 'subsample' or 'batch'");
  const auto grid = parse_grid(a.grid);
  const auto rows = othin::tradeoff_sweep(kind, grid, sweep_base(a));
  OutputTarget out(a.out);
  othin::write_sweep_csv(out.stream(), rows, kind);
  return 0;
}

int run_eval_compare(const EvalArgs& a) {
  const othin::SweepBase base = sweep_base(a);
  json seeds = json::array();
  double ours_sum = 0.0, base_sum = 0.0;
  for (int s = 0; s < a.seeds; ++s) {
    auto dc = base.data;
    dc.seed = static_cast<std::uint64_t>(s);
    auto ec = base.engine;
    ec.seed = static_cast<std::uint64_t>(s);
    const auto data = othin::gen_synthetic(dc);
    const auto ours = othin::run_trial_on_data(data, dc.train_count, ec, base.batch_size);
    const auto bscores = othin::baseline_online_gmm(data.data, dc.train_count, a.baseline_k, a.alpha, base.batch_size);
    const double bauc = othin::auc(othin::roc_curve(bscores, ours.labels));
    ours_sum += ours.auc;
    base_sum += bauc;
    seeds.push_back({{"seed", s}, {"othin_auc", ours.auc}, {"baseline_auc", bauc}});
  }
  json doc{{"delta", a.delta},
           {"othin_auc", ours_sum / a.seeds},
           {"baseline_auc", base_sum / a.seeds},
           {"baseline", "online GMM, diagonal covariances, k=" + std::to_string(a.baseline_k) +
                            ", forgetting factor " + format_double(a.alpha)},
           {"seeds", seeds}};
  OutputTarget out(a.out);
  out.stream() << doc.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct AnscombeArgs {
  std::string input;
  std::string out = "-";
  std::string format;
  bool header = false;
};

int run_anscombe(const AnscombeArgs& a) {
  othin::ReaderOptions ro;
  ro.format = a.format.empty() ? othin::infer_stream_format(a.input) : othin::parse_stream_format(a.format);
  ro.header = a.header;
  const Matrix counts = othin::read_matrix(a.input, ro);
  const Matrix x = othin::anscombe(counts);
  if (a.out.empty() || a.out == "-") {
    if (ro.format == othin::StreamFormat::Binary) othin::write_binary(std::cout, x);
    else othin::write_csv(std::cout, x);
  } else {
    othin::write_matrix(a.out, x, othin::infer_stream_format(a.out));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online thinning of high-dimensional streams with a dynamic low-rank Gaussian mixture"};
  app.require_subcommand(1);

  ThinArgs thin;
  auto* t = app.add_subcommand("thin", "Score a stream and emit the flagged observations as JSON lines");
  t->add_option("input", thin.input, "Observation stream (CSV rows or OTHN binary)")->required();
  t->add_option("--format", thin.format, "csv or bin (default: from the file extension)");
  t->add_option("--config", thin.config_path, "JSON file with engine settings");
  t->add_option("--alpha", thin.alpha, "Forgetting factor in (0,1)");
  t->add_option("--tau", thin.tau, "Score threshold (default: 95th percentile of training scores)");
  t->add_option("--tol", thin.tol, "Error tolerance for split/merge");
  t->add_option("--gamma", thin.gamma, "Complexity penalty");
  t->add_option("--rank", thin.rank, "Subspace rank r");
  t->add_option("--noise-var", thin.noise_var, "Isotropic noise variance (default: estimated)");
  t->add_option("--k-max", thin.k_max, "Maximum number of mixture components");
  t->add_option("--subsample-rate", thin.subsample_rate, "Fraction of coordinates observed per step");
  t->add_option("--seed", thin.seed, "RNG seed for subsampling");
  t->add_option("--init-depth", thin.init_depth, "Depth of the initial tree");
  t->add_option("--batch-size", thin.batch_size, "Observations per time step")->check(CLI::PositiveNumber);
  t->add_option("--train", thin.train, "Leading rows used to fit the initial model")->check(CLI::PositiveNumber);
  t->add_flag("--header", thin.header, "Skip the first CSV line");
  t->add_flag("--time-col", thin.time_col, "First CSV column is the time index; rows sharing it form a batch");
  t->add_option("--out", thin.out, "JSON-lines output for flagged observations (default: stdout)");
  t->add_option("--scores-out", thin.scores_out, "CSV of every score: t,i,score,leaf,flagged");
  t->add_option("--checkpoint", thin.checkpoint, "Write the engine state here when the stream ends");
  t->add_option("--resume", thin.resume, "Continue from a checkpoint instead of training");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labelled union-of-subspaces stream");
  s->add_option("--p", synth.cfg.ambient_dim, "Ambient dimension");
  s->add_option("--rank", synth.cfg.subspace_rank, "Subspace dimension");
  s->add_option("--delta", synth.cfg.rotation_speed, "Rotation speed of the inlier subspaces");
  s->add_option("--total", synth.cfg.total, "Number of observations");
  s->add_option("--train", synth.cfg.train_count, "Training prefix length (validated against --total)");
  s->add_option("--noise-var", synth.cfg.noise_var, "Noise variance");
  s->add_option("--inlier-frac", synth.cfg.inlier_fraction, "Fraction of inliers");
  s->add_option("--seed", synth.cfg.seed, "Random seed");
  s->add_option("--out", synth.out, "Output stream (default: CSV on stdout)");
  s->add_option("--format", synth.format, "csv or bin (default: from the file extension)");
  s->add_option("--labels-out", synth.labels_out, "One label per line: 1 anomaly, 0 inlier");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Detection metrics, tradeoff sweeps and baseline comparison");
  e->add_option("--scores", ev.scores, "Scores: one per line, or a CSV with a 'score' column");
  e->add_option("--labels", ev.labels, "Labels: one per line, or a CSV with a 'label' column");
  auto* tau_opt = e->add_option("--tau", ev.tau, "Evaluate at this threshold");
  auto* best_opt = e->add_flag("--best", ev.best, "Pick the threshold minimizing 1 - P_D + P_F (default)");
  tau_opt->excludes(best_opt);
  e->add_option("--roc-out", ev.roc_out, "Write the ROC curve as CSV");
  e->add_option("--sweep", ev.sweep, "Run a tradeoff sweep: subsample or batch");
  e->add_option("--grid", ev.grid, "Comma-separated sweep values");
  e->add_flag("--compare", ev.compare, "Compare AUC against the diagonal online-GMM baseline");
  e->add_option("--delta", ev.delta, "Rotation speed for sweeps and comparisons");
  e->add_option("--seeds", ev.seeds, "Realizations per cell (seeds 0..N-1)")->check(CLI::PositiveNumber);
  e->add_option("--alpha", ev.alpha, "Forgetting factor for sweeps and comparisons");
  e->add_option("--batch-size", ev.batch_size, "Batch size for subsample sweeps and comparisons");
  e->add_option("--subsample-rate", ev.subsample_rate, "Subsampling rate for batch sweeps and comparisons");
  e->add_option("--rank", ev.rank, "Subspace rank");
  e->add_option("--p", ev.p, "Ambient dimension");
  e->add_option("--total", ev.total, "Observations per realization");
  e->add_option("--train", ev.train, "Training prefix per realization");
  e->add_option("--baseline-k", ev.baseline_k, "Components of the baseline GMM");
  e->add_option("--out", ev.out, "Output file (default: stdout)");

  AnscombeArgs ans;
  auto* an = app.add_subcommand("anscombe", "Apply 2 sqrt(y + 3/8) to a stream of counts");
  an->add_option("input", ans.input, "Count stream (CSV rows or OTHN binary)")->required();
  an->add_option("--out", ans.out, "Output stream (format from the extension; default CSV on stdout)");
  an->add_option("--format", ans.format, "Input format: csv or bin");
  an->add_flag("--header", ans.header, "Skip the first CSV line");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) return run_thin(thin);
    if (*s) return run_synth(synth);
    if (*an) return run_anscombe(ans);
    if (*e) {
      if (!ev.sweep.empty()) {
        if (ev.grid.empty()) throw std::invalid_argument("--sweep needs --grid");
        return run_eval_sweep(ev);
      }
      if (ev.compare) return run_eval_compare(ev);
      if (ev.scores.empty() || ev.labels.empty()) {
        throw std::invalid_argument("eval needs --scores and --labels, --sweep, or --compare");
      }
      return run_eval_scores(ev);
    }
  } catch (const std::exception& ex) {
    std::cerr << "othin: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
