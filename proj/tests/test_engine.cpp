#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "othin/engine.hpp"
#include "othin/errors.hpp"
#include "othin/synthetic.hpp"
#include "support.hpp"

using namespace othin;
using namespace othin::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SyntheticData small_stream(std::uint64_t seed, double delta = 0.0) {
  SyntheticConfig sc;
  sc.ambient_dim = 40;
  sc.subspace_rank = 4;
  sc.total = 900;
  sc.train_count = 300;
  sc.rotation_speed = delta;
  sc.seed = seed;
  return gen_synthetic(sc);
}

EngineConfig small_config() {
  EngineConfig cfg;
  cfg.rank = 4;
  cfg.alpha = 0.95;
  return cfg;
}

std::vector<double> stream_scores(ThinningEngine& engine, const Matrix& data, Eigen::Index from,
                                  Eigen::Index batch) {
  std::vector<double> out;
  for (Eigen::Index c = from; c < data.cols(); c += batch) {
    const Eigen::Index n = std::min(batch, data.cols() - c);
    const auto res = engine.process_batch({c, data.middleCols(c, n)});
    for (const auto& so : res.scored) out.push_back(so.score);
  }
  return out;
}

}  // namespace

TEST_CASE("mixture score") {
  const std::vector<double> w{0.5, 0.5}, ll{-1.0, -3.0};
  CHECK(mixture_score(w, ll) == doctest::Approx(-std::log(0.5 * std::exp(-1.0) + 0.5 * std::exp(-3.0))));
  CHECK(mixture_score(w, ll) == doctest::Approx(1.566219).epsilon(1e-6));
  CHECK(mixture_score(std::vector<double>{1.0}, std::vector<double>{-2.5}) == doctest::Approx(2.5));
  CHECK(mixture_score(std::vector<double>{0.3, 0.7}, std::vector<double>{-4.0, -4.0}) == doctest::Approx(4.0));
  // Zero-weight components do not contribute, even with -inf likelihood.
  CHECK(mixture_score(std::vector<double>{1.0, 0.0}, std::vector<double>{-2.0, -kInf}) == doctest::Approx(2.0));
  // Far tails stay finite thanks to log-sum-exp.
  CHECK(mixture_score(w, std::vector<double>{-2000.0, -2001.0}) ==
        doctest::Approx(2000.0 - std::log(0.5 + 0.5 * std::exp(-1.0))));
  CHECK_THROWS_AS(mixture_score(std::vector<double>{0.0, 0.0}, ll), InvalidModel);
}

TEST_CASE("subsampling masks") {
  std::mt19937_64 rng(1);
  const auto full = subsample_mask(5, 1.0, 2, rng);
  CHECK(full.indices() == std::vector<std::int32_t>{0, 1, 2, 3, 4});
  const auto half = subsample_mask(100, 0.5, 10, rng);
  CHECK(half.size() == 50);
  CHECK(std::set<std::int32_t>(half.indices().begin(), half.indices().end()).size() == 50);
  CHECK(half.indices().back() < 100);
  CHECK(subsample_mask(100, 0.01, 10, rng).size() == 11);
  CHECK_THROWS_AS(subsample_mask(10, 0.0, 2, rng), std::invalid_argument);
  CHECK_THROWS_AS(subsample_mask(10, 1.5, 2, rng), std::invalid_argument);

  // Coordinates are chosen uniformly.
  std::vector<int> hits(20, 0);
  for (int i = 0; i < 4000; ++i) {
    const auto mask = subsample_mask(20, 0.25, 1, rng);
    for (auto j : mask.indices()) ++hits[static_cast<std::size_t>(j)];
  }
  for (int h : hits) CHECK(h == doctest::Approx(1000).epsilon(0.12));
}

TEST_CASE("thresholds at the extremes") {
  const auto data = small_stream(2);
  auto cfg = small_config();
  cfg.tau = kInf;
  auto engine = ThinningEngine::train(data.data.leftCols(300), cfg);
  auto res = engine.process_batch({0, data.data.middleCols(300, 50)});
  CHECK(res.thinned.empty());

  engine.config().tau = -kInf;
  res = engine.process_batch({1, data.data.middleCols(350, 50)});
  CHECK(res.thinned.size() == 50);
  for (const auto& so : res.scored) CHECK(so.flagged == (so.score > *engine.config().tau));
}

TEST_CASE("training fills in the defaults") {
  const auto data = small_stream(3);
  const auto engine = ThinningEngine::train(data.data.leftCols(300), small_config());
  const auto& c = engine.config();
  REQUIRE(c.tol);
  REQUIRE(c.gamma);
  REQUIRE(c.tau);
  REQUIRE(c.noise_var);
  CHECK(*c.gamma == doctest::Approx(0.1 * *c.tol));
  CHECK(*c.noise_var > 0.0);
  CHECK(engine.tree().leaf_count() == 2);
}

TEST_CASE("anomalies score higher than inliers") {
  SyntheticConfig sc;
  sc.seed = 4;
  const auto data = gen_synthetic(sc);
  EngineConfig cfg;
  auto engine = ThinningEngine::train(data.data.leftCols(1000), cfg);
  const auto scores = stream_scores(engine, data.data, 1000, 10);
  double in = 0, out = 0;
  int n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (data.labels[1000 + i] == kAnomaly) {
      out += scores[i];
      ++n_out;
    } else {
      in += scores[i];
      ++n_in;
    }
  }
  CHECK(out / n_out > in / n_in);
}

TEST_CASE("frozen scoring does not depend on the batch partition") {
  const auto data = small_stream(5);
  auto cfg = small_config();
  cfg.freeze_model = true;
  auto a = ThinningEngine::train(data.data.leftCols(300), cfg);
  auto b = ThinningEngine::train(data.data.leftCols(300), cfg);
  const auto one = stream_scores(a, data.data.leftCols(330), 300, 30);
  const auto many = stream_scores(b, data.data.leftCols(330), 300, 1);
  REQUIRE(one.size() == many.size());
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == many[i]);
  const auto direct = a.score_columns(data.data.middleCols(300, 30));
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(direct[i] == doctest::Approx(one[i]).epsilon(1e-12));
}

TEST_CASE("full-mask scoring equals unmasked scoring") {
  const auto data = small_stream(6);
  const auto engine = ThinningEngine::train(data.data.leftCols(300), small_config());
  const SampleMask full = SampleMask::full(40);
  for (Eigen::Index c = 300; c < 340; ++c) {
    const Vector x = data.data.col(c);
    CHECK(std::abs(score(engine.tree(), x, &full) - score(engine.tree(), x)) < 1e-10);
  }
}

TEST_CASE("identical seeds give identical runs") {
  const auto data = small_stream(7, 5e-3);
  for (double rate : {1.0, 0.6}) {
    auto cfg = small_config();
    cfg.subsample_rate = rate;
    cfg.seed = 42;
    auto a = ThinningEngine::train(data.data.leftCols(300), cfg);
    auto b = ThinningEngine::train(data.data.leftCols(300), cfg);
    CHECK(stream_scores(a, data.data, 300, 20) == stream_scores(b, data.data, 300, 20));
  }
}

TEST_CASE("non-finite columns are quarantined") {
  const auto data = small_stream(8);
  auto engine = ThinningEngine::train(data.data.leftCols(300), small_config());
  Matrix batch = data.data.middleCols(300, 6);
  batch(3, 2) = std::numeric_limits<double>::quiet_NaN();
  batch(0, 4) = kInf;
  const auto res = engine.process_batch({0, batch});
  CHECK(res.scored[2].score == kInf);
  CHECK(res.scored[2].assigned_leaf == kNoNode);
  CHECK(res.scored[4].score == kInf);
  CHECK(res.scored[2].flagged);
  CHECK(std::isfinite(res.scored[0].score));
  CHECK(engine.tree().invariant_violations().empty());
  for (const auto& [id, n] : engine.tree().nodes()) CHECK(n.gaussian.mean().allFinite());
}

TEST_CASE("invariants hold at every step of a run") {
  const auto data = small_stream(9, 5e-3);
  auto cfg = small_config();
  auto engine = ThinningEngine::train(data.data.leftCols(300), cfg);
  // Alternate between a growth phase (split gate open, weak complexity
  // penalty) and a pruning phase (merge gate open, strong penalty).
  int splits = 0, merges = 0;
  for (Eigen::Index c = 300; c < data.data.cols(); c += 5) {
    const bool grow = ((c - 300) / 50) % 2 == 0;
    engine.config().tol = grow ? 1e12 : 1e-9;
    engine.config().gamma = grow ? 1e-3 : 1e9;
    const auto res = engine.process_batch({c, data.data.middleCols(c, 5)});
    splits += res.splits;
    merges += res.merges;
    const auto bad = engine.tree().invariant_violations();
    REQUIRE_MESSAGE(bad.empty(), (bad.empty() ? "" : bad.front()));
    REQUIRE(engine.tree().leaf_count() <= cfg.k_max);
  }
  CHECK(splits > 0);
  CHECK(merges > 0);
}

TEST_CASE("checkpoint and resume continue the run exactly") {
  const auto data = small_stream(10, 5e-3);
  auto cfg = small_config();
  cfg.subsample_rate = 0.7;
  cfg.seed = 3;
  auto straight = ThinningEngine::train(data.data.leftCols(300), cfg);
  const auto expected = stream_scores(straight, data.data, 300, 25);

  auto first = ThinningEngine::train(data.data.leftCols(300), cfg);
  auto got = stream_scores(first, data.data.leftCols(600), 300, 25);
  const auto doc = first.checkpoint();
  auto resumed = ThinningEngine::from_checkpoint(nlohmann::json::parse(doc.dump()));
  CHECK(resumed.steps() == first.steps());
  const auto rest = stream_scores(resumed, data.data, 600, 25);
  got.insert(got.end(), rest.begin(), rest.end());
  CHECK(got == expected);
}

TEST_CASE("stream driver") {
  const auto data = small_stream(11);
  auto engine = ThinningEngine::train(data.data.leftCols(300), small_config());

  SUBCASE("empty source") {
    const auto before = engine.checkpoint().dump();
    const auto summary = run_stream(engine, [] { return std::optional<ObservationBatch>(); }, [](const auto&) {});
    CHECK(summary.batches == 0);
    CHECK(summary.observations == 0);
    CHECK(summary.flagged == 0);
    CHECK(engine.checkpoint().dump() == before);
  }
  SUBCASE("counts and flags") {
    Eigen::Index pos = 300;
    std::int64_t flagged = 0, seen = 0;
    const auto summary = run_stream(
        engine,
        [&]() -> std::optional<ObservationBatch> {
          if (pos >= 600) return std::nullopt;
          ObservationBatch b{pos, data.data.middleCols(pos, 50)};
          pos += 50;
          return b;
        },
        [&](const ScoredObservation& so) {
          CHECK(so.flagged);
          ++flagged;
        },
        [&](const ScoredObservation&) { ++seen; });
    CHECK(summary.batches == 6);
    CHECK(summary.observations == 300);
    CHECK(seen == 300);
    CHECK(summary.flagged == flagged);
    CHECK(summary.final_leaves == engine.tree().leaf_count());
  }
  SUBCASE("errors name the batch") {
    int calls = 0;
    auto source = [&]() -> std::optional<ObservationBatch> {
      if (calls++ == 0) return ObservationBatch{0, data.data.middleCols(300, 5)};
      return ObservationBatch{1, Matrix::Zero(7, 3)};
    };
    try {
      run_stream(engine, source, [](const auto&) {});
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("batch 1") != std::string::npos);
    }
  }
}

TEST_CASE("configuration documents") {
  EngineConfig cfg;
  cfg.alpha = 0.97;
  cfg.tau = 12.5;
  cfg.rank = 3;
  cfg.subsample_rate = 0.55;
  cfg.seed = 99;
  const auto back = config_from_json(config_to_json(cfg));
  CHECK(back.alpha == 0.97);
  CHECK(back.tau == 12.5);
  CHECK(back.rank == 3);
  CHECK(back.subsample_rate == 0.55);
  CHECK(back.seed == 99);
  CHECK_FALSE(back.tol);

  const auto inf = config_from_json(nlohmann::json::parse(R"({"tau": "inf"})"));
  CHECK(*inf.tau == kInf);
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"alpha": "high"})")));

  EngineConfig bad;
  bad.alpha = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = EngineConfig{};
  bad.subsample_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
