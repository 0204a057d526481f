#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "othin/evaluation.hpp"
#include "support.hpp"

using namespace othin;
using namespace othin::testing;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Smallest detection error over every threshold that can change the counts.
double brute_force_error(const std::vector<double>& s, const std::vector<int>& l) {
  std::vector<double> taus{-kInf, kInf};
  for (double a : s) {
    taus.push_back(a);
    for (double b : s) taus.push_back(0.5 * (a + b));
  }
  double best = 2.0;
  for (double t : taus) best = std::min(best, detection_rates(s, l, t).detection_error);
  return best;
}

}  // namespace

TEST_CASE("detection rates by hand") {
  const std::vector<int> labels{1, 0, 0, 1};
  const std::vector<double> scores{5, 1, 2, 4};
  auto m = detection_rates(scores, labels, 3.0);
  CHECK(m.p_d == 1.0);
  CHECK(m.p_f == 0.0);
  m = detection_rates(scores, labels, 1.5);
  CHECK(m.p_d == 1.0);
  CHECK(m.p_f == 0.5);
  CHECK(m.detection_error == doctest::Approx(0.5));
  m = detection_rates(scores, labels, kInf);
  CHECK(m.p_d == 0.0);
  CHECK(m.p_f == 0.0);
  CHECK(m.detection_error == 1.0);
  // Strictly greater: a score equal to tau is not flagged.
  CHECK(detection_rates(scores, labels, 4.0).p_d == 0.5);

  CHECK_THROWS_AS(detection_rates(scores, std::vector<int>{1, 1, 1, 1}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(detection_rates(scores, std::vector<int>{1, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("rates are monotone in the threshold") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::vector<double> s(300);
  std::vector<int> l(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = i % 5 == 0;
    s[i] = n01(rng) + l[i];
  }
  double prev_d = 1.0, prev_f = 1.0;
  for (double t = -4.0; t <= 5.0; t += 0.05) {
    const auto m = detection_rates(s, l, t);
    CHECK(m.p_d <= prev_d);
    CHECK(m.p_f <= prev_f);
    CHECK(m.detection_error == doctest::Approx(1.0 - m.p_d + m.p_f).epsilon(1e-12));
    prev_d = m.p_d;
    prev_f = m.p_f;
  }
}

TEST_CASE("best threshold") {
  SUBCASE("separated") {
    const auto m = best_threshold(std::vector<double>{1, 2, 10, 11}, std::vector<int>{0, 0, 1, 1});
    CHECK(m.detection_error == 0.0);
    CHECK(m.tau_used == 6.0);
  }
  SUBCASE("no separation") {
    const auto m = best_threshold(std::vector<double>{3, 3, 3, 3}, std::vector<int>{0, 1, 0, 1});
    CHECK(m.detection_error == 1.0);
    CHECK(m.tau_used == kInf);  // ties go to the larger threshold
  }
  SUBCASE("brute-force oracle") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> coarse(0, 40);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(200);
      std::vector<int> l(200);
      for (std::size_t i = 0; i < s.size(); ++i) {
        l[i] = static_cast<int>(i % 4 == 0);
        s[i] = coarse(rng) + 5 * l[i];  // plenty of ties
      }
      const auto m = best_threshold(s, l);
      CHECK(m.detection_error == doctest::Approx(brute_force_error(s, l)).epsilon(1e-12));
      CHECK(detection_rates(s, l, m.tau_used).detection_error == doctest::Approx(m.detection_error).epsilon(1e-12));
    }
  }
}

TEST_CASE("ROC curve and AUC") {
  SUBCASE("perfect separation") {
    const std::vector<double> s{1, 2, 3, 10, 11};
    const std::vector<int> l{0, 0, 0, 1, 1};
    const auto curve = roc_curve(s, l);
    CHECK(curve.front().p_f == 0.0);
    CHECK(curve.front().p_d == 0.0);
    CHECK(curve.back().p_f == 1.0);
    CHECK(curve.back().p_d == 1.0);
    CHECK(auc(curve) == 1.0);
  }
  SUBCASE("properties on random data") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    std::vector<double> s(2000), flipped(2000), warped(2000);
    std::vector<int> l(2000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      l[i] = static_cast<int>(i % 3 == 0);
      s[i] = n01(rng) + 0.7 * l[i];
      flipped[i] = -s[i];
      warped[i] = std::exp(2.0 * s[i]) + 3.0;
    }
    const auto curve = roc_curve(s, l);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].p_f >= curve[i - 1].p_f);
      CHECK(curve[i].p_d >= curve[i - 1].p_d);
    }
    const double a = auc(curve);
    CHECK(auc(roc_curve(flipped, l)) == doctest::Approx(1.0 - a).epsilon(1e-12));
    CHECK(auc(roc_curve(warped, l)) == doctest::Approx(a).epsilon(1e-12));

    // Mann-Whitney oracle: P(anomaly score > inlier score) + half the ties.
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (l[i] != 1) continue;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (l[j] != 0) continue;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        pairs += 1.0;
      }
    }
    CHECK(a == doctest::Approx(wins / pairs).epsilon(1e-12));
  }
  SUBCASE("uninformative scores") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u;
    std::vector<double> s(10000);
    std::vector<int> l(10000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u(rng);
      l[i] = u(rng) < 0.3;
    }
    const double a = auc(roc_curve(s, l));
    CHECK(a >= 0.47);
    CHECK(a <= 0.53);
  }
}

TEST_CASE("diagonal online GMM baseline") {
  std::mt19937_64 rng(5);
  SUBCASE("single component matches the fitted Gaussian") {
    Matrix data(3, 4000);
    std::normal_distribution<double> n01;
    for (Eigen::Index i = 0; i < data.cols(); ++i) {
      data(0, i) = 1.0 + 2.0 * n01(rng);
      data(1, i) = -1.0 + 0.5 * n01(rng);
      data(2, i) = n01(rng);
    }
    OnlineDiagonalGmm gmm(1, 0.99);
    gmm.fit(data);
    const Vector mu = data.rowwise().mean();
    const Vector var = (data.colwise() - mu).array().square().rowwise().mean();
    CHECK((gmm.means().col(0) - mu).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((gmm.variances().col(0) - var).cwiseAbs().maxCoeff() < 1e-9);
    Vector x(3);
    x << 0.3, -0.2, 1.1;
    double expected = 0.0;
    for (int d = 0; d < 3; ++d)
      expected += 0.5 * (std::log(2.0 * M_PI * var[d]) + (x[d] - mu[d]) * (x[d] - mu[d]) / var[d]);
    CHECK(gmm.score(x) == doctest::Approx(expected).epsilon(1e-9));
  }
  SUBCASE("scoring is pointwise") {
    const Matrix data = gaussian_matrix(5, 200, rng);
    OnlineDiagonalGmm gmm(2, 0.9);
    gmm.fit(data);
    std::vector<double> fwd, rev;
    for (Eigen::Index i = 0; i < 50; ++i) fwd.push_back(gmm.score(data.col(i)));
    for (Eigen::Index i = 49; i >= 0; --i) rev.push_back(gmm.score(data.col(i)));
    std::reverse(rev.begin(), rev.end());
    CHECK(fwd == rev);
  }
  SUBCASE("stream scores cover the post-training columns") {
    SyntheticConfig sc;
    sc.ambient_dim = 30;
    sc.subspace_rank = 3;
    sc.total = 600;
    sc.train_count = 200;
    const auto d = gen_synthetic(sc);
    const auto scores = baseline_online_gmm(d.data, 200, 2, 0.9, 10);
    CHECK(scores.size() == 400);
    for (double s : scores) CHECK(std::isfinite(s));
  }
}

TEST_CASE("low-rank model beats the diagonal baseline on rotating subspaces") {
  SyntheticConfig sc;
  sc.rotation_speed = 5e-3;
  sc.seed = 1;
  const auto d = gen_synthetic(sc);
  EngineConfig ec;
  ec.alpha = 0.95;
  const auto ours = run_trial_on_data(d, 1000, ec, 10);
  const auto base = baseline_online_gmm(d.data, 1000, 2, 0.95, 10);
  const std::vector<int> labels(d.labels.begin() + 1000, d.labels.end());
  CHECK(ours.auc > auc(roc_curve(base, labels)));
}

TEST_CASE("sweeps") {
  SweepBase base;
  base.data.ambient_dim = 40;
  base.data.subspace_rank = 4;
  base.data.total = 700;
  base.data.train_count = 300;
  base.engine.rank = 4;
  base.seeds = 2;
  const std::vector<double> grid{0.6, 1.0};
  const auto rows = tradeoff_sweep(SweepKind::Subsample, grid, base);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].value == 0.6);
  CHECK(rows[1].value == 1.0);

  // A one-point grid is a single trial per seed.
  const std::vector<double> one{1.0};
  const auto single = tradeoff_sweep(SweepKind::Subsample, one, base);
  double mean = 0.0;
  for (int s = 0; s < 2; ++s) {
    auto dc = base.data;
    dc.seed = static_cast<std::uint64_t>(s);
    auto ec = base.engine;
    ec.seed = static_cast<std::uint64_t>(s);
    mean += run_synthetic_trial(dc, ec, base.batch_size).best.detection_error / 2.0;
  }
  CHECK(single[0].detection_error == doctest::Approx(mean).epsilon(1e-12));

  std::ostringstream csv;
  write_sweep_csv(csv, rows, SweepKind::Subsample);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
