#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "othin/data_io.hpp"
#include "othin/errors.hpp"
#include "othin/subspace_tracking.hpp"
#include "othin/synthetic.hpp"
#include "support.hpp"

using namespace othin;
using namespace othin::testing;

namespace {

StreamReader reader_for(const std::string& text, ReaderOptions opts) {
  return StreamReader(std::make_unique<std::istringstream>(text), opts);
}

std::string ten_rows() {
  std::string s;
  for (int i = 0; i < 10; ++i) s += std::to_string(i) + "," + std::to_string(i * 2) + ",0.5\n";
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("othin_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("CSV batching") {
  ReaderOptions opts;
  opts.batch_size = 4;
  auto r = reader_for(ten_rows(), opts);
  std::vector<Eigen::Index> sizes;
  std::vector<std::int64_t> times;
  while (auto b = r.next()) {
    sizes.push_back(b->data.cols());
    times.push_back(b->time_index);
    CHECK(b->data.rows() == 3);
  }
  CHECK(sizes == std::vector<Eigen::Index>{4, 4, 2});
  CHECK(times == std::vector<std::int64_t>{0, 1, 2});
  CHECK(*r.dim() == 3);
}

TEST_CASE("CSV column layout, header, blank lines") {
  ReaderOptions opts;
  opts.batch_size = 10;
  opts.header = true;
  auto r = reader_for("a,b\n1, 2\n\n3,+4\r\n", opts);
  const auto b = r.next();
  REQUIRE(b);
  CHECK(b->data.cols() == 2);
  CHECK(b->data(0, 0) == 1.0);
  CHECK(b->data(1, 0) == 2.0);
  CHECK(b->data(1, 1) == 4.0);
  CHECK_FALSE(r.next());
}

TEST_CASE("time column groups rows") {
  ReaderOptions opts;
  opts.time_column = true;
  auto r = reader_for("5,1,1\n5,2,2\n7,3,3\n9,4,4\n9,5,5\n9,6,6\n", opts);
  std::vector<std::pair<std::int64_t, Eigen::Index>> got;
  while (auto b = r.next()) got.emplace_back(b->time_index, b->data.cols());
  CHECK(got == std::vector<std::pair<std::int64_t, Eigen::Index>>{{5, 2}, {7, 1}, {9, 3}});
}

TEST_CASE("empty input") {
  ReaderOptions opts;
  CHECK_FALSE(reader_for("", opts).next());
  opts.format = StreamFormat::Binary;
  CHECK_FALSE(reader_for("", opts).next());
}

TEST_CASE("malformed input reports the line") {
  ReaderOptions opts;
  opts.batch_size = 100;
  auto bad_number = reader_for("1,2\n3,x\n", opts);
  try {
    bad_number.next();
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  auto drift = reader_for("1,2\n3,4\n5,6,7\n", opts);
  try {
    drift.next();
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(reader_for("1,,2\n", opts).next(), ParseError);

  opts.format = StreamFormat::Binary;
  CHECK_THROWS_AS(reader_for("NOPE", opts).next(), ParseError);
}

TEST_CASE("binary round trip is bit-identical") {
  std::mt19937_64 rng(1);
  Matrix m = gaussian_matrix(7, 13, rng);
  m(2, 3) = -0.0;
  m(4, 5) = 1e-300;
  std::ostringstream out;
  write_binary(out, m);
  ReaderOptions opts;
  opts.format = StreamFormat::Binary;
  opts.batch_size = 5;
  auto r = reader_for(out.str(), opts);
  Matrix back(7, 0);
  while (auto b = r.next()) {
    back.conservativeResize(7, back.cols() + b->data.cols());
    back.rightCols(b->data.cols()) = b->data;
  }
  REQUIRE(back.cols() == 13);
  CHECK(std::memcmp(back.data(), m.data(), sizeof(double) * 91) == 0);

  // Truncated trailing record.
  const std::string s = out.str();
  CHECK_THROWS_AS(reader_for(s.substr(0, s.size() - 3), opts).read_rows(100), ParseError);
}

TEST_CASE("CSV round trip through files") {
  std::mt19937_64 rng(2);
  const Matrix m = gaussian_matrix(4, 9, rng);
  const auto csv = temp_file("m.csv");
  const auto bin = temp_file("m.bin");
  write_matrix(csv.string(), m, StreamFormat::Csv);
  write_matrix(bin.string(), m, infer_stream_format(bin.string()));
  ReaderOptions opts;
  CHECK(read_matrix(csv.string(), opts) == m);  // shortest round-trip formatting
  opts.format = StreamFormat::Binary;
  CHECK(read_matrix(bin.string(), opts) == m);
  std::filesystem::remove(csv);
  std::filesystem::remove(bin);
  CHECK(parse_stream_format("bin") == StreamFormat::Binary);
  CHECK_THROWS_AS(parse_stream_format("xml"), std::invalid_argument);
}

TEST_CASE("flag records") {
  ScoredObservation so;
  so.time_index = 12;
  so.column_index = 3;
  so.score = 41.5;
  so.assigned_leaf = 4;
  CHECK(flag_record_json(so) == R"({"t":12,"i":3,"score":41.5,"leaf":4})");
  so.score = std::numeric_limits<double>::infinity();
  so.assigned_leaf = kNoNode;
  const auto parsed = nlohmann::json::parse(flag_record_json(so));
  CHECK(parsed["score"].is_null());
  CHECK(parsed["leaf"] == -1);

  std::ostringstream out;
  std::vector<ScoredObservation> recs(3, so);
  write_flags(out, recs);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("Anscombe transform") {
  Vector y(3);
  y << 0, 1, 10;
  const Vector x = anscombe(y);
  CHECK(x[0] == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(2.345208).epsilon(1e-6));
  CHECK(x[2] == doctest::Approx(2.0 * std::sqrt(10.375)));
  Vector neg(1);
  neg << -1;
  CHECK_THROWS_AS(anscombe(neg), std::invalid_argument);
  Vector frac(1);
  frac << 1.5;
  CHECK_THROWS_AS(anscombe(frac), std::invalid_argument);

  // Strictly increasing on the integers.
  Vector ints(50);
  for (int i = 0; i < 50; ++i) ints[i] = i;
  const Vector t = anscombe(ints);
  for (int i = 1; i < 50; ++i) CHECK(t[i] > t[i - 1]);

  // Variance near one for Poisson counts.
  std::mt19937_64 rng(3);
  std::poisson_distribution<int> pois(10.0);
  Matrix counts(1, 20000);
  for (Eigen::Index i = 0; i < counts.cols(); ++i) counts(0, i) = pois(rng);
  const Matrix z = anscombe(counts);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / (z.cols() - 1.0);
  CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("subspace rotation") {
  std::mt19937_64 rng(4);
  const Matrix v = random_orthonormal(30, 3, rng);
  const Matrix a = gaussian_matrix(30, 30, rng);
  const Matrix b = 0.5 * (a - a.transpose());
  CHECK(rotate_subspace(v, b, 0.0) == v);
  const Matrix w = rotate_subspace(v, b, 0.05);
  CHECK((w.transpose() * w - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  const double t1 = largest_principal_angle(v, rotate_subspace(v, b, 1e-3));
  const double t2 = largest_principal_angle(v, rotate_subspace(v, b, 2e-3));
  CHECK(t2 / t1 == doctest::Approx(2.0).epsilon(0.01));
  CHECK_THROWS_AS(rotate_subspace(v, a, 0.1), std::invalid_argument);
}

TEST_CASE("synthetic streams") {
  SyntheticConfig cfg;
  cfg.seed = 5;

  SUBCASE("orthogonal anomaly subspace and small shifts") {
    SyntheticStream s(cfg);
    for (int j = 0; j < 2; ++j) {
      CHECK((s.basis(2).transpose() * s.basis(j)).norm() <= 1e-10);
      CHECK(s.shift(j).norm() == doctest::Approx(0.1));
    }
  }
  SUBCASE("static when delta is zero") {
    SyntheticStream s(cfg);
    const Matrix v0 = s.basis(0);
    for (int i = 0; i < 500; ++i) s.next();
    CHECK(s.basis(0) == v0);
  }
  SUBCASE("rotating when delta is positive") {
    cfg.rotation_speed = 5e-3;
    SyntheticStream s(cfg);
    const Matrix v0 = s.basis(1);
    const Matrix anomaly = s.basis(2);
    for (int i = 0; i < 200; ++i) s.next();
    CHECK(largest_principal_angle(v0, s.basis(1)) > 0.01);
    CHECK(s.basis(2) == anomaly);
  }
  SUBCASE("anomaly fraction") {
    cfg.total = 10000;
    const auto d = gen_synthetic(cfg);
    const double frac = std::count(d.labels.begin(), d.labels.end(), int{kAnomaly}) / 10000.0;
    CHECK(frac == doctest::Approx(0.05).epsilon(0.14));
  }
  SUBCASE("same seed, same bytes") {
    cfg.total = 300;
    cfg.train_count = 100;
    cfg.rotation_speed = 1e-3;
    const auto a = gen_synthetic(cfg);
    const auto b = gen_synthetic(cfg);
    CHECK(std::memcmp(a.data.data(), b.data.data(), sizeof(double) * a.data.size()) == 0);
    CHECK(a.labels == b.labels);
    cfg.seed = 6;
    CHECK(gen_synthetic(cfg).data != a.data);
  }
  SUBCASE("invalid configurations") {
    cfg.ambient_dim = 25;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SyntheticConfig{};
    cfg.inlier_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
