#include "othin/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "othin/errors.hpp"
#include "othin/subspace_tracking.hpp"

namespace othin {
namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Matrix orthonormal_columns(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

}  // namespace

void SyntheticConfig::validate() const {
  if (subspace_rank < 1 || subspace_rank >= ambient_dim) throw std::invalid_argument("need 1 <= r < p");
  if (n_subspaces < 2) throw std::invalid_argument("need at least one inlier and one anomaly subspace");
  if (ambient_dim < static_cast<Eigen::Index>(n_subspaces) * subspace_rank) {
    throw std::invalid_argument("p too small for an anomaly subspace orthogonal to the inlier subspaces");
  }
  if (!(inlier_fraction > 0.0 && inlier_fraction < 1.0)) throw std::invalid_argument("inlier_fraction must be in (0,1)");
  if (!(noise_var >= 0.0)) throw std::invalid_argument("noise_var must be non-negative");
  if (!(rotation_speed >= 0.0)) throw std::invalid_argument("rotation speed must be non-negative");
  if (total < 0 || train_count < 0 || train_count > total) throw std::invalid_argument("bad total/train counts");
}

Matrix rotate_subspace(const Matrix& basis, const Matrix& skew, double delta) {
  if (skew.rows() != skew.cols() || skew.rows() != basis.rows()) throw DimensionError("rotate_subspace: shapes");
  const double scale = std::max(1.0, skew.cwiseAbs().maxCoeff());
  if ((skew + skew.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("rotate_subspace: generator is not skew-symmetric");
  }
  if (!(delta >= 0.0)) throw std::invalid_argument("rotate_subspace: delta must be non-negative");
  if (delta == 0.0) return basis;
  const double norm = skew.norm();
  if (norm == 0.0) return basis;
  return orthonormalize(basis + (delta / norm) * (skew * basis));
}

SyntheticStream::SyntheticStream(SyntheticConfig config) : config_(config), rng_(config.seed) {
  config_.validate();
  const Eigen::Index p = config_.ambient_dim;
  const Eigen::Index r = config_.subspace_rank;
  const int inliers = config_.n_subspaces - 1;

  for (int j = 0; j < inliers; ++j) bases_.push_back(orthonormal_columns(gaussian_matrix(p, r, rng_)));
  // Anomaly subspace: random directions with every inlier span projected out.
  Matrix stacked(p, static_cast<Eigen::Index>(inliers) * r);
  for (int j = 0; j < inliers; ++j) stacked.middleCols(static_cast<Eigen::Index>(j) * r, r) = bases_[static_cast<std::size_t>(j)];
  const Matrix inlier_span = orthonormal_columns(stacked);
  Matrix raw = gaussian_matrix(p, r, rng_);
  raw -= inlier_span * (inlier_span.transpose() * raw);
  Matrix anomaly = orthonormal_columns(raw);
  anomaly -= inlier_span * (inlier_span.transpose() * anomaly);
  bases_.push_back(orthonormal_columns(anomaly));

  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  for (int j = 0; j < config_.n_subspaces; ++j) {
    Vector s(p);
    for (auto& v : s) v = unif(rng_);
    const double n = s.norm();
    shifts_.push_back(n > 0.0 ? Vector(0.1 * s / n) : s);
  }
  for (int j = 0; j < inliers; ++j) {
    const Matrix a = gaussian_matrix(p, p, rng_);
    const Matrix b = 0.5 * (a - a.transpose());
    generators_.push_back(b / b.norm());
  }
}

SyntheticStream::Draw SyntheticStream::next() {
  const Eigen::Index p = config_.ambient_dim;
  const Eigen::Index r = config_.subspace_rank;
  const int inliers = config_.n_subspaces - 1;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;

  Draw d;
  if (unif(rng_) < config_.inlier_fraction) {
    d.label = kInlier;
    d.source = std::min(inliers - 1, static_cast<int>(unif(rng_) * inliers));
  } else {
    d.label = kAnomaly;
    d.source = inliers;
  }
  Vector coeffs(r);
  for (auto& c : coeffs) c = normal(rng_);
  const double sd = std::sqrt(config_.noise_var);
  Vector noise(p);
  for (auto& v : noise) v = sd * normal(rng_);
  d.x = shifts_[static_cast<std::size_t>(d.source)] + bases_[static_cast<std::size_t>(d.source)] * coeffs + noise;

  if (config_.rotation_speed > 0.0) {
    for (int j = 0; j < inliers; ++j) {
      auto& v = bases_[static_cast<std::size_t>(j)];
      // generators_ are already unit-Frobenius, so this is rotate_subspace
      // without re-normalizing B each step.
      v = orthonormalize(v + config_.rotation_speed * (generators_[static_cast<std::size_t>(j)] * v));
    }
  }
  return d;
}

SyntheticData gen_synthetic(const SyntheticConfig& config) {
  SyntheticStream stream(config);
  SyntheticData out;
  out.data.resize(config.ambient_dim, config.total);
  out.labels.reserve(static_cast<std::size_t>(config.total));
  for (Eigen::Index t = 0; t < config.total; ++t) {
    auto d = stream.next();
    out.data.col(t) = d.x;
    out.labels.push_back(d.label);
  }
  return out;
}

}  // namespace othin
