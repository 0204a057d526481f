#pragma once
// Synthetic union-of-subspaces streams: inliers near slowly rotating shifted
// subspaces, anomalies near a static subspace orthogonal to all of them.

#include <cstdint>
#include <random>
#include <vector>

#include "othin/low_rank_gaussian.hpp"

namespace othin {

struct SyntheticConfig {
  Eigen::Index ambient_dim = 100;
  Eigen::Index subspace_rank = 10;
  int n_subspaces = 3;            // the last one generates the anomalies
  double inlier_fraction = 0.95;
  double noise_var = 0.1;
  double rotation_speed = 0.0;    // delta
  Eigen::Index total = 4000;
  Eigen::Index train_count = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

enum Label : int { kInlier = 0, kAnomaly = 1 };

/// V + delta (B / ||B||_F) V, re-orthonormalized; delta == 0 returns V as is.
/// Throws std::invalid_argument when B is not skew-symmetric.
Matrix rotate_subspace(const Matrix& basis, const Matrix& skew, double delta);

class SyntheticStream {
 public:
  explicit SyntheticStream(SyntheticConfig config);

  struct Draw {
    Vector x;
    Label label = kInlier;
    int source = 0;  // generating subspace
  };

  /// One observation; the inlier subspaces rotate after every draw.
  Draw next();

  const Matrix& basis(int j) const { return bases_[static_cast<std::size_t>(j)]; }
  const Vector& shift(int j) const { return shifts_[static_cast<std::size_t>(j)]; }
  const SyntheticConfig& config() const { return config_; }

 private:
  SyntheticConfig config_;
  std::mt19937_64 rng_;
  std::vector<Matrix> bases_;
  std::vector<Vector> shifts_;
  std::vector<Matrix> generators_;  // normalized skew-symmetric B / ||B||_F, inlier subspaces only
};

struct SyntheticData {
  Matrix data;              // p x total
  std::vector<int> labels;  // 0 inlier, 1 anomaly
};

SyntheticData gen_synthetic(const SyntheticConfig& config);

}  // namespace othin
