#pragma once
// Low-rank-plus-isotropic Gaussian components and their likelihoods.
//
// A component has covariance  V diag(eigs) V^T + noise_var * I  with V (p x r)
// orthonormal. Every evaluation here is O(p r) (O(|mask| r^2 + r^3) for the
// masked variants): no p x p matrix is ever formed.

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace othin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kMinEig = 1e-12;
inline constexpr double kOrthonormalTol = 1e-8;

class LowRankGaussian {
 public:
  LowRankGaussian() = default;

  /// Eigenvalues are floored at kMinEig. Throws DimensionError on shape
  /// mismatch and std::invalid_argument on a non-orthonormal basis,
  /// non-positive noise variance, or r >= p.
  LowRankGaussian(Vector mean, Matrix basis, Vector eigs, double noise_var);

  Eigen::Index dim() const { return mean_.size(); }
  Eigen::Index rank() const { return basis_.cols(); }

  const Vector& mean() const { return mean_; }
  const Matrix& basis() const { return basis_; }
  const Vector& eigs() const { return eigs_; }
  double noise_var() const { return noise_var_; }

  void set_mean(Vector mean);
  /// Caller guarantees orthonormal columns (checked in debug builds only).
  void set_basis(Matrix basis);
  void set_eigs(Vector eigs);
  void set_noise_var(double noise_var);

  /// Largest |V^T V - I| entry.
  double orthonormality_error() const;

 private:
  Vector mean_;
  Matrix basis_;
  Vector eigs_;
  double noise_var_ = 1.0;
};

/// Sorted, distinct coordinate subset of [0, p).
class SampleMask {
 public:
  /// Throws std::invalid_argument unless indices are non-empty, strictly
  /// increasing and below p.
  SampleMask(std::vector<std::int32_t> indices, Eigen::Index p);

  static SampleMask full(Eigen::Index p);

  Eigen::Index size() const { return static_cast<Eigen::Index>(indices_.size()); }
  Eigen::Index ambient_dim() const { return p_; }
  bool is_full() const { return size() == p_; }
  const std::vector<std::int32_t>& indices() const { return indices_; }

  Vector gather(const Vector& x) const;
  /// Rows of m selected by the mask.
  Matrix gather_rows(const Matrix& m) const;

 private:
  std::vector<std::int32_t> indices_;
  Eigen::Index p_ = 0;
};

/// (x - mu)^T Sigma^{-1} (x - mu) through the Woodbury identity.
double quad_form(const LowRankGaussian& g, const Vector& x);

/// log|Sigma| through the matrix determinant lemma.
double log_det(const LowRankGaussian& g);

double log_likelihood(const LowRankGaussian& g, const Vector& x);

/// Log-density of the observed coordinates x_obs (length |mask|) under the
/// marginal N(P(mu), P(V) Lambda P(V)^T + noise_var I).
double masked_log_likelihood(const LowRankGaussian& g, const Vector& x_obs,
                             const SampleMask& mask);

/// Per-component quantities cached across many evaluations of the same
/// component (one scoring pass). Holds a reference to the component.
class PreparedGaussian {
 public:
  explicit PreparedGaussian(const LowRankGaussian& g);

  double quad_form(std::span<const double> x, std::span<double> scratch) const;
  double log_likelihood(std::span<const double> x, std::span<double> scratch) const;
  double log_det() const { return log_det_; }

 private:
  const LowRankGaussian* g_;
  Vector in_span_weight_;  // 1 / (lambda_m + sigma^2)
  double inv_noise_;
  double log_det_;
  double log_norm_;
};

/// Masked counterpart: gathers P(mu), P(V) and factors the r x r inner
/// system once per (component, mask).
class PreparedMaskedGaussian {
 public:
  PreparedMaskedGaussian(const LowRankGaussian& g, const SampleMask& mask);

  double quad_form(std::span<const double> x_obs, std::span<double> scratch) const;
  double log_likelihood(std::span<const double> x_obs, std::span<double> scratch) const;
  double log_det() const { return log_det_; }

 private:
  Vector mean_obs_;
  Matrix basis_obs_;  // |mask| x r, column-major
  Eigen::LLT<Matrix> inner_;  // Lambda^{-1} + sigma^{-2} P^T P
  double inv_noise_;
  double log_det_;
  double log_norm_;
};

}  // namespace othin
