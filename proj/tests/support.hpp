#pragma once
// Shared helpers for the test suites: random components and dense oracles.

#include <cmath>
#include <numbers>
#include <random>

#include "othin/low_rank_gaussian.hpp"

namespace othin::testing {

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

inline Vector gaussian_vector(Eigen::Index n, std::mt19937_64& rng) {
  return gaussian_matrix(n, 1, rng).col(0);
}

inline Matrix random_orthonormal(Eigen::Index p, Eigen::Index r, std::mt19937_64& rng) {
  const Matrix a = gaussian_matrix(p, r, rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(p, r);
}

inline LowRankGaussian random_component(Eigen::Index p, Eigen::Index r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eig(0.05, 5.0);
  std::uniform_real_distribution<double> noise(0.05, 2.0);
  Vector lambda(r);
  for (Eigen::Index i = 0; i < r; ++i) lambda[i] = eig(rng);
  return LowRankGaussian(gaussian_vector(p, rng), random_orthonormal(p, r, rng), lambda, noise(rng));
}

inline Matrix dense_covariance(const LowRankGaussian& g) {
  const Eigen::Index p = g.dim();
  return g.basis() * g.eigs().asDiagonal() * g.basis().transpose() + g.noise_var() * Matrix::Identity(p, p);
}

// Dense Gaussian log-density through a Cholesky factor of the covariance.
inline double dense_log_density(const Matrix& cov, const Vector& mean, const Vector& x) {
  Eigen::LLT<Matrix> llt(cov);
  const Vector d = x - mean;
  const double quad = d.dot(llt.solve(d));
  const Matrix l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace othin::testing
