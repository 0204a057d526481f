#include "othin/low_rank_gaussian.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

#include "othin/errors.hpp"
#include "othin/kernels.hpp"

namespace othin {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

Vector floored(Vector eigs) {
  for (auto& e : eigs) e = std::max(e, kMinEig);
  return eigs;
}

void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

}  // namespace

LowRankGaussian::LowRankGaussian(Vector mean, Matrix basis, Vector eigs, double noise_var)
    : mean_(std::move(mean)), basis_(std::move(basis)), eigs_(floored(std::move(eigs))),
      noise_var_(noise_var) {
  if (basis_.rows() != mean_.size()) throw DimensionError("basis rows must equal mean length");
  if (eigs_.size() != basis_.cols()) throw DimensionError("eigs length must equal basis columns");
  if (basis_.cols() >= mean_.size()) throw std::invalid_argument("rank must be below dimension");
  if (!(noise_var_ > 0.0) || !std::isfinite(noise_var_)) {
    throw std::invalid_argument("noise variance must be positive and finite");
  }
  if (orthonormality_error() > kOrthonormalTol) {
    throw std::invalid_argument("basis columns are not orthonormal");
  }
}

void LowRankGaussian::set_mean(Vector mean) {
  require_dim(mean.size(), dim(), "mean");
  mean_ = std::move(mean);
}

void LowRankGaussian::set_basis(Matrix basis) {
  if (basis.rows() != basis_.rows() || basis.cols() != basis_.cols()) {
    throw DimensionError("basis shape changed");
  }
  basis_ = std::move(basis);
  assert(orthonormality_error() <= kOrthonormalTol);
}

void LowRankGaussian::set_eigs(Vector eigs) {
  require_dim(eigs.size(), rank(), "eigs");
  eigs_ = floored(std::move(eigs));
}

void LowRankGaussian::set_noise_var(double noise_var) {
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) {
    throw std::invalid_argument("noise variance must be positive and finite");
  }
  noise_var_ = noise_var;
}

double LowRankGaussian::orthonormality_error() const {
  const Eigen::Index r = rank();
  return (basis_.transpose() * basis_ - Matrix::Identity(r, r)).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

SampleMask::SampleMask(std::vector<std::int32_t> indices, Eigen::Index p)
    : indices_(std::move(indices)), p_(p) {
  if (indices_.empty()) throw std::invalid_argument("sample mask is empty");
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] < 0 || indices_[i] >= p_) {
      throw std::invalid_argument("sample mask index out of range");
    }
    if (i > 0 && indices_[i] <= indices_[i - 1]) {
      throw std::invalid_argument("sample mask indices must be strictly increasing");
    }
  }
}

SampleMask SampleMask::full(Eigen::Index p) {
  std::vector<std::int32_t> idx(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) idx[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  return SampleMask(std::move(idx), p);
}

Vector SampleMask::gather(const Vector& x) const {
  require_dim(x.size(), p_, "gather");
  Vector out(size());
  for (Eigen::Index k = 0; k < size(); ++k) out[k] = x[indices_[static_cast<std::size_t>(k)]];
  return out;
}

Matrix SampleMask::gather_rows(const Matrix& m) const {
  require_dim(m.rows(), p_, "gather_rows");
  Matrix out(size(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index k = 0; k < size(); ++k) out(k, c) = m(indices_[static_cast<std::size_t>(k)], c);
  }
  return out;
}

// ---------------------------------------------------------------------------

PreparedGaussian::PreparedGaussian(const LowRankGaussian& g)
    : g_(&g), in_span_weight_(g.rank()), inv_noise_(1.0 / g.noise_var()) {
  const double s2 = g.noise_var();
  // log|V L V^T + s2 I| = (p - r) log s2 + sum_m log(lambda_m + s2)
  double ld = static_cast<double>(g.dim() - g.rank()) * std::log(s2);
  for (Eigen::Index m = 0; m < g.rank(); ++m) {
    const double v = g.eigs()[m] + s2;
    in_span_weight_[m] = 1.0 / v;
    ld += std::log(v);
  }
  log_det_ = ld;
  log_norm_ = -0.5 * static_cast<double>(g.dim()) * kLog2Pi - 0.5 * ld;
}

double PreparedGaussian::quad_form(std::span<const double> x, std::span<double> scratch) const {
  const auto p = static_cast<std::size_t>(g_->dim());
  const auto& k = simd::kernels();
  const double total = k.center_sqnorm(x.data(), g_->mean().data(), scratch.data(), p);
  // Woodbury with V^T V = I splits the form into the out-of-span residual
  // scaled by 1/s2 and the in-span coordinates scaled by 1/(lambda + s2).
  double in_span_energy = 0.0;
  double weighted = 0.0;
  for (Eigen::Index m = 0; m < g_->rank(); ++m) {
    const double c = k.dot(g_->basis().col(m).data(), scratch.data(), p);
    in_span_energy += c * c;
    weighted += in_span_weight_[m] * c * c;
  }
  const double residual = std::max(0.0, total - in_span_energy);
  return residual * inv_noise_ + weighted;
}

double PreparedGaussian::log_likelihood(std::span<const double> x, std::span<double> scratch) const {
  return log_norm_ - 0.5 * quad_form(x, scratch);
}

PreparedMaskedGaussian::PreparedMaskedGaussian(const LowRankGaussian& g, const SampleMask& mask)
    : mean_obs_(mask.gather(g.mean())), basis_obs_(mask.gather_rows(g.basis())),
      inv_noise_(1.0 / g.noise_var()) {
  const Eigen::Index r = g.rank();
  Matrix inner = inv_noise_ * (basis_obs_.transpose() * basis_obs_);
  for (Eigen::Index m = 0; m < r; ++m) inner(m, m) += 1.0 / g.eigs()[m];
  inner_.compute(inner);
  if (inner_.info() != Eigen::Success) throw NumericalError("masked inner system not positive definite");
  // |P L P^T + s2 I| = s2^{|mask|} |L| |L^{-1} + P^T P / s2|
  const Matrix& l = inner_.matrixLLT();
  double ld = static_cast<double>(mask.size()) * std::log(g.noise_var());
  for (Eigen::Index m = 0; m < r; ++m) ld += std::log(g.eigs()[m]) + 2.0 * std::log(l(m, m));
  log_det_ = ld;
  log_norm_ = -0.5 * static_cast<double>(mask.size()) * kLog2Pi - 0.5 * ld;
}

double PreparedMaskedGaussian::quad_form(std::span<const double> x_obs,
                                         std::span<double> scratch) const {
  const auto n = static_cast<std::size_t>(mean_obs_.size());
  const auto& k = simd::kernels();
  const double total = k.center_sqnorm(x_obs.data(), mean_obs_.data(), scratch.data(), n);
  const Eigen::Index r = basis_obs_.cols();
  Vector c(r);
  for (Eigen::Index m = 0; m < r; ++m) c[m] = k.dot(basis_obs_.col(m).data(), scratch.data(), n);
  const double correction = c.dot(inner_.solve(c));
  return std::max(0.0, total * inv_noise_ - inv_noise_ * inv_noise_ * correction);
}

double PreparedMaskedGaussian::log_likelihood(std::span<const double> x_obs,
                                              std::span<double> scratch) const {
  return log_norm_ - 0.5 * quad_form(x_obs, scratch);
}

// ---------------------------------------------------------------------------

double quad_form(const LowRankGaussian& g, const Vector& x) {
  require_dim(x.size(), g.dim(), "quad_form");
  Vector scratch(g.dim());
  return PreparedGaussian(g).quad_form({x.data(), static_cast<std::size_t>(x.size())},
                                       {scratch.data(), static_cast<std::size_t>(scratch.size())});
}

double log_det(const LowRankGaussian& g) { return PreparedGaussian(g).log_det(); }

double log_likelihood(const LowRankGaussian& g, const Vector& x) {
  require_dim(x.size(), g.dim(), "log_likelihood");
  Vector scratch(g.dim());
  return PreparedGaussian(g).log_likelihood(
      {x.data(), static_cast<std::size_t>(x.size())},
      {scratch.data(), static_cast<std::size_t>(scratch.size())});
}

double masked_log_likelihood(const LowRankGaussian& g, const Vector& x_obs, const SampleMask& mask) {
  require_dim(mask.ambient_dim(), g.dim(), "mask ambient dimension");
  require_dim(x_obs.size(), mask.size(), "masked_log_likelihood");
  Vector scratch(x_obs.size());
  return PreparedMaskedGaussian(g, mask).log_likelihood(
      {x_obs.data(), static_cast<std::size_t>(x_obs.size())},
      {scratch.data(), static_cast<std::size_t>(scratch.size())});
}

}  // namespace othin
