#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "othin/evaluation.hpp"

namespace othin {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const Vector& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

}  // namespace

OnlineDiagonalGmm::OnlineDiagonalGmm(int k, double alpha, double var_floor)
    : k_(k), alpha_(alpha), var_floor_(var_floor) {
  if (k < 1) throw std::invalid_argument("baseline GMM needs k >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
}

Vector OnlineDiagonalGmm::log_component_densities(const Vector& x) const {
  Vector out(k_);
  for (int j = 0; j < k_; ++j) {
    const auto var = vars_.col(j).array();
    const double quad = ((x - means_.col(j)).array().square() / var).sum();
    out[j] = std::log(weights_[j]) - 0.5 * (static_cast<double>(x.size()) * kLog2Pi + var.log().sum() + quad);
  }
  return out;
}

void OnlineDiagonalGmm::refresh_from_stats() {
  for (int j = 0; j < k_; ++j) {
    const double w = std::max(s0_[j], 1e-300);
    means_.col(j) = s1_.col(j) / w;
    vars_.col(j) = (s2_.col(j) / w - means_.col(j).cwiseAbs2()).cwiseMax(var_floor_);
  }
  weights_ = (s0_ / s0_.sum()).cwiseMax(1e-300);
}

void OnlineDiagonalGmm::fit(const Matrix& training, int iterations) {
  const Eigen::Index p = training.rows(), n = training.cols();
  if (n < k_) throw std::invalid_argument("baseline GMM: fewer training points than components");
  means_.resize(p, k_);
  // Farthest-point seeding starting from the first column.
  means_.col(0) = training.col(0);
  Vector dist = (training.colwise() - training.col(0)).colwise().squaredNorm().transpose();
  for (int j = 1; j < k_; ++j) {
    Eigen::Index far = 0;
    dist.maxCoeff(&far);
    means_.col(j) = training.col(far);
    dist = dist.cwiseMin((training.colwise() - training.col(far)).colwise().squaredNorm().transpose());
  }
  const Vector global_var = ((training.colwise() - training.rowwise().mean()).array().square().rowwise().mean())
                                .matrix().cwiseMax(var_floor_);
  vars_ = global_var.replicate(1, k_);
  weights_ = Vector::Constant(k_, 1.0 / k_);

  Matrix resp(k_, n);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const Vector lp = log_component_densities(training.col(c));
      resp.col(c) = (lp.array() - log_sum_exp(lp)).exp();
    }
    s0_ = resp.rowwise().sum();
    s1_ = training * resp.transpose();
    s2_ = training.cwiseAbs2() * resp.transpose();
    refresh_from_stats();
  }
  // Rescale to the forgetting window so online updates are not swamped.
  const double window = 1.0 / (1.0 - alpha_);
  const double scale = window / static_cast<double>(n);
  s0_ *= scale;
  s1_ *= scale;
  s2_ *= scale;
}

double OnlineDiagonalGmm::score(const Vector& x) const { return -log_sum_exp(log_component_densities(x)); }

void OnlineDiagonalGmm::update(const Matrix& batch) {
  for (Eigen::Index c = 0; c < batch.cols(); ++c) {
    const Vector x = batch.col(c);
    const Vector lp = log_component_densities(x);
    const Vector r = (lp.array() - log_sum_exp(lp)).exp();
    s0_ = alpha_ * s0_ + r;
    s1_ = alpha_ * s1_ + x * r.transpose();
    s2_ = alpha_ * s2_ + x.cwiseAbs2() * r.transpose();
    refresh_from_stats();
  }
}

std::vector<double> baseline_online_gmm(const Matrix& stream, Eigen::Index train_count, int k, double alpha,
                                        Eigen::Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  OnlineDiagonalGmm gmm(k, alpha);
  gmm.fit(stream.leftCols(train_count));
  std::vector<double> scores;
  for (Eigen::Index start = train_count; start < stream.cols(); start += batch_size) {
    const Eigen::Index n = std::min(batch_size, stream.cols() - start);
    const Matrix batch = stream.middleCols(start, n);
    for (Eigen::Index c = 0; c < n; ++c) scores.push_back(gmm.score(batch.col(c)));
    gmm.update(batch);
  }
  return scores;
}

}  // namespace othin
