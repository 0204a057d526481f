#include "othin/subspace_tracking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "othin/errors.hpp"

namespace othin {
namespace {

constexpr double kPinvRelTol = 1e-12;
constexpr double kSymmetryTol = 1e-10;
constexpr double kLstsqRidge = 1e-10;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(what);
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite input: ") + what);
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

TrackerState TrackerState::initial(Eigen::Index rank, double init_scale) {
  return TrackerState{Matrix::Constant(rank, rank, init_scale), init_scale};
}

Matrix compute_residual(const Matrix& basis, const Matrix& x, const Matrix& means) {
  require_same_shape(x, means, "compute_residual: data and means differ in shape");
  if (basis.rows() != x.rows()) throw DimensionError("compute_residual: basis rows != data rows");
  return basis.transpose() * (x - means);
}

Matrix pinv_psd(const Matrix& r) {
  if (r.rows() != r.cols()) throw DimensionError("pinv_psd: matrix not square");
  if (r.size() == 0) return r;
  const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
    throw std::invalid_argument("pinv_psd: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(r));
  const Vector& w = eig.eigenvalues();
  const double cutoff = kPinvRelTol * std::max(0.0, w.maxCoeff());
  Vector inv = Vector::Zero(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > cutoff && w[i] > 0.0) inv[i] = 1.0 / w[i];
  }
  const Matrix& q = eig.eigenvectors();
  return q * inv.asDiagonal() * q.transpose();
}

Matrix orthonormalize(const Matrix& vt) {
  require_finite(vt, "orthonormalize");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(vt.transpose() * vt);
  const Vector& w = eig.eigenvalues();  // ascending
  if (w.size() == 0) return vt;
  if (!(w[0] > 1e-14 * std::max(w[w.size() - 1], 1e-300))) {
    throw NumericalError("orthonormalize: input does not have full column rank");
  }
  const Matrix& q = eig.eigenvectors();
  const Vector inv_sqrt = w.cwiseSqrt().cwiseInverse();
  return vt * (q * inv_sqrt.asDiagonal() * q.transpose());
}

SubspaceUpdate petrels_update(const Matrix& basis, const TrackerState& state, const Matrix& x,
                              const Matrix& means, double alpha) {
  require_same_shape(x, means, "petrels_update: data and means differ in shape");
  if (basis.rows() != x.rows()) throw DimensionError("petrels_update: basis rows != data rows");
  if (state.r_matrix.rows() != basis.cols() || state.r_matrix.cols() != basis.cols()) {
    throw DimensionError("petrels_update: tracker state rank mismatch");
  }
  require_finite(x, "petrels_update data");
  require_finite(means, "petrels_update means");

  const Matrix centered = x - means;
  const Matrix coeffs = basis.transpose() * centered;        // B, r x n
  const Matrix gram = coeffs * coeffs.transpose();           // B B^T
  TrackerState next{symmetrized(alpha * state.r_matrix + gram), state.init_scale};
  const Matrix step = (centered * coeffs.transpose() - basis * gram) * pinv_psd(next.r_matrix);
  return SubspaceUpdate{orthonormalize(basis + step), std::move(next)};
}

Matrix masked_projection(const Matrix& basis_obs, const Matrix& centered_obs) {
  const Eigen::Index r = basis_obs.cols();
  Matrix normal = basis_obs.transpose() * basis_obs;
  Eigen::LDLT<Matrix> ldlt(normal);
  const Vector d = ldlt.vectorD().cwiseAbs();
  const bool near_singular = ldlt.info() != Eigen::Success || d.minCoeff() < kLstsqRidge * d.maxCoeff();
  if (near_singular) {
    normal += kLstsqRidge * Matrix::Identity(r, r);
    ldlt.compute(normal);
  }
  return ldlt.solve(basis_obs.transpose() * centered_obs);
}

SubspaceUpdate petrels_update_masked(const Matrix& basis, const TrackerState& state,
                                     const Matrix& x_obs, const Matrix& means_obs,
                                     const SampleMask& mask, double alpha) {
  require_same_shape(x_obs, means_obs, "petrels_update_masked: data and means differ in shape");
  if (mask.ambient_dim() != basis.rows()) throw DimensionError("petrels_update_masked: mask dimension");
  if (x_obs.rows() != mask.size()) throw DimensionError("petrels_update_masked: rows != |mask|");
  if (state.r_matrix.rows() != basis.cols() || state.r_matrix.cols() != basis.cols()) {
    throw DimensionError("petrels_update_masked: tracker state rank mismatch");
  }
  if (mask.size() < basis.cols()) {
    throw IllPosedUpdate("petrels_update_masked: fewer observed coordinates than rank");
  }
  require_finite(x_obs, "petrels_update_masked data");
  require_finite(means_obs, "petrels_update_masked means");

  const Matrix basis_obs = mask.gather_rows(basis);
  const Matrix centered = x_obs - means_obs;
  const Matrix coeffs = masked_projection(basis_obs, centered);
  const Matrix gram = coeffs * coeffs.transpose();
  TrackerState next{symmetrized(alpha * state.r_matrix + gram), state.init_scale};
  const Matrix step = (centered * coeffs.transpose() - basis_obs * gram) * pinv_psd(next.r_matrix);

  Matrix updated = basis;
  const auto& idx = mask.indices();
  for (Eigen::Index k = 0; k < mask.size(); ++k) updated.row(idx[static_cast<std::size_t>(k)]) += step.row(k);
  return SubspaceUpdate{orthonormalize(updated), std::move(next)};
}

Vector principal_angle_sines(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("principal angles: ambient dimensions differ");
  Eigen::HouseholderQR<Matrix> qa(a), qb(b);
  const Matrix ua = qa.householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix ub = qb.householderQ() * Matrix::Identity(b.rows(), b.cols());
  // Sines come from the part of span(b) left after projecting onto span(a).
  const Matrix residual = ub - ua * (ua.transpose() * ub);
  Eigen::JacobiSVD<Matrix> svd(residual);
  Vector s = svd.singularValues();
  for (auto& v : s) v = std::clamp(v, 0.0, 1.0);
  return s;
}

double largest_principal_angle(const Matrix& a, const Matrix& b) {
  const Vector s = principal_angle_sines(a, b);
  return s.size() == 0 ? 0.0 : std::asin(s.maxCoeff());
}

}  // namespace othin
