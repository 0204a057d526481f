#pragma once
// Mini-batch PETRELS-style subspace tracking, with and without coordinate
// subsampling. Bases stay orthonormal through symmetric (polar) normalization.

#include "othin/low_rank_gaussian.hpp"

namespace othin {

inline constexpr double kDefaultTrackerInit = 1e-6;

struct TrackerState {
  Matrix r_matrix;  // r x r, symmetric PSD
  double init_scale = kDefaultTrackerInit;

  /// init_scale * ones(r, r): rank one until data arrives.
  static TrackerState initial(Eigen::Index rank, double init_scale = kDefaultTrackerInit);
};

struct SubspaceUpdate {
  Matrix basis;
  TrackerState state;
};

/// V^T (X - M): projection coefficients of centered columns.
Matrix compute_residual(const Matrix& basis, const Matrix& x, const Matrix& means);

SubspaceUpdate petrels_update(const Matrix& basis, const TrackerState& state, const Matrix& x,
                              const Matrix& means, double alpha);

/// x_obs and means_obs hold only the rows selected by mask. Rows outside the
/// mask receive no additive correction before orthonormalization. Throws
/// IllPosedUpdate when |mask| < r.
SubspaceUpdate petrels_update_masked(const Matrix& basis, const TrackerState& state,
                                     const Matrix& x_obs, const Matrix& means_obs,
                                     const SampleMask& mask, double alpha);

/// Vt (Vt^T Vt)^{-1/2}. Throws NumericalError on rank-deficient input.
Matrix orthonormalize(const Matrix& vt);

/// Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// 1e-12 * max eigenvalue count as zero.
Matrix pinv_psd(const Matrix& r);

/// Least-squares coefficients of centered observations on the masked basis rows.
Matrix masked_projection(const Matrix& basis_obs, const Matrix& centered_obs);

/// Sines of the principal angles between span(a) and span(b), largest first.
Vector principal_angle_sines(const Matrix& a, const Matrix& b);
double largest_principal_angle(const Matrix& a, const Matrix& b);

}  // namespace othin
