// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "geoftscp/basis.hpp"
#include "geoftscp/core.hpp"

namespace geoftscp {

/// Epanechnikov kernel K(s) = 0.75 (1 - ||s||^2)_+ scaled to bandwidth h;
/// weight is zero at distance >= h.
struct KernelSpec {
  double bandwidth = 0.0;

  double weight(double dist) const {
    const double t = dist / bandwidth;
    return t < 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
  }
};

/// Marginal covariance of the residuals in u, pooled over locations and
/// years: C_u = (1/n) sum_i (1/N) sum_k r_ik r_ik^T.
Matrix marginal_covariance(const FunctionalDataset& ds, const MeanModel& mean);

struct EigenPair {
  Matrix phi;          // m x Q, orthonormal under (1/m) sum_j
  Vector eigenvalues;  // decreasing
  bool repeated_eigenvalue_warning = false;
};

/// Top-Q eigenpairs of C_u under the discrete inner product (1/m) sum_j,
/// columns sign-fixed to nonnegative sum. Flags a warning when the gap around
/// the retained spectrum is below 1e-10.
EigenPair eigendecompose(const Matrix& c_u, int Q);

/// Scores Z[q](i, k) = (1/m) phi_q^T (Y_k(s_i) - mu_k(s_i)).
std::vector<Matrix> extract_scores(const FunctionalDataset& ds, const MeanModel& mean,
                                   const Matrix& phi);

/// Locally-constant estimate of the marginal score variance
/// lambda_q(s0) = sum_i K_h(s_i - s0) mean_k Z^2 / sum_i K_h(s_i - s0).
Vector local_variance(const Matrix& z_q, const SpatialDomain& domain, const KernelSpec& kernel);

/// Locally-constant estimate of the spatially-correlated variance component
/// from off-diagonal score products within the bandwidth, floored at zero.
Vector local_cross_variance(const Matrix& z_q, const SpatialDomain& domain,
                            const KernelSpec& kernel);

/// Nugget variance gamma^2 = max(lambda - sigma^2, 1e-8 lambda).
Vector gamma_estimate(const Vector& lambda_hat, const Vector& sigma2_hat);

/// Product-kernel smooth of the covariance surface over (u, u'). A
/// nonpositive bandwidth selects one by GCV over a grid of multiples of the
/// u spacing. Off the pipeline's default path; useful when m is small or the
/// raw estimate is noisy.
Matrix smooth_covariance(const Matrix& c_u, const Vector& u_grid, double bandwidth = 0.0);

/// Principal components, scores, and the spatially-varying variance
/// decomposition lambda = sigma^2 + gamma^2 per component.
struct PCDecomposition {
  int Q = 0;
  Matrix phi;                  // m x Q
  Vector eigenvalues;          // Q
  std::vector<Matrix> scores;  // Q entries, each n x N
  Matrix lambda_hat;           // n x Q
  Matrix sigma2_hat;           // n x Q
  Matrix gamma2_hat;           // n x Q
  double bandwidth = 0.0;
  bool repeated_eigenvalue_warning = false;
};

/// Full decomposition pipeline: covariance, eigenpairs, scores, and
/// local-regression variances. sigma^2 is capped at lambda before the nugget
/// subtraction so the split stays nonnegative. covariance_smoothing engages
/// smooth_covariance first (<= 0 selects the bandwidth by GCV).
PCDecomposition fit_pc_decomposition(const FunctionalDataset& ds, const MeanModel& mean, int Q,
                                     const KernelSpec& kernel,
                                     std::optional<double> covariance_smoothing = std::nullopt);

}  // namespace geoftscp
