// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "geoftscp/basis.hpp"
#include "geoftscp/core.hpp"

namespace geoftscp {

/// Matern correlation with the sqrt(2 nu) length convention: nu = 1/2 is
/// exp(-d/alpha), nu = 3/2 is (1 + sqrt(3) d/alpha) exp(-sqrt(3) d/alpha).
double matern_corr(double d, double alpha, double nu);

struct IsotropicMatern {
  double alpha = 1.0;
  double nu = 0.5;
};

/// Nonstationary anisotropic model: local kernel matrices Sigma(s) with a
/// shared rotation angle kappa and log-linear axis lengths
/// chi_r(s) = exp(beta_r0 + beta_r1 sin(l) + beta_r2 L + beta_r3 L^2),
/// l and L the longitude/latitude in radians (x and y on the plane).
struct NonstationaryAniso {
  double kappa = 0.0;
  Eigen::Matrix<double, 2, 4> beta = Eigen::Matrix<double, 2, 4>::Zero();
  double nu = 0.5;
};

/// Covariance of one score field: a correlation model plus plugged-in
/// spatially-varying field variance sigma2 and nugget gamma2 (held fixed
/// during likelihood fitting).
struct CovParams {
  std::variant<IsotropicMatern, NonstationaryAniso> model;
  Vector sigma2;  // length n
  Vector gamma2;  // length n

  double nu() const;
  static constexpr double kNuMin = 0.05;
  static constexpr double kNuMax = 4.5;
};

/// Covariance between the score fields at locations i1 and i2; the nugget
/// enters only on the diagonal.
double cov_entry(const CovParams& params, const SpatialDomain& domain, int i1, int i2);

/// Pairwise distances grouped by value, so isotropic kernels evaluate once
/// per distinct distance instead of once per pair.
struct DistanceCache {
  Matrix dist;
  Eigen::MatrixXi group;
  std::vector<double> unique_dist;

  explicit DistanceCache(const SpatialDomain& domain);
};

Matrix cov_matrix(const CovParams& params, const SpatialDomain& domain,
                  const DistanceCache* cache = nullptr);

enum class LikelihoodMode { Exact, Vecchia };

struct VecchiaSettings {
  int num_neighbors = 8;
};

/// Sparse inverse-Cholesky factor of the Vecchia approximation under max-min
/// ordering: row i whitens z[order[i]] against its nearest previously-ordered
/// neighbors. The implied density is a proper joint normal.
struct VecchiaFactor {
  std::vector<int> order;                                   // position -> original index
  std::vector<std::vector<std::pair<int, double>>> coeffs;  // ordered-index coefficient rows
  Vector diag;                                              // 1/sqrt(conditional variance)

  /// Whitened scores: row p is (z_{o(p)} - E[z_{o(p)} | neighbors]) / sd.
  Matrix whiten(const Matrix& z) const;
  double log_det_precision() const;
  /// Dense implied precision in the original index order (test support).
  Matrix dense_precision() const;
};

VecchiaFactor vecchia_factor(const CovParams& params, const SpatialDomain& domain,
                             int num_neighbors, const DistanceCache* cache = nullptr);

/// Gaussian log likelihood of the N score columns, one factorization shared
/// across columns.
double gaussian_loglik(const Matrix& z_q, const CovParams& params, const SpatialDomain& domain,
                       LikelihoodMode mode = LikelihoodMode::Exact,
                       const VecchiaSettings& vecchia = {}, const DistanceCache* cache = nullptr);

enum class CovModelKind { IsotropicMatern, NonstationaryAniso };

struct FitOptions {
  LikelihoodMode mode = LikelihoodMode::Exact;
  VecchiaSettings vecchia;
  int max_iterations = 500;
  double tolerance = 1e-6;
};

struct FitResult {
  CovParams params;
  double loglik = 0.0;
  bool converged = false;
};

/// Maximum likelihood over the correlation parameters (Nelder-Mead in
/// log/unconstrained coordinates); sigma2 and gamma2 ride along fixed.
/// Never returns a point below the initial value.
FitResult fit_mle(const Matrix& z_q, const SpatialDomain& domain, CovModelKind kind,
                  const Vector& sigma2, const Vector& gamma2,
                  const std::optional<CovParams>& init = std::nullopt, const FitOptions& opts = {},
                  const DistanceCache* cache = nullptr);

/// Conditional expectation of the spatially-smooth field given the observed
/// scores: zhat = (C - diag(gamma2)) C^{-1} z, column by column with one
/// factorization.
Matrix krige_scores(const Matrix& z_q, const CovParams& params, const SpatialDomain& domain,
                    const DistanceCache* cache = nullptr);

/// Reconstruction yhat_k(s_i, u_j) = model mean + sum_q zhat_q(i,k) phi_q(u_j).
FunctionalDataset predict_data(const FunctionalDataset& ds, const MeanModel& mean,
                               const Matrix& phi, const std::vector<Matrix>& zhat);

/// Per-component covariance fits.
struct SpatialCovFit {
  std::vector<FitResult> fits;
  std::optional<VecchiaSettings> vecchia;
};

}  // namespace geoftscp
