// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "geoftscp/core.hpp"

namespace geoftscp {

/// Cubic B-spline basis on [0,1] with an open uniform knot vector and the
/// second-derivative roughness penalty Omega[a,b] = int psi_a'' psi_b''.
/// Omega is assembled exactly (two-point Gauss per knot span; the integrand
/// is piecewise quadratic).
struct BSplineBasis {
  int degree = 3;
  int num_basis = 0;
  Vector knots;   // length num_basis + degree + 1
  Matrix omega;   // num_basis x num_basis

  static BSplineBasis cubic(int num_basis);
};

/// Basis values at the given points, one row per point. Rows are nonnegative
/// and sum to one.
Matrix eval_bspline(const BSplineBasis& basis, const Vector& points);

/// Second derivatives of the basis at the given points (piecewise linear for
/// cubic splines).
Matrix eval_bspline_derivative2(const BSplineBasis& basis, const Vector& points);

enum class SpatialBasisKind { SphericalHarmonics, TensorPolynomial2D };

/// Spatial regression basis: real spherical harmonics up to max_degree on the
/// sphere (orthonormal under the surface measure, (degree, order) ordering),
/// or tensor products of shifted Legendre polynomials on the plane.
struct SpatialBasis {
  SpatialBasisKind kind = SpatialBasisKind::TensorPolynomial2D;
  int max_degree = 0;

  int num_basis() const { return (max_degree + 1) * (max_degree + 1); }

  static SpatialBasis spherical_harmonics(int max_degree) {
    return {SpatialBasisKind::SphericalHarmonics, max_degree};
  }
  static SpatialBasis tensor_polynomial(int max_degree) {
    return {SpatialBasisKind::TensorPolynomial2D, max_degree};
  }
};

/// Basis matrix at the domain locations, n x L_s.
Matrix eval_spatial(const SpatialBasis& basis, const SpatialDomain& domain);

/// Solves min_Theta ||W^(1/2)(Ybar - Psi_s Theta Psi_u^T)||^2
///   + zeta * tr(Theta Omega Theta^T)
/// through the Kronecker-structured normal equations; the n*m x L_s*L_u
/// design is never formed. Optional weights are per-location (rows of Ybar).
Matrix fit_penalized_surface(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                             double zeta, const Matrix& omega,
                             const std::optional<Vector>& weights = std::nullopt);

/// Generalized cross-validation over a grid of penalties:
/// GCV(zeta) = nm * RSS / (nm - edf)^2 with the effective degrees of freedom
/// taken from the diagonalized smoother. Ties break toward larger zeta.
double select_zeta_gcv(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                       const Matrix& omega, const std::vector<double>& zeta_grid,
                       const std::optional<Vector>& weights = std::nullopt);

/// GCV value per grid entry, in the given order (infinity where the smoother
/// exhausts the data).
std::vector<double> gcv_curve(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                              const Matrix& omega, const std::vector<double>& zeta_grid,
                              const std::optional<Vector>& weights = std::nullopt);

/// 25-point log-spaced default penalty grid, 1e-8 .. 1e4.
std::vector<double> default_zeta_grid();

/// Fitted mean surface mu(s,u) and change surface delta(s,u) in tensor-basis
/// coefficients, plus their values on the dataset grids.
struct MeanModel {
  Matrix theta_mu;     // L_s x L_u
  Matrix theta_delta;  // L_s x L_u
  SpatialBasis sbasis;
  BSplineBasis ubasis;
  double zeta = 0.0;
  ChangeConfig pilot;
  Vector u_grid;
  Matrix mu_values;     // n x m
  Matrix delta_values;  // n x m

  /// Model mean for year k0 (0-based) at location i: mu + indicator * delta
  /// with the indicator given by the pilot configuration.
  Vector fitted_curve(int i, int k0) const;

  bool change_active(int i, int k0) const;
};

/// True when the pilot says year k0 (0-based) at location i is post-change.
bool pilot_change_active(const ChangeConfig& cfg, int i, int k0);

/// Per-location segment averages under a pilot: pre-change means, post-change
/// offsets, and which locations have any post-change data.
struct SegmentMeans {
  Matrix ybar_mu;     // n x m
  Matrix ybar_delta;  // n x m
  Vector delta_weight;
};

SegmentMeans segment_means(const FunctionalDataset& ds, const ChangeConfig& cfg);

/// Segment-average responses per location followed by penalized surface fits
/// for mu and (when a pilot is present) delta. Locations whose post-change
/// segment is empty contribute zero rows with zero weight to the delta fit.
MeanModel estimate_mean_and_change(const FunctionalDataset& ds, const ChangeConfig& cfg,
                                   const SpatialBasis& sbasis, const BSplineBasis& ubasis,
                                   double zeta);

}  // namespace geoftscp
