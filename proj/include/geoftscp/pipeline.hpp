// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "geoftscp/changepoint.hpp"
#include "geoftscp/fpca.hpp"
#include "geoftscp/spatial.hpp"

namespace geoftscp {

/// End-to-end model estimation and prediction: mean/change surfaces, the
/// principal component decomposition, per-component covariance fits, kriged
/// scores, and the reconstructed panel.
struct PipelineOptions {
  int Q = 4;
  double bandwidth = 0.08;
  SpatialBasis sbasis = SpatialBasis::tensor_polynomial(5);
  int num_bsplines = 0;  // 0: min(20, m/2)
  std::vector<double> zeta_grid = default_zeta_grid();
  CovModelKind cov_kind = CovModelKind::IsotropicMatern;
  FitOptions fit;
  ChangeConfig pilot;  // default: global null
  // off by default: kernel smoothing of the marginal covariance before the
  // eigendecomposition (<= 0 picks the bandwidth by GCV)
  std::optional<double> covariance_smoothing;
};

struct PipelineResult {
  MeanModel mean;
  PCDecomposition pc;
  SpatialCovFit cov;
  std::vector<Matrix> zhat;  // Q kriged score fields, n x N
  FunctionalDataset yhat;
  Matrix lambda_star;  // n x Q local variances of the kriged scores
  bool null_hypothesis = true;

  PredictionInputs prediction_inputs() const {
    return {zhat, yhat, lambda_star, pc.lambda_hat, null_hypothesis};
  }
};

PipelineResult run_pipeline(const FunctionalDataset& ds, const PipelineOptions& opts);

}  // namespace geoftscp
