// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "geoftscp/basis.hpp"
#include "geoftscp/core.hpp"

namespace geoftscp {

// ---------------------------------------------------------------------------
// Test statistics at a single location
// ---------------------------------------------------------------------------

struct ScoreStat {
  double value = 0.0;
  int tau = 1;  // in 1..N-1
};

/// Normalized CUSUM statistic of the first Q score series (columns of z) with
/// per-component variances lambda:
///   T = N^-2 sum_q lambda_q^-1 sum_t (sum_{k<=t} z - (t/N) sum_k z)^2.
/// The change time estimate is the argmax over t = 1..N-1, smallest on ties.
ScoreStat score_statistic(const Matrix& z, const Vector& lambda);

struct FfStat {
  double value = 0.0;
  int tau = 1;
  Vector profile;  // ||S_t||^2 for t = 0..N
};

/// CUSUM of the raw curves: S_t(u) = N^(-1/2)(sum_{k<=t} Y_k - (t/N) sum Y_k),
/// squared norm under the discrete (1/m) sum_j inner product; T = max_t.
FfStat ff_statistic(const Matrix& y);

struct EpidemicStat {
  double value = 0.0;
  int tau1 = 1;
  int tau2 = 2;
};

/// Two-changepoint statistic: sums the squared centered segment sums
/// sum_{k in (t1, t2]} z - ((t2-t1)/N) sum_k z over all 1 <= t1 < t2 <= N,
/// normalized by N^-3. The segment estimate is the argmax of the summand,
/// lexicographically smallest on ties.
EpidemicStat epidemic_statistic(const Matrix& z, const Vector& lambda);

// ---------------------------------------------------------------------------
// Null distributions
// ---------------------------------------------------------------------------

enum class NullKind { ScoreSum, FFWeighted, EpidemicSum };

/// Monte-Carlo sample of a Brownian-bridge limit functional:
///   ScoreSum:    sum_q int B_q^2,
///   FFWeighted:  sup_x sum_q w_q B_q^2(x),
///   EpidemicSum: sum_q int_0^1 int_0^y (B_q(x) - B_q(y))^2 dx dy.
struct NullDistribution {
  NullKind kind = NullKind::ScoreSum;
  int Q = 0;
  Vector weights;              // FFWeighted only
  std::vector<double> sample;  // sorted ascending
  int R = 0;
  int grid = 0;
  std::uint64_t seed = 0;
};

NullDistribution simulate_null(NullKind kind, int Q, int R, int grid, std::uint64_t seed);
NullDistribution simulate_null_ff(const Vector& weights, int R, int grid, std::uint64_t seed);

/// One FFWeighted null per row of weights, built from shared bridges.
std::vector<NullDistribution> ff_null_ensemble(const Matrix& weights, int R, int grid,
                                               std::uint64_t seed);

/// Process-wide memoized ScoreSum/EpidemicSum samples (they only depend on
/// the arguments, and reports across replicates share them).
const NullDistribution& shared_null(NullKind kind, int Q, int R, int grid, std::uint64_t seed);

/// Finite-sample Monte-Carlo p-value (1 + #{samples >= stat}) / (R + 1).
double p_value(double stat, const NullDistribution& null);

enum class AdjustMethod { BenjaminiHochberg, Bonferroni };

/// Bonferroni: min(n p, 1). Benjamini-Hochberg: step-up adjusted values with
/// enforced monotonicity, capped at one.
std::vector<double> adjust_pvalues(const std::vector<double>& p, AdjustMethod method);

/// Average change size per location: integral of the fitted change surface
/// over [0,1] (trapezoid with boundary extension on interior grids).
Vector change_magnitude(const MeanModel& mean, const SpatialDomain& domain);

/// Integral over [0,1] of values sampled on a uniform grid inside [0,1].
double integrate_unit_interval(const Vector& values, const Vector& u_grid);

// ---------------------------------------------------------------------------
// Per-location reports
// ---------------------------------------------------------------------------

enum class StatFamily { Score, FullyFunctional };
enum class PredictionFlavor { Individual, Primary, Unadjusted, Recomputed };

struct ChangepointReport {
  StatFamily family = StatFamily::Score;
  ChangeModel model = ChangeModel::Amoc;
  PredictionFlavor flavor = PredictionFlavor::Individual;
  Vector stat;
  Vector p;
  Vector p_bh;
  Vector p_bonf;
  std::vector<int> tau;   // Amoc change time, or epidemic tau1
  std::vector<int> tau2;  // epidemic only
  Vector delta_hat;       // u-averaged empirical change at the estimated time
};

struct NullOptions {
  int R = 100000;
  int grid = 1000;
  std::uint64_t seed = 0x8c05;
  int ff_R = 10000;   // per-location fully-functional nulls
  int ff_grid = 256;
};

/// Statistics computed from each location's data alone: local mean over the
/// series, local principal components and score variances, then the score,
/// fully-functional, or epidemic statistic.
ChangepointReport individual_reports(const FunctionalDataset& ds, int Q, ChangeModel model,
                                     StatFamily family = StatFamily::Score,
                                     const NullOptions& nulls = {});

/// Outputs of the spatial prediction pipeline needed to rebuild statistics.
struct PredictionInputs {
  const std::vector<Matrix>& zhat;     // Q score fields, n x N
  const FunctionalDataset& yhat;       // reconstructed panel
  const Matrix& lambda_star;           // n x Q, variances of predicted scores
  const Matrix& lambda_hat;            // n x Q, variances of raw scores
  bool null_hypothesis = true;         // prediction model fitted under the null
};

/// Statistics recomputed from spatial predictions. Score flavors require
/// null-hypothesis predictions; Primary normalizes by the predicted-score
/// variances, Unadjusted by the raw-score variances, and Recomputed reruns
/// the individual machinery on the predicted panel (as do fully-functional
/// reports).
ChangepointReport predicted_reports(const FunctionalDataset& ds, const PredictionInputs& inputs,
                                    StatFamily family, PredictionFlavor flavor, ChangeModel model,
                                    int Q, const NullOptions& nulls = {});

}  // namespace geoftscp
