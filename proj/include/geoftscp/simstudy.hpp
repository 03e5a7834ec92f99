// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "geoftscp/changepoint.hpp"
#include "geoftscp/core.hpp"
#include "geoftscp/pipeline.hpp"

namespace geoftscp {

enum class Dependence { Independent, Dependent };

/// Fixed geometry of the synthetic study: a cell-midpoint grid on the unit
/// square (n_s1 cells along s1, n_s2 along s2), N series steps, m points per
/// curve at within-cell midpoints of [0,1].
struct SimDesign {
  int n_s1 = 15;
  int n_s2 = 20;
  int N = 15;
  int m = 40;
  std::uint64_t seed = 0;

  int n() const { return n_s1 * n_s2; }
};

SpatialDomain make_sim_domain(const SimDesign& design);
Vector make_sim_ugrid(const SimDesign& design);

/// Pointwise truth of the synthetic model.
struct TruthPoint {
  double mu = 0.0;
  double delta = 0.0;
  double tau = 0.0;  // quarter-integer change time, or N when no change
  bool has_change = false;
};

/// mu(s,u) = cos(pi u) exp(2(s1-s2)/(2u+1));
/// delta(s,u) = eta (u s1 + u^2 s2 - u^3 (s1+s2)) tapered to zero at the
/// boundary s1 - s2 = -0.3; tau(s) = ceil(15 + 3 exp(s1+s2))/4 on the change
/// half, N elsewhere.
TruthPoint eval_truth(double s1, double s2, double u, double eta, int N);

/// Truth evaluated on the design grids. The change marker additionally
/// requires eta > 0 (a zero-size change is a null location for testing).
struct SimTruth {
  Vector tau;                    // length n
  std::vector<bool> tau_marked;  // s1 - s2 > -0.3
  std::vector<bool> has_change;  // tau_marked and eta > 0
  Matrix mu;                     // n x m
  Matrix delta;                  // n x m
};

SimTruth truth_for(const SimDesign& design, double eta);

/// Score fields Z_q = Ztilde_q + U_q for the three error components:
/// sd sigma_1 = |s1|+|s2|+0.01, sigma_2 = (3|s1|+27|s2|)/25+0.01,
/// sigma_3 = (9|s1|+|s2|)/25+0.01, nugget variance 0.3. Dependent mode draws
/// Ztilde from the exponential-covariance model with ranges (0.4, 0.3, 0.6)
/// by dense Cholesky; independent mode matches the marginals.
std::vector<Matrix> simulate_score_fields(const SimDesign& design, Dependence mode,
                                          RngStream& rng);

/// Full panel: truth mean/change plus the component expansion
/// {1, sqrt(2) sin(2 pi u), sqrt(2) cos(2 pi u)} and white noise of variance
/// 0.16. Deterministic in (design.seed, rep_index); draws do not depend on eta.
std::pair<FunctionalDataset, SimTruth> generate_dataset(const SimDesign& design, double eta,
                                                        Dependence mode, int rep_index);

struct DetectorConfig {
  StatFamily family = StatFamily::Score;
  PredictionFlavor flavor = PredictionFlavor::Individual;
  int Q = 4;
  double alpha = 0.05;

  std::string name() const;
};

struct SimConfig {
  SimDesign design;
  std::vector<double> etas{10.0};
  std::vector<Dependence> modes{Dependence::Independent};
  int replicates = 20;
  std::vector<DetectorConfig> detectors;
  NullOptions nulls;
  PipelineOptions pipeline;  // Q is overridden per detector
};

struct MetricRow {
  double eta = 0.0;
  Dependence mode = Dependence::Independent;
  std::string detector;
  std::string metric;
  double value = 0.0;
};

struct MetricsTable {
  std::vector<MetricRow> rows;

  double get(double eta, Dependence mode, const std::string& detector,
             const std::string& metric) const;
};

/// Runs every (eta, mode) cell for the configured replicates and detectors;
/// replicates run in parallel on independent streams. Emits per-detector
/// fpr, fnr, fdr_bh, fwer_bonf, and tau_rmse rows.
MetricsTable run_study(const SimConfig& cfg);

const char* dependence_name(Dependence mode);

}  // namespace geoftscp
