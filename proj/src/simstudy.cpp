// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/simstudy.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "geoftscp/threading.hpp"

namespace geoftscp {

SpatialDomain make_sim_domain(const SimDesign& design) {
  Matrix xy(design.n(), 2);
  for (int i1 = 0; i1 < design.n_s1; ++i1)
    for (int i2 = 0; i2 < design.n_s2; ++i2) {
      const int i = i1 * design.n_s2 + i2;
      xy(i, 0) = (i1 + 0.5) / design.n_s1;
      xy(i, 1) = (i2 + 0.5) / design.n_s2;
    }
  return SpatialDomain::plane(std::move(xy));
}

Vector make_sim_ugrid(const SimDesign& design) {
  Vector u(design.m);
  for (int j = 0; j < design.m; ++j) u[j] = (j + 0.5) / design.m;
  return u;
}

TruthPoint eval_truth(double s1, double s2, double u, double eta, int N) {
  TruthPoint t;
  t.mu = std::cos(std::numbers::pi * u) * std::exp(2.0 * (s1 - s2) / (2.0 * u + 1.0));
  const bool marked = s1 - s2 > -0.3;
  if (marked) {
    t.delta = eta * (u * s1 + u * u * s2 - u * u * u * (s1 + s2)) * (s1 - s2 + 0.3);
    t.tau = 0.25 * std::ceil(15.0 + 3.0 * std::exp(s1 + s2));
    t.has_change = eta > 0.0;
  } else {
    t.delta = 0.0;
    t.tau = N;
    t.has_change = false;
  }
  return t;
}

SimTruth truth_for(const SimDesign& design, double eta) {
  const SpatialDomain domain = make_sim_domain(design);
  const Vector u = make_sim_ugrid(design);
  SimTruth truth;
  const int n = design.n();
  truth.tau.resize(n);
  truth.tau_marked.resize(n);
  truth.has_change.resize(n);
  truth.mu.resize(n, design.m);
  truth.delta.resize(n, design.m);
  for (int i = 0; i < n; ++i) {
    const double s1 = domain.coords(i, 0), s2 = domain.coords(i, 1);
    truth.tau_marked[i] = s1 - s2 > -0.3;
    for (int j = 0; j < design.m; ++j) {
      const TruthPoint t = eval_truth(s1, s2, u[j], eta, design.N);
      truth.mu(i, j) = t.mu;
      truth.delta(i, j) = t.delta;
      if (j == 0) {
        truth.tau[i] = t.tau;
        truth.has_change[i] = t.has_change;
      }
    }
  }
  return truth;
}

namespace {

Vector component_sd(const SpatialDomain& domain, int q) {
  const int n = domain.size();
  Vector sd(n);
  for (int i = 0; i < n; ++i) {
    const double a1 = std::abs(domain.coords(i, 0));
    const double a2 = std::abs(domain.coords(i, 1));
    if (q == 0)
      sd[i] = a1 + a2 + 0.01;
    else if (q == 1)
      sd[i] = (3.0 * a1 + 27.0 * a2) / 25.0 + 0.01;
    else
      sd[i] = (9.0 * a1 + a2) / 25.0 + 0.01;
  }
  return sd;
}

constexpr double kNuggetVar = 0.3;
constexpr double kWhiteVar = 0.16;
constexpr double kRanges[3] = {0.4, 0.3, 0.6};

}  // namespace

std::vector<Matrix> simulate_score_fields(const SimDesign& design, Dependence mode,
                                          RngStream& rng) {
  const SpatialDomain domain = make_sim_domain(design);
  const int n = design.n();
  std::vector<Matrix> z(3, Matrix(n, design.N));
  const double nugget_sd = std::sqrt(kNuggetVar);
  for (int q = 0; q < 3; ++q) {
    const Vector sd = component_sd(domain, q);
    if (mode == Dependence::Dependent) {
      CovParams params;
      params.model = IsotropicMatern{kRanges[q], 0.5};
      params.sigma2 = sd.cwiseAbs2();
      params.gamma2 = Vector::Zero(n);
      Matrix c = cov_matrix(params, domain);
      c.diagonal().array() += 1e-12 * params.sigma2.mean();
      Eigen::LLT<Matrix> llt(c);
      if (llt.info() != Eigen::Success)
        fail(Errc::NotPositiveDefinite, "generator covariance failed to factor");
      const Matrix chol = llt.matrixL();
      Vector xi(n);
      for (int k = 0; k < design.N; ++k) {
        for (int i = 0; i < n; ++i) xi[i] = rng.normal();
        z[q].col(k) = chol.triangularView<Eigen::Lower>() * xi;
        for (int i = 0; i < n; ++i) z[q](i, k) += nugget_sd * rng.normal();
      }
    } else {
      for (int k = 0; k < design.N; ++k)
        for (int i = 0; i < n; ++i) {
          const double total_sd = std::sqrt(sd[i] * sd[i] + kNuggetVar);
          z[q](i, k) = total_sd * rng.normal();
        }
    }
  }
  return z;
}

std::pair<FunctionalDataset, SimTruth> generate_dataset(const SimDesign& design, double eta,
                                                        Dependence mode, int rep_index) {
  SpatialDomain domain = make_sim_domain(design);
  const Vector u = make_sim_ugrid(design);
  SimTruth truth = truth_for(design, eta);

  RngStream rng(design.seed, static_cast<std::uint64_t>(rep_index));
  const std::vector<Matrix> z = simulate_score_fields(design, mode, rng);

  Matrix phi(design.m, 3);
  for (int j = 0; j < design.m; ++j) {
    phi(j, 0) = 1.0;
    phi(j, 1) = std::numbers::sqrt2 * std::sin(2.0 * std::numbers::pi * u[j]);
    phi(j, 2) = std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * u[j]);
  }

  FunctionalDataset ds = FunctionalDataset::zeros(std::move(domain), design.N, u);
  const double white_sd = std::sqrt(kWhiteVar);
  for (int i = 0; i < ds.n; ++i)
    for (int k = 0; k < ds.N; ++k) {
      auto curve = ds.curve(i, k);
      const bool changed = truth.tau_marked[i] && (k + 1 > truth.tau[i]);
      for (int j = 0; j < ds.m; ++j) {
        double v = truth.mu(i, j);
        if (changed) v += truth.delta(i, j);
        for (int q = 0; q < 3; ++q) v += z[q](i, k) * phi(j, q);
        curve[j] = v + white_sd * rng.normal();
      }
    }
  return {std::move(ds), std::move(truth)};
}

std::string DetectorConfig::name() const {
  std::ostringstream os;
  os << (family == StatFamily::Score ? "score" : "ff");
  switch (flavor) {
    case PredictionFlavor::Individual: os << "_individual"; break;
    case PredictionFlavor::Primary: os << "_predicted"; break;
    case PredictionFlavor::Unadjusted: os << "_predicted_unadjusted"; break;
    case PredictionFlavor::Recomputed: os << "_predicted_recomputed"; break;
  }
  os << "_q" << Q;
  if (alpha != 0.05) os << "_a" << alpha;
  return os.str();
}

const char* dependence_name(Dependence mode) {
  return mode == Dependence::Independent ? "independent" : "dependent";
}

double MetricsTable::get(double eta, Dependence mode, const std::string& detector,
                         const std::string& metric) const {
  for (const MetricRow& row : rows)
    if (row.eta == eta && row.mode == mode && row.detector == detector && row.metric == metric)
      return row.value;
  fail(Errc::ConfigError, "metric row not found: " + detector + "/" + metric);
}

namespace {

struct ReplicateCounts {
  long raw_false = 0;
  long raw_detected = 0;  // raw rejections among change locations
  long bh_false = 0;
  long bonf_false = 0;
  double tau_sq_err = 0.0;
};

ReplicateCounts score_replicate(const ChangepointReport& rep, const SimTruth& truth,
                                double alpha) {
  ReplicateCounts out;
  const int n = static_cast<int>(rep.p.size());
  for (int i = 0; i < n; ++i) {
    const bool change = truth.has_change[i];
    if (rep.p[i] <= alpha) (change ? out.raw_detected : out.raw_false) += 1;
    if (rep.p_bh[i] <= alpha && !change) ++out.bh_false;
    if (rep.p_bonf[i] <= alpha && !change) ++out.bonf_false;
    if (change) {
      const double err = rep.tau[i] - truth.tau[i];
      out.tau_sq_err += err * err;
    }
  }
  return out;
}

}  // namespace

MetricsTable run_study(const SimConfig& cfg) {
  if (cfg.replicates < 1) fail(Errc::ConfigError, "need at least one replicate");
  if (cfg.detectors.empty()) fail(Errc::ConfigError, "need at least one detector");
  for (double eta : cfg.etas)
    if (eta < 0.0) fail(Errc::ConfigError, "eta must be nonnegative");

  MetricsTable table;
  for (const Dependence mode : cfg.modes)
    for (const double eta : cfg.etas) {
      const SimTruth truth = truth_for(cfg.design, eta);
      long n_change = 0;
      for (const bool c : truth.has_change) n_change += c;
      const long n_null = cfg.design.n() - n_change;

      std::vector<std::vector<ReplicateCounts>> counts(
          cfg.replicates, std::vector<ReplicateCounts>(cfg.detectors.size()));

      parallel_for(cfg.replicates, [&](int rep_index) {
        auto [ds, rep_truth] = generate_dataset(cfg.design, eta, mode, rep_index);

        // One pipeline per Q serves every predicted flavor.
        std::map<int, PipelineResult> pipelines;
        for (const DetectorConfig& det : cfg.detectors)
          if (det.flavor != PredictionFlavor::Individual && !pipelines.count(det.Q)) {
            PipelineOptions opts = cfg.pipeline;
            opts.Q = det.Q;
            pipelines.emplace(det.Q, run_pipeline(ds, opts));
          }

        for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
          const DetectorConfig& det = cfg.detectors[d];
          ChangepointReport report =
              det.flavor == PredictionFlavor::Individual
                  ? individual_reports(ds, det.Q, ChangeModel::Amoc, det.family, cfg.nulls)
                  : predicted_reports(ds, pipelines.at(det.Q).prediction_inputs(), det.family,
                                      det.flavor, ChangeModel::Amoc, det.Q, cfg.nulls);
          counts[rep_index][d] = score_replicate(report, rep_truth, det.alpha);
        }
      });

      for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
        long raw_false = 0, raw_detected = 0, bh_false = 0, reps_with_bonf_false = 0;
        double tau_sq = 0.0;
        for (int r = 0; r < cfg.replicates; ++r) {
          const ReplicateCounts& c = counts[r][d];
          raw_false += c.raw_false;
          raw_detected += c.raw_detected;
          bh_false += c.bh_false;
          reps_with_bonf_false += c.bonf_false > 0;
          tau_sq += c.tau_sq_err;
        }
        const double reps = cfg.replicates;
        const std::string name = cfg.detectors[d].name();
        auto push = [&](const char* metric, double value) {
          table.rows.push_back({eta, mode, name, metric, value});
        };
        const double nan = std::numeric_limits<double>::quiet_NaN();
        push("fpr", n_null > 0 ? raw_false / (reps * n_null) : nan);
        push("fnr", n_change > 0 ? 1.0 - raw_detected / (reps * n_change) : nan);
        // false-rejection rate among null locations after the BH adjustment
        push("fdr_bh", n_null > 0 ? bh_false / (reps * n_null) : nan);
        push("fwer_bonf", reps_with_bonf_false / reps);
        push("tau_rmse", n_change > 0 ? std::sqrt(tau_sq / (reps * n_change)) : nan);
      }
    }
  return table;
}

}  // namespace geoftscp
