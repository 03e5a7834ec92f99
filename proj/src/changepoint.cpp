// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/changepoint.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <tuple>

#include "geoftscp/fpca.hpp"
#include "geoftscp/threading.hpp"

namespace geoftscp {

namespace {

// Core CUSUM machinery shared by the strict entry point and the report path.
// Lenient mode drops components whose variance sits at or below the floor;
// such scores are constant in k up to roundoff of the source curves, and a
// self-normalized CUSUM of roundoff noise is meaningless.
ScoreStat score_statistic_impl(const Matrix& z, const Vector& lambda, bool lenient,
                               double lambda_floor = 0.0) {
  const int N = static_cast<int>(z.rows());
  const int Q = static_cast<int>(z.cols());
  if (N < 2) fail(Errc::ConfigError, "need at least two series steps");
  if (lambda.size() != Q) fail(Errc::DomainMismatch, "variance length does not match components");
  Vector inv_lambda = Vector::Zero(Q);
  for (int q = 0; q < Q; ++q) {
    if (lambda[q] > (lenient ? lambda_floor : 0.0))
      inv_lambda[q] = 1.0 / lambda[q];
    else if (!lenient)
      fail(Errc::NonPositiveVariance, "component variance must be positive");
  }
  const Eigen::RowVectorXd total = z.colwise().sum();
  Eigen::RowVectorXd cum = Eigen::RowVectorXd::Zero(Q);
  double sum_sq = 0.0;
  double best = -1.0;
  int best_t = 1;
  for (int t = 1; t <= N; ++t) {
    cum += z.row(t - 1);
    double w = 0.0;
    for (int q = 0; q < Q; ++q) {
      const double c = cum[q] - (static_cast<double>(t) / N) * total[q];
      w += inv_lambda[q] * c * c;
    }
    sum_sq += w;
    if (t < N && w > best) {
      best = w;
      best_t = t;
    }
  }
  return {sum_sq / (static_cast<double>(N) * N), best_t};
}

EpidemicStat epidemic_statistic_impl(const Matrix& z, const Vector& lambda, bool lenient,
                                     double lambda_floor = 0.0) {
  const int N = static_cast<int>(z.rows());
  const int Q = static_cast<int>(z.cols());
  if (N < 3) fail(Errc::ConfigError, "need at least three series steps");
  if (lambda.size() != Q) fail(Errc::DomainMismatch, "variance length does not match components");
  Vector inv_lambda = Vector::Zero(Q);
  for (int q = 0; q < Q; ++q) {
    if (lambda[q] > (lenient ? lambda_floor : 0.0))
      inv_lambda[q] = 1.0 / lambda[q];
    else if (!lenient)
      fail(Errc::NonPositiveVariance, "component variance must be positive");
  }
  Matrix prefix = Matrix::Zero(N + 1, Q);
  for (int t = 1; t <= N; ++t) prefix.row(t) = prefix.row(t - 1) + z.row(t - 1);
  const Eigen::RowVectorXd total = prefix.row(N);

  double acc = 0.0, best = -1.0;
  int best_t1 = 1, best_t2 = 2;
  for (int t1 = 1; t1 < N; ++t1)
    for (int t2 = t1 + 1; t2 <= N; ++t2) {
      const double frac = static_cast<double>(t2 - t1) / N;
      double w = 0.0;
      for (int q = 0; q < Q; ++q) {
        const double seg = prefix(t2, q) - prefix(t1, q) - frac * total[q];
        w += inv_lambda[q] * seg * seg;
      }
      acc += w;
      if (w > best) {
        best = w;
        best_t1 = t1;
        best_t2 = t2;
      }
    }
  return {acc / (static_cast<double>(N) * N * N), best_t1, best_t2};
}

}  // namespace

ScoreStat score_statistic(const Matrix& z, const Vector& lambda) {
  return score_statistic_impl(z, lambda, false);
}

EpidemicStat epidemic_statistic(const Matrix& z, const Vector& lambda) {
  return epidemic_statistic_impl(z, lambda, false);
}

FfStat ff_statistic(const Matrix& y) {
  const int N = static_cast<int>(y.rows());
  const int m = static_cast<int>(y.cols());
  if (N < 2) fail(Errc::ConfigError, "need at least two series steps");
  const Eigen::RowVectorXd total = y.colwise().sum();
  Eigen::RowVectorXd cum = Eigen::RowVectorXd::Zero(m);
  FfStat out;
  out.profile = Vector::Zero(N + 1);
  double best = -1.0;
  for (int t = 1; t <= N; ++t) {
    cum += y.row(t - 1);
    const Eigen::RowVectorXd s = (cum - (static_cast<double>(t) / N) * total) / std::sqrt(N);
    const double norm_sq = s.squaredNorm() / m;
    out.profile[t] = norm_sq;
    if (t < N && norm_sq > best) {
      best = norm_sq;
      out.tau = t;
    }
  }
  out.value = out.profile.segment(1, N - 1).maxCoeff();
  return out;
}

// ---------------------------------------------------------------------------
// Null distributions
// ---------------------------------------------------------------------------

namespace {

constexpr int kNullChunk = 512;

// Interior bridge values B(i/G), i = 1..G-1, from iid increments.
void draw_bridge(RngStream& rng, int grid, Vector& bridge) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(grid));
  double walk = 0.0;
  for (int i = 0; i < grid - 1; ++i) {
    walk += rng.normal();
    bridge[i] = walk;
  }
  walk += rng.normal();
  for (int i = 0; i < grid - 1; ++i)
    bridge[i] = (bridge[i] - (static_cast<double>(i + 1) / grid) * walk) * scale;
}

template <typename PerReplicate>
std::vector<double> monte_carlo_sample(int R, std::uint64_t seed, PerReplicate eval) {
  std::vector<double> sample(R);
  const int chunks = (R + kNullChunk - 1) / kNullChunk;
  parallel_for(chunks, [&](int c) {
    const int lo = c * kNullChunk;
    const int hi = std::min(R, lo + kNullChunk);
    for (int r = lo; r < hi; ++r) {
      RngStream rng(seed, static_cast<std::uint64_t>(r));
      sample[r] = eval(rng);
    }
  });
  std::sort(sample.begin(), sample.end());
  return sample;
}

void check_null_sizes(int R, int grid) {
  if (R < 10000) fail(Errc::ConfigError, "null sample needs at least 10000 replicates");
  if (grid < 200) fail(Errc::ConfigError, "bridge grid needs at least 200 points");
}

}  // namespace

NullDistribution simulate_null(NullKind kind, int Q, int R, int grid, std::uint64_t seed) {
  check_null_sizes(R, grid);
  if (Q < 1) fail(Errc::ConfigError, "need at least one component");
  if (kind == NullKind::FFWeighted)
    fail(Errc::ConfigError, "weighted null requires explicit weights");

  NullDistribution out;
  out.kind = kind;
  out.Q = Q;
  out.R = R;
  out.grid = grid;
  out.seed = seed;

  if (kind == NullKind::ScoreSum) {
    out.sample = monte_carlo_sample(R, seed, [&](RngStream& rng) {
      Vector bridge(grid - 1);
      double acc = 0.0;
      for (int q = 0; q < Q; ++q) {
        draw_bridge(rng, grid, bridge);
        acc += bridge.squaredNorm() / grid;
      }
      return acc;
    });
  } else {
    out.sample = monte_carlo_sample(R, seed, [&](RngStream& rng) {
      Vector bridge(grid - 1);
      double acc = 0.0;
      for (int q = 0; q < Q; ++q) {
        draw_bridge(rng, grid, bridge);
        // sum_{i<j} (B_i - B_j)^2 via prefix sums, one cell weight 1/G^2
        double s1 = 0.0, s2 = 0.0, term = 0.0;
        for (int j = 0; j < grid - 1; ++j) {
          const double b = bridge[j];
          term += s2 + j * b * b - 2.0 * b * s1;
          s1 += b;
          s2 += b * b;
        }
        acc += term / (static_cast<double>(grid) * grid);
      }
      return acc;
    });
  }
  return out;
}

NullDistribution simulate_null_ff(const Vector& weights, int R, int grid, std::uint64_t seed) {
  check_null_sizes(R, grid);
  const int Q = static_cast<int>(weights.size());
  if (Q < 1) fail(Errc::ConfigError, "need at least one weight");
  NullDistribution out;
  out.kind = NullKind::FFWeighted;
  out.Q = Q;
  out.weights = weights;
  out.R = R;
  out.grid = grid;
  out.seed = seed;
  out.sample = monte_carlo_sample(R, seed, [&](RngStream& rng) {
    Vector bridge(grid - 1);
    Vector acc = Vector::Zero(grid - 1);
    for (int q = 0; q < Q; ++q) {
      draw_bridge(rng, grid, bridge);
      acc += weights[q] * bridge.cwiseAbs2();
    }
    return acc.maxCoeff();
  });
  return out;
}

std::vector<NullDistribution> ff_null_ensemble(const Matrix& weights, int R, int grid,
                                               std::uint64_t seed) {
  check_null_sizes(R, grid);
  const int n = static_cast<int>(weights.rows());
  const int Q = static_cast<int>(weights.cols());
  Matrix samples(n, R);
  const int chunks = (R + kNullChunk - 1) / kNullChunk;
  parallel_for(chunks, [&](int c) {
    const int lo = c * kNullChunk;
    const int hi = std::min(R, lo + kNullChunk);
    Vector bridge(grid - 1);
    Matrix bridge_sq(Q, grid - 1);
    for (int r = lo; r < hi; ++r) {
      RngStream rng(seed, static_cast<std::uint64_t>(r));
      for (int q = 0; q < Q; ++q) {
        draw_bridge(rng, grid, bridge);
        bridge_sq.row(q) = bridge.cwiseAbs2().transpose();
      }
      samples.col(r) = (weights * bridge_sq).rowwise().maxCoeff();
    }
  });
  std::vector<NullDistribution> out(n);
  for (int i = 0; i < n; ++i) {
    out[i].kind = NullKind::FFWeighted;
    out[i].Q = Q;
    out[i].weights = weights.row(i);
    out[i].R = R;
    out[i].grid = grid;
    out[i].seed = seed;
    out[i].sample.assign(samples.row(i).begin(), samples.row(i).end());
    std::sort(out[i].sample.begin(), out[i].sample.end());
  }
  return out;
}

const NullDistribution& shared_null(NullKind kind, int Q, int R, int grid, std::uint64_t seed) {
  using Key = std::tuple<int, int, int, int, std::uint64_t>;
  static std::map<Key, NullDistribution> cache;
  static std::mutex mutex;
  const Key key{static_cast<int>(kind), Q, R, grid, seed};
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, simulate_null(kind, Q, R, grid, seed)).first;
  return it->second;
}

double p_value(double stat, const NullDistribution& null) {
  if (null.sample.empty()) fail(Errc::ConfigError, "empty null sample");
  const auto at = std::lower_bound(null.sample.begin(), null.sample.end(), stat);
  const auto count_ge = null.sample.end() - at;
  return (1.0 + static_cast<double>(count_ge)) / (null.sample.size() + 1.0);
}

std::vector<double> adjust_pvalues(const std::vector<double>& p, AdjustMethod method) {
  const std::size_t n = p.size();
  std::vector<double> out(n);
  if (method == AdjustMethod::Bonferroni) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::min(p[i] * n, 1.0);
    return out;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  double running = 1.0;
  for (std::size_t r = n; r-- > 0;) {
    running = std::min(running, p[idx[r]] * n / (r + 1));
    out[idx[r]] = running;
  }
  return out;
}

double integrate_unit_interval(const Vector& values, const Vector& u_grid) {
  const int m = static_cast<int>(values.size());
  if (u_grid.size() != m || m < 2) fail(Errc::DomainMismatch, "grid does not match values");
  double acc = 0.0;
  for (int j = 0; j + 1 < m; ++j)
    acc += 0.5 * (u_grid[j + 1] - u_grid[j]) * (values[j] + values[j + 1]);
  // rectangle extension to the interval ends for interior grids
  acc += u_grid[0] * values[0];
  acc += (1.0 - u_grid[m - 1]) * values[m - 1];
  return acc;
}

Vector change_magnitude(const MeanModel& mean, const SpatialDomain& domain) {
  const int n = domain.size();
  if (mean.delta_values.rows() != n) fail(Errc::DomainMismatch, "mean model does not match domain");
  Vector out(n);
  for (int i = 0; i < n; ++i)
    out[i] = integrate_unit_interval(mean.delta_values.row(i), mean.u_grid);
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

struct LocationStat {
  double stat = 0.0;
  int tau1 = 1;
  int tau2 = 0;
  Vector ff_weights;
  double delta_hat = 0.0;
};

double segment_delta_amoc(const Matrix& y, const Vector& u_grid, int tau) {
  const int N = static_cast<int>(y.rows());
  const Vector pre = y.topRows(tau).colwise().mean();
  const Vector post = y.bottomRows(N - tau).colwise().mean();
  return integrate_unit_interval(post - pre, u_grid);
}

double segment_delta_epidemic(const Matrix& y, const Vector& u_grid, int tau1, int tau2) {
  const int N = static_cast<int>(y.rows());
  Vector inside = Vector::Zero(y.cols());
  Vector outside = Vector::Zero(y.cols());
  int n_in = 0, n_out = 0;
  for (int k = 1; k <= N; ++k) {
    if (k > tau1 && k <= tau2) {
      inside += y.row(k - 1);
      ++n_in;
    } else {
      outside += y.row(k - 1);
      ++n_out;
    }
  }
  inside /= std::max(n_in, 1);
  outside /= std::max(n_out, 1);
  return integrate_unit_interval(inside - outside, u_grid);
}

// Statistics from one location's curves alone: demean over the series, take
// local principal components, and score the CUSUMs. Fully-functional weights
// follow the alternative-hypothesis convention (segment means removed at the
// estimated time before the covariance).
// Variance floor separating real components from cancellation noise: score
// variances below 1e-20 of the mean-square curve magnitude are roundoff.
double variance_floor(const Matrix& y) { return 1e-20 * y.squaredNorm() / y.size(); }

LocationStat location_stats(const Matrix& y, const Vector& u_grid, int Q, ChangeModel model,
                            StatFamily family) {
  const int N = static_cast<int>(y.rows());
  const int m = static_cast<int>(y.cols());
  const double floor = variance_floor(y);
  LocationStat out;

  if (family == StatFamily::FullyFunctional) {
    if (model != ChangeModel::Amoc)
      fail(Errc::ConfigError, "fully-functional reports support the at-most-one-change model");
    const FfStat ff = ff_statistic(y);
    out.stat = ff.value;
    out.tau1 = ff.tau;
    Matrix resid = y;
    resid.topRows(ff.tau).rowwise() -= y.topRows(ff.tau).colwise().mean();
    resid.bottomRows(N - ff.tau).rowwise() -= y.bottomRows(N - ff.tau).colwise().mean();
    const Matrix cov = resid.transpose() * resid / N;
    out.ff_weights = eigendecompose(cov, Q).eigenvalues;
    out.delta_hat = segment_delta_amoc(y, u_grid, ff.tau);
    return out;
  }

  Matrix resid = y.rowwise() - y.colwise().mean();
  const Matrix cov = resid.transpose() * resid / N;
  const EigenPair pair = eigendecompose(cov, Q);
  const Matrix z = resid * pair.phi / m;  // N x Q scores

  if (model == ChangeModel::Amoc) {
    const ScoreStat s = score_statistic_impl(z, pair.eigenvalues, true, floor);
    out.stat = s.value;
    out.tau1 = s.tau;
    out.delta_hat = segment_delta_amoc(y, u_grid, s.tau);
  } else {
    const EpidemicStat s = epidemic_statistic_impl(z, pair.eigenvalues, true, floor);
    out.stat = s.value;
    out.tau1 = s.tau1;
    out.tau2 = s.tau2;
    out.delta_hat = segment_delta_epidemic(y, u_grid, s.tau1, s.tau2);
  }
  return out;
}

Matrix location_curves(const FunctionalDataset& ds, int i) {
  Matrix y(ds.N, ds.m);
  for (int k = 0; k < ds.N; ++k) y.row(k) = ds.curve(i, k).transpose();
  return y;
}

ChangepointReport assemble_report(const FunctionalDataset& ds, std::vector<LocationStat> stats,
                                  StatFamily family, ChangeModel model, PredictionFlavor flavor,
                                  int Q, const NullOptions& nulls) {
  ChangepointReport rep;
  rep.family = family;
  rep.model = model;
  rep.flavor = flavor;
  rep.stat.resize(ds.n);
  rep.p.resize(ds.n);
  rep.delta_hat.resize(ds.n);
  rep.tau.resize(ds.n);
  if (model == ChangeModel::Epidemic) rep.tau2.resize(ds.n);

  std::vector<double> pvals(ds.n);
  if (family == StatFamily::FullyFunctional) {
    Matrix weights(ds.n, Q);
    for (int i = 0; i < ds.n; ++i) weights.row(i) = stats[i].ff_weights.transpose();
    const auto nulls_by_loc = ff_null_ensemble(weights, nulls.ff_R, nulls.ff_grid, nulls.seed);
    for (int i = 0; i < ds.n; ++i) pvals[i] = p_value(stats[i].stat, nulls_by_loc[i]);
  } else {
    const NullKind kind =
        model == ChangeModel::Amoc ? NullKind::ScoreSum : NullKind::EpidemicSum;
    const NullDistribution& null = shared_null(kind, Q, nulls.R, nulls.grid, nulls.seed);
    for (int i = 0; i < ds.n; ++i) pvals[i] = p_value(stats[i].stat, null);
  }

  const std::vector<double> bh = adjust_pvalues(pvals, AdjustMethod::BenjaminiHochberg);
  const std::vector<double> bonf = adjust_pvalues(pvals, AdjustMethod::Bonferroni);
  rep.p_bh.resize(ds.n);
  rep.p_bonf.resize(ds.n);
  for (int i = 0; i < ds.n; ++i) {
    rep.stat[i] = stats[i].stat;
    rep.p[i] = pvals[i];
    rep.p_bh[i] = bh[i];
    rep.p_bonf[i] = bonf[i];
    rep.tau[i] = stats[i].tau1;
    if (model == ChangeModel::Epidemic) rep.tau2[i] = stats[i].tau2;
    rep.delta_hat[i] = stats[i].delta_hat;
  }
  return rep;
}

}  // namespace

ChangepointReport individual_reports(const FunctionalDataset& ds, int Q, ChangeModel model,
                                     StatFamily family, const NullOptions& nulls) {
  std::vector<LocationStat> stats(ds.n);
  parallel_for(ds.n, [&](int i) {
    stats[i] = location_stats(location_curves(ds, i), ds.u_grid, Q, model, family);
  });
  return assemble_report(ds, std::move(stats), family, model, PredictionFlavor::Individual, Q,
                         nulls);
}

ChangepointReport predicted_reports(const FunctionalDataset& ds, const PredictionInputs& inputs,
                                    StatFamily family, PredictionFlavor flavor, ChangeModel model,
                                    int Q, const NullOptions& nulls) {
  if (flavor == PredictionFlavor::Individual)
    fail(Errc::ConfigError, "use individual_reports for unpredicted statistics");
  if (family == StatFamily::Score && !inputs.null_hypothesis)
    fail(Errc::HypothesisMismatch,
         "score statistics require predictions under the null hypothesis");
  if (static_cast<int>(inputs.zhat.size()) != Q)
    fail(Errc::DomainMismatch, "prediction component count does not match Q");

  std::vector<LocationStat> stats(ds.n);
  if (family == StatFamily::FullyFunctional || flavor == PredictionFlavor::Recomputed) {
    parallel_for(ds.n, [&](int i) {
      stats[i] =
          location_stats(location_curves(inputs.yhat, i), ds.u_grid, Q, model, family);
    });
  } else {
    const Matrix& lambda =
        flavor == PredictionFlavor::Primary ? inputs.lambda_star : inputs.lambda_hat;
    parallel_for(ds.n, [&](int i) {
      Matrix z(ds.N, Q);
      for (int q = 0; q < Q; ++q) z.col(q) = inputs.zhat[q].row(i).transpose();
      const double floor = variance_floor(location_curves(inputs.yhat, i));
      LocationStat& out = stats[i];
      if (model == ChangeModel::Amoc) {
        const ScoreStat s = score_statistic_impl(z, lambda.row(i).transpose(), true, floor);
        out.stat = s.value;
        out.tau1 = s.tau;
        out.delta_hat = segment_delta_amoc(location_curves(inputs.yhat, i), ds.u_grid, s.tau);
      } else {
        const EpidemicStat s =
            epidemic_statistic_impl(z, lambda.row(i).transpose(), true, floor);
        out.stat = s.value;
        out.tau1 = s.tau1;
        out.tau2 = s.tau2;
        out.delta_hat =
            segment_delta_epidemic(location_curves(inputs.yhat, i), ds.u_grid, s.tau1, s.tau2);
      }
    });
  }
  return assemble_report(ds, std::move(stats), family, model, flavor, Q, nulls);
}

}  // namespace geoftscp
