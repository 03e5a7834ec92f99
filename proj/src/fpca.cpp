// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/fpca.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace geoftscp {

Matrix marginal_covariance(const FunctionalDataset& ds, const MeanModel& mean) {
  if (mean.mu_values.rows() != ds.n || mean.mu_values.cols() != ds.m)
    fail(Errc::DomainMismatch, "mean model grids do not match the dataset");
  Matrix c = Matrix::Zero(ds.m, ds.m);
  Vector resid(ds.m);
  for (int i = 0; i < ds.n; ++i)
    for (int k = 0; k < ds.N; ++k) {
      resid = ds.curve(i, k) - mean.fitted_curve(i, k);
      c.selfadjointView<Eigen::Lower>().rankUpdate(resid, 1.0);
    }
  c = c.selfadjointView<Eigen::Lower>();
  c /= static_cast<double>(ds.n) * ds.N;
  return c;
}

EigenPair eigendecompose(const Matrix& c_u, int Q) {
  const int m = static_cast<int>(c_u.rows());
  if (Q < 1 || Q >= m) fail(Errc::ConfigError, "need 1 <= Q < m");
  Eigen::SelfAdjointEigenSolver<Matrix> es(c_u);
  if (es.info() != Eigen::Success) fail(Errc::NotPositiveDefinite, "eigendecomposition failed");

  EigenPair out;
  out.phi.resize(m, Q);
  out.eigenvalues.resize(Q);
  // Eigen returns ascending order; functional eigenvalues carry the 1/m
  // quadrature factor of the discrete inner product.
  for (int q = 0; q < Q; ++q) {
    const int src = m - 1 - q;
    out.eigenvalues[q] = es.eigenvalues()[src] / m;
    Vector v = es.eigenvectors().col(src) * std::sqrt(static_cast<double>(m));
    const double colsum = v.sum();
    if (colsum < 0.0)
      v = -v;
    else if (colsum == 0.0) {
      int arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v[arg] < 0.0) v = -v;
    }
    out.phi.col(q) = v;
  }
  for (int q = 0; q + 1 < Q; ++q)
    if (out.eigenvalues[q] - out.eigenvalues[q + 1] < 1e-10) out.repeated_eigenvalue_warning = true;
  if (Q < m && es.eigenvalues()[m - 1 - Q] / m > out.eigenvalues[Q - 1] - 1e-10)
    out.repeated_eigenvalue_warning = true;
  return out;
}

std::vector<Matrix> extract_scores(const FunctionalDataset& ds, const MeanModel& mean,
                                   const Matrix& phi) {
  const int Q = static_cast<int>(phi.cols());
  const int m = static_cast<int>(phi.rows());
  if (m != ds.m) fail(Errc::DomainMismatch, "component grid does not match the dataset");
  std::vector<Matrix> z(Q, Matrix(ds.n, ds.N));
  Vector resid(m), proj(Q);
  for (int i = 0; i < ds.n; ++i)
    for (int k = 0; k < ds.N; ++k) {
      resid = ds.curve(i, k) - mean.fitted_curve(i, k);
      proj.noalias() = phi.transpose() * resid / m;
      for (int q = 0; q < Q; ++q) z[q](i, k) = proj[q];
    }
  return z;
}

Vector local_variance(const Matrix& z_q, const SpatialDomain& domain, const KernelSpec& kernel) {
  const int n = static_cast<int>(z_q.rows());
  if (n != domain.size()) fail(Errc::DomainMismatch, "score rows do not match the domain");
  const Vector mean_sq = z_q.cwiseAbs2().rowwise().mean();
  Vector out(n);
  for (int i0 = 0; i0 < n; ++i0) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = kernel.weight(distance(domain, i, i0));
      num += w * mean_sq[i];
      den += w;
    }
    out[i0] = num / den;  // den > 0: the self weight is always positive
  }
  return out;
}

Vector local_cross_variance(const Matrix& z_q, const SpatialDomain& domain,
                            const KernelSpec& kernel) {
  const int n = static_cast<int>(z_q.rows());
  if (n != domain.size()) fail(Errc::DomainMismatch, "score rows do not match the domain");
  const double inv_n_years = 1.0 / z_q.cols();

  // Off-diagonal pairs only: the diagonal carries the nugget and would cancel
  // the lambda - sigma^2 subtraction downstream.
  std::vector<std::vector<std::pair<int, double>>> in_window(n);
  for (int i0 = 0; i0 < n; ++i0)
    for (int i = 0; i < n; ++i) {
      const double w = kernel.weight(distance(domain, i, i0));
      if (w > 0.0) in_window[i0].push_back({i, w});
    }

  Vector out(n);
  for (int i0 = 0; i0 < n; ++i0) {
    double num = 0.0, den = 0.0;
    const auto& window = in_window[i0];
    for (std::size_t a = 0; a < window.size(); ++a)
      for (std::size_t b = a + 1; b < window.size(); ++b) {
        const auto [i1, w1] = window[a];
        const auto [i2, w2] = window[b];
        const double cross = z_q.row(i1).dot(z_q.row(i2)) * inv_n_years;
        num += 2.0 * w1 * w2 * cross;
        den += 2.0 * w1 * w2;
      }
    out[i0] = den > 0.0 ? std::max(num / den, 0.0) : 0.0;
  }
  return out;
}

Vector gamma_estimate(const Vector& lambda_hat, const Vector& sigma2_hat) {
  if (lambda_hat.size() != sigma2_hat.size())
    fail(Errc::DomainMismatch, "variance vectors differ in length");
  Vector out(lambda_hat.size());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = std::max(lambda_hat[i] - sigma2_hat[i], 1e-8 * lambda_hat[i]);
  return out;
}

namespace {

Matrix kernel_row_smoother(const Vector& u_grid, double bandwidth) {
  const int m = static_cast<int>(u_grid.size());
  Matrix w(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      const double t = (u_grid[a] - u_grid[b]) / bandwidth;
      w(a, b) = t * t < 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
    }
    w.row(a) /= w.row(a).sum();
  }
  return w;
}

}  // namespace

Matrix smooth_covariance(const Matrix& c_u, const Vector& u_grid, double bandwidth) {
  const int m = static_cast<int>(c_u.rows());
  if (u_grid.size() != m || c_u.cols() != m)
    fail(Errc::DomainMismatch, "grid does not match the covariance");
  if (m < 3) return c_u;
  double h = bandwidth;
  if (!(h > 0.0)) {
    // GCV over multiples of the grid spacing; the product smoother has
    // trace tr(W)^2 on the m^2 covariance entries
    const double du = u_grid[1] - u_grid[0];
    double best = std::numeric_limits<double>::infinity();
    for (const double mult : {1.5, 2.5, 4.0, 6.0, 10.0, 16.0}) {
      const double cand = mult * du;
      const Matrix w = kernel_row_smoother(u_grid, cand);
      const double edf = w.trace() * w.trace();
      const double mm = static_cast<double>(m) * m;
      if (edf >= mm) continue;
      const double rss = (c_u - w * c_u * w.transpose()).squaredNorm();
      const double gcv = mm * rss / ((mm - edf) * (mm - edf));
      if (gcv < best) {
        best = gcv;
        h = cand;
      }
    }
    if (!(h > 0.0)) fail(Errc::AllDegenerate, "no usable smoothing bandwidth on the grid");
  }
  const Matrix w = kernel_row_smoother(u_grid, h);
  Matrix smoothed = w * c_u * w.transpose();
  return 0.5 * (smoothed + smoothed.transpose());
}

PCDecomposition fit_pc_decomposition(const FunctionalDataset& ds, const MeanModel& mean, int Q,
                                     const KernelSpec& kernel,
                                     std::optional<double> covariance_smoothing) {
  PCDecomposition pc;
  pc.Q = Q;
  pc.bandwidth = kernel.bandwidth;
  Matrix c_u = marginal_covariance(ds, mean);
  if (covariance_smoothing) c_u = smooth_covariance(c_u, ds.u_grid, *covariance_smoothing);
  EigenPair pair = eigendecompose(c_u, Q);
  pc.phi = std::move(pair.phi);
  pc.eigenvalues = std::move(pair.eigenvalues);
  pc.repeated_eigenvalue_warning = pair.repeated_eigenvalue_warning;
  pc.scores = extract_scores(ds, mean, pc.phi);

  pc.lambda_hat.resize(ds.n, Q);
  pc.sigma2_hat.resize(ds.n, Q);
  pc.gamma2_hat.resize(ds.n, Q);
  for (int q = 0; q < Q; ++q) {
    const Vector lam = local_variance(pc.scores[q], ds.domain, kernel);
    Vector sig = local_cross_variance(pc.scores[q], ds.domain, kernel);
    sig = sig.cwiseMin(lam);
    pc.lambda_hat.col(q) = lam;
    pc.sigma2_hat.col(q) = sig;
    pc.gamma2_hat.col(q) = gamma_estimate(lam, sig);
  }
  return pc;
}

}  // namespace geoftscp
