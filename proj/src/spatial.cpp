// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/spatial.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>

namespace geoftscp {

double matern_corr(double d, double alpha, double nu) {
  if (d < 0.0 || alpha <= 0.0 || nu <= 0.0)
    fail(Errc::ConfigError, "matern requires d >= 0, alpha > 0, nu > 0");
  const double y = std::sqrt(2.0 * nu) * d / alpha;
  if (y <= 1e-12) return 1.0;
  if (std::abs(nu - 0.5) < 1e-12) return std::exp(-y);
  if (std::abs(nu - 1.5) < 1e-12) return (1.0 + y) * std::exp(-y);
  if (std::abs(nu - 2.5) < 1e-12) return (1.0 + y + y * y / 3.0) * std::exp(-y);
  if (y > 700.0) return 0.0;
  const double log_pref = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu);
  return std::exp(log_pref + nu * std::log(y)) * std::cyl_bessel_k(nu, y);
}

double CovParams::nu() const {
  const double raw = std::holds_alternative<IsotropicMatern>(model)
                         ? std::get<IsotropicMatern>(model).nu
                         : std::get<NonstationaryAniso>(model).nu;
  return std::clamp(raw, kNuMin, kNuMax);
}

namespace {

// Local anisotropy matrix. Planar: 2x2 rotation of diag(chi1, chi2).
// Sphere: kappa-rotated east/north axes in the tangent plane at the embedded
// point, radial axis length sqrt(chi1 chi2) so determinants stay consistent.
struct LocalKernel {
  Eigen::Matrix3d sigma = Eigen::Matrix3d::Zero();
  double det = 0.0;
  int dim = 2;
};

LocalKernel local_kernel(const NonstationaryAniso& a, const SpatialDomain& domain, int i) {
  double l, L;
  if (domain.kind == DomainKind::SphereLatLon) {
    l = domain.coords(i, 0) * std::numbers::pi / 180.0;
    L = domain.coords(i, 1) * std::numbers::pi / 180.0;
  } else {
    l = domain.coords(i, 0);
    L = domain.coords(i, 1);
  }
  const double chi1 = std::exp(a.beta(0, 0) + a.beta(0, 1) * std::sin(l) + a.beta(0, 2) * L +
                               a.beta(0, 3) * L * L);
  const double chi2 = std::exp(a.beta(1, 0) + a.beta(1, 1) * std::sin(l) + a.beta(1, 2) * L +
                               a.beta(1, 3) * L * L);
  const double ck = std::cos(a.kappa), sk = std::sin(a.kappa);

  LocalKernel out;
  if (domain.kind == DomainKind::Plane2D) {
    Eigen::Matrix2d rot;
    rot << ck, -sk, sk, ck;
    const Eigen::Matrix2d sig2 = rot * Eigen::Vector2d(chi1, chi2).asDiagonal() * rot.transpose();
    out.sigma.topLeftCorner<2, 2>() = sig2;
    out.det = chi1 * chi2;
    out.dim = 2;
    return out;
  }
  const Eigen::Vector3d up = domain.unit_vecs.row(i).transpose();
  Eigen::Vector3d east;
  if (std::abs(up.z()) > 1.0 - 1e-12)
    east = Eigen::Vector3d::UnitX();
  else
    east = Eigen::Vector3d::UnitZ().cross(up).normalized();
  const Eigen::Vector3d north = up.cross(east);
  const Eigen::Vector3d a1 = ck * east + sk * north;
  const Eigen::Vector3d a2 = -sk * east + ck * north;
  const double chir = std::sqrt(chi1 * chi2);
  out.sigma = chi1 * a1 * a1.transpose() + chi2 * a2 * a2.transpose() + chir * up * up.transpose();
  out.det = chi1 * chi2 * chir;
  out.dim = 3;
  return out;
}

// Mahalanobis distance and normalizing constant of the averaged-kernel
// construction: d^2 = 2 delta^T (S1 + S2)^{-1} delta,
// c^2 = |S1|^(1/2) |S2|^(1/2) / |(S1 + S2)/2|.
std::pair<double, double> aniso_dist_const(const LocalKernel& k1, const LocalKernel& k2,
                                           const Eigen::Vector3d& delta) {
  if (k1.dim == 2) {
    const Eigen::Matrix2d sum = (k1.sigma + k2.sigma).topLeftCorner<2, 2>();
    const double det_sum = sum.determinant();
    if (!(det_sum > 1e-300) || !(k1.det > 1e-300) || !(k2.det > 1e-300))
      fail(Errc::SingularAnisotropy, "local anisotropy matrix is numerically singular");
    const Eigen::Vector2d d2 = delta.head<2>();
    const double quad = 2.0 * d2.dot(sum.inverse() * d2);
    const double c2 = std::sqrt(k1.det) * std::sqrt(k2.det) / (det_sum / 4.0);
    return {std::sqrt(std::max(quad, 0.0)), std::sqrt(c2)};
  }
  const Eigen::Matrix3d sum = k1.sigma + k2.sigma;
  const double det_sum = sum.determinant();
  if (!(det_sum > 1e-300) || !(k1.det > 1e-300) || !(k2.det > 1e-300))
    fail(Errc::SingularAnisotropy, "local anisotropy matrix is numerically singular");
  const double quad = 2.0 * delta.dot(sum.ldlt().solve(delta));
  const double c2 = std::sqrt(k1.det) * std::sqrt(k2.det) / (det_sum / 8.0);
  return {std::sqrt(std::max(quad, 0.0)), std::sqrt(c2)};
}

Vector sigma_sqrt(const CovParams& params) {
  if (params.sigma2.minCoeff() < 0.0) fail(Errc::NonPositiveVariance, "sigma2 must be nonnegative");
  return params.sigma2.cwiseSqrt();
}

}  // namespace

double cov_entry(const CovParams& params, const SpatialDomain& domain, int i1, int i2) {
  const int n = domain.size();
  if (i1 < 0 || i1 >= n || i2 < 0 || i2 >= n)
    fail(Errc::IndexOutOfRange, "location index out of range");
  const double s1 = std::sqrt(params.sigma2[i1]);
  const double s2 = std::sqrt(params.sigma2[i2]);
  const double nugget = i1 == i2 ? params.gamma2[i1] : 0.0;
  if (std::holds_alternative<IsotropicMatern>(params.model)) {
    const auto& iso = std::get<IsotropicMatern>(params.model);
    return s1 * s2 * matern_corr(distance(domain, i1, i2), iso.alpha, params.nu()) + nugget;
  }
  const auto& aniso = std::get<NonstationaryAniso>(params.model);
  const LocalKernel k1 = local_kernel(aniso, domain, i1);
  const LocalKernel k2 = local_kernel(aniso, domain, i2);
  const Eigen::Vector3d delta = domain.embedded(i1) - domain.embedded(i2);
  const auto [d, c] = aniso_dist_const(k1, k2, delta);
  return s1 * s2 * c * matern_corr(d, 1.0, params.nu()) + nugget;
}

DistanceCache::DistanceCache(const SpatialDomain& domain) {
  const int n = domain.size();
  dist.resize(n, n);
  group.setConstant(n, n, -1);
  struct Entry {
    double d;
    int i, j;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = distance(domain, i, j);
      dist(i, j) = dist(j, i) = d;
      entries.push_back({d, i, j});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.d < b.d; });
  double rep = -1.0;
  for (const Entry& e : entries) {
    if (unique_dist.empty() || e.d - rep > 1e-13 + 1e-12 * e.d) {
      unique_dist.push_back(e.d);
      rep = e.d;
    }
    group(e.i, e.j) = group(e.j, e.i) = static_cast<int>(unique_dist.size()) - 1;
  }
}

Matrix cov_matrix(const CovParams& params, const SpatialDomain& domain,
                  const DistanceCache* cache) {
  const int n = domain.size();
  if (params.sigma2.size() != n || params.gamma2.size() != n)
    fail(Errc::DomainMismatch, "variance fields do not match the domain size");
  Matrix c(n, n);
  if (std::holds_alternative<IsotropicMatern>(params.model) && cache != nullptr) {
    const auto& iso = std::get<IsotropicMatern>(params.model);
    const double nu = params.nu();
    std::vector<double> lut(cache->unique_dist.size());
    for (std::size_t g = 0; g < lut.size(); ++g)
      lut[g] = matern_corr(cache->unique_dist[g], iso.alpha, nu);
    const Vector s = sigma_sqrt(params);
    for (int i = 0; i < n; ++i) {
      c(i, i) = params.sigma2[i] + params.gamma2[i];
      for (int j = i + 1; j < n; ++j) c(i, j) = c(j, i) = s[i] * s[j] * lut[cache->group(i, j)];
    }
    return c;
  }
  for (int i = 0; i < n; ++i) {
    c(i, i) = cov_entry(params, domain, i, i);
    for (int j = i + 1; j < n; ++j) c(i, j) = c(j, i) = cov_entry(params, domain, i, j);
  }
  return c;
}

namespace {

double jitter_for(const CovParams& params) {
  return 1e-10 * (params.sigma2.mean() + params.gamma2.mean());
}

Eigen::LLT<Matrix> factor_cov(const CovParams& params, const SpatialDomain& domain,
                              const DistanceCache* cache, Matrix* cov_out) {
  Matrix c = cov_matrix(params, domain, cache);
  if (cov_out) *cov_out = c;
  c.diagonal().array() += jitter_for(params);
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success)
    fail(Errc::NotPositiveDefinite, "score covariance is not positive definite");
  return llt;
}

}  // namespace

Matrix VecchiaFactor::whiten(const Matrix& z) const {
  const int n = static_cast<int>(order.size());
  if (z.rows() != n) fail(Errc::DomainMismatch, "score rows do not match the factor");
  Matrix e(n, z.cols());
  for (int p = 0; p < n; ++p) {
    Eigen::RowVectorXd acc = z.row(order[p]);
    for (const auto& [pos, coef] : coeffs[p]) acc += coef * z.row(order[pos]);
    e.row(p) = diag[p] * acc;
  }
  return e;
}

double VecchiaFactor::log_det_precision() const {
  return 2.0 * diag.array().log().sum();
}

Matrix VecchiaFactor::dense_precision() const {
  const int n = static_cast<int>(order.size());
  Matrix a = Matrix::Zero(n, n);
  for (int p = 0; p < n; ++p) {
    a(p, p) = diag[p];
    for (const auto& [pos, coef] : coeffs[p]) a(p, pos) = diag[p] * coef;
  }
  const Matrix prec_ordered = a.transpose() * a;
  Matrix prec(n, n);
  for (int p = 0; p < n; ++p)
    for (int r = 0; r < n; ++r) prec(order[p], order[r]) = prec_ordered(p, r);
  return prec;
}

VecchiaFactor vecchia_factor(const CovParams& params, const SpatialDomain& domain,
                             int num_neighbors, const DistanceCache* cache) {
  if (num_neighbors < 1) fail(Errc::ConfigError, "need at least one neighbor");
  const int n = domain.size();
  std::optional<DistanceCache> local_cache;
  if (!cache) {
    local_cache.emplace(domain);
    cache = &*local_cache;
  }

  // Max-min ordering: start nearest the centroid, then repeatedly take the
  // point farthest from everything already ordered.
  VecchiaFactor f;
  f.order.reserve(n);
  {
    Eigen::RowVectorXd centroid = domain.coords.colwise().mean();
    int first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double d = (domain.coords.row(i) - centroid).norm();
      if (d < best) {
        best = d;
        first = i;
      }
    }
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<char> used(n, 0);
    f.order.push_back(first);
    used[first] = 1;
    for (int i = 0; i < n; ++i) min_dist[i] = cache->dist(i, first);
    while (static_cast<int>(f.order.size()) < n) {
      int pick = -1;
      double best_min = -1.0;
      for (int i = 0; i < n; ++i)
        if (!used[i] && min_dist[i] > best_min) {
          best_min = min_dist[i];
          pick = i;
        }
      f.order.push_back(pick);
      used[pick] = 1;
      for (int i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], cache->dist(i, pick));
    }
  }

  f.coeffs.resize(n);
  f.diag.resize(n);
  for (int p = 0; p < n; ++p) {
    const int i = f.order[p];
    const int nn = std::min(p, num_neighbors);
    std::vector<int> hist(p);
    std::iota(hist.begin(), hist.end(), 0);
    std::partial_sort(hist.begin(), hist.begin() + nn, hist.end(), [&](int a, int b) {
      return cache->dist(f.order[a], i) < cache->dist(f.order[b], i);
    });
    hist.resize(nn);

    const double c_ii = cov_entry(params, domain, i, i);
    double v = c_ii;
    if (nn > 0) {
      Matrix c_nn(nn, nn);
      Vector c_ni(nn);
      for (int a = 0; a < nn; ++a) {
        const int ia = f.order[hist[a]];
        c_ni[a] = cov_entry(params, domain, ia, i);
        for (int b = a; b < nn; ++b)
          c_nn(a, b) = c_nn(b, a) = cov_entry(params, domain, ia, f.order[hist[b]]);
      }
      const Vector b = c_nn.ldlt().solve(c_ni);
      v = c_ii - c_ni.dot(b);
      f.coeffs[p].reserve(nn);
      for (int a = 0; a < nn; ++a) f.coeffs[p].push_back({hist[a], -b[a]});
    }
    if (!(v > 0.0))
      fail(Errc::NotPositiveDefinite, "nonpositive conditional variance in the factor");
    f.diag[p] = 1.0 / std::sqrt(v);
  }
  return f;
}

double gaussian_loglik(const Matrix& z_q, const CovParams& params, const SpatialDomain& domain,
                       LikelihoodMode mode, const VecchiaSettings& vecchia,
                       const DistanceCache* cache) {
  const int n = domain.size();
  const int N = static_cast<int>(z_q.cols());
  if (z_q.rows() != n) fail(Errc::DomainMismatch, "score rows do not match the domain");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  if (mode == LikelihoodMode::Vecchia) {
    const VecchiaFactor f = vecchia_factor(params, domain, vecchia.num_neighbors, cache);
    const double quad = f.whiten(z_q).squaredNorm();
    return -0.5 * (quad + static_cast<double>(n) * N * log2pi) + 0.5 * N * f.log_det_precision();
  }
  const Eigen::LLT<Matrix> llt = factor_cov(params, domain, cache, nullptr);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = llt.matrixL().solve(z_q).squaredNorm();
  return -0.5 * (static_cast<double>(N) * logdet + quad + static_cast<double>(n) * N * log2pi);
}

namespace {

// Nelder-Mead on an unconstrained parameterization; returns the best point
// ever evaluated.
struct SimplexResult {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
};

SimplexResult nelder_mead(const std::function<double(const Vector&)>& objective, const Vector& x0,
                          double step, int max_iterations, double tolerance) {
  const int dim = static_cast<int>(x0.size());
  std::vector<Vector> xs(dim + 1, x0);
  std::vector<double> fs(dim + 1);
  for (int i = 1; i <= dim; ++i) xs[i][i - 1] += step;
  for (int i = 0; i <= dim; ++i) fs[i] = objective(xs[i]);

  SimplexResult best;
  auto remember = [&](const Vector& x, double fv) {
    if (fv < best.value) {
      best.value = fv;
      best.x = x;
    }
  };
  for (int i = 0; i <= dim; ++i) remember(xs[i], fs[i]);

  std::vector<int> idx(dim + 1);
  for (int it = 0; it < max_iterations; ++it) {
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int lo = idx[0], hi = idx[dim], second_hi = idx[dim - 1];

    const double spread = std::abs(fs[hi] - fs[lo]);
    if (spread <= tolerance * (std::abs(fs[lo]) + std::abs(fs[hi]) + 1e-10)) {
      best.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(dim);
    for (int i = 0; i <= dim; ++i)
      if (i != hi) centroid += xs[i];
    centroid /= dim;

    const Vector reflected = centroid + (centroid - xs[hi]);
    const double f_reflected = objective(reflected);
    remember(reflected, f_reflected);
    if (f_reflected < fs[lo]) {
      const Vector expanded = centroid + 2.0 * (centroid - xs[hi]);
      const double f_expanded = objective(expanded);
      remember(expanded, f_expanded);
      if (f_expanded < f_reflected) {
        xs[hi] = expanded;
        fs[hi] = f_expanded;
      } else {
        xs[hi] = reflected;
        fs[hi] = f_reflected;
      }
      continue;
    }
    if (f_reflected < fs[second_hi]) {
      xs[hi] = reflected;
      fs[hi] = f_reflected;
      continue;
    }
    const Vector contracted = centroid + 0.5 * (xs[hi] - centroid);
    const double f_contracted = objective(contracted);
    remember(contracted, f_contracted);
    if (f_contracted < fs[hi]) {
      xs[hi] = contracted;
      fs[hi] = f_contracted;
      continue;
    }
    for (int i = 0; i <= dim; ++i) {
      if (i == lo) continue;
      xs[i] = xs[lo] + 0.5 * (xs[i] - xs[lo]);
      fs[i] = objective(xs[i]);
      remember(xs[i], fs[i]);
    }
  }
  return best;
}

double median_pairwise_distance(const DistanceCache& cache, int n) {
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dists.push_back(cache.dist(i, j));
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  return dists[mid];
}

}  // namespace

FitResult fit_mle(const Matrix& z_q, const SpatialDomain& domain, CovModelKind kind,
                  const Vector& sigma2, const Vector& gamma2,
                  const std::optional<CovParams>& init, const FitOptions& opts,
                  const DistanceCache* cache) {
  const int n = domain.size();
  if (n < 2) fail(Errc::ConfigError, "need at least two locations to fit");
  std::optional<DistanceCache> local_cache;
  if (!cache) {
    local_cache.emplace(domain);
    cache = &*local_cache;
  }

  const double alpha0 = median_pairwise_distance(*cache, n);
  auto unpack = [&](const Vector& x) -> CovParams {
    CovParams p;
    p.sigma2 = sigma2;
    p.gamma2 = gamma2;
    if (kind == CovModelKind::IsotropicMatern) {
      p.model = IsotropicMatern{std::exp(x[0]), std::exp(x[1])};
    } else {
      NonstationaryAniso a;
      a.nu = std::exp(x[0]);
      a.kappa = x[1];
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) a.beta(r, c) = x[2 + 4 * r + c];
      p.model = a;
    }
    return p;
  };
  auto pack = [&](const CovParams& p) -> Vector {
    if (kind == CovModelKind::IsotropicMatern) {
      const auto& iso = std::get<IsotropicMatern>(p.model);
      Vector x(2);
      x << std::log(iso.alpha), std::log(iso.nu);
      return x;
    }
    const auto& a = std::get<NonstationaryAniso>(p.model);
    Vector x(10);
    x[0] = std::log(a.nu);
    x[1] = a.kappa;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 4; ++c) x[2 + 4 * r + c] = a.beta(r, c);
    return x;
  };

  Vector x0;
  if (init) {
    x0 = pack(*init);
  } else if (kind == CovModelKind::IsotropicMatern) {
    x0 = pack(CovParams{IsotropicMatern{alpha0, 0.5}, sigma2, gamma2});
  } else {
    NonstationaryAniso a;
    a.nu = 0.5;
    a.beta(0, 0) = a.beta(1, 0) = std::log(alpha0);
    x0 = pack(CovParams{a, sigma2, gamma2});
  }

  auto objective = [&](const Vector& x) -> double {
    try {
      return -gaussian_loglik(z_q, unpack(x), domain, opts.mode, opts.vecchia, cache);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const SimplexResult sr =
      nelder_mead(objective, x0, 0.5, opts.max_iterations, opts.tolerance);

  FitResult out;
  out.params = unpack(sr.x);
  out.loglik = -sr.value;
  out.converged = sr.converged && std::isfinite(out.loglik);
  return out;
}

Matrix krige_scores(const Matrix& z_q, const CovParams& params, const SpatialDomain& domain,
                    const DistanceCache* cache) {
  Matrix cov;
  const Eigen::LLT<Matrix> llt = factor_cov(params, domain, cache, &cov);
  const Matrix solved = llt.solve(z_q);
  cov.diagonal() -= params.gamma2;  // cross covariance of the smooth field
  return cov * solved;
}

FunctionalDataset predict_data(const FunctionalDataset& ds, const MeanModel& mean,
                               const Matrix& phi, const std::vector<Matrix>& zhat) {
  const int Q = static_cast<int>(zhat.size());
  if (phi.cols() != Q || phi.rows() != ds.m)
    fail(Errc::DomainMismatch, "component matrix does not match predictions");
  FunctionalDataset out = FunctionalDataset::zeros(ds.domain, ds.N, ds.u_grid);
  Vector coef(Q);
  for (int i = 0; i < ds.n; ++i)
    for (int k = 0; k < ds.N; ++k) {
      for (int q = 0; q < Q; ++q) coef[q] = zhat[q](i, k);
      out.curve(i, k) = mean.fitted_curve(i, k) + phi * coef;
    }
  return out;
}

}  // namespace geoftscp
