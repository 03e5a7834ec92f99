// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/basis.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <sstream>

namespace geoftscp {
namespace {

// All degree-d basis values at u: N_{i,d}(u) for i = 0 .. num_knots-d-2.
// Right end of the last span is closed so the basis partitions unity on the
// whole of [0,1].
Vector all_basis_values(const Vector& knots, int degree, double u) {
  const int nk = static_cast<int>(knots.size());
  const double u_end = knots[nk - 1];
  Vector cur(nk - 1);
  for (int i = 0; i + 1 < nk; ++i) {
    const bool inside = (u >= knots[i] && u < knots[i + 1]) ||
                        (u == u_end && knots[i] < knots[i + 1] && knots[i + 1] == u_end);
    cur[i] = inside ? 1.0 : 0.0;
  }
  for (int d = 1; d <= degree; ++d) {
    Vector next(nk - d - 1);
    for (int i = 0; i + d + 1 < nk; ++i) {
      double v = 0.0;
      const double den1 = knots[i + d] - knots[i];
      if (den1 > 0.0) v += (u - knots[i]) / den1 * cur[i];
      const double den2 = knots[i + d + 1] - knots[i + 1];
      if (den2 > 0.0) v += (knots[i + d + 1] - u) / den2 * cur[i + 1];
      next[i] = v;
    }
    cur = std::move(next);
  }
  return cur;
}

// First derivatives of the degree-d basis via the standard difference of
// degree d-1 values.
Vector all_basis_deriv1(const Vector& knots, int degree, double u) {
  const Vector lower = all_basis_values(knots, degree - 1, u);
  const int count = static_cast<int>(knots.size()) - degree - 1;
  Vector out(count);
  for (int i = 0; i < count; ++i) {
    double v = 0.0;
    const double den1 = knots[i + degree] - knots[i];
    if (den1 > 0.0) v += lower[i] / den1;
    const double den2 = knots[i + degree + 1] - knots[i + 1];
    if (den2 > 0.0) v -= lower[i + 1] / den2;
    out[i] = degree * v;
  }
  return out;
}

Vector all_basis_deriv2(const Vector& knots, int degree, double u) {
  const Vector lower = all_basis_deriv1(knots, degree - 1, u);
  const int count = static_cast<int>(knots.size()) - degree - 1;
  Vector out(count);
  for (int i = 0; i < count; ++i) {
    double v = 0.0;
    const double den1 = knots[i + degree] - knots[i];
    if (den1 > 0.0) v += lower[i] / den1;
    const double den2 = knots[i + degree + 1] - knots[i + 1];
    if (den2 > 0.0) v -= lower[i + 1] / den2;
    out[i] = degree * v;
  }
  return out;
}

void check_unit_interval(const Vector& points) {
  for (Eigen::Index r = 0; r < points.size(); ++r)
    if (!(points[r] >= 0.0 && points[r] <= 1.0))
      fail(Errc::PointOutOfRange, "evaluation point outside [0,1]");
}

}  // namespace

BSplineBasis BSplineBasis::cubic(int num_basis) {
  const int degree = 3;
  if (num_basis < degree + 1) fail(Errc::ConfigError, "cubic basis needs at least 4 functions");
  BSplineBasis b;
  b.degree = degree;
  b.num_basis = num_basis;
  const int spans = num_basis - degree;
  b.knots.resize(num_basis + degree + 1);
  for (int i = 0; i <= degree; ++i) {
    b.knots[i] = 0.0;
    b.knots[num_basis + i] = 1.0;
  }
  for (int i = 1; i < spans; ++i) b.knots[degree + i] = static_cast<double>(i) / spans;

  // Second derivatives of cubics are piecewise linear, so two Gauss nodes per
  // span integrate psi'' psi'' exactly.
  b.omega = Matrix::Zero(num_basis, num_basis);
  const double node = 1.0 / std::sqrt(3.0);
  for (int s = 0; s < spans; ++s) {
    const double a = b.knots[degree + s];
    const double c = b.knots[degree + s + 1];
    const double half = 0.5 * (c - a);
    const double mid = 0.5 * (a + c);
    for (const double t : {mid - half * node, mid + half * node}) {
      const Vector d2 = all_basis_deriv2(b.knots, degree, t);
      b.omega.noalias() += half * d2 * d2.transpose();
    }
  }
  return b;
}

Matrix eval_bspline(const BSplineBasis& basis, const Vector& points) {
  check_unit_interval(points);
  Matrix out(points.size(), basis.num_basis);
  for (Eigen::Index r = 0; r < points.size(); ++r)
    out.row(r) = all_basis_values(basis.knots, basis.degree, points[r]).transpose();
  return out;
}

Matrix eval_bspline_derivative2(const BSplineBasis& basis, const Vector& points) {
  check_unit_interval(points);
  Matrix out(points.size(), basis.num_basis);
  for (Eigen::Index r = 0; r < points.size(); ++r)
    out.row(r) = all_basis_deriv2(basis.knots, basis.degree, points[r]).transpose();
  return out;
}

namespace {

// Real spherical harmonics at (colatitude theta, longitude phi), columns in
// (degree, order) order, order running -l..l. Orthonormal under the surface
// measure; the degree-0 function is 1/sqrt(4 pi).
Eigen::RowVectorXd sph_harmonics_row(int max_degree, double theta, double phi) {
  Eigen::RowVectorXd row((max_degree + 1) * (max_degree + 1));
  const double sqrt2 = std::numbers::sqrt2;
  for (int l = 0; l <= max_degree; ++l) {
    const int base = l * l + l;  // column of order 0
    row[base] = std::sph_legendre(l, 0, theta);
    for (int mo = 1; mo <= l; ++mo) {
      const double p = std::sph_legendre(l, mo, theta);
      row[base + mo] = sqrt2 * p * std::cos(mo * phi);
      row[base - mo] = sqrt2 * p * std::sin(mo * phi);
    }
  }
  return row;
}

// Orthonormal shifted Legendre values p_k(x) = sqrt(2k+1) P_k(2x-1), k = 0..d.
Vector shifted_legendre(int max_degree, double x) {
  Vector p(max_degree + 1);
  const double t = 2.0 * x - 1.0;
  double pm1 = 1.0, p0 = t;
  p[0] = 1.0;
  if (max_degree >= 1) p[1] = std::sqrt(3.0) * t;
  for (int k = 1; k < max_degree; ++k) {
    const double p1 = ((2 * k + 1) * t * p0 - k * pm1) / (k + 1);
    p[k + 1] = std::sqrt(2.0 * (k + 1) + 1.0) * p1;
    pm1 = p0;
    p0 = p1;
  }
  return p;
}

}  // namespace

Matrix eval_spatial(const SpatialBasis& basis, const SpatialDomain& domain) {
  const int n = domain.size();
  Matrix out(n, basis.num_basis());
  if (basis.kind == SpatialBasisKind::SphericalHarmonics) {
    if (domain.kind != DomainKind::SphereLatLon)
      fail(Errc::DomainMismatch, "spherical harmonics require a SphereLatLon domain");
    for (int i = 0; i < n; ++i) {
      const double theta = (90.0 - domain.coords(i, 1)) * std::numbers::pi / 180.0;
      const double phi = domain.coords(i, 0) * std::numbers::pi / 180.0;
      out.row(i) = sph_harmonics_row(basis.max_degree, theta, phi);
    }
  } else {
    if (domain.kind != DomainKind::Plane2D)
      fail(Errc::DomainMismatch, "tensor polynomial basis requires a Plane2D domain");
    const int d = basis.max_degree;
    for (int i = 0; i < n; ++i) {
      const Vector px = shifted_legendre(d, domain.coords(i, 0));
      const Vector py = shifted_legendre(d, domain.coords(i, 1));
      for (int a = 0; a <= d; ++a)
        for (int b = 0; b <= d; ++b) out(i, a * (d + 1) + b) = px[a] * py[b];
    }
  }
  return out;
}

namespace {

// Diagonalized form of the normal operator A_s (x) A_u + zeta I (x) Omega.
// A_s = V diag(ds) V^T; W satisfies W^T A_u W = I and W^T Omega W = diag(wu),
// so every penalty value reduces to elementwise divisions.
struct KroneckerSolver {
  Matrix V;
  Vector ds;
  Matrix W;
  Vector wu;
  Matrix rhs_tilde;  // W^T (Psi_u^T Ybar^T diag(w) Psi_s) V
  double weighted_nm = 0.0;

  KroneckerSolver(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                  const Matrix& omega, const std::optional<Vector>& weights) {
    const Eigen::Index n = psi_s.rows(), m = psi_u.rows();
    if (ybar.rows() != n || ybar.cols() != m)
      fail(Errc::DomainMismatch, "response shape does not match basis matrices");
    Vector w = weights ? *weights : Vector::Ones(n);
    if (w.size() != n) fail(Errc::DomainMismatch, "weight length does not match locations");
    weighted_nm = w.sum() * static_cast<double>(m);

    const Matrix a_s = psi_s.transpose() * w.asDiagonal() * psi_s;
    Eigen::SelfAdjointEigenSolver<Matrix> es(a_s);
    V = es.eigenvectors();
    ds = es.eigenvalues().cwiseMax(0.0);

    const Matrix a_u = psi_u.transpose() * psi_u;
    Eigen::LLT<Matrix> llt(a_u);
    if (llt.info() != Eigen::Success)
      fail(Errc::SingularSystem, "function-basis Gram matrix is not positive definite");
    const Matrix r = llt.matrixL();
    Matrix mid = r.triangularView<Eigen::Lower>().solve(omega);
    mid = r.triangularView<Eigen::Lower>().solve(mid.transpose()).transpose();
    mid = 0.5 * (mid + mid.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eu(mid);
    wu = eu.eigenvalues().cwiseMax(0.0);
    W = r.transpose().triangularView<Eigen::Upper>().solve(eu.eigenvectors());

    const Matrix rhs = psi_u.transpose() * (ybar.transpose() * (w.asDiagonal() * psi_s));
    rhs_tilde = W.transpose() * rhs * V;
  }

  // Coefficients, output orientation L_s x L_u. A pivot d_i + zeta w_j only
  // vanishes when the data Gram is singular along an unpenalized direction,
  // so the singularity test compares against the data-Gram scale.
  Matrix solve(double zeta) const {
    Matrix theta_tilde(rhs_tilde.rows(), rhs_tilde.cols());
    double min_pivot = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < rhs_tilde.rows(); ++j)
      for (Eigen::Index i = 0; i < rhs_tilde.cols(); ++i) {
        const double pivot = ds[i] + zeta * wu[j];
        min_pivot = std::min(min_pivot, pivot);
        theta_tilde(j, i) = pivot;
      }
    const double scale = std::max(ds.maxCoeff(), 1e-300);
    if (!(min_pivot > 1e-12 * scale)) {
      std::ostringstream os;
      os << "smallest pivot " << min_pivot << " (data scale " << scale << ")";
      fail(Errc::SingularSystem, os.str());
    }
    theta_tilde = rhs_tilde.cwiseQuotient(theta_tilde);
    return (W * theta_tilde * V.transpose()).transpose();
  }

  double edf(double zeta) const {
    double tr = 0.0;
    for (Eigen::Index i = 0; i < ds.size(); ++i)
      for (Eigen::Index j = 0; j < wu.size(); ++j) {
        const double den = ds[i] + zeta * wu[j];
        if (den > 0.0) tr += ds[i] / den;
      }
    return tr;
  }
};

}  // namespace

Matrix fit_penalized_surface(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                             double zeta, const Matrix& omega,
                             const std::optional<Vector>& weights) {
  if (zeta < 0.0) fail(Errc::ConfigError, "penalty must be nonnegative");
  return KroneckerSolver(ybar, psi_s, psi_u, omega, weights).solve(zeta);
}

std::vector<double> gcv_curve(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                              const Matrix& omega, const std::vector<double>& zeta_grid,
                              const std::optional<Vector>& weights) {
  if (zeta_grid.empty()) fail(Errc::ConfigError, "penalty grid is empty");
  KroneckerSolver solver(ybar, psi_s, psi_u, omega, weights);
  const Vector w = weights ? *weights : Vector::Ones(psi_s.rows());
  const double nm = solver.weighted_nm;
  std::vector<double> out;
  out.reserve(zeta_grid.size());
  for (const double zeta : zeta_grid) {
    if (zeta < 0.0) fail(Errc::ConfigError, "penalty grid values must be nonnegative");
    const double edf = solver.edf(zeta);
    if (edf >= nm) {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    try {
      const Matrix theta = solver.solve(zeta);
      const Matrix resid = ybar - psi_s * theta * psi_u.transpose();
      const double rss = (w.asDiagonal() * resid.cwiseAbs2()).sum();
      out.push_back(nm * rss / ((nm - edf) * (nm - edf)));
    } catch (const Error&) {  // singular at this penalty, skip it
      out.push_back(std::numeric_limits<double>::infinity());
    }
  }
  return out;
}

double select_zeta_gcv(const Matrix& ybar, const Matrix& psi_s, const Matrix& psi_u,
                       const Matrix& omega, const std::vector<double>& zeta_grid,
                       const std::optional<Vector>& weights) {
  std::vector<double> grid = zeta_grid;
  std::sort(grid.begin(), grid.end());
  const std::vector<double> gcv = gcv_curve(ybar, psi_s, psi_u, omega, grid, weights);

  bool any_valid = false;
  double best_zeta = grid.front();
  double best_gcv = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!std::isfinite(gcv[g])) continue;
    if (gcv[g] <= best_gcv) {  // ties go to the larger penalty
      best_gcv = gcv[g];
      best_zeta = grid[g];
      any_valid = true;
    }
  }
  if (!any_valid)
    fail(Errc::AllDegenerate, "effective degrees of freedom exhaust the data on every grid point");
  return best_zeta;
}

std::vector<double> default_zeta_grid() {
  std::vector<double> grid(25);
  for (int i = 0; i < 25; ++i) grid[i] = std::pow(10.0, -8.0 + 12.0 * i / 24.0);
  return grid;
}

Vector MeanModel::fitted_curve(int i, int k0) const {
  Vector out = mu_values.row(i);
  if (change_active(i, k0)) out += delta_values.row(i);
  return out;
}

bool MeanModel::change_active(int i, int k0) const { return pilot_change_active(pilot, i, k0); }

bool pilot_change_active(const ChangeConfig& cfg, int i, int k0) {
  const int year = k0 + 1;
  if (cfg.model == ChangeModel::Amoc) {
    if (!cfg.pilot_tau) return false;
    return year > (*cfg.pilot_tau)[i];
  }
  if (!cfg.pilot_tau_pair) return false;
  const auto [t1, t2] = (*cfg.pilot_tau_pair)[i];
  return year > t1 && year <= t2;
}

SegmentMeans segment_means(const FunctionalDataset& ds, const ChangeConfig& cfg) {
  cfg.validate(ds.n, ds.N);
  SegmentMeans sm;
  sm.ybar_mu = Matrix::Zero(ds.n, ds.m);
  sm.ybar_delta = Matrix::Zero(ds.n, ds.m);
  sm.delta_weight = Vector::Zero(ds.n);
  for (int i = 0; i < ds.n; ++i) {
    Vector base = Vector::Zero(ds.m);
    Vector changed = Vector::Zero(ds.m);
    int base_count = 0, changed_count = 0;
    for (int k0 = 0; k0 < ds.N; ++k0) {
      if (pilot_change_active(cfg, i, k0)) {
        changed += ds.curve(i, k0);
        ++changed_count;
      } else {
        base += ds.curve(i, k0);
        ++base_count;
      }
    }
    if (base_count == 0) fail(Errc::EmptySegment, "no pre-change observations at a location");
    sm.ybar_mu.row(i) = base.transpose() / base_count;
    if (changed_count > 0) {
      sm.ybar_delta.row(i) = changed.transpose() / changed_count - sm.ybar_mu.row(i);
      sm.delta_weight[i] = 1.0;
    }
  }
  return sm;
}

MeanModel estimate_mean_and_change(const FunctionalDataset& ds, const ChangeConfig& cfg,
                                   const SpatialBasis& sbasis, const BSplineBasis& ubasis,
                                   double zeta) {
  const Matrix psi_s = eval_spatial(sbasis, ds.domain);
  const Matrix psi_u = eval_bspline(ubasis, ds.u_grid);
  const SegmentMeans sm = segment_means(ds, cfg);

  MeanModel model;
  model.sbasis = sbasis;
  model.ubasis = ubasis;
  model.zeta = zeta;
  model.pilot = cfg;
  model.u_grid = ds.u_grid;

  model.theta_mu = fit_penalized_surface(sm.ybar_mu, psi_s, psi_u, zeta, ubasis.omega);
  if (cfg.is_global_null() || sm.delta_weight.sum() == 0.0)
    model.theta_delta = Matrix::Zero(psi_s.cols(), psi_u.cols());
  else
    model.theta_delta =
        fit_penalized_surface(sm.ybar_delta, psi_s, psi_u, zeta, ubasis.omega, sm.delta_weight);

  model.mu_values = psi_s * model.theta_mu * psi_u.transpose();
  model.delta_values = psi_s * model.theta_delta * psi_u.transpose();
  return model;
}

}  // namespace geoftscp
