// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "geoftscp/basis.hpp"
#include "geoftscp/core.hpp"

using namespace geoftscp;

namespace {

Matrix random_matrix(RngStream& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

Vector linspace01(int count) {
  Vector u(count);
  for (int j = 0; j < count; ++j) u[j] = static_cast<double>(j) / (count - 1);
  return u;
}

}  // namespace

TEST_CASE("bspline rows form a partition of unity") {
  const BSplineBasis b = BSplineBasis::cubic(8);
  Vector pts(3);
  pts << 0.5, 0.123, 0.999;
  const Matrix vals = eval_bspline(b, pts);
  for (int r = 0; r < 3; ++r) {
    CHECK(vals.row(r).sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(vals.row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("bspline interpolates the first coefficient at zero") {
  const BSplineBasis b = BSplineBasis::cubic(8);
  Vector pts(2);
  pts << 0.0, 1.0;
  const Matrix vals = eval_bspline(b, pts);
  CHECK(vals(0, 0) == doctest::Approx(1.0));
  CHECK(vals.row(0).tail(7).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(vals(1, 7) == doctest::Approx(1.0));
  Vector bad(1);
  bad << 1.5;
  CHECK_THROWS_AS(eval_bspline(b, bad), Error);
}

TEST_CASE("omega penalty has the cubic null space") {
  const BSplineBasis b = BSplineBasis::cubic(8);
  Eigen::SelfAdjointEigenSolver<Matrix> es(b.omega);
  int near_zero = 0;
  for (int i = 0; i < 8; ++i)
    if (std::abs(es.eigenvalues()[i]) < 1e-8 * es.eigenvalues().cwiseAbs().maxCoeff()) ++near_zero;
  CHECK(near_zero == 2);  // linear functions are unpenalized
}

TEST_SUITE("oracle") {
  TEST_CASE("omega matches Simpson quadrature of the second-derivative products") {
    const BSplineBasis b = BSplineBasis::cubic(6);
    const int pts = 2001;
    const Vector grid = linspace01(pts);
    const Matrix d2 = eval_bspline_derivative2(b, grid);
    Matrix omega_quad = Matrix::Zero(6, 6);
    const double h = 1.0 / (pts - 1);
    for (int j = 0; j < pts; ++j) {
      double w = (j == 0 || j == pts - 1) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
      omega_quad += (w * h / 3.0) * d2.row(j).transpose() * d2.row(j);
    }
    CHECK((omega_quad - b.omega).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("spherical harmonic gram matrix is the identity under area weights") {
    // 64 x 128 quadrature grid: Gauss-Legendre nodes in cos(colatitude),
    // uniform midpoints in longitude, weights carrying the surface area.
    const int nt = 64, np = 128;
    Vector gl_x(nt), gl_w(nt);
    for (int a = 0; a < nt; ++a) {  // Newton iteration per node
      double x = std::cos(std::numbers::pi * (a + 0.75) / (nt + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= nt; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = nt * (x * p1 - p0) / (x * x - 1.0);
        const double step = p1 / dp;
        x -= step;
        if (std::abs(step) < 1e-15) break;
      }
      gl_x[a] = x;
      gl_w[a] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    Matrix lonlat(nt * np, 2);
    Vector weight(nt * np);
    for (int a = 0; a < nt; ++a)
      for (int o = 0; o < np; ++o) {
        const double theta = std::acos(gl_x[a]);
        const double phi = (o + 0.5) * 2.0 * std::numbers::pi / np;
        const int idx = a * np + o;
        lonlat(idx, 0) = phi * 180.0 / std::numbers::pi - 180.0;
        lonlat(idx, 1) = 90.0 - theta * 180.0 / std::numbers::pi;
        weight[idx] = gl_w[a] * (2.0 * std::numbers::pi / np);
      }
    const SpatialDomain sphere = SpatialDomain::sphere(lonlat);
    const SpatialBasis basis = SpatialBasis::spherical_harmonics(10);
    const Matrix psi = eval_spatial(basis, sphere);
    REQUIRE(psi.cols() == 121);
    const Matrix gram = psi.transpose() * weight.asDiagonal() * psi;
    double max_off = 0.0, max_diag_err = 0.0;
    for (int a = 0; a < 121; ++a)
      for (int b2 = 0; b2 < 121; ++b2) {
        if (a == b2)
          max_diag_err = std::max(max_diag_err, std::abs(gram(a, b2) - 1.0));
        else
          max_off = std::max(max_off, std::abs(gram(a, b2)));
      }
    CHECK(max_off < 1e-3);
    CHECK(max_diag_err < 1e-3);
  }

  TEST_CASE("penalized fit with zero penalty equals dense Kronecker least squares") {
    RngStream rng(42, 0);
    const int n = 4, m = 5, Ls = 2, Lu = 4;
    const Matrix psi_s = random_matrix(rng, n, Ls);
    const Matrix psi_u = random_matrix(rng, m, Lu);
    const Matrix ybar = random_matrix(rng, n, m);
    const Matrix omega = Matrix::Identity(Lu, Lu);

    const Matrix theta = fit_penalized_surface(ybar, psi_s, psi_u, 0.0, omega);

    // oracle: explicit nm x (Ls Lu) design, u index fastest
    Matrix design(n * m, Ls * Lu);
    Vector yvec(n * m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        yvec[i * m + j] = ybar(i, j);
        for (int ls = 0; ls < Ls; ++ls)
          for (int lu = 0; lu < Lu; ++lu)
            design(i * m + j, ls * Lu + lu) = psi_s(i, ls) * psi_u(j, lu);
      }
    const Vector beta = design.colPivHouseholderQr().solve(yvec);
    double max_diff = 0.0;
    for (int ls = 0; ls < Ls; ++ls)
      for (int lu = 0; lu < Lu; ++lu)
        max_diff = std::max(max_diff, std::abs(theta(ls, lu) - beta[ls * Lu + lu]));
    CHECK(max_diff < 1e-9);
  }

  TEST_CASE("huge penalties force fits that are linear in u") {
    RngStream rng(43, 0);
    const int n = 6, m = 30;
    const BSplineBasis b = BSplineBasis::cubic(10);
    const SpatialBasis sb = SpatialBasis::tensor_polynomial(1);
    Matrix xy(n, 2);
    for (int i = 0; i < n; ++i) {
      xy(i, 0) = rng.uniform01();
      xy(i, 1) = rng.uniform01();
    }
    const SpatialDomain domain = SpatialDomain::plane(xy);
    const Matrix psi_s = eval_spatial(sb, domain);
    const Vector u = linspace01(m);
    const Matrix psi_u = eval_bspline(b, u);
    const Matrix ybar = random_matrix(rng, n, m);

    const Matrix theta = fit_penalized_surface(ybar, psi_s, psi_u, 1e12, b.omega);
    const Matrix fitted = psi_s * theta * psi_u.transpose();
    const double range = fitted.maxCoeff() - fitted.minCoeff();
    for (int i = 0; i < n; ++i)
      for (int j = 1; j + 1 < m; ++j) {
        const double second_diff = fitted(i, j + 1) - 2.0 * fitted(i, j) + fitted(i, j - 1);
        CHECK(std::abs(second_diff) < 1e-6 * range);
      }
  }

  TEST_CASE("gcv values match a dense smoother-matrix oracle") {
    RngStream rng(44, 0);
    const int n = 4, m = 5, Ls = 2, Lu = 4;
    const Matrix psi_s = random_matrix(rng, n, Ls);
    const BSplineBasis b = BSplineBasis::cubic(Lu);
    const Matrix psi_u = eval_bspline(b, linspace01(m));
    const Matrix ybar = random_matrix(rng, n, m);
    const std::vector<double> grid{1e-6, 1e-3, 1e-1, 1.0, 10.0};

    const std::vector<double> gcv = gcv_curve(ybar, psi_s, psi_u, b.omega, grid);

    Matrix design(n * m, Ls * Lu);
    Vector yvec(n * m);
    Matrix penalty = Matrix::Zero(Ls * Lu, Ls * Lu);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        yvec[i * m + j] = ybar(i, j);
        for (int ls = 0; ls < Ls; ++ls)
          for (int lu = 0; lu < Lu; ++lu)
            design(i * m + j, ls * Lu + lu) = psi_s(i, ls) * psi_u(j, lu);
      }
    for (int ls = 0; ls < Ls; ++ls) penalty.block(ls * Lu, ls * Lu, Lu, Lu) = b.omega;

    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Matrix inner = design.transpose() * design + grid[g] * penalty;
      const Matrix smoother = design * inner.ldlt().solve(design.transpose());
      const double edf = smoother.trace();
      const Vector resid = yvec - smoother * yvec;
      const double nm = n * m;
      const double oracle = nm * resid.squaredNorm() / ((nm - edf) * (nm - edf));
      CHECK(gcv[g] == doctest::Approx(oracle).epsilon(1e-8));
    }
  }

  TEST_CASE("recovered change surface matches injected segment step") {
    RngStream rng(45, 0);
    const int n = 9, N = 10, m = 12, tau = 5;
    const double noise_sd = 0.05;
    Matrix xy(n, 2);
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 3; ++c) {
        xy(a * 3 + c, 0) = a / 2.0;
        xy(a * 3 + c, 1) = c / 2.0;
      }
    const Vector u = linspace01(m);
    FunctionalDataset ds = FunctionalDataset::zeros(SpatialDomain::plane(xy), N, u);
    auto mu_true = [](double s1, double s2, double uu) { return 1.0 + s1 * uu - 0.3 * s2; };
    auto delta_true = [](double s1, double s2, double uu) {
      return 0.5 + s1 - 0.5 * s2 + uu;
    };
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < N; ++k)
        for (int j = 0; j < m; ++j) {
          double v = mu_true(xy(i, 0), xy(i, 1), u[j]);
          if (k + 1 > tau) v += delta_true(xy(i, 0), xy(i, 1), u[j]);
          ds.at(i, k, j) = v + noise_sd * rng.normal();
        }

    ChangeConfig cfg;
    cfg.model = ChangeModel::Amoc;
    cfg.pilot_tau = std::vector<int>(n, tau);
    const MeanModel model = estimate_mean_and_change(ds, cfg, SpatialBasis::tensor_polynomial(1),
                                                     BSplineBasis::cubic(4), 0.0);
    const double tol = 2.0 / std::sqrt(static_cast<double>(tau)) * noise_sd;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        CHECK(std::abs(model.delta_values(i, j) - delta_true(xy(i, 0), xy(i, 1), u[j])) < tol);
  }
}

TEST_CASE("spatial basis shapes and domain checks") {
  const SpatialBasis sh = SpatialBasis::spherical_harmonics(10);
  CHECK(sh.num_basis() == 121);
  const SpatialBasis poly = SpatialBasis::tensor_polynomial(5);
  CHECK(poly.num_basis() == 36);

  Matrix xy(2, 2);
  xy << 0.1, 0.2, 0.8, 0.9;
  const SpatialDomain plane = SpatialDomain::plane(xy);
  CHECK_THROWS_AS(eval_spatial(sh, plane), Error);

  const Matrix vals = eval_spatial(poly, plane);
  CHECK(vals.col(0).isConstant(1.0));

  Matrix lonlat(2, 2);
  lonlat << 10.0, 20.0, -50.0, -60.0;
  const SpatialDomain sphere = SpatialDomain::sphere(lonlat);
  CHECK_THROWS_AS(eval_spatial(poly, sphere), Error);
  const Matrix sh_vals = eval_spatial(sh, sphere);
  const double c = 1.0 / std::sqrt(4.0 * std::numbers::pi);
  CHECK(sh_vals(0, 0) == doctest::Approx(c).epsilon(1e-12));
  CHECK(sh_vals(1, 0) == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("zero-penalty fit reproduces representable data") {
  RngStream rng(46, 0);
  const int n = 6, m = 9;
  const Matrix psi_s = random_matrix(rng, n, 3);
  const BSplineBasis b = BSplineBasis::cubic(5);
  const Matrix psi_u = eval_bspline(b, linspace01(m));
  const Matrix theta_true = random_matrix(rng, 3, 5);
  const Matrix ybar = psi_s * theta_true * psi_u.transpose();
  const Matrix theta = fit_penalized_surface(ybar, psi_s, psi_u, 0.0, b.omega);
  CHECK(((psi_s * theta * psi_u.transpose()) - ybar).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gcv selection honors ties and trivial grids") {
  RngStream rng(47, 0);
  const Matrix psi_s = random_matrix(rng, 5, 2);
  const BSplineBasis b = BSplineBasis::cubic(4);
  const Matrix psi_u = eval_bspline(b, linspace01(7));
  const Matrix theta_true = random_matrix(rng, 2, 4);
  const Matrix representable = psi_s * theta_true * psi_u.transpose();

  CHECK(select_zeta_gcv(representable, psi_s, psi_u, b.omega, {0.37}) == 0.37);
  // noiseless representable data: zero penalty leaves zero residual
  const double z = select_zeta_gcv(representable, psi_s, psi_u, b.omega, {1e-8, 1e-4, 1.0, 1e3});
  CHECK(z == 1e-8);
}

TEST_CASE("mean estimation under the global null has no change surface") {
  RngStream rng(48, 0);
  Matrix xy(4, 2);
  xy << 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0;
  const Vector u = linspace01(8);
  FunctionalDataset ds = FunctionalDataset::zeros(SpatialDomain::plane(xy), 3, u);
  for (auto& v : ds.values) v = rng.normal();
  const MeanModel model = estimate_mean_and_change(ds, ChangeConfig::global_null(),
                                                   SpatialBasis::tensor_polynomial(1),
                                                   BSplineBasis::cubic(4), 1e-4);
  CHECK(model.theta_delta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant data fits a constant mean and zero change") {
  Matrix xy(6, 2);
  xy << 0.0, 0.0, 0.0, 0.5, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 1.0, 1.0;
  const Vector u = linspace01(8);
  FunctionalDataset ds = FunctionalDataset::zeros(SpatialDomain::plane(xy), 6, u);
  for (auto& v : ds.values) v = 3.25;
  ChangeConfig cfg;
  // one location pinned at tau = N exercises the zero-weight change row
  cfg.pilot_tau = std::vector<int>{2, 3, 4, 5, 3, 6};
  const MeanModel model = estimate_mean_and_change(ds, cfg, SpatialBasis::tensor_polynomial(1),
                                                   BSplineBasis::cubic(4), 0.0);
  CHECK((model.mu_values.array() - 3.25).abs().maxCoeff() < 1e-9);
  CHECK(model.delta_values.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_SUITE("property") {
  TEST_CASE("penalized fit is linear in the response") {
    RngStream rng(49, 0);
    const Matrix psi_s = random_matrix(rng, 6, 3);
    const BSplineBasis b = BSplineBasis::cubic(5);
    const Matrix psi_u = eval_bspline(b, linspace01(9));
    for (int trial = 0; trial < 1000; ++trial) {
      const Matrix y1 = random_matrix(rng, 6, 9);
      const Matrix y2 = random_matrix(rng, 6, 9);
      const double a = rng.normal(), c = rng.normal();
      const double zeta = std::pow(10.0, -4.0 + 6.0 * rng.uniform01());
      const Matrix lhs = fit_penalized_surface(a * y1 + c * y2, psi_s, psi_u, zeta, b.omega);
      const Matrix rhs = a * fit_penalized_surface(y1, psi_s, psi_u, zeta, b.omega) +
                         c * fit_penalized_surface(y2, psi_s, psi_u, zeta, b.omega);
      const double scale = rhs.cwiseAbs().maxCoeff() + 1.0;
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9 * scale);
    }
  }

  TEST_CASE("fits are equivariant under location permutations") {
    RngStream rng(50, 0);
    const int n = 7;
    for (int trial = 0; trial < 1000; ++trial) {
      const Matrix psi_s = random_matrix(rng, n, 3);
      const BSplineBasis b = BSplineBasis::cubic(4);
      const Matrix psi_u = eval_bspline(b, linspace01(6));
      const Matrix ybar = random_matrix(rng, n, 6);
      std::vector<int> perm(n);
      for (int i = 0; i < n; ++i) perm[i] = i;
      for (int i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<int>(rng.uniform01() * (i + 1))]);
      Matrix psi_p(n, 3), ybar_p(n, 6);
      for (int i = 0; i < n; ++i) {
        psi_p.row(i) = psi_s.row(perm[i]);
        ybar_p.row(i) = ybar.row(perm[i]);
      }
      const Matrix theta = fit_penalized_surface(ybar, psi_s, psi_u, 0.01, b.omega);
      const Matrix theta_p = fit_penalized_surface(ybar_p, psi_p, psi_u, 0.01, b.omega);
      CHECK((theta - theta_p).cwiseAbs().maxCoeff() < 1e-9 * (theta.cwiseAbs().maxCoeff() + 1.0));
    }
  }

  TEST_CASE("omega is positive semidefinite") {
    RngStream rng(51, 0);
    const BSplineBasis b = BSplineBasis::cubic(9);
    for (int trial = 0; trial < 1000; ++trial) {
      Vector v(9);
      for (int i = 0; i < 9; ++i) v[i] = rng.normal();
      CHECK(v.dot(b.omega * v) >= -1e-12 * v.squaredNorm());
    }
  }
}
