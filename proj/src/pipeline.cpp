// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/pipeline.hpp"

#include <algorithm>

#include "geoftscp/threading.hpp"

namespace geoftscp {

PipelineResult run_pipeline(const FunctionalDataset& ds, const PipelineOptions& opts) {
  PipelineResult out;
  out.null_hypothesis = opts.pilot.is_global_null();

  const int num_bsplines =
      opts.num_bsplines > 0 ? opts.num_bsplines : std::max(4, std::min(20, ds.m / 2));
  const BSplineBasis ubasis = BSplineBasis::cubic(num_bsplines);
  const Matrix psi_s = eval_spatial(opts.sbasis, ds.domain);
  const Matrix psi_u = eval_bspline(ubasis, ds.u_grid);

  const SegmentMeans sm = segment_means(ds, opts.pilot);
  const double zeta = select_zeta_gcv(sm.ybar_mu, psi_s, psi_u, ubasis.omega, opts.zeta_grid);
  out.mean = estimate_mean_and_change(ds, opts.pilot, opts.sbasis, ubasis, zeta);

  const KernelSpec kernel{opts.bandwidth};
  out.pc = fit_pc_decomposition(ds, out.mean, opts.Q, kernel, opts.covariance_smoothing);

  // Shared distances pay off until the n x n cache stops fitting comfortably.
  std::optional<DistanceCache> cache;
  if (ds.n <= 6000) cache.emplace(ds.domain);
  const DistanceCache* cache_ptr = cache ? &*cache : nullptr;

  out.cov.fits.resize(opts.Q);
  out.zhat.resize(opts.Q);
  parallel_for(opts.Q, [&](int q) {
    if (ds.n == 1) {
      // no pairs to inform the correlation; kriging reduces to the nugget
      // shrinkage sigma^2 / (sigma^2 + gamma^2)
      CovParams p;
      p.model = IsotropicMatern{1.0, 0.5};
      p.sigma2 = out.pc.sigma2_hat.col(q);
      p.gamma2 = out.pc.gamma2_hat.col(q);
      out.cov.fits[q].loglik = gaussian_loglik(out.pc.scores[q], p, ds.domain);
      out.cov.fits[q].converged = false;
      out.cov.fits[q].params = std::move(p);
    } else {
      out.cov.fits[q] = fit_mle(out.pc.scores[q], ds.domain, opts.cov_kind,
                                out.pc.sigma2_hat.col(q), out.pc.gamma2_hat.col(q), std::nullopt,
                                opts.fit, cache_ptr);
    }
    out.zhat[q] = krige_scores(out.pc.scores[q], out.cov.fits[q].params, ds.domain, cache_ptr);
  });
  if (opts.fit.mode == LikelihoodMode::Vecchia) out.cov.vecchia = opts.fit.vecchia;

  out.yhat = predict_data(ds, out.mean, out.pc.phi, out.zhat);
  out.lambda_star.resize(ds.n, opts.Q);
  for (int q = 0; q < opts.Q; ++q)
    out.lambda_star.col(q) = local_variance(out.zhat[q], ds.domain, kernel);
  return out;
}

}  // namespace geoftscp
