// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "geoftscp/simstudy.hpp"

using namespace geoftscp;

TEST_CASE("truth surface formulas at pinned points") {
  const TruthPoint origin = eval_truth(0.0, 0.0, 0.5, 10.0, 15);
  CHECK(origin.mu == doctest::Approx(0.0).epsilon(1e-15));  // cos(pi/2)

  // taper hits zero exactly on the boundary line
  const TruthPoint edge = eval_truth(0.0, 0.3, 0.4, 10.0, 15);
  CHECK(edge.delta == 0.0);
  CHECK_FALSE(edge.has_change);
  CHECK(edge.tau == 15.0);
}

TEST_SUITE("oracle") {
  TEST_CASE("change time formula at the origin") {
    // ceil(15 + 3 exp(0)) / 4 = 18 / 4
    const TruthPoint t = eval_truth(0.0, 0.0, 0.1, 2.0, 15);
    CHECK(t.tau == doctest::Approx(4.5));
    CHECK(t.has_change);
  }

  TEST_CASE("score marginals agree across dependence modes") {
    SimDesign design;
    design.N = 250;
    design.seed = 120;
    const SpatialDomain domain = make_sim_domain(design);
    const int draws = 5000;  // 250 years x 20 replicates
    const int reps = 20;

    for (const Dependence mode : {Dependence::Independent, Dependence::Dependent}) {
      std::vector<Matrix> pooled(3, Matrix(design.n(), draws));
      for (int r = 0; r < reps; ++r) {
        RngStream rng(design.seed, r);
        const auto z = simulate_score_fields(design, mode, rng);
        for (int q = 0; q < 3; ++q)
          pooled[q].middleCols(r * design.N, design.N) = z[q];
      }
      for (int q = 0; q < 3; ++q)
        for (const int i : {0, 57, 123, 180, 241, 299}) {
          const double a1 = std::abs(domain.coords(i, 0));
          const double a2 = std::abs(domain.coords(i, 1));
          double sd = 0.0;
          if (q == 0)
            sd = a1 + a2 + 0.01;
          else if (q == 1)
            sd = (3.0 * a1 + 27.0 * a2) / 25.0 + 0.01;
          else
            sd = (9.0 * a1 + a2) / 25.0 + 0.01;
          const double truth_var = sd * sd + 0.3;
          const double sample_var = pooled[q].row(i).squaredNorm() / draws;
          const double se = truth_var * std::sqrt(2.0 / (draws - 1.0));
          CHECK(std::abs(sample_var - truth_var) <= 3.0 * se);
        }
    }
  }

  TEST_CASE("dependent scores correlate like the exponential model") {
    SimDesign design;
    design.N = 200;
    design.seed = 121;
    const SpatialDomain domain = make_sim_domain(design);
    const int reps = 25;
    std::vector<Matrix> pooled(3, Matrix(design.n(), design.N * reps));
    for (int r = 0; r < reps; ++r) {
      RngStream rng(design.seed, r);
      const auto z = simulate_score_fields(design, Dependence::Dependent, rng);
      for (int q = 0; q < 3; ++q) pooled[q].middleCols(r * design.N, design.N) = z[q];
    }
    // pairs eight cells apart along s2: distance exactly 0.4, range alpha_1 = 0.4
    for (const int i : {0, 45, 150, 223}) {
      const int j = i + 8;
      REQUIRE(distance(domain, i, j) == doctest::Approx(0.4).epsilon(1e-12));
      const int draws = design.N * reps;
      const double vi = pooled[0].row(i).squaredNorm() / draws;
      const double vj = pooled[0].row(j).squaredNorm() / draws;
      const double cov = pooled[0].row(i).dot(pooled[0].row(j)) / draws;
      const double emp_corr = cov / std::sqrt(vi * vj);

      const double s_i = domain.coords(i, 0) + domain.coords(i, 1) + 0.01;
      const double s_j = domain.coords(j, 0) + domain.coords(j, 1) + 0.01;
      const double expected =
          s_i * s_j * std::exp(-1.0) / std::sqrt((s_i * s_i + 0.3) * (s_j * s_j + 0.3));
      CHECK(std::abs(emp_corr - expected) < 0.1);
    }
  }
}

TEST_CASE("zero signal reuses the no-change draws bit for bit") {
  SimDesign design;
  design.seed = 122;
  auto [null_ds, null_truth] = generate_dataset(design, 0.0, Dependence::Dependent, 3);
  auto [alt_ds, alt_truth] = generate_dataset(design, 10.0, Dependence::Dependent, 3);
  for (int i = 0; i < design.n(); ++i) {
    if (alt_truth.tau_marked[i]) {
      for (int k = 0; k + 1 <= static_cast<int>(alt_truth.tau[i]); ++k)
        for (int j = 0; j < design.m; ++j)
          CHECK(null_ds.at(i, k, j) == alt_ds.at(i, k, j));
    } else {
      for (int k = 0; k < design.N; ++k)
        for (int j = 0; j < design.m; ++j)
          CHECK(null_ds.at(i, k, j) == alt_ds.at(i, k, j));
    }
  }
  CHECK(!null_truth.has_change[0]);
}

TEST_CASE("datasets replay bit-identically for a fixed seed and replicate") {
  SimDesign design;
  design.seed = 123;
  auto [a, ta] = generate_dataset(design, 6.0, Dependence::Dependent, 5);
  auto [b, tb] = generate_dataset(design, 6.0, Dependence::Dependent, 5);
  CHECK(a.values == b.values);
  auto [c, tc] = generate_dataset(design, 6.0, Dependence::Dependent, 6);
  CHECK(a.values != c.values);
}

TEST_CASE("the change half-plane is a fixed fraction of the grid") {
  SimDesign design;
  const SimTruth truth = truth_for(design, 2.0);
  int marked = 0;
  for (const bool b : truth.tau_marked) marked += b;
  CHECK(marked == 227);  // midpoint grid cells with s1 - s2 > -0.3
  int changed = 0;
  for (const bool b : truth.has_change) changed += b;
  CHECK(changed == 227);
  const SimTruth null_truth = truth_for(design, 0.0);
  int null_changed = 0;
  for (const bool b : null_truth.has_change) null_changed += b;
  CHECK(null_changed == 0);

  for (int i = 0; i < design.n(); ++i)
    if (truth.tau_marked[i]) {
      CHECK(truth.tau[i] >= 4.5);
      CHECK(truth.tau[i] <= 9.5);
    }
}

TEST_CASE("run_study metric arithmetic at the extremes") {
  SimConfig cfg;
  cfg.design.seed = 124;
  cfg.design.n_s1 = 4;
  cfg.design.n_s2 = 5;
  cfg.replicates = 2;
  cfg.etas = {10.0};
  cfg.modes = {Dependence::Independent};
  cfg.nulls.R = 10000;
  cfg.nulls.grid = 200;
  DetectorConfig never;
  never.flavor = PredictionFlavor::Individual;
  never.Q = 2;
  never.alpha = 1e-7;  // below the smallest attainable p-value
  DetectorConfig always = never;
  always.alpha = 1.0;  // p <= 1 everywhere
  cfg.detectors = {never, always};
  const MetricsTable table = run_study(cfg);

  CHECK(table.get(10.0, Dependence::Independent, never.name(), "fpr") == 0.0);
  CHECK(table.get(10.0, Dependence::Independent, never.name(), "fnr") == 1.0);
  CHECK(table.get(10.0, Dependence::Independent, always.name(), "fpr") == 1.0);
  CHECK(table.get(10.0, Dependence::Independent, always.name(), "fnr") == 0.0);
  CHECK(table.get(10.0, Dependence::Independent, always.name(), "fwer_bonf") == 1.0);
  CHECK(table.get(10.0, Dependence::Independent, always.name(), "fdr_bh") == 1.0);
  CHECK(table.get(10.0, Dependence::Independent, never.name(), "fdr_bh") == 0.0);
  CHECK(table.get(10.0, Dependence::Independent, never.name(), "tau_rmse") ==
        table.get(10.0, Dependence::Independent, always.name(), "tau_rmse"));
}

TEST_CASE("detector names distinguish the configurations") {
  DetectorConfig det;
  det.family = StatFamily::Score;
  det.flavor = PredictionFlavor::Individual;
  det.Q = 4;
  CHECK(det.name() == "score_individual_q4");
  det.flavor = PredictionFlavor::Primary;
  CHECK(det.name() == "score_predicted_q4");
  det.flavor = PredictionFlavor::Recomputed;
  det.family = StatFamily::FullyFunctional;
  det.Q = 3;
  CHECK(det.name() == "ff_predicted_recomputed_q3");
}

TEST_SUITE("property") {
  TEST_CASE("per-replicate streams are independent of evaluation order") {
    SimDesign design;
    design.seed = 125;
    design.n_s1 = 3;
    design.n_s2 = 4;
    design.N = 5;
    design.m = 8;
    for (int trial = 0; trial < 1000; ++trial) {
      const int rep = trial % 7;
      const Dependence mode = trial % 2 == 0 ? Dependence::Independent : Dependence::Dependent;
      auto [a, ta] = generate_dataset(design, 2.0, mode, rep);
      auto [b, tb] = generate_dataset(design, 2.0, mode, rep);
      CHECK(a.values == b.values);
    }
  }
}
