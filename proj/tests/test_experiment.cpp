#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "ddro/experiment.hpp"
#include "ddro/lp.hpp"
#include "ddro/rng.hpp"
#include "oracles.hpp"

using namespace ddro;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.seed = 7101;
  cfg.warehouses = 2;
  cfg.sites = 3;
  cfg.covariates = 3;
  return cfg;
}

// The pricing recourse assembled a second time, from the written-out
// formulation rather than the instance matrices: shipments bounded below by
// zero as variable bounds (not sign rows), site-major layout, <= rows.
//   min  sum c_ij s_ij + p2 sum t_i - z1 sum_j Y_j
//   s.t. -sum_i s_ij <= -Y_j          (serve demand)
//        sum_j s_ij - t_i <= z2_i     (advance production capacity)
double pricing_cost_oracle(const Mat& warehouse_xy, const Mat& site_xy,
                           double p2, const Vec& z, const Vec& y) {
  const int I = static_cast<int>(warehouse_xy.rows());
  const int J = static_cast<int>(site_xy.rows());
  const int vars = I * J + I;
  auto s_at = [&](int i, int j) { return j * I + i; };  // site-major
  LinearProgram lp = LinearProgram::make(vars, I + J);
  for (int j = 0; j < J; ++j)
    for (int i = 0; i < I; ++i)
      lp.c[s_at(i, j)] = (warehouse_xy.row(i) - site_xy.row(j)).norm();
  for (int i = 0; i < I; ++i) lp.c[I * J + i] = p2;
  for (int v = 0; v < vars; ++v) {
    lp.lower[v] = 0.0;
    lp.upper[v] = std::numeric_limits<double>::infinity();
  }
  for (int j = 0; j < J; ++j) {
    lp.sense[j] = RowSense::Le;
    lp.rhs[j] = -y[j];
    for (int i = 0; i < I; ++i) lp.add_entry(j, s_at(i, j), -1.0);
  }
  for (int i = 0; i < I; ++i) {
    lp.sense[J + i] = RowSense::Le;
    lp.rhs[J + i] = z[1 + i];
    for (int j = 0; j < J; ++j) lp.add_entry(J + i, s_at(i, j), 1.0);
    lp.add_entry(J + i, I * J + i, -1.0);
  }
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  return sol.objective - z[0] * y.sum();
}

}  // namespace

TEST_CASE("generated recourse matches the written-out pricing model") {
  ExperimentConfig cfg = small_config();
  GeneratedInstance gen = generate_instance(cfg);
  CHECK(gen.base.d_z() == 1 + cfg.warehouses);
  CHECK(gen.base.d_y() == cfg.sites);
  CHECK(gen.base.z_upper[0] == doctest::Approx(500.0));

  Rng rng(5150);
  for (int trial = 0; trial < 50; ++trial) {
    Vec z(gen.base.d_z());
    z[0] = rng.uniform(0.0, 500.0);
    for (int i = 1; i < z.size(); ++i) z[i] = rng.uniform(0.0, 4000.0);
    Vec y(gen.base.d_y());
    for (int j = 0; j < y.size(); ++j) y[j] = rng.uniform(-200.0, 3000.0);
    RecourseResult rr = solve_recourse(gen.base, z, y);
    REQUIRE(rr.status == LpStatus::Optimal);
    double expected =
        pricing_cost_oracle(gen.warehouse_xy, gen.site_xy, cfg.p2, z, y);
    CHECK(rr.value ==
          doctest::Approx(expected).epsilon(1e-8).scale(1.0 + std::abs(expected)));
  }
}

TEST_CASE("coincident facilities leave the instance valid") {
  ExperimentConfig cfg = small_config();
  cfg.grid_extent = 1e-12;  // every location collapses to the origin
  GeneratedInstance gen = generate_instance(cfg);
  for (int i = 0; i < cfg.warehouses * cfg.sites; ++i)
    CHECK(gen.base.q[i] <= 1e-10);
  Vec z(gen.base.d_z());
  z << 100.0, 2000.0, 2000.0;  // advance production covers all demand
  Vec y = Vec::Constant(gen.base.d_y(), 500.0);
  RecourseResult rr = solve_recourse(gen.base, z, y);
  REQUIRE(rr.status == LpStatus::Optimal);
  // Shipping is free and capacity covers demand, so only revenue remains.
  CHECK(rr.value == doctest::Approx(-z[0] * y.sum()).epsilon(1e-10));
}

TEST_CASE("ground truth law with noise forced to zero") {
  GroundTruth gt;
  gt.A = Mat(2, 2);
  gt.A << 3.0, 4.0, 5.0, 3.5;
  gt.B = Vec(2);
  gt.B << 4.0, 3.0;
  gt.alpha = Vec(2);
  gt.alpha << 1500.0, 1200.0;

  Vec x(2);
  x << 2.0, 3.0;
  Vec eps = Vec::Zero(2);
  Vec y = gt.demand(x, 100.0, eps);
  CHECK(y[0] == doctest::Approx(3.0 * 4.0 + 4.0 * 9.0 - 400.0 + 1500.0));
  CHECK(y[1] == doctest::Approx(5.0 * 4.0 + 3.5 * 9.0 - 300.0 + 1200.0));

  gt.law = DemandLaw::Linear;
  y = gt.demand(x, 100.0, eps);
  CHECK(y[0] == doctest::Approx(3.0 * 2.0 + 4.0 * 3.0 - 400.0 + 1500.0));

  gt.noise_scale = 0.0;
  Dataset data = sample_dataset(gt, 5, 99);
  for (int k = 0; k < data.n(); ++k) {
    Vec expect = gt.mean_demand(data.x.row(k), data.z(k, 0));
    CHECK((data.y.row(k).transpose() - expect).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("dataset draws follow the stated laws") {
  GroundTruth gt;
  gt.A = Mat::Constant(1, 2, 4.0);
  gt.B = Vec::Constant(1, 4.0);
  gt.alpha = Vec::Constant(1, 1500.0);
  const int n = 100000;
  Dataset data = sample_dataset(gt, n, 424242);
  CHECK(data.z.col(0).mean() / 500.0 == doctest::Approx(2.0 / 7.0).epsilon(0.035));
  for (int l = 0; l < 2; ++l)
    CHECK(data.x.col(l).mean() == doctest::Approx(6.0).epsilon(0.1 / 6.0));
  // Price stays inside its scaled range.
  CHECK(data.z.col(0).minCoeff() >= 0.0);
  CHECK(data.z.col(0).maxCoeff() <= 500.0);
}

TEST_CASE("a longer sample extends a shorter one row for row") {
  GroundTruth gt;
  gt.A = Mat::Constant(3, 3, 4.0);
  gt.B = Vec::Constant(3, 4.0);
  gt.alpha = Vec::Constant(3, 1500.0);
  Dataset small = sample_dataset(gt, 50, 1331);
  Dataset large = sample_dataset(gt, 120, 1331);
  CHECK((large.x.topRows(50) - small.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((large.z.topRows(50) - small.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((large.y.topRows(50) - small.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset hash flags any difference") {
  GroundTruth gt;
  gt.A = Mat::Constant(2, 2, 4.0);
  gt.B = Vec::Constant(2, 4.0);
  gt.alpha = Vec::Constant(2, 1500.0);
  Dataset a = sample_dataset(gt, 30, 5);
  Dataset b = sample_dataset(gt, 30, 5);
  Dataset c = sample_dataset(gt, 30, 6);
  CHECK(dataset_hash(a) == dataset_hash(b));
  CHECK(dataset_hash(a) != dataset_hash(c));
  b.y(12, 1) += 1e-12;
  CHECK(dataset_hash(a) != dataset_hash(b));
}

TEST_CASE("zero radius makes the robust and plain variants identical") {
  ExperimentConfig cfg = small_config();
  cfg.radius.mode = RadiusMode::Fixed;
  cfg.radius.fixed_value = 0.0;
  GeneratedInstance gen = generate_instance(cfg);
  Dataset data = sample_dataset(gen.truth, 40,
                                substream_seed(cfg.seed, "data:rep:0"));
  Vec x = sample_covariate(cfg.covariates, substream_seed(cfg.seed, "xnew"));
  VariantRun robust = run_variant("er_d3ro", data, gen, x, cfg);
  VariantRun plain = run_variant("er_dd_saa", data, gen, x, cfg);
  REQUIRE(robust.result.status == "optimal");
  REQUIRE(plain.result.status == "optimal");
  CHECK(robust.result.objective == plain.result.objective);
  CHECK((robust.result.z - plain.result.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK(robust.radius == 0.0);
}

TEST_CASE("price-blind variant rides the price to the top of the box") {
  ExperimentConfig cfg = small_config();
  cfg.radius.mode = RadiusMode::Fixed;
  cfg.radius.fixed_value = 5.0;
  GeneratedInstance gen = generate_instance(cfg);
  Dataset data = sample_dataset(gen.truth, 30,
                                substream_seed(cfg.seed, "data:rep:0"));
  Vec x = sample_covariate(cfg.covariates, substream_seed(cfg.seed, "xnew"));
  VariantRun blind = run_variant("er_dro", data, gen, x, cfg);
  REQUIRE(blind.result.status == "optimal");
  CHECK_FALSE(blind.model.uses_decision());
  CHECK(blind.z1 == doctest::Approx(500.0).epsilon(1e-8));

  VariantRun aware = run_variant("er_d3ro", data, gen, x, cfg);
  REQUIRE(aware.result.status == "optimal");
  CHECK(aware.model.uses_decision());
}

TEST_CASE("variants coincide when demand truly ignores the price") {
  ExperimentConfig cfg = small_config();
  cfg.law = DemandLaw::Linear;
  cfg.radius.mode = RadiusMode::Fixed;
  cfg.radius.fixed_value = 2.0;
  GeneratedInstance gen = generate_instance(cfg);
  gen.truth.B.setZero();       // demand does not react to the price
  gen.truth.noise_scale = 0.0; // and the linear fit is exact
  Dataset data = sample_dataset(gen.truth, 25,
                                substream_seed(cfg.seed, "data:rep:0"));
  Vec x = sample_covariate(cfg.covariates, substream_seed(cfg.seed, "xnew"));
  VariantRun aware = run_variant("er_d3ro", data, gen, x, cfg);
  VariantRun blind = run_variant("er_dro", data, gen, x, cfg);
  REQUIRE(aware.result.status == "optimal");
  REQUIRE(blind.result.status == "optimal");
  double scale = 1.0 + blind.result.z.cwiseAbs().maxCoeff();
  CHECK((aware.result.z - blind.result.z).cwiseAbs().maxCoeff() / scale <
        1e-6);
  CHECK(aware.result.objective ==
        doctest::Approx(blind.result.objective)
            .epsilon(1e-8)
            .scale(1.0 + std::abs(blind.result.objective)));
}

TEST_CASE("out-of-sample evaluation") {
  ExperimentConfig cfg = small_config();
  GeneratedInstance gen = generate_instance(cfg);
  Vec x = sample_covariate(cfg.covariates, 17);
  Vec z(gen.base.d_z());
  z << 150.0, 2000.0, 2500.0;

  SUBCASE("zero noise collapses to the single-scenario cost") {
    GeneratedInstance g2 = gen;
    g2.truth.noise_scale = 0.0;
    OosStats st = evaluate_oos(z, g2, x, 200, 33, cfg.rho, cfg.theta);
    Vec y = g2.truth.mean_demand(x, z[0]);
    for (int j = 0; j < y.size(); ++j) y[j] = std::max(y[j], 0.0);
    RecourseResult rr = solve_recourse(g2.base, z, y);
    REQUIRE(rr.status == LpStatus::Optimal);
    CHECK(st.mean == doctest::Approx(rr.value).epsilon(1e-10));
    CHECK(st.std_error == doctest::Approx(0.0));
    CHECK(st.cvar == doctest::Approx(rr.value).epsilon(1e-10));
    CHECK(st.composite ==
          doctest::Approx(gen.base.c_z.dot(z) + (1.0 + cfg.rho) * rr.value)
              .epsilon(1e-10));
  }

  SUBCASE("doubling the scenario count keeps the prefix") {
    OosStats a = evaluate_oos(z, gen, x, 60, 909, cfg.rho, cfg.theta);
    OosStats b = evaluate_oos(z, gen, x, 120, 909, cfg.rho, cfg.theta);
    REQUIRE(a.costs.size() == 60);
    REQUIRE(b.costs.size() == 120);
    for (int s = 0; s < 60; ++s) CHECK(a.costs[s] == b.costs[s]);
  }

  SUBCASE("costs match fresh primal recourse solves") {
    OosStats st = evaluate_oos(z, gen, x, 40, 2024, cfg.rho, cfg.theta);
    Rng rng(2024);
    Vec eps(gen.truth.sites());
    for (int s = 0; s < 40; ++s) {
      for (int j = 0; j < eps.size(); ++j) eps[j] = rng.normal();
      Vec y = gen.truth.demand(x, z[0], eps);
      for (int j = 0; j < y.size(); ++j) y[j] = std::max(y[j], 0.0);
      RecourseResult rr = solve_recourse(gen.base, z, y);
      REQUIRE(rr.status == LpStatus::Optimal);
      CHECK(st.costs[s] ==
            doctest::Approx(rr.value).epsilon(1e-7).scale(
                1.0 + std::abs(rr.value)));
    }
  }

  SUBCASE("clamping is counted when demand goes negative") {
    Vec x0 = Vec::Zero(cfg.covariates);  // kills the covariate term
    Vec zh(gen.base.d_z());
    zh << 500.0, 1000.0, 1000.0;  // price high enough to empty every site
    OosStats st = evaluate_oos(zh, gen, x0, 50, 11, cfg.rho, cfg.theta);
    CHECK(st.clamped_scenarios == 50);
    // All demand clamps to zero, so no shipping, no expediting, no revenue.
    CHECK(st.mean == doctest::Approx(0.0));
    CHECK(st.composite == doctest::Approx(gen.base.c_z.dot(zh)));
  }
}

TEST_CASE("one-dimensional transport distance agrees with the atom oracle") {
  Rng rng(8080);
  for (int trial = 0; trial < 25; ++trial) {
    int na = 1 + static_cast<int>(rng.below(8));
    int nb = 1 + static_cast<int>(rng.below(8));
    std::vector<double> a(na), b(nb);
    for (double& v : a) v = rng.uniform(-10.0, 10.0);
    for (double& v : b) v = rng.uniform(-10.0, 10.0);
    std::vector<double> wa(na, 1.0 / na), wb(nb, 1.0 / nb);
    double got = wasserstein_1d_sorted(a, b);
    double want = oracle::wasserstein_1d(a, wa, b, wb, 1);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
  std::vector<double> same = {1.0, 2.0, 5.0};
  CHECK(wasserstein_1d_sorted(same, same) == doctest::Approx(0.0));
  std::vector<double> shifted = {1.5, 2.5, 5.5};
  CHECK(wasserstein_1d_sorted(same, shifted) == doctest::Approx(0.5));
}

TEST_CASE("configuration json round trip") {
  ExperimentConfig cfg = small_config();
  cfg.radius.mode = RadiusMode::Theoretical;
  cfg.radius.alpha = 0.1;
  cfg.sample_sizes = {100, 250};
  cfg.compare_regressors = {"kernel"};
  cfg.law = DemandLaw::Linear;
  cfg.loocv_fold_cap = 9;
  ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.radius.mode == RadiusMode::Theoretical);
  CHECK(back.radius.alpha == cfg.radius.alpha);
  CHECK(back.sample_sizes == cfg.sample_sizes);
  CHECK(back.compare_regressors == cfg.compare_regressors);
  CHECK(back.law == DemandLaw::Linear);
  CHECK(back.loocv_fold_cap == 9);

  // A sparse config only overrides what it names.
  ExperimentConfig sparse = config_from_json("{\"seed\": 99, \"p2\": 60}");
  CHECK(sparse.seed == 99);
  CHECK(sparse.p2 == 60.0);
  CHECK(sparse.p1 == 5.0);
  CHECK(sparse.radius.mode == RadiusMode::CrossValidated);
  CHECK(sparse.radius.candidates == std::vector<double>{1, 10, 50, 100});

  CHECK_THROWS(config_from_json("{\"p2\": 1.0}"));  // p2 <= p1
}

TEST_CASE("ground truth json round trip") {
  ExperimentConfig cfg = small_config();
  GeneratedInstance gen = generate_instance(cfg);
  GroundTruth back = ground_truth_from_json(ground_truth_to_json(gen.truth));
  CHECK((back.A - gen.truth.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.B - gen.truth.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.alpha - gen.truth.alpha).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.law == gen.truth.law);
}

TEST_CASE("instance generation is deterministic and within stated ranges") {
  ExperimentConfig cfg = small_config();
  GeneratedInstance a = generate_instance(cfg);
  GeneratedInstance b = generate_instance(cfg);
  CHECK((a.base.q - b.base.q).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.truth.A - b.truth.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.base.z_upper - b.base.z_upper).cwiseAbs().maxCoeff() == 0.0);

  CHECK(a.truth.A.minCoeff() >= 3.0);
  CHECK(a.truth.A.maxCoeff() <= 5.0);
  CHECK(a.truth.B.minCoeff() >= 3.0);
  CHECK(a.truth.B.maxCoeff() <= 5.0);
  CHECK(a.truth.alpha.minCoeff() >= 1000.0);
  CHECK(a.truth.alpha.maxCoeff() <= 2000.0);

  CHECK(a.solve.cvar_augmented);
  CHECK(a.solve.d_z() == a.base.d_z() + 1);

  ExperimentConfig no_risk = cfg;
  no_risk.rho = 0.0;
  GeneratedInstance c = generate_instance(no_risk);
  CHECK_FALSE(c.solve.cvar_augmented);
  CHECK(c.solve.d_z() == c.base.d_z());
}

TEST_CASE("cross-validated radius flows through a variant run") {
  ExperimentConfig cfg = small_config();
  cfg.radius.candidates = {0.0, 5.0};
  cfg.loocv_fold_cap = 4;
  cfg.loocv_fold_gap = 1e-2;
  GeneratedInstance gen = generate_instance(cfg);
  Dataset data = sample_dataset(gen.truth, 12,
                                substream_seed(cfg.seed, "data:rep:0"));
  Vec x = sample_covariate(cfg.covariates, substream_seed(cfg.seed, "xnew"));
  VariantRun vr = run_variant("er_d3ro", data, gen, x, cfg);
  REQUIRE(vr.loocv.table.size() == 2);
  CHECK(vr.loocv.folds.size() <= 4);
  bool chosen_is_candidate = vr.radius == 0.0 || vr.radius == 5.0;
  CHECK(chosen_is_candidate);
  CHECK(vr.radius == vr.loocv.chosen);
  for (const auto& row : vr.loocv.table) {
    CHECK(row.folds_evaluated <= 4);
    CHECK_FALSE(row.failed);
  }
}

TEST_CASE("comparison sweep on a tiny grid") {
  ExperimentConfig cfg = small_config();
  cfg.compare_variants = {"er_d3ro", "er_dd_saa"};
  cfg.compare_regressors = {"ols"};
  cfg.sample_sizes = {25};
  cfg.replications = 2;
  cfg.oos_scenarios = 40;
  cfg.radius.mode = RadiusMode::Fixed;
  cfg.radius.fixed_value = 1.0;

  CompareReport rep = compare_report(cfg);
  REQUIRE(rep.cells.size() == 4);
  REQUIRE(rep.detail.rows.size() == 4);
  REQUIRE(rep.summary.rows.size() == 2);

  for (const auto& cell : rep.cells) {
    CHECK(cell.error.empty());
    CHECK(cell.status == "optimal");
    CHECK(cell.oos.scenarios == 40);
  }
  // Order is (variant, regressor, n, replication).
  CHECK(rep.cells[0].variant == "er_d3ro");
  CHECK(rep.cells[0].replication == 0);
  CHECK(rep.cells[1].replication == 1);
  CHECK(rep.cells[2].variant == "er_dd_saa");

  // Paired replications consumed identical data across variants.
  CHECK(rep.cells[0].dataset_hash == rep.cells[2].dataset_hash);
  CHECK(rep.cells[1].dataset_hash == rep.cells[3].dataset_hash);
  CHECK(rep.cells[0].dataset_hash != rep.cells[1].dataset_hash);

  for (const auto& row : rep.detail.rows)
    CHECK(row.size() == rep.detail.header.size());
  for (const auto& row : rep.summary.rows)
    CHECK(row.size() == rep.summary.header.size());

  SUBCASE("a second run and a threaded run reproduce the tables") {
    CompareReport again = compare_report(cfg);
    ExperimentConfig threaded = cfg;
    threaded.threads = 3;
    CompareReport par = compare_report(threaded);
    for (std::size_t r = 0; r < rep.detail.rows.size(); ++r)
      for (std::size_t c = 0; c < rep.detail.rows[r].size(); ++c) {
        if (rep.detail.header[c] == "solve_seconds") continue;
        CHECK(rep.detail.rows[r][c] == again.detail.rows[r][c]);
        CHECK(rep.detail.rows[r][c] == par.detail.rows[r][c]);
      }
  }
}

TEST_CASE("guarantee validation smoke run") {
  ExperimentConfig cfg = small_config();
  cfg.replications = 3;
  cfg.calibration_trials = 4;
  cfg.coverage_n = 25;
  cfg.coverage_mc = 400;
  cfg.consistency_sizes = {15, 40};
  cfg.consistency_reference_n = 300;
  cfg.law = DemandLaw::Linear;

  GuaranteeReport rep = validate_guarantees(cfg);
  CHECK(rep.alpha == cfg.alpha);
  CHECK(rep.nominal == doctest::Approx(0.8));
  CHECK(rep.radius_calibrated > 0.0);
  CHECK(rep.radius_used ==
        doctest::Approx(cfg.radius_inflation * rep.radius_calibrated));
  REQUIRE(rep.coverage.size() == 3);
  for (const auto& row : rep.coverage) {
    CHECK(std::isfinite(row.v_hat));
    CHECK(std::isfinite(row.g_hat));
  }
  CHECK(rep.coverage_frequency >= 0.0);
  CHECK(rep.coverage_frequency <= 1.0);
  REQUIRE(rep.consistency.size() == 2);
  for (const auto& row : rep.consistency) {
    CHECK(row.gaps.size() == 3);
    CHECK(row.median_gap >= 0.0);
    CHECK(row.radius > 0.0);
  }
  // Fewer than five replications must be flagged.
  REQUIRE(rep.warnings.size() == 1);
  CHECK(rep.warnings[0].find("replications") != std::string::npos);

  std::string js = guarantee_report_to_json(rep);
  CHECK(js.find("coverage_frequency") != std::string::npos);
  CHECK(js.find("rate_slope") != std::string::npos);
}
