#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddro/ambiguity.hpp"
#include "ddro/benders.hpp"
#include "ddro/io_util.hpp"
#include "ddro/model.hpp"
#include "ddro/regression.hpp"

namespace ddro {

// Synthetic demand generator for the shipment-planning-and-pricing
// experiments. Demand at site j under covariates x and price z1 is
//   quadratic law:  y_j = sum_l A(j,l) x_l^2 - B(j) z1 + alpha(j) + eps_j
//   linear law:     y_j = sum_l A(j,l) x_l   - B(j) z1 + alpha(j) + eps_j
// with eps ~ N(0, noise_scale^2) per coordinate. The linear law exists so
// that an ordinary least squares fit can be correctly specified when a
// study needs that.
enum class DemandLaw { Quadratic, Linear };

std::string to_string(DemandLaw law);
DemandLaw demand_law_from_string(const std::string& name);

std::string to_string(RadiusMode mode);
RadiusMode radius_mode_from_string(const std::string& name);

struct GroundTruth {
  Mat A;      // sites x covariates, entries in [3, 5] at generation
  Vec B;      // price sensitivity per site, in [3, 5]
  Vec alpha;  // base demand per site, in [1000, 2000]
  DemandLaw law = DemandLaw::Quadratic;
  double noise_scale = 1.0;

  int sites() const { return static_cast<int>(B.size()); }
  int covariates() const { return static_cast<int>(A.cols()); }

  Vec mean_demand(const Vec& x, double z1) const;
  Vec demand(const Vec& x, double z1, const Vec& eps) const;
};

std::string ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const std::string& text);

// Everything a sweep needs, collected in one place so that a run is fully
// described by (config, master seed). Counts must be >= 1 and p2 > p1; the
// second stage prices expedited production above advance production.
struct ExperimentConfig {
  std::uint64_t seed = 1;

  int warehouses = 2;
  int sites = 3;
  int covariates = 3;
  double grid_extent = 100.0;
  double p1 = 5.0;
  double p2 = 100.0;
  double rho = 1.0;
  double theta = 0.9;
  DemandLaw law = DemandLaw::Quadratic;

  std::vector<int> sample_sizes = {100, 200, 300, 400};
  int replications = 5;
  int oos_scenarios = 1000;

  RadiusSpec radius;  // defaulted to cross-validation over {1,10,50,100}
  std::string regressor = "ols";  // ols | kernel | nn
  double kernel_bandwidth = 8.0;
  NnTrainConfig nn;
  std::string variant = "er_d3ro";  // er_d3ro | er_dd_saa | er_dro

  double tol_gap = 1e-6;
  int max_iterations = 500;
  int threads = 1;

  // Leave-one-out radius selection re-solves the whole pipeline per fold
  // and candidate, so full n-fold evaluation is far too slow inside a
  // sweep. A seeded subset of folds ranks the candidates instead; the gap
  // tolerance for fold solves is looser because only the ranking matters.
  int loocv_fold_cap = 6;
  double loocv_fold_gap = 1e-3;

  // Guarantee validation: certificate coverage at level alpha with the
  // radius inflated over a Monte-Carlo-calibrated baseline, and the
  // consistency study against a large-sample zero-radius reference.
  double alpha = 0.2;
  double radius_inflation = 10.0;
  int calibration_trials = 25;
  int coverage_n = 100;
  int coverage_mc = 100000;
  std::vector<int> consistency_sizes = {50, 100, 200, 400};
  int consistency_reference_n = 10000;

  // Cells of the comparison sweep.
  std::vector<std::string> compare_variants = {"er_d3ro", "er_dd_saa",
                                               "er_dro"};
  std::vector<std::string> compare_regressors = {"ols", "kernel"};

  ExperimentConfig();
  void validate() const;
};

std::string config_to_json(const ExperimentConfig& cfg);
// Missing keys keep their defaults, so a config file only states what it
// overrides.
ExperimentConfig config_from_json(const std::string& text);

// The pricing instance: warehouses ship to customer sites, transport cost
// is the Euclidean distance between their sampled grid locations. First
// stage picks the price z1 and advance production z2_i per warehouse (cost
// p1); the second stage serves realized demand Y with shipments s_ij,
// expedited production t_i (cost p2), and collects revenue z1 * sum_j Y_j,
// lifted into the recourse through an epigraph variable so the objective
// stays linear in the recourse variables:
//   H(z, Y) = min  sum_ij c_ij s_ij + p2 sum_i t_i + u
//             s.t. sum_i s_ij >= Y_j            (demand)
//                  -sum_j s_ij + t_i >= -z2_i   (capacity)
//                  u >= -z1 sum_j Y_j           (revenue epigraph)
//                  s, t >= 0.
// `base` carries exactly that recourse; `solve` is its mean-CVaR
// augmentation when rho > 0 (otherwise the same instance).
struct GeneratedInstance {
  TwoStageInstance base;
  TwoStageInstance solve;
  GroundTruth truth;
  Mat warehouse_xy;  // warehouses x 2
  Mat site_xy;       // sites x 2
};

GeneratedInstance generate_instance(const ExperimentConfig& cfg);

// n observations, deterministic given the seed: covariates x_l ~ Gamma(2,3),
// price z1 = 500 * Beta(2,5), noise standard normal, demand from the ground
// truth law. Row draws are sequential, so the first rows of a larger sample
// from the same seed reproduce a smaller one exactly.
Dataset sample_dataset(const GroundTruth& gt, int n, std::uint64_t seed);

// A fresh covariate from the same law the training data uses.
Vec sample_covariate(int covariates, std::uint64_t seed);

// One model variant end to end: fit, residuals, radius choice, solve.
//   er_d3ro   regression on (x, z), radius per config
//   er_dd_saa same regression, radius pinned to zero
//   er_dro    regression on x alone, radius per config; the embedding is
//             constant in the price, so the model never sees how demand
//             reacts to z1
struct VariantRun {
  std::string variant;
  std::string regressor_kind;
  Regressor model;
  double radius = 0.0;
  LoocvSelection loocv;  // empty table unless cross-validation ran
  BendersResult result;
  Vec z_base;  // first stage without the CVaR threshold coordinate
  double z1 = 0.0;
  double solve_seconds = 0.0;
};

VariantRun run_variant(const std::string& variant, const Dataset& data,
                       const GeneratedInstance& gen, const Vec& x_new,
                       const ExperimentConfig& cfg);

// Realized cost of a first stage decision under the ground truth at a fixed
// covariate: m demand scenarios at (x_new, z1), negative coordinates
// clamped to zero (and counted), one recourse solve per scenario.
// composite = first stage cost + mean + rho * CVaR_theta.
struct OosStats {
  int scenarios = 0;
  double first_stage = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
  double cvar = 0.0;
  double composite = 0.0;
  int clamped_scenarios = 0;
  std::vector<double> costs;  // per-scenario recourse value, draw order
};

OosStats evaluate_oos(const Vec& z_base, const GeneratedInstance& gen,
                      const Vec& x_new, int m, std::uint64_t seed, double rho,
                      double theta);

// Statistical guarantee checks against the known synthetic truth.
struct CoverageRow {
  int replication = 0;
  double v_hat = 0.0;  // in-sample robust objective
  double g_hat = 0.0;  // true composite cost of the decision, by Monte Carlo
  double z1 = 0.0;
  int clamped = 0;
  bool covered = false;
};

struct ConsistencyRow {
  int n = 0;
  double radius = 0.0;  // mean theoretical radius at this n
  double median_gap = 0.0;
  std::vector<double> gaps;  // one per replication
};

struct GuaranteeReport {
  double alpha = 0.0;
  double radius_calibrated = 0.0;
  double radius_used = 0.0;
  std::vector<CoverageRow> coverage;
  double coverage_frequency = 0.0;
  double nominal = 0.0;  // 1 - alpha
  std::vector<ConsistencyRow> consistency;
  double reference_value_mean = 0.0;
  bool consistency_monotone = false;
  double rate_slope = 0.0;  // log median gap regressed on log radius
  std::vector<std::string> warnings;
};

GuaranteeReport validate_guarantees(const ExperimentConfig& cfg);
std::string guarantee_report_to_json(const GuaranteeReport& report);

// The comparison sweep: every (variant, regressor, n, replication) cell on
// paired datasets, reduced to a summary table shaped like the usual
// cost-vs-sample-size comparison plots.
struct CompareCell {
  std::string variant;
  std::string regressor;
  int n = 0;
  int replication = 0;
  std::uint64_t dataset_hash = 0;
  double radius = 0.0;
  std::string status;
  int iterations = 0;
  double gap = 0.0;
  double objective = 0.0;  // in-sample
  double z1 = 0.0;
  OosStats oos;
  double solve_seconds = 0.0;
  std::string error;  // nonempty when the cell threw
};

struct CompareReport {
  std::vector<CompareCell> cells;  // ordered (variant, regressor, n, rep)
  CsvTable summary;
  CsvTable detail;
};

CompareReport compare_report(const ExperimentConfig& cfg);

// Content hash of a dataset, for asserting that paired cells really did
// consume identical data.
std::uint64_t dataset_hash(const Dataset& data);

// Exact 1-Wasserstein distance between two one-dimensional empirical
// distributions with uniform weights (quantile coupling).
double wasserstein_1d_sorted(std::vector<double> a, std::vector<double> b);

}  // namespace ddro
