#include "ddro/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ddro/lp.hpp"
#include "ddro/rng.hpp"
#include "json_util.hpp"

namespace ddro {

using nlohmann::json;

std::string to_string(DemandLaw law) {
  return law == DemandLaw::Quadratic ? "quadratic" : "linear";
}

DemandLaw demand_law_from_string(const std::string& name) {
  if (name == "quadratic") return DemandLaw::Quadratic;
  if (name == "linear") return DemandLaw::Linear;
  throw std::invalid_argument("unknown demand law: " + name);
}

std::string to_string(RadiusMode mode) {
  switch (mode) {
    case RadiusMode::Fixed: return "fixed";
    case RadiusMode::Theoretical: return "theory";
    case RadiusMode::CrossValidated: return "loocv";
  }
  throw std::logic_error("unreachable radius mode");
}

RadiusMode radius_mode_from_string(const std::string& name) {
  if (name == "fixed") return RadiusMode::Fixed;
  if (name == "theory") return RadiusMode::Theoretical;
  if (name == "loocv") return RadiusMode::CrossValidated;
  throw std::invalid_argument("unknown radius mode: " + name);
}

Vec GroundTruth::mean_demand(const Vec& x, double z1) const {
  if (x.size() != A.cols())
    throw std::invalid_argument("ground truth: covariate dimension mismatch");
  Vec features =
      law == DemandLaw::Quadratic ? Vec(x.array().square()) : x;
  return A * features - B * z1 + alpha;
}

Vec GroundTruth::demand(const Vec& x, double z1, const Vec& eps) const {
  if (eps.size() != B.size())
    throw std::invalid_argument("ground truth: noise dimension mismatch");
  return mean_demand(x, z1) + noise_scale * eps;
}

std::string ground_truth_to_json(const GroundTruth& gt) {
  json j;
  j["A"] = detail::mat_to_json(gt.A);
  j["B"] = detail::vec_to_json(gt.B);
  j["alpha"] = detail::vec_to_json(gt.alpha);
  j["law"] = to_string(gt.law);
  j["noise_scale"] = gt.noise_scale;
  return j.dump(2);
}

GroundTruth ground_truth_from_json(const std::string& text) {
  json j = json::parse(text);
  GroundTruth gt;
  gt.A = detail::mat_from_json(j.at("A"));
  gt.B = detail::vec_from_json(j.at("B"));
  gt.alpha = detail::vec_from_json(j.at("alpha"));
  gt.law = demand_law_from_string(j.at("law").get<std::string>());
  gt.noise_scale = j.value("noise_scale", 1.0);
  if (gt.B.size() != gt.A.rows() || gt.alpha.size() != gt.A.rows())
    throw std::runtime_error("ground truth json: inconsistent dimensions");
  return gt;
}

ExperimentConfig::ExperimentConfig() {
  radius.mode = RadiusMode::CrossValidated;
  radius.candidates = {1.0, 10.0, 50.0, 100.0};
}

void ExperimentConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1)
      throw std::invalid_argument(std::string("config: ") + what +
                                  " must be >= 1");
  };
  positive(warehouses, "warehouses");
  positive(sites, "sites");
  positive(covariates, "covariates");
  positive(replications, "replications");
  positive(oos_scenarios, "oos_scenarios");
  positive(max_iterations, "max_iterations");
  positive(threads, "threads");
  positive(calibration_trials, "calibration_trials");
  positive(coverage_n, "coverage_n");
  positive(coverage_mc, "coverage_mc");
  positive(consistency_reference_n, "consistency_reference_n");
  if (sample_sizes.empty())
    throw std::invalid_argument("config: sample_sizes must be nonempty");
  for (int n : sample_sizes) positive(n, "sample size");
  for (int n : consistency_sizes) positive(n, "consistency size");
  if (!(p2 > p1))
    throw std::invalid_argument("config: p2 must exceed p1");
  if (grid_extent <= 0)
    throw std::invalid_argument("config: grid_extent must be positive");
  if (rho < 0) throw std::invalid_argument("config: rho must be >= 0");
  if (theta < 0 || theta >= 1)
    throw std::invalid_argument("config: theta must lie in [0, 1)");
  if (tol_gap <= 0 || loocv_fold_gap <= 0)
    throw std::invalid_argument("config: gap tolerances must be positive");
  if (alpha <= 0 || alpha >= 1)
    throw std::invalid_argument("config: alpha must lie in (0, 1)");
  if (radius_inflation <= 0)
    throw std::invalid_argument("config: radius_inflation must be positive");
  if (regressor != "ols" && regressor != "kernel" && regressor != "nn")
    throw std::invalid_argument("config: unknown regressor " + regressor);
  if (variant != "er_d3ro" && variant != "er_dd_saa" && variant != "er_dro")
    throw std::invalid_argument("config: unknown variant " + variant);
  for (const auto& v : compare_variants)
    if (v != "er_d3ro" && v != "er_dd_saa" && v != "er_dro")
      throw std::invalid_argument("config: unknown compare variant " + v);
  for (const auto& r : compare_regressors)
    if (r != "ols" && r != "kernel" && r != "nn")
      throw std::invalid_argument("config: unknown compare regressor " + r);
  radius.validate();
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["warehouses"] = cfg.warehouses;
  j["sites"] = cfg.sites;
  j["covariates"] = cfg.covariates;
  j["grid_extent"] = cfg.grid_extent;
  j["p1"] = cfg.p1;
  j["p2"] = cfg.p2;
  j["rho"] = cfg.rho;
  j["theta"] = cfg.theta;
  j["law"] = to_string(cfg.law);
  j["sample_sizes"] = cfg.sample_sizes;
  j["replications"] = cfg.replications;
  j["oos_scenarios"] = cfg.oos_scenarios;
  json r;
  r["mode"] = to_string(cfg.radius.mode);
  r["fixed_value"] = cfg.radius.fixed_value;
  r["C1"] = cfg.radius.C1;
  r["C2"] = cfg.radius.C2;
  r["C3"] = cfg.radius.C3;
  r["c1"] = cfg.radius.c1;
  r["c2"] = cfg.radius.c2;
  r["c3"] = cfg.radius.c3;
  r["alpha"] = cfg.radius.alpha;
  r["candidates"] = cfg.radius.candidates;
  j["radius"] = r;
  j["regressor"] = cfg.regressor;
  j["kernel_bandwidth"] = cfg.kernel_bandwidth;
  json nn;
  nn["hidden_width"] = cfg.nn.hidden_width;
  nn["epochs"] = cfg.nn.epochs;
  nn["learning_rate"] = cfg.nn.learning_rate;
  nn["seed"] = cfg.nn.seed;
  j["nn"] = nn;
  j["variant"] = cfg.variant;
  j["tol_gap"] = cfg.tol_gap;
  j["max_iterations"] = cfg.max_iterations;
  j["threads"] = cfg.threads;
  j["loocv_fold_cap"] = cfg.loocv_fold_cap;
  j["loocv_fold_gap"] = cfg.loocv_fold_gap;
  j["alpha"] = cfg.alpha;
  j["radius_inflation"] = cfg.radius_inflation;
  j["calibration_trials"] = cfg.calibration_trials;
  j["coverage_n"] = cfg.coverage_n;
  j["coverage_mc"] = cfg.coverage_mc;
  j["consistency_sizes"] = cfg.consistency_sizes;
  j["consistency_reference_n"] = cfg.consistency_reference_n;
  j["compare_variants"] = cfg.compare_variants;
  j["compare_regressors"] = cfg.compare_regressors;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.warehouses = j.value("warehouses", cfg.warehouses);
  cfg.sites = j.value("sites", cfg.sites);
  cfg.covariates = j.value("covariates", cfg.covariates);
  cfg.grid_extent = j.value("grid_extent", cfg.grid_extent);
  cfg.p1 = j.value("p1", cfg.p1);
  cfg.p2 = j.value("p2", cfg.p2);
  cfg.rho = j.value("rho", cfg.rho);
  cfg.theta = j.value("theta", cfg.theta);
  if (j.contains("law"))
    cfg.law = demand_law_from_string(j.at("law").get<std::string>());
  cfg.sample_sizes =
      j.value("sample_sizes", cfg.sample_sizes);
  cfg.replications = j.value("replications", cfg.replications);
  cfg.oos_scenarios = j.value("oos_scenarios", cfg.oos_scenarios);
  if (j.contains("radius")) {
    const json& r = j.at("radius");
    if (r.contains("mode"))
      cfg.radius.mode =
          radius_mode_from_string(r.at("mode").get<std::string>());
    cfg.radius.fixed_value = r.value("fixed_value", cfg.radius.fixed_value);
    cfg.radius.C1 = r.value("C1", cfg.radius.C1);
    cfg.radius.C2 = r.value("C2", cfg.radius.C2);
    cfg.radius.C3 = r.value("C3", cfg.radius.C3);
    cfg.radius.c1 = r.value("c1", cfg.radius.c1);
    cfg.radius.c2 = r.value("c2", cfg.radius.c2);
    cfg.radius.c3 = r.value("c3", cfg.radius.c3);
    cfg.radius.alpha = r.value("alpha", cfg.radius.alpha);
    cfg.radius.candidates = r.value("candidates", cfg.radius.candidates);
  }
  cfg.regressor = j.value("regressor", cfg.regressor);
  cfg.kernel_bandwidth = j.value("kernel_bandwidth", cfg.kernel_bandwidth);
  if (j.contains("nn")) {
    const json& nn = j.at("nn");
    cfg.nn.hidden_width = nn.value("hidden_width", cfg.nn.hidden_width);
    cfg.nn.epochs = nn.value("epochs", cfg.nn.epochs);
    cfg.nn.learning_rate = nn.value("learning_rate", cfg.nn.learning_rate);
    cfg.nn.seed = nn.value("seed", cfg.nn.seed);
  }
  cfg.variant = j.value("variant", cfg.variant);
  cfg.tol_gap = j.value("tol_gap", cfg.tol_gap);
  cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.loocv_fold_cap = j.value("loocv_fold_cap", cfg.loocv_fold_cap);
  cfg.loocv_fold_gap = j.value("loocv_fold_gap", cfg.loocv_fold_gap);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.radius_inflation = j.value("radius_inflation", cfg.radius_inflation);
  cfg.calibration_trials =
      j.value("calibration_trials", cfg.calibration_trials);
  cfg.coverage_n = j.value("coverage_n", cfg.coverage_n);
  cfg.coverage_mc = j.value("coverage_mc", cfg.coverage_mc);
  cfg.consistency_sizes =
      j.value("consistency_sizes", cfg.consistency_sizes);
  cfg.consistency_reference_n =
      j.value("consistency_reference_n", cfg.consistency_reference_n);
  cfg.compare_variants = j.value("compare_variants", cfg.compare_variants);
  cfg.compare_regressors =
      j.value("compare_regressors", cfg.compare_regressors);
  cfg.validate();
  return cfg;
}

namespace {

// Upper quantile of Gamma(shape 2, given scale) by bisection on the
// survival function S(t) = exp(-t/scale) * (1 + t/scale).
double gamma2_upper_quantile(double scale, double tail) {
  auto survival = [&](double t) {
    double u = t / scale;
    return std::exp(-u) * (1.0 + u);
  };
  double lo = 0.0, hi = scale;
  while (survival(hi) > tail) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (survival(mid) > tail ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// A demand level the ground truth essentially never exceeds: every
// covariate at its 0.999 quantile, price at zero, noise five sigma out.
double total_demand_ceiling(const GroundTruth& gt) {
  double x_hi = gamma2_upper_quantile(3.0, 1e-3);
  double feat_hi = gt.law == DemandLaw::Quadratic ? x_hi * x_hi : x_hi;
  double total = 0.0;
  for (int j = 0; j < gt.sites(); ++j)
    total += gt.A.row(j).sum() * feat_hi + gt.alpha[j] +
             5.0 * gt.noise_scale;
  return total;
}

int shipment_col(int i, int j, int sites) { return i * sites + j; }

}  // namespace

GeneratedInstance generate_instance(const ExperimentConfig& cfg) {
  cfg.validate();
  const int I = cfg.warehouses;
  const int J = cfg.sites;
  const int L = cfg.covariates;

  Rng rng = substream(cfg.seed, "instance");
  GeneratedInstance out;

  out.warehouse_xy = Mat(I, 2);
  for (int i = 0; i < I; ++i)
    for (int c = 0; c < 2; ++c)
      out.warehouse_xy(i, c) = rng.uniform(0.0, cfg.grid_extent);
  out.site_xy = Mat(J, 2);
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < 2; ++c)
      out.site_xy(j, c) = rng.uniform(0.0, cfg.grid_extent);

  GroundTruth gt;
  gt.law = cfg.law;
  gt.A = Mat(J, L);
  for (int j = 0; j < J; ++j)
    for (int l = 0; l < L; ++l) gt.A(j, l) = rng.uniform(3.0, 5.0);
  gt.B = Vec(J);
  for (int j = 0; j < J; ++j) gt.B[j] = rng.uniform(3.0, 5.0);
  gt.alpha = Vec(J);
  for (int j = 0; j < J; ++j) gt.alpha[j] = rng.uniform(1000.0, 2000.0);
  out.truth = gt;

  const double z2_max = 10.0 * total_demand_ceiling(gt);

  // Recourse variables: shipments s_ij (warehouse-major), expedited
  // production t_i, revenue epigraph u. Rows: demand, capacity, epigraph,
  // then sign rows for s and t; u needs none because its cost is positive
  // and only the epigraph row touches it.
  const int nS = I * J;
  const int dw = nS + I + 1;
  const int M = J + I + 1 + nS + I;

  TwoStageInstance base;
  base.c_z = Vec(1 + I);
  base.c_z[0] = 0.0;
  for (int i = 0; i < I; ++i) base.c_z[1 + i] = cfg.p1;
  base.z_lower = Vec::Zero(1 + I);
  base.z_upper = Vec(1 + I);
  base.z_upper[0] = 500.0;
  for (int i = 0; i < I; ++i) base.z_upper[1 + i] = z2_max;

  base.q = Vec(dw);
  for (int i = 0; i < I; ++i)
    for (int j = 0; j < J; ++j)
      base.q[shipment_col(i, j, J)] =
          (out.warehouse_xy.row(i) - out.site_xy.row(j)).norm();
  for (int i = 0; i < I; ++i) base.q[nS + i] = cfg.p2;
  base.q[nS + I] = 1.0;

  base.W = Mat::Zero(M, dw);
  base.T.constant = Mat::Zero(M, J);
  base.T.coeffs.assign(1 + I, Mat::Zero(M, J));
  base.h.constant = Mat::Zero(M, 1);
  base.h.coeffs.assign(1 + I, Mat::Zero(M, 1));

  for (int j = 0; j < J; ++j) {
    for (int i = 0; i < I; ++i) base.W(j, shipment_col(i, j, J)) = 1.0;
    base.T.constant(j, j) = 1.0;
  }
  for (int i = 0; i < I; ++i) {
    int row = J + i;
    for (int j = 0; j < J; ++j) base.W(row, shipment_col(i, j, J)) = -1.0;
    base.W(row, nS + i) = 1.0;
    base.h.coeffs[1 + i](row, 0) = -1.0;
  }
  {
    int row = J + I;
    base.W(row, nS + I) = 1.0;
    for (int j = 0; j < J; ++j) base.T.coeffs[0](row, j) = -1.0;
  }
  int sign_row = J + I + 1;
  for (int col = 0; col < nS + I; ++col, ++sign_row)
    base.W(sign_row, col) = 1.0;

  base.coupling_index = 0;
  base.risk.rho = cfg.rho;
  base.risk.theta = cfg.theta;
  base.validate();

  AssumptionReport assumptions = spot_check_assumptions(
      base, substream_seed(cfg.seed, "spot-check"), 24,
      total_demand_ceiling(gt) / J);
  if (!assumptions.ok())
    throw std::runtime_error("generated instance fails recourse checks: " +
                             assumptions.detail);

  out.base = base;
  if (cfg.rho > 0.0) {
    // The CVaR threshold needs a box covering any plausible cost quantile;
    // span the sampled recourse-cost range and inflate it well past the
    // quantiles that matter.
    Rng er = substream(cfg.seed, "eta-box");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    Vec z(1 + I), x(L), eps(J);
    for (int k = 0; k < 48; ++k) {
      z[0] = er.uniform(0.0, 500.0);
      for (int i = 0; i < I; ++i) z[1 + i] = er.uniform(0.0, z2_max);
      for (int l = 0; l < L; ++l) x[l] = er.gamma_int(2, 3.0);
      for (int j = 0; j < J; ++j) eps[j] = er.normal();
      RecourseResult rr = solve_recourse(base, z, gt.demand(x, z[0], eps));
      if (rr.status != LpStatus::Optimal)
        throw std::runtime_error(
            "recourse solve failed while sizing the CVaR threshold box");
      lo = std::min(lo, rr.value);
      hi = std::max(hi, rr.value);
    }
    double span = std::max(hi - lo, 1.0);
    out.solve = augment_cvar(base, lo - 10.0 * span, hi + 10.0 * span);
  } else {
    out.solve = base;
  }
  return out;
}

Dataset sample_dataset(const GroundTruth& gt, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  const int L = gt.covariates();
  const int J = gt.sites();
  Rng rng(seed);
  Dataset data;
  data.x = Mat(n, L);
  data.z = Mat(n, 1);
  data.y = Mat(n, J);
  Vec x(L), eps(J);
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < L; ++l) x[l] = rng.gamma_int(2, 3.0);
    double z1 = 500.0 * rng.beta_int(2, 5);
    for (int j = 0; j < J; ++j) eps[j] = rng.normal();
    data.x.row(k) = x;
    data.z(k, 0) = z1;
    data.y.row(k) = gt.demand(x, z1, eps);
  }
  return data;
}

Vec sample_covariate(int covariates, std::uint64_t seed) {
  if (covariates < 1)
    throw std::invalid_argument("sample_covariate: dimension must be >= 1");
  Rng rng(seed);
  Vec x(covariates);
  for (int l = 0; l < covariates; ++l) x[l] = rng.gamma_int(2, 3.0);
  return x;
}

namespace {

Regressor fit_for(const std::string& kind, const Dataset& data, bool with_z,
                  const ExperimentConfig& cfg) {
  if (kind == "ols") return fit_ols(data, with_z);
  if (kind == "kernel") return fit_kernel(data, cfg.kernel_bandwidth, with_z);
  if (kind == "nn") {
    NnTrainConfig nc = cfg.nn;
    nc.include_decision = with_z;
    if (nc.seed == 0) nc.seed = substream_seed(cfg.seed, "nn-init");
    return fit_relu_nn(data, nc);
  }
  throw std::invalid_argument("unknown regressor kind: " + kind);
}

LoocvSelection loocv_radius(const std::string& variant, const Dataset& data,
                            const GeneratedInstance& gen,
                            const ExperimentConfig& cfg) {
  const bool with_z = variant != "er_dro";
  LoocvHooks hooks;
  hooks.solve_at = [&, with_z](const Dataset& train, const Vec& x_held,
                               double r) {
    Regressor model = fit_for(cfg.regressor, train, with_z, cfg);
    ResidualSet rs = residuals(model, train);
    BendersOptions opts;
    opts.eps_gap = cfg.loocv_fold_gap;
    opts.max_iterations = cfg.max_iterations;
    opts.spot_check = false;  // the generated instance was checked once
    BendersResult res =
        run_benders(gen.solve, model, x_held, rs.residuals, r, opts);
    if (res.status == "unbounded")
      throw std::runtime_error("fold solve unbounded");
    return res.z;
  };
  hooks.realized_cost = [&](const Vec& z, const Vec& y_held) {
    RecourseResult rr = solve_recourse(gen.solve, z, y_held);
    if (rr.status != LpStatus::Optimal)
      throw std::runtime_error("fold recourse solve: " +
                               to_string(rr.status));
    return gen.solve.c_z.dot(z) + rr.value;
  };
  hooks.fold_cap = cfg.loocv_fold_cap;
  hooks.fold_seed = substream_seed(cfg.seed, "loocv-folds");
  return radius_by_loocv(data, cfg.radius.candidates, hooks);
}

}  // namespace

VariantRun run_variant(const std::string& variant, const Dataset& data,
                       const GeneratedInstance& gen, const Vec& x_new,
                       const ExperimentConfig& cfg) {
  if (variant != "er_d3ro" && variant != "er_dd_saa" && variant != "er_dro")
    throw std::invalid_argument("unknown variant: " + variant);
  const bool with_z = variant != "er_dro";

  VariantRun run;
  run.variant = variant;
  run.regressor_kind = cfg.regressor;
  run.model = fit_for(cfg.regressor, data, with_z, cfg);
  ResidualSet rs = residuals(run.model, data);

  double xi = 0.0;
  if (variant != "er_dd_saa") {
    switch (cfg.radius.mode) {
      case RadiusMode::Fixed:
        xi = cfg.radius.fixed_value;
        break;
      case RadiusMode::Theoretical:
        xi = theoretical_radius(cfg.radius, data.n(), x_new);
        break;
      case RadiusMode::CrossValidated:
        run.loocv = loocv_radius(variant, data, gen, cfg);
        xi = run.loocv.chosen;
        break;
    }
  }
  run.radius = xi;

  BendersOptions opts;
  opts.eps_gap = cfg.tol_gap;
  opts.max_iterations = cfg.max_iterations;
  auto t0 = std::chrono::steady_clock::now();
  run.result = run_benders(gen.solve, run.model, x_new, rs.residuals, xi, opts);
  run.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const TwoStageInstance& si = gen.solve;
  if (si.cvar_augmented) {
    run.z_base = Vec(si.d_z() - 1);
    int at = 0;
    for (int i = 0; i < si.d_z(); ++i)
      if (i != si.eta_index) run.z_base[at++] = run.result.z[i];
  } else {
    run.z_base = run.result.z;
  }
  run.z1 = run.result.z[si.coupling_index];
  return run;
}

OosStats evaluate_oos(const Vec& z_base, const GeneratedInstance& gen,
                      const Vec& x_new, int m, std::uint64_t seed, double rho,
                      double theta) {
  const TwoStageInstance& inst = gen.base;
  if (z_base.size() != inst.d_z())
    throw std::invalid_argument("evaluate_oos: z dimension mismatch");
  if (m < 1) throw std::invalid_argument("evaluate_oos: m must be >= 1");

  Rng rng(seed);
  Mat Tz = evaluate_affine(inst.T, z_base);
  Vec hz = evaluate_affine(inst.h, z_base).col(0);
  SpSolver sp(inst);

  OosStats st;
  st.scenarios = m;
  st.costs.reserve(m);
  const double z1 = z_base[inst.coupling_index];
  const int J = gen.truth.sites();
  Vec eps(J);
  for (int s = 0; s < m; ++s) {
    for (int j = 0; j < J; ++j) eps[j] = rng.normal();
    Vec y = gen.truth.demand(x_new, z1, eps);
    bool clamped = false;
    for (int j = 0; j < J; ++j)
      if (y[j] < 0.0) {
        y[j] = 0.0;
        clamped = true;
      }
    if (clamped) ++st.clamped_scenarios;
    SpResult r = sp.solve(Tz * y + hz);
    if (r.status != LpStatus::Optimal) {
      AssumptionReport rep = spot_check_assumptions(
          inst, seed, 24, gen.truth.alpha.maxCoeff());
      throw std::runtime_error("recourse evaluation failed (" +
                               to_string(r.status) +
                               "); assumption check: " + rep.detail);
    }
    st.costs.push_back(r.value);
  }

  double mean = std::accumulate(st.costs.begin(), st.costs.end(), 0.0) /
                static_cast<double>(m);
  st.mean = mean;
  if (m > 1) {
    double ss = 0.0;
    for (double c : st.costs) ss += (c - mean) * (c - mean);
    st.std_error = std::sqrt(ss / (m - 1.0)) / std::sqrt(
        static_cast<double>(m));
  }
  st.cvar = empirical_cvar(st.costs, theta);
  st.first_stage = inst.c_z.dot(z_base);
  st.composite = st.first_stage + st.mean + rho * st.cvar;
  return st;
}

double wasserstein_1d_sorted(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("wasserstein_1d: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t na = a.size(), nb = b.size();
  // Walk the two quantile functions jointly; breakpoint comparisons are
  // done on cross-multiplied integers so ties are exact.
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < na && j < nb) {
    std::uint64_t lhs = static_cast<std::uint64_t>(i + 1) * nb;
    std::uint64_t rhs = static_cast<std::uint64_t>(j + 1) * na;
    double next = lhs <= rhs ? static_cast<double>(i + 1) / na
                             : static_cast<double>(j + 1) / nb;
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return total;
}

std::uint64_t dataset_hash(const Dataset& data) {
  std::ostringstream out;
  out << data.n() << 'x' << data.d_x() << 'x' << data.d_z() << 'x'
      << data.d_y() << '|';
  auto emit = [&out](const Mat& m) {
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) out << fmt_double(m(r, c)) << ',';
      out << ';';
    }
  };
  emit(data.x);
  emit(data.z);
  emit(data.y);
  return fnv1a64(out.str());
}

namespace {

Dataset head(const Dataset& data, int n) {
  Dataset out;
  out.x = data.x.topRows(n);
  out.z = data.z.topRows(n);
  out.y = data.y.topRows(n);
  return out;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

double upper_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  double pos = p * (static_cast<double>(v.size()) - 1.0);
  std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * v[lo] + frac * v[hi];
}

}  // namespace

GuaranteeReport validate_guarantees(const ExperimentConfig& cfg) {
  cfg.validate();
  GeneratedInstance gen = generate_instance(cfg);
  const int L = cfg.covariates;
  const int J = cfg.sites;

  GuaranteeReport rep;
  rep.alpha = cfg.alpha;
  rep.nominal = 1.0 - cfg.alpha;
  if (cfg.replications < 5)
    rep.warnings.push_back(
        "fewer than 5 replications; coverage and medians are noisy");

  // Calibrate a baseline radius: the transport distance between the fitted
  // residual distribution and the true conditional law, measured per output
  // coordinate by quantile coupling and summed (the l1 ground metric's
  // marginal decomposition). The inflated radius then has to cover the
  // joint distance with a wide margin.
  {
    std::vector<double> dists;
    const int m_truth = 2000;
    const double z_probe = 0.5 * (gen.base.z_lower[0] + gen.base.z_upper[0]);
    for (int t = 0; t < cfg.calibration_trials; ++t) {
      std::string tag = std::to_string(t);
      Dataset d = sample_dataset(gen.truth, cfg.coverage_n,
                                 substream_seed(cfg.seed, "calib:data:" + tag));
      Vec x = sample_covariate(L, substream_seed(cfg.seed, "calib:x:" + tag));
      Regressor model = fit_for(cfg.regressor, d, true, cfg);
      ResidualSet rs = residuals(model, d);
      Vec pred = predict(model, x, z_probe);
      Rng tr = substream(cfg.seed, "calib:truth:" + tag);
      Mat truth_sample(m_truth, J);
      Vec eps(J);
      for (int k = 0; k < m_truth; ++k) {
        for (int j = 0; j < J; ++j) eps[j] = tr.normal();
        truth_sample.row(k) = gen.truth.demand(x, z_probe, eps);
      }
      double dist = 0.0;
      for (int j = 0; j < J; ++j) {
        std::vector<double> fitted(d.n()), truth(m_truth);
        for (int k = 0; k < d.n(); ++k)
          fitted[k] = pred[j] + rs.residuals(k, j);
        for (int k = 0; k < m_truth; ++k) truth[k] = truth_sample(k, j);
        dist += wasserstein_1d_sorted(fitted, truth);
      }
      dists.push_back(dist);
    }
    rep.radius_calibrated = upper_quantile(dists, 1.0 - cfg.alpha);
    rep.radius_used = cfg.radius_inflation * rep.radius_calibrated;
  }

  // Coverage: does the in-sample robust value upper-bound the true cost of
  // the decision it certifies?
  {
    ExperimentConfig solve_cfg = cfg;
    solve_cfg.radius.mode = RadiusMode::Fixed;
    solve_cfg.radius.fixed_value = rep.radius_used;
    int covered = 0;
    for (int r = 0; r < cfg.replications; ++r) {
      std::string tag = std::to_string(r);
      Dataset d = sample_dataset(gen.truth, cfg.coverage_n,
                                 substream_seed(cfg.seed, "data:rep:" + tag));
      Vec x = sample_covariate(L, substream_seed(cfg.seed, "xnew:rep:" + tag));
      VariantRun vr = run_variant("er_d3ro", d, gen, x, solve_cfg);
      OosStats oos = evaluate_oos(vr.z_base, gen, x, cfg.coverage_mc,
                                  substream_seed(cfg.seed, "oos:rep:" + tag),
                                  cfg.rho, cfg.theta);
      CoverageRow row;
      row.replication = r;
      row.v_hat = vr.result.objective;
      row.g_hat = oos.composite;
      row.z1 = vr.z1;
      row.clamped = oos.clamped_scenarios;
      row.covered = row.g_hat <= row.v_hat + 1e-9 * (1.0 + std::abs(row.v_hat));
      covered += row.covered ? 1 : 0;
      rep.coverage.push_back(row);
    }
    rep.coverage_frequency =
        static_cast<double>(covered) / cfg.replications;
  }

  // Consistency: the robust value with a shrinking theoretical radius
  // approaches the zero-radius large-sample reference. The reference and
  // every subsample share one draw stream per replication, so smaller n is
  // literally a prefix of larger n.
  {
    ExperimentConfig cons_cfg = cfg;
    cons_cfg.radius.mode = RadiusMode::Theoretical;
    std::vector<std::vector<double>> gaps(cfg.consistency_sizes.size());
    std::vector<double> radii(cfg.consistency_sizes.size(), 0.0);
    double ref_sum = 0.0;
    for (int r = 0; r < cfg.replications; ++r) {
      std::string tag = std::to_string(r);
      Dataset full =
          sample_dataset(gen.truth, cfg.consistency_reference_n,
                         substream_seed(cfg.seed, "data:rep:" + tag));
      Vec x = sample_covariate(L, substream_seed(cfg.seed, "xnew:rep:" + tag));
      VariantRun ref = run_variant("er_dd_saa", full, gen, x, cons_cfg);
      ref_sum += ref.result.objective;
      for (std::size_t s = 0; s < cfg.consistency_sizes.size(); ++s) {
        int n = cfg.consistency_sizes[s];
        VariantRun vr = run_variant("er_d3ro", head(full, n), gen, x,
                                    cons_cfg);
        gaps[s].push_back(std::abs(vr.result.objective -
                                   ref.result.objective));
        radii[s] += vr.radius / cfg.replications;
      }
    }
    rep.reference_value_mean = ref_sum / cfg.replications;
    for (std::size_t s = 0; s < cfg.consistency_sizes.size(); ++s) {
      ConsistencyRow row;
      row.n = cfg.consistency_sizes[s];
      row.radius = radii[s];
      row.gaps = gaps[s];
      row.median_gap = median_of(gaps[s]);
      rep.consistency.push_back(row);
    }
    rep.consistency_monotone = rep.consistency.size() > 1;
    for (std::size_t s = 0; s + 1 < rep.consistency.size(); ++s)
      if (!(rep.consistency[s + 1].median_gap <
            rep.consistency[s].median_gap))
        rep.consistency_monotone = false;

    // Log-log regression of the median gap on the radius.
    if (rep.consistency.size() > 1) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      int pts = 0;
      for (const auto& row : rep.consistency) {
        if (row.median_gap <= 0 || row.radius <= 0) continue;
        double lx = std::log(row.radius), ly = std::log(row.median_gap);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++pts;
      }
      if (pts > 1 && sxx * pts - sx * sx > 1e-12)
        rep.rate_slope = (pts * sxy - sx * sy) / (pts * sxx - sx * sx);
    }
  }
  return rep;
}

std::string guarantee_report_to_json(const GuaranteeReport& rep) {
  json j;
  j["alpha"] = rep.alpha;
  j["nominal"] = rep.nominal;
  j["radius_calibrated"] = rep.radius_calibrated;
  j["radius_used"] = rep.radius_used;
  j["coverage_frequency"] = rep.coverage_frequency;
  json rows = json::array();
  for (const auto& row : rep.coverage) {
    json r;
    r["replication"] = row.replication;
    r["v_hat"] = row.v_hat;
    r["g_hat"] = row.g_hat;
    r["z1"] = row.z1;
    r["clamped"] = row.clamped;
    r["covered"] = row.covered;
    rows.push_back(r);
  }
  j["coverage"] = rows;
  json cons = json::array();
  for (const auto& row : rep.consistency) {
    json r;
    r["n"] = row.n;
    r["radius"] = row.radius;
    r["median_gap"] = row.median_gap;
    r["gaps"] = row.gaps;
    cons.push_back(r);
  }
  j["consistency"] = cons;
  j["reference_value_mean"] = rep.reference_value_mean;
  j["consistency_monotone"] = rep.consistency_monotone;
  j["rate_slope"] = rep.rate_slope;
  j["warnings"] = rep.warnings;
  return j.dump(2);
}

namespace {

std::string hash_hex(std::uint64_t h) {
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

}  // namespace

CompareReport compare_report(const ExperimentConfig& cfg) {
  cfg.validate();
  GeneratedInstance gen = generate_instance(cfg);

  struct Job {
    std::size_t idx;
    std::string variant, regressor;
    int n, rep;
  };
  std::vector<Job> jobs;
  for (const auto& variant : cfg.compare_variants)
    for (const auto& regressor : cfg.compare_regressors)
      for (int n : cfg.sample_sizes)
        for (int r = 0; r < cfg.replications; ++r)
          jobs.push_back({jobs.size(), variant, regressor, n, r});

  CompareReport report;
  report.cells.resize(jobs.size());

  auto work = [&](const Job& job) {
    CompareCell cell;
    cell.variant = job.variant;
    cell.regressor = job.regressor;
    cell.n = job.n;
    cell.replication = job.rep;
    try {
      std::string tag = std::to_string(job.rep);
      Dataset d = sample_dataset(gen.truth, job.n,
                                 substream_seed(cfg.seed, "data:rep:" + tag));
      cell.dataset_hash = dataset_hash(d);
      Vec x = sample_covariate(cfg.covariates,
                               substream_seed(cfg.seed, "xnew:rep:" + tag));
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.regressor = job.regressor;
      VariantRun vr = run_variant(job.variant, d, gen, x, cell_cfg);
      cell.radius = vr.radius;
      cell.status = vr.result.status;
      cell.iterations = vr.result.iterations;
      cell.gap = (vr.result.ub - vr.result.lb) /
                 (1.0 + std::abs(vr.result.ub));
      cell.objective = vr.result.objective;
      cell.z1 = vr.z1;
      cell.solve_seconds = vr.solve_seconds;
      cell.oos = evaluate_oos(vr.z_base, gen, x, cfg.oos_scenarios,
                              substream_seed(cfg.seed, "oos:rep:" + tag),
                              cfg.rho, cfg.theta);
      cell.oos.costs.clear();  // the tables carry statistics, not samples
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    report.cells[job.idx] = cell;
  };

  int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (const Job& job : jobs) work(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t k = next.fetch_add(1);
          if (k >= jobs.size()) return;
          work(jobs[k]);
        }
      });
    for (auto& th : pool) th.join();
  }

  // Paired-data discipline: at fixed (n, replication) every variant and
  // regressor must have consumed the same bytes.
  for (const auto& a : report.cells)
    for (const auto& b : report.cells)
      if (a.error.empty() && b.error.empty() && a.n == b.n &&
          a.replication == b.replication &&
          a.dataset_hash != b.dataset_hash)
        throw std::logic_error("paired cells saw different datasets at n=" +
                               std::to_string(a.n) + " rep=" +
                               std::to_string(a.replication));

  report.detail.header = {
      "variant",     "regressor",     "n",
      "replication", "dataset_hash",  "radius",
      "status",      "iterations",    "gap",
      "objective",   "z1",            "oos_mean",
      "oos_std_error", "oos_cvar",    "oos_composite",
      "clamped_scenarios", "solve_seconds", "error"};
  for (const auto& c : report.cells) {
    report.detail.rows.push_back(
        {c.variant, c.regressor, std::to_string(c.n),
         std::to_string(c.replication), hash_hex(c.dataset_hash),
         fmt_double(c.radius), c.status, std::to_string(c.iterations),
         fmt_double(c.gap), fmt_double(c.objective), fmt_double(c.z1),
         fmt_double(c.oos.mean), fmt_double(c.oos.std_error),
         fmt_double(c.oos.cvar), fmt_double(c.oos.composite),
         std::to_string(c.oos.clamped_scenarios),
         fmt_double(c.solve_seconds), c.error});
  }

  report.summary.header = {
      "variant", "regressor", "n", "replications", "mean_oos_cost",
      "std_error", "mean_solve_seconds", "mean_gap", "n_optimal",
      "n_iteration_limit", "n_unbounded", "n_error"};
  for (const auto& variant : cfg.compare_variants)
    for (const auto& regressor : cfg.compare_regressors)
      for (int n : cfg.sample_sizes) {
        std::vector<double> composites, seconds, gaps;
        int n_opt = 0, n_iter = 0, n_unb = 0, n_err = 0;
        for (const auto& c : report.cells) {
          if (c.variant != variant || c.regressor != regressor || c.n != n)
            continue;
          if (!c.error.empty()) {
            ++n_err;
            continue;
          }
          composites.push_back(c.oos.composite);
          seconds.push_back(c.solve_seconds);
          gaps.push_back(c.gap);
          if (c.status == "optimal") ++n_opt;
          else if (c.status == "iteration_limit") ++n_iter;
          else if (c.status == "unbounded") ++n_unb;
        }
        double mean = 0, se = 0, msec = 0, mgap = 0;
        if (!composites.empty()) {
          auto avg = [](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) /
                   static_cast<double>(v.size());
          };
          mean = avg(composites);
          msec = avg(seconds);
          mgap = avg(gaps);
          if (composites.size() > 1) {
            double ss = 0;
            for (double c : composites) ss += (c - mean) * (c - mean);
            se = std::sqrt(ss / (composites.size() - 1.0)) /
                 std::sqrt(static_cast<double>(composites.size()));
          }
        }
        report.summary.rows.push_back(
            {variant, regressor, std::to_string(n),
             std::to_string(static_cast<int>(composites.size())),
             fmt_double(mean), fmt_double(se), fmt_double(msec),
             fmt_double(mgap), std::to_string(n_opt), std::to_string(n_iter),
             std::to_string(n_unb), std::to_string(n_err)});
      }
  return report;
}

}  // namespace ddro
