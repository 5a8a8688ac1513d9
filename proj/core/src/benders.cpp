#include "ddro/benders.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "ddro/io_util.hpp"
#include "json_util.hpp"

namespace ddro {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CutMode resolve_mode(CutMode mode, int n_scenarios) {
  if (mode != CutMode::Auto) return mode;
  return n_scenarios > 60 ? CutMode::Single : CutMode::Multi;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

double embedding_scale(const ReformulationSkeleton& skel) {
  double scale = 1.0;
  for (const EmbeddingPiece& piece : skel.embedding.pieces) {
    if (!piece.feasible) continue;
    for (double zc : {piece.lo, piece.hi}) {
      Vec v = piece.a + piece.b * zc;
      scale = std::max(scale, v.cwiseAbs().maxCoeff());
    }
  }
  if (skel.residuals.size() > 0) {
    scale += skel.residuals.cwiseAbs().maxCoeff();
  }
  return scale;
}

}  // namespace

const char* to_string(CutMode mode) {
  switch (mode) {
    case CutMode::Auto:
      return "auto";
    case CutMode::Multi:
      return "multi";
    case CutMode::Single:
      return "single";
  }
  return "?";
}

CutBatch generate_cuts(const ReformulationSkeleton& skel, const Vec& z,
                       CutMode mode, int iteration, SpSolver* solver) {
  const TwoStageInstance& inst = skel.instance;
  if (z.size() != inst.d_z()) {
    throw std::runtime_error("decision length mismatch in cut generation");
  }
  const CutMode resolved = resolve_mode(mode, skel.n_scenarios());
  const Vec y_hat = skel.embedding.evaluate(z[inst.coupling_index]);
  const Mat Tz = evaluate_affine(inst.T, z);
  const Vec hz = evaluate_affine(inst.h, z).col(0);
  const Vec base = Tz * y_hat + hz;

  SpSolver local(inst);
  SpSolver& sp = solver ? *solver : local;

  const int n = skel.n_scenarios();
  CutBatch batch;
  batch.sp_values = Vec::Zero(n);
  std::vector<WeightedDual> pool;
  if (resolved == CutMode::Single) pool.reserve(n);

  for (int k = 0; k < n; ++k) {
    Vec eps = skel.residuals.row(k).transpose();
    Vec r = base + Tz * eps;
    SpResult res = sp.solve(r);
    if (res.status == LpStatus::Infeasible) {
      throw std::runtime_error(
          "recourse dual set is empty; the recourse cost is not sufficiently "
          "expensive for worst-case values to stay finite");
    }
    if (res.status == LpStatus::Unbounded) {
      throw std::runtime_error(
          "recourse infeasible at scenario " + std::to_string(k) +
          "; the instance does not have complete recourse");
    }
    if (res.status != LpStatus::Optimal) {
      throw std::runtime_error("scenario subproblem failed: " +
                               to_string(res.status));
    }
    batch.sp_values[k] = res.value;
    WeightedDual wd;
    wd.pi = res.pi;
    wd.epsilon = eps;
    if (resolved == CutMode::Single) {
      wd.weight = 1.0 / static_cast<double>(n);
      pool.push_back(std::move(wd));
    } else {
      wd.weight = 1.0;
      batch.cuts.push_back(make_cut(inst, {wd}, k, iteration));
    }
  }
  if (resolved == CutMode::Single) {
    batch.cuts.push_back(make_cut(inst, pool, -1, iteration));
  }
  return batch;
}

BendersResult run_benders(const ReformulationSkeleton& skel,
                          const BendersOptions& opts) {
  const TwoStageInstance& inst = skel.instance;
  const int n = skel.n_scenarios();
  const CutMode mode = resolve_mode(opts.mode, n);

  if (opts.spot_check) {
    AssumptionReport report = spot_check_assumptions(
        inst, opts.spot_check_seed, 24, embedding_scale(skel));
    if (!report.ok()) {
      throw std::runtime_error("instance failed recourse spot checks: " +
                               report.detail);
    }
  }

  MasterProblem mp =
      make_master(skel, mode == CutMode::Single, opts.theta_margin);
  MasterOptions master_opts;
  master_opts.eps_master =
      opts.eps_master > 0.0 ? opts.eps_master : opts.eps_gap / 10.0;
  master_opts.trace_csv_path = opts.master_trace_csv_path;

  SpSolver sp(inst);

  BendersResult result;
  result.state.resolved_mode = mode;
  double lb = -kInf, ub = kInf;
  bool have_incumbent = false;
  Vec best_z, best_theta;
  double best_lambda = 0.0;
  std::string status;

  for (int t = 1; t <= opts.max_iterations; ++t) {
    result.state.iteration = t;
    auto master_start = std::chrono::steady_clock::now();
    MasterSolution ms = solve_master(mp, master_opts);
    double master_seconds = seconds_since(master_start);

    if (ms.status == LpStatus::Unbounded) {
      status = "unbounded";
      lb = -kInf;
      result.state.log.push_back(
          {t, lb, ub, kInf, 0, master_seconds, 0.0});
      break;
    }
    result.state.iterates.push_back(ms.z);
    lb = std::max(lb, ms.proved_lb);
    if (lb < opts.unbounded_lb) {
      status = "unbounded";
      result.state.log.push_back(
          {t, lb, ub, kInf, 0, master_seconds, 0.0});
      break;
    }

    auto sp_start = std::chrono::steady_clock::now();
    CutBatch batch = generate_cuts(skel, ms.z, mode, t, &sp);
    double sp_seconds = seconds_since(sp_start);

    // The weak-duality theta bounds must sit below every realized recourse
    // value; a violation means the bound derivation is wrong, not the data.
    for (int k = 0; k < n; ++k) {
      double floor_k = mp.single_cut ? mp.theta_min[0] : mp.theta_min[k];
      double realized =
          mp.single_cut ? batch.sp_values.mean() : batch.sp_values[k];
      if (realized < floor_k - 1e-7 * (1.0 + std::abs(realized))) {
        throw std::logic_error("theta lower bound " + fmt_double(floor_k) +
                               " exceeds realized recourse value " +
                               fmt_double(realized) + " at scenario " +
                               std::to_string(k));
      }
      if (mp.single_cut) break;
    }

    const double mean_recourse = batch.sp_values.mean();
    const double candidate_ub =
        inst.c_z.dot(ms.z) + skel.xi * ms.lambda + mean_recourse;
    if (candidate_ub < ub) {
      ub = candidate_ub;
      best_z = ms.z;
      best_lambda = ms.lambda;
      best_theta = batch.sp_values;
      have_incumbent = true;
    }

    bool satisfied = true;
    if (mp.single_cut) {
      satisfied = ms.theta[0] >= mean_recourse - opts.eps_cut;
    } else {
      for (int k = 0; k < n; ++k) {
        if (ms.theta[k] < batch.sp_values[k] - opts.eps_cut) {
          satisfied = false;
          break;
        }
      }
    }
    const double gap = (ub - lb) / (1.0 + std::abs(ub));
    int cuts_added = 0;
    if (satisfied || gap <= opts.eps_gap) {
      status = "optimal";
      result.state.log.push_back(
          {t, lb, ub, gap, 0, master_seconds, sp_seconds});
      break;
    }
    for (BendersCut& cut : batch.cuts) {
      mp.cuts.push_back(std::move(cut));
      ++cuts_added;
    }
    result.state.log.push_back(
        {t, lb, ub, gap, cuts_added, master_seconds, sp_seconds});
    if (t == opts.max_iterations) status = "iteration_limit";
  }

  if (status.empty()) status = "iteration_limit";
  if (inst.cvar_augmented && inst.eta_index >= 0 && have_incumbent) {
    const int e = inst.eta_index;
    const double span = inst.z_upper[e] - inst.z_lower[e];
    const double tol = 1e-6 * (1.0 + std::abs(span));
    if (best_z[e] <= inst.z_lower[e] + tol || best_z[e] >= inst.z_upper[e] - tol) {
      result.state.warnings.push_back(
          "cvar threshold sits on its box bound at " + fmt_double(best_z[e]) +
          "; widen the eta box so the threshold can move freely");
    }
  }

  result.status = status;
  result.lb = lb;
  result.ub = ub;
  result.objective = ub;
  result.iterations = result.state.iteration;
  if (have_incumbent) {
    result.z = best_z;
    result.lambda = best_lambda;
    result.theta = best_theta;
  }
  result.state.cuts = std::move(mp.cuts);
  result.state.lb = lb;
  result.state.ub = ub;
  if (!opts.iteration_csv_path.empty()) {
    write_iteration_log(opts.iteration_csv_path, result.state.log);
  }
  return result;
}

BendersResult run_benders(const TwoStageInstance& instance,
                          const Regressor& model, const Vec& x,
                          const Mat& residuals, double xi,
                          const BendersOptions& opts) {
  ReformulationSkeleton skel =
      build_reformulation(instance, model, x, residuals, xi);
  return run_benders(skel, opts);
}

std::string benders_result_to_json(const BendersResult& result) {
  nlohmann::json j;
  j["z"] = detail::vec_to_json(result.z);
  j["lambda"] = result.lambda;
  j["Theta"] = detail::vec_to_json(result.theta);
  j["objective"] = result.objective;
  j["iterations"] = result.iterations;
  j["status"] = result.status;
  return j.dump(2) + "\n";
}

void write_iteration_log(const std::string& path,
                         const std::vector<IterationRow>& log) {
  CsvTable table;
  table.header = {"iteration",  "LB",
                  "UB",         "gap",
                  "cuts_added", "master_seconds",
                  "subproblem_seconds"};
  for (const IterationRow& row : log) {
    table.rows.push_back({std::to_string(row.iteration), fmt_double(row.lb),
                          fmt_double(row.ub), fmt_double(row.gap),
                          std::to_string(row.cuts_added),
                          fmt_double(row.master_seconds),
                          fmt_double(row.subproblem_seconds)});
  }
  write_csv(path, table);
}

}  // namespace ddro
