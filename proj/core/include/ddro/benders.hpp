#pragma once

// Decomposition loop. Each iteration solves the master over the cut pool,
// prices every residual scenario through the recourse dual (a subproblem
// per scenario, warm-started since the dual feasible set never changes),
// updates the bounds, and either stops or appends cuts. Cuts are never
// removed from the pool.

#include <cstdint>
#include <string>
#include <vector>

#include "ddro/cuts.hpp"
#include "ddro/master.hpp"

namespace ddro {

enum class CutMode { Auto, Multi, Single };
const char* to_string(CutMode mode);

struct BendersOptions {
  // Auto keeps one cut per scenario while the scenario count is small and
  // switches to the averaged single cut above 60 scenarios, where the
  // growing master row count starts to dominate the runtime.
  CutMode mode = CutMode::Auto;
  double eps_gap = 1e-6;    // relative bound-gap termination
  double eps_cut = 1e-6;    // absolute per-scenario cut violation tolerance
  double eps_master = 0.0;  // <= 0: eps_gap / 10
  int max_iterations = 500;
  double unbounded_lb = -1e10;  // lower bounds below this flag divergence
  std::string iteration_csv_path;
  std::string master_trace_csv_path;
  bool spot_check = true;  // sample recourse feasibility before starting
  std::uint64_t spot_check_seed = 910290;
  double theta_margin = 1.0;
};

struct IterationRow {
  int iteration = 0;
  double lb = 0.0;
  double ub = 0.0;
  double gap = 0.0;  // (ub - lb) / (1 + |ub|)
  int cuts_added = 0;
  double master_seconds = 0.0;
  double subproblem_seconds = 0.0;
};

struct BendersState {
  int iteration = 0;
  CutMode resolved_mode = CutMode::Multi;
  std::vector<BendersCut> cuts;
  std::vector<Vec> iterates;  // master argmin per iteration, in order
  double lb = 0.0;
  double ub = 0.0;
  std::vector<IterationRow> log;
  std::vector<std::string> warnings;
};

struct BendersResult {
  std::string status;  // optimal | iteration_limit | unbounded
  Vec z;
  double lambda = 0.0;
  Vec theta;  // realized scenario recourse values at the returned z
  double objective = 0.0;
  double lb = 0.0;
  double ub = 0.0;
  int iterations = 0;
  BendersState state;
};

// One pricing pass at a fixed z: scenario recourse values and the cuts the
// chosen mode derives from their duals. sp_values always has one entry per
// scenario regardless of mode. A caller-owned SpSolver keeps its warm basis
// across iterations; pass nullptr for a one-shot solve.
struct CutBatch {
  std::vector<BendersCut> cuts;
  Vec sp_values;
};

CutBatch generate_cuts(const ReformulationSkeleton& skeleton, const Vec& z,
                       CutMode mode, int iteration = 0,
                       SpSolver* solver = nullptr);

BendersResult run_benders(const ReformulationSkeleton& skeleton,
                          const BendersOptions& opts = {});

// Convenience wrapper: fit-side inputs in, result out.
BendersResult run_benders(const TwoStageInstance& instance,
                          const Regressor& model, const Vec& x,
                          const Mat& residuals, double xi,
                          const BendersOptions& opts = {});

std::string benders_result_to_json(const BendersResult& result);
void write_iteration_log(const std::string& path,
                         const std::vector<IterationRow>& log);

}  // namespace ddro
