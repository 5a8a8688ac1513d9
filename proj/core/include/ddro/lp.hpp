#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ddro/model.hpp"

namespace ddro {

// Self-contained bounded-variable revised simplex. Geometry of the internal
// form, for every problem:
//
//     min  c' x
//     s.t. A x + s = b,   l <= x <= u,
//          s_i >= 0 (<= rows), s_i <= 0 (>= rows), s_i = 0 (= rows),
//
// maximization negates c internally. The basis is held as a dense LU
// factorization (refactorized every refactor_interval pivots) plus a
// product-form eta chain for the pivots since. Pricing is Dantzig with a
// Bland's-rule fallback once the objective stalls; ratio-test ties go to the
// smallest variable index. Optimal duals are read off the final basis, so
// they are always an extreme point of the dual polyhedron.

enum class LpStatus {
  Optimal,
  Infeasible,
  Unbounded,
  IterationLimit,
  NumericalFailure,
};

std::string to_string(LpStatus s);

enum class RowSense { Le, Eq, Ge };

struct LinearProgram {
  int n_vars = 0;
  int n_rows = 0;
  bool maximize = false;
  Vec c;
  std::vector<RowSense> sense;
  Vec rhs;
  Vec lower;  // variable bounds; +-inf allowed
  Vec upper;

  // sparse constraint entries, duplicates summed
  std::vector<int> e_row;
  std::vector<int> e_col;
  std::vector<double> e_val;

  static LinearProgram make(int vars, int rows);
  void add_entry(int row, int col, double value);
  void validate() const;
};

struct LpOptions {
  double feas_tol = 1e-7;   // scaled by row magnitudes
  double opt_tol = 1e-9;
  int refactor_interval = 50;
  long max_iters = -1;      // <0 means the 50*(rows+cols) hard cap
  std::string dump_path;    // when set, text-dump the problem before solving
};

// Opaque warm-start handle: a basis is only meaningful for the exact
// constraint geometry it came from, so callers just shuttle it between solves
// of structurally identical problems.
struct LpBasis {
  bool valid = false;
  std::vector<int> basic;               // internal column per row
  std::vector<std::uint8_t> at_upper;   // internal nonbasic rest positions
};

struct LpSolution {
  LpStatus status = LpStatus::NumericalFailure;
  double objective = 0.0;
  Vec x;              // structural variables
  Vec duals;          // per row; see convention below
  Vec reduced_costs;  // per structural variable
  Vec ray;            // set on Unbounded: improving feasible direction
  double duality_gap = 0.0;  // |primal - dual objective| at the basis
  long iterations = 0;
  LpBasis basis;
};

// Dual convention: duals y and reduced costs r = c - A'y always satisfy
//   objective = y'b + sum_{j at lower} r_j l_j + sum_{j at upper} r_j u_j
// in the *minimization* orientation (for maximize problems both vectors are
// negated back, so >=-row duals come out nonnegative for max problems and
// nonpositive for min problems swap accordingly: a >= row carries y_i >= 0
// when minimizing, y_i <= 0 when maximizing).
LpSolution solve_lp(const LinearProgram& lp, const LpOptions& opts = {},
                    const LpBasis* warm = nullptr);

void dump_lp(const LinearProgram& lp, const std::string& path);

// ---- instance-shaped entry points ----

struct RecourseResult {
  LpStatus status = LpStatus::NumericalFailure;
  double value = 0.0;
  Vec omega;
  Vec duals;  // the dual vector pi >= 0 with W'pi = q at a basic optimum
};

LinearProgram build_recourse_lp(const TwoStageInstance& inst, const Vec& z,
                                const Vec& y);
RecourseResult solve_recourse(const TwoStageInstance& inst, const Vec& z,
                              const Vec& y, const LpOptions& opts = {});

struct SpResult {
  LpStatus status = LpStatus::NumericalFailure;
  double value = 0.0;  // max_{pi in Pi} r' pi
  Vec pi;              // an extreme point of Pi
};

// Subproblem solver over Pi = {pi >= 0 : W'pi = q}. The feasible set never
// changes across calls, only the linear objective r does, so the previous
// optimal basis warm-starts the next solve.
class SpSolver {
 public:
  explicit SpSolver(const TwoStageInstance& inst, const LpOptions& opts = {});
  SpResult solve(const Vec& r);
  void reset();  // drop the cached basis

 private:
  LinearProgram lp_;
  LpOptions opts_;
  LpBasis cache_;
};

SpResult solve_sp(const TwoStageInstance& inst, const Vec& r,
                  const LpOptions& opts = {});

// Samples (z, Y) pairs and verifies that the recourse stays primal feasible
// (complete recourse) and that Pi is nonempty (dual feasibility, so recourse
// values never reach -inf). Aborting early with a clear message beats a
// Benders run that wanders into an ill-posed instance.
struct AssumptionReport {
  bool primal_feasible = false;
  bool dual_feasible = false;
  std::string detail;
  bool ok() const { return primal_feasible && dual_feasible; }
};

AssumptionReport spot_check_assumptions(const TwoStageInstance& inst,
                                        std::uint64_t seed, int n_samples = 24,
                                        double y_scale = 1.0);

}  // namespace ddro
