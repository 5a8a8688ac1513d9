#pragma once

// Master problem of the decomposition. For a fixed coupling value the
// problem is an LP (the regression term is a constant), so the nonconvexity
// introduced by decision-dependent cuts lives entirely in the single
// coupling coordinate. solve_master runs a best-bound branch-and-bound over
// that coordinate: one root node per feasible embedding piece, node bounds
// from an LP relaxation where z_c^2 is sandwiched between tangent and secant
// rows and every z_i * z_c product gets a McCormick envelope, bisection
// branching down to a width floor.

#include <string>
#include <vector>

#include "ddro/cuts.hpp"
#include "ddro/lp.hpp"

namespace ddro {

// The skeleton is borrowed, not owned; keep it alive while the master is in
// use. theta_min has one entry per theta variable (n scenarios in multi-cut
// mode, a single averaged variable otherwise).
struct MasterProblem {
  const ReformulationSkeleton* skeleton = nullptr;
  std::vector<BendersCut> cuts;
  bool single_cut = false;
  Vec theta_min;

  int n_theta() const {
    return single_cut ? 1 : skeleton->n_scenarios();
  }
};

// Finite lower bounds on the theta variables so the first master solves
// (empty cut pool) stay bounded. Weak duality with a fixed reference dual
// vertex pi0 (a subproblem solve at the centre of the box): for every z,
//   recourse_k(z) >= pi0' (T(z) (fhat(z_c) + eps_k) + h(z)),
// and the right side is minorized over the box by interval arithmetic on
// its piecewise-quadratic pieces. margin scales the safety slack subtracted
// at the end; the decomposition asserts realized recourse values never fall
// below these bounds.
Vec theta_lower_bounds(const ReformulationSkeleton& skeleton, bool single_cut,
                       double margin = 1.0);

MasterProblem make_master(const ReformulationSkeleton& skeleton,
                          bool single_cut, double theta_margin = 1.0);

struct MasterOptions {
  double eps_master = 1e-6;     // relative optimality slack for the search
  double delta_min_frac = 1e-6; // width floor as a fraction of the coupling box
  int node_cap = 0;             // 0: sized from pieces and the width floor
  std::string trace_csv_path;   // optional node-by-node search trace
};

struct MasterSolution {
  LpStatus status = LpStatus::NumericalFailure;
  Vec z;
  double lambda = 0.0;
  Mat phi;  // d_y x d_omega, column blocks of the dual-norm certificate
  Mat psi;
  Vec theta;
  double value = 0.0;      // objective of the returned (feasible) point
  double proved_lb = 0.0;  // certified lower bound over the whole box
  int piece = -1;          // embedding piece the solution lies in
  int nodes_explored = 0;
};

MasterSolution solve_master(const MasterProblem& mp,
                            const MasterOptions& opts = {});

// Exact master LP with the coupling coordinate pinned to z_c (boundary
// values resolve to the right-hand piece, matching the embedding's
// piece_index). Quadratic and bilinear cut terms collapse to constants and
// plain linear terms, so no relaxation is involved.
LpSolution fixed_coupling_lp(const MasterProblem& mp, double z_c);

// Certified lower bound for the master restricted to z_c in [lo, hi]. The
// interval must sit inside a single feasible embedding piece.
double node_relaxation(const MasterProblem& mp, double lo, double hi);

}  // namespace ddro
