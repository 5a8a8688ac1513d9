#pragma once

// Independent reference implementations used only by the test suite. They
// deliberately avoid the production code paths (no simplex for the vertex
// oracle, no Benders machinery for the grid oracle) so that agreement is
// meaningful.

#include <functional>
#include <vector>

#include "ddro/lp.hpp"
#include "ddro/model.hpp"

namespace ddro::oracle {

struct VertexOracleResult {
  bool feasible = false;
  double value = 0.0;
  Vec x;
};

// Brute-force optimum of a small LP whose feasible set is bounded (every
// variable boxed): enumerate candidate vertices as solutions of n-subsets of
// the active-constraint system, keep the feasible best.
VertexOracleResult lp_vertex_oracle(const LinearProgram& lp, double feas_tol = 1e-7);

// All extreme points of Pi = {pi >= 0 : W'pi = q} by basic-solution
// enumeration. Exponential in the instance size; toy instances only.
std::vector<Vec> enumerate_pi_vertices(const TwoStageInstance& inst,
                                       double tol = 1e-9);

// 1-D minimizer for unimodal functions.
double golden_section_min(const std::function<double(double)>& f, double lo,
                          double hi, double tol = 1e-10);

// Least squares via the normal equations (D'D) beta = D'Y. The production
// fit uses QR; this is the independent cross-check.
Mat normal_equation_ols(const Mat& design, const Mat& targets);

// p-Wasserstein distance between 1-D discrete distributions through the
// quantile-coupling formula (sorted-atom CDF walk); no linear programming.
double wasserstein_1d(const std::vector<double>& atoms1,
                      const std::vector<double>& weights1,
                      const std::vector<double>& atoms2,
                      const std::vector<double>& weights2, int p);

struct GridPoint {
  double z_c = 0.0;
  double value = 0.0;
  bool feasible = false;
};

struct GridOracleResult {
  double value = 0.0;
  double z_c = 0.0;
  bool any_feasible = false;
  std::vector<GridPoint> trace;
};

// Extensive-form reference solve: a uniform grid over the coupling
// coordinate; at each grid point one LP over all remaining first-stage
// coordinates, the Lipschitz block (lambda, phi, psi) when xi > 0, and all
// scenario recourse vectors. predict_at may throw to mark a grid point
// infeasible (kernel regression with an empty neighborhood).
GridOracleResult extensive_form_grid(const TwoStageInstance& inst,
                                     const std::function<Vec(double)>& predict_at,
                                     const Mat& residuals, double xi,
                                     int grid_points);

}  // namespace ddro::oracle
