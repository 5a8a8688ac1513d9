#pragma once

// Reformulation skeleton and cut algebra shared by the decomposition loop
// and the master solver. A cut bounds a scenario's recourse value from
// below by weak duality: theta_k >= pi' (T(z) (fhat(z_c) + eps_k) + h(z)).
// With fhat piecewise affine in the coupling coordinate, on each embedding
// piece that right side is quadratic in z_c, bilinear in z_i * z_c, and
// affine in everything else; the expansion below makes those coefficients
// explicit for LP assembly.

#include <vector>

#include "ddro/ambiguity.hpp"
#include "ddro/model.hpp"
#include "ddro/regression.hpp"

namespace ddro {

// Everything about an ER-D3RO solve that does not change across
// iterations: the augmented instance, the covariate, the fitted model
// flattened along the coupling axis, the residual scenarios, and the
// radius. Assembled once by build_reformulation.
struct ReformulationSkeleton {
  TwoStageInstance instance;
  Vec x;                       // covariate the solve conditions on
  PiecewiseAffineEmbedding embedding;  // f-hat at x over the coupling box
  Mat residuals;               // n x d_y scenario atoms
  double xi = 0.0;             // ambiguity radius

  int n_scenarios() const { return static_cast<int>(residuals.rows()); }
  int coupling() const { return instance.coupling_index; }
};

ReformulationSkeleton build_reformulation(const TwoStageInstance& instance,
                                          const Regressor& model, const Vec& x,
                                          const Mat& residuals, double xi,
                                          int wasserstein_p = 1,
                                          GroundNorm norm = GroundNorm::L1);

// One cut, stored in an aggregation-friendly form: with z_0 := 1,
//   r(z) = sum_i z_i * (s.row(i) . fhat(z_c) + t[i])
// where s.row(i) = sum_k w_k (T_i)' pi_k and t[i] collects the residual and
// h(z) parts. A scenario cut uses a single (pi, eps) pair with weight 1;
// the averaged single-cut uses all pairs with weight 1/n.
struct BendersCut {
  int scenario = -1;  // -1 for the averaged cut
  int iteration = 0;
  Mat s;  // (d_z + 1) x d_y, row 0 for the constant block of T
  Vec t;  // d_z + 1
};

struct WeightedDual {
  double weight = 1.0;
  Vec pi;       // dual vector, length n_rows of W
  Vec epsilon;  // residual atom, length d_y
};

BendersCut make_cut(const TwoStageInstance& instance,
                    const std::vector<WeightedDual>& duals, int scenario,
                    int iteration);

// Coefficients of a cut's right side on one embedding piece:
//   r(z) = constant + linear . z + quad * z_c^2 + sum_{i != c} bilinear[i] * z_i * z_c
struct CutPieceExpansion {
  double constant = 0.0;
  Vec linear;    // d_z
  double quad = 0.0;
  Vec bilinear;  // d_z, coupling entry unused (kept zero)
};

CutPieceExpansion expand_on_piece(const BendersCut& cut,
                                  const EmbeddingPiece& piece, int coupling);

// Direct evaluation of r(z) through the embedding (throws on infeasible
// kernel pieces). Used for cut-satisfaction checks and validity tests.
double evaluate_cut(const BendersCut& cut,
                    const PiecewiseAffineEmbedding& embedding, const Vec& z,
                    int coupling);

}  // namespace ddro
