#pragma once

// Regression models for the uncertain vector: ordinary least squares, a
// uniform-kernel smoother, and a one-hidden-layer ReLU network. All three
// are fit on datasets whose single decision column is the coupling decision
// (the price in the pricing application). Each fitted model supports
// pointwise prediction and can be flattened, at a fixed covariate, into a
// piecewise-affine function of the coupling decision for use inside the
// master problem.

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ddro/model.hpp"
#include "ddro/rng.hpp"

namespace ddro {

// Raised when a kernel prediction has no training point within the
// bandwidth ball. Callers either propagate it or, in the master search,
// mark the offending interval infeasible.
struct EmptyNeighborhood : std::runtime_error {
  explicit EmptyNeighborhood(const std::string& msg) : std::runtime_error(msg) {}
};

enum class RegressorKind { Ols, Kernel, ReluNet };
const char* to_string(RegressorKind kind);

struct OlsModel {
  Mat a;      // d_y x d_x covariate coefficients
  Vec b;      // d_y decision coefficients (zero when fit without decision)
  Vec alpha;  // d_y intercept
  bool uses_decision = true;
};

// Stores its training data; prediction averages y over the joint ball
// ||x - x_k||^2 + (z_c - z_k)^2 <= h^2 (the z term dropped when fit
// without decision).
struct KernelModel {
  Mat train_x;  // n x d_x
  Vec train_z;  // n
  Mat train_y;  // n x d_y
  double bandwidth = 0.0;
  bool uses_decision = true;
};

// y = w2 * relu(w1 * u + b1) + b2 where u = (x, z_c) in raw units, or just
// x when fit without decision. Input/target standardization used during
// training is folded back into the stored weights.
struct ReluNetModel {
  Mat w1;  // width x d_in
  Vec b1;  // width
  Mat w2;  // d_y x width
  Vec b2;  // d_y
  bool uses_decision = true;
};

struct Regressor {
  std::variant<OlsModel, KernelModel, ReluNetModel> model;
  int d_x = 0;
  int d_y = 0;

  RegressorKind kind() const;
  bool uses_decision() const;
};

Regressor fit_ols(const Dataset& data, bool include_decision = true);
Regressor fit_kernel(const Dataset& data, double bandwidth,
                     bool include_decision = true);

// Full-batch gradient descent with a fixed step. The default step suits
// width 16 on standardized data; wider nets need a smaller one (training
// aborts with a diagnostic if the loss goes non-finite).
struct NnTrainConfig {
  int hidden_width = 16;
  int epochs = 5000;
  double learning_rate = 0.5;
  uint64_t seed = 0;
  bool include_decision = true;
};

Regressor fit_relu_nn(const Dataset& data, const NnTrainConfig& config);

// Pointwise prediction at covariate x and coupling decision z_c.
Vec predict(const Regressor& model, const Vec& x, double z_c);

struct ResidualSet {
  Mat residuals;  // n x d_y, row k = y_k - prediction at (x_k, z_k)
  Vec mean;       // column means, a fit-quality diagnostic
};

ResidualSet residuals(const Regressor& model, const Dataset& data);

// One interval of the flattened model: value(z_c) = a + b * z_c on
// [lo, hi]. A kernel interval whose neighborhood is empty is kept in the
// tiling but flagged infeasible; evaluating it throws.
struct EmbeddingPiece {
  double lo = 0.0;
  double hi = 0.0;
  Vec a;
  Vec b;
  bool feasible = true;
};

struct PiecewiseAffineEmbedding {
  std::vector<double> breakpoints;    // size pieces + 1, covers [lo, hi]
  std::vector<EmbeddingPiece> pieces;

  int piece_index(double z_c) const;
  Vec evaluate(double z_c) const;
};

PiecewiseAffineEmbedding embed(const Regressor& model, const Vec& x,
                               double lo, double hi);

// Internal training objective of the ReLU network on already-prepared
// inputs/targets (rows = samples): mean squared error divided by two.
// Exposed so tests can check the analytic gradient against finite
// differences.
struct NnParams {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;
};

double nn_loss(const NnParams& params, const Mat& inputs, const Mat& targets);
double nn_loss_and_grad(const NnParams& params, const Mat& inputs,
                        const Mat& targets, NnParams& grad);

std::string regressor_to_json(const Regressor& model);
Regressor regressor_from_json(const std::string& text);

}  // namespace ddro
