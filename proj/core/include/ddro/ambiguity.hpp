#pragma once

// Ambiguity-set construction: the empirical residual distribution at the
// center of the ball, the theoretical radius composition, an exact discrete
// optimal-transport distance (test/validation oracle), and leave-one-out
// radius selection driven by caller-supplied pipeline hooks.

#include <functional>
#include <string>
#include <vector>

#include "ddro/model.hpp"

namespace ddro {

struct ResidualSet;

struct DiscreteDistribution {
  Mat atoms;    // one atom per row
  Vec weights;  // nonnegative, sums to 1

  int size() const { return static_cast<int>(atoms.rows()); }
  int dim() const { return static_cast<int>(atoms.cols()); }
  void validate() const;
};

DiscreteDistribution empirical_residual_distribution(const ResidualSet& res);

enum class GroundNorm { L1, L2 };

// Exact p-Wasserstein distance between small discrete distributions via the
// transport linear program. Intended for tests and statistical validation,
// not the solve path (the reformulation never needs it).
double wasserstein_distance(const DiscreteDistribution& p1,
                            const DiscreteDistribution& p2, int p,
                            GroundNorm norm);

enum class RadiusMode { Fixed, Theoretical, CrossValidated };

struct RadiusSpec {
  RadiusMode mode = RadiusMode::Fixed;
  double fixed_value = 0.0;

  // Constants of the theoretical composition. The covariate term uses
  // sqrt((C1*||x||^2 + C3)/n * log(1/alpha)), the pooled term
  // sqrt(C2/n * log(1/alpha)), and the concentration term
  // (log(2*c1/alpha) / (c2*n))^(1/c3). All default to exercise the formula,
  // not to claim calibrated values.
  double C1 = 1.0;
  double C2 = 1.0;
  double C3 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double c3 = 2.0;
  double alpha = 0.05;

  std::vector<double> candidates;  // cross-validated mode

  void validate() const;
};

// Radius at risk level alpha: both estimation terms are evaluated at
// alpha/4 and added to the concentration term.
double theoretical_radius(const RadiusSpec& spec, int n, const Vec& x);

// Pipeline hooks for leave-one-out radius selection. solve_at runs the
// whole downstream pipeline (fit on the fold's training data, build the
// ambiguity set with the candidate radius at the held-out covariate, solve)
// and returns the chosen first stage; realized_cost scores that decision
// against the held-out outcome. Either may throw to mark the fold failed.
struct LoocvHooks {
  std::function<Vec(const Dataset& train, const Vec& x_held, double radius)>
      solve_at;
  std::function<double(const Vec& z, const Vec& y_held)> realized_cost;

  int fold_cap = 0;         // > 0: evaluate only this many folds
  uint64_t fold_seed = 0;   // picks the fold subset when capped
  std::string fold_csv_path;  // optional per-fold log
};

struct LoocvCandidateRow {
  double radius = 0.0;
  double mean_cost = 0.0;
  int folds_evaluated = 0;
  bool failed = false;
};

struct LoocvSelection {
  double chosen = 0.0;
  std::vector<LoocvCandidateRow> table;
  std::vector<int> folds;  // indices actually evaluated
};

LoocvSelection radius_by_loocv(const Dataset& data,
                               const std::vector<double>& candidates,
                               const LoocvHooks& hooks);

// Dataset minus one row, for fold construction.
Dataset drop_row(const Dataset& data, int k);

}  // namespace ddro
