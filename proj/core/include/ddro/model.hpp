#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace ddro {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Observed triples (x^k, z^k, y^k): covariates, decisions in effect when the
// observation was made, and the realized uncertainty.
struct Dataset {
  Mat x;  // n x d_x
  Mat z;  // n x d_z
  Mat y;  // n x d_y

  int n() const { return static_cast<int>(x.rows()); }
  int d_x() const { return static_cast<int>(x.cols()); }
  int d_z() const { return static_cast<int>(z.cols()); }
  int d_y() const { return static_cast<int>(y.cols()); }

  void validate() const;
};

Dataset dataset_from_csv(const std::string& path);
void dataset_to_csv(const Dataset& data, const std::string& path);

// A matrix-valued affine map of the first stage decision,
//   T(z) = constant + sum_i z_i * coeffs[i].
// Vector-valued maps (the recourse offset h) use single-column matrices.
struct AffineMapInZ {
  Mat constant;
  std::vector<Mat> coeffs;  // one per z coordinate, each same shape as constant

  int d_z() const { return static_cast<int>(coeffs.size()); }
  bool depends_on(int zi) const;
  void validate(const std::string& what) const;
};

Mat evaluate_affine(const AffineMapInZ& map, const Vec& z);

struct SupportSet {
  enum class Kind { AllSpace, Box };
  Kind kind = Kind::AllSpace;
  Vec lower;  // used for Box only
  Vec upper;
};

// Componentwise metric projection onto the support.
Vec project(const SupportSet& support, const Vec& y);

struct RiskSpec {
  double rho = 0.0;    // weight on the CVaR term
  double theta = 0.9;  // CVaR level, in [0, 1)
};

// Two-stage problem
//   min_z  c_z' z + (worst case over the ambiguity set of) E[H(z, Y)]
//   H(z, Y) = min { q' w : W w >= T(z) Y + h(z) },
// with T and h affine in z. Sign restrictions on w are encoded as explicit
// rows of W so that the recourse dual lives in {pi >= 0 : W' pi = q}.
struct TwoStageInstance {
  Vec c_z;
  Vec z_lower;
  Vec z_upper;
  Vec q;
  Mat W;             // M x d_omega
  AffineMapInZ T;    // M x d_y blocks
  AffineMapInZ h;    // M x 1 blocks
  int coupling_index = 0;  // the single z coordinate the regression sees
  RiskSpec risk;
  SupportSet support;

  // Set by augment_cvar on the instance it returns.
  bool cvar_augmented = false;
  int eta_index = -1;  // position of the CVaR threshold inside z

  int d_z() const { return static_cast<int>(c_z.size()); }
  int d_y() const { return static_cast<int>(T.constant.cols()); }
  int n_rows() const { return static_cast<int>(W.rows()); }
  int d_omega() const { return static_cast<int>(W.cols()); }

  void validate() const;
};

// Mean-CVaR reformulation of the recourse. The returned instance has one
// extra first stage coordinate (the threshold eta, bounded by the given box)
// and two extra recourse variables (t, u) with
//   t >= q' w,   u >= t - eta,   u >= 0,
// recourse cost t + rho/(1-theta) * u, and first stage cost rho on eta. For
// any fixed (z, eta) the new recourse cost equals
//   H(z, Y) + rho/(1-theta) * max(0, H(z, Y) - eta),
// so minimizing over eta recovers mean + rho * CVaR_theta across scenarios.
TwoStageInstance augment_cvar(const TwoStageInstance& inst, double eta_lower,
                              double eta_upper);

// Empirical mean + rho * CVaR_theta of a cost sample, by the threshold
// characterization (average of the worst (1-theta) probability mass).
double mean_cvar(const std::vector<double>& costs, double rho, double theta);
double empirical_cvar(const std::vector<double>& costs, double theta);

std::string instance_to_json(const TwoStageInstance& inst);
TwoStageInstance instance_from_json(const std::string& text);
void instance_to_file(const TwoStageInstance& inst, const std::string& path);
TwoStageInstance instance_from_file(const std::string& path);

}  // namespace ddro
