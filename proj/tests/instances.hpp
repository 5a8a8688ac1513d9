#pragma once

// Small hand-built instances and regressors shared by the decomposition and
// master-search suites. Everything here is constructed directly (no fitting)
// so expected values stay easy to derive by hand.

#include "ddro/model.hpp"
#include "ddro/regression.hpp"

namespace ddro::fixtures {

// One warehouse, one site pricing recourse:
//   H(z, Y) = min c11*s + p2*t + u
//     s.t.  s >= Y, -s + t >= -z2, u >= -z1*Y, s >= 0, t >= 0
// so demand is hard, extra capacity is purchasable at p2, and u carries the
// revenue epigraph. T depends on z1 (the coupling), h on z2.
inline TwoStageInstance mini_pricing(double c11 = 10.0, double p2 = 100.0) {
  TwoStageInstance inst;
  inst.c_z = Vec::Zero(2);
  inst.z_lower = Vec::Zero(2);
  inst.z_upper = Vec::Constant(2, 500.0);
  inst.q = Vec(3);
  inst.q << c11, p2, 1.0;
  inst.W = Mat::Zero(5, 3);
  inst.W(0, 0) = 1.0;
  inst.W(1, 0) = -1.0;
  inst.W(1, 1) = 1.0;
  inst.W(2, 2) = 1.0;
  inst.W(3, 0) = 1.0;
  inst.W(4, 1) = 1.0;
  inst.T.constant = Mat::Zero(5, 1);
  inst.T.constant(0, 0) = 1.0;
  Mat t_z1 = Mat::Zero(5, 1);
  t_z1(2, 0) = -1.0;
  inst.T.coeffs = {t_z1, Mat::Zero(5, 1)};
  inst.h.constant = Mat::Zero(5, 1);
  Mat h_z2 = Mat::Zero(5, 1);
  h_z2(1, 0) = -1.0;
  inst.h.coeffs = {Mat::Zero(5, 1), h_z2};
  inst.coupling_index = 0;
  inst.validate();
  return inst;
}

// Newsvendor with explicit under/overage variables:
//   H(z, Y) = cu*max(0, Y - z) + co*max(0, z - Y).
// T is constant in z, and Pi = {pi >= 0 : pi1 + pi3 = cu, pi2 + pi4 = co}
// has exactly four vertices.
inline TwoStageInstance newsvendor(double cu = 4.0, double co = 1.0,
                                   double z_hi = 10.0) {
  TwoStageInstance inst;
  inst.c_z = Vec::Zero(1);
  inst.z_lower = Vec::Zero(1);
  inst.z_upper = Vec::Constant(1, z_hi);
  inst.q = Vec(2);
  inst.q << cu, co;
  inst.W = Mat::Zero(4, 2);
  inst.W(0, 0) = 1.0;
  inst.W(1, 1) = 1.0;
  inst.W(2, 0) = 1.0;
  inst.W(3, 1) = 1.0;
  inst.T.constant = Mat::Zero(4, 1);
  inst.T.constant(0, 0) = 1.0;
  inst.T.constant(1, 0) = -1.0;
  inst.T.coeffs = {Mat::Zero(4, 1)};
  inst.h.constant = Mat::Zero(4, 1);
  Mat h_z = Mat::Zero(4, 1);
  h_z(0, 0) = -1.0;
  h_z(1, 0) = 1.0;
  inst.h.coeffs = {h_z};
  inst.coupling_index = 0;
  inst.validate();
  return inst;
}

// Recourse identically zero: one free recourse variable at zero cost with
// omega >= Y, so H == 0 and Pi = {0}.
inline TwoStageInstance zero_recourse(double c_z = 1.0) {
  TwoStageInstance inst;
  inst.c_z = Vec::Constant(1, c_z);
  inst.z_lower = Vec::Zero(1);
  inst.z_upper = Vec::Constant(1, 4.0);
  inst.q = Vec::Zero(1);
  inst.W = Mat::Identity(1, 1);
  inst.T.constant = Mat::Ones(1, 1);
  inst.T.coeffs = {Mat::Zero(1, 1)};
  inst.h.constant = Mat::Zero(1, 1);
  inst.h.coeffs = {Mat::Zero(1, 1)};
  inst.coupling_index = 0;
  inst.validate();
  return inst;
}

// One warehouse serving three sites; d_y = 3.
//   H = min sum_j c1j s_j + p2 t + u
//     s.t. s_j >= Y_j (j=1..3), -sum_j s_j + t >= -z2, u >= -z1 sum_j Y_j,
//          s_j >= 0, t >= 0
inline TwoStageInstance three_site_pricing(double p2 = 100.0) {
  const int J = 3;
  TwoStageInstance inst;
  inst.c_z = Vec::Zero(2);
  inst.z_lower = Vec::Zero(2);
  inst.z_upper = Vec::Constant(2, 400.0);
  inst.q = Vec(J + 2);
  inst.q << 7.0, 9.0, 11.0, p2, 1.0;
  const int M = 2 * J + 3;
  inst.W = Mat::Zero(M, J + 2);
  for (int j = 0; j < J; ++j) inst.W(j, j) = 1.0;        // s_j >= Y_j
  for (int j = 0; j < J; ++j) inst.W(J, j) = -1.0;       // capacity row
  inst.W(J, J) = 1.0;
  inst.W(J + 1, J + 1) = 1.0;                            // epigraph row
  for (int j = 0; j < J; ++j) inst.W(J + 2 + j, j) = 1.0;  // s_j >= 0
  inst.W(2 * J + 2, J) = 1.0;                            // t >= 0
  inst.T.constant = Mat::Zero(M, J);
  for (int j = 0; j < J; ++j) inst.T.constant(j, j) = 1.0;
  Mat t_z1 = Mat::Zero(M, J);
  for (int j = 0; j < J; ++j) t_z1(J + 1, j) = -1.0;
  inst.T.coeffs = {t_z1, Mat::Zero(M, J)};
  inst.h.constant = Mat::Zero(M, 1);
  Mat h_z2 = Mat::Zero(M, 1);
  h_z2(J, 0) = -1.0;
  inst.h.coeffs = {Mat::Zero(M, 1), h_z2};
  inst.coupling_index = 0;
  inst.validate();
  return inst;
}

// Scalar OLS regressor y = a*x + b*z_c + alpha with d_x = 1, d_y = 1.
inline Regressor affine_model(double a, double b, double alpha) {
  OlsModel ols;
  ols.a = Mat::Constant(1, 1, a);
  ols.b = Vec::Constant(1, b);
  ols.alpha = Vec::Constant(1, alpha);
  ols.uses_decision = true;
  Regressor reg;
  reg.model = ols;
  reg.d_x = 1;
  reg.d_y = 1;
  return reg;
}

// d_y = 3 OLS regressor: y_j = a_j*x + b_j*z_c + alpha_j.
inline Regressor affine_model3(const Vec& a, const Vec& b, const Vec& alpha) {
  OlsModel ols;
  ols.a = a;
  ols.b = b;
  ols.alpha = alpha;
  ols.uses_decision = true;
  Regressor reg;
  reg.model = ols;
  reg.d_x = 1;
  reg.d_y = 3;
  return reg;
}

// Kernel regressor over scalar x, z, y triples; piecewise-constant along z.
inline Regressor kernel_model(const std::vector<double>& xs,
                              const std::vector<double>& zs,
                              const std::vector<double>& ys,
                              double bandwidth) {
  const int n = static_cast<int>(xs.size());
  KernelModel km;
  km.train_x = Mat(n, 1);
  km.train_z = Vec(n);
  km.train_y = Mat(n, 1);
  for (int i = 0; i < n; ++i) {
    km.train_x(i, 0) = xs[i];
    km.train_z[i] = zs[i];
    km.train_y(i, 0) = ys[i];
  }
  km.bandwidth = bandwidth;
  km.uses_decision = true;
  Regressor reg;
  reg.model = km;
  reg.d_x = 1;
  reg.d_y = 1;
  return reg;
}

inline Mat residual_rows(const std::vector<double>& values) {
  Mat r(static_cast<int>(values.size()), 1);
  for (int i = 0; i < static_cast<int>(values.size()); ++i) r(i, 0) = values[i];
  return r;
}

}  // namespace ddro::fixtures
