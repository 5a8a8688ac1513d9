#include "ddro/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ddro/io_util.hpp"
#include "json_util.hpp"

namespace ddro {

using nlohmann::json;

void Dataset::validate() const {
  if (x.rows() == 0) throw std::invalid_argument("dataset is empty");
  if (z.rows() != x.rows() || y.rows() != x.rows())
    throw std::invalid_argument("dataset blocks disagree on the sample count");
  if (y.cols() == 0) throw std::invalid_argument("dataset has no outcome columns");
  if (!x.allFinite() || !z.allFinite() || !y.allFinite())
    throw std::invalid_argument("dataset contains non-finite values");
}

Dataset dataset_from_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  int d_x = 0, d_z = 0, d_y = 0;
  for (const auto& name : t.header) {
    if (name.rfind("x_", 0) == 0)
      ++d_x;
    else if (name.rfind("z_", 0) == 0)
      ++d_z;
    else if (name.rfind("y_", 0) == 0)
      ++d_y;
    else
      throw std::runtime_error("unexpected dataset column: " + name);
  }
  int n = static_cast<int>(t.rows.size());
  Dataset d;
  d.x.resize(n, d_x);
  d.z.resize(n, d_z);
  d.y.resize(n, d_y);
  for (int k = 0; k < n; ++k) {
    const auto& row = t.rows[k];
    for (int j = 0; j < d_x; ++j) d.x(k, j) = std::stod(row[j]);
    for (int j = 0; j < d_z; ++j) d.z(k, j) = std::stod(row[d_x + j]);
    for (int j = 0; j < d_y; ++j) d.y(k, j) = std::stod(row[d_x + d_z + j]);
  }
  d.validate();
  return d;
}

void dataset_to_csv(const Dataset& data, const std::string& path) {
  CsvTable t;
  for (int j = 0; j < data.d_x(); ++j) t.header.push_back("x_" + std::to_string(j));
  for (int j = 0; j < data.d_z(); ++j) t.header.push_back("z_" + std::to_string(j));
  for (int j = 0; j < data.d_y(); ++j) t.header.push_back("y_" + std::to_string(j));
  for (int k = 0; k < data.n(); ++k) {
    std::vector<std::string> row;
    for (int j = 0; j < data.d_x(); ++j) row.push_back(fmt_double(data.x(k, j)));
    for (int j = 0; j < data.d_z(); ++j) row.push_back(fmt_double(data.z(k, j)));
    for (int j = 0; j < data.d_y(); ++j) row.push_back(fmt_double(data.y(k, j)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

bool AffineMapInZ::depends_on(int zi) const {
  if (zi < 0 || zi >= d_z()) return false;
  return coeffs[zi].cwiseAbs().maxCoeff() > 0.0;
}

void AffineMapInZ::validate(const std::string& what) const {
  for (const auto& c : coeffs) {
    if (c.rows() != constant.rows() || c.cols() != constant.cols())
      throw std::invalid_argument(what + ": coefficient block shape mismatch");
  }
}

Mat evaluate_affine(const AffineMapInZ& map, const Vec& z) {
  if (z.size() != map.d_z())
    throw std::invalid_argument("evaluate_affine: z dimension mismatch");
  Mat out = map.constant;
  for (int i = 0; i < map.d_z(); ++i)
    if (z[i] != 0.0) out += z[i] * map.coeffs[i];
  return out;
}

Vec project(const SupportSet& support, const Vec& y) {
  if (support.kind == SupportSet::Kind::AllSpace) return y;
  if (support.lower.size() != y.size() || support.upper.size() != y.size())
    throw std::invalid_argument("project: support box dimension mismatch");
  return y.cwiseMax(support.lower).cwiseMin(support.upper);
}

void TwoStageInstance::validate() const {
  const int dz = d_z();
  if (dz == 0) throw std::invalid_argument("instance has no first stage variables");
  if (z_lower.size() != dz || z_upper.size() != dz)
    throw std::invalid_argument("Z_box dimension disagrees with c_z");
  for (int i = 0; i < dz; ++i)
    if (z_lower[i] > z_upper[i])
      throw std::invalid_argument("Z_box has a crossed bound at coordinate " +
                                  std::to_string(i));
  if (W.rows() != T.constant.rows() || W.rows() != h.constant.rows())
    throw std::invalid_argument("W, T, h disagree on the number of recourse rows");
  if (h.constant.cols() != 1)
    throw std::invalid_argument("h must be vector valued (one column)");
  if (q.size() != W.cols())
    throw std::invalid_argument("q dimension disagrees with W");
  if (T.d_z() != dz || h.d_z() != dz)
    throw std::invalid_argument("T or h coefficient count disagrees with d_z");
  T.validate("T");
  h.validate("h");
  if (coupling_index < 0 || coupling_index >= dz)
    throw std::invalid_argument("coupling_index out of range");
  if (risk.theta < 0.0 || risk.theta >= 1.0)
    throw std::invalid_argument("risk theta must lie in [0, 1)");
  if (risk.rho < 0.0) throw std::invalid_argument("risk rho must be nonnegative");
  if (support.kind == SupportSet::Kind::Box &&
      (support.lower.size() != d_y() || support.upper.size() != d_y()))
    throw std::invalid_argument("support box dimension disagrees with d_y");
}

TwoStageInstance augment_cvar(const TwoStageInstance& inst, double eta_lower,
                              double eta_upper) {
  inst.validate();
  if (inst.cvar_augmented)
    throw std::invalid_argument("instance is already CVaR augmented");
  if (eta_lower > eta_upper)
    throw std::invalid_argument("augment_cvar: crossed eta bounds");
  const double rho = inst.risk.rho;
  const double theta = inst.risk.theta;
  const int M = inst.n_rows();
  const int dw = inst.d_omega();
  const int dz = inst.d_z();
  const int dy = inst.d_y();

  TwoStageInstance out;
  out.c_z.resize(dz + 1);
  out.c_z << inst.c_z, rho;
  out.z_lower.resize(dz + 1);
  out.z_lower << inst.z_lower, eta_lower;
  out.z_upper.resize(dz + 1);
  out.z_upper << inst.z_upper, eta_upper;

  // Recourse variables become (w, t, u); cost lives on t and u only.
  out.q = Vec::Zero(dw + 2);
  out.q[dw] = 1.0;
  out.q[dw + 1] = rho / (1.0 - theta);

  out.W = Mat::Zero(M + 3, dw + 2);
  out.W.topLeftCorner(M, dw) = inst.W;
  out.W.row(M).head(dw) = -inst.q.transpose();  // t - q'w >= 0
  out.W(M, dw) = 1.0;
  out.W(M + 1, dw) = -1.0;  // u - t >= -eta
  out.W(M + 1, dw + 1) = 1.0;
  out.W(M + 2, dw + 1) = 1.0;  // u >= 0

  out.T.constant = Mat::Zero(M + 3, dy);
  out.T.constant.topRows(M) = inst.T.constant;
  out.h.constant = Mat::Zero(M + 3, 1);
  out.h.constant.topRows(M) = inst.h.constant;
  out.T.coeffs.resize(dz + 1);
  out.h.coeffs.resize(dz + 1);
  for (int i = 0; i < dz; ++i) {
    out.T.coeffs[i] = Mat::Zero(M + 3, dy);
    out.T.coeffs[i].topRows(M) = inst.T.coeffs[i];
    out.h.coeffs[i] = Mat::Zero(M + 3, 1);
    out.h.coeffs[i].topRows(M) = inst.h.coeffs[i];
  }
  out.T.coeffs[dz] = Mat::Zero(M + 3, dy);
  out.h.coeffs[dz] = Mat::Zero(M + 3, 1);
  out.h.coeffs[dz](M + 1, 0) = -1.0;

  out.coupling_index = inst.coupling_index;
  out.risk = inst.risk;
  out.support = inst.support;
  out.cvar_augmented = true;
  out.eta_index = dz;
  out.validate();
  return out;
}

double empirical_cvar(const std::vector<double>& costs, double theta) {
  if (costs.empty()) throw std::invalid_argument("empirical_cvar: empty sample");
  if (theta < 0.0 || theta >= 1.0)
    throw std::invalid_argument("empirical_cvar: theta must lie in [0, 1)");
  std::vector<double> sorted = costs;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const double m = static_cast<double>(sorted.size());
  const double atom = 1.0 / m;
  double remaining = 1.0 - theta;
  double acc = 0.0;
  for (double c : sorted) {
    double take = std::min(atom, remaining);
    acc += take * c;
    remaining -= take;
    if (remaining <= 0.0) break;
  }
  return acc / (1.0 - theta);
}

double mean_cvar(const std::vector<double>& costs, double rho, double theta) {
  double mean = std::accumulate(costs.begin(), costs.end(), 0.0) /
                static_cast<double>(costs.size());
  if (rho == 0.0) return mean;
  return mean + rho * empirical_cvar(costs, theta);
}

using detail::mat_from_json;
using detail::mat_to_json;
using detail::vec_from_json;
using detail::vec_to_json;

std::string instance_to_json(const TwoStageInstance& inst) {
  inst.validate();
  json j;
  j["c_z"] = vec_to_json(inst.c_z);
  j["Z_box"]["lower"] = vec_to_json(inst.z_lower);
  j["Z_box"]["upper"] = vec_to_json(inst.z_upper);
  j["q"] = vec_to_json(inst.q);
  j["W"] = mat_to_json(inst.W);
  j["T"]["constant"] = mat_to_json(inst.T.constant);
  json tc = json::array();
  for (const auto& m : inst.T.coeffs) tc.push_back(mat_to_json(m));
  j["T"]["coeffs"] = std::move(tc);
  j["h"]["constant"] = vec_to_json(inst.h.constant.col(0));
  json hc = json::array();
  for (const auto& m : inst.h.coeffs) hc.push_back(vec_to_json(m.col(0)));
  j["h"]["coeffs"] = std::move(hc);
  j["coupling_index"] = inst.coupling_index;
  j["risk"]["rho"] = inst.risk.rho;
  j["risk"]["theta"] = inst.risk.theta;
  if (inst.support.kind == SupportSet::Kind::AllSpace) {
    j["support"]["kind"] = "all_space";
  } else {
    j["support"]["kind"] = "box";
    j["support"]["lower"] = vec_to_json(inst.support.lower);
    j["support"]["upper"] = vec_to_json(inst.support.upper);
  }
  if (inst.cvar_augmented) {
    j["cvar_augmented"] = true;
    j["eta_index"] = inst.eta_index;
  }
  return j.dump(2) + "\n";
}

TwoStageInstance instance_from_json(const std::string& text) {
  json j = json::parse(text);
  TwoStageInstance inst;
  inst.c_z = vec_from_json(j.at("c_z"));
  inst.z_lower = vec_from_json(j.at("Z_box").at("lower"));
  inst.z_upper = vec_from_json(j.at("Z_box").at("upper"));
  inst.q = vec_from_json(j.at("q"));
  inst.W = mat_from_json(j.at("W"));
  inst.T.constant = mat_from_json(j.at("T").at("constant"));
  for (const auto& m : j.at("T").at("coeffs")) inst.T.coeffs.push_back(mat_from_json(m));
  Vec h0 = vec_from_json(j.at("h").at("constant"));
  inst.h.constant = h0;
  for (const auto& v : j.at("h").at("coeffs")) {
    Vec hv = vec_from_json(v);
    inst.h.coeffs.push_back(hv);
  }
  inst.coupling_index = j.at("coupling_index").get<int>();
  inst.risk.rho = j.at("risk").at("rho").get<double>();
  inst.risk.theta = j.at("risk").at("theta").get<double>();
  std::string kind = j.at("support").at("kind").get<std::string>();
  if (kind == "all_space") {
    inst.support.kind = SupportSet::Kind::AllSpace;
  } else if (kind == "box") {
    inst.support.kind = SupportSet::Kind::Box;
    inst.support.lower = vec_from_json(j.at("support").at("lower"));
    inst.support.upper = vec_from_json(j.at("support").at("upper"));
  } else {
    throw std::runtime_error("unknown support kind: " + kind);
  }
  if (j.contains("cvar_augmented")) {
    inst.cvar_augmented = j.at("cvar_augmented").get<bool>();
    inst.eta_index = j.at("eta_index").get<int>();
  }
  inst.validate();
  return inst;
}

void instance_to_file(const TwoStageInstance& inst, const std::string& path) {
  write_text_file(path, instance_to_json(inst));
}

TwoStageInstance instance_from_file(const std::string& path) {
  return instance_from_json(read_text_file(path));
}

}  // namespace ddro
