#include "ddro/regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "json_util.hpp"

namespace ddro {

using nlohmann::json;

const char* to_string(RegressorKind kind) {
  switch (kind) {
    case RegressorKind::Ols: return "ols";
    case RegressorKind::Kernel: return "kernel";
    case RegressorKind::ReluNet: return "relu_nn";
  }
  return "?";
}

RegressorKind Regressor::kind() const {
  if (std::holds_alternative<OlsModel>(model)) return RegressorKind::Ols;
  if (std::holds_alternative<KernelModel>(model)) return RegressorKind::Kernel;
  return RegressorKind::ReluNet;
}

bool Regressor::uses_decision() const {
  return std::visit([](const auto& m) { return m.uses_decision; }, model);
}

namespace {

void require_regression_shape(const Dataset& data) {
  data.validate();
  if (data.d_z() != 1)
    throw std::invalid_argument(
        "regression expects a single decision column (the coupling "
        "decision); got d_z=" + std::to_string(data.d_z()));
}

// Design matrix [x | z | 1], or [x | 1] when the decision is excluded.
Mat build_design(const Dataset& data, bool include_decision) {
  int n = data.n();
  int cols = data.d_x() + (include_decision ? 1 : 0) + 1;
  Mat d(n, cols);
  d.leftCols(data.d_x()) = data.x;
  if (include_decision) d.col(data.d_x()) = data.z.col(0);
  d.col(cols - 1).setOnes();
  return d;
}

std::string design_column_name(int j, int d_x, bool include_decision) {
  if (j < d_x) return "x_" + std::to_string(j);
  if (include_decision && j == d_x) return "z";
  return "intercept";
}

}  // namespace

Regressor fit_ols(const Dataset& data, bool include_decision) {
  require_regression_shape(data);
  int min_rows = data.d_x() + data.d_z() + 1;
  if (data.n() < min_rows)
    throw std::invalid_argument("ols needs at least " +
                                std::to_string(min_rows) + " rows, got " +
                                std::to_string(data.n()));

  Mat design = build_design(data, include_decision);
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) {
    // Columns permuted past the numerical rank are the dependent ones.
    const auto& perm = qr.colsPermutation().indices();
    std::ostringstream msg;
    msg << "ols design is rank deficient (rank " << qr.rank() << " of "
        << design.cols() << "); dependent columns:";
    for (int k = static_cast<int>(qr.rank()); k < design.cols(); ++k)
      msg << ' ' << design_column_name(perm[k], data.d_x(), include_decision);
    throw std::invalid_argument(msg.str());
  }

  Mat coeffs = qr.solve(data.y);  // cols x d_y

  OlsModel ols;
  ols.uses_decision = include_decision;
  ols.a = coeffs.topRows(data.d_x()).transpose();
  ols.b = include_decision ? Vec(coeffs.row(data.d_x()).transpose())
                           : Vec(Vec::Zero(data.d_y()));
  ols.alpha = coeffs.row(coeffs.rows() - 1).transpose();

  Regressor r;
  r.model = std::move(ols);
  r.d_x = data.d_x();
  r.d_y = data.d_y();
  return r;
}

Regressor fit_kernel(const Dataset& data, double bandwidth,
                     bool include_decision) {
  require_regression_shape(data);
  if (!(bandwidth > 0.0))
    throw std::invalid_argument("kernel bandwidth must be positive");

  KernelModel k;
  k.train_x = data.x;
  k.train_z = data.z.col(0);
  k.train_y = data.y;
  k.bandwidth = bandwidth;
  k.uses_decision = include_decision;

  Regressor r;
  r.model = std::move(k);
  r.d_x = data.d_x();
  r.d_y = data.d_y();
  return r;
}

namespace {

// Average of training targets inside the bandwidth ball. Shared by
// prediction and by the embedding so both produce bit-identical values.
Vec kernel_average(const KernelModel& k, const Vec& x, double z_c) {
  double h2 = k.bandwidth * k.bandwidth;
  Vec sum = Vec::Zero(k.train_y.cols());
  int count = 0;
  for (int i = 0; i < k.train_x.rows(); ++i) {
    double d2 = (k.train_x.row(i).transpose() - x).squaredNorm();
    if (k.uses_decision) {
      double dz = z_c - k.train_z[i];
      d2 += dz * dz;
    }
    if (d2 <= h2) {
      sum += k.train_y.row(i).transpose();
      ++count;
    }
  }
  if (count == 0) {
    std::ostringstream msg;
    msg << "kernel neighborhood empty at z_c=" << z_c
        << " (bandwidth " << k.bandwidth << ", " << k.train_x.rows()
        << " training points)";
    throw EmptyNeighborhood(msg.str());
  }
  return sum / static_cast<double>(count);
}

Vec relu_forward(const ReluNetModel& net, const Vec& input) {
  Vec hidden = (net.w1 * input + net.b1).cwiseMax(0.0);
  return net.w2 * hidden + net.b2;
}

Vec nn_input(const ReluNetModel& net, const Vec& x, double z_c) {
  if (!net.uses_decision) return x;
  Vec u(x.size() + 1);
  u.head(x.size()) = x;
  u[x.size()] = z_c;
  return u;
}

}  // namespace

Vec predict(const Regressor& model, const Vec& x, double z_c) {
  if (static_cast<int>(x.size()) != model.d_x)
    throw std::invalid_argument("predict: covariate has size " +
                                std::to_string(x.size()) + ", model expects " +
                                std::to_string(model.d_x));
  if (const auto* ols = std::get_if<OlsModel>(&model.model)) {
    Vec out = ols->a * x + ols->alpha;
    if (ols->uses_decision) out += ols->b * z_c;
    return out;
  }
  if (const auto* k = std::get_if<KernelModel>(&model.model))
    return kernel_average(*k, x, z_c);
  const auto& net = std::get<ReluNetModel>(model.model);
  return relu_forward(net, nn_input(net, x, z_c));
}

ResidualSet residuals(const Regressor& model, const Dataset& data) {
  if (data.d_x() != model.d_x || data.d_y() != model.d_y || data.d_z() != 1)
    throw std::invalid_argument("residuals: dataset shape does not match model");
  ResidualSet out;
  out.residuals.resize(data.n(), data.d_y());
  for (int k = 0; k < data.n(); ++k) {
    Vec pred = predict(model, data.x.row(k).transpose(), data.z(k, 0));
    out.residuals.row(k) = data.y.row(k) - pred.transpose();
  }
  out.mean = out.residuals.colwise().mean().transpose();
  return out;
}

double nn_loss(const NnParams& params, const Mat& inputs, const Mat& targets) {
  Mat pre = (inputs * params.w1.transpose()).rowwise() + params.b1.transpose();
  Mat hidden = pre.cwiseMax(0.0);
  Mat pred = (hidden * params.w2.transpose()).rowwise() + params.b2.transpose();
  double n = static_cast<double>(inputs.rows());
  return (pred - targets).squaredNorm() / (2.0 * n);
}

double nn_loss_and_grad(const NnParams& params, const Mat& inputs,
                        const Mat& targets, NnParams& grad) {
  Mat pre = (inputs * params.w1.transpose()).rowwise() + params.b1.transpose();
  Mat hidden = pre.cwiseMax(0.0);
  Mat pred = (hidden * params.w2.transpose()).rowwise() + params.b2.transpose();
  double n = static_cast<double>(inputs.rows());
  Mat resid = (pred - targets) / n;  // n x d_y

  grad.w2 = resid.transpose() * hidden;
  grad.b2 = resid.colwise().sum().transpose();
  Mat back = resid * params.w2;  // n x width
  Mat mask = (pre.array() > 0.0).cast<double>();
  back = back.cwiseProduct(mask);
  grad.w1 = back.transpose() * inputs;
  grad.b1 = back.colwise().sum().transpose();

  return resid.squaredNorm() * n / 2.0;
}

Regressor fit_relu_nn(const Dataset& data, const NnTrainConfig& config) {
  require_regression_shape(data);
  if (config.hidden_width < 1)
    throw std::invalid_argument("hidden width must be at least 1");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be >= 0");

  int n = data.n();
  int d_in = data.d_x() + (config.include_decision ? 1 : 0);
  Mat inputs(n, d_in);
  inputs.leftCols(data.d_x()) = data.x;
  if (config.include_decision) inputs.col(data.d_x()) = data.z.col(0);

  // Standardize inputs and targets for training; the shifts and scales are
  // folded back into the weights below so the stored model is in raw units.
  Vec in_mean = inputs.colwise().mean().transpose();
  Vec in_scale(d_in);
  for (int j = 0; j < d_in; ++j) {
    double var = (inputs.col(j).array() - in_mean[j]).square().mean();
    in_scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  Vec out_mean = data.y.colwise().mean().transpose();
  Vec out_scale(data.d_y());
  for (int j = 0; j < data.d_y(); ++j) {
    double var = (data.y.col(j).array() - out_mean[j]).square().mean();
    out_scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  Mat u = (inputs.rowwise() - in_mean.transpose()) *
          in_scale.cwiseInverse().asDiagonal();
  Mat t = (data.y.rowwise() - out_mean.transpose()) *
          out_scale.cwiseInverse().asDiagonal();

  Rng rng(config.seed);
  int width = config.hidden_width;
  NnParams p;
  p.w1.resize(width, d_in);
  p.w2.resize(data.d_y(), width);
  double s1 = 1.0 / std::sqrt(static_cast<double>(d_in));
  double s2 = 1.0 / std::sqrt(static_cast<double>(width));
  for (int i = 0; i < width; ++i)
    for (int j = 0; j < d_in; ++j) p.w1(i, j) = rng.uniform(-s1, s1);
  for (int i = 0; i < data.d_y(); ++i)
    for (int j = 0; j < width; ++j) p.w2(i, j) = rng.uniform(-s2, s2);
  p.b1 = Vec::Zero(width);
  p.b2 = Vec::Zero(data.d_y());

  NnParams g;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = nn_loss_and_grad(p, u, t, g);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "nn training diverged at epoch " << epoch << " (loss " << loss
          << "); reduce learning_rate (current " << config.learning_rate
          << ")";
      throw std::runtime_error(msg.str());
    }
    p.w1 -= config.learning_rate * g.w1;
    p.b1 -= config.learning_rate * g.b1;
    p.w2 -= config.learning_rate * g.w2;
    p.b2 -= config.learning_rate * g.b2;
  }

  // Fold input standardization into layer 1 and target standardization
  // into layer 2: the stored network maps raw inputs to raw outputs.
  ReluNetModel net;
  net.uses_decision = config.include_decision;
  net.w1 = p.w1 * in_scale.cwiseInverse().asDiagonal();
  net.b1 = p.b1 - p.w1 * in_mean.cwiseQuotient(in_scale);
  net.w2 = out_scale.asDiagonal() * p.w2;
  net.b2 = out_scale.cwiseProduct(p.b2) + out_mean;

  Regressor r;
  r.model = std::move(net);
  r.d_x = data.d_x();
  r.d_y = data.d_y();
  return r;
}

int PiecewiseAffineEmbedding::piece_index(double z_c) const {
  if (pieces.empty()) return -1;
  if (z_c < breakpoints.front() || z_c > breakpoints.back()) return -1;
  auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), z_c);
  int idx = static_cast<int>(it - breakpoints.begin()) - 1;
  return std::min(idx, static_cast<int>(pieces.size()) - 1);
}

Vec PiecewiseAffineEmbedding::evaluate(double z_c) const {
  int idx = piece_index(z_c);
  if (idx < 0)
    throw std::out_of_range("embedding evaluated outside its range");
  const EmbeddingPiece& p = pieces[idx];
  if (!p.feasible)
    throw EmptyNeighborhood("embedding piece [" + std::to_string(p.lo) + ", " +
                            std::to_string(p.hi) + "] has no training point");
  return p.a + p.b * z_c;
}

namespace {

PiecewiseAffineEmbedding single_piece(double lo, double hi, Vec a, Vec b,
                                      bool feasible) {
  PiecewiseAffineEmbedding e;
  e.breakpoints = {lo, hi};
  EmbeddingPiece p;
  p.lo = lo;
  p.hi = hi;
  p.a = std::move(a);
  p.b = std::move(b);
  p.feasible = feasible;
  e.pieces.push_back(std::move(p));
  return e;
}

// Sorted interior candidates + the endpoints, deduplicated at a relative
// tolerance so twin breakpoints do not create sliver pieces.
std::vector<double> assemble_breakpoints(std::vector<double> interior,
                                         double lo, double hi) {
  double tol = 1e-12 * std::max(1.0, hi - lo);
  std::sort(interior.begin(), interior.end());
  std::vector<double> bp{lo};
  for (double v : interior) {
    if (v <= lo + tol || v >= hi - tol) continue;
    if (v - bp.back() > tol) bp.push_back(v);
  }
  bp.push_back(hi);
  return bp;
}

PiecewiseAffineEmbedding embed_kernel(const KernelModel& k, const Vec& x,
                                      double lo, double hi) {
  if (!k.uses_decision) {
    Vec a;
    bool feasible = true;
    try {
      a = kernel_average(k, x, 0.0);
    } catch (const EmptyNeighborhood&) {
      feasible = false;
      a = Vec::Zero(k.train_y.cols());
    }
    return single_piece(lo, hi, std::move(a), Vec::Zero(k.train_y.cols()),
                        feasible);
  }

  // Membership of point i flips where (z_c - z_i)^2 = h^2 - ||x - x_i||^2.
  double h2 = k.bandwidth * k.bandwidth;
  std::vector<double> interior;
  for (int i = 0; i < k.train_x.rows(); ++i) {
    double slack = h2 - (k.train_x.row(i).transpose() - x).squaredNorm();
    if (slack < 0.0) continue;
    double half = std::sqrt(slack);
    interior.push_back(k.train_z[i] - half);
    interior.push_back(k.train_z[i] + half);
  }

  PiecewiseAffineEmbedding e;
  e.breakpoints = assemble_breakpoints(std::move(interior), lo, hi);
  for (size_t j = 0; j + 1 < e.breakpoints.size(); ++j) {
    EmbeddingPiece p;
    p.lo = e.breakpoints[j];
    p.hi = e.breakpoints[j + 1];
    p.b = Vec::Zero(k.train_y.cols());
    try {
      p.a = kernel_average(k, x, 0.5 * (p.lo + p.hi));
    } catch (const EmptyNeighborhood&) {
      p.feasible = false;
      p.a = Vec::Zero(k.train_y.cols());
    }
    e.pieces.push_back(std::move(p));
  }
  return e;
}

PiecewiseAffineEmbedding embed_relu(const ReluNetModel& net, const Vec& x,
                                    double lo, double hi) {
  int d_y = static_cast<int>(net.b2.size());
  if (!net.uses_decision)
    return single_piece(lo, hi, relu_forward(net, x), Vec::Zero(d_y), true);

  int d_x = static_cast<int>(x.size());
  // Pre-activation of unit i along the slice: base_i + slope_i * z_c.
  Vec base = net.w1.leftCols(d_x) * x + net.b1;
  Vec slope = net.w1.col(d_x);

  std::vector<double> interior;
  for (int i = 0; i < base.size(); ++i)
    if (slope[i] != 0.0) interior.push_back(-base[i] / slope[i]);

  PiecewiseAffineEmbedding e;
  e.breakpoints = assemble_breakpoints(std::move(interior), lo, hi);
  for (size_t j = 0; j + 1 < e.breakpoints.size(); ++j) {
    EmbeddingPiece p;
    p.lo = e.breakpoints[j];
    p.hi = e.breakpoints[j + 1];
    double mid = 0.5 * (p.lo + p.hi);
    p.a = net.b2;
    p.b = Vec::Zero(d_y);
    for (int i = 0; i < base.size(); ++i) {
      if (base[i] + slope[i] * mid <= 0.0) continue;  // unit inactive here
      p.a += net.w2.col(i) * base[i];
      p.b += net.w2.col(i) * slope[i];
    }
    e.pieces.push_back(std::move(p));
  }
  return e;
}

}  // namespace

PiecewiseAffineEmbedding embed(const Regressor& model, const Vec& x,
                               double lo, double hi) {
  if (!(lo < hi))
    throw std::invalid_argument("embed: need lo < hi");
  if (static_cast<int>(x.size()) != model.d_x)
    throw std::invalid_argument("embed: covariate size mismatch");

  if (const auto* ols = std::get_if<OlsModel>(&model.model)) {
    Vec a = ols->a * x + ols->alpha;
    Vec b = ols->uses_decision ? ols->b : Vec(Vec::Zero(model.d_y));
    return single_piece(lo, hi, std::move(a), std::move(b), true);
  }
  if (const auto* k = std::get_if<KernelModel>(&model.model))
    return embed_kernel(*k, x, lo, hi);
  return embed_relu(std::get<ReluNetModel>(model.model), x, lo, hi);
}

std::string regressor_to_json(const Regressor& model) {
  json j;
  j["kind"] = to_string(model.kind());
  j["d_x"] = model.d_x;
  j["d_y"] = model.d_y;
  j["uses_decision"] = model.uses_decision();
  if (const auto* ols = std::get_if<OlsModel>(&model.model)) {
    j["a"] = detail::mat_to_json(ols->a);
    j["b"] = detail::vec_to_json(ols->b);
    j["alpha"] = detail::vec_to_json(ols->alpha);
  } else if (const auto* k = std::get_if<KernelModel>(&model.model)) {
    j["train_x"] = detail::mat_to_json(k->train_x);
    j["train_z"] = detail::vec_to_json(k->train_z);
    j["train_y"] = detail::mat_to_json(k->train_y);
    j["bandwidth"] = k->bandwidth;
  } else {
    const auto& net = std::get<ReluNetModel>(model.model);
    j["w1"] = detail::mat_to_json(net.w1);
    j["b1"] = detail::vec_to_json(net.b1);
    j["w2"] = detail::mat_to_json(net.w2);
    j["b2"] = detail::vec_to_json(net.b2);
  }
  return j.dump(2) + "\n";
}

Regressor regressor_from_json(const std::string& text) {
  json j = json::parse(text);
  std::string kind = j.at("kind").get<std::string>();
  Regressor r;
  r.d_x = j.at("d_x").get<int>();
  r.d_y = j.at("d_y").get<int>();
  bool uses_decision = j.at("uses_decision").get<bool>();
  if (kind == "ols") {
    OlsModel ols;
    ols.a = detail::mat_from_json(j.at("a"));
    ols.b = detail::vec_from_json(j.at("b"));
    ols.alpha = detail::vec_from_json(j.at("alpha"));
    ols.uses_decision = uses_decision;
    r.model = std::move(ols);
  } else if (kind == "kernel") {
    KernelModel k;
    k.train_x = detail::mat_from_json(j.at("train_x"));
    k.train_z = detail::vec_from_json(j.at("train_z"));
    k.train_y = detail::mat_from_json(j.at("train_y"));
    k.bandwidth = j.at("bandwidth").get<double>();
    k.uses_decision = uses_decision;
    r.model = std::move(k);
  } else if (kind == "relu_nn") {
    ReluNetModel net;
    net.w1 = detail::mat_from_json(j.at("w1"));
    net.b1 = detail::vec_from_json(j.at("b1"));
    net.w2 = detail::mat_from_json(j.at("w2"));
    net.b2 = detail::vec_from_json(j.at("b2"));
    net.uses_decision = uses_decision;
    r.model = std::move(net);
  } else {
    throw std::runtime_error("unknown regressor kind '" + kind + "'");
  }
  return r;
}

}  // namespace ddro
