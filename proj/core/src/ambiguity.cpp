#include "ddro/ambiguity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ddro/io_util.hpp"
#include "ddro/lp.hpp"
#include "ddro/regression.hpp"
#include "ddro/rng.hpp"

namespace ddro {

void DiscreteDistribution::validate() const {
  if (atoms.rows() == 0) throw std::invalid_argument("distribution has no atoms");
  if (weights.size() != atoms.rows())
    throw std::invalid_argument("weight count does not match atom count");
  double total = 0.0;
  for (int i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0)
      throw std::invalid_argument("negative weight at atom " + std::to_string(i));
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("weights sum to " + std::to_string(total) +
                                ", expected 1");
}

DiscreteDistribution empirical_residual_distribution(const ResidualSet& res) {
  int n = static_cast<int>(res.residuals.rows());
  if (n < 1) throw std::invalid_argument("need at least one residual");
  DiscreteDistribution d;
  d.atoms = res.residuals;
  d.weights = Vec::Constant(n, 1.0 / static_cast<double>(n));
  return d;
}

double wasserstein_distance(const DiscreteDistribution& p1,
                            const DiscreteDistribution& p2, int p,
                            GroundNorm norm) {
  p1.validate();
  p2.validate();
  if (p1.dim() != p2.dim())
    throw std::invalid_argument("atom dimensions differ");
  if (p != 1 && p != 2) throw std::invalid_argument("p must be 1 or 2");

  int m1 = p1.size(), m2 = p2.size();
  LinearProgram lp = LinearProgram::make(m1 * m2, m1 + m2);
  for (int i = 0; i < m1; ++i) {
    for (int j = 0; j < m2; ++j) {
      Vec diff = p1.atoms.row(i) - p2.atoms.row(j);
      double dist =
          norm == GroundNorm::L1 ? diff.lpNorm<1>() : diff.norm();
      int v = i * m2 + j;
      lp.c[v] = p == 1 ? dist : dist * dist;
      lp.lower[v] = 0.0;
      lp.add_entry(i, v, 1.0);
      lp.add_entry(m1 + j, v, 1.0);
    }
  }
  for (int i = 0; i < m1; ++i) {
    lp.sense[i] = RowSense::Eq;
    lp.rhs[i] = p1.weights[i];
  }
  for (int j = 0; j < m2; ++j) {
    lp.sense[m1 + j] = RowSense::Eq;
    lp.rhs[m1 + j] = p2.weights[j];
  }

  LpSolution sol = solve_lp(lp);
  if (sol.status != LpStatus::Optimal)
    throw std::runtime_error(std::string("transport LP ended ") +
                             to_string(sol.status));
  double value = std::max(0.0, sol.objective);
  return p == 1 ? value : std::sqrt(value);
}

void RadiusSpec::validate() const {
  if (mode == RadiusMode::Fixed) {
    if (fixed_value < 0.0) throw std::invalid_argument("radius must be >= 0");
    return;
  }
  if (mode == RadiusMode::Theoretical) {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("alpha must lie in (0,1)");
    for (double v : {C1, C2, C3})
      if (v < 0.0) throw std::invalid_argument("C constants must be >= 0");
    for (double v : {c1, c2, c3})
      if (!(v > 0.0)) throw std::invalid_argument("c constants must be > 0");
    return;
  }
  if (candidates.empty())
    throw std::invalid_argument("cross-validated mode needs candidates");
  for (double v : candidates)
    if (v < 0.0) throw std::invalid_argument("candidate radii must be >= 0");
}

double theoretical_radius(const RadiusSpec& spec, int n, const Vec& x) {
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0,1)");
  if (n < 1) throw std::invalid_argument("n must be positive");

  double quarter = spec.alpha / 4.0;
  double log_q = std::log(1.0 / quarter);
  double nn = static_cast<double>(n);
  double cov_term = std::sqrt((spec.C1 * x.squaredNorm() + spec.C3) / nn * log_q);
  double pool_term = std::sqrt(spec.C2 / nn * log_q);
  double conc_term =
      std::pow(std::log(2.0 * spec.c1 / spec.alpha) / (spec.c2 * nn),
               1.0 / spec.c3);
  return cov_term + pool_term + conc_term;
}

Dataset drop_row(const Dataset& data, int k) {
  if (k < 0 || k >= data.n())
    throw std::out_of_range("drop_row: index " + std::to_string(k));
  Dataset out;
  int n = data.n();
  out.x.resize(n - 1, data.d_x());
  out.z.resize(n - 1, data.d_z());
  out.y.resize(n - 1, data.d_y());
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (i == k) continue;
    out.x.row(r) = data.x.row(i);
    out.z.row(r) = data.z.row(i);
    out.y.row(r) = data.y.row(i);
    ++r;
  }
  return out;
}

LoocvSelection radius_by_loocv(const Dataset& data,
                               const std::vector<double>& candidates,
                               const LoocvHooks& hooks) {
  if (candidates.empty())
    throw std::invalid_argument("loocv needs at least one candidate radius");
  if (!hooks.solve_at || !hooks.realized_cost)
    throw std::invalid_argument("loocv hooks are not set");
  data.validate();

  LoocvSelection out;
  int n = data.n();
  out.folds.resize(n);
  for (int i = 0; i < n; ++i) out.folds[i] = i;
  if (hooks.fold_cap > 0 && hooks.fold_cap < n) {
    // Deterministic partial Fisher-Yates; the same folds score every
    // candidate so the comparison stays paired.
    Rng rng(hooks.fold_seed);
    for (int i = 0; i < hooks.fold_cap; ++i) {
      int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
      std::swap(out.folds[i], out.folds[j]);
    }
    out.folds.resize(hooks.fold_cap);
    std::sort(out.folds.begin(), out.folds.end());
  }

  CsvTable log;
  log.header = {"candidate", "fold", "realized_cost"};

  for (double radius : candidates) {
    LoocvCandidateRow row;
    row.radius = radius;
    double total = 0.0;
    for (int k : out.folds) {
      if (row.failed) break;
      try {
        Dataset train = drop_row(data, k);
        Vec z = hooks.solve_at(train, data.x.row(k).transpose(), radius);
        double cost = hooks.realized_cost(z, data.y.row(k).transpose());
        if (!std::isfinite(cost))
          throw std::runtime_error("non-finite fold cost");
        total += cost;
        ++row.folds_evaluated;
        log.rows.push_back({fmt_double(radius), std::to_string(k),
                            fmt_double(cost)});
      } catch (const std::exception&) {
        row.failed = true;
      }
    }
    if (row.failed) {
      row.folds_evaluated = 0;
      row.mean_cost = 0.0;
    } else {
      row.mean_cost = total / static_cast<double>(row.folds_evaluated);
    }
    out.table.push_back(row);
  }

  const LoocvCandidateRow* best = nullptr;
  for (const auto& row : out.table) {
    if (row.failed) continue;
    // Strict improvement required: equal means keep the earlier (smaller
    // or equal) radius, and candidates are scanned in the given order.
    if (!best || row.mean_cost < best->mean_cost ||
        (row.mean_cost == best->mean_cost && row.radius < best->radius))
      best = &row;
  }
  if (!best)
    throw std::runtime_error("every loocv candidate failed");
  out.chosen = best->radius;

  if (!hooks.fold_csv_path.empty()) write_csv(hooks.fold_csv_path, log);
  return out;
}

}  // namespace ddro
