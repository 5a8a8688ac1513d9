#include "ddro/lp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ddro/io_util.hpp"
#include "ddro/rng.hpp"

namespace ddro {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration_limit";
    case LpStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

LinearProgram LinearProgram::make(int vars, int rows) {
  LinearProgram lp;
  lp.n_vars = vars;
  lp.n_rows = rows;
  lp.c = Vec::Zero(vars);
  lp.sense.assign(rows, RowSense::Ge);
  lp.rhs = Vec::Zero(rows);
  lp.lower = Vec::Constant(vars, -kInf);
  lp.upper = Vec::Constant(vars, kInf);
  return lp;
}

void LinearProgram::add_entry(int row, int col, double value) {
  if (row < 0 || row >= n_rows || col < 0 || col >= n_vars)
    throw std::out_of_range("LinearProgram::add_entry index out of range");
  if (value == 0.0) return;
  e_row.push_back(row);
  e_col.push_back(col);
  e_val.push_back(value);
}

void LinearProgram::validate() const {
  if (static_cast<int>(c.size()) != n_vars || static_cast<int>(rhs.size()) != n_rows ||
      static_cast<int>(sense.size()) != n_rows ||
      static_cast<int>(lower.size()) != n_vars ||
      static_cast<int>(upper.size()) != n_vars)
    throw std::invalid_argument("LinearProgram: inconsistent sizes");
  for (int j = 0; j < n_vars; ++j)
    if (lower[j] > upper[j])
      throw std::invalid_argument("LinearProgram: crossed bounds on variable " +
                                  std::to_string(j));
  for (size_t k = 0; k < e_val.size(); ++k)
    if (!std::isfinite(e_val[k]))
      throw std::invalid_argument("LinearProgram: non-finite matrix entry");
}

namespace {

enum class VarState : std::uint8_t { AtLower, AtUpper, Basic };

struct Eta {
  int r;
  Vec d;
};

// Nearest power of two to 1/sqrt(lo*hi), the geometric-mean equilibrant of
// a row or column whose nonzero magnitudes span [lo, hi]. Powers of two
// only touch the exponent, so scaling is exact and fully reversible.
double pow2_equilibrant(double lo, double hi) {
  if (!(lo > 0.0) || !(hi > 0.0) || !std::isfinite(lo) || !std::isfinite(hi))
    return 1.0;
  double r = std::round(-0.5 * std::log2(lo * hi));
  return std::exp2(std::clamp(r, -512.0, 512.0));
}

class Simplex {
 public:
  Simplex(const LinearProgram& lp, const LpOptions& opts)
      : opts_(opts), m_(lp.n_rows), n_struct_(lp.n_vars) {
    lp.validate();
    maximize_ = lp.maximize;
    b_ = lp.rhs;

    // Geometric-mean equilibration, two sweeps, factors snapped to powers
    // of two. Master problems mix curvature tangents near 1 with cut rows
    // and threshold bounds in the 1e7 range; without scaling the pivot and
    // feasibility tolerances cannot serve both ends of that spectrum.
    row_fac_ = Vec::Ones(m_);
    col_fac_ = Vec::Ones(n_struct_);
    for (int pass = 0; pass < 2; ++pass) {
      Vec lo = Vec::Constant(m_, kInf), hi = Vec::Zero(m_);
      for (size_t k = 0; k < lp.e_val.size(); ++k) {
        double v = std::abs(lp.e_val[k]) * row_fac_[lp.e_row[k]] *
                   col_fac_[lp.e_col[k]];
        if (v == 0.0) continue;
        lo[lp.e_row[k]] = std::min(lo[lp.e_row[k]], v);
        hi[lp.e_row[k]] = std::max(hi[lp.e_row[k]], v);
      }
      for (int i = 0; i < m_; ++i)
        row_fac_[i] *= pow2_equilibrant(lo[i], hi[i]);
      Vec clo = Vec::Constant(n_struct_, kInf), chi = Vec::Zero(n_struct_);
      for (size_t k = 0; k < lp.e_val.size(); ++k) {
        double v = std::abs(lp.e_val[k]) * row_fac_[lp.e_row[k]] *
                   col_fac_[lp.e_col[k]];
        if (v == 0.0) continue;
        clo[lp.e_col[k]] = std::min(clo[lp.e_col[k]], v);
        chi[lp.e_col[k]] = std::max(chi[lp.e_col[k]], v);
      }
      for (int j = 0; j < n_struct_; ++j)
        col_fac_[j] *= pow2_equilibrant(clo[j], chi[j]);
    }
    b_.array() *= row_fac_.array();

    // CSC with slack columns appended after the structurals. The slack of
    // a scaled row is the scaled slack, so its coefficient stays one.
    int n0 = n_struct_ + m_;
    std::vector<std::vector<std::pair<int, double>>> cols(n0);
    for (size_t k = 0; k < lp.e_val.size(); ++k)
      cols[lp.e_col[k]].push_back(
          {lp.e_row[k],
           lp.e_val[k] * row_fac_[lp.e_row[k]] * col_fac_[lp.e_col[k]]});
    lb_ = Vec::Zero(n0);
    ub_ = Vec::Zero(n0);
    lb_.head(n_struct_) = lp.lower.array() / col_fac_.array();
    ub_.head(n_struct_) = lp.upper.array() / col_fac_.array();
    base_cost_ = Vec::Zero(n0);
    base_cost_.head(n_struct_) = maximize_ ? Vec(-lp.c) : lp.c;
    base_cost_.head(n_struct_).array() *= col_fac_.array();
    for (int i = 0; i < m_; ++i) {
      int j = n_struct_ + i;
      cols[j].push_back({i, 1.0});
      switch (lp.sense[i]) {
        case RowSense::Le: lb_[j] = 0.0; ub_[j] = kInf; break;
        case RowSense::Ge: lb_[j] = -kInf; ub_[j] = 0.0; break;
        case RowSense::Eq: lb_[j] = 0.0; ub_[j] = 0.0; break;
      }
    }
    col_start_.assign(n0 + 1, 0);
    for (int j = 0; j < n0; ++j) {
      // merge duplicates within a column
      std::sort(cols[j].begin(), cols[j].end());
      std::vector<std::pair<int, double>> merged;
      for (auto& [r, v] : cols[j]) {
        if (!merged.empty() && merged.back().first == r)
          merged.back().second += v;
        else
          merged.push_back({r, v});
      }
      cols[j] = std::move(merged);
      col_start_[j + 1] = col_start_[j] + static_cast<int>(cols[j].size());
    }
    col_row_.resize(col_start_[n0]);
    col_val_.resize(col_start_[n0]);
    for (int j = 0; j < n0; ++j) {
      int at = col_start_[j];
      for (auto& [r, v] : cols[j]) {
        col_row_[at] = r;
        col_val_[at] = v;
        ++at;
      }
    }
    n_cols_ = n0;

    row_scale_ = Vec::Ones(m_);
    for (int j = 0; j < n0; ++j)
      for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
        row_scale_[col_row_[k]] =
            std::max(row_scale_[col_row_[k]], std::abs(col_val_[k]));
    for (int i = 0; i < m_; ++i)
      row_scale_[i] = std::max(row_scale_[i], std::abs(b_[i]));
  }

  LpSolution solve(const LpBasis* warm) {
    LpSolution sol;
    if (m_ == 0) return solve_boxed(sol);

    bool warm_ok = warm && warm->valid && try_warm_start(*warm);
    if (!warm_ok) cold_start();

    long cap = opts_.max_iters > 0
                   ? opts_.max_iters
                   : 50L * (m_ + n_cols_ + static_cast<long>(artificials_));

    if (needs_phase1_) {
      Vec phase1 = Vec::Zero(n_cols_);
      for (int j = n_struct_ + m_; j < n_cols_; ++j) phase1[j] = 1.0;
      cost_ = phase1;
      LpStatus st = iterate(cap);
      if (st != LpStatus::Optimal) return finish_failed(sol, st);
      double infeas = current_objective();
      if (infeas > opts_.feas_tol * (1.0 + b_.cwiseAbs().maxCoeff()) * m_) {
        sol.status = LpStatus::Infeasible;
        sol.iterations = iters_;
        return sol;
      }
      // Artificials are pinned to zero for phase 2; basic ones may linger
      // at value zero in a degenerate basis, which is harmless.
      for (int j = n_struct_ + m_; j < n_cols_; ++j) {
        lb_[j] = 0.0;
        ub_[j] = 0.0;
      }
    }

    cost_ = Vec::Zero(n_cols_);
    cost_.head(n_struct_ + m_) = base_cost_.head(n_struct_ + m_);
    LpStatus st = iterate(cap);
    if (st == LpStatus::Unbounded) return finish_unbounded(sol);
    if (st != LpStatus::Optimal) return finish_failed(sol, st);
    return finish_optimal(sol);
  }

 private:
  // Column-free trivial case: each variable settles at the bound its cost
  // prefers.
  LpSolution solve_boxed(LpSolution& sol) {
    Vec x(n_struct_);
    double obj = 0.0;
    for (int j = 0; j < n_struct_; ++j) {
      double cj = base_cost_[j];
      double v;
      if (cj > 0.0)
        v = lb_[j];
      else if (cj < 0.0)
        v = ub_[j];
      else
        v = std::isfinite(lb_[j]) ? lb_[j] : (std::isfinite(ub_[j]) ? ub_[j] : 0.0);
      if (!std::isfinite(v)) {
        sol.status = LpStatus::Unbounded;
        sol.ray = Vec::Zero(n_struct_);
        sol.ray[j] = (cj > 0.0 ? -1.0 : 1.0) * col_fac_[j];
        return sol;
      }
      x[j] = v;
      obj += cj * v;
    }
    sol.status = LpStatus::Optimal;
    sol.x = x.array() * col_fac_.array();
    sol.objective = maximize_ ? -obj : obj;
    sol.duals = Vec(0);
    sol.reduced_costs = maximize_ ? Vec(-base_cost_.head(n_struct_))
                                  : Vec(base_cost_.head(n_struct_));
    sol.reduced_costs.array() /= col_fac_.array();
    return sol;
  }

  double nb_value(int j) const {
    if (state_[j] == VarState::AtUpper) return ub_[j];
    return std::isfinite(lb_[j]) ? lb_[j] : 0.0;  // free variables rest at zero
  }

  // Nonbasic resting state: a variable with a finite lower bound sits there;
  // one bounded only from above sits at its upper bound; free ones at zero.
  VarState rest_state(int j) const {
    if (!std::isfinite(lb_[j]) && std::isfinite(ub_[j])) return VarState::AtUpper;
    return VarState::AtLower;
  }

  bool is_free(int j) const { return !std::isfinite(lb_[j]) && !std::isfinite(ub_[j]); }

  void cold_start() {
    state_.resize(n_cols_);
    for (int j = 0; j < n_cols_; ++j) state_[j] = rest_state(j);
    basic_.assign(m_, -1);
    // Residual of each row with everything nonbasic; rows whose slack can
    // absorb it start with the slack basic, the rest get an artificial.
    Vec act = Vec::Zero(m_);
    for (int j = 0; j < n_struct_; ++j) {
      double v = nb_value(j);
      if (v == 0.0) continue;
      for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
        act[col_row_[k]] += col_val_[k] * v;
    }
    std::vector<int> artificial_rows;
    for (int i = 0; i < m_; ++i) {
      int sj = n_struct_ + i;
      double v = b_[i] - act[i];
      if (v >= lb_[sj] - 1e-12 && v <= ub_[sj] + 1e-12) {
        basic_[i] = sj;
        state_[sj] = VarState::Basic;
      } else {
        artificial_rows.push_back(i);
      }
    }
    append_artificials(artificial_rows, act);
    needs_phase1_ = !artificial_rows.empty();
    refactorize();
  }

  void append_artificials(const std::vector<int>& rows, const Vec& act) {
    artificials_ = static_cast<int>(rows.size());
    int n_new = n_cols_ + artificials_;
    lb_.conservativeResize(n_new);
    ub_.conservativeResize(n_new);
    base_cost_.conservativeResize(n_new);
    for (int t = 0; t < artificials_; ++t) {
      int i = rows[t];
      int j = n_cols_ + t;
      double v = b_[i] - act[i];
      double sign = v >= 0.0 ? 1.0 : -1.0;
      col_start_.push_back(col_start_.back() + 1);
      col_row_.push_back(i);
      col_val_.push_back(sign);
      lb_[j] = 0.0;
      ub_[j] = kInf;
      base_cost_[j] = 0.0;
      basic_[i] = j;
      state_.push_back(VarState::Basic);
    }
    n_cols_ = n_new;
  }

  bool try_warm_start(const LpBasis& warm) {
    if (static_cast<int>(warm.basic.size()) != m_) return false;
    if (static_cast<int>(warm.at_upper.size()) != n_struct_ + m_) return false;
    state_.resize(n_cols_);
    for (int j = 0; j < n_cols_; ++j) state_[j] = rest_state(j);
    basic_ = warm.basic;
    for (int i = 0; i < m_; ++i) {
      int j = basic_[i];
      if (j < 0 || j >= n_struct_ + m_) return false;
      state_[j] = VarState::Basic;
    }
    for (int j = 0; j < n_struct_ + m_; ++j) {
      if (state_[j] == VarState::Basic) continue;
      if (warm.at_upper[j]) {
        if (!std::isfinite(ub_[j])) return false;
        state_[j] = VarState::AtUpper;
      }
    }
    artificials_ = 0;
    needs_phase1_ = false;
    if (!refactorize()) return false;
    // Accept the basis only if it is primal feasible for this right side.
    for (int i = 0; i < m_; ++i) {
      int j = basic_[i];
      double tol = opts_.feas_tol * std::max(1.0, row_scale_[i]);
      if (xB_[i] < lb_[j] - tol || xB_[i] > ub_[j] + tol) return false;
    }
    return true;
  }

  bool refactorize() {
    Mat B = Mat::Zero(m_, m_);
    for (int i = 0; i < m_; ++i) {
      int j = basic_[i];
      for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
        B(col_row_[k], i) = col_val_[k];
    }
    lu_.compute(B);
    const auto& lumat = lu_.matrixLU();
    for (int i = 0; i < m_; ++i)
      if (std::abs(lumat(i, i)) < 1e-12 * (1.0 + B.cwiseAbs().maxCoeff()))
        return false;
    etas_.clear();
    pivots_since_refactor_ = 0;
    compute_basic_values();
    return true;
  }

  void compute_basic_values() {
    Vec rhs_eff = b_;
    for (int j = 0; j < n_cols_; ++j) {
      if (state_[j] == VarState::Basic) continue;
      double v = nb_value(j);
      if (v == 0.0) continue;
      for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
        rhs_eff[col_row_[k]] -= col_val_[k] * v;
    }
    xB_ = ftran(rhs_eff);
  }

  Vec ftran(const Vec& v) const {
    Vec u = lu_.solve(v);
    for (const Eta& e : etas_) {
      double t = u[e.r] / e.d[e.r];
      u -= t * e.d;
      u[e.r] = t;
    }
    return u;
  }

  Vec btran(const Vec& c) const {
    Vec v = c;
    for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
      double s = it->d.dot(v);
      v[it->r] = (v[it->r] - (s - it->d[it->r] * v[it->r])) / it->d[it->r];
    }
    return lu_.transpose().solve(v);
  }

  double column_dot(int j, const Vec& y) const {
    double s = 0.0;
    for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
      s += col_val_[k] * y[col_row_[k]];
    return s;
  }

  double current_objective() const {
    double obj = 0.0;
    for (int i = 0; i < m_; ++i) obj += cost_[basic_[i]] * xB_[i];
    for (int j = 0; j < n_cols_; ++j)
      if (state_[j] != VarState::Basic) obj += cost_[j] * nb_value(j);
    return obj;
  }

  LpStatus iterate(long cap) {
    bool bland = false;
    int stall = 0;
    const double dtol = opts_.opt_tol * (1.0 + cost_.cwiseAbs().maxCoeff());
    long phase_iters = 0;
    int repair_attempts = 0;

    while (true) {
      if (phase_iters++ > cap) return LpStatus::IterationLimit;
      ++iters_;
      if (pivots_since_refactor_ >= opts_.refactor_interval)
        if (!refactorize()) { fprintf(stderr, "DBG periodic-refac-fail iter=%ld\n", iters_); return LpStatus::NumericalFailure; }

      Vec cB(m_);
      for (int i = 0; i < m_; ++i) cB[i] = cost_[basic_[i]];
      Vec y = btran(cB);

      int enter = -1;
      double best = dtol;
      int enter_sigma = 1;
      for (int j = 0; j < n_cols_; ++j) {
        if (state_[j] == VarState::Basic) continue;
        if (ub_[j] - lb_[j] <= 0.0) continue;  // fixed, never enters
        double d = cost_[j] - column_dot(j, y);
        double viol;
        int sigma;
        if (is_free(j)) {
          viol = std::abs(d);
          sigma = d < 0.0 ? 1 : -1;
        } else if (state_[j] == VarState::AtLower) {
          viol = -d;
          sigma = 1;
        } else {
          viol = d;
          sigma = -1;
        }
        if (viol <= best) continue;
        enter = j;
        enter_sigma = sigma;
        if (bland) break;  // smallest-index rule: first violation wins
        best = viol;
      }
      if (enter < 0) return LpStatus::Optimal;

      Vec w = ftran(column_vec(enter));
      const double wtol = 1e-9 * (1.0 + w.cwiseAbs().maxCoeff());

      // Ratio test: the entering variable moves by t >= 0 in direction
      // enter_sigma; each basic variable moves by -sigma*w_i*t.
      double t_limit = kInf;
      int leave_row = -1;
      bool leave_at_upper = false;
      bool bound_flip = std::isfinite(ub_[enter]) && std::isfinite(lb_[enter]);
      double t_flip = bound_flip ? ub_[enter] - lb_[enter] : kInf;
      int leave_var = std::numeric_limits<int>::max();

      for (int i = 0; i < m_; ++i) {
        double delta = -enter_sigma * w[i];
        if (std::abs(delta) <= wtol) continue;
        int bj = basic_[i];
        double ratio, room;
        bool to_upper;
        if (delta > 0.0) {
          if (!std::isfinite(ub_[bj])) continue;
          room = ub_[bj] - xB_[i];
          ratio = std::max(room, 0.0) / delta;
          to_upper = true;
        } else {
          if (!std::isfinite(lb_[bj])) continue;
          room = xB_[i] - lb_[bj];
          ratio = std::max(room, 0.0) / (-delta);
          to_upper = false;
        }
        double cmp_tol = 1e-10 * (1.0 + std::abs(t_limit));
        if (ratio < t_limit - cmp_tol ||
            (ratio < t_limit + cmp_tol && bj < leave_var)) {
          t_limit = ratio;
          leave_row = i;
          leave_var = bj;
          leave_at_upper = to_upper;
        }
      }

      if (!std::isfinite(t_limit) && !std::isfinite(t_flip)) {
        unbounded_enter_ = enter;
        unbounded_sigma_ = enter_sigma;
        unbounded_w_ = w;
        return LpStatus::Unbounded;
      }

      double t;
      bool do_flip = t_flip < t_limit - 1e-12 * (1.0 + std::abs(t_limit)) ||
                     (std::abs(t_flip - t_limit) <=
                          1e-12 * (1.0 + std::abs(t_limit)) &&
                      enter < leave_var);
      if (do_flip) {
        t = t_flip;
        for (int i = 0; i < m_; ++i) xB_[i] -= enter_sigma * t * w[i];
        state_[enter] =
            state_[enter] == VarState::AtLower ? VarState::AtUpper : VarState::AtLower;
      } else {
        t = t_limit;
        // Reject a numerically tiny pivot element; refactorize and retry,
        // falling back to Bland pricing if that keeps happening.
        if (std::abs(w[leave_row]) < 1e-7 * (1.0 + w.cwiseAbs().maxCoeff())) {
          if (repair_attempts++ < 3) {
            if (!refactorize()) { fprintf(stderr, "DBG refac-fail-in-repair iter=%ld\n", iters_); return LpStatus::NumericalFailure; }
            bland = true;
            continue;
          }
          fprintf(stderr, "DBG tiny-pivot-exhausted iter=%ld pivot=%g wmax=%g enter=%d leave=%d\n", iters_, w[leave_row], w.cwiseAbs().maxCoeff(), enter, basic_[leave_row]);
          return LpStatus::NumericalFailure;
        }
        for (int i = 0; i < m_; ++i) xB_[i] -= enter_sigma * t * w[i];
        int lv = basic_[leave_row];
        state_[lv] = leave_at_upper ? VarState::AtUpper : VarState::AtLower;
        double enter_val = nb_value(enter) + enter_sigma * t;
        state_[enter] = VarState::Basic;
        basic_[leave_row] = enter;
        xB_[leave_row] = enter_val;
        etas_.push_back({leave_row, w});
        ++pivots_since_refactor_;
      }

      if (best * t < 1e-11 * (1.0 + std::abs(current_objective()))) {
        if (++stall > opts_stall_threshold()) bland = true;
      } else {
        stall = 0;
        bland = false;
      }
    }
  }

  int opts_stall_threshold() const { return 100; }

  Vec column_vec(int j) const {
    Vec v = Vec::Zero(m_);
    for (int k = col_start_[j]; k < col_start_[j + 1]; ++k)
      v[col_row_[k]] = col_val_[k];
    return v;
  }

  LpSolution finish_failed(LpSolution& sol, LpStatus st) {
    sol.status = st;
    sol.iterations = iters_;
    return sol;
  }

  LpSolution finish_unbounded(LpSolution& sol) {
    sol.status = LpStatus::Unbounded;
    sol.iterations = iters_;
    sol.ray = Vec::Zero(n_struct_);
    if (unbounded_enter_ < n_struct_) sol.ray[unbounded_enter_] = unbounded_sigma_;
    for (int i = 0; i < m_; ++i)
      if (basic_[i] < n_struct_)
        sol.ray[basic_[i]] -= unbounded_sigma_ * unbounded_w_[i];
    sol.ray.array() *= col_fac_.array();
    sol.x = extract_x();
    return sol;
  }

  // Structural solution in the caller's units.
  Vec extract_x() const {
    Vec x(n_struct_);
    for (int j = 0; j < n_struct_; ++j)
      x[j] = state_[j] == VarState::Basic ? 0.0 : nb_value(j);
    for (int i = 0; i < m_; ++i)
      if (basic_[i] < n_struct_) x[basic_[i]] = xB_[i];
    x.array() *= col_fac_.array();
    return x;
  }

  LpSolution finish_optimal(LpSolution& sol) {
    if (!refactorize()) { fprintf(stderr, "DBG final-refac-fail iter=%ld\n", iters_); return finish_failed(sol, LpStatus::NumericalFailure); }
    Vec cB(m_);
    for (int i = 0; i < m_; ++i) cB[i] = cost_[basic_[i]];
    Vec y = btran(cB);

    sol.x = extract_x();
    double obj = current_objective();
    double dual_obj = y.dot(b_);
    Vec rc(n_struct_);
    for (int j = 0; j < n_cols_; ++j) {
      double r = state_[j] == VarState::Basic ? 0.0 : cost_[j] - column_dot(j, y);
      if (j < n_struct_) rc[j] = r;
      if (state_[j] != VarState::Basic) dual_obj += r * nb_value(j);
    }
    sol.duality_gap = std::abs(obj - dual_obj);
    sol.objective = maximize_ ? -obj : obj;
    // A scaled row's dual shrinks by the row factor; a scaled column's
    // reduced cost grows by the column factor. Undo both.
    y.array() *= row_fac_.array();
    rc.array() /= col_fac_.array();
    sol.duals = maximize_ ? Vec(-y) : y;
    sol.reduced_costs = maximize_ ? Vec(-rc) : rc;
    sol.iterations = iters_;
    sol.status = LpStatus::Optimal;

    sol.basis.valid = true;
    sol.basis.basic = basic_;
    sol.basis.at_upper.assign(n_struct_ + m_, 0);
    for (int i = 0; i < m_; ++i)
      if (basic_[i] >= n_struct_ + m_) sol.basis.valid = false;  // artificial left
    for (int j = 0; j < n_struct_ + m_; ++j)
      if (state_[j] == VarState::AtUpper) sol.basis.at_upper[j] = 1;
    return sol;
  }

  LpOptions opts_;
  int m_;
  int n_struct_;
  int n_cols_ = 0;
  int artificials_ = 0;
  bool maximize_ = false;
  bool needs_phase1_ = false;

  std::vector<int> col_start_, col_row_;
  std::vector<double> col_val_;
  Vec b_, lb_, ub_, base_cost_, cost_;
  Vec row_scale_;
  // Power-of-two equilibration factors; entries of 1 mean untouched.
  Vec row_fac_, col_fac_;

  std::vector<VarState> state_;
  std::vector<int> basic_;
  Vec xB_;
  Eigen::PartialPivLU<Mat> lu_;
  std::vector<Eta> etas_;
  int pivots_since_refactor_ = 0;
  long iters_ = 0;

  int unbounded_enter_ = -1;
  int unbounded_sigma_ = 1;
  Vec unbounded_w_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, const LpOptions& opts,
                    const LpBasis* warm) {
  if (!opts.dump_path.empty()) dump_lp(lp, opts.dump_path);
  Simplex s(lp, opts);
  return s.solve(warm);
}

void dump_lp(const LinearProgram& lp, const std::string& path) {
  std::ostringstream out;
  auto var = [](int j) { return "x" + std::to_string(j); };
  out << (lp.maximize ? "Maximize" : "Minimize") << "\n obj:";
  for (int j = 0; j < lp.n_vars; ++j) {
    if (lp.c[j] == 0.0) continue;
    out << (lp.c[j] >= 0 ? " + " : " - ") << fmt_fixed(std::abs(lp.c[j]), 12)
        << " " << var(j);
  }
  out << "\nSubject To\n";
  std::vector<std::vector<std::pair<int, double>>> rows(lp.n_rows);
  for (size_t k = 0; k < lp.e_val.size(); ++k)
    rows[lp.e_row[k]].push_back({lp.e_col[k], lp.e_val[k]});
  for (int i = 0; i < lp.n_rows; ++i) {
    out << " c" << i << ":";
    std::sort(rows[i].begin(), rows[i].end());
    for (auto& [j, v] : rows[i])
      out << (v >= 0 ? " + " : " - ") << fmt_fixed(std::abs(v), 12) << " " << var(j);
    const char* rel = lp.sense[i] == RowSense::Le   ? " <= "
                      : lp.sense[i] == RowSense::Ge ? " >= "
                                                    : " = ";
    out << rel << fmt_fixed(lp.rhs[i], 12) << "\n";
  }
  out << "Bounds\n";
  for (int j = 0; j < lp.n_vars; ++j) {
    if (std::isfinite(lp.lower[j]) && std::isfinite(lp.upper[j]))
      out << " " << fmt_fixed(lp.lower[j], 12) << " <= " << var(j)
          << " <= " << fmt_fixed(lp.upper[j], 12) << "\n";
    else if (std::isfinite(lp.lower[j]))
      out << " " << var(j) << " >= " << fmt_fixed(lp.lower[j], 12) << "\n";
    else if (std::isfinite(lp.upper[j]))
      out << " -inf <= " << var(j) << " <= " << fmt_fixed(lp.upper[j], 12) << "\n";
    else
      out << " " << var(j) << " free\n";
  }
  out << "End\n";
  write_text_file(path, out.str());
}

LinearProgram build_recourse_lp(const TwoStageInstance& inst, const Vec& z,
                                const Vec& y) {
  if (z.size() != inst.d_z())
    throw std::invalid_argument("solve_recourse: z dimension mismatch");
  if (y.size() != inst.d_y())
    throw std::invalid_argument("solve_recourse: y dimension mismatch");
  const int M = inst.n_rows();
  const int dw = inst.d_omega();
  LinearProgram lp = LinearProgram::make(dw, M);
  lp.c = inst.q;
  Mat Tz = evaluate_affine(inst.T, z);
  Mat hz = evaluate_affine(inst.h, z);
  Vec rhs = Tz * y + hz.col(0);
  lp.rhs = rhs;
  for (int i = 0; i < M; ++i) lp.sense[i] = RowSense::Ge;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < dw; ++j)
      if (inst.W(i, j) != 0.0) lp.add_entry(i, j, inst.W(i, j));
  return lp;
}

RecourseResult solve_recourse(const TwoStageInstance& inst, const Vec& z,
                              const Vec& y, const LpOptions& opts) {
  LinearProgram lp = build_recourse_lp(inst, z, y);
  LpSolution s = solve_lp(lp, opts);
  RecourseResult out;
  out.status = s.status;
  if (s.status == LpStatus::Optimal) {
    out.value = s.objective;
    out.omega = s.x;
    out.duals = s.duals;
  }
  return out;
}

namespace {

LinearProgram build_sp_lp(const TwoStageInstance& inst) {
  const int M = inst.n_rows();
  const int dw = inst.d_omega();
  LinearProgram lp = LinearProgram::make(M, dw);
  lp.maximize = true;
  for (int j = 0; j < M; ++j) {
    lp.lower[j] = 0.0;
    lp.upper[j] = kInf;
  }
  for (int i = 0; i < dw; ++i) {
    lp.sense[i] = RowSense::Eq;
    lp.rhs[i] = inst.q[i];
  }
  for (int r = 0; r < M; ++r)
    for (int cidx = 0; cidx < dw; ++cidx)
      if (inst.W(r, cidx) != 0.0) lp.add_entry(cidx, r, inst.W(r, cidx));
  return lp;
}

}  // namespace

SpSolver::SpSolver(const TwoStageInstance& inst, const LpOptions& opts)
    : lp_(build_sp_lp(inst)), opts_(opts) {}

void SpSolver::reset() { cache_.valid = false; }

SpResult SpSolver::solve(const Vec& r) {
  if (r.size() != lp_.n_vars)
    throw std::invalid_argument("SpSolver::solve: objective dimension mismatch");
  lp_.c = r;
  LpSolution s = solve_lp(lp_, opts_, cache_.valid ? &cache_ : nullptr);
  if (s.status != LpStatus::Optimal && cache_.valid) {
    // A stale basis should never change the answer; retry cold to be safe.
    cache_.valid = false;
    s = solve_lp(lp_, opts_);
  }
  SpResult out;
  out.status = s.status;
  if (s.status == LpStatus::Optimal) {
    out.value = s.objective;
    out.pi = s.x;
    cache_ = s.basis;
  } else {
    cache_.valid = false;
  }
  return out;
}

SpResult solve_sp(const TwoStageInstance& inst, const Vec& r,
                  const LpOptions& opts) {
  SpSolver solver(inst, opts);
  return solver.solve(r);
}

AssumptionReport spot_check_assumptions(const TwoStageInstance& inst,
                                        std::uint64_t seed, int n_samples,
                                        double y_scale) {
  AssumptionReport rep;
  std::ostringstream detail;

  // Dual side once: Pi nonempty keeps every recourse value finite.
  SpResult sp = solve_sp(inst, Vec::Zero(inst.n_rows()));
  rep.dual_feasible = sp.status == LpStatus::Optimal;
  if (!rep.dual_feasible)
    detail << "dual polyhedron check returned " << to_string(sp.status) << "; ";

  Rng rng = substream(seed, "spotcheck");
  rep.primal_feasible = true;
  const double mults[] = {1.0, 10.0, 100.0};
  for (int s = 0; s < n_samples && rep.primal_feasible; ++s) {
    Vec z(inst.d_z());
    for (int i = 0; i < inst.d_z(); ++i) {
      double lo = std::isfinite(inst.z_lower[i]) ? inst.z_lower[i] : -1e6;
      double hi = std::isfinite(inst.z_upper[i]) ? inst.z_upper[i] : 1e6;
      z[i] = rng.uniform(lo, hi);
    }
    double mult = mults[s % 3] * y_scale;
    Vec y(inst.d_y());
    for (int j = 0; j < inst.d_y(); ++j) y[j] = mult * rng.normal();
    y = project(inst.support, y);
    RecourseResult rr = solve_recourse(inst, z, y);
    if (rr.status != LpStatus::Optimal) {
      rep.primal_feasible = false;
      detail << "recourse " << to_string(rr.status) << " at sample " << s << "; ";
    }
  }
  rep.detail = detail.str();
  return rep;
}

}  // namespace ddro
