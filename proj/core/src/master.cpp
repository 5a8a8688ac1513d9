#include "ddro/master.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddro/io_util.hpp"

namespace ddro {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Column layout of every master LP. The shape depends only on the instance
// (which z coordinates T actually touches), never on the node, so bases can
// warm-start across the whole search tree.
struct Layout {
  int d_z = 0, d_y = 0, d_om = 0, m_rows = 0, n_theta = 0;
  int z0 = 0, lam = 0, phi0 = 0, psi0 = 0, th0 = 0;
  int wq = -1;              // auxiliary column standing in for z_c^2
  std::vector<int> wb;      // per z coordinate, column for z_i * z_c (or -1)
  int n_vars = 0;
  int n_rows = 0;
};

Layout make_layout(const MasterProblem& mp) {
  const TwoStageInstance& inst = mp.skeleton->instance;
  Layout L;
  L.d_z = inst.d_z();
  L.d_y = inst.d_y();
  L.d_om = inst.d_omega();
  L.m_rows = inst.n_rows();
  L.n_theta = mp.n_theta();
  L.z0 = 0;
  L.lam = L.d_z;
  L.phi0 = L.lam + 1;
  L.psi0 = L.phi0 + L.d_y * L.d_om;
  L.th0 = L.psi0 + L.d_y * L.d_om;
  int next = L.th0 + L.n_theta;
  const int c = inst.coupling_index;
  if (inst.T.depends_on(c)) L.wq = next++;
  L.wb.assign(L.d_z, -1);
  int n_bl = 0;
  for (int i = 0; i < L.d_z; ++i) {
    if (i == c || !inst.T.depends_on(i)) continue;
    if (!std::isfinite(inst.z_lower[i]) || !std::isfinite(inst.z_upper[i])) {
      throw std::runtime_error(
          "decision coordinate " + std::to_string(i) +
          " multiplies the coupling through T but has an unbounded box; "
          "McCormick envelopes need finite bounds");
    }
    L.wb[i] = next++;
    ++n_bl;
  }
  L.n_vars = next;
  L.n_rows = 2 * L.d_y + 2 * L.d_y * L.m_rows + (L.wq >= 0 ? 4 : 0) +
             4 * n_bl + static_cast<int>(mp.cuts.size());
  return L;
}

void check_cut_scenarios(const MasterProblem& mp) {
  const int n = mp.skeleton->n_scenarios();
  for (const BendersCut& cut : mp.cuts) {
    if (mp.single_cut && cut.scenario != -1) {
      throw std::runtime_error(
          "single-cut master received a per-scenario cut");
    }
    if (!mp.single_cut && (cut.scenario < 0 || cut.scenario >= n)) {
      throw std::runtime_error(
          "multi-cut master received a cut with scenario index " +
          std::to_string(cut.scenario));
    }
  }
}

// Master LP over z_c in [a, b] inside one embedding piece; a == b pins the
// coupling exactly (the envelope rows then force wq = a^2 and wb_i = a z_i,
// so the same assembly doubles as the fixed-coupling LP).
LinearProgram assemble(const MasterProblem& mp, const Layout& L, int piece_idx,
                       double a, double b) {
  const ReformulationSkeleton& skel = *mp.skeleton;
  const TwoStageInstance& inst = skel.instance;
  const EmbeddingPiece& piece = skel.embedding.pieces[piece_idx];
  const int c = inst.coupling_index;

  LinearProgram lp = LinearProgram::make(L.n_vars, L.n_rows);

  for (int i = 0; i < L.d_z; ++i) {
    lp.c[L.z0 + i] = inst.c_z[i];
    lp.lower[L.z0 + i] = inst.z_lower[i];
    lp.upper[L.z0 + i] = inst.z_upper[i];
  }
  lp.lower[L.z0 + c] = a;
  lp.upper[L.z0 + c] = b;
  lp.c[L.lam] = skel.xi;
  lp.lower[L.lam] = 0.0;
  lp.upper[L.lam] = kInf;
  for (int j = L.phi0; j < L.th0; ++j) {
    lp.lower[j] = -kInf;
    lp.upper[j] = kInf;
  }
  const double theta_weight =
      mp.single_cut ? 1.0 : 1.0 / static_cast<double>(skel.n_scenarios());
  for (int k = 0; k < L.n_theta; ++k) {
    lp.c[L.th0 + k] = theta_weight;
    lp.lower[L.th0 + k] = mp.theta_min[k];
    lp.upper[L.th0 + k] = kInf;
  }
  if (L.wq >= 0) {
    double sq_lo = (a <= 0.0 && 0.0 <= b) ? 0.0 : std::min(a * a, b * b);
    lp.lower[L.wq] = sq_lo;
    lp.upper[L.wq] = std::max(a * a, b * b);
  }
  for (int i = 0; i < L.d_z; ++i) {
    if (L.wb[i] < 0) continue;
    double lo = kInf, hi = -kInf;
    for (double zi : {inst.z_lower[i], inst.z_upper[i]}) {
      for (double zc : {a, b}) {
        lo = std::min(lo, zi * zc);
        hi = std::max(hi, zi * zc);
      }
    }
    lp.lower[L.wb[i]] = lo;
    lp.upper[L.wb[i]] = hi;
  }

  int row = 0;
  // q' phi_m <= lambda and q' psi_m <= lambda.
  for (int m = 0; m < L.d_y; ++m) {
    for (int blk : {L.phi0, L.psi0}) {
      lp.sense[row] = RowSense::Le;
      lp.rhs[row] = 0.0;
      for (int j = 0; j < L.d_om; ++j) {
        if (inst.q[j] != 0.0) lp.add_entry(row, blk + m * L.d_om + j, inst.q[j]);
      }
      lp.add_entry(row, L.lam, -1.0);
      ++row;
    }
  }
  // Columnwise dominance: T(z) e_m <= W phi_m and -T(z) e_m <= W psi_m.
  for (int m = 0; m < L.d_y; ++m) {
    for (int sign : {+1, -1}) {
      int blk = sign > 0 ? L.phi0 : L.psi0;
      for (int r = 0; r < L.m_rows; ++r) {
        lp.sense[row] = RowSense::Le;
        lp.rhs[row] = -sign * inst.T.constant(r, m);
        for (int i = 0; i < L.d_z; ++i) {
          double t = inst.T.coeffs[i](r, m);
          if (t != 0.0) lp.add_entry(row, L.z0 + i, sign * t);
        }
        for (int j = 0; j < L.d_om; ++j) {
          double w = inst.W(r, j);
          if (w != 0.0) lp.add_entry(row, blk + m * L.d_om + j, -w);
        }
        ++row;
      }
    }
  }
  // Square envelope: tangents below, secant above.
  if (L.wq >= 0) {
    const double mid = 0.5 * (a + b);
    for (double t : {a, mid, b}) {
      lp.sense[row] = RowSense::Ge;
      lp.rhs[row] = -t * t;
      lp.add_entry(row, L.wq, 1.0);
      lp.add_entry(row, L.z0 + c, -2.0 * t);
      ++row;
    }
    lp.sense[row] = RowSense::Le;
    lp.rhs[row] = -a * b;
    lp.add_entry(row, L.wq, 1.0);
    lp.add_entry(row, L.z0 + c, -(a + b));
    ++row;
  }
  // McCormick envelopes for z_i * z_c.
  for (int i = 0; i < L.d_z; ++i) {
    if (L.wb[i] < 0) continue;
    const double l = inst.z_lower[i], u = inst.z_upper[i];
    struct Side {
      RowSense sense;
      double zi, zc;
    };
    const Side sides[4] = {{RowSense::Ge, l, a},
                           {RowSense::Ge, u, b},
                           {RowSense::Le, u, a},
                           {RowSense::Le, l, b}};
    for (const Side& sd : sides) {
      lp.sense[row] = sd.sense;
      lp.rhs[row] = -sd.zi * sd.zc;
      lp.add_entry(row, L.wb[i], 1.0);
      lp.add_entry(row, L.z0 + i, -sd.zc);
      lp.add_entry(row, L.z0 + c, -sd.zi);
      ++row;
    }
  }
  // Cut rows: theta >= constant + linear.z + quad z_c^2 + bilinears.
  for (const BendersCut& cut : mp.cuts) {
    CutPieceExpansion ex = expand_on_piece(cut, piece, c);
    lp.sense[row] = RowSense::Ge;
    lp.rhs[row] = ex.constant;
    int th = L.th0 + (mp.single_cut ? 0 : cut.scenario);
    lp.add_entry(row, th, 1.0);
    for (int i = 0; i < L.d_z; ++i) {
      if (ex.linear[i] != 0.0) lp.add_entry(row, L.z0 + i, -ex.linear[i]);
      if (i != c && ex.bilinear[i] != 0.0) {
        if (L.wb[i] < 0) {
          throw std::runtime_error(
              "cut carries a bilinear term for a coordinate T never touches");
        }
        lp.add_entry(row, L.wb[i], -ex.bilinear[i]);
      }
    }
    if (ex.quad != 0.0) {
      if (L.wq < 0) {
        throw std::runtime_error(
            "cut carries a quadratic term but T ignores the coupling");
      }
      lp.add_entry(row, L.wq, -ex.quad);
    }
    ++row;
  }

  return lp;
}

MasterSolution decode(const MasterProblem& mp, const Layout& L,
                      const LpSolution& sol, int piece_idx) {
  MasterSolution out;
  out.status = sol.status;
  out.value = sol.objective;
  out.piece = piece_idx;
  out.z = sol.x.segment(L.z0, L.d_z);
  out.lambda = sol.x[L.lam];
  out.phi = Mat::Zero(L.d_y, L.d_om);
  out.psi = Mat::Zero(L.d_y, L.d_om);
  for (int m = 0; m < L.d_y; ++m) {
    for (int j = 0; j < L.d_om; ++j) {
      out.phi(m, j) = sol.x[L.phi0 + m * L.d_om + j];
      out.psi(m, j) = sol.x[L.psi0 + m * L.d_om + j];
    }
  }
  out.theta = sol.x.segment(L.th0, L.n_theta);
  return out;
}

double min_over_interval(double coef, double lo, double hi) {
  if (coef == 0.0) return 0.0;
  double v = std::min(coef * lo, coef * hi);
  if (!std::isfinite(v)) {
    throw std::runtime_error(
        "theta lower bounds need a finite decision box wherever the reference "
        "cut has a nonzero coefficient");
  }
  return v;
}

// Termwise interval minimum of one cut's value over box x piece interval.
double interval_min_on_piece(const CutPieceExpansion& ex,
                             const TwoStageInstance& inst, double plo,
                             double phi) {
  const int c = inst.coupling_index;
  double v = ex.constant;
  for (int i = 0; i < inst.d_z(); ++i) {
    double lo = (i == c) ? plo : inst.z_lower[i];
    double hi = (i == c) ? phi : inst.z_upper[i];
    v += min_over_interval(ex.linear[i], lo, hi);
  }
  if (ex.quad != 0.0) {
    double sq_lo = (plo <= 0.0 && 0.0 <= phi) ? 0.0
                                              : std::min(plo * plo, phi * phi);
    double sq_hi = std::max(plo * plo, phi * phi);
    v += ex.quad >= 0.0 ? ex.quad * sq_lo : ex.quad * sq_hi;
  }
  for (int i = 0; i < inst.d_z(); ++i) {
    if (i == c || ex.bilinear[i] == 0.0) continue;
    double best = kInf;
    for (double zi : {inst.z_lower[i], inst.z_upper[i]}) {
      for (double zc : {plo, phi}) best = std::min(best, ex.bilinear[i] * zi * zc);
    }
    if (!std::isfinite(best)) {
      throw std::runtime_error(
          "theta lower bounds need a finite decision box wherever the "
          "reference cut has a bilinear term");
    }
    v += best;
  }
  return v;
}

Vec reference_dual(const ReformulationSkeleton& skel) {
  const TwoStageInstance& inst = skel.instance;
  int first_feasible = -1;
  for (int p = 0; p < static_cast<int>(skel.embedding.pieces.size()); ++p) {
    if (skel.embedding.pieces[p].feasible) {
      first_feasible = p;
      break;
    }
  }
  if (first_feasible < 0) {
    throw std::runtime_error("all embedding pieces are infeasible");
  }
  const EmbeddingPiece& piece = skel.embedding.pieces[first_feasible];
  const double zc0 = 0.5 * (piece.lo + piece.hi);
  Vec z_mid(inst.d_z());
  for (int i = 0; i < inst.d_z(); ++i) {
    double lo = inst.z_lower[i], hi = inst.z_upper[i];
    if (std::isfinite(lo) && std::isfinite(hi)) z_mid[i] = 0.5 * (lo + hi);
    else if (std::isfinite(lo)) z_mid[i] = lo;
    else if (std::isfinite(hi)) z_mid[i] = hi;
    else z_mid[i] = 0.0;
  }
  z_mid[inst.coupling_index] = zc0;
  Vec y_bar = skel.embedding.evaluate(zc0) +
              skel.residuals.colwise().mean().transpose();
  Vec r = evaluate_affine(inst.T, z_mid) * y_bar +
          evaluate_affine(inst.h, z_mid).col(0);
  SpResult sp = solve_sp(inst, r);
  if (sp.status == LpStatus::Infeasible) {
    throw std::runtime_error(
        "recourse dual set is empty; the recourse cost is not sufficiently "
        "expensive for worst-case values to stay finite");
  }
  if (sp.status != LpStatus::Optimal) {
    throw std::runtime_error("reference dual solve failed: " +
                             to_string(sp.status));
  }
  return sp.pi;
}

}  // namespace

Vec theta_lower_bounds(const ReformulationSkeleton& skel, bool single_cut,
                       double margin) {
  const TwoStageInstance& inst = skel.instance;
  const Vec pi0 = reference_dual(skel);
  const int n = skel.n_scenarios();
  const int c = inst.coupling_index;

  Vec per_scenario(n);
  for (int k = 0; k < n; ++k) {
    WeightedDual wd;
    wd.weight = 1.0;
    wd.pi = pi0;
    wd.epsilon = skel.residuals.row(k).transpose();
    BendersCut cut = make_cut(inst, {wd}, k, 0);
    double best = kInf;
    for (const EmbeddingPiece& piece : skel.embedding.pieces) {
      if (!piece.feasible) continue;
      CutPieceExpansion ex = expand_on_piece(cut, piece, c);
      best = std::min(best, interval_min_on_piece(ex, inst, piece.lo, piece.hi));
    }
    per_scenario[k] = best - margin * (1.0 + 1e-6 * std::abs(best));
  }
  if (!single_cut) return per_scenario;
  Vec one(1);
  one[0] = per_scenario.mean();
  return one;
}

MasterProblem make_master(const ReformulationSkeleton& skel, bool single_cut,
                          double theta_margin) {
  MasterProblem mp;
  mp.skeleton = &skel;
  mp.single_cut = single_cut;
  mp.theta_min = theta_lower_bounds(skel, single_cut, theta_margin);
  return mp;
}

LpSolution fixed_coupling_lp(const MasterProblem& mp, double z_c) {
  check_cut_scenarios(mp);
  const PiecewiseAffineEmbedding& emb = mp.skeleton->embedding;
  int p = emb.piece_index(z_c);
  if (p < 0) {
    throw std::out_of_range("fixed-coupling LP requested at z_c=" +
                            fmt_double(z_c) + ", outside the coupling box");
  }
  if (!emb.pieces[p].feasible) {
    throw EmptyNeighborhood("fixed-coupling LP requested at z_c=" +
                            fmt_double(z_c) +
                            ", which lies in an infeasible embedding piece");
  }
  Layout L = make_layout(mp);
  LinearProgram lp = assemble(mp, L, p, z_c, z_c);
  return solve_lp(lp);
}

double node_relaxation(const MasterProblem& mp, double lo, double hi) {
  check_cut_scenarios(mp);
  if (!(lo <= hi)) throw std::runtime_error("empty relaxation interval");
  const PiecewiseAffineEmbedding& emb = mp.skeleton->embedding;
  int p = emb.piece_index(0.5 * (lo + hi));
  if (p < 0) {
    throw std::out_of_range("relaxation interval [" + fmt_double(lo) + ", " +
                            fmt_double(hi) + "] lies outside the coupling box");
  }
  const EmbeddingPiece& piece = emb.pieces[p];
  const double slack = 1e-9 * (1.0 + std::abs(piece.hi - piece.lo));
  if (lo < piece.lo - slack || hi > piece.hi + slack) {
    throw std::runtime_error("relaxation interval spans embedding pieces");
  }
  if (!piece.feasible) {
    throw std::runtime_error("relaxation interval lies in an infeasible piece");
  }
  Layout L = make_layout(mp);
  LinearProgram lp = assemble(mp, L, p, lo, hi);
  LpSolution sol = solve_lp(lp);
  if (sol.status == LpStatus::Optimal) return sol.objective;
  if (sol.status == LpStatus::Unbounded) return -kInf;
  if (sol.status == LpStatus::Infeasible) return kInf;
  throw std::runtime_error("node relaxation LP failed: " +
                           to_string(sol.status));
}

MasterSolution solve_master(const MasterProblem& mp, const MasterOptions& opts) {
  check_cut_scenarios(mp);
  const ReformulationSkeleton& skel = *mp.skeleton;
  const TwoStageInstance& inst = skel.instance;
  const int c = inst.coupling_index;
  if (static_cast<int>(mp.theta_min.size()) != mp.n_theta()) {
    throw std::runtime_error("theta_min is not sized to the theta variables");
  }
  Layout L = make_layout(mp);

  const double range = inst.z_upper[c] - inst.z_lower[c];
  const double delta_min = opts.delta_min_frac * range;
  const int n_pieces = static_cast<int>(skel.embedding.pieces.size());
  int depth = 1;
  if (delta_min > 0.0 && range > delta_min) {
    depth = static_cast<int>(std::ceil(std::log2(range / delta_min)));
  }
  const int node_cap = opts.node_cap > 0
                           ? opts.node_cap
                           : std::max(256, 16 * n_pieces * (depth + 2));

  struct Node {
    int piece = -1;
    double lo = 0.0, hi = 0.0;
    double bound = -kInf;  // parent relaxation value until solved
    LpBasis warm;
  };
  std::vector<Node> nodes;
  struct Ref {
    double bound;
    int id;
    bool operator>(const Ref& o) const {
      if (bound != o.bound) return bound > o.bound;
      return id > o.id;
    }
  };
  std::priority_queue<Ref, std::vector<Ref>, std::greater<Ref>> queue;

  CsvTable trace;
  trace.header = {"node", "piece", "lo", "hi", "bound", "incumbent", "action"};
  auto record = [&](int id, const Node& nd, double inc, const char* action) {
    if (opts.trace_csv_path.empty()) return;
    trace.rows.push_back({std::to_string(id), std::to_string(nd.piece),
                          fmt_double(nd.lo), fmt_double(nd.hi),
                          fmt_double(nd.bound), fmt_double(inc), action});
  };
  auto flush_trace = [&] {
    if (!opts.trace_csv_path.empty()) write_csv(opts.trace_csv_path, trace);
  };

  int feasible_pieces = 0;
  for (int p = 0; p < n_pieces; ++p) {
    const EmbeddingPiece& piece = skel.embedding.pieces[p];
    if (!piece.feasible) continue;
    ++feasible_pieces;
    Node root;
    root.piece = p;
    root.lo = piece.lo;
    root.hi = piece.hi;
    nodes.push_back(root);
    queue.push({-kInf, static_cast<int>(nodes.size()) - 1});
  }
  if (feasible_pieces == 0) {
    throw std::runtime_error("all embedding pieces are infeasible");
  }

  MasterSolution incumbent;
  incumbent.value = kInf;
  bool have_incumbent = false;
  double floor_bound = kInf;  // min bound over closed, pruned, and remaining
  int explored = 0;

  while (!queue.empty()) {
    Ref top = queue.top();
    queue.pop();
    Node nd = nodes[top.id];
    const double eps_abs =
        opts.eps_master * (1.0 + (have_incumbent ? std::abs(incumbent.value) : 0.0));
    if (have_incumbent && nd.bound >= incumbent.value - eps_abs) {
      // Best-bound order: everything still queued is at least as high.
      floor_bound = std::min(floor_bound, nd.bound);
      record(top.id, nd, incumbent.value, "cutoff");
      while (!queue.empty()) queue.pop();
      break;
    }
    if (++explored > node_cap) {
      flush_trace();
      throw std::runtime_error("master search exceeded its node budget (" +
                               std::to_string(node_cap) + " nodes)");
    }
    LinearProgram relax = assemble(mp, L, nd.piece, nd.lo, nd.hi);
    LpSolution rsol = solve_lp(relax, {}, nd.warm.valid ? &nd.warm : nullptr);
    if (rsol.status == LpStatus::Unbounded) {
      flush_trace();
      MasterSolution out;
      out.status = LpStatus::Unbounded;
      out.value = -kInf;
      out.proved_lb = -kInf;
      out.nodes_explored = explored;
      return out;
    }
    if (rsol.status == LpStatus::Infeasible) {
      nd.bound = kInf;
      record(top.id, nd, have_incumbent ? incumbent.value : kInf, "infeasible");
      continue;
    }
    if (rsol.status != LpStatus::Optimal) {
      flush_trace();
      dump_lp(relax, "/tmp/bad_node.lp");
      throw std::runtime_error("master node relaxation failed: " +
                               to_string(rsol.status));
    }
    nd.bound = rsol.objective;
    nodes[top.id].bound = rsol.objective;
    if (have_incumbent && nd.bound >= incumbent.value - eps_abs) {
      floor_bound = std::min(floor_bound, nd.bound);
      record(top.id, nd, incumbent.value, "pruned");
      continue;
    }

    // Candidate leaf at the relaxation's coupling minimizer.
    double zc_hat = std::clamp(rsol.x[L.z0 + c], nd.lo, nd.hi);
    LinearProgram leaf = assemble(mp, L, nd.piece, zc_hat, zc_hat);
    LpSolution lsol = solve_lp(leaf, {}, &rsol.basis);
    if (lsol.status == LpStatus::Optimal &&
        (!have_incumbent || lsol.objective < incumbent.value)) {
      incumbent = decode(mp, L, lsol, nd.piece);
      have_incumbent = true;
      record(top.id, nd, incumbent.value, "incumbent");
    }

    if (nd.hi - nd.lo <= delta_min) {
      floor_bound = std::min(floor_bound, nd.bound);
      record(top.id, nd, have_incumbent ? incumbent.value : kInf, "closed");
      continue;
    }
    const double mid = 0.5 * (nd.lo + nd.hi);
    for (int side = 0; side < 2; ++side) {
      Node child;
      child.piece = nd.piece;
      child.lo = side == 0 ? nd.lo : mid;
      child.hi = side == 0 ? mid : nd.hi;
      child.bound = nd.bound;
      child.warm = rsol.basis;
      nodes.push_back(child);
      queue.push({child.bound, static_cast<int>(nodes.size()) - 1});
    }
    record(top.id, nd, have_incumbent ? incumbent.value : kInf, "branched");
  }

  flush_trace();
  if (!have_incumbent) {
    throw std::runtime_error(
        "master search found no feasible point; the instance configuration "
        "is inconsistent");
  }
  incumbent.proved_lb = std::min(floor_bound, incumbent.value);
  incumbent.nodes_explored = explored;
  incumbent.status = LpStatus::Optimal;
  return incumbent;
}

}  // namespace ddro
