#include <doctest.h>

#include <cmath>
#include <limits>

#include "ddro/io_util.hpp"
#include "ddro/lp.hpp"
#include "ddro/model.hpp"
#include "ddro/rng.hpp"
#include "oracles.hpp"

using namespace ddro;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

// One warehouse, one site pricing recourse:
//   H(z, Y) = min c11*s + p2*t + u
//     s.t.  s >= Y              (ship at least the demand)
//           -s + t >= -z2      (capacity z2 plus underage t)
//           u >= -z1 * Y       (epigraph of the revenue term)
//           s >= 0, t >= 0
// with the sign restrictions written as rows of W so that the dual is
// {pi >= 0 : W'pi = q}.
TwoStageInstance mini_pricing(double c11, double p2) {
  TwoStageInstance inst;
  inst.c_z = Vec::Zero(2);  // (z1, z2)
  inst.z_lower = Vec::Zero(2);
  inst.z_upper = Vec::Constant(2, 500.0);
  inst.q = Vec(3);
  inst.q << c11, p2, 1.0;
  inst.W = Mat::Zero(5, 3);
  inst.W(0, 0) = 1.0;                     // s >= Y
  inst.W(1, 0) = -1.0; inst.W(1, 1) = 1.0;  // -s + t >= -z2
  inst.W(2, 2) = 1.0;                     // u >= -z1 Y
  inst.W(3, 0) = 1.0;                     // s >= 0
  inst.W(4, 1) = 1.0;                     // t >= 0
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

LinearProgram random_boxed_lp(Rng& rng, int n, int m) {
  LinearProgram lp = LinearProgram::make(n, m);
  lp.maximize = rng.uniform() < 0.3;
  for (int j = 0; j < n; ++j) {
    lp.c[j] = rng.uniform(-3, 3);
    double a = rng.uniform(-4, 1);
    lp.lower[j] = a;
    lp.upper[j] = a + rng.uniform(0.5, 5);
  }
  for (int i = 0; i < m; ++i) {
    double u = rng.uniform();
    lp.sense[i] = u < 0.4 ? RowSense::Le : (u < 0.8 ? RowSense::Ge : RowSense::Eq);
    lp.rhs[i] = rng.uniform(-3, 3);
    for (int j = 0; j < n; ++j)
      if (rng.uniform() < 0.8) lp.add_entry(i, j, rng.uniform(-2, 2));
  }
  return lp;
}

}  // namespace

TEST_CASE("one variable, one constraint") {
  LinearProgram lp = LinearProgram::make(1, 1);
  lp.c[0] = 1.0;
  lp.sense[0] = RowSense::Ge;
  lp.rhs[0] = 3.0;
  lp.add_entry(0, 0, 1.0);
  LpSolution s = solve_lp(lp);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.x[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.duals[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.duality_gap <= 1e-9 * (1 + std::abs(s.objective)));
}

TEST_CASE("maximize flips the dual sign convention") {
  LinearProgram lp = LinearProgram::make(1, 1);
  lp.maximize = true;
  lp.c[0] = -1.0;
  lp.sense[0] = RowSense::Ge;
  lp.rhs[0] = 3.0;
  lp.add_entry(0, 0, 1.0);
  LpSolution s = solve_lp(lp);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(-3.0));
  CHECK(s.duals[0] == doctest::Approx(-1.0));
}

TEST_CASE("infeasible rows are detected") {
  LinearProgram lp = LinearProgram::make(1, 2);
  lp.c[0] = 1.0;
  lp.sense[0] = RowSense::Ge;
  lp.rhs[0] = 3.0;
  lp.sense[1] = RowSense::Le;
  lp.rhs[1] = 2.0;
  lp.add_entry(0, 0, 1.0);
  lp.add_entry(1, 0, 1.0);
  CHECK(solve_lp(lp).status == LpStatus::Infeasible);
}

TEST_CASE("unbounded direction is reported with a ray") {
  LinearProgram lp = LinearProgram::make(2, 1);
  lp.c[0] = -1.0;
  lp.lower[0] = 0.0;
  lp.lower[1] = 0.0;
  lp.sense[0] = RowSense::Ge;
  lp.rhs[0] = 1.0;
  lp.add_entry(0, 1, 1.0);
  LpSolution s = solve_lp(lp);
  REQUIRE(s.status == LpStatus::Unbounded);
  REQUIRE(s.ray.size() == 2);
  CHECK(s.ray[0] > 0.0);  // pushing x0 up improves the minimization forever
}

TEST_CASE("beale degenerate cycling instance terminates at its optimum") {
  LinearProgram lp = LinearProgram::make(4, 3);
  lp.c << -0.75, 150.0, -0.02, 6.0;
  for (int j = 0; j < 4; ++j) lp.lower[j] = 0.0;
  lp.sense = {RowSense::Le, RowSense::Le, RowSense::Le};
  lp.rhs << 0.0, 0.0, 1.0;
  lp.add_entry(0, 0, 0.25);
  lp.add_entry(0, 1, -60.0);
  lp.add_entry(0, 2, -1.0 / 25.0);
  lp.add_entry(0, 3, 9.0);
  lp.add_entry(1, 0, 0.5);
  lp.add_entry(1, 1, -90.0);
  lp.add_entry(1, 2, -1.0 / 50.0);
  lp.add_entry(1, 3, 3.0);
  lp.add_entry(2, 2, 1.0);
  LpSolution s = solve_lp(lp);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(-0.05).epsilon(1e-9));
  CHECK(s.iterations <= 50 * (3 + 4 + 3));
}

TEST_CASE("random boxed lps agree with the vertex enumeration oracle") {
  Rng rng(1234);
  int compared = 0;
  for (int t = 0; t < 50; ++t) {
    int n = 2 + static_cast<int>(rng.below(4));  // 2..5
    int m = 1 + static_cast<int>(rng.below(4));  // 1..4
    LinearProgram lp = random_boxed_lp(rng, n, m);
    LpSolution s = solve_lp(lp);
    oracle::VertexOracleResult v = oracle::lp_vertex_oracle(lp);
    if (!v.feasible) {
      CHECK(s.status == LpStatus::Infeasible);
      continue;
    }
    REQUIRE(s.status == LpStatus::Optimal);
    ++compared;
    CHECK(std::abs(s.objective - v.value) <= 1e-6 * (1.0 + std::abs(v.value)));
    CHECK(s.duality_gap <= 1e-9 * (1.0 + std::abs(s.objective)));
    // returned point is feasible
    Mat A = Mat::Zero(lp.n_rows, lp.n_vars);
    for (size_t k = 0; k < lp.e_val.size(); ++k)
      A(lp.e_row[k], lp.e_col[k]) += lp.e_val[k];
    Vec ax = A * s.x;
    for (int i = 0; i < lp.n_rows; ++i) {
      double tol = 1e-6 * (1.0 + std::abs(lp.rhs[i]));
      if (lp.sense[i] == RowSense::Le) CHECK(ax[i] <= lp.rhs[i] + tol);
      if (lp.sense[i] == RowSense::Ge) CHECK(ax[i] >= lp.rhs[i] - tol);
      if (lp.sense[i] == RowSense::Eq) CHECK(std::abs(ax[i] - lp.rhs[i]) <= tol);
    }
  }
  CHECK(compared >= 20);  // the generator must produce plenty of feasible cases
}

TEST_CASE("free variables constrained through rows match the boxed equivalent") {
  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    int n = 2 + static_cast<int>(rng.below(3));
    Vec lo(n), hi(n), c(n);
    for (int j = 0; j < n; ++j) {
      lo[j] = rng.uniform(-4, 0);
      hi[j] = lo[j] + rng.uniform(0.5, 4);
      c[j] = rng.uniform(-2, 2);
    }
    // boxed version
    LinearProgram boxed = LinearProgram::make(n, 0);
    boxed.c = c;
    boxed.lower = lo;
    boxed.upper = hi;
    // free version with the box written as >= rows
    LinearProgram rows = LinearProgram::make(n, 2 * n);
    rows.c = c;
    for (int j = 0; j < n; ++j) {
      rows.sense[j] = RowSense::Ge;
      rows.rhs[j] = lo[j];
      rows.add_entry(j, j, 1.0);
      rows.sense[n + j] = RowSense::Le;
      rows.rhs[n + j] = hi[j];
      rows.add_entry(n + j, j, 1.0);
    }
    LpSolution a = solve_lp(boxed);
    LpSolution b = solve_lp(rows);
    REQUIRE(a.status == LpStatus::Optimal);
    REQUIRE(b.status == LpStatus::Optimal);
    CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-10));
  }
}

TEST_CASE("solver is deterministic call to call") {
  Rng rng(4242);
  LinearProgram lp = random_boxed_lp(rng, 5, 4);
  LpSolution a = solve_lp(lp);
  LpSolution b = solve_lp(lp);
  REQUIRE(a.status == b.status);
  if (a.status == LpStatus::Optimal) {
    CHECK(a.objective == b.objective);  // bitwise
    CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.iterations == b.iterations);
  }
}

TEST_CASE("recourse with zero cost vector is zero") {
  TwoStageInstance inst = mini_pricing(10.0, 100.0);
  inst.q = Vec::Zero(3);
  Vec z(2), y(1);
  z << 50.0, 2.0;
  y << 3.0;
  RecourseResult r = solve_recourse(inst, z, y);
  REQUIRE(r.status == LpStatus::Optimal);
  CHECK(r.value == doctest::Approx(0.0));
}

TEST_CASE("hand-solved mini pricing recourse") {
  // c11=10, p2=100, z=(50,2), Y=3: demand forces 3 shipped, capacity 2
  // forces 1 unit of bought capacity, revenue 50*3.
  // H = 10*3 + 100*1 - 50*3 = -20.
  TwoStageInstance inst = mini_pricing(10.0, 100.0);
  Vec z(2), y(1);
  z << 50.0, 2.0;
  y << 3.0;
  RecourseResult r = solve_recourse(inst, z, y);
  REQUIRE(r.status == LpStatus::Optimal);
  CHECK(r.value == doctest::Approx(-20.0).epsilon(1e-10));
  CHECK(r.omega[0] == doctest::Approx(3.0));   // shipped
  CHECK(r.omega[1] == doctest::Approx(1.0));   // bought capacity
  CHECK(r.omega[2] == doctest::Approx(-150.0));  // revenue epigraph

  // zero demand: nothing ships, no underage, no revenue
  y << 0.0;
  r = solve_recourse(inst, z, y);
  REQUIRE(r.status == LpStatus::Optimal);
  CHECK(r.value == doctest::Approx(0.0));
}

TEST_CASE("subproblem over Pi collapses to zero when q is zero") {
  TwoStageInstance inst = mini_pricing(10.0, 100.0);
  inst.q = Vec::Zero(3);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    Vec r(5);
    for (int i = 0; i < 5; ++i) r[i] = rng.uniform(-10, 10);
    SpResult sp = solve_sp(inst, r);
    REQUIRE(sp.status == LpStatus::Optimal);
    CHECK(sp.value == doctest::Approx(0.0));
    CHECK(sp.pi.cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("strong duality between recourse and subproblem over many samples") {
  TwoStageInstance inst = mini_pricing(10.0, 100.0);
  Rng rng(2026);
  auto vertices = oracle::enumerate_pi_vertices(inst);
  REQUIRE(vertices.size() >= 2);
  for (int t = 0; t < 100; ++t) {
    Vec z(2), y(1);
    z << rng.uniform(0, 500), rng.uniform(0, 10);
    y << rng.uniform(-5, 20);
    RecourseResult pr = solve_recourse(inst, z, y);
    REQUIRE(pr.status == LpStatus::Optimal);
    Vec rhs = evaluate_affine(inst.T, z) * y + evaluate_affine(inst.h, z).col(0);
    SpResult sp = solve_sp(inst, rhs);
    REQUIRE(sp.status == LpStatus::Optimal);
    CHECK(std::abs(pr.value - sp.value) <= 1e-6 * (1.0 + std::abs(pr.value)));
    // pi is feasible for Pi ...
    CHECK((inst.W.transpose() * sp.pi - inst.q).cwiseAbs().maxCoeff() <= 1e-7);
    CHECK(sp.pi.minCoeff() >= -1e-9);
    // ... and sits on a vertex of Pi, not in the interior of a face
    double nearest = 1e100;
    for (const Vec& v : vertices)
      nearest = std::min(nearest, (v - sp.pi).cwiseAbs().maxCoeff());
    CHECK(nearest <= 1e-6);
  }
}

TEST_CASE("warm started subproblem solves match cold solves exactly") {
  TwoStageInstance inst = mini_pricing(7.0, 55.0);
  SpSolver warm_solver(inst);
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    Vec r(5);
    for (int i = 0; i < 5; ++i) r[i] = rng.uniform(-30, 30);
    SpResult a = warm_solver.solve(r);
    SpResult b = solve_sp(inst, r);
    REQUIRE(a.status == LpStatus::Optimal);
    REQUIRE(b.status == LpStatus::Optimal);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
  }
}

TEST_CASE("assumption spot checks accept the pricing shape and flag a broken one") {
  TwoStageInstance good = mini_pricing(10.0, 100.0);
  AssumptionReport rep = spot_check_assumptions(good, 99, 12, 10.0);
  CHECK(rep.primal_feasible);
  CHECK(rep.dual_feasible);
  CHECK(rep.ok());

  // w >= 1 and -w >= 0 cannot hold together: primal infeasible for any rhs.
  TwoStageInstance bad;
  bad.c_z = Vec::Zero(1);
  bad.z_lower = Vec::Zero(1);
  bad.z_upper = Vec::Ones(1);
  bad.q = Vec::Ones(1);
  bad.W = Mat(2, 1);
  bad.W << 1.0, -1.0;
  bad.T.constant = Mat::Zero(2, 1);
  bad.T.coeffs = {Mat::Zero(2, 1)};
  bad.h.constant = Mat(2, 1);
  bad.h.constant << 1.0, 0.0;
  bad.h.coeffs = {Mat::Zero(2, 1)};
  AssumptionReport rep2 = spot_check_assumptions(bad, 99, 6);
  CHECK(!rep2.primal_feasible);
}

TEST_CASE("lp text dump is written when requested") {
  LinearProgram lp = LinearProgram::make(2, 1);
  lp.c << 1.0, 2.0;
  lp.lower << 0.0, 0.0;
  lp.sense[0] = RowSense::Ge;
  lp.rhs[0] = 1.0;
  lp.add_entry(0, 0, 1.0);
  lp.add_entry(0, 1, 1.0);
  LpOptions opts;
  opts.dump_path = "/tmp/ddro_test_dump.lp";
  LpSolution s = solve_lp(lp, opts);
  REQUIRE(s.status == LpStatus::Optimal);
  std::string text = read_text_file(opts.dump_path);
  CHECK(text.find("Minimize") != std::string::npos);
  CHECK(text.find("Subject To") != std::string::npos);
  std::remove(opts.dump_path.c_str());
}
