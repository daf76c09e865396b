#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dense_oracle.hpp"
#include "evodarcy/linalg.hpp"

using namespace evodarcy;

namespace {

SparseMatrix identity_matrix(int n) {
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) d[i][i] = 1.0;
  return SparseMatrix::from_dense(d);
}

SparseMatrix tridiag_poisson(int n) {
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    d[i][i] = 2.0;
    if (i > 0) d[i][i - 1] = -1.0;
    if (i + 1 < n) d[i][i + 1] = -1.0;
  }
  return SparseMatrix::from_dense(d);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

// === cg_solve ==============================================================

TEST_CASE("cg: identity system solves in one iteration") {
  SparseMatrix m = identity_matrix(5);
  std::vector<double> b = {3.0, -1.0, 0.5, 2.0, 7.0};
  std::vector<double> x;
  SolveReport rep = cg_solve(m, b, x);
  CHECK(rep.converged);
  CHECK(rep.iterations <= 1);
  CHECK(max_abs_diff(x, b) < 1e-14);
}

TEST_CASE("cg: 2x2 diagonal system") {
  SparseMatrix m = SparseMatrix::from_dense({{1.0, 0.0}, {0.0, 2.0}});
  std::vector<double> b = {1.0, 2.0};
  std::vector<double> x;
  cg_solve(m, b, x);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cg: 1D Poisson n=8 matches dense elimination") {
  SparseMatrix m = tridiag_poisson(8);
  std::vector<double> b(8, 1.0);
  std::vector<double> x;
  cg_solve(m, b, x);
  std::vector<double> ref = oracle::dense_solve(m, b);
  CHECK(max_abs_diff(x, ref) < 1e-10);
}

TEST_CASE("cg: exhausted budget raises NoConvergence") {
  SparseMatrix m = tridiag_poisson(40);
  std::vector<double> b(40, 1.0);
  std::vector<double> x;
  KrylovOptions opt;
  opt.maxit = 2;
  CHECK_THROWS_AS(cg_solve(m, b, x, opt), NoConvergence);
}

TEST_CASE("cg: indefinite matrix raises SingularSystem") {
  SparseMatrix m = SparseMatrix::from_dense({{1.0, 0.0}, {0.0, -1.0}});
  std::vector<double> b = {0.0, 1.0};
  std::vector<double> x;
  CHECK_THROWS_AS(cg_solve(m, b, x), SingularSystem);
}

TEST_CASE("cg: deterministic — identical runs give bit-identical results") {
  SparseMatrix m = tridiag_poisson(30);
  std::vector<double> b(30);
  for (int i = 0; i < 30; ++i) b[i] = std::sin(0.7 * i) + 1.2;
  std::vector<double> x1, x2;
  cg_solve(m, b, x1);
  cg_solve(m, b, x2);
  for (int i = 0; i < 30; ++i) CHECK(x1[i] == x2[i]);
}

// === saddle_solve ==========================================================

TEST_CASE("saddle: A=I, B=0 gives u=f, p=0") {
  SaddleSystem s;
  s.A = identity_matrix(2);
  s.B = SparseMatrix::from_dense({{0.0, 0.0}});
  s.f = {2.0, -3.0};
  s.g = {0.0};
  s.pressure_nullspace = true;  // B = 0 leaves the pressure undetermined
  SaddleSolution sol = saddle_solve(s);
  CHECK(sol.u[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(sol.u[1] == doctest::Approx(-3.0).epsilon(1e-10));
  CHECK(std::abs(sol.p[0]) < 1e-10);
}

TEST_CASE("saddle: 2x2+1 toy matches dense elimination") {
  SaddleSystem s;
  s.A = identity_matrix(2);
  s.B = SparseMatrix::from_dense({{1.0, 0.0}});
  s.f = {1.0, 0.0};
  s.g = {0.0};
  SaddleSolution sol = saddle_solve(s);
  auto [u_ref, p_ref] = oracle::dense_saddle(s.A, s.B, s.f, s.g);
  CHECK(max_abs_diff(sol.u, u_ref) < 1e-9);
  CHECK(max_abs_diff(sol.p, p_ref) < 1e-9);
  // Hand elimination: u1 - p = 1, u2 = 0, u1 = 0  =>  u = (0,0), p = -1.
  CHECK(std::abs(sol.u[0]) < 1e-9);
  CHECK(std::abs(sol.u[1]) < 1e-9);
  CHECK(sol.p[0] == doctest::Approx(-1.0).epsilon(1e-8));
}

namespace {

// Small but non-trivial inf-sup-stable system shared by the method tests.
SaddleSystem make_toy_system() {
  SaddleSystem s;
  // SPD A: diagonally dominant with some coupling.
  std::vector<std::vector<double>> a(6, std::vector<double>(6, 0.0));
  for (int i = 0; i < 6; ++i) a[i][i] = 4.0 + i;
  for (int i = 0; i + 1 < 6; ++i) a[i][i + 1] = a[i + 1][i] = -1.0;
  s.A = SparseMatrix::from_dense(a);
  s.A.symmetric_hint = true;
  s.B = SparseMatrix::from_dense(
      {{1.0, 0.5, 0.0, -0.25, 0.0, 0.0}, {0.0, 0.5, -1.0, 0.0, 0.75, 0.0}});
  s.f = {1.0, 0.0, -2.0, 0.5, 0.0, 1.5};
  s.g = {0.25, -0.5};
  return s;
}

}  // namespace

TEST_CASE("saddle: minres and uzawa agree with the dense oracle") {
  SaddleSystem s = make_toy_system();
  auto [u_ref, p_ref] = oracle::dense_saddle(s.A, s.B, s.f, s.g);

  SaddleOptions minres_opt;
  SaddleSolution m1 = saddle_solve(s, minres_opt);
  CHECK(max_abs_diff(m1.u, u_ref) < 1e-8);
  CHECK(max_abs_diff(m1.p, p_ref) < 1e-8);

  SaddleOptions uz;
  uz.method = SaddleMethod::uzawa;
  SaddleSolution m2 = saddle_solve(s, uz);
  CHECK(max_abs_diff(m2.u, u_ref) < 1e-6);
  CHECK(max_abs_diff(m2.p, p_ref) < 1e-6);
}

TEST_CASE("saddle: block residuals below tolerance") {
  SaddleSystem s = make_toy_system();
  SaddleSolution sol = saddle_solve(s);
  std::vector<double> au = s.A.multiply(sol.u);
  std::vector<double> btp;
  s.B.multiply_transpose(sol.p, btp);
  std::vector<double> bu = s.B.multiply(sol.u);
  double r1 = 0.0, r2 = 0.0;
  for (size_t i = 0; i < au.size(); ++i)
    r1 = std::max(r1, std::abs(au[i] - btp[i] - s.f[i]));
  for (size_t i = 0; i < bu.size(); ++i)
    r2 = std::max(r2, std::abs(bu[i] - s.g[i]));
  CHECK(r1 < 1e-8);
  CHECK(r2 < 1e-8);
}

TEST_CASE("saddle: pressure nullspace handled, weighted mean < 1e-12") {
  // B rows sum to zero -> constant pressures invisible; g compatible.
  SaddleSystem s;
  std::vector<std::vector<double>> a(4, std::vector<double>(4, 0.0));
  for (int i = 0; i < 4; ++i) a[i][i] = 3.0;
  a[0][1] = a[1][0] = -0.5;
  s.A = SparseMatrix::from_dense(a);
  s.B = SparseMatrix::from_dense(
      {{1.0, -1.0, 0.5, 0.0}, {-1.0, 1.0, -0.5, 0.0}});
  s.f = {1.0, 2.0, 0.0, -1.0};
  s.g = {0.3, -0.3};
  s.pressure_nullspace = true;
  s.pressure_weights = {1.0, 2.0};
  SaddleSolution sol = saddle_solve(s);
  const double wmean = (1.0 * sol.p[0] + 2.0 * sol.p[1]) / 3.0;
  CHECK(std::abs(wmean) < 1e-12);
  // Residual of the first block equation still holds.
  std::vector<double> au = s.A.multiply(sol.u);
  std::vector<double> btp;
  s.B.multiply_transpose(sol.p, btp);
  for (int i = 0; i < 4; ++i)
    CHECK(au[i] - btp[i] == doctest::Approx(s.f[i]).epsilon(1e-7));
}

TEST_CASE("saddle: deterministic across repeated runs") {
  SaddleSystem s = make_toy_system();
  SaddleSolution a = saddle_solve(s);
  SaddleSolution b = saddle_solve(s);
  for (size_t i = 0; i < a.u.size(); ++i) CHECK(a.u[i] == b.u[i]);
  for (size_t i = 0; i < a.p.size(); ++i) CHECK(a.p[i] == b.p[i]);
}

// === min_generalized_eig ===================================================

TEST_CASE("eig: A=diag(3,1), M=I gives (1, e2)") {
  SparseMatrix a = SparseMatrix::from_dense({{3.0, 0.0}, {0.0, 1.0}});
  SparseMatrix m = identity_matrix(2);
  EigResult r = min_generalized_eig(a, m);
  CHECK(r.lambda == doctest::Approx(1.0).epsilon(1e-7));
  // Eigenvector aligned with e2 (sign-free check).
  CHECK(std::abs(r.v[0]) < 1e-4 * std::abs(r.v[1]));
}

TEST_CASE("eig: 2x2 pencil diag(2,8) vs diag(1,2) gives 2") {
  SparseMatrix a = SparseMatrix::from_dense({{2.0, 0.0}, {0.0, 8.0}});
  SparseMatrix m = SparseMatrix::from_dense({{1.0, 0.0}, {0.0, 2.0}});
  EigResult r = min_generalized_eig(a, m);
  CHECK(r.lambda == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("eig: random 20x20 SPD pencil matches dense oracle to 1e-6") {
  std::mt19937 rng(12345);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const int n = 20;
  std::vector<std::vector<double>> ra(n, std::vector<double>(n)),
      rm(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      ra[i][j] = dist(rng);
      rm[i][j] = dist(rng);
    }
  // A = Ra^T Ra + I, M = Rm^T Rm + I: both SPD.
  auto gram_plus_i = [n](const std::vector<std::vector<double>>& r) {
    std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) g[i][j] += r[k][i] * r[k][j];
        if (i == j) g[i][j] += 1.0;
      }
    return g;
  };
  SparseMatrix a = SparseMatrix::from_dense(gram_plus_i(ra));
  SparseMatrix m = SparseMatrix::from_dense(gram_plus_i(rm));
  EigResult r = min_generalized_eig(a, m, 1e-10, 2000);
  const double ref = oracle::dense_min_gen_eig(a, m);
  CHECK(std::abs(r.lambda - ref) < 1e-6 * std::max(1.0, std::abs(ref)));
}

TEST_CASE("eig: returned lambda equals the Rayleigh quotient of returned v") {
  SparseMatrix a = tridiag_poisson(12);
  SparseMatrix m = identity_matrix(12);
  EigResult r = min_generalized_eig(a, m);
  CHECK(r.lambda == rayleigh_quotient(a, m, r.v));
}

// === project_mean_zero =====================================================

TEST_CASE("mean projection: constant vector maps to zero") {
  std::vector<double> p(7, 4.2);
  std::vector<double> w(7, 0.5);
  std::vector<double> out = project_mean_zero(p, w);
  for (double v : out) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("mean projection: idempotent on mean-zero input") {
  std::vector<double> p = {1.0, -2.0, 1.0};
  std::vector<double> w = {1.0, 1.0, 1.0};
  std::vector<double> out = project_mean_zero(p, w);
  std::vector<double> out2 = project_mean_zero(out, w);
  for (size_t i = 0; i < p.size(); ++i) CHECK(out[i] == out2[i]);
}

TEST_CASE("mean projection: p=(1,3), w=(1,1) gives (-1,1)") {
  std::vector<double> out = project_mean_zero({1.0, 3.0}, {1.0, 1.0});
  CHECK(out[0] == doctest::Approx(-1.0));
  CHECK(out[1] == doctest::Approx(1.0));
}

// === SparseMatrix plumbing ================================================

TEST_CASE("sparse: validate catches asymmetry under the symmetric hint") {
  SparseMatrix m = SparseMatrix::from_dense({{1.0, 2.0}, {0.5, 1.0}});
  m.symmetric_hint = true;
  CHECK_THROWS_AS(m.validate(), AsymmetryExceeded);
  m.symmetric_hint = false;
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("sparse: csr builder sorts and uniques columns") {
  CsrBuilder b(2, 4);
  b.begin_row(0);
  b.add(3);
  b.add(1);
  b.add(3);
  b.add(0);
  b.begin_row(1);
  b.add(2);
  b.add(2);
  SparseMatrix m = b.finish();
  CHECK(m.nnz() == 4);
  CHECK(m.col[0] == 0);
  CHECK(m.col[1] == 1);
  CHECK(m.col[2] == 3);
  CHECK(m.col[3] == 2);
  CHECK_NOTHROW(m.validate());
  m.coeff_ref(0, 3) = 5.0;
  CHECK(m.coeff(0, 3) == 5.0);
  CHECK(m.coeff(0, 2) == 0.0);
  CHECK_THROWS_AS(m.coeff_ref(1, 0), std::out_of_range);
}

TEST_CASE("sparse: matrix market dump has coordinate header and all entries") {
  SparseMatrix m = SparseMatrix::from_dense({{1.5, 0.0}, {0.0, -2.25}});
  std::ostringstream os;
  m.dump_matrix_market(os);
  const std::string text = os.str();
  CHECK(text.find("%%MatrixMarket matrix coordinate real general") == 0);
  CHECK(text.find("2 2 2") != std::string::npos);
  CHECK(text.find("1 1 1.5") != std::string::npos);
  CHECK(text.find("2 2 -2.25") != std::string::npos);
}

TEST_CASE("sparse: transpose multiply agrees with dense transpose") {
  SparseMatrix m =
      SparseMatrix::from_dense({{1.0, 2.0, 0.0}, {0.0, -1.0, 3.0}});
  std::vector<double> x = {2.0, -1.0};
  std::vector<double> y;
  m.multiply_transpose(x, y);
  CHECK(y[0] == doctest::Approx(2.0));
  CHECK(y[1] == doctest::Approx(5.0));
  CHECK(y[2] == doctest::Approx(-3.0));
}
