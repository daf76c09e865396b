#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "evodarcy/fem.hpp"
#include "evodarcy/geometry.hpp"
#include "evodarcy/linalg.hpp"

using namespace evodarcy;

namespace {

constexpr double kPi = 3.14159265358979323846;

double slope_loglog(const std::vector<double>& h, const std::vector<double>& e) {
  const int n = static_cast<int>(h.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = std::log(h[i]), y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Raw-ordinal nodal interpolation of a velocity field (active nodes only).
std::vector<double> raw_velocity(const FemMesh& mesh, const DofMaps& maps,
                                 const std::function<Vec2(Vec2)>& fn) {
  std::vector<double> u(2 * maps.n_vraw, 0.0);
  for (int iy = 0; iy < mesh.vny(); ++iy)
    for (int ix = 0; ix < mesh.vnx(); ++ix) {
      const int32_t r = maps.vraw[mesh.vnode(ix, iy)];
      if (r < 0) continue;
      const Vec2 v = fn(mesh.vnode_pos(ix, iy));
      u[2 * r] = v.x;
      u[2 * r + 1] = v.y;
    }
  return u;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Independent 1D quadratic / linear shape values for oracle quadrature.
double q2b(int i, double s) {
  if (i == 0) return (1.0 - s) * (1.0 - 2.0 * s);
  if (i == 1) return 4.0 * s * (1.0 - s);
  return s * (2.0 * s - 1.0);
}
double q2d(int i, double s) {
  if (i == 0) return 4.0 * s - 3.0;
  if (i == 1) return 4.0 - 8.0 * s;
  return 4.0 * s - 1.0;
}
double q1b(int i, double s) { return i == 0 ? 1.0 - s : s; }

}  // namespace

TEST_CASE("fem: mesh bookkeeping and validation") {
  FemMesh m = FemMesh::rectangle(3, 2, -1.0, 0.5, 1.5, 1.0);
  CHECK(m.hx == doctest::Approx(0.5));
  CHECK(m.hy == doctest::Approx(0.5));
  CHECK(m.n_active_cells() == 6);
  CHECK(m.vnx() == 7);
  CHECK(m.vny() == 5);
  CHECK(m.pnx() == 4);
  const Vec2 p = m.vnode_pos(3, 2);
  CHECK(p.x == doctest::Approx(-0.25));
  CHECK(p.y == doctest::Approx(1.0));

  CHECK_THROWS_AS(FemMesh::from_mask(2, 2, 0, 0, 1, 1, {1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(FemMesh::from_mask(2, 1, 0, 0, 1, 1, {0, 0}), EmptyPoreCell);

  ReferenceCell cell = ReferenceCell::from_levelset(
      8, [](Vec2 y) { return 0.2 - std::abs(y.y - 0.5); });
  FemMesh cm = FemMesh::from_cell(cell);
  int pore = 0;
  for (int iy = 0; iy < 8; ++iy)
    for (int ix = 0; ix < 8; ++ix) pore += cell.pore(ix, iy) ? 1 : 0;
  CHECK(cm.n_active_cells() == pore);
  CHECK(cm.n_active_cells() < 64);
}

TEST_CASE("fem: constants lie in the kernel of both viscous forms") {
  FemMesh mesh = FemMesh::rectangle(5, 4, 0.0, 0.0, 1.25, 1.0);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  const std::vector<double> ones =
      raw_velocity(mesh, maps, [](Vec2) { return Vec2{1.0, -2.0}; });

  MicroDeformation fam =
      make_radial_bump_family(8, PorosityField::constant(0.55));
  FemMesh cmesh = FemMesh::from_cell(fam.cell);
  const DofMaps cmaps = classify_dofs(cmesh, StokesBC::all_dirichlet());
  TransformedCoeffs rad = TransformedCoeffs::from_sampler(
      cmesh, [&](Vec2 y) { return fam.eval_theta(0.55, y); }, nullptr,
      fam.exact_cofactor, 1.0, 1.0, fam.c_J);
  const std::vector<double> cones =
      raw_velocity(cmesh, cmaps, [](Vec2) { return Vec2{0.7, 0.3}; });

  for (bool sym : {false, true}) {
    SparseMatrix K =
        assemble_viscous_block(mesh, TransformedCoeffs::identity(mesh, 2.0), sym);
    K.validate();
    CHECK(max_abs(K.multiply(ones)) < 1e-12);

    SparseMatrix Kc = assemble_viscous_block(cmesh, rad, sym);
    CHECK(max_abs(Kc.multiply(cones)) < 1e-12);
  }
}

TEST_CASE("fem: symmetric form annihilates rigid rotations, gradient form does not") {
  FemMesh mesh = FemMesh::rectangle(4, 4, 0.0, 0.0, 1.0, 1.0);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  const double nu = 1.4;
  TransformedCoeffs co = TransformedCoeffs::identity(mesh, nu);
  const std::vector<double> rot = raw_velocity(
      mesh, maps, [](Vec2 p) { return Vec2{-(p.y - 0.4), p.x - 0.6}; });

  SparseMatrix Ks = assemble_viscous_block(mesh, co, true);
  CHECK(max_abs(Ks.multiply(rot)) < 1e-12);

  SparseMatrix Kg = assemble_viscous_block(mesh, co, false);
  const std::vector<double> kr = Kg.multiply(rot);
  double energy = 0.0;
  for (size_t i = 0; i < kr.size(); ++i) energy += kr[i] * rot[i];
  // grad of the rotation has Frobenius norm squared 2 everywhere.
  CHECK(energy == doctest::Approx(2.0 * nu).epsilon(1e-12));
}

TEST_CASE("fem: assembled energy matches independent quadrature of the interpolant") {
  MicroDeformation fam =
      make_radial_bump_family(10, PorosityField::constant(0.55));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  const double nu = 1.3, eps_scale = 0.25;
  TransformedCoeffs co = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval_theta(0.55, y); }, nullptr,
      fam.exact_cofactor, nu, eps_scale, fam.c_J);

  auto field = [](Vec2 p) {
    return Vec2{std::sin(1.0 + 2.0 * p.x) * std::cos(3.0 * p.y),
                p.x * p.x * p.y - 0.3 * p.y + std::cos(2.0 * p.x)};
  };
  const std::vector<double> u = raw_velocity(mesh, maps, field);

  SparseMatrix K = assemble_viscous_block(mesh, co, false);
  const std::vector<double> ku = K.multiply(u);
  double e_mat = 0.0;
  for (size_t i = 0; i < u.size(); ++i) e_mat += u[i] * ku[i];

  // Independent element loop: evaluate the Q2 interpolant's reference
  // gradient directly and push it through Eigen's inverse for the metric.
  const double g3[3] = {0.5 - std::sqrt(0.6) / 2.0, 0.5,
                        0.5 + std::sqrt(0.6) / 2.0};
  const double w3[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
  double e_direct = 0.0;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.cell_active(cx, cy)) continue;
      for (int qy = 0; qy < 3; ++qy)
        for (int qx = 0; qx < 3; ++qx) {
          const Vec2 y{(cx + g3[qx]) / mesh.nx, (cy + g3[qy]) / mesh.ny};
          Eigen::Matrix2d grad = Eigen::Matrix2d::Zero();  // grad(i,j)=d_i u_j
          for (int ly = 0; ly < 3; ++ly)
            for (int lx = 0; lx < 3; ++lx) {
              const int32_t r =
                  maps.vraw[mesh.vnode(2 * cx + lx, 2 * cy + ly)];
              const double dx = q2d(lx, g3[qx]) * q2b(ly, g3[qy]) / mesh.hx;
              const double dy = q2b(lx, g3[qx]) * q2d(ly, g3[qy]) / mesh.hy;
              grad(0, 0) += dx * u[2 * r];
              grad(0, 1) += dx * u[2 * r + 1];
              grad(1, 0) += dy * u[2 * r];
              grad(1, 1) += dy * u[2 * r + 1];
            }
          const DeformationSample s = fam.eval_theta(0.55, y);
          Eigen::Matrix2d Psi;
          Psi << s.Psi(0, 0), s.Psi(0, 1), s.Psi(1, 0), s.Psi(1, 1);
          const Eigen::Matrix2d Minv = Psi.inverse().transpose();
          const Eigen::Matrix2d phys = Minv * grad;
          e_direct += nu * eps_scale * s.J * phys.squaredNorm() * w3[qx] *
                      w3[qy] * mesh.hx * mesh.hy;
        }
    }
  CHECK(e_mat == doctest::Approx(e_direct).epsilon(1e-12));
}

TEST_CASE("fem: single-cell pressure coupling against a hand quadrature") {
  FemMesh mesh = FemMesh::rectangle(1, 1, 0.0, 0.0, 1.0, 1.0);
  TransformedCoeffs co = TransformedCoeffs::identity(mesh);
  SparseMatrix B = assemble_pressure_coupling(mesh, co);
  REQUIRE(B.rows == 4);
  REQUIRE(B.cols == 18);

  // Identity coefficients make every entry a polynomial of degree at most
  // three per axis, so two-point Gauss is exact.
  const double g2[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px)
      for (int ly = 0; ly < 3; ++ly)
        for (int lx = 0; lx < 3; ++lx)
          for (int a = 0; a < 2; ++a) {
            double hand = 0.0;
            for (int qy = 0; qy < 2; ++qy)
              for (int qx = 0; qx < 2; ++qx) {
                const double psi = q1b(px, g2[qx]) * q1b(py, g2[qy]);
                const double d =
                    a == 0 ? q2d(lx, g2[qx]) * q2b(ly, g2[qy])
                           : q2b(lx, g2[qx]) * q2d(ly, g2[qy]);
                hand += 0.25 * psi * d;
              }
            const int row = 2 * py + px;  // pressure nodes are row-major
            const int col = 2 * static_cast<int>(
                                mesh.vnode(2 * 0 + lx, 2 * 0 + ly)) +
                            a;
            CHECK(B.coeff(row, col) == doctest::Approx(hand).epsilon(1e-13));
          }
}

TEST_CASE("fem: coupling matrix reproduces the pore volume rate") {
  // The time derivative of the deformed pore volume equals the divergence of
  // the cofactor-weighted wall velocity; the assembled coupling matrix applied
  // to the interpolated wall velocity must integrate to the same rate against
  // any test pressure.
  PorosityField por;
  por.theta = [](double t, Vec2) { return 0.6 - 0.05 * t; };
  por.dt_theta = [](double, Vec2) { return -0.05; };
  por.grad_theta = [](double, Vec2) { return Vec2{0.0, 0.0}; };
  MicroDeformation fam = make_radial_bump_family(24, por);
  const double t = 0.5;
  const Vec2 x{0.3, 0.7};

  FemMesh mesh = FemMesh::from_cell(fam.cell);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  TransformedCoeffs co = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval(t, x, y); }, nullptr,
      fam.exact_cofactor, 1.0, 1.0, fam.c_J);
  SparseMatrix B = assemble_pressure_coupling(mesh, co);

  const std::vector<double> wall = raw_velocity(
      mesh, maps, [&](Vec2 y) { return fam.dt_psi0(t, x, y); });
  std::vector<double> bw;
  B.multiply(wall, bw);

  auto pressure = [](Vec2 y) { return 1.0 + y.x - 0.5 * y.y * y.y; };
  double lhs = 0.0;
  for (int iy = 0; iy < mesh.pny(); ++iy)
    for (int ix = 0; ix < mesh.pnx(); ++ix) {
      const int32_t r = maps.praw[mesh.pnode(ix, iy)];
      if (r >= 0) lhs += pressure(mesh.pnode_pos(ix, iy)) * bw[r];
    }
  const double rhs = integrate_cells(
      mesh, [&](Vec2 y) { return pressure(y) * fam.dt_J0(t, x, y); });
  CHECK(lhs == doctest::Approx(rhs).epsilon(5e-3));
}

TEST_CASE("fem: finite-difference cofactor divergence stays near the exact path") {
  MicroDeformation fam =
      make_radial_bump_family(16, PorosityField::constant(0.55));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  auto sample = [&](Vec2 y) { return fam.eval_theta(0.55, y); };
  TransformedCoeffs exact = TransformedCoeffs::from_sampler(
      mesh, sample, nullptr, true, 1.0, 1.0, fam.c_J);
  TransformedCoeffs fd = TransformedCoeffs::from_sampler(
      mesh, sample, nullptr, false, 1.0, 1.0, fam.c_J);
  TransformedCoeffs analytic = TransformedCoeffs::from_sampler(
      mesh, sample, [](Vec2) { return Vec2{0.0, 0.0}; }, false, 1.0, 1.0,
      fam.c_J);

  SparseMatrix Be = assemble_pressure_coupling(mesh, exact);
  SparseMatrix Bf = assemble_pressure_coupling(mesh, fd);
  SparseMatrix Ba = assemble_pressure_coupling(mesh, analytic);

  CHECK(Ba.val == Be.val);  // zero analytic divergence is bitwise the exact path

  REQUIRE(Bf.val.size() == Be.val.size());
  double scale = 0.0, diff = 0.0;
  for (size_t i = 0; i < Be.val.size(); ++i) {
    scale = std::max(scale, std::abs(Be.val[i]));
    diff = std::max(diff, std::abs(Be.val[i] - Bf.val[i]));
  }
  CHECK(diff < 2e-3 * scale);
}

TEST_CASE("fem: identity sampler and identity constructor assemble bit-identical systems") {
  MicroDeformation fam = make_channel_family(8, PorosityField::constant(0.5));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  TransformedCoeffs ci = TransformedCoeffs::identity(mesh, 1.7);
  TransformedCoeffs cs = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval_theta(0.5, y); }, nullptr,
      fam.exact_cofactor, 1.7, 1.0, fam.c_J);

  for (bool sym : {false, true}) {
    SparseMatrix Ai = assemble_viscous_block(mesh, ci, sym);
    SparseMatrix As = assemble_viscous_block(mesh, cs, sym);
    CHECK(Ai.row_ptr == As.row_ptr);
    CHECK(Ai.col == As.col);
    CHECK(Ai.val == As.val);
  }
  SparseMatrix Bi = assemble_pressure_coupling(mesh, ci);
  SparseMatrix Bs = assemble_pressure_coupling(mesh, cs);
  CHECK(Bi.row_ptr == Bs.row_ptr);
  CHECK(Bi.col == Bs.col);
  CHECK(Bi.val == Bs.val);
}

TEST_CASE("fem: zero data yields the zero solution on an enclosed domain") {
  FemMesh mesh = FemMesh::rectangle(6, 6, 0.0, 0.0, 1.0, 1.0);
  TransformedCoeffs co = TransformedCoeffs::identity(mesh);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  CHECK(maps.pressure_nullspace);
  CHECK(maps.n_vfree == 11 * 11);

  StokesSolution sol =
      solve_stokes(mesh, co, StokesBC::all_dirichlet(), StokesRhs{}, false);
  CHECK(sol.report.converged);
  CHECK(max_abs(sol.velocity) == 0.0);
  CHECK(max_abs(sol.pressure) == 0.0);
  CHECK(sol.div_residual == 0.0);
}

TEST_CASE("fem: constant boundary pressure drives no flow through open sides") {
  MicroDeformation fam =
      make_radial_bump_family(8, PorosityField::constant(0.6));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  TransformedCoeffs co = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval_theta(0.6, y); }, nullptr,
      fam.exact_cofactor, 1.0, 1.0, fam.c_J);
  StokesBC bc;
  bc.left = bc.right = SideBC::stress;
  const DofMaps maps = classify_dofs(mesh, bc);
  CHECK(!maps.pressure_nullspace);

  // A constant far-field pressure has zero gradient, so after shifting it
  // into the natural boundary term the entire load vanishes: the shifted
  // velocity and pressure are exactly zero and the physical pressure is the
  // constant itself.
  StokesRhs rhs;
  rhs.grad_pb = [](Vec2) { return Vec2{0.0, 0.0}; };
  StokesSolution sol = solve_stokes(mesh, co, bc, rhs, true);
  CHECK(sol.report.converged);
  CHECK(max_abs(sol.velocity) == 0.0);
  CHECK(max_abs(sol.pressure) == 0.0);
}

TEST_CASE("fem: linear boundary pressure reproduces plane channel flow exactly") {
  const int n = 8;
  const double nu = 0.7, G = 1.2;
  FemMesh mesh = FemMesh::rectangle(n, n, 0.0, 0.0, 1.0, 1.0);
  TransformedCoeffs co = TransformedCoeffs::identity(mesh, nu);
  StokesBC bc;
  bc.left = bc.right = SideBC::stress;
  StokesRhs rhs;
  rhs.grad_pb = [G](Vec2) { return Vec2{-G, 0.0}; };

  StokesSolution sol = solve_stokes(mesh, co, bc, rhs, false);
  CHECK(sol.report.converged);
  auto exact = [&](Vec2 p) {
    return Vec2{G * p.y * (1.0 - p.y) / (2.0 * nu), 0.0};
  };
  // The parabola lies in the discrete space and the shifted pressure is zero,
  // so the only error is the solver tolerance.
  CHECK(l2_error_q2(mesh, sol.velocity, exact) < 1e-6);
  CHECK(max_abs(sol.pressure) < 1e-6);
}

TEST_CASE("fem: lift data shifts the solution without changing the pressure") {
  MicroDeformation fam =
      make_channel_family(12, PorosityField::constant(0.6));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  TransformedCoeffs co = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval_theta(0.6, y); }, nullptr,
      fam.exact_cofactor, 1.0, 1.0, fam.c_J);
  StokesBC bc = StokesBC::fully_periodic();
  StokesRhs rhs;
  rhs.body_force = [](Vec2) { return Vec2{1.0, 0.0}; };
  StokesSolution base = solve_stokes(mesh, co, bc, rhs, false);
  CHECK(base.report.converged);

  // Use the computed solution itself as lift: it vanishes on the interior
  // walls and is periodic, so the nodal interpolant lies in the test space
  // and the shifted problem must return exactly zero velocity.
  StokesRhs shifted = rhs;
  shifted.lift = [&](Vec2 p) { return eval_q2(mesh, base.velocity, p); };
  StokesSolution sol = solve_stokes(mesh, co, bc, shifted, false);
  CHECK(sol.report.converged);

  const double uscale = max_abs(base.velocity);
  CHECK(uscale > 0.0);
  CHECK(max_abs(sol.velocity) < 1e-6 * std::max(uscale, 1.0));
  double pdiff = 0.0;
  for (size_t i = 0; i < sol.pressure.size(); ++i)
    pdiff = std::max(pdiff, std::abs(sol.pressure[i] - base.pressure[i]));
  CHECK(pdiff < 1e-6);
}

TEST_CASE("fem: periodic transformed flow on a masked cell") {
  MicroDeformation fam =
      make_channel_family(16, PorosityField::constant(0.625));
  FemMesh mesh = FemMesh::from_cell(fam.cell);
  TransformedCoeffs co = TransformedCoeffs::from_sampler(
      mesh, [&](Vec2 y) { return fam.eval_theta(0.625, y); }, nullptr,
      fam.exact_cofactor, 1.0, 1.0, fam.c_J);
  StokesBC bc = StokesBC::fully_periodic();
  StokesRhs rhs;
  rhs.body_force = [](Vec2) { return Vec2{1.0, 0.0}; };

  StokesSolution sol = solve_stokes(mesh, co, bc, rhs, false);
  CHECK(sol.report.converged);
  CHECK(sol.div_residual < 1e-8);

  // Interior staircase nodes are pinned.
  for (int iy = 0; iy < mesh.vny(); ++iy)
    for (int ix = 0; ix < mesh.vnx(); ++ix) {
      bool act = false, inact = false;
      for (int cy = std::max(0, (iy - 1) / 2); cy <= std::min(mesh.ny - 1, iy / 2); ++cy)
        for (int cx = std::max(0, (ix - 1) / 2); cx <= std::min(mesh.nx - 1, ix / 2); ++cx)
          (mesh.cell_active(cx, cy) ? act : inact) = true;
      if (act && inact) {
        CHECK(sol.velocity[2 * mesh.vnode(ix, iy)] == 0.0);
        CHECK(sol.velocity[2 * mesh.vnode(ix, iy) + 1] == 0.0);
      }
    }

  // Periodic pairs carry the same value, and the body force drives a positive
  // mean flux along its own direction.
  for (int iy = 0; iy < mesh.vny(); iy += 3) {
    CHECK(sol.velocity[2 * mesh.vnode(0, iy)] ==
          sol.velocity[2 * mesh.vnode(mesh.vnx() - 1, iy)]);
  }
  const double flux = integrate_cells(mesh, [&](Vec2 p) {
    return eval_q2(mesh, sol.velocity, p).x;
  });
  CHECK(flux > 0.0);
}

TEST_CASE("fem: lid-driven cavity matches a finer self-reference") {
  auto lid = [](Vec2 p) {
    if (p.y > 1.0 - 1e-12) {
      const double s = p.x * (1.0 - p.x);
      return Vec2{16.0 * s * s, 0.0};
    }
    return Vec2{0.0, 0.0};
  };
  auto solve_cavity = [&](int n) {
    FemMesh mesh = FemMesh::rectangle(n, n, 0.0, 0.0, 1.0, 1.0);
    TransformedCoeffs co = TransformedCoeffs::identity(mesh);
    StokesBC bc = StokesBC::all_dirichlet();
    bc.dirichlet_value = lid;
    return std::make_pair(mesh, solve_stokes(mesh, co, bc, StokesRhs{}, true));
  };
  auto [mesh16, sol16] = solve_cavity(16);
  auto [mesh64, sol64] = solve_cavity(64);
  CHECK(sol16.report.converged);
  CHECK(sol64.report.converged);

  const double norm_ref = l2_error_q2(mesh64, sol64.velocity, nullptr);
  const double err = l2_error_q2(mesh16, sol16.velocity, [&](Vec2 p) {
    return eval_q2(mesh64, sol64.velocity, p);
  });
  CHECK(norm_ref > 0.1);
  CHECK(err / norm_ref < 0.02);
}

TEST_CASE("fem: manufactured solution converges at the expected rate") {
  auto exact_u = [](Vec2 p) {
    const double sx = std::sin(kPi * p.x), sy = std::sin(kPi * p.y);
    return Vec2{kPi * sx * sx * std::sin(2.0 * kPi * p.y),
                -kPi * std::sin(2.0 * kPi * p.x) * sy * sy};
  };
  auto force = [](Vec2 p) {
    const double pi3 = kPi * kPi * kPi;
    const double sx = std::sin(kPi * p.x), sy = std::sin(kPi * p.y);
    const double s2x = std::sin(2.0 * kPi * p.x), s2y = std::sin(2.0 * kPi * p.y);
    const double c2x = std::cos(2.0 * kPi * p.x), c2y = std::cos(2.0 * kPi * p.y);
    const double lap1 = 2.0 * pi3 * c2x * s2y - 4.0 * pi3 * sx * sx * s2y;
    const double lap2 = 4.0 * pi3 * s2x * sy * sy - 2.0 * pi3 * s2x * c2y;
    const Vec2 gp{-kPi * std::sin(kPi * p.x) * std::cos(kPi * p.y),
                  -kPi * std::cos(kPi * p.x) * std::sin(kPi * p.y)};
    return Vec2{-lap1 + gp.x, -lap2 + gp.y};
  };

  std::vector<double> hs, errs;
  for (int n : {16, 32, 64}) {
    FemMesh mesh = FemMesh::rectangle(n, n, 0.0, 0.0, 1.0, 1.0);
    TransformedCoeffs co = TransformedCoeffs::identity(mesh);
    StokesRhs rhs;
    rhs.body_force = force;
    StokesSolution sol =
        solve_stokes(mesh, co, StokesBC::all_dirichlet(), rhs, false);
    CHECK(sol.report.converged);
    hs.push_back(1.0 / n);
    errs.push_back(l2_error_q2(mesh, sol.velocity, exact_u));
  }
  CHECK(errs[0] > errs[1]);
  CHECK(errs[1] > errs[2]);
  CHECK(slope_loglog(hs, errs) > 2.7);
}

TEST_CASE("fem: discrete residual is orthogonal to random test fields") {
  FemMesh mesh = FemMesh::rectangle(6, 5, 0.0, 0.0, 1.2, 1.0);
  TransformedCoeffs co = TransformedCoeffs::identity(mesh, 0.8);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  StokesRhs rhs;
  rhs.body_force = [](Vec2 p) {
    return Vec2{std::sin(3.0 * p.x) + p.y, std::cos(2.0 * p.y) - p.x * p.x};
  };
  const SparseMatrix A_raw = assemble_viscous_block(mesh, co, false);
  const SparseMatrix B_raw = assemble_pressure_coupling(mesh, co);
  const RawRhs raw = assemble_rhs(mesh, co, false, rhs);
  ConstrainedStokes con =
      apply_constraints(mesh, maps, co, A_raw, B_raw, raw);
  SaddleSolution sol = saddle_solve(con.sys);
  CHECK(sol.report.converged);

  std::vector<double> ru = con.sys.A.multiply(sol.u);
  std::vector<double> btp;
  con.sys.B.multiply_transpose(sol.p, btp);
  for (size_t i = 0; i < ru.size(); ++i)
    ru[i] -= btp[i] + con.sys.f[i];
  std::vector<double> rp = con.sys.B.multiply(sol.u);
  for (size_t i = 0; i < rp.size(); ++i) rp[i] -= con.sys.g[i];

  const double bscale =
      std::sqrt(dot_vec(con.sys.f, con.sys.f) + dot_vec(con.sys.g, con.sys.g));
  std::mt19937 gen(2026);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    double vu = 0.0, nv = 0.0;
    for (double r : ru) {
      const double v = dist(gen);
      vu += v * r;
      nv += v * v;
    }
    for (double r : rp) {
      const double v = dist(gen);
      vu += v * r;
      nv += v * v;
    }
    CHECK(std::abs(vu) <= 1e-8 * std::sqrt(nv) * bscale);
  }
}

TEST_CASE("fem: equal-order pressure space admits a spurious checkerboard mode") {
  const int n = 8;
  const double h = 1.0 / n;
  FemMesh mesh = FemMesh::rectangle(n, n, 0.0, 0.0, 1.0, 1.0);
  TransformedCoeffs co = TransformedCoeffs::identity(mesh);
  SparseMatrix B2 = assemble_pressure_coupling(mesh, co);

  std::vector<double> q((n + 1) * (n + 1));
  for (int iy = 0; iy <= n; ++iy)
    for (int ix = 0; ix <= n; ++ix)
      q[static_cast<size_t>(iy) * (n + 1) + ix] = ((ix + iy) % 2 == 0) ? 1.0 : -1.0;

  std::vector<double> w2;
  B2.multiply_transpose(q, w2);
  CHECK(std::sqrt(dot_vec(w2, w2)) > 1e-2);

  // Hand-assembled equal-order coupling (bilinear velocity, bilinear
  // pressure): the same checkerboard lies exactly in the kernel, which is the
  // instability this element pairing is chosen to avoid.
  const int nn = n + 1;
  std::vector<double> w1(2 * nn * nn, 0.0);
  const double g2[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  for (int cy = 0; cy < n; ++cy)
    for (int cx = 0; cx < n; ++cx)
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          const double w = 0.25 * h * h;
          double qval = 0.0;
          for (int py = 0; py < 2; ++py)
            for (int px = 0; px < 2; ++px)
              qval += q[static_cast<size_t>(cy + py) * nn + cx + px] *
                      q1b(px, g2[qx]) * q1b(py, g2[qy]);
          for (int ly = 0; ly < 2; ++ly)
            for (int lx = 0; lx < 2; ++lx) {
              const size_t v = static_cast<size_t>(cy + ly) * nn + cx + lx;
              const double dx = (lx == 0 ? -1.0 : 1.0) * q1b(ly, g2[qy]) / h;
              const double dy = q1b(lx, g2[qx]) * (ly == 0 ? -1.0 : 1.0) / h;
              w1[2 * v] += w * qval * dx;
              w1[2 * v + 1] += w * qval * dy;
            }
        }
  CHECK(std::sqrt(dot_vec(w1, w1)) < 1e-12);
}

TEST_CASE("fem: boundary tags and degenerate coefficients are rejected") {
  FemMesh mesh = FemMesh::rectangle(4, 4, 0.0, 0.0, 1.0, 1.0);
  StokesBC bc;
  bc.left = SideBC::periodic;
  CHECK_THROWS_AS(classify_dofs(mesh, bc), InconsistentBC);
  StokesBC bc2;
  bc2.top = SideBC::periodic;
  CHECK_THROWS_AS(classify_dofs(mesh, bc2), InconsistentBC);

  auto collapse = [](Vec2) {
    DeformationSample s;
    s.Psi = Mat2::identity();
    s.J = 0.05;
    s.A = Mat2::identity();
    return s;
  };
  CHECK_THROWS_AS(TransformedCoeffs::from_sampler(mesh, collapse, nullptr,
                                                  true, 1.0, 1.0, 0.1),
                  DegenerateJacobian);
}

TEST_CASE("fem: field evaluation and integration utilities are exact on polynomials") {
  FemMesh mesh = FemMesh::rectangle(3, 4, 0.0, -0.5, 1.5, 2.0);
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  auto quad = [](Vec2 p) {
    return Vec2{1.0 + p.x + 2.0 * p.y + p.x * p.x - p.x * p.y,
                0.5 - p.y * p.y + 3.0 * p.x * p.y};
  };
  std::vector<double> field(2 * mesh.n_vnodes(), 0.0);
  for (int iy = 0; iy < mesh.vny(); ++iy)
    for (int ix = 0; ix < mesh.vnx(); ++ix) {
      const Vec2 v = quad(mesh.vnode_pos(ix, iy));
      field[2 * mesh.vnode(ix, iy)] = v.x;
      field[2 * mesh.vnode(ix, iy) + 1] = v.y;
    }
  (void)maps;

  const Vec2 probe{0.37, 0.81};
  const Vec2 got = eval_q2(mesh, field, probe);
  const Vec2 want = quad(probe);
  CHECK(got.x == doctest::Approx(want.x).epsilon(1e-13));
  CHECK(got.y == doctest::Approx(want.y).epsilon(1e-13));

  const Mat2 g = eval_q2_gradient(mesh, field, probe);
  CHECK(g(0, 0) == doctest::Approx(1.0 + 2.0 * probe.x - probe.y).epsilon(1e-12));
  CHECK(g(1, 0) == doctest::Approx(2.0 - probe.x).epsilon(1e-12));
  CHECK(g(0, 1) == doctest::Approx(3.0 * probe.y).epsilon(1e-12));
  CHECK(g(1, 1) == doctest::Approx(-2.0 * probe.y + 3.0 * probe.x).epsilon(1e-12));

  CHECK(l2_error_q2(mesh, field, quad) < 1e-13);

  std::vector<double> pfield(mesh.n_pnodes());
  for (int iy = 0; iy < mesh.pny(); ++iy)
    for (int ix = 0; ix < mesh.pnx(); ++ix) {
      const Vec2 p = mesh.pnode_pos(ix, iy);
      pfield[mesh.pnode(ix, iy)] = 2.0 - p.x + 0.5 * p.y + p.x * p.y;
    }
  CHECK(eval_q1(mesh, pfield, probe) ==
        doctest::Approx(2.0 - probe.x + 0.5 * probe.y + probe.x * probe.y)
            .epsilon(1e-13));

  // x^2 y over [0,1.5] x [-0.5,1.5]: 1.125 * 1 = 1.125.
  const double integral =
      integrate_cells(mesh, [](Vec2 p) { return p.x * p.x * p.y; });
  CHECK(integral == doctest::Approx(1.125).epsilon(1e-13));
}
