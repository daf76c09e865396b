#include "evodarcy/twoscale.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace evodarcy {

namespace {

constexpr double kGaussOff = 0.3872983346207416885;  // sqrt(3/5)/2
constexpr double kQp[3] = {0.5 - kGaussOff, 0.5, 0.5 + kGaussOff};
constexpr double kQw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

// 1D quadratic Lagrange basis on [0,1] with nodes {0, 1/2, 1}.
double n2(int i, double s) {
  switch (i) {
    case 0: return (2.0 * s - 1.0) * (s - 1.0);
    case 1: return 4.0 * s * (1.0 - s);
    default: return s * (2.0 * s - 1.0);
  }
}

// Bilinear evaluation of a nodal macro pressure field (clamped to the grid).
double eval_macro_q1(const MacroMesh& mesh, const std::vector<double>& q,
                     Vec2 p) {
  double sx = (p.x - mesh.x0) / mesh.hx;
  double sy = (p.y - mesh.y0) / mesh.hy;
  int cx = std::clamp(static_cast<int>(std::floor(sx)), 0, mesh.nx - 1);
  int cy = std::clamp(static_cast<int>(std::floor(sy)), 0, mesh.ny - 1);
  const double lx = std::clamp(sx - cx, 0.0, 1.0);
  const double ly = std::clamp(sy - cy, 0.0, 1.0);
  const double q00 = q[static_cast<size_t>(mesh.node(cx, cy))];
  const double q10 = q[static_cast<size_t>(mesh.node(cx + 1, cy))];
  const double q01 = q[static_cast<size_t>(mesh.node(cx, cy + 1))];
  const double q11 = q[static_cast<size_t>(mesh.node(cx + 1, cy + 1))];
  return (1.0 - lx) * (1.0 - ly) * q00 + lx * (1.0 - ly) * q10 +
         (1.0 - lx) * ly * q01 + lx * ly * q11;
}

// Componentwise fractional part of x/eps, mapping a point to its cell
// coordinate y in [0,1)^2.
Vec2 micro_frac(Vec2 x, double eps) {
  const double sx = x.x / eps, sy = x.y / eps;
  return {sx - std::floor(sx), sy - std::floor(sy)};
}

// Restrict a raw-space velocity operator (2 dofs per active node,
// interleaved) to the free dofs of `maps`, folding periodic slaves onto
// their masters and dropping Dirichlet rows/columns.
SparseMatrix restrict_velocity(const SparseMatrix& raw, const FemMesh& mesh,
                               const DofMaps& maps) {
  std::vector<int64_t> free_of_raw(static_cast<size_t>(2 * maps.n_vraw), -1);
  for (int64_t nd = 0; nd < mesh.n_vnodes(); ++nd) {
    const int32_t r = maps.vraw[static_cast<size_t>(nd)];
    const int32_t f = maps.vfree[static_cast<size_t>(nd)];
    if (r < 0 || f < 0) continue;
    free_of_raw[static_cast<size_t>(2 * r)] = 2 * static_cast<int64_t>(f);
    free_of_raw[static_cast<size_t>(2 * r + 1)] = 2 * static_cast<int64_t>(f) + 1;
  }
  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  for (int row = 0; row < raw.rows; ++row) {
    const int64_t fr = free_of_raw[static_cast<size_t>(row)];
    if (fr < 0) continue;
    for (int64_t k = raw.row_ptr[row]; k < raw.row_ptr[row + 1]; ++k) {
      const int64_t fc = free_of_raw[static_cast<size_t>(raw.col[k])];
      if (fc < 0) continue;
      idx.push_back({static_cast<int>(fr), static_cast<int>(fc)});
      val.push_back(raw.val[k]);
    }
  }
  const int n = static_cast<int>(2 * maps.n_vfree);
  SparseMatrix out = SparseMatrix::from_triplets(n, n, std::move(idx), val);
  out.symmetric_hint = true;
  return out;
}

// Velocity mass matrix over the raw dofs: integral of phi_i phi_j per
// component (plain Lebesgue weight). 3x3 Gauss is exact for Q2 x Q2.
SparseMatrix assemble_velocity_mass(const FemMesh& mesh, const DofMaps& maps) {
  // Local 9x9 mass block, identical for every cell of a uniform grid.
  double w1[3][3];  // 1D mass: int n2_i n2_j ds
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int q = 0; q < 3; ++q) s += kQw[q] * n2(i, kQp[q]) * n2(j, kQp[q]);
      w1[i][j] = s;
    }
  const double area = mesh.hx * mesh.hy;
  double Me[9][9];
  for (int ly = 0; ly < 3; ++ly)
    for (int lx = 0; lx < 3; ++lx)
      for (int my = 0; my < 3; ++my)
        for (int mx = 0; mx < 3; ++mx)
          Me[3 * ly + lx][3 * my + mx] = area * w1[lx][mx] * w1[ly][my];

  std::vector<std::array<int, 2>> idx;
  std::vector<double> val;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active[static_cast<size_t>(cy) * mesh.nx + cx]) continue;
      int32_t raw[9];
      for (int ly = 0; ly < 3; ++ly)
        for (int lx = 0; lx < 3; ++lx)
          raw[3 * ly + lx] = maps.vraw[static_cast<size_t>(
              mesh.vnode(2 * cx + lx, 2 * cy + ly))];
      for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b)
          for (int comp = 0; comp < 2; ++comp) {
            idx.push_back({2 * raw[a] + comp, 2 * raw[b] + comp});
            val.push_back(Me[a][b]);
          }
    }
  const int n = static_cast<int>(2 * maps.n_vraw);
  SparseMatrix out = SparseMatrix::from_triplets(n, n, std::move(idx), val);
  out.symmetric_hint = true;
  return out;
}

void require_dirichlet(const DofMaps& maps, const char* who) {
  for (int32_t f : maps.vfree)
    if (f == -1) return;
  throw EmptyDirichletSet(std::string(who) +
                          ": no Dirichlet velocity nodes (the constrained "
                          "space contains constants)");
}

// Identity coefficients with the volume weight dropped (plain L2 Gram).
TransformedCoeffs unweighted(const TransformedCoeffs& coeffs) {
  TransformedCoeffs c = coeffs;
  c.nu = 1.0;
  c.eps_scale = 1.0;
  std::fill(c.J.begin(), c.J.end(), 1.0);
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Unfolding
// ---------------------------------------------------------------------------

std::vector<Vec2> midpoint_grid(int n) {
  if (n < 1) throw ConfigError("midpoint_grid: n must be positive");
  std::vector<Vec2> g;
  g.reserve(static_cast<size_t>(n) * n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      g.push_back({(ix + 0.5) / n, (iy + 0.5) / n});
  return g;
}

UnfoldedField unfold(const std::function<double(Vec2)>& u, Rational eps,
                     const std::vector<Vec2>& xs, const std::vector<Vec2>& ys) {
  if (!u) throw ConfigError("unfold: field is null");
  if (eps.num <= 0) throw ConfigError("unfold: eps must be positive");
  const double e = eps.to_double();
  UnfoldedField out;
  out.xs = xs;
  out.ys = ys;
  out.values.resize(xs.size() * ys.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    const Vec2 base{e * std::floor(xs[i].x / e), e * std::floor(xs[i].y / e)};
    for (size_t j = 0; j < ys.size(); ++j)
      out.values[i * ys.size() + j] =
          u({base.x + e * ys[j].x, base.y + e * ys[j].y});
  }
  return out;
}

double product_l2(const UnfoldedField& f, double macro_weight) {
  if (f.ys.empty() || f.xs.empty())
    throw ConfigError("product_l2: empty sample grid");
  if (!(macro_weight > 0.0))
    throw ConfigError("product_l2: macro weight must be positive");
  double s = 0.0;
  for (double v : f.values) s += v * v;
  return std::sqrt(s * macro_weight / static_cast<double>(f.ys.size()));
}

// ---------------------------------------------------------------------------
// Limit reconstruction
// ---------------------------------------------------------------------------

Vec2 TwoScaleField::w0(size_t sample, Vec2 y) const {
  const MicroBasis& b = bases[static_cast<size_t>(basis_of[sample])];
  const Vec2 u1 = eval_q2(b.mesh, b.u1, y);
  const Vec2 u2 = eval_q2(b.mesh, b.u2, y);
  const Vec2 d = drive[sample];
  return {d.x * u1.x + d.y * u2.x, d.x * u1.y + d.y * u2.y};
}

double TwoScaleField::q1(size_t sample, Vec2 y) const {
  const MicroBasis& b = bases[static_cast<size_t>(basis_of[sample])];
  const Vec2 d = drive[sample];
  return -(d.x * eval_q1(b.mesh, b.p1, y) + d.y * eval_q1(b.mesh, b.p2, y));
}

Vec2 TwoScaleField::mean_velocity(size_t sample) const {
  const MicroBasis& b = bases[static_cast<size_t>(basis_of[sample])];
  const Vec2 d = drive[sample];
  return {d.x * b.avg1.x + d.y * b.avg2.x, d.x * b.avg1.y + d.y * b.avg2.y};
}

TwoScaleField reconstruct_limit(const MacroMesh& mesh,
                                const std::vector<CellSolution>& cellsols,
                                const MacroField& macro, const MacroData& data,
                                double t, double vel_tol) {
  data.validate();
  if (static_cast<int64_t>(macro.q.size()) != mesh.n_nodes())
    throw ConfigError("reconstruct_limit: macro pressure size mismatch");
  if (static_cast<int64_t>(macro.v.size()) != mesh.n_cells())
    throw ConfigError("reconstruct_limit: macro velocity size mismatch");
  const int64_t n_active = mesh.n_active_cells();
  const bool shared = cellsols.size() == 1;
  if (!shared && static_cast<int64_t>(cellsols.size()) != n_active)
    throw ConfigError(
        "reconstruct_limit: need one cell solution or one per active cell");
  if (!(vel_tol > 0.0))
    throw ConfigError("reconstruct_limit: vel_tol must be positive");

  TwoScaleField out;
  out.t = t;
  out.bases.reserve(cellsols.size());
  for (const CellSolution& cs : cellsols) {
    if (std::abs(cs.t - t) > 1e-12 * std::max(1.0, std::abs(t)))
      throw SnapshotMismatch("reconstruct_limit: cell solution solved at t=" +
                             std::to_string(cs.t) + ", macro snapshot at t=" +
                             std::to_string(t));
    TwoScaleField::MicroBasis b;
    b.mesh = cs.mesh;
    b.u1 = cs.dir[0].velocity;
    b.u2 = cs.dir[1].velocity;
    b.p1 = cs.dir[0].pressure;
    b.p2 = cs.dir[1].pressure;
    b.avg1 = transformed_velocity_integral(cs.mesh, cs.coeffs, b.u1);
    b.avg2 = transformed_velocity_integral(cs.mesh, cs.coeffs, b.u2);
    out.bases.push_back(std::move(b));
  }

  int64_t active = 0;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active(cx, cy)) continue;
      // Same drive arithmetic as the Darcy velocity reconstruction.
      const double q00 = macro.q[static_cast<size_t>(mesh.node(cx, cy))];
      const double q10 = macro.q[static_cast<size_t>(mesh.node(cx + 1, cy))];
      const double q01 = macro.q[static_cast<size_t>(mesh.node(cx, cy + 1))];
      const double q11 =
          macro.q[static_cast<size_t>(mesh.node(cx + 1, cy + 1))];
      const Vec2 xc = mesh.cell_center(cx, cy);
      const Vec2 gq{((q10 + q11) - (q00 + q01)) / (2.0 * mesh.hx),
                    ((q01 + q11) - (q00 + q10)) / (2.0 * mesh.hy)};
      const Vec2 gpb = data.boundary_pressure_gradient(t, xc);
      const Vec2 fx = data.force(t, xc);
      out.x.push_back(xc);
      out.drive.push_back({(fx.x - gq.x - gpb.x) / data.nu,
                           (fx.y - gq.y - gpb.y) / data.nu});
      out.basis_of.push_back(shared ? 0 : static_cast<int32_t>(active));

      const Vec2 mv = out.mean_velocity(out.x.size() - 1);
      const Vec2 vm = macro.v[static_cast<size_t>(mesh.cell(cx, cy))];
      if (std::abs(mv.x - vm.x) > vel_tol || std::abs(mv.y - vm.y) > vel_tol)
        throw SnapshotMismatch(
            "reconstruct_limit: cell average of w0 disagrees with the Darcy "
            "velocity by " +
            std::to_string(std::max(std::abs(mv.x - vm.x),
                                    std::abs(mv.y - vm.y))) +
            " (cell solutions from a different snapshot?)");
      ++active;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Two-scale error metrics
// ---------------------------------------------------------------------------

std::vector<TwoScaleErrors> two_scale_errors(
    const std::vector<LadderEntry>& ladder, const TwoScaleField& limit,
    const MacroMesh& macro_mesh, const std::vector<double>& macro_q,
    int micro_samples) {
  if (static_cast<int64_t>(macro_q.size()) != macro_mesh.n_nodes())
    throw ConfigError("two_scale_errors: macro pressure size mismatch");
  if (static_cast<int64_t>(limit.x.size()) != macro_mesh.n_active_cells())
    throw ConfigError(
        "two_scale_errors: limit field does not match the macro mesh");
  if (micro_samples < 1)
    throw ConfigError("two_scale_errors: micro_samples must be positive");

  // Separable test dictionary.
  const auto X0 = [](Vec2) { return 1.0; };
  const auto X1 = [](Vec2 x) { return x.x; };
  const auto X2 = [](Vec2 x) {
    return std::sin(M_PI * x.x) * std::sin(M_PI * x.y);
  };
  const std::function<double(Vec2)> Xs[3] = {X0, X1, X2};
  const auto Y0 = [](Vec2) { return 1.0; };
  const auto Y1 = [](Vec2 y) { return std::cos(2.0 * M_PI * y.x); };
  const auto Y2 = [](Vec2 y) { return std::sin(2.0 * M_PI * y.y); };
  const auto Y3 = [](Vec2 y) {
    return std::cos(2.0 * M_PI * y.x) * std::cos(2.0 * M_PI * y.y);
  };
  const std::function<double(Vec2)> Ys[4] = {Y0, Y1, Y2, Y3};

  // Micro moments per basis: moment[b][a][i] = int u_i(y) Y_a(y) dy.
  std::vector<std::array<std::array<Vec2, 2>, 4>> moment(limit.bases.size());
  for (size_t b = 0; b < limit.bases.size(); ++b) {
    const TwoScaleField::MicroBasis& mb = limit.bases[b];
    for (int a = 0; a < 4; ++a)
      for (int i = 0; i < 2; ++i) {
        const std::vector<double>& u = i == 0 ? mb.u1 : mb.u2;
        moment[b][a][i] = {
            integrate_cells(mb.mesh, [&](Vec2 y) {
              return Ys[a](y) * eval_q2(mb.mesh, u, y).x;
            }),
            integrate_cells(mb.mesh, [&](Vec2 y) {
              return Ys[a](y) * eval_q2(mb.mesh, u, y).y;
            })};
      }
  }

  // Limit side of the weak pairings: T2[a][b] = int int w0 X_b Y_a dy dx
  // with the drive piecewise constant per macro cell and X integrated by
  // 3x3 Gauss per cell.
  Vec2 T2[4][3] = {};
  {
    const double area = macro_mesh.hx * macro_mesh.hy;
    int64_t k = 0;
    for (int cy = 0; cy < macro_mesh.ny; ++cy)
      for (int cx = 0; cx < macro_mesh.nx; ++cx) {
        if (!macro_mesh.active(cx, cy)) continue;
        const Vec2 corner = macro_mesh.node_pos(cx, cy);
        double cellX[3] = {0.0, 0.0, 0.0};
        for (int qy = 0; qy < 3; ++qy)
          for (int qx = 0; qx < 3; ++qx) {
            const Vec2 p{corner.x + macro_mesh.hx * kQp[qx],
                         corner.y + macro_mesh.hy * kQp[qy]};
            const double w = kQw[qx] * kQw[qy] * area;
            for (int b3 = 0; b3 < 3; ++b3) cellX[b3] += w * Xs[b3](p);
          }
        const Vec2 d = limit.drive[static_cast<size_t>(k)];
        const int32_t bi = limit.basis_of[static_cast<size_t>(k)];
        for (int a = 0; a < 4; ++a) {
          const Vec2 m1 = moment[static_cast<size_t>(bi)][a][0];
          const Vec2 m2 = moment[static_cast<size_t>(bi)][a][1];
          const Vec2 mv{d.x * m1.x + d.y * m2.x, d.x * m1.y + d.y * m2.y};
          for (int b3 = 0; b3 < 3; ++b3) {
            T2[a][b3].x += cellX[b3] * mv.x;
            T2[a][b3].y += cellX[b3] * mv.y;
          }
        }
        ++k;
      }
  }

  const std::vector<Vec2> ys = midpoint_grid(micro_samples);
  std::vector<TwoScaleErrors> table;
  table.reserve(ladder.size());
  for (const LadderEntry& entry : ladder) {
    if (!entry.mesh || !entry.sol || !entry.ext)
      throw ConfigError("two_scale_errors: null ladder entry");
    const PerforatedMesh& pm = *entry.mesh;
    const FemMesh& fem = pm.fem;
    if (static_cast<int64_t>(entry.ext->pressure.size()) != fem.n_pnodes() ||
        static_cast<int64_t>(entry.ext->velocity.size()) != 2 * fem.n_vnodes())
      throw ConfigError("two_scale_errors: extension does not match the mesh");
    const double eps = pm.eps.to_double();

    TwoScaleErrors err;
    err.eps = eps;

    // (a) Strong pressure errors over the domain (all in-domain cells; the
    // extension fills the solid ones).
    const double carea = fem.hx * fem.hy;
    double acc15 = 0.0, acc2 = 0.0;
    for (int iy = 0; iy < fem.ny; ++iy)
      for (int ix = 0; ix < fem.nx; ++ix) {
        const int col = ix / pm.m, row = iy / pm.m;
        if (pm.lattice_at(col, row) < 0) continue;  // outside the domain
        const Vec2 corner = fem.cell_corner(ix, iy);
        for (int qy = 0; qy < 3; ++qy)
          for (int qx = 0; qx < 3; ++qx) {
            const Vec2 p{corner.x + fem.hx * kQp[qx],
                         corner.y + fem.hy * kQp[qy]};
            const double w = kQw[qx] * kQw[qy] * carea;
            const double d = std::abs(eval_q1(fem, entry.ext->pressure, p) -
                                      eval_macro_q1(macro_mesh, macro_q, p));
            acc15 += w * d * std::sqrt(d);
            acc2 += w * d * d;
          }
      }
    err.pressure_l15 = std::pow(acc15, 1.0 / 1.5);
    err.pressure_l2 = std::sqrt(acc2);

    // (b) Weak residuals: DNS side of the pairings over the active cells.
    Vec2 T1[4][3] = {};
    for (int iy = 0; iy < fem.ny; ++iy)
      for (int ix = 0; ix < fem.nx; ++ix) {
        if (!fem.active[static_cast<size_t>(iy) * fem.nx + ix]) continue;
        const Vec2 corner = fem.cell_corner(ix, iy);
        for (int qy = 0; qy < 3; ++qy)
          for (int qx = 0; qx < 3; ++qx) {
            const Vec2 p{corner.x + fem.hx * kQp[qx],
                         corner.y + fem.hy * kQp[qy]};
            const double w = kQw[qx] * kQw[qy] * carea;
            const Vec2 v = eval_q2(fem, entry.ext->velocity, p);
            const Vec2 y = micro_frac(p, eps);
            const double xv[3] = {1.0, p.x,
                                  std::sin(M_PI * p.x) * std::sin(M_PI * p.y)};
            const double yv[4] = {1.0, std::cos(2.0 * M_PI * y.x),
                                  std::sin(2.0 * M_PI * y.y),
                                  std::cos(2.0 * M_PI * y.x) *
                                      std::cos(2.0 * M_PI * y.y)};
            for (int a = 0; a < 4; ++a)
              for (int b3 = 0; b3 < 3; ++b3) {
                const double s = w * xv[b3] * yv[a];
                T1[a][b3].x += s * v.x;
                T1[a][b3].y += s * v.y;
              }
          }
      }
    double rmax = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b3 = 0; b3 < 3; ++b3) {
        const double dx = T1[a][b3].x - T2[a][b3].x;
        const double dy = T1[a][b3].y - T2[a][b3].y;
        rmax = std::max(rmax, std::sqrt(dx * dx + dy * dy));
      }
    err.weak_residual = rmax;

    // (c) Unfolded velocity distance on the product grid.
    const double warea = macro_mesh.hx * macro_mesh.hy;
    double acc = 0.0;
    for (size_t k = 0; k < limit.x.size(); ++k) {
      const Vec2 xc = limit.x[k];
      const Vec2 base{eps * std::floor(xc.x / eps),
                      eps * std::floor(xc.y / eps)};
      for (const Vec2& y : ys) {
        const Vec2 vT = eval_q2(fem, entry.ext->velocity,
                                {base.x + eps * y.x, base.y + eps * y.y});
        const Vec2 w0 = limit.w0(k, y);
        acc += (vT.x - w0.x) * (vT.x - w0.x) + (vT.y - w0.y) * (vT.y - w0.y);
      }
    }
    err.unfolded_l2 = std::sqrt(acc * warea / static_cast<double>(ys.size()));
    table.push_back(err);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Korn and Poincare constants
// ---------------------------------------------------------------------------

double korn_constant(const FemMesh& mesh, const DofMaps& maps,
                     const TransformedCoeffs& coeffs, double tol, int maxit) {
  require_dirichlet(maps, "korn_constant");
  // Assembled symmetric form is 2 sym(M grad u):(M grad v), so the Gram of
  // sym(M grad v) is half of it; the denominator is the plain gradient Gram.
  const SparseMatrix N_raw =
      assemble_viscous_block(mesh, unweighted(coeffs), true);
  const SparseMatrix D_raw = assemble_viscous_block(
      mesh, TransformedCoeffs::identity(mesh), false);
  const SparseMatrix N = restrict_velocity(N_raw, mesh, maps);
  const SparseMatrix D = restrict_velocity(D_raw, mesh, maps);
  return 0.5 * min_generalized_eig(N, D, tol, maxit).lambda;
}

double korn_constant(const PerforatedMesh& mesh,
                     const TransformedCoeffs& coeffs, double tol, int maxit) {
  return korn_constant(mesh.fem, mesh.maps, coeffs, tol, maxit);
}

double poincare_constant(const FemMesh& mesh, const DofMaps& maps, double tol,
                         int maxit) {
  require_dirichlet(maps, "poincare_constant");
  // C^2 = lambda_max(mass, stiffness) = 1 / lambda_min(stiffness, mass).
  const SparseMatrix S_raw = assemble_viscous_block(
      mesh, TransformedCoeffs::identity(mesh), false);
  const SparseMatrix S = restrict_velocity(S_raw, mesh, maps);
  const SparseMatrix M =
      restrict_velocity(assemble_velocity_mass(mesh, maps), mesh, maps);
  const double lambda = min_generalized_eig(S, M, tol, maxit).lambda;
  if (!(lambda > 0.0))
    throw SingularSystem("poincare_constant: nonpositive stiffness eigenvalue");
  return 1.0 / std::sqrt(lambda);
}

double poincare_ratio(const PerforatedMesh& mesh, double tol, int maxit) {
  return poincare_constant(mesh.fem, mesh.maps, tol, maxit) /
         mesh.eps.to_double();
}

void KornReport::validate() const {
  const size_t n = eps.size();
  if (alpha.size() != n || poincare.size() != n || n_velocity.size() != n)
    throw ConfigError("KornReport: column lengths differ");
  for (double a : alpha)
    if (!(a > 0.0)) throw ConfigError("KornReport: Korn constant not positive");
}

KornReport korn_report(const std::vector<const PerforatedMesh*>& meshes,
                       const std::vector<TransformedCoeffs>& coeffs,
                       double tol, int maxit) {
  if (meshes.size() != coeffs.size())
    throw ConfigError("korn_report: one coefficient snapshot per mesh");
  KornReport rep;
  for (size_t i = 0; i < meshes.size(); ++i) {
    if (!meshes[i]) throw ConfigError("korn_report: null mesh entry");
    const PerforatedMesh& pm = *meshes[i];
    rep.eps.push_back(pm.eps.to_double());
    rep.alpha.push_back(korn_constant(pm, coeffs[i], tol, maxit));
    rep.poincare.push_back(poincare_ratio(pm, tol, maxit));
    rep.n_velocity.push_back(2 * pm.maps.n_vfree);
  }
  rep.validate();
  return rep;
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

double fit_rate(const std::vector<double>& eps,
                const std::vector<double>& errors) {
  if (eps.size() != errors.size())
    throw ConfigError("fit_rate: eps and error lists differ in length");
  if (eps.size() < 3)
    throw ConfigError("fit_rate: need at least three ladder points");
  for (double e : eps)
    if (!(e > 0.0)) throw ConfigError("fit_rate: eps values must be positive");
  for (double r : errors)
    if (!(r > 0.0))
      throw DegenerateFit("fit_rate: nonpositive error in the ladder");

  const size_t n = eps.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += std::log(eps[i]);
    my += std::log(errors[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = std::log(eps[i]) - mx;
    sxy += dx * (std::log(errors[i]) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0.0))
    throw ConfigError("fit_rate: eps values must not all coincide");
  return sxy / sxx;
}

}  // namespace evodarcy
