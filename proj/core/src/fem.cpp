#include "evodarcy/fem.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace evodarcy {

namespace {

// 3-point Gauss-Legendre on [0,1]: exact for the Q2 x Q2 stiffness products.
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
double d2(int i, double s) {
  switch (i) {
    case 0: return 4.0 * s - 3.0;
    case 1: return 4.0 - 8.0 * s;
    default: return 4.0 * s - 1.0;
  }
}
// 1D linear basis on [0,1].
double n1(int i, double s) { return i == 0 ? 1.0 - s : s; }

// Tensor-product tables at the 9 Gauss points, q = 3*qy + qx; velocity local
// node l = 3*ly + lx, pressure local node l = 2*ly + lx.
struct BasisTables {
  double v2[9][9];    // value of Q2 basis
  double d2x[9][9];   // d/dxi
  double d2y[9][9];   // d/deta
  double v1[9][4];    // value of Q1 basis
  double wq[9];       // tensor quadrature weight (unit cell)
  BasisTables() {
    for (int qy = 0; qy < 3; ++qy)
      for (int qx = 0; qx < 3; ++qx) {
        const int q = 3 * qy + qx;
        wq[q] = kQw[qx] * kQw[qy];
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx) {
            const int l = 3 * ly + lx;
            v2[q][l] = n2(lx, kQp[qx]) * n2(ly, kQp[qy]);
            d2x[q][l] = d2(lx, kQp[qx]) * n2(ly, kQp[qy]);
            d2y[q][l] = n2(lx, kQp[qx]) * d2(ly, kQp[qy]);
          }
        for (int ly = 0; ly < 2; ++ly)
          for (int lx = 0; lx < 2; ++lx)
            v1[q][2 * ly + lx] = n1(lx, kQp[qx]) * n1(ly, kQp[qy]);
      }
  }
};
const BasisTables kBasis;

}  // namespace

// ---------------------------------------------------------------------------
// FemMesh
// ---------------------------------------------------------------------------

FemMesh FemMesh::rectangle(int nx, int ny, double x0, double y0, double w,
                           double h) {
  FemMesh m;
  m.nx = nx;
  m.ny = ny;
  m.x0 = x0;
  m.y0 = y0;
  m.hx = w / nx;
  m.hy = h / ny;
  m.active.assign(static_cast<size_t>(nx) * ny, 1);
  m.validate();
  return m;
}

FemMesh FemMesh::from_cell(const ReferenceCell& cell) {
  FemMesh m;
  m.nx = m.ny = cell.n;
  m.x0 = m.y0 = 0.0;
  m.hx = m.hy = 1.0 / cell.n;
  m.active.assign(static_cast<size_t>(cell.n) * cell.n, 0);
  for (int iy = 0; iy < cell.n; ++iy)
    for (int ix = 0; ix < cell.n; ++ix)
      m.active[static_cast<size_t>(iy) * cell.n + ix] =
          cell.pore(ix, iy) ? 1 : 0;
  m.validate();
  return m;
}

FemMesh FemMesh::from_mask(int nx, int ny, double x0, double y0, double w,
                           double h, std::vector<uint8_t> mask) {
  FemMesh m;
  m.nx = nx;
  m.ny = ny;
  m.x0 = x0;
  m.y0 = y0;
  m.hx = w / nx;
  m.hy = h / ny;
  m.active = std::move(mask);
  m.validate();
  return m;
}

int FemMesh::n_active_cells() const {
  int n = 0;
  for (uint8_t a : active) n += a ? 1 : 0;
  return n;
}

void FemMesh::validate() const {
  if (nx <= 0 || ny <= 0)
    throw ConfigError("FemMesh: grid must have at least one cell per axis");
  if (!(hx > 0.0) || !(hy > 0.0))
    throw ConfigError("FemMesh: cell sizes must be positive");
  if (active.size() != static_cast<size_t>(nx) * ny)
    throw ConfigError("FemMesh: mask size does not match the grid");
  if (n_active_cells() == 0)
    throw EmptyPoreCell("FemMesh: no active cells");
}

// ---------------------------------------------------------------------------
// TransformedCoeffs
// ---------------------------------------------------------------------------

namespace {

void init_ordinals(const FemMesh& mesh, TransformedCoeffs& c) {
  c.cell_ordinal.assign(static_cast<size_t>(mesh.nx) * mesh.ny, -1);
  int32_t ord = 0;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx)
      if (mesh.cell_active(cx, cy))
        c.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx] = ord++;
  c.n_active = ord;
  const size_t nq = static_cast<size_t>(ord) * 9;
  c.J.assign(nq, 1.0);
  c.M.assign(nq, Mat2::identity());
  c.A.assign(nq, Mat2::identity());
  c.divA.assign(nq, Vec2{0.0, 0.0});
}

}  // namespace

TransformedCoeffs TransformedCoeffs::identity(const FemMesh& mesh, double nu,
                                              double eps_scale) {
  TransformedCoeffs c;
  c.nu = nu;
  c.eps_scale = eps_scale;
  init_ordinals(mesh, c);
  return c;
}

TransformedCoeffs TransformedCoeffs::from_sampler(
    const FemMesh& mesh, const std::function<DeformationSample(Vec2)>& sample,
    const std::function<Vec2(Vec2)>& div_a, bool exact_cofactor, double nu,
    double eps_scale, double c_J) {
  TransformedCoeffs c;
  c.nu = nu;
  c.eps_scale = eps_scale;
  c.c_J = c_J;
  init_ordinals(mesh, c);
  const double fd = std::min(mesh.hx, mesh.hy) / 100.0;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord = c.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      const Vec2 corner = mesh.cell_corner(cx, cy);
      for (int q = 0; q < 9; ++q) {
        const Vec2 p{corner.x + kQp[q % 3] * mesh.hx,
                     corner.y + kQp[q / 3] * mesh.hy};
        const DeformationSample s = sample(p);
        if (s.J < c_J)
          throw DegenerateJacobian(
              "coefficient sampling: J = " + std::to_string(s.J) +
              " < c_J at quadrature point (" + std::to_string(p.x) + ", " +
              std::to_string(p.y) + ")");
        const int64_t k = c.qindex(ord, q);
        c.J[k] = s.J;
        c.M[k] = s.Psi.inverse().transpose();
        c.A[k] = s.A;
        if (exact_cofactor) {
          c.divA[k] = {0.0, 0.0};
        } else if (div_a) {
          c.divA[k] = div_a(p);
        } else {
          // Column divergence by central differences of the sampler's A.
          const Mat2 axp = sample({p.x + fd, p.y}).A;
          const Mat2 axm = sample({p.x - fd, p.y}).A;
          const Mat2 ayp = sample({p.x, p.y + fd}).A;
          const Mat2 aym = sample({p.x, p.y - fd}).A;
          for (int col = 0; col < 2; ++col)
            c.divA[k][col] = (axp(0, col) - axm(0, col)) / (2.0 * fd) +
                             (ayp(1, col) - aym(1, col)) / (2.0 * fd);
        }
      }
    }
  return c;
}

// ---------------------------------------------------------------------------
// Dof classification
// ---------------------------------------------------------------------------

namespace {

struct NodeGrid {
  int nx = 0, ny = 0;  // node counts per axis
  bool per_x = false, per_y = false;
  int64_t count() const { return static_cast<int64_t>(nx) * ny; }
  int64_t id(int ix, int iy) const {
    return static_cast<int64_t>(iy) * nx + ix;
  }
  // Canonical master of a node under the active periodic identifications.
  int64_t master(int ix, int iy) const {
    if (per_x && ix == nx - 1) ix = 0;
    if (per_y && iy == ny - 1) iy = 0;
    return id(ix, iy);
  }
};

bool side_periodic(const StokesBC& bc, bool horizontal) {
  const bool a = horizontal ? bc.left == SideBC::periodic
                            : bc.bottom == SideBC::periodic;
  const bool b = horizontal ? bc.right == SideBC::periodic
                            : bc.top == SideBC::periodic;
  if (a != b)
    throw InconsistentBC(
        horizontal
            ? "periodic tag must be set on both left and right sides"
            : "periodic tag must be set on both bottom and top sides");
  return a;
}

}  // namespace

DofMaps classify_dofs(const FemMesh& mesh, const StokesBC& bc) {
  DofMaps maps;
  const bool px = side_periodic(bc, true);
  const bool py = side_periodic(bc, false);

  // --- velocity nodes -----------------------------------------------------
  {
    NodeGrid g{mesh.vnx(), mesh.vny(), px, py};
    const int64_t n = g.count();
    std::vector<uint8_t> touch_act(n, 0), touch_inact(n, 0);
    for (int cy = 0; cy < mesh.ny; ++cy)
      for (int cx = 0; cx < mesh.nx; ++cx) {
        const bool act = mesh.cell_active(cx, cy);
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx) {
            const int64_t node = g.id(2 * cx + lx, 2 * cy + ly);
            (act ? touch_act : touch_inact)[node] = 1;
          }
      }
    maps.vraw.assign(n, -2);
    int64_t nraw = 0;
    for (int64_t i = 0; i < n; ++i)
      if (touch_act[i]) maps.vraw[i] = static_cast<int32_t>(nraw++);
    maps.n_vraw = nraw;

    // Fold per-class flags onto masters (class = node + its periodic images).
    std::vector<uint8_t> cls_act(n, 0), cls_inact(n, 0), cls_dir(n, 0);
    std::vector<double> cls_val(2 * n, 0.0);
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const int64_t node = g.id(ix, iy);
        const int64_t m = g.master(ix, iy);
        cls_act[m] |= touch_act[node];
        cls_inact[m] |= touch_inact[node];
        bool dir = false;
        if (!px && (ix == 0 ? bc.left : ix == g.nx - 1 ? bc.right
                                                       : SideBC::stress) ==
                       SideBC::dirichlet && (ix == 0 || ix == g.nx - 1))
          dir = true;
        if (!py && (iy == 0 ? bc.bottom : iy == g.ny - 1 ? bc.top
                                                         : SideBC::stress) ==
                       SideBC::dirichlet && (iy == 0 || iy == g.ny - 1))
          dir = true;
        if (dir && !cls_dir[m]) {
          cls_dir[m] = 1;
          const Vec2 v = bc.dirichlet_value
                             ? bc.dirichlet_value(mesh.vnode_pos(ix, iy))
                             : Vec2{0.0, 0.0};
          cls_val[2 * m] = v.x;
          cls_val[2 * m + 1] = v.y;
        }
      }

    maps.vfree.assign(n, -2);
    maps.vdir.assign(2 * n, 0.0);
    int64_t nfree = 0;
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const int64_t node = g.id(ix, iy);
        if (g.master(ix, iy) != node) continue;  // slaves handled below
        if (!cls_act[node]) continue;            // stays -2
        if (cls_inact[node]) {
          maps.vfree[node] = -1;  // staircase boundary: homogeneous Dirichlet
        } else if (cls_dir[node]) {
          maps.vfree[node] = -1;
          maps.vdir[2 * node] = cls_val[2 * node];
          maps.vdir[2 * node + 1] = cls_val[2 * node + 1];
        } else {
          maps.vfree[node] = static_cast<int32_t>(nfree++);
        }
      }
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const int64_t node = g.id(ix, iy);
        const int64_t m = g.master(ix, iy);
        if (m == node) continue;
        maps.vfree[node] = maps.vfree[m];
        maps.vdir[2 * node] = maps.vdir[2 * m];
        maps.vdir[2 * node + 1] = maps.vdir[2 * m + 1];
      }
    maps.n_vfree = nfree;
  }

  // --- pressure nodes (no Dirichlet) ---------------------------------------
  {
    NodeGrid g{mesh.pnx(), mesh.pny(), px, py};
    const int64_t n = g.count();
    std::vector<uint8_t> touch_act(n, 0);
    for (int cy = 0; cy < mesh.ny; ++cy)
      for (int cx = 0; cx < mesh.nx; ++cx) {
        if (!mesh.cell_active(cx, cy)) continue;
        for (int ly = 0; ly < 2; ++ly)
          for (int lx = 0; lx < 2; ++lx) touch_act[g.id(cx + lx, cy + ly)] = 1;
      }
    maps.praw.assign(n, -2);
    int64_t nraw = 0;
    for (int64_t i = 0; i < n; ++i)
      if (touch_act[i]) maps.praw[i] = static_cast<int32_t>(nraw++);
    maps.n_praw = nraw;

    std::vector<uint8_t> cls_act(n, 0);
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix)
        cls_act[g.master(ix, iy)] |= touch_act[g.id(ix, iy)];

    maps.pfree.assign(n, -2);
    int64_t nfree = 0;
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const int64_t node = g.id(ix, iy);
        if (g.master(ix, iy) != node || !cls_act[node]) continue;
        maps.pfree[node] = static_cast<int32_t>(nfree++);
      }
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const int64_t node = g.id(ix, iy);
        const int64_t m = g.master(ix, iy);
        if (m != node) maps.pfree[node] = maps.pfree[m];
      }
    maps.n_pfree = nfree;
  }

  maps.pressure_nullspace =
      bc.left != SideBC::stress && bc.right != SideBC::stress &&
      bc.bottom != SideBC::stress && bc.top != SideBC::stress;
  return maps;
}

// ---------------------------------------------------------------------------
// Element kernels
// ---------------------------------------------------------------------------

namespace {

struct CellDofs {
  int64_t vnode[9];
  int64_t pnode[4];
};

CellDofs cell_dofs(const FemMesh& mesh, int cx, int cy) {
  CellDofs d;
  for (int ly = 0; ly < 3; ++ly)
    for (int lx = 0; lx < 3; ++lx)
      d.vnode[3 * ly + lx] = mesh.vnode(2 * cx + lx, 2 * cy + ly);
  for (int ly = 0; ly < 2; ++ly)
    for (int lx = 0; lx < 2; ++lx)
      d.pnode[2 * ly + lx] = mesh.pnode(cx + lx, cy + ly);
  return d;
}

// Viscous element matrix (18x18, local dof = 2*l + component).
void element_viscous(const FemMesh& mesh, const TransformedCoeffs& co,
                     int32_t ord, bool symmetric, double Ke[18][18]) {
  for (int r = 0; r < 18; ++r)
    for (int c = 0; c < 18; ++c) Ke[r][c] = 0.0;
  const double area = mesh.hx * mesh.hy;
  for (int q = 0; q < 9; ++q) {
    const int64_t k = co.qindex(ord, q);
    const Mat2& M = co.M[k];
    const double scale = co.nu * co.eps_scale * kBasis.wq[q] * area * co.J[k];
    Vec2 u[9];
    for (int l = 0; l < 9; ++l) {
      const Vec2 grad{kBasis.d2x[q][l] / mesh.hx, kBasis.d2y[q][l] / mesh.hy};
      u[l] = M * grad;
    }
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 9; ++j) {
        const double gg = scale * dot(u[i], u[j]);
        // Row = test (j, b), column = trial (i, a).
        Ke[2 * j][2 * i] += gg;
        Ke[2 * j + 1][2 * i + 1] += gg;
        if (symmetric) {
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              Ke[2 * j + b][2 * i + a] += scale * u[i][b] * u[j][a];
        }
      }
  }
}

// Pressure coupling element matrix (4x18): row = pressure test, column =
// velocity trial. Be[q][2l+a] = (psi_q, A_(.,a).grad phi_l + divA_a phi_l).
void element_coupling(const FemMesh& mesh, const TransformedCoeffs& co,
                      int32_t ord, double Be[4][18]) {
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 18; ++c) Be[r][c] = 0.0;
  const double area = mesh.hx * mesh.hy;
  for (int q = 0; q < 9; ++q) {
    const int64_t k = co.qindex(ord, q);
    const Mat2& A = co.A[k];
    const Vec2 dA = co.divA[k];
    const double w = kBasis.wq[q] * area;
    for (int l = 0; l < 9; ++l) {
      const Vec2 grad{kBasis.d2x[q][l] / mesh.hx, kBasis.d2y[q][l] / mesh.hy};
      const double val = kBasis.v2[q][l];
      for (int a = 0; a < 2; ++a) {
        const double div_part =
            A(0, a) * grad.x + A(1, a) * grad.y + dA[a] * val;
        for (int p = 0; p < 4; ++p)
          Be[p][2 * l + a] += w * kBasis.v1[q][p] * div_part;
      }
    }
  }
}

// Sorted unique velocity-node neighbours of a velocity node: all nodes
// sharing an incident active cell.
void vnode_neighbours(const FemMesh& mesh, int ix, int iy,
                      std::vector<int64_t>& out) {
  out.clear();
  const int cx_lo = std::max(0, (ix - 1) / 2);
  const int cx_hi = std::min(mesh.nx - 1, ix / 2);
  const int cy_lo = std::max(0, (iy - 1) / 2);
  const int cy_hi = std::min(mesh.ny - 1, iy / 2);
  for (int cy = cy_lo; cy <= cy_hi; ++cy)
    for (int cx = cx_lo; cx <= cx_hi; ++cx) {
      if (!mesh.cell_active(cx, cy)) continue;
      for (int ly = 0; ly < 3; ++ly)
        for (int lx = 0; lx < 3; ++lx)
          out.push_back(mesh.vnode(2 * cx + lx, 2 * cy + ly));
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

}  // namespace

SparseMatrix assemble_viscous_block(const FemMesh& mesh,
                                    const TransformedCoeffs& coeffs,
                                    bool symmetric) {
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  // Raw node list in ordinal order.
  std::vector<int64_t> raw_node(maps.n_vraw);
  for (int iy = 0; iy < mesh.vny(); ++iy)
    for (int ix = 0; ix < mesh.vnx(); ++ix) {
      const int32_t r = maps.vraw[mesh.vnode(ix, iy)];
      if (r >= 0) raw_node[r] = mesh.vnode(ix, iy);
    }

  CsrBuilder builder(2 * maps.n_vraw, 2 * maps.n_vraw);
  std::vector<int64_t> nbr;
  for (int64_t r = 0; r < maps.n_vraw; ++r) {
    const int64_t node = raw_node[r];
    const int ix = static_cast<int>(node % mesh.vnx());
    const int iy = static_cast<int>(node / mesh.vnx());
    vnode_neighbours(mesh, ix, iy, nbr);
    for (int comp = 0; comp < 2; ++comp) {
      builder.begin_row(2 * r + comp);
      for (int64_t nb : nbr) {
        const int32_t c = maps.vraw[nb];
        builder.add(2 * c);
        builder.add(2 * c + 1);
      }
    }
  }
  SparseMatrix A = builder.finish(true);

  double Ke[18][18];
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord =
          coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      element_viscous(mesh, coeffs, ord, symmetric, Ke);
      const CellDofs cd = cell_dofs(mesh, cx, cy);
      int64_t dof[18];
      for (int l = 0; l < 9; ++l) {
        const int32_t r = maps.vraw[cd.vnode[l]];
        dof[2 * l] = 2 * static_cast<int64_t>(r);
        dof[2 * l + 1] = dof[2 * l] + 1;
      }
      for (int r = 0; r < 18; ++r)
        for (int c = 0; c < 18; ++c)
          if (Ke[r][c] != 0.0) A.coeff_ref(dof[r], dof[c]) += Ke[r][c];
    }
  return A;
}

SparseMatrix assemble_pressure_coupling(const FemMesh& mesh,
                                        const TransformedCoeffs& coeffs) {
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  std::vector<int64_t> raw_pnode(maps.n_praw);
  for (int iy = 0; iy < mesh.pny(); ++iy)
    for (int ix = 0; ix < mesh.pnx(); ++ix) {
      const int32_t r = maps.praw[mesh.pnode(ix, iy)];
      if (r >= 0) raw_pnode[r] = mesh.pnode(ix, iy);
    }

  CsrBuilder builder(maps.n_praw, 2 * maps.n_vraw);
  std::vector<int64_t> nbr;
  for (int64_t r = 0; r < maps.n_praw; ++r) {
    const int64_t node = raw_pnode[r];
    const int ix = static_cast<int>(node % mesh.pnx());
    const int iy = static_cast<int>(node / mesh.pnx());
    builder.begin_row(r);
    nbr.clear();
    const int cx_lo = std::max(0, ix - 1), cx_hi = std::min(mesh.nx - 1, ix);
    const int cy_lo = std::max(0, iy - 1), cy_hi = std::min(mesh.ny - 1, iy);
    for (int cy = cy_lo; cy <= cy_hi; ++cy)
      for (int cx = cx_lo; cx <= cx_hi; ++cx) {
        if (!mesh.cell_active(cx, cy)) continue;
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx)
            nbr.push_back(mesh.vnode(2 * cx + lx, 2 * cy + ly));
      }
    std::sort(nbr.begin(), nbr.end());
    nbr.erase(std::unique(nbr.begin(), nbr.end()), nbr.end());
    for (int64_t nb : nbr) {
      const int32_t c = maps.vraw[nb];
      builder.add(2 * c);
      builder.add(2 * c + 1);
    }
  }
  SparseMatrix B = builder.finish(false);

  double Be[4][18];
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord =
          coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      element_coupling(mesh, coeffs, ord, Be);
      const CellDofs cd = cell_dofs(mesh, cx, cy);
      for (int p = 0; p < 4; ++p) {
        const int64_t row = maps.praw[cd.pnode[p]];
        for (int l = 0; l < 9; ++l) {
          const int64_t col = 2 * static_cast<int64_t>(maps.vraw[cd.vnode[l]]);
          if (Be[p][2 * l] != 0.0) B.coeff_ref(row, col) += Be[p][2 * l];
          if (Be[p][2 * l + 1] != 0.0)
            B.coeff_ref(row, col + 1) += Be[p][2 * l + 1];
        }
      }
    }
  return B;
}

RawRhs assemble_rhs(const FemMesh& mesh, const TransformedCoeffs& coeffs,
                    bool symmetric, const StokesRhs& rhs) {
  const DofMaps maps = classify_dofs(mesh, StokesBC::all_dirichlet());
  RawRhs out;
  out.f.assign(2 * maps.n_vraw, 0.0);
  out.g.assign(maps.n_praw, 0.0);
  const double area = mesh.hx * mesh.hy;
  const bool need_lift = static_cast<bool>(rhs.lift);
  double Ke[18][18], Be[4][18];
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord =
          coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      const CellDofs cd = cell_dofs(mesh, cx, cy);
      const Vec2 corner = mesh.cell_corner(cx, cy);
      double fe[18] = {0.0};
      double ge[4] = {0.0};
      if (rhs.body_force || rhs.grad_pb) {
        for (int q = 0; q < 9; ++q) {
          const int64_t k = coeffs.qindex(ord, q);
          const Vec2 p{corner.x + kQp[q % 3] * mesh.hx,
                       corner.y + kQp[q / 3] * mesh.hy};
          const double w = kBasis.wq[q] * area;
          Vec2 load{0.0, 0.0};
          if (rhs.body_force) load = load + coeffs.J[k] * rhs.body_force(p);
          if (rhs.grad_pb) {
            const Vec2 gp = rhs.grad_pb(p);
            const Mat2& A = coeffs.A[k];
            // -(A^T grad_pb) . phi
            load.x -= A(0, 0) * gp.x + A(1, 0) * gp.y;
            load.y -= A(0, 1) * gp.x + A(1, 1) * gp.y;
          }
          for (int l = 0; l < 9; ++l) {
            fe[2 * l] += w * kBasis.v2[q][l] * load.x;
            fe[2 * l + 1] += w * kBasis.v2[q][l] * load.y;
          }
        }
      }
      if (need_lift) {
        element_viscous(mesh, coeffs, ord, symmetric, Ke);
        element_coupling(mesh, coeffs, ord, Be);
        double lift[18];
        for (int l = 0; l < 9; ++l) {
          const int64_t node = cd.vnode[l];
          const Vec2 lv = rhs.lift(mesh.vnode_pos(
              static_cast<int>(node % mesh.vnx()),
              static_cast<int>(node / mesh.vnx())));
          lift[2 * l] = lv.x;
          lift[2 * l + 1] = lv.y;
        }
        for (int r = 0; r < 18; ++r)
          for (int c = 0; c < 18; ++c) fe[r] -= Ke[r][c] * lift[c];
        for (int p = 0; p < 4; ++p)
          for (int c = 0; c < 18; ++c) ge[p] -= Be[p][c] * lift[c];
      }
      for (int l = 0; l < 9; ++l) {
        const int64_t d = 2 * static_cast<int64_t>(maps.vraw[cd.vnode[l]]);
        out.f[d] += fe[2 * l];
        out.f[d + 1] += fe[2 * l + 1];
      }
      for (int p = 0; p < 4; ++p) out.g[maps.praw[cd.pnode[p]]] += ge[p];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

namespace {

// Per free velocity dof, list of raw node ids it aggregates (master + slaves).
std::vector<std::vector<int64_t>> alias_lists(const std::vector<int32_t>& free,
                                              int64_t n_free) {
  std::vector<std::vector<int64_t>> out(n_free);
  for (int64_t node = 0; node < static_cast<int64_t>(free.size()); ++node)
    if (free[node] >= 0) out[free[node]].push_back(node);
  return out;
}

}  // namespace

ConstrainedStokes apply_constraints(const FemMesh& mesh, const DofMaps& maps,
                                    const TransformedCoeffs& coeffs,
                                    const SparseMatrix& A_raw,
                                    const SparseMatrix& B_raw,
                                    const RawRhs& rhs) {
  ConstrainedStokes out;
  out.maps = maps;

  // Reverse map: raw velocity ordinal -> node id.
  std::vector<int64_t> raw_vnode(maps.n_vraw), raw_pnode(maps.n_praw);
  for (int64_t node = 0; node < static_cast<int64_t>(maps.vraw.size()); ++node)
    if (maps.vraw[node] >= 0) raw_vnode[maps.vraw[node]] = node;
  for (int64_t node = 0; node < static_cast<int64_t>(maps.praw.size()); ++node)
    if (maps.praw[node] >= 0) raw_pnode[maps.praw[node]] = node;

  const auto v_alias = alias_lists(maps.vfree, maps.n_vfree);
  const auto p_alias = alias_lists(maps.pfree, maps.n_pfree);

  std::vector<double> f(2 * maps.n_vfree, 0.0);
  std::vector<double> g(maps.n_pfree, 0.0);

  // --- constrained A -------------------------------------------------------
  SparseMatrix A;
  {
    CsrBuilder builder(2 * maps.n_vfree, 2 * maps.n_vfree);
    std::vector<int64_t> cols;
    for (int64_t d = 0; d < maps.n_vfree; ++d) {
      cols.clear();
      for (int64_t node : v_alias[d]) {
        // At a periodic seam one alias of an active class may itself touch no
        // active cell; it then has no raw rows to fold.
        if (maps.vraw[node] < 0) continue;
        const int64_t row = 2 * static_cast<int64_t>(maps.vraw[node]);
        for (int64_t idx = A_raw.row_ptr[row]; idx < A_raw.row_ptr[row + 1];
             ++idx) {
          const int64_t cnode = raw_vnode[A_raw.col[idx] / 2];
          const int32_t t = maps.vfree[cnode];
          if (t >= 0) cols.push_back(t);
        }
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      for (int comp = 0; comp < 2; ++comp) {
        builder.begin_row(2 * d + comp);
        for (int64_t t : cols) {
          builder.add(2 * t);
          builder.add(2 * t + 1);
        }
      }
    }
    A = builder.finish(true);
    for (int64_t d = 0; d < maps.n_vfree; ++d)
      for (int64_t node : v_alias[d]) {
        if (maps.vraw[node] < 0) continue;
        for (int comp = 0; comp < 2; ++comp) {
          const int64_t row = 2 * static_cast<int64_t>(maps.vraw[node]) + comp;
          f[2 * d + comp] += rhs.f[row];
          for (int64_t idx = A_raw.row_ptr[row]; idx < A_raw.row_ptr[row + 1];
               ++idx) {
            const double val = A_raw.val[idx];
            if (val == 0.0) continue;
            const int64_t craw = A_raw.col[idx];
            const int64_t cnode = raw_vnode[craw / 2];
            const int ccomp = static_cast<int>(craw % 2);
            const int32_t t = maps.vfree[cnode];
            if (t >= 0)
              A.coeff_ref(2 * d + comp, 2 * static_cast<int64_t>(t) + ccomp) +=
                  val;
            else if (t == -1)
              f[2 * d + comp] -= val * maps.vdir[2 * cnode + ccomp];
          }
        }
      }
  }

  // --- constrained B -------------------------------------------------------
  SparseMatrix B;
  {
    CsrBuilder builder(maps.n_pfree, 2 * maps.n_vfree);
    std::vector<int64_t> cols;
    for (int64_t d = 0; d < maps.n_pfree; ++d) {
      cols.clear();
      for (int64_t node : p_alias[d]) {
        if (maps.praw[node] < 0) continue;
        const int64_t row = maps.praw[node];
        for (int64_t idx = B_raw.row_ptr[row]; idx < B_raw.row_ptr[row + 1];
             ++idx) {
          const int64_t cnode = raw_vnode[B_raw.col[idx] / 2];
          const int32_t t = maps.vfree[cnode];
          if (t >= 0) cols.push_back(t);
        }
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      builder.begin_row(d);
      for (int64_t t : cols) {
        builder.add(2 * t);
        builder.add(2 * t + 1);
      }
    }
    B = builder.finish(false);
    for (int64_t d = 0; d < maps.n_pfree; ++d)
      for (int64_t node : p_alias[d]) {
        if (maps.praw[node] < 0) continue;
        const int64_t row = maps.praw[node];
        g[d] += rhs.g[row];
        for (int64_t idx = B_raw.row_ptr[row]; idx < B_raw.row_ptr[row + 1];
             ++idx) {
          const double val = B_raw.val[idx];
          if (val == 0.0) continue;
          const int64_t craw = B_raw.col[idx];
          const int64_t cnode = raw_vnode[craw / 2];
          const int ccomp = static_cast<int>(craw % 2);
          const int32_t t = maps.vfree[cnode];
          if (t >= 0)
            B.coeff_ref(d, 2 * static_cast<int64_t>(t) + ccomp) += val;
          else if (t == -1)
            g[d] -= val * maps.vdir[2 * cnode + ccomp];
        }
      }
  }

  // --- pressure weights: J-weighted lumped mass / (nu * eps_scale) ---------
  std::vector<double> weights(maps.n_pfree, 0.0);
  {
    const double area = mesh.hx * mesh.hy;
    for (int cy = 0; cy < mesh.ny; ++cy)
      for (int cx = 0; cx < mesh.nx; ++cx) {
        const int32_t ord =
            coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
        if (ord < 0) continue;
        const CellDofs cd = cell_dofs(mesh, cx, cy);
        for (int q = 0; q < 9; ++q) {
          const double wj =
              kBasis.wq[q] * area * coeffs.J[coeffs.qindex(ord, q)];
          for (int p = 0; p < 4; ++p) {
            const int32_t d = maps.pfree[cd.pnode[p]];
            if (d >= 0) weights[d] += wj * kBasis.v1[q][p];
          }
        }
      }
    const double s = 1.0 / (coeffs.nu * coeffs.eps_scale);
    for (double& w : weights) w *= s;
  }

  out.sys.A = std::move(A);
  out.sys.B = std::move(B);
  out.sys.f = std::move(f);
  out.sys.g = std::move(g);
  out.sys.pressure_nullspace = maps.pressure_nullspace;
  out.sys.pressure_weights = std::move(weights);
  return out;
}

// ---------------------------------------------------------------------------
// Solve
// ---------------------------------------------------------------------------

StokesSolution solve_stokes(const FemMesh& mesh, const TransformedCoeffs& coeffs,
                            const StokesBC& bc, const StokesRhs& rhs,
                            bool symmetric, SaddleOptions opt) {
  const DofMaps maps = classify_dofs(mesh, bc);
  ConstrainedStokes con = [&] {
    const SparseMatrix A_raw = assemble_viscous_block(mesh, coeffs, symmetric);
    const SparseMatrix B_raw = assemble_pressure_coupling(mesh, coeffs);
    const RawRhs raw = assemble_rhs(mesh, coeffs, symmetric, rhs);
    return apply_constraints(mesh, maps, coeffs, A_raw, B_raw, raw);
  }();
  if (con.maps.n_vfree == 0)
    throw ConfigError(
        "solve_stokes: no free velocity unknowns (mesh entirely constrained)");

  SaddleSolution sol = saddle_solve(con.sys, opt);

  StokesSolution out;
  out.report = sol.report;
  out.n_velocity_dofs = 2 * con.maps.n_vfree;
  out.n_pressure_dofs = con.maps.n_pfree;
  {
    std::vector<double> bu(con.sys.B.rows, 0.0);
    con.sys.B.multiply(sol.u, bu);
    double r2 = 0.0;
    for (int64_t i = 0; i < con.sys.B.rows; ++i) {
      const double d = bu[i] - con.sys.g[i];
      r2 += d * d;
    }
    out.div_residual = std::sqrt(r2);
  }

  out.velocity.assign(2 * mesh.n_vnodes(), 0.0);
  for (int64_t node = 0; node < mesh.n_vnodes(); ++node) {
    const int32_t d = maps.vfree[node];
    if (d >= 0) {
      out.velocity[2 * node] = sol.u[2 * static_cast<int64_t>(d)];
      out.velocity[2 * node + 1] = sol.u[2 * static_cast<int64_t>(d) + 1];
    } else if (d == -1) {
      out.velocity[2 * node] = maps.vdir[2 * node];
      out.velocity[2 * node + 1] = maps.vdir[2 * node + 1];
    }
  }
  out.pressure.assign(mesh.n_pnodes(), 0.0);
  for (int64_t node = 0; node < mesh.n_pnodes(); ++node) {
    const int32_t d = maps.pfree[node];
    if (d >= 0) out.pressure[node] = sol.p[d];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

namespace {

struct CellLocal {
  int cx, cy;
  double xi, eta;
};

CellLocal locate(const FemMesh& mesh, Vec2 p) {
  double sx = (p.x - mesh.x0) / mesh.hx;
  double sy = (p.y - mesh.y0) / mesh.hy;
  int cx = std::clamp(static_cast<int>(std::floor(sx)), 0, mesh.nx - 1);
  int cy = std::clamp(static_cast<int>(std::floor(sy)), 0, mesh.ny - 1);
  return {cx, cy, sx - cx, sy - cy};
}

}  // namespace

Vec2 eval_q2(const FemMesh& mesh, const std::vector<double>& field, Vec2 p) {
  const CellLocal c = locate(mesh, p);
  Vec2 out{0.0, 0.0};
  for (int ly = 0; ly < 3; ++ly)
    for (int lx = 0; lx < 3; ++lx) {
      const double b = n2(lx, c.xi) * n2(ly, c.eta);
      const int64_t node = mesh.vnode(2 * c.cx + lx, 2 * c.cy + ly);
      out.x += b * field[2 * node];
      out.y += b * field[2 * node + 1];
    }
  return out;
}

Mat2 eval_q2_gradient(const FemMesh& mesh, const std::vector<double>& field,
                      Vec2 p) {
  const CellLocal c = locate(mesh, p);
  Mat2 g{};  // g(i,j) = d_i field_j
  for (int ly = 0; ly < 3; ++ly)
    for (int lx = 0; lx < 3; ++lx) {
      const double bx = d2(lx, c.xi) * n2(ly, c.eta) / mesh.hx;
      const double by = n2(lx, c.xi) * d2(ly, c.eta) / mesh.hy;
      const int64_t node = mesh.vnode(2 * c.cx + lx, 2 * c.cy + ly);
      g(0, 0) += bx * field[2 * node];
      g(0, 1) += bx * field[2 * node + 1];
      g(1, 0) += by * field[2 * node];
      g(1, 1) += by * field[2 * node + 1];
    }
  return g;
}

double eval_q1(const FemMesh& mesh, const std::vector<double>& field, Vec2 p) {
  const CellLocal c = locate(mesh, p);
  double out = 0.0;
  for (int ly = 0; ly < 2; ++ly)
    for (int lx = 0; lx < 2; ++lx)
      out += n1(lx, c.xi) * n1(ly, c.eta) *
             field[mesh.pnode(c.cx + lx, c.cy + ly)];
  return out;
}

double integrate_cells(const FemMesh& mesh,
                       const std::function<double(Vec2)>& fn) {
  double s = 0.0;
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.cell_active(cx, cy)) continue;
      const Vec2 corner = mesh.cell_corner(cx, cy);
      for (int q = 0; q < 9; ++q)
        s += kBasis.wq[q] * area *
             fn({corner.x + kQp[q % 3] * mesh.hx,
                 corner.y + kQp[q / 3] * mesh.hy});
    }
  return s;
}

double l2_error_q2(const FemMesh& mesh, const std::vector<double>& field,
                   const std::function<Vec2(Vec2)>& reference) {
  double s = 0.0;
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.cell_active(cx, cy)) continue;
      const Vec2 corner = mesh.cell_corner(cx, cy);
      for (int q = 0; q < 9; ++q) {
        Vec2 v{0.0, 0.0};
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx) {
            const double b = kBasis.v2[q][3 * ly + lx];
            const int64_t node = mesh.vnode(2 * cx + lx, 2 * cy + ly);
            v.x += b * field[2 * node];
            v.y += b * field[2 * node + 1];
          }
        const Vec2 p{corner.x + kQp[q % 3] * mesh.hx,
                     corner.y + kQp[q / 3] * mesh.hy};
        if (reference) v = v - reference(p);
        s += kBasis.wq[q] * area * dot(v, v);
      }
    }
  return std::sqrt(s);
}

double transformed_gradient_inner(const FemMesh& mesh,
                                  const TransformedCoeffs& coeffs,
                                  const std::vector<double>& a,
                                  const std::vector<double>& b) {
  double s = 0.0;
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord =
          coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      for (int q = 0; q < 9; ++q) {
        const int64_t k = coeffs.qindex(ord, q);
        const Mat2& M = coeffs.M[k];
        Vec2 ga[2] = {{0.0, 0.0}, {0.0, 0.0}};
        Vec2 gb[2] = {{0.0, 0.0}, {0.0, 0.0}};
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx) {
            const int l = 3 * ly + lx;
            const Vec2 grad{kBasis.d2x[q][l] / mesh.hx,
                            kBasis.d2y[q][l] / mesh.hy};
            const int64_t node = mesh.vnode(2 * cx + lx, 2 * cy + ly);
            for (int c = 0; c < 2; ++c) {
              ga[c] = ga[c] + a[2 * node + c] * grad;
              gb[c] = gb[c] + b[2 * node + c] * grad;
            }
          }
        double inner = 0.0;
        for (int c = 0; c < 2; ++c) inner += dot(M * ga[c], M * gb[c]);
        s += kBasis.wq[q] * area * coeffs.J[k] * inner;
      }
    }
  return s;
}

Vec2 transformed_velocity_integral(const FemMesh& mesh,
                                   const TransformedCoeffs& coeffs,
                                   const std::vector<double>& field) {
  Vec2 s{0.0, 0.0};
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      const int32_t ord =
          coeffs.cell_ordinal[static_cast<size_t>(cy) * mesh.nx + cx];
      if (ord < 0) continue;
      for (int q = 0; q < 9; ++q) {
        Vec2 v{0.0, 0.0};
        for (int ly = 0; ly < 3; ++ly)
          for (int lx = 0; lx < 3; ++lx) {
            const double bq = kBasis.v2[q][3 * ly + lx];
            const int64_t node = mesh.vnode(2 * cx + lx, 2 * cy + ly);
            v.x += bq * field[2 * node];
            v.y += bq * field[2 * node + 1];
          }
        s = s + (kBasis.wq[q] * area * coeffs.J[coeffs.qindex(ord, q)]) * v;
      }
    }
  return s;
}

}  // namespace evodarcy
