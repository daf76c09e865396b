#include "evodarcy/darcy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evodarcy {

namespace {

// 2x2 Gauss rule on the reference square [0,1]^2; weights sum to 1.
constexpr double kG0 = 0.5 - 0.5 / 1.7320508075688772;
constexpr double kG1 = 0.5 + 0.5 / 1.7320508075688772;
constexpr double kGp[2] = {kG0, kG1};

// Bilinear shapes on [0,1]^2, local node l = 2*ly + lx.
double q1_shape(int l, double xi, double eta) {
  const double sx = (l & 1) ? xi : 1.0 - xi;
  const double sy = (l & 2) ? eta : 1.0 - eta;
  return sx * sy;
}

Vec2 q1_grad(int l, double xi, double eta, double hx, double hy) {
  const double sx = (l & 1) ? xi : 1.0 - xi;
  const double sy = (l & 2) ? eta : 1.0 - eta;
  const double dx = (l & 1) ? 1.0 : -1.0;
  const double dy = (l & 2) ? 1.0 : -1.0;
  return {dx * sy / hx, sx * dy / hy};
}

void check_spd_sample(const Mat2& k, Vec2 x) {
  const double scale = frob_norm(k);
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw NonSPDCoefficient("permeability sample empty or non-finite at (" +
                            std::to_string(x.x) + ", " + std::to_string(x.y) +
                            ")");
  if (std::abs(k(0, 1) - k(1, 0)) > 1e-8 * scale)
    throw NonSPDCoefficient("permeability sample asymmetric at (" +
                            std::to_string(x.x) + ", " + std::to_string(x.y) +
                            ")");
  const Mat2 s = sym(k);
  if (!(s(0, 0) > 0.0) || !(s.det() > 0.0))
    throw NonSPDCoefficient("permeability sample fails Cholesky at (" +
                            std::to_string(x.x) + ", " + std::to_string(x.y) +
                            ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// MacroMesh
// ---------------------------------------------------------------------------
MacroMesh MacroMesh::from_domain(const MacroDomain& domain, int n) {
  if (n < 1) throw ConfigError("MacroMesh: n must be >= 1");
  domain.validate();
  const RationalRect bb = domain.bbox();

  const Rational wcells = (bb.x1 - bb.x0) * Rational(n);
  const Rational hcells = (bb.y1 - bb.y0) * Rational(n);
  if (wcells.den != 1 || hcells.den != 1)
    throw ConfigError("MacroMesh: grid with n=" + std::to_string(n) +
                      " cells per unit does not fit the domain extent");

  MacroMesh m;
  m.nx = static_cast<int>(wcells.num);
  m.ny = static_cast<int>(hcells.num);
  m.hx = m.hy = 1.0 / n;
  m.x0 = bb.x0.to_double();
  m.y0 = bb.y0.to_double();

  m.cell_mask.assign(static_cast<size_t>(m.n_cells()), 0);
  const Rational cell_area = Rational(1, n) * Rational(1, n);
  for (int cy = 0; cy < m.ny; ++cy)
    for (int cx = 0; cx < m.nx; ++cx) {
      RationalRect r;
      r.x0 = bb.x0 + Rational(cx, n);
      r.x1 = bb.x0 + Rational(cx + 1, n);
      r.y0 = bb.y0 + Rational(cy, n);
      r.y1 = bb.y0 + Rational(cy + 1, n);
      const Rational covered = domain.covered_area(r);
      if (covered == cell_area) {
        m.cell_mask[static_cast<size_t>(m.cell(cx, cy))] = 1;
      } else if (covered != Rational(0)) {
        throw ConfigError(
            "MacroMesh: grid cell straddles the domain boundary; n=" +
            std::to_string(n) + " does not resolve the cuboid union");
      }
    }

  m.node_active.assign(static_cast<size_t>(m.n_nodes()), 0);
  m.node_interior.assign(static_cast<size_t>(m.n_nodes()), 0);
  int64_t n_active = 0;
  for (int iy = 0; iy <= m.ny; ++iy)
    for (int ix = 0; ix <= m.nx; ++ix) {
      const bool a00 = m.active(ix - 1, iy - 1), a10 = m.active(ix, iy - 1);
      const bool a01 = m.active(ix - 1, iy), a11 = m.active(ix, iy);
      const bool touches = a00 || a10 || a01 || a11;
      m.node_active[static_cast<size_t>(m.node(ix, iy))] = touches ? 1 : 0;
      m.node_interior[static_cast<size_t>(m.node(ix, iy))] =
          (a00 && a10 && a01 && a11) ? 1 : 0;
      if (touches) ++n_active;
    }
  if (n_active == 0) throw ConfigError("MacroMesh: no active cells");
  return m;
}

double MacroMesh::active_area() const {
  return static_cast<double>(n_active_cells()) * hx * hy;
}

int64_t MacroMesh::n_active_cells() const {
  int64_t c = 0;
  for (uint8_t a : cell_mask) c += a;
  return c;
}

// ---------------------------------------------------------------------------
// MacroData
// ---------------------------------------------------------------------------
void MacroData::validate() const {
  if (!(nu > 0.0)) throw ConfigError("MacroData: viscosity must be positive");
  if (!(fd_step > 0.0)) throw ConfigError("MacroData: fd_step must be positive");
}

Vec2 MacroData::force(double t, Vec2 x) const {
  return f ? f(t, x) : Vec2{0.0, 0.0};
}

double MacroData::boundary_pressure(double t, Vec2 x) const {
  return p_b ? p_b(t, x) : 0.0;
}

Vec2 MacroData::boundary_pressure_gradient(double t, Vec2 x) const {
  if (grad_p_b) return grad_p_b(t, x);
  if (!p_b) return {0.0, 0.0};
  const double h = fd_step;
  return {(p_b(t, {x.x + h, x.y}) - p_b(t, {x.x - h, x.y})) / (2.0 * h),
          (p_b(t, {x.x, x.y + h}) - p_b(t, {x.x, x.y - h})) / (2.0 * h)};
}

double MacroData::porosity_rate(double t, Vec2 x) const {
  return dt_theta ? dt_theta(t, x) : 0.0;
}

// ---------------------------------------------------------------------------
// Coefficient fields
// ---------------------------------------------------------------------------
TensorField constant_tensor(const Mat2& K) {
  return [K](Vec2) { return K; };
}

TensorField permeability_field(const PermeabilityTable& table,
                               const PorosityField& porosity, double t) {
  return [table, porosity, t](Vec2 x) {
    return table.interpolate(porosity.value(t, x));
  };
}

TensorField direct_cell_field(const MicroDeformation& def, double t,
                              SaddleOptions opt) {
  return [def, t, opt](Vec2 x) {
    return permeability_from_gradients(solve_cell_problems(def.cell, def, t, x, opt))
        .K;
  };
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------
DarcySystem assemble_darcy(const MacroMesh& mesh, const TensorField& K,
                           double nu) {
  if (!(nu > 0.0)) throw ConfigError("assemble_darcy: nu must be positive");
  if (!K) throw ConfigError("assemble_darcy: empty coefficient field");

  DarcySystem sys;
  sys.nx = mesh.nx;
  sys.ny = mesh.ny;
  sys.unknown_of_node.assign(static_cast<size_t>(mesh.n_nodes()), -1);
  for (int iy = 0; iy <= mesh.ny; ++iy)
    for (int ix = 0; ix <= mesh.nx; ++ix)
      if (mesh.node_interior[static_cast<size_t>(mesh.node(ix, iy))]) {
        sys.unknown_of_node[static_cast<size_t>(mesh.node(ix, iy))] =
            static_cast<int64_t>(sys.node_of_unknown.size());
        sys.node_of_unknown.push_back(mesh.node(ix, iy));
      }
  const int nuk = static_cast<int>(sys.node_of_unknown.size());

  // Pattern: 9-point stencil restricted to unknowns.
  CsrBuilder builder(nuk, nuk, static_cast<int64_t>(nuk) * 9);
  for (int64_t row = 0; row < nuk; ++row) {
    builder.begin_row(static_cast<int>(row));
    const int64_t nd = sys.node_of_unknown[static_cast<size_t>(row)];
    const int ix = static_cast<int>(nd % (mesh.nx + 1));
    const int iy = static_cast<int>(nd / (mesh.nx + 1));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int jx = ix + dx, jy = iy + dy;
        if (jx < 0 || jx > mesh.nx || jy < 0 || jy > mesh.ny) continue;
        const int64_t u =
            sys.unknown_of_node[static_cast<size_t>(mesh.node(jx, jy))];
        if (u >= 0) builder.add(static_cast<int>(u));
      }
  }
  sys.A = builder.finish(/*symmetric_hint=*/true);

  const double scale = mesh.hx * mesh.hy / nu;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active(cx, cy)) continue;
      double local[4][4] = {};
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          const double xi = kGp[qx], eta = kGp[qy];
          const Vec2 xq{mesh.x0 + (cx + xi) * mesh.hx,
                        mesh.y0 + (cy + eta) * mesh.hy};
          const Mat2 k = K(xq);
          check_spd_sample(k, xq);
          const Mat2 ks = sym(k);
          Vec2 g[4];
          for (int l = 0; l < 4; ++l)
            g[l] = q1_grad(l, xi, eta, mesh.hx, mesh.hy);
          for (int l = 0; l < 4; ++l)
            for (int mcol = l; mcol < 4; ++mcol)
              local[l][mcol] +=
                  0.25 * scale * dot(Vec2{ks(0, 0) * g[mcol].x + ks(0, 1) * g[mcol].y,
                                          ks(1, 0) * g[mcol].x + ks(1, 1) * g[mcol].y},
                                     g[l]);
        }
      for (int l = 0; l < 4; ++l)
        for (int mcol = 0; mcol < l; ++mcol) local[l][mcol] = local[mcol][l];

      int64_t uk[4];
      for (int l = 0; l < 4; ++l) {
        const int jx = cx + (l & 1), jy = cy + ((l & 2) >> 1);
        uk[l] = sys.unknown_of_node[static_cast<size_t>(mesh.node(jx, jy))];
      }
      for (int l = 0; l < 4; ++l) {
        if (uk[l] < 0) continue;
        for (int mcol = 0; mcol < 4; ++mcol) {
          if (uk[mcol] < 0) continue;
          sys.A.coeff_ref(static_cast<int>(uk[l]),
                          static_cast<int>(uk[mcol])) += local[l][mcol];
        }
      }
    }
  return sys;
}

std::vector<double> assemble_darcy_rhs(const MacroMesh& mesh,
                                       const MacroData& data,
                                       const TensorField& K, double t) {
  data.validate();
  if (!K) throw ConfigError("assemble_darcy_rhs: empty coefficient field");

  std::vector<double> full(static_cast<size_t>(mesh.n_nodes()), 0.0);
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active(cx, cy)) continue;
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          const double xi = kGp[qx], eta = kGp[qy];
          const Vec2 xq{mesh.x0 + (cx + xi) * mesh.hx,
                        mesh.y0 + (cy + eta) * mesh.hy};
          const Vec2 fx = data.force(t, xq);
          const Vec2 gpb = data.boundary_pressure_gradient(t, xq);
          const Vec2 drive{fx.x - gpb.x, fx.y - gpb.y};
          const Mat2 k = sym(K(xq));
          const Vec2 kdrive{(k(0, 0) * drive.x + k(0, 1) * drive.y) / data.nu,
                            (k(1, 0) * drive.x + k(1, 1) * drive.y) / data.nu};
          const double src = data.porosity_rate(t, xq);
          for (int l = 0; l < 4; ++l) {
            const int jx = cx + (l & 1), jy = cy + ((l & 2) >> 1);
            full[static_cast<size_t>(mesh.node(jx, jy))] +=
                0.25 * area *
                (dot(kdrive, q1_grad(l, xi, eta, mesh.hx, mesh.hy)) -
                 src * q1_shape(l, xi, eta));
          }
        }
    }

  std::vector<double> rhs;
  rhs.reserve(full.size());
  for (int iy = 0; iy <= mesh.ny; ++iy)
    for (int ix = 0; ix <= mesh.nx; ++ix)
      if (mesh.node_interior[static_cast<size_t>(mesh.node(ix, iy))])
        rhs.push_back(full[static_cast<size_t>(mesh.node(ix, iy))]);
  return rhs;
}

std::vector<double> solve_pressure(const MacroMesh& mesh,
                                   const DarcySystem& sys,
                                   const std::vector<double>& rhs,
                                   SolveReport* report,
                                   const KrylovOptions& opt) {
  if (sys.nx != mesh.nx || sys.ny != mesh.ny)
    throw ConfigError("solve_pressure: system was assembled on another mesh");
  if (static_cast<int64_t>(rhs.size()) != sys.n_unknowns())
    throw ConfigError("solve_pressure: rhs size mismatch");

  std::vector<double> x(rhs.size(), 0.0);
  const SolveReport rep = cg_solve(sys.A, rhs, x, opt);
  if (report) *report = rep;

  std::vector<double> q(static_cast<size_t>(mesh.n_nodes()), 0.0);
  for (size_t u = 0; u < sys.node_of_unknown.size(); ++u)
    q[static_cast<size_t>(sys.node_of_unknown[u])] = x[u];
  return q;
}

std::vector<Vec2> reconstruct_velocity(const MacroMesh& mesh,
                                       const std::vector<double>& q,
                                       const MacroData& data,
                                       const TensorField& K, double t) {
  if (static_cast<int64_t>(q.size()) != mesh.n_nodes())
    throw ConfigError("reconstruct_velocity: q size mismatch");
  std::vector<Vec2> v(static_cast<size_t>(mesh.n_cells()), Vec2{0.0, 0.0});
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active(cx, cy)) continue;
      const double q00 = q[static_cast<size_t>(mesh.node(cx, cy))];
      const double q10 = q[static_cast<size_t>(mesh.node(cx + 1, cy))];
      const double q01 = q[static_cast<size_t>(mesh.node(cx, cy + 1))];
      const double q11 = q[static_cast<size_t>(mesh.node(cx + 1, cy + 1))];
      const Vec2 xc = mesh.cell_center(cx, cy);
      const Vec2 gq{((q10 + q11) - (q00 + q01)) / (2.0 * mesh.hx),
                    ((q01 + q11) - (q00 + q10)) / (2.0 * mesh.hy)};
      const Vec2 gpb = data.boundary_pressure_gradient(t, xc);
      const Vec2 fx = data.force(t, xc);
      const Vec2 drive{fx.x - gq.x - gpb.x, fx.y - gq.y - gpb.y};
      const Mat2 k = sym(K(xc));
      v[static_cast<size_t>(mesh.cell(cx, cy))] = {
          (k(0, 0) * drive.x + k(0, 1) * drive.y) / data.nu,
          (k(1, 0) * drive.x + k(1, 1) * drive.y) / data.nu};
    }
  return v;
}

MacroField solve_darcy(const MacroMesh& mesh, const MacroData& data,
                       const TensorField& K, double t,
                       const KrylovOptions& opt) {
  data.validate();
  const DarcySystem sys = assemble_darcy(mesh, K, data.nu);
  const std::vector<double> rhs = assemble_darcy_rhs(mesh, data, K, t);
  MacroField out;
  out.q = solve_pressure(mesh, sys, rhs, &out.report, opt);
  out.v = reconstruct_velocity(mesh, out.q, data, K, t);
  out.p.assign(out.q.size(), 0.0);
  for (int iy = 0; iy <= mesh.ny; ++iy)
    for (int ix = 0; ix <= mesh.nx; ++ix) {
      const size_t nd = static_cast<size_t>(mesh.node(ix, iy));
      if (mesh.node_active[nd])
        out.p[nd] = out.q[nd] + data.boundary_pressure(t, mesh.node_pos(ix, iy));
    }
  return out;
}

MassBalance mass_balance_report(const MacroMesh& mesh,
                                const std::vector<Vec2>& v,
                                const MacroData& data, double t) {
  if (static_cast<int64_t>(v.size()) != mesh.n_cells())
    throw ConfigError("mass_balance_report: velocity size mismatch");

  MassBalance mb;
  const double area = mesh.hx * mesh.hy;
  for (int cy = 0; cy < mesh.ny; ++cy)
    for (int cx = 0; cx < mesh.nx; ++cx) {
      if (!mesh.active(cx, cy)) continue;
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
          const Vec2 xq{mesh.x0 + (cx + kGp[qx]) * mesh.hx,
                        mesh.y0 + (cy + kGp[qy]) * mesh.hy};
          mb.volume_source += 0.25 * area * data.porosity_rate(t, xq);
        }

      // Boundary edges: outward normal where the neighbor is missing.
      // The edge velocity is extrapolated from the two nearest cells.
      const Vec2 vc = v[static_cast<size_t>(mesh.cell(cx, cy))];
      const int step[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& s : step) {
        if (mesh.active(cx + s[0], cy + s[1])) continue;
        Vec2 vedge = vc;
        if (mesh.active(cx - s[0], cy - s[1])) {
          const Vec2 vin =
              v[static_cast<size_t>(mesh.cell(cx - s[0], cy - s[1]))];
          vedge = {1.5 * vc.x - 0.5 * vin.x, 1.5 * vc.y - 0.5 * vin.y};
        }
        const double len = (s[0] != 0) ? mesh.hy : mesh.hx;
        mb.boundary_outflux += len * (vedge.x * s[0] + vedge.y * s[1]);
      }
    }
  mb.defect = std::abs(mb.boundary_outflux + mb.volume_source);
  return mb;
}

}  // namespace evodarcy
