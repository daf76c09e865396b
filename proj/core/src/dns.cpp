#include "evodarcy/dns.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace evodarcy {

namespace {

// 3-point Gauss-Legendre rule on [0,1] (matches the assembly quadrature).
const double kQp[3] = {0.5 - 0.5 * std::sqrt(3.0 / 5.0), 0.5,
                       0.5 + 0.5 * std::sqrt(3.0 / 5.0)};
const double kQw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

std::string rational_str(Rational r) {
  std::string s = std::to_string(r.num);
  if (r.den != 1) s += "/" + std::to_string(r.den);
  return s;
}

/// Euler characteristic V - E + F of the union of active cells.
int64_t euler_characteristic(const FemMesh& mesh) {
  const int nx = mesh.nx, ny = mesh.ny;
  std::vector<uint8_t> vert(static_cast<size_t>(nx + 1) * (ny + 1), 0);
  std::vector<uint8_t> hedge(static_cast<size_t>(nx) * (ny + 1), 0);
  std::vector<uint8_t> vedge(static_cast<size_t>(nx + 1) * ny, 0);
  int64_t faces = 0;
  for (int cy = 0; cy < ny; ++cy) {
    for (int cx = 0; cx < nx; ++cx) {
      if (!mesh.cell_active(cx, cy)) continue;
      ++faces;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx)
          vert[static_cast<size_t>(cy + dy) * (nx + 1) + cx + dx] = 1;
      hedge[static_cast<size_t>(cy) * nx + cx] = 1;
      hedge[static_cast<size_t>(cy + 1) * nx + cx] = 1;
      vedge[static_cast<size_t>(cy) * (nx + 1) + cx] = 1;
      vedge[static_cast<size_t>(cy) * (nx + 1) + cx + 1] = 1;
    }
  }
  const auto count = [](const std::vector<uint8_t>& v) {
    return static_cast<int64_t>(std::count(v.begin(), v.end(), uint8_t{1}));
  };
  return count(vert) - (count(hedge) + count(vedge)) + faces;
}

StokesBC stress_boundary() {
  StokesBC bc;
  bc.left = bc.right = bc.bottom = bc.top = SideBC::stress;
  return bc;
}

}  // namespace

PerforatedMesh build_perforated_mesh(const MacroDomain& domain,
                                     const ReferenceCell& cell, Rational eps,
                                     int m) {
  domain.validate();
  if (m < 2)
    throw ConfigError("micro resolution must be at least 2, got " +
                      std::to_string(m));
  if (eps.num <= 0) throw ConfigError("lattice spacing must be positive");
  if (!domain.epsilon_ladder.empty() &&
      std::find(domain.epsilon_ladder.begin(), domain.epsilon_ladder.end(),
                eps) == domain.epsilon_ladder.end())
    throw IncompatibleEpsilon("eps = " + rational_str(eps) +
                              " is not in the domain's declared ladder");

  PerforatedMesh pm;
  pm.eps = eps;
  pm.m = m;
  pm.lattice = build_lattice(domain, eps);

  if (cell.n == m) {
    pm.micro = cell;
  } else {
    if (!cell.levelset_fn)
      throw ConfigError(
          "reference cell has no level set; cannot resample the pore mask at "
          "micro resolution " +
          std::to_string(m));
    pm.micro = ReferenceCell::from_levelset(m, cell.levelset_fn);
  }
  // Periodic connectivity of the reference pore carries the tiled domain:
  // every bounded pore component then reaches the outer boundary. A full-pore
  // rectangle is legitimate; an empty mask is not.
  if (pm.micro.pore_fraction() == 0.0)
    throw DisconnectedPore("pore mask is empty at micro resolution " +
                           std::to_string(m));
  pm.micro.validate(/*allow_trivial=*/true);

  const RationalRect bb = domain.bbox();
  const Rational rx0 = bb.x0 / eps, ry0 = bb.y0 / eps;
  const Rational rcols = (bb.x1 - bb.x0) / eps;
  const Rational rrows = (bb.y1 - bb.y0) / eps;
  if (rx0.den != 1 || ry0.den != 1 || rcols.den != 1 || rrows.den != 1)
    throw IncompatibleEpsilon(
        "domain bounding box is not aligned to the eps lattice");
  pm.ix0 = rx0.num;
  pm.iy0 = ry0.num;
  pm.ncols = static_cast<int>(rcols.num);
  pm.nrows = static_cast<int>(rrows.num);

  const int nxt = pm.ncols * m, nyt = pm.nrows * m;
  std::vector<uint8_t> mask(static_cast<size_t>(nxt) * nyt, 0);
  pm.lattice_index.assign(static_cast<size_t>(pm.ncols) * pm.nrows, -1);
  for (size_t k = 0; k < pm.lattice.size(); ++k) {
    const LatticeCell& lc = pm.lattice[k];
    const int col = static_cast<int>(lc.ix - pm.ix0);
    const int row = static_cast<int>(lc.iy - pm.iy0);
    pm.lattice_index[static_cast<size_t>(row) * pm.ncols + col] =
        static_cast<int32_t>(k);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i)
        mask[static_cast<size_t>(row * m + j) * nxt + col * m + i] =
            pm.micro.pore(i, j) ? 1 : 0;
  }

  pm.fem = FemMesh::from_mask(nxt, nyt, bb.x0.to_double(), bb.y0.to_double(),
                              (bb.x1 - bb.x0).to_double(),
                              (bb.y1 - bb.y0).to_double(), std::move(mask));

  pm.maps = classify_dofs(pm.fem, stress_boundary());
  pm.gamma_velocity_nodes =
      std::count(pm.maps.vfree.begin(), pm.maps.vfree.end(), int32_t{-1});
  pm.euler_characteristic = euler_characteristic(pm.fem);
  return pm;
}

PerforatedSolution solve_eps_problem(const PerforatedMesh& mesh,
                                     const EpsDeformation& def,
                                     const MacroData& data, double t,
                                     SaddleOptions opt) {
  if (def.micro == nullptr)
    throw ConfigError("eps-deformation has no micro family attached");
  const double eps = mesh.eps.to_double();
  if (std::abs(def.eps - eps) > 1e-12 * std::max(1.0, eps))
    throw ConfigError("deformation eps does not match the perforated mesh");
  data.validate();

  const auto sampler = [&def, t](Vec2 x) {
    DeformationSample s;
    s.psi = def.psi(t, x);
    s.Psi = def.Psi(t, x);
    s.J = s.Psi.det();
    s.A = s.J * s.Psi.inverse();
    return s;
  };
  const TransformedCoeffs coeffs = TransformedCoeffs::from_sampler(
      mesh.fem, sampler, nullptr, def.micro->exact_cofactor, data.nu,
      eps * eps, def.micro->c_J);

  StokesRhs rhs;
  if (data.f)
    rhs.body_force = [&def, &data, t](Vec2 x) {
      return data.force(t, def.psi(t, x));
    };
  if (data.p_b || data.grad_p_b)
    rhs.grad_pb = [&def, &data, t](Vec2 x) {
      // Pullback gradient of p_b(psi_eps): Psi^T (grad p_b)(psi(x)).
      return def.Psi(t, x).transpose() *
             data.boundary_pressure_gradient(t, def.psi(t, x));
    };
  rhs.lift = [&def, t](Vec2 x) { return def.dt_psi(t, x); };

  StokesSolution ss = solve_stokes(mesh.fem, coeffs, stress_boundary(), rhs,
                                   /*symmetric=*/true, opt);

  PerforatedSolution out;
  out.w_hat = std::move(ss.velocity);
  out.q_hat = std::move(ss.pressure);
  out.report = ss.report;
  out.div_residual = ss.div_residual;
  out.t = t;
  out.eps = eps;

  out.lift.assign(out.w_hat.size(), 0.0);
  for (int iy = 0; iy < mesh.fem.vny(); ++iy) {
    for (int ix = 0; ix < mesh.fem.vnx(); ++ix) {
      const int64_t n = mesh.fem.vnode(ix, iy);
      if (mesh.maps.vraw[n] == -2) continue;
      const Vec2 l = def.dt_psi(t, mesh.fem.vnode_pos(ix, iy));
      out.lift[2 * n] = l.x;
      out.lift[2 * n + 1] = l.y;
    }
  }
  out.v_hat = out.w_hat;
  for (size_t i = 0; i < out.v_hat.size(); ++i) out.v_hat[i] += out.lift[i];

  out.p_hat.assign(out.q_hat.size(), 0.0);
  for (int iy = 0; iy < mesh.fem.pny(); ++iy) {
    for (int ix = 0; ix < mesh.fem.pnx(); ++ix) {
      const int64_t n = mesh.fem.pnode(ix, iy);
      if (mesh.maps.praw[n] == -2) continue;
      out.p_hat[n] =
          out.q_hat[n] +
          data.boundary_pressure(t, def.psi(t, mesh.fem.pnode_pos(ix, iy)));
    }
  }
  return out;
}

ExtendedFields extend_solution(const PerforatedSolution& sol,
                               const PerforatedMesh& mesh,
                               const EpsDeformation& def, double t,
                               double min_pore_fraction) {
  const FemMesh& fem = mesh.fem;
  if (sol.v_hat.size() != 2 * static_cast<size_t>(fem.n_vnodes()) ||
      sol.q_hat.size() != static_cast<size_t>(fem.n_pnodes()))
    throw ConfigError("solution fields do not match the perforated mesh");

  ExtendedFields out;
  out.velocity = sol.v_hat;
  for (int64_t n = 0; n < fem.n_vnodes(); ++n) {
    if (mesh.maps.vraw[n] == -2) {
      out.velocity[2 * n] = 0.0;
      out.velocity[2 * n + 1] = 0.0;
    }
  }

  // Physical (J-weighted) pore mean of the pressure per lattice cell.
  const double eps = mesh.eps.to_double();
  out.cell_mean.assign(mesh.lattice.size(), 0.0);
  for (size_t k = 0; k < mesh.lattice.size(); ++k) {
    const int col = static_cast<int>(mesh.lattice[k].ix - mesh.ix0);
    const int row = static_cast<int>(mesh.lattice[k].iy - mesh.iy0);
    double num = 0.0, den = 0.0;
    for (int j = 0; j < mesh.m; ++j) {
      for (int i = 0; i < mesh.m; ++i) {
        const int cx = col * mesh.m + i, cy = row * mesh.m + j;
        if (!fem.cell_active(cx, cy)) continue;
        const Vec2 corner = fem.cell_corner(cx, cy);
        for (int qy = 0; qy < 3; ++qy) {
          for (int qx = 0; qx < 3; ++qx) {
            const Vec2 xq{corner.x + kQp[qx] * fem.hx,
                          corner.y + kQp[qy] * fem.hy};
            const double wq = kQw[qx] * kQw[qy] * fem.hx * fem.hy;
            const double jac = def.J(t, xq);
            num += wq * jac * eval_q1(fem, sol.q_hat, xq);
            den += wq * jac;
          }
        }
      }
    }
    const double fraction = den / (eps * eps);
    if (!(fraction >= min_pore_fraction))
      throw EmptyPoreCell(
          "lattice cell (" + std::to_string(mesh.lattice[k].ix) + ", " +
          std::to_string(mesh.lattice[k].iy) + ") has physical pore fraction " +
          std::to_string(fraction) + " below the threshold " +
          std::to_string(min_pore_fraction));
    out.cell_mean[k] = num / den;
  }

  out.pressure = sol.q_hat;
  for (int iy = 0; iy < fem.pny(); ++iy) {
    for (int ix = 0; ix < fem.pnx(); ++ix) {
      const int64_t n = fem.pnode(ix, iy);
      if (mesh.maps.praw[n] != -2) continue;  // pore nodes keep their value
      const int col = std::min(ix / mesh.m, mesh.ncols - 1);
      const int row = std::min(iy / mesh.m, mesh.nrows - 1);
      const int32_t ord = mesh.lattice_at(col, row);
      if (ord >= 0) out.pressure[n] = out.cell_mean[ord];
    }
  }
  return out;
}

std::vector<PhysicalSample> back_transform(const PerforatedSolution& sol,
                                           const PerforatedMesh& mesh,
                                           const EpsDeformation& def,
                                           const std::vector<Vec2>& queries) {
  std::vector<PhysicalSample> out;
  out.reserve(queries.size());
  for (const Vec2& X : queries) {
    PhysicalSample s;
    s.x = def.inverse(sol.t, X);
    s.v = eval_q2(mesh.fem, sol.v_hat, s.x);
    s.q = eval_q1(mesh.fem, sol.q_hat, s.x);
    out.push_back(s);
  }
  return out;
}

double q2_l2_norm(const FemMesh& mesh, const std::vector<double>& field) {
  if (field.size() != 2 * static_cast<size_t>(mesh.n_vnodes()))
    throw ConfigError("field size does not match the velocity grid");
  return l2_error_q2(mesh, field, {});
}

double q2_h1_seminorm(const FemMesh& mesh, const std::vector<double>& field) {
  if (field.size() != 2 * static_cast<size_t>(mesh.n_vnodes()))
    throw ConfigError("field size does not match the velocity grid");
  const double sq = integrate_cells(mesh, [&](Vec2 x) {
    const Mat2 g = eval_q2_gradient(mesh, field, x);
    return frob(g, g);
  });
  return std::sqrt(sq);
}

double q1_lp_norm(const FemMesh& mesh, const std::vector<double>& field,
                  double p) {
  if (field.size() != static_cast<size_t>(mesh.n_pnodes()))
    throw ConfigError("field size does not match the pressure grid");
  if (!(p >= 1.0)) throw ConfigError("Lp norm needs p >= 1");
  const double sum = integrate_cells(mesh, [&](Vec2 x) {
    return std::pow(std::abs(eval_q1(mesh, field, x)), p);
  });
  return std::pow(sum, 1.0 / p);
}

}  // namespace evodarcy
