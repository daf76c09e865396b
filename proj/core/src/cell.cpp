#include "evodarcy/cell.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

namespace evodarcy {

namespace {

Vec2 unit_direction(int i) {
  if (i == 0) return Vec2{1.0, 0.0};
  if (i == 1) return Vec2{0.0, 1.0};
  throw ConfigError("cell problem direction must be 0 or 1, got " +
                    std::to_string(i));
}

std::string tabulate_note(const char* what, const char* type, double th) {
  std::string msg = what;
  const std::string prefix = std::string(type) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", th);
  return msg + " (tabulating at porosity " + buf + ")";
}

/// Relative Frobenius asymmetry of a 2x2 matrix.
double relative_asymmetry(const Mat2& m) {
  const double scale = frob_norm(m);
  if (scale == 0.0) return 0.0;
  return std::sqrt(2.0) * std::abs(m(0, 1) - m(1, 0)) / scale;
}

/// Smallest eigenvalue of a symmetric 2x2 matrix via det / lambda_max, which
/// keeps tiny positive eigenvalues positive where the direct trace-minus-
/// discriminant form cancels to zero (channel tensors are near-singular in
/// the blocked direction).
double min_eigenvalue_2x2(const Mat2& k) {
  const double tr = k(0, 0) + k(1, 1);
  const double off = 0.5 * (k(0, 1) + k(1, 0));
  const double det = k(0, 0) * k(1, 1) - off * off;
  const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
  const double lmax = 0.5 * tr + disc;
  if (lmax <= 0.0) return 0.5 * tr - disc;
  return det / lmax;
}

// ---------------------------------------------------------------------------
// Monotone piecewise-cubic interpolation (Fritsch-Carlson slope limiting).
// ---------------------------------------------------------------------------

std::vector<double> pchip_slopes(const std::vector<double>& x,
                                 const std::vector<double>& y) {
  const size_t n = x.size();
  std::vector<double> m(n, 0.0);
  if (n < 2) return m;
  std::vector<double> h(n - 1), d(n - 1);
  for (size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    d[k] = (y[k + 1] - y[k]) / h[k];
  }
  if (n == 2) {
    m[0] = m[1] = d[0];
    return m;
  }
  for (size_t k = 1; k + 1 < n; ++k) {
    if (d[k - 1] * d[k] <= 0.0) continue;  // local extremum: flat slope
    const double w1 = 2.0 * h[k] + h[k - 1];
    const double w2 = h[k] + 2.0 * h[k - 1];
    m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
  }
  // One-sided three-point end slopes, clamped to preserve monotonicity.
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0.0) return 0.0;
    if (d0 * d1 < 0.0 && std::abs(s) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return s;
  };
  m[0] = end_slope(h[0], h[1], d[0], d[1]);
  m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  return m;
}

double pchip_eval(const std::vector<double>& x, const std::vector<double>& y,
                  const std::vector<double>& m, double xq) {
  const size_t n = x.size();
  if (n == 1 || xq <= x.front()) return y.front();
  if (xq >= x.back()) return y.back();
  const size_t k =
      std::upper_bound(x.begin(), x.end(), xq) - x.begin() - 1;
  const double h = x[k + 1] - x[k];
  const double t = (xq - x[k]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return y[k] * (2.0 * t3 - 3.0 * t2 + 1.0) +
         m[k] * h * (t3 - 2.0 * t2 + t) + y[k + 1] * (3.0 * t2 - 2.0 * t3) +
         m[k + 1] * h * (t3 - t2);
}

}  // namespace

// ---------------------------------------------------------------------------
// Solves
// ---------------------------------------------------------------------------

TransformedCoeffs cell_coefficients(const FemMesh& mesh,
                                    const MicroDeformation& def, double t,
                                    Vec2 x) {
  return TransformedCoeffs::from_sampler(
      mesh, [&def, t, x](Vec2 y) { return def.eval(t, x, y); }, nullptr,
      def.exact_cofactor, /*nu=*/1.0, /*eps_scale=*/1.0, def.c_J);
}

CellFlowField solve_cell_forcing(const FemMesh& mesh,
                                 const TransformedCoeffs& coeffs, Vec2 f,
                                 SaddleOptions opt) {
  StokesRhs rhs;
  if (f.x != 0.0 || f.y != 0.0)
    rhs.body_force = [f](Vec2) { return f; };
  StokesSolution s = solve_stokes(mesh, coeffs, StokesBC::fully_periodic(),
                                  rhs, /*symmetric=*/false, opt);
  CellFlowField out;
  out.velocity = std::move(s.velocity);
  out.pressure = std::move(s.pressure);
  out.report = s.report;
  out.div_residual = s.div_residual;
  return out;
}

CellFlowField solve_cell_problem(const ReferenceCell& cell,
                                 const MicroDeformation& def, double t, Vec2 x,
                                 int i, SaddleOptions opt) {
  const Vec2 f = unit_direction(i);
  cell.validate();
  const FemMesh mesh = FemMesh::from_cell(cell);
  const TransformedCoeffs coeffs = cell_coefficients(mesh, def, t, x);
  return solve_cell_forcing(mesh, coeffs, f, opt);
}

CellSolution solve_cell_problems(const ReferenceCell& cell,
                                 const MicroDeformation& def, double t, Vec2 x,
                                 SaddleOptions opt) {
  cell.validate();
  CellSolution sol;
  sol.mesh = FemMesh::from_cell(cell);
  sol.coeffs = cell_coefficients(sol.mesh, def, t, x);
  sol.t = t;
  sol.x = x;
  for (int i = 0; i < 2; ++i)
    sol.dir[i] = solve_cell_forcing(sol.mesh, sol.coeffs, unit_direction(i),
                                    opt);
  return sol;
}

// ---------------------------------------------------------------------------
// Permeability
// ---------------------------------------------------------------------------

double permeability_open_bound(double c_J) {
  const ChannelFamilyParams params{};
  const double a = (1.0 - params.theta_ref) / 2.0;  // half strip thickness
  const double peak = smoothstep7_d(0.5);           // steepest ramp point
  const double band_slope = peak / (0.5 - a);
  const double strip_slope = 2.0 * peak / (2.0 * a);
  const double max_slope = std::max(band_slope, strip_slope);
  const double theta_max = params.theta_ref + 2.0 * (1.0 - c_J) / max_slope;
  const double h = channel_height(theta_max);
  return h * h * h / 12.0;
}

PermeabilityTensor permeability_from_gradients(const CellSolution& sol) {
  PermeabilityTensor out;
  out.t = sol.t;
  out.x = sol.x;
  out.grid_n = sol.mesh.nx;
  out.formula = "transformed-gradient";
  for (int i = 0; i < 2; ++i)
    for (int j = i; j < 2; ++j) {
      const double v = transformed_gradient_inner(
          sol.mesh, sol.coeffs, sol.dir[i].velocity, sol.dir[j].velocity);
      out.K(i, j) = v;
      out.K(j, i) = v;
    }
  for (int j = 0; j < 2; ++j) {
    const Vec2 q = transformed_velocity_integral(sol.mesh, sol.coeffs,
                                                 sol.dir[j].velocity);
    out.K_average(0, j) = q.x;
    out.K_average(1, j) = q.y;
  }
  const double asym = relative_asymmetry(out.K_average);
  if (asym > 1e-8)
    throw AsymmetryExceeded(
        "permeability cross-check matrix asymmetric at " +
        std::to_string(asym) + " relative; solver tolerance too loose");
  out.min_eigenvalue = min_eigenvalue_2x2(out.K);
  return out;
}

void PermeabilityTensor::validate(double c_J) const {
  if (relative_asymmetry(K) > 1e-10)
    throw AsymmetryExceeded("permeability tensor asymmetric beyond 1e-10 "
                            "relative (" + formula + ")");
  // Cholesky of the symmetrized tensor.
  if (!(K(0, 0) > 0.0))
    throw NonSPDCoefficient("permeability tensor not positive definite: "
                            "K11 = " + std::to_string(K(0, 0)));
  const double l11 = std::sqrt(K(0, 0));
  const double l21 = 0.5 * (K(0, 1) + K(1, 0)) / l11;
  if (!(K(1, 1) - l21 * l21 > 0.0))
    throw NonSPDCoefficient(
        "permeability tensor not positive definite: Schur complement " +
        std::to_string(K(1, 1) - l21 * l21));
  const double bound = permeability_open_bound(c_J) * (1.0 + 1e-9);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      if (std::abs(K(i, j)) > bound)
        throw ConfigError("permeability entry " + std::to_string(K(i, j)) +
                          " exceeds the open-cell bound " +
                          std::to_string(bound));
}

PermeabilityTensor solve_cell_physical(const ReferenceCell& cell,
                                       const MicroDeformation& def, double t,
                                       Vec2 x, int grid_n, SaddleOptions opt) {
  if (!cell.levelset_fn)
    throw ConfigError(
        "solve_cell_physical: the reference cell has no levelset function");
  const int n = grid_n > 0 ? grid_n : cell.n;
  // Newton inversion of the deformation. The built-in families extend by
  // the identity outside the displaced band, so iterates stay well-behaved.
  auto inverse = [&](Vec2 z) {
    Vec2 y = z;
    for (int it = 0; it < 32; ++it) {
      const DeformationSample s = def.eval(t, x, y);
      const Vec2 r = s.psi - z;
      if (norm(r) <= 1e-13) return y;
      y = y - s.Psi.inverse() * r;
    }
    throw NewtonDiverged("solve_cell_physical: deformation inversion stalled "
                         "at (" + std::to_string(z.x) + ", " +
                         std::to_string(z.y) + ")");
  };
  ReferenceCell deformed = ReferenceCell::from_levelset(
      n, [&](Vec2 z) { return cell.levelset_fn(inverse(z)); });
  deformed.validate();  // DisconnectedPore when the deformed mask pinches off

  CellSolution sol;
  sol.mesh = FemMesh::from_cell(deformed);
  sol.coeffs = TransformedCoeffs::identity(sol.mesh);
  sol.t = t;
  sol.x = x;
  for (int i = 0; i < 2; ++i)
    sol.dir[i] = solve_cell_forcing(sol.mesh, sol.coeffs, unit_direction(i),
                                    opt);
  PermeabilityTensor out = permeability_from_gradients(sol);
  out.formula = "physical-gradient";
  return out;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

void PermeabilityTable::validate() const {
  if (theta.empty() || theta.size() != K.size())
    throw ConfigError("permeability table: sample shape mismatch");
  for (size_t k = 0; k + 1 < theta.size(); ++k)
    if (!(theta[k] < theta[k + 1]))
      throw ConfigError(
          "permeability table: porosity samples not strictly increasing");
  for (size_t k = 0; k < K.size(); ++k) {
    if (relative_asymmetry(K[k].K) > 1e-10)
      throw AsymmetryExceeded("permeability table: sample at porosity " +
                              std::to_string(theta[k]) + " asymmetric");
    if (!(min_eigenvalue_2x2(K[k].K) > 0.0))
      throw NonSPDCoefficient("permeability table: sample at porosity " +
                              std::to_string(theta[k]) +
                              " not positive definite");
  }
}

Mat2 PermeabilityTable::interpolate(double theta_q) const {
  if (theta.empty() || theta.size() != K.size())
    throw ConfigError("permeability table: sample shape mismatch");
  Mat2 out;
  std::vector<double> y(theta.size());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      for (size_t k = 0; k < K.size(); ++k) y[k] = K[k].K(i, j);
      out(i, j) = pchip_eval(theta, y, pchip_slopes(theta, y), theta_q);
    }
  return out;
}

double PermeabilityTable::min_eigenvalue(double theta_q) const {
  return min_eigenvalue_2x2(interpolate(theta_q));
}

void PermeabilityTable::write_csv(std::ostream& out) const {
  out << "theta,K11,K12,K21,K22,min_eigenvalue,grid_n\n";
  char line[256];
  for (size_t k = 0; k < theta.size(); ++k) {
    const Mat2& m = K[k].K;
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  theta[k], m(0, 0), m(0, 1), m(1, 0), m(1, 1),
                  K[k].min_eigenvalue, K[k].grid_n);
    out << line;
  }
}

PermeabilityTable PermeabilityTable::read_csv(std::istream& in) {
  PermeabilityTable table;
  std::string line;
  if (!std::getline(in, line) ||
      line != "theta,K11,K12,K21,K22,min_eigenvalue,grid_n")
    throw ConfigError("permeability table CSV: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double fields[6];
    int gn = 0;
    size_t pos = 0;
    for (int f = 0; f < 7; ++f) {
      const size_t next = line.find(',', pos);
      const std::string tok = line.substr(
          pos, next == std::string::npos ? std::string::npos : next - pos);
      try {
        if (f < 6)
          fields[f] = std::stod(tok);
        else
          gn = std::stoi(tok);
      } catch (const std::exception&) {
        throw ConfigError("permeability table CSV: bad field '" + tok + "'");
      }
      if (f < 6 && next == std::string::npos)
        throw ConfigError("permeability table CSV: short row '" + line + "'");
      pos = next == std::string::npos ? line.size() : next + 1;
    }
    PermeabilityTensor k;
    k.K(0, 0) = fields[1];
    k.K(0, 1) = fields[2];
    k.K(1, 0) = fields[3];
    k.K(1, 1) = fields[4];
    k.K_average = k.K;
    k.min_eigenvalue = fields[5];
    k.grid_n = gn;
    k.formula = "table";
    table.theta.push_back(fields[0]);
    table.K.push_back(std::move(k));
  }
  if (!table.K.empty()) table.grid_n = table.K.front().grid_n;
  table.validate();
  return table;
}

PermeabilityTable tabulate_permeability(const ReferenceCell& cell,
                                        const MicroDeformation& def,
                                        const std::vector<double>& thetas,
                                        int grid_n, SaddleOptions opt) {
  if (thetas.empty())
    throw ConfigError("tabulate_permeability: no porosity samples");
  std::vector<double> sorted = thetas;
  std::sort(sorted.begin(), sorted.end());
  for (size_t k = 0; k + 1 < sorted.size(); ++k)
    if (!(sorted[k] < sorted[k + 1]))
      throw ConfigError("tabulate_permeability: duplicate porosity sample " +
                        std::to_string(sorted[k]));

  const int n = grid_n > 0 ? grid_n : cell.n;
  ReferenceCell rc;
  if (n == cell.n) {
    rc = cell;
  } else {
    if (!cell.levelset_fn)
      throw ConfigError("tabulate_permeability: resolution override needs "
                        "the reference levelset function");
    rc = ReferenceCell::from_levelset(n, cell.levelset_fn);
  }
  rc.validate();
  const FemMesh mesh = FemMesh::from_cell(rc);

  PermeabilityTable table;
  table.grid_n = n;
  table.theta = sorted;
  table.K.reserve(sorted.size());
  for (const double th : sorted) {
    try {
      CellSolution sol;
      sol.mesh = mesh;
      sol.coeffs = TransformedCoeffs::from_sampler(
          mesh, [&def, th](Vec2 y) { return def.eval_theta(th, y); }, nullptr,
          def.exact_cofactor, /*nu=*/1.0, /*eps_scale=*/1.0, def.c_J);
      for (int i = 0; i < 2; ++i)
        sol.dir[i] = solve_cell_forcing(sol.mesh, sol.coeffs,
                                        unit_direction(i), opt);
      table.K.push_back(permeability_from_gradients(sol));
    } catch (const DegenerateJacobian& e) {
      throw DegenerateJacobian(tabulate_note(e.what(), "DegenerateJacobian", th));
    } catch (const NoConvergence& e) {
      throw NoConvergence(tabulate_note(e.what(), "NoConvergence", th));
    } catch (const SingularSystem& e) {
      throw SingularSystem(tabulate_note(e.what(), "SingularSystem", th));
    } catch (const AsymmetryExceeded& e) {
      throw AsymmetryExceeded(tabulate_note(e.what(), "AsymmetryExceeded", th));
    }
  }
  return table;
}

std::vector<double> equispaced_thetas(double lo, double hi, int count) {
  if (count < 1)
    throw ConfigError("equispaced_thetas: count must be positive");
  if (!(lo <= hi))
    throw ConfigError("equispaced_thetas: empty porosity interval");
  if (count == 1) return {0.5 * (lo + hi)};
  std::vector<double> out(count);
  for (int k = 0; k < count; ++k)
    out[k] = lo + (hi - lo) * k / (count - 1);
  return out;
}

}  // namespace evodarcy
