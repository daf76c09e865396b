#pragma once
// Macroscopic Darcy pressure problem on a cuboid-union domain: Q1 stiffness
// with a tensor permeability coefficient, porosity-change source, Darcy
// velocity reconstruction, and the mass-balance audit.

#include <cstdint>
#include <functional>
#include <vector>

#include "evodarcy/cell.hpp"
#include "evodarcy/common.hpp"
#include "evodarcy/geometry.hpp"
#include "evodarcy/linalg.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Cartesian Q1 macro mesh. Square cells of size 1/n anchored at the bounding
// box; every grid cell must be exactly inside or exactly outside the domain.
// ---------------------------------------------------------------------------
struct MacroMesh {
  double x0 = 0.0, y0 = 0.0;  // bounding-box origin
  double hx = 0.0, hy = 0.0;  // cell size (hx == hy == 1/n)
  int nx = 0, ny = 0;         // cells across the bounding box

  std::vector<uint8_t> cell_mask;      // nx*ny, 1 = inside the domain
  std::vector<uint8_t> node_active;    // (nx+1)*(ny+1), touches an active cell
  std::vector<uint8_t> node_interior;  // active and not on the domain boundary

  /// n = cells per unit length; throws ConfigError if the grid does not
  /// resolve the cuboid union exactly.
  static MacroMesh from_domain(const MacroDomain& domain, int n);

  int64_t n_nodes() const {
    return static_cast<int64_t>(nx + 1) * (ny + 1);
  }
  int64_t n_cells() const { return static_cast<int64_t>(nx) * ny; }
  int64_t node(int ix, int iy) const {
    return static_cast<int64_t>(iy) * (nx + 1) + ix;
  }
  int64_t cell(int cx, int cy) const {
    return static_cast<int64_t>(cy) * nx + cx;
  }
  Vec2 node_pos(int ix, int iy) const {
    return {x0 + ix * hx, y0 + iy * hy};
  }
  Vec2 cell_center(int cx, int cy) const {
    return {x0 + (cx + 0.5) * hx, y0 + (cy + 0.5) * hy};
  }
  /// Active query tolerating out-of-range indices (returns false).
  bool active(int cx, int cy) const {
    return cx >= 0 && cx < nx && cy >= 0 && cy < ny &&
           cell_mask[static_cast<size_t>(cell(cx, cy))] != 0;
  }
  double active_area() const;
  int64_t n_active_cells() const;
};

// ---------------------------------------------------------------------------
// Problem data: body force, boundary pressure, viscosity, porosity rate.
// All fields are functions of (t, x); null members mean identically zero.
// ---------------------------------------------------------------------------
struct MacroData {
  std::function<Vec2(double, Vec2)> f;           // body force density
  std::function<double(double, Vec2)> p_b;       // boundary pressure
  std::function<Vec2(double, Vec2)> grad_p_b;    // optional analytic gradient
  std::function<double(double, Vec2)> dt_theta;  // porosity rate source
  double nu = 1.0;                               // viscosity
  double fd_step = 1e-6;  // central-difference step for grad_p_b fallback

  void validate() const;  // ConfigError on nu <= 0 or fd_step <= 0

  Vec2 force(double t, Vec2 x) const;
  double boundary_pressure(double t, Vec2 x) const;
  Vec2 boundary_pressure_gradient(double t, Vec2 x) const;
  double porosity_rate(double t, Vec2 x) const;
};

/// Spatial permeability coefficient at a fixed time.
using TensorField = std::function<Mat2(Vec2)>;

TensorField constant_tensor(const Mat2& K);
/// Table-backed coefficient: K(x) = table.interpolate(porosity(t, x)).
TensorField permeability_field(const PermeabilityTable& table,
                               const PorosityField& porosity, double t);
/// Validation-mode coefficient: runs the full transformed cell solve at every
/// query point. Expensive by design; pipeline runs use permeability_field.
TensorField direct_cell_field(const MicroDeformation& def, double t,
                              SaddleOptions opt = {});

// ---------------------------------------------------------------------------
// Assembly and solve. Unknowns are the interior active nodes; homogeneous
// Dirichlet values are eliminated.
// ---------------------------------------------------------------------------
struct DarcySystem {
  SparseMatrix A;  // reduced SPD stiffness, (1/nu) * (K grad q, grad phi)
  std::vector<int64_t> unknown_of_node;  // n_nodes, -1 for pinned nodes
  std::vector<int64_t> node_of_unknown;  // n_unknowns
  int nx = 0, ny = 0;                    // mesh shape stamp

  int64_t n_unknowns() const {
    return static_cast<int64_t>(node_of_unknown.size());
  }
};

/// Stiffness for the reduced system; samples K at every quadrature point and
/// throws NonSPDCoefficient if any sample fails the (symmetrized) Cholesky.
DarcySystem assemble_darcy(const MacroMesh& mesh, const TensorField& K,
                           double nu);

/// Load vector on the unknowns:
///   (1/nu) (K (f - grad p_b), grad phi) - (dt_theta, phi).
std::vector<double> assemble_darcy_rhs(const MacroMesh& mesh,
                                       const MacroData& data,
                                       const TensorField& K, double t);

/// CG solve; returns the full nodal field (exact zeros on pinned nodes).
std::vector<double> solve_pressure(const MacroMesh& mesh,
                                   const DarcySystem& sys,
                                   const std::vector<double>& rhs,
                                   SolveReport* report = nullptr,
                                   const KrylovOptions& opt = {});

/// Element-centered Darcy velocity v = (1/nu) K (f - grad q - grad p_b).
/// Inactive cells get zero.
std::vector<Vec2> reconstruct_velocity(const MacroMesh& mesh,
                                       const std::vector<double>& q,
                                       const MacroData& data,
                                       const TensorField& K, double t);

struct MacroField {
  std::vector<double> q;  // nodal, zero on the boundary
  std::vector<double> p;  // nodal, q + p_b on active nodes
  std::vector<Vec2> v;    // element-centered
  SolveReport report;
};

/// One stationary snapshot: assemble, solve, reconstruct.
MacroField solve_darcy(const MacroMesh& mesh, const MacroData& data,
                       const TensorField& K, double t,
                       const KrylovOptions& opt = {});

// ---------------------------------------------------------------------------
// Mass-balance audit: boundary outflux + volume source should vanish.
// ---------------------------------------------------------------------------
struct MassBalance {
  double boundary_outflux = 0.0;  // integral of v . n over the boundary
  double volume_source = 0.0;     // integral of dt_theta over the domain
  double defect = 0.0;            // |outflux + source|
};

MassBalance mass_balance_report(const MacroMesh& mesh,
                                const std::vector<Vec2>& v,
                                const MacroData& data, double t);

}  // namespace evodarcy
