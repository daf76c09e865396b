#pragma once
// Transformed Stokes cell problems on the reference pore, permeability
// tensors with an independent cross-check formula, the deformed-geometry
// control solve, and porosity-indexed permeability tables with monotone
// cubic interpolation.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "evodarcy/common.hpp"
#include "evodarcy/fem.hpp"
#include "evodarcy/geometry.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Cell solutions
// ---------------------------------------------------------------------------

/// One solved flow on the masked reference cell: Q2 velocity on the full
/// node grid (staircase nodes zero, periodic slaves copy their master) and
/// Q1 pressure with weighted zero mean.
struct CellFlowField {
  std::vector<double> velocity;  // 2 per Q2 node
  std::vector<double> pressure;  // 1 per Q1 node
  SolveReport report;
  double div_residual = 0.0;  // ||B u - g|| over free pressure dofs
};

/// Both direction solves for one coefficient snapshot, together with the
/// mesh and quadrature coefficients needed to evaluate permeability
/// integrals without re-assembly.
struct CellSolution {
  FemMesh mesh;
  TransformedCoeffs coeffs;  // unit-viscosity snapshot at (t, x)
  double t = 0.0;
  Vec2 x{0.0, 0.0};
  std::array<CellFlowField, 2> dir;  // forcing e_1, e_2
};

// ---------------------------------------------------------------------------
// Permeability tensors
// ---------------------------------------------------------------------------

/// 2x2 permeability with provenance and a second, independently computed
/// value for cross-checking.
struct PermeabilityTensor {
  Mat2 K;          // gradient formula; symmetric by construction
  Mat2 K_average;  // cross-check: row i = component i of integral of J u_j
  double min_eigenvalue = 0.0;  // smallest eigenvalue of K
  double t = 0.0;
  Vec2 x{0.0, 0.0};
  int grid_n = 0;
  std::string formula;  // "transformed-gradient", "physical-gradient", ...

  /// Symmetry to 1e-10 relative, positive definiteness, and the open-cell
  /// entry bound. Throws AsymmetryExceeded / NonSPDCoefficient / ConfigError.
  void validate(double c_J = 0.1) const;
};

/// Upper bound on permeability entries over the admissible built-in
/// geometries: the K11 of the widest channel the family can open before the
/// Jacobian floor c_J, i.e. theta_max^3 / 12 with
/// theta_max = theta_ref + 2 (1 - c_J) / max|W'|.
double permeability_open_bound(double c_J = 0.1);

// ---------------------------------------------------------------------------
// Cell problem solves
// ---------------------------------------------------------------------------

/// Transformed coefficients of `def` at snapshot (t, x) sampled on the pore
/// mesh (unit viscosity). Throws DegenerateJacobian below the c_J floor.
TransformedCoeffs cell_coefficients(const FemMesh& mesh,
                                    const MicroDeformation& def, double t,
                                    Vec2 x);

/// Solve the transformed cell problem with a constant forcing vector f:
/// gradient viscous form, unit viscosity, fully periodic outer boundary,
/// homogeneous Dirichlet on the staircase pore boundary.
CellFlowField solve_cell_forcing(const FemMesh& mesh,
                                 const TransformedCoeffs& coeffs, Vec2 f,
                                 SaddleOptions opt = {});

/// Solve direction i (unit forcing e_i, i in {0, 1}) at snapshot (t, x).
CellFlowField solve_cell_problem(const ReferenceCell& cell,
                                 const MicroDeformation& def, double t, Vec2 x,
                                 int i, SaddleOptions opt = {});

/// Solve both directions at snapshot (t, x).
CellSolution solve_cell_problems(const ReferenceCell& cell,
                                 const MicroDeformation& def, double t, Vec2 x,
                                 SaddleOptions opt = {});

// ---------------------------------------------------------------------------
// Permeability evaluation
// ---------------------------------------------------------------------------

/// K_ij = integral of J (M grad u_i):(M grad u_j) over the pore, with the
/// average-velocity cross-check stored alongside ((K_average)_ij = component
/// i of the integral of J u_j). Throws AsymmetryExceeded when the
/// cross-check matrix is asymmetric beyond 1e-8 relative (the solver
/// tolerance was too loose).
PermeabilityTensor permeability_from_gradients(const CellSolution& sol);

/// Independent control solve: staircase the *deformed* pore at resolution
/// grid_n (0 = the reference cell's own resolution), solve the untransformed
/// problem there, and integrate the gradient formula with identity
/// coefficients. Throws DisconnectedPore if the deformed mask loses
/// connectivity and NewtonDiverged if the deformation cannot be inverted.
PermeabilityTensor solve_cell_physical(const ReferenceCell& cell,
                                       const MicroDeformation& def, double t,
                                       Vec2 x, int grid_n = 0,
                                       SaddleOptions opt = {});

// ---------------------------------------------------------------------------
// Porosity-indexed tables
// ---------------------------------------------------------------------------

/// Permeability sampled over porosity with monotone piecewise-cubic
/// interpolation between samples (entrywise Fritsch-Carlson slopes, so
/// interpolated values never overshoot the sampled range on an interval).
/// Queries outside the sampled range clamp to the end values.
struct PermeabilityTable {
  std::vector<double> theta;  // strictly increasing
  std::vector<PermeabilityTensor> K;
  int grid_n = 0;

  /// Shape, strict ordering, and SPD of every sample.
  /// Throws ConfigError / NonSPDCoefficient.
  void validate() const;

  /// Entrywise monotone cubic interpolant; exact at tabulated porosities.
  Mat2 interpolate(double theta_q) const;
  /// Smallest eigenvalue of the interpolated tensor.
  double min_eigenvalue(double theta_q) const;

  /// CSV with columns theta,K11,K12,K21,K22,min_eigenvalue,grid_n.
  void write_csv(std::ostream& out) const;
  static PermeabilityTable read_csv(std::istream& in);
};

/// Solve both cell problems at every porosity sample (strictly increasing
/// after sorting; duplicates rejected) on a grid of resolution grid_n
/// (0 = the reference cell's own resolution). Solver failures are rethrown
/// with the failing porosity appended to the message.
PermeabilityTable tabulate_permeability(const ReferenceCell& cell,
                                        const MicroDeformation& def,
                                        const std::vector<double>& thetas,
                                        int grid_n = 0, SaddleOptions opt = {});

/// count samples equispaced over [lo, hi] (table default: 9).
std::vector<double> equispaced_thetas(double lo, double hi, int count = 9);

}  // namespace evodarcy
