#pragma once
// Direct numerical simulation of the eps-scaled transformed Stokes problem on
// the fixed perforated reference domain: lattice-tiled pore mesh, solve with
// the boundary-velocity lift, zero/mean extensions to the full domain, and
// physical-domain sampling through the inverse deformation.

#include <cstdint>
#include <vector>

#include "evodarcy/common.hpp"
#include "evodarcy/darcy.hpp"
#include "evodarcy/fem.hpp"
#include "evodarcy/geometry.hpp"
#include "evodarcy/linalg.hpp"
#include "evodarcy/rational.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Perforated mesh: one copy of the reference pore per lattice cell.
// ---------------------------------------------------------------------------
struct PerforatedMesh {
  FemMesh fem;            // global Taylor-Hood grid over the bounding box
  Rational eps{1, 1};     // lattice spacing
  int m = 0;              // micro cells per lattice cell and axis
  ReferenceCell micro;    // resolution-m pore mask
  std::vector<LatticeCell> lattice;
  int64_t ix0 = 0, iy0 = 0;  // lattice origin of the bounding box (eps units)
  int ncols = 0, nrows = 0;  // bounding box extent in eps units
  std::vector<int32_t> lattice_index;  // ncols*nrows -> lattice ordinal or -1
  DofMaps maps;              // stress outer boundary, Dirichlet on Gamma_eps

  int64_t gamma_velocity_nodes = 0;  // pinned Q2 nodes on the pore boundary
  int64_t euler_characteristic = 0;  // V - E + F of the active-cell complex

  /// Lattice ordinal owning bounding-box column/row (col, row), or -1 when
  /// that eps-cell lies outside the domain.
  int32_t lattice_at(int col, int row) const {
    if (col < 0 || row < 0 || col >= ncols || row >= nrows) return -1;
    return lattice_index[static_cast<size_t>(row) * ncols + col];
  }
};

/// Tile the reference pore over the eps-lattice of the domain. The reference
/// mask is rebuilt at resolution m through the cell's level set when needed.
/// Throws IncompatibleEpsilon (eps not in a declared ladder or domain not an
/// exact union of eps-cells), ConfigError, DisconnectedPore (the tiled pore
/// splits into components).
PerforatedMesh build_perforated_mesh(const MacroDomain& domain,
                                     const ReferenceCell& cell, Rational eps,
                                     int m);

// ---------------------------------------------------------------------------
// Solve.
// ---------------------------------------------------------------------------
struct PerforatedSolution {
  std::vector<double> w_hat;  // homogeneous part, 2 per Q2 node
  std::vector<double> lift;   // nodal boundary-velocity lift v_Gamma
  std::vector<double> v_hat;  // substituted velocity w_hat + lift
  std::vector<double> q_hat;  // pressure unknown, 1 per Q1 node
  std::vector<double> p_hat;  // substituted pressure q_hat + p_b(psi(x))
  double t = 0.0;
  double eps = 1.0;
  SolveReport report;
  double div_residual = 0.0;
};

/// Solve the transformed eps-problem at time t with the symmetric viscous
/// form scaled by nu * eps^2. Data are pulled back through psi_eps; the
/// boundary velocity enters as the nodal lift dt_psi. Throws ConfigError on
/// mismatched deformation/mesh, DegenerateJacobian, NoConvergence.
PerforatedSolution solve_eps_problem(const PerforatedMesh& mesh,
                                     const EpsDeformation& def,
                                     const MacroData& data, double t,
                                     SaddleOptions opt = {});

// ---------------------------------------------------------------------------
// Extensions to the full domain.
// ---------------------------------------------------------------------------
struct ExtendedFields {
  std::vector<double> velocity;  // zero on solid nodes, 2 per Q2 node
  std::vector<double> pressure;  // pore values + per-cell J-weighted means
  std::vector<double> cell_mean; // the mean used for each lattice cell
};

/// Velocity extension by zero and pressure extension by the lattice-cell
/// pore mean, weighted with J_eps(t) so the mean is the physical-domain one.
/// Throws EmptyPoreCell when a lattice cell's physical pore fraction falls
/// below min_pore_fraction.
ExtendedFields extend_solution(const PerforatedSolution& sol,
                               const PerforatedMesh& mesh,
                               const EpsDeformation& def, double t,
                               double min_pore_fraction = 1e-9);

// ---------------------------------------------------------------------------
// Physical-domain samples through the inverse map.
// ---------------------------------------------------------------------------
struct PhysicalSample {
  Vec2 x{};       // reference preimage of the query
  Vec2 v{};       // physical velocity at the query point
  double q = 0.0; // pressure unknown at the query point
};

/// Evaluate the substituted fields at physical points X by Newton-inverting
/// psi_eps(t, .) = X (throws NewtonDiverged).
std::vector<PhysicalSample> back_transform(const PerforatedSolution& sol,
                                           const PerforatedMesh& mesh,
                                           const EpsDeformation& def,
                                           const std::vector<Vec2>& queries);

// Discrete norms used by the a-priori bound and the convergence ladders.
double q2_l2_norm(const FemMesh& mesh, const std::vector<double>& field);
double q2_h1_seminorm(const FemMesh& mesh, const std::vector<double>& field);
double q1_lp_norm(const FemMesh& mesh, const std::vector<double>& field,
                  double p);

}  // namespace evodarcy
