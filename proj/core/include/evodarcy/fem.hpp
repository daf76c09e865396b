#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "evodarcy/common.hpp"
#include "evodarcy/geometry.hpp"
#include "evodarcy/linalg.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

/// Structured quadrilateral mesh over a rectangle with an active-cell mask.
/// Solid regions are represented by deactivated cells (staircase boundary).
/// Velocity lives on the biquadratic node grid (2nx+1 x 2ny+1), pressure on
/// the bilinear grid (nx+1 x ny+1).
struct FemMesh {
  int nx = 0, ny = 0;        // cells per axis
  double x0 = 0.0, y0 = 0.0; // lower-left corner
  double hx = 0.0, hy = 0.0; // cell edge lengths
  std::vector<uint8_t> active;

  static FemMesh rectangle(int nx, int ny, double x0, double y0, double w,
                           double h);
  /// Unit-cell mesh whose active mask is the pore mask of `cell`.
  static FemMesh from_cell(const ReferenceCell& cell);
  /// Rectangle mesh with an explicit mask (row-major, iy*nx+ix).
  static FemMesh from_mask(int nx, int ny, double x0, double y0, double w,
                           double h, std::vector<uint8_t> mask);

  bool cell_active(int cx, int cy) const {
    return active[static_cast<size_t>(cy) * nx + cx] != 0;
  }
  int n_cells() const { return nx * ny; }
  int n_active_cells() const;

  // Velocity (Q2) node grid.
  int vnx() const { return 2 * nx + 1; }
  int vny() const { return 2 * ny + 1; }
  int64_t n_vnodes() const { return static_cast<int64_t>(vnx()) * vny(); }
  int64_t vnode(int ix, int iy) const {
    return static_cast<int64_t>(iy) * vnx() + ix;
  }
  Vec2 vnode_pos(int ix, int iy) const {
    return {x0 + 0.5 * hx * ix, y0 + 0.5 * hy * iy};
  }

  // Pressure (Q1) node grid.
  int pnx() const { return nx + 1; }
  int pny() const { return ny + 1; }
  int64_t n_pnodes() const { return static_cast<int64_t>(pnx()) * pny(); }
  int64_t pnode(int ix, int iy) const {
    return static_cast<int64_t>(iy) * pnx() + ix;
  }
  Vec2 pnode_pos(int ix, int iy) const {
    return {x0 + hx * ix, y0 + hy * iy};
  }

  Vec2 cell_corner(int cx, int cy) const {
    return {x0 + hx * cx, y0 + hy * cy};
  }
  void validate() const;  // throws ConfigError on malformed meshes
};

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Transformed Stokes coefficients sampled at the 3x3 Gauss points of every
/// active cell: J (volume factor), M = inverse-transpose Jacobian (gradient
/// transform), A = J * inverse Jacobian (flux/cofactor matrix) and the column
/// divergence of A (needed by the pressure-coupling product rule).
struct TransformedCoeffs {
  double nu = 1.0;         // viscosity
  double eps_scale = 1.0;  // multiplies the viscous block (eps^2 for DNS)
  double c_J = 0.1;        // admissibility floor for J

  std::vector<int32_t> cell_ordinal;  // per mesh cell; -1 for inactive
  int32_t n_active = 0;
  // Indexed by ordinal*9 + q, q = 3*qy + qx over the tensor Gauss points.
  std::vector<double> J;
  std::vector<Mat2> M;
  std::vector<Mat2> A;
  std::vector<Vec2> divA;

  /// Identity coefficients (untransformed assembly path).
  static TransformedCoeffs identity(const FemMesh& mesh, double nu = 1.0,
                                    double eps_scale = 1.0);
  /// Sample a deformation at every quadrature point. `sample` maps a physical
  /// point to a DeformationSample; `div_a` (optional) provides the analytic
  /// column divergence of A. When absent and `exact_cofactor` is false, divA
  /// is computed by central differences of `sample` with step min(h)/100;
  /// with `exact_cofactor` true it is exactly zero.
  static TransformedCoeffs from_sampler(
      const FemMesh& mesh, const std::function<DeformationSample(Vec2)>& sample,
      const std::function<Vec2(Vec2)>& div_a, bool exact_cofactor, double nu,
      double eps_scale, double c_J = 0.1);

  int64_t qindex(int32_t ordinal, int q) const {
    return static_cast<int64_t>(ordinal) * 9 + q;
  }
};

// ---------------------------------------------------------------------------
// Boundary conditions and dof classification
// ---------------------------------------------------------------------------

enum class SideBC { dirichlet, periodic, stress };

struct StokesBC {
  SideBC left = SideBC::dirichlet;
  SideBC right = SideBC::dirichlet;
  SideBC bottom = SideBC::dirichlet;
  SideBC top = SideBC::dirichlet;
  /// Velocity data on outer Dirichlet sides (default zero).
  std::function<Vec2(Vec2)> dirichlet_value;

  static StokesBC all_dirichlet() { return {}; }
  static StokesBC fully_periodic() {
    StokesBC bc;
    bc.left = bc.right = bc.bottom = bc.top = SideBC::periodic;
    return bc;
  }
};

/// Constraint classification of the node grids: raw indices enumerate active
/// nodes (assembly space, no constraints), free indices enumerate master
/// unknowns after Dirichlet elimination and periodic merging.
struct DofMaps {
  // Velocity nodes. vraw >= 0: active-node ordinal; -2: inactive.
  // vfree >= 0: master unknown (slaves share their master's id); -1 Dirichlet;
  // -2 inactive. vdir holds the Dirichlet value (2 per node).
  std::vector<int32_t> vraw, vfree;
  std::vector<double> vdir;
  int64_t n_vraw = 0, n_vfree = 0;

  // Pressure nodes (no Dirichlet): praw/pfree as above.
  std::vector<int32_t> praw, pfree;
  int64_t n_praw = 0, n_pfree = 0;

  bool pressure_nullspace = false;  // true iff no stress side present
};

/// Classify nodes per the mask and boundary tags. Classification acts on
/// periodic equivalence classes: a class is active when any alias touches an
/// active cell and pinned (homogeneous Dirichlet) when any alias touches a
/// deactivated cell, so staircase boundaries work across periodic seams.
/// Outer Dirichlet wins over periodic/stress at shared corners. Throws
/// InconsistentBC on one-sided periodic tags.
DofMaps classify_dofs(const FemMesh& mesh, const StokesBC& bc);

// ---------------------------------------------------------------------------
// Assembly (raw space: all active nodes, no constraints applied)
// ---------------------------------------------------------------------------

/// Viscous block over raw velocity dofs (2 per active node, interleaved).
/// symmetric=false: gradient form  nu*eps_scale * J (M grad u):(M grad v)
/// symmetric=true:  symmetric form nu*eps_scale * J 2 sym(M grad u):(M grad v)
SparseMatrix assemble_viscous_block(const FemMesh& mesh,
                                    const TransformedCoeffs& coeffs,
                                    bool symmetric);

/// Pressure coupling B over (raw pressure) x (raw velocity):
/// B[q][v] = (psi_q, div(A phi_v)) = (psi_q, A:grad phi_v + (div A).phi_v).
SparseMatrix assemble_pressure_coupling(const FemMesh& mesh,
                                        const TransformedCoeffs& coeffs);

/// Right-hand-side data. All fields optional (empty = zero):
///  body_force f: contributes  (J f, phi)
///  grad_pb:      contributes -(A^T grad_pb, phi)
///  lift l:       contributes -a(l, phi) to f and -(psi, div(A l)) to g,
///                with l taken as its nodal Q2 interpolant.
struct StokesRhs {
  std::function<Vec2(Vec2)> body_force;
  std::function<Vec2(Vec2)> grad_pb;
  std::function<Vec2(Vec2)> lift;
};

struct RawRhs {
  std::vector<double> f;  // size 2*n_vraw
  std::vector<double> g;  // size n_praw
};

RawRhs assemble_rhs(const FemMesh& mesh, const TransformedCoeffs& coeffs,
                    bool symmetric, const StokesRhs& rhs);

// ---------------------------------------------------------------------------
// Constraints and solve
// ---------------------------------------------------------------------------

struct ConstrainedStokes {
  SaddleSystem sys;
  DofMaps maps;
};

/// Eliminate Dirichlet rows/columns symmetrically (folding values into the
/// right-hand side), merge periodic slave dofs into their masters, and attach
/// J-weighted lumped pressure weights scaled by 1/(nu*eps_scale). The
/// pressure-nullspace flag is set exactly when no stress side is present.
ConstrainedStokes apply_constraints(const FemMesh& mesh, const DofMaps& maps,
                                    const TransformedCoeffs& coeffs,
                                    const SparseMatrix& A_raw,
                                    const SparseMatrix& B_raw,
                                    const RawRhs& rhs);

/// Nodal solution fields on the full node grids (inactive nodes zero,
/// Dirichlet nodes carry their data, periodic slaves copy their master).
struct StokesSolution {
  std::vector<double> velocity;  // 2 per velocity node
  std::vector<double> pressure;  // 1 per pressure node
  SolveReport report;
  double div_residual = 0.0;  // ||B u - g|| over free pressure dofs
  int64_t n_velocity_dofs = 0, n_pressure_dofs = 0;
};

StokesSolution solve_stokes(const FemMesh& mesh, const TransformedCoeffs& coeffs,
                            const StokesBC& bc, const StokesRhs& rhs,
                            bool symmetric, SaddleOptions opt = {});

// ---------------------------------------------------------------------------
// Field evaluation and integrals
// ---------------------------------------------------------------------------

/// Evaluate a Q2 nodal vector field at a point (clamped to the grid).
Vec2 eval_q2(const FemMesh& mesh, const std::vector<double>& field, Vec2 p);
/// Evaluate the gradient (G_ij = d_i field_j) of a Q2 nodal vector field.
Mat2 eval_q2_gradient(const FemMesh& mesh, const std::vector<double>& field,
                      Vec2 p);
/// Evaluate a Q1 nodal scalar field at a point.
double eval_q1(const FemMesh& mesh, const std::vector<double>& field, Vec2 p);

/// Integrate a function over the active cells with 3x3 Gauss quadrature.
double integrate_cells(const FemMesh& mesh,
                       const std::function<double(Vec2)>& fn);

/// L2 norm over active cells of a Q2 nodal field minus a reference function
/// (pass an empty reference for the plain L2 norm).
double l2_error_q2(const FemMesh& mesh, const std::vector<double>& field,
                   const std::function<Vec2(Vec2)>& reference);

/// Transformed H1 inner product of two Q2 nodal vector fields:
/// integral over active cells of J (M grad a):(M grad b), using the
/// coefficient snapshot's quadrature values (nu and eps_scale not applied).
double transformed_gradient_inner(const FemMesh& mesh,
                                  const TransformedCoeffs& coeffs,
                                  const std::vector<double>& a,
                                  const std::vector<double>& b);

/// Integral over active cells of J * field for a Q2 nodal vector field,
/// using the coefficient snapshot's quadrature values of J.
Vec2 transformed_velocity_integral(const FemMesh& mesh,
                                   const TransformedCoeffs& coeffs,
                                   const std::vector<double>& field);

}  // namespace evodarcy
