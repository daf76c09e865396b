#pragma once
// Two-scale convergence verification: the periodic unfolding operator,
// reconstruction of the homogenised limit fields (w0, q1) from cell
// solutions, weak/strong error metrics for a DNS ladder against that limit,
// numerical Korn and Poincare constants on perforated meshes, and log-log
// convergence-rate fits.

#include <cstdint>
#include <functional>
#include <vector>

#include "evodarcy/cell.hpp"
#include "evodarcy/common.hpp"
#include "evodarcy/darcy.hpp"
#include "evodarcy/dns.hpp"
#include "evodarcy/fem.hpp"
#include "evodarcy/geometry.hpp"
#include "evodarcy/linalg.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Unfolding
// ---------------------------------------------------------------------------

/// Product-grid samples of the unfolding
///   T_eps(u)(x, y) = u(eps * floor(x/eps) + eps * y),
/// stored row-major over (macro sample, micro sample).
struct UnfoldedField {
  std::vector<Vec2> xs;        // macro sample points
  std::vector<Vec2> ys;        // micro sample points in [0,1]^2
  std::vector<double> values;  // xs.size() * ys.size()

  double value(size_t i, size_t j) const { return values[i * ys.size() + j]; }
};

/// n x n midpoint grid of the unit square (x-fastest), the quadrature grid
/// used for product-space norms.
std::vector<Vec2> midpoint_grid(int n);

/// Unfold a scalar field. Macro samples should be interior points (a sample
/// on the far lattice seam would shift the evaluation outside the domain).
UnfoldedField unfold(const std::function<double(Vec2)>& u, Rational eps,
                     const std::vector<Vec2>& xs, const std::vector<Vec2>& ys);

/// Midpoint-rule L2 norm over the product grid: every macro sample carries
/// the weight `macro_weight` (its cell area) and micro samples carry 1/|ys|.
double product_l2(const UnfoldedField& f, double macro_weight);

// ---------------------------------------------------------------------------
// Limit reconstruction
// ---------------------------------------------------------------------------

/// Separable representation of the homogenised limit at one time. Per macro
/// sample x_k (active macro cell centers),
///   w0(x_k, y) = drive.x * u1(y) + drive.y * u2(y),
///   q1(x_k, y) = -(drive.x * pi1(y) + drive.y * pi2(y)),
/// where (u_i, pi_i) are the direction-i cell solutions and
/// drive = (f - grad(q + p_b)) / nu is evaluated with the same arithmetic as
/// the Darcy velocity reconstruction.
struct TwoScaleField {
  struct MicroBasis {
    FemMesh mesh;              // cell mesh the basis fields live on
    std::vector<double> u1, u2;  // Q2 nodal velocities, zero on the solid
    std::vector<double> p1, p2;  // Q1 nodal pressures, weighted zero mean
    Vec2 avg1, avg2;             // integral of J u_i over the cell (K columns)
  };

  std::vector<Vec2> x;            // macro samples
  std::vector<Vec2> drive;        // (f - grad(q + p_b)) / nu at each sample
  std::vector<int32_t> basis_of;  // per-sample index into bases
  std::vector<MicroBasis> bases;
  double t = 0.0;

  Vec2 w0(size_t sample, Vec2 y) const;
  double q1(size_t sample, Vec2 y) const;
  /// Integral of J w0(sample, .) over the cell: the Darcy velocity there.
  Vec2 mean_velocity(size_t sample) const;
};

/// Build the limit field from cell solutions and one macro snapshot.
/// cellsols holds either a single shared solution or one per active macro
/// cell in row-major active order. The cell average of w0 must reproduce
/// macro.v at every sample within vel_tol; SnapshotMismatch otherwise
/// (the solutions came from a different snapshot or permeability).
TwoScaleField reconstruct_limit(const MacroMesh& mesh,
                                const std::vector<CellSolution>& cellsols,
                                const MacroField& macro, const MacroData& data,
                                double t, double vel_tol = 1e-6);

// ---------------------------------------------------------------------------
// Two-scale error metrics
// ---------------------------------------------------------------------------

/// One DNS ladder entry, extended via extend_solution. All fields are
/// reference-domain quantities.
struct LadderEntry {
  const PerforatedMesh* mesh = nullptr;
  const PerforatedSolution* sol = nullptr;
  const ExtendedFields* ext = nullptr;
};

struct TwoScaleErrors {
  double eps = 0.0;
  double pressure_l15 = 0.0;   // ||Q_eps - q||_{L^1.5(Omega)}
  double pressure_l2 = 0.0;    // ||Q_eps - q||_{L^2(Omega)}
  double weak_residual = 0.0;  // max over the 12-function dictionary
  double unfolded_l2 = 0.0;    // ||T_eps(v~) - w0||_{L2(Omega x Y)}
};

/// Error metrics per ladder entry against the reconstructed limit and the
/// macro pressure q (nodal on macro_mesh):
///  - strong pressure errors of the extended DNS pressure over the domain,
///  - weak velocity residuals against a fixed dictionary of 12 separable
///    test functions phi(x, y) = X(x) Y(y) with
///    X in {1, x1, sin(pi x1) sin(pi x2)} and
///    Y in {1, cos(2 pi y1), sin(2 pi y2), cos(2 pi y1) cos(2 pi y2)},
///    r = max |int v~(x) phi(x, x/eps) dx - int int w0 phi dy dx|,
///  - the unfolded velocity distance (reported; the limit holds weakly, so
///    no decay is asserted), sampled on micro_samples^2 midpoints.
std::vector<TwoScaleErrors> two_scale_errors(
    const std::vector<LadderEntry>& ladder, const TwoScaleField& limit,
    const MacroMesh& macro_mesh, const std::vector<double>& macro_q,
    int micro_samples = 32);

// ---------------------------------------------------------------------------
// Korn and Poincare constants
// ---------------------------------------------------------------------------

/// Korn constant: smallest generalized eigenvalue of the Gram matrix of
/// sym(M grad v) against the Gram matrix of grad v over the velocity space
/// with Dirichlet dofs removed (plain L2 inner products; the coefficient
/// snapshot's volume weight J is not applied). Throws EmptyDirichletSet when
/// the maps pin no velocity node.
double korn_constant(const FemMesh& mesh, const DofMaps& maps,
                     const TransformedCoeffs& coeffs, double tol = 1e-8,
                     int maxit = 500);
/// Same on a perforated mesh: the constrained space is H^1_{Gamma_eps}.
double korn_constant(const PerforatedMesh& mesh,
                     const TransformedCoeffs& coeffs, double tol = 1e-8,
                     int maxit = 500);

/// Poincare constant over the constrained space, C = sup ||v|| / ||grad v||
/// (square root of the largest mass-vs-stiffness eigenvalue).
double poincare_constant(const FemMesh& mesh, const DofMaps& maps,
                         double tol = 1e-8, int maxit = 500);
/// C_eps / eps on a perforated mesh (the ratio the covering argument keeps
/// bounded as eps shrinks).
double poincare_ratio(const PerforatedMesh& mesh, double tol = 1e-8,
                      int maxit = 500);

/// Ladder summary of both constants. meshes and coeffs pair up one-to-one.
struct KornReport {
  std::vector<double> eps;
  std::vector<double> alpha;         // Korn constants
  std::vector<double> poincare;      // C_eps / eps
  std::vector<int64_t> n_velocity;   // free velocity dofs per entry

  void validate() const;  // ConfigError on shape mismatch or alpha <= 0
};

KornReport korn_report(const std::vector<const PerforatedMesh*>& meshes,
                       const std::vector<TransformedCoeffs>& coeffs,
                       double tol = 1e-8, int maxit = 500);

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

/// Least-squares slope of log(error) against log(eps). Requires at least
/// three points with distinct positive eps (ConfigError otherwise); throws
/// DegenerateFit when any error is zero or negative.
double fit_rate(const std::vector<double>& eps,
                const std::vector<double>& errors);

}  // namespace evodarcy
