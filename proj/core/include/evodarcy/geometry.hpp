#pragma once
// Reference cell, macroscopic cuboid-union domain, epsilon lattice, and the
// micro / epsilon deformation families with their Jacobian data.

#include <functional>
#include <string>
#include <vector>

#include "evodarcy/common.hpp"
#include "evodarcy/rational.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// Reference cell Y = [0,1]^2 with a staircase pore mask.
// ---------------------------------------------------------------------------
struct ReferenceCell {
  int dim = 2;
  int n = 0;                      // cells per unit edge
  std::vector<double> levelset;   // n*n midpoint samples, negative in the pore
  std::vector<uint8_t> mask;      // n*n, 1 = pore cell
  std::function<double(Vec2)> levelset_fn;  // kept for sub-cell sampling

  static ReferenceCell from_levelset(int n, std::function<double(Vec2)> phi);

  bool pore(int ix, int iy) const { return mask[iy * n + ix] != 0; }
  double h() const { return 1.0 / n; }
  Vec2 midpoint(int ix, int iy) const {
    return {(ix + 0.5) / n, (iy + 0.5) / n};
  }
  double pore_fraction() const;

  /// Structural invariants: both phases present (unless allow_trivial),
  /// opposite-face trace compatibility, periodic edge-connectivity of the
  /// pore. Throws DisconnectedPore / std::runtime_error on violation.
  void validate(bool allow_trivial = false) const;
};

// ---------------------------------------------------------------------------
// Porosity field Θ(t,x) with time derivative.
// ---------------------------------------------------------------------------
struct PorosityField {
  std::function<double(double t, Vec2 x)> theta;
  std::function<double(double t, Vec2 x)> dt_theta;   // empty -> central FD
  std::function<Vec2(double t, Vec2 x)> grad_theta;   // empty -> central FD
  double fd_step = 1e-6;

  static PorosityField constant(double value);

  double value(double t, Vec2 x) const { return theta(t, x); }
  double dt(double t, Vec2 x) const;
  Vec2 grad(double t, Vec2 x) const;

  /// Samples Θ over [t0,t1] x bbox and checks 0 < lo <= Θ <= hi < 1.
  void check_range(double t0, double t1, Vec2 bb_lo, Vec2 bb_hi,
                   int samples = 9) const;
};

// ---------------------------------------------------------------------------
// Micro deformation family ψ₀(t,x,y) = y + ψ̌₀(Θ(t,x), y).
// Built-in families are Θ-parameterized; the (t,x) dependence enters only
// through the porosity field.
// ---------------------------------------------------------------------------
struct DeformationSample {
  Vec2 psi;   // ψ₀(y)
  Mat2 Psi;   // D_y ψ₀, Psi(i,j) = ∂ψ_i/∂y_j
  double J;   // det Psi
  Mat2 A;     // J · Psi^{-1} (cofactor transpose)
};

struct MicroDeformation {
  std::string name = "identity";
  ReferenceCell cell;
  PorosityField porosity;
  double c_J = 0.1;
  bool exact_cofactor = false;  // analytic Piola: column divergence of A is 0

  std::function<Vec2(double theta, Vec2 y)> disp;             // ψ̌₀
  std::function<Mat2(double theta, Vec2 y)> jac;              // optional: full Ψ₀
  std::function<Vec2(double theta, Vec2 y)> ddisp_dtheta;     // optional: ∂_Θψ̌₀
  double fd_step = 1e-5;        // central FD step for Ψ₀ when jac is absent
  double theta_fd_step = 1e-6;  // central FD step for ∂_Θψ̌₀ when absent

  /// Θ-parameterized evaluation; no admissibility check.
  DeformationSample eval_theta(double theta, Vec2 y) const;
  /// Full evaluation; throws DegenerateJacobian if J₀ < c_J.
  DeformationSample eval(double t, Vec2 x, Vec2 y) const;

  Vec2 psi0(double t, Vec2 x, Vec2 y) const;
  Vec2 disp_theta(double theta, Vec2 y) const { return disp(theta, y); }
  Vec2 dtheta_disp(double theta, Vec2 y) const;  // analytic or FD in Θ
  /// v̂_Γ = ∂ₜψ₀ = ∂_Θψ̌₀ · ∂ₜΘ.
  Vec2 dt_psi0(double t, Vec2 x, Vec2 y) const;
  /// ∂ₜJ₀ by central FD in t.
  double dt_J0(double t, Vec2 x, Vec2 y, double dt_step = 1e-5) const;
};

/// Spec'd operation form of MicroDeformation::eval.
DeformationSample eval_micro_deformation(const MicroDeformation& def, double t,
                                         Vec2 x, Vec2 y);

struct PiolaResidual {
  double piola = 0.0;         // max |div_y(A₀ ∂ₜψ₀) − ∂ₜJ₀|
  double cofactor_div = 0.0;  // max row-wise |div_y(A₀ᵀ)|
};

/// Central-difference residuals of the Piola identities on an n×n grid of
/// interior points (diagnostic; caller compares against a tolerance).
PiolaResidual check_piola(const MicroDeformation& def, double t, Vec2 x,
                          int grid_n);

enum class PoreQuadrature { gauss, midpoint, levelset_weighted };

/// |Y^p_x(t)| = ∫_{Y^p} J₀ dy over the masked reference pore.
double pore_volume(const MicroDeformation& def, double t, Vec2 x,
                   PoreQuadrature mode = PoreQuadrature::gauss);

/// d/dt |Y^p_x(t)| by central finite differences of pore_volume.
double dt_pore_volume(const MicroDeformation& def, double t, Vec2 x,
                      double dt_step = 1e-3,
                      PoreQuadrature mode = PoreQuadrature::gauss);

// ---------------------------------------------------------------------------
// Built-in families.
// ---------------------------------------------------------------------------
/// Seventh-order smoothstep 35x⁴ − 84x⁵ + 70x⁶ − 20x⁷ clamped to [0,1].
/// C³ at the ends, so deformation families built from it have C² cofactors
/// and finite-difference consistency checks converge at second order.
double smoothstep7(double x);
double smoothstep7_d(double x);

struct ChannelFamilyParams {
  double theta_ref = 0.5;  // reference porosity (solid strip thickness 0.5)
};

struct RadialBumpFamilyParams {
  double theta_ref = 0.6;  // reference porosity; r_ref = sqrt((1-θ)/π)
  double r_in = 0.10;      // inner edge of the displacement annulus
  double r_out = 0.48;     // outer edge (< 1/2: identity near ∂Y)
};

MicroDeformation make_identity_family(ReferenceCell cell,
                                      PorosityField porosity);
MicroDeformation make_channel_family(int n, PorosityField porosity,
                                     ChannelFamilyParams params = {});
MicroDeformation make_radial_bump_family(int n, PorosityField porosity,
                                         RadialBumpFamilyParams params = {});

/// Deformed channel height at porosity θ (for the Poiseuille oracle).
double channel_height(double theta);

// ---------------------------------------------------------------------------
// Macroscopic domain: finite union of axis-parallel rational cuboids.
// ---------------------------------------------------------------------------
struct RationalRect {
  Rational x0, y0, x1, y1;
  Rational area() const { return (x1 - x0) * (y1 - y0); }
};

struct MacroDomain {
  std::vector<RationalRect> cuboids;
  std::vector<Rational> epsilon_ladder;

  static MacroDomain unit_square(std::vector<Rational> ladder = {});

  Rational area() const;
  /// Exact area of the rectangle's intersection with the cuboid union
  /// (cuboids assumed non-overlapping).
  Rational covered_area(const RationalRect& r) const;
  /// True iff the closed rational rectangle is covered by the cuboid union.
  bool covers(const RationalRect& r) const;
  /// Pairwise-disjoint check of the cuboids (positive-area overlaps).
  void validate() const;
  /// Bounding box.
  RationalRect bbox() const;
};

struct LatticeCell {
  int64_t ix = 0, iy = 0;  // k = (ix·ε, iy·ε)
  Vec2 corner;             // double image of k
};

/// I_ε enumeration; throws IncompatibleEpsilon if Ω is not an exact union of
/// ε-cells. Deterministic order: iy-major, then ix.
std::vector<LatticeCell> build_lattice(const MacroDomain& domain, Rational eps);

// ---------------------------------------------------------------------------
// Epsilon-scaled deformation ψ_ε(t,x) = x + ε ψ̌₀(Θ(t,x), x/ε).
// ---------------------------------------------------------------------------
struct EpsDeformation {
  const MicroDeformation* micro = nullptr;
  double eps = 1.0;

  Vec2 micro_coord(Vec2 x) const;  // x/ε wrapped into [0,1)^2
  Vec2 psi(double t, Vec2 x) const;
  /// Chain rule Ψ_ε = Ψ₀(Θ(t,x), x/ε) + ε (∂_Θψ̌₀) ⊗ ∇ₓΘ.
  Mat2 Psi(double t, Vec2 x) const;
  double J(double t, Vec2 x) const;
  Mat2 A(double t, Vec2 x) const;
  /// v̂_Γε = ∂ₜψ_ε = ε ∂_Θψ̌₀ ∂ₜΘ.
  Vec2 dt_psi(double t, Vec2 x) const;
  /// Newton inversion of ψ_ε(t,·); throws NewtonDiverged.
  Vec2 inverse(double t, Vec2 X, double tol = 1e-12, int maxit = 8) const;
};

}  // namespace evodarcy
