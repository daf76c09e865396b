#pragma once
// Shared basic types and error taxonomy for the evodarcy library.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodarcy {

// ---------------------------------------------------------------------------
// Errors. Every failure mode the library reports deliberately gets its own type so
// callers (and the CLI exit-code mapping) can tell them apart.
// ---------------------------------------------------------------------------
#define EVODARCY_DEFINE_ERROR(Name)                                 \
  struct Name : std::runtime_error {                                \
    explicit Name(const std::string& what_arg)                      \
        : std::runtime_error(std::string(#Name) + ": " + what_arg) {} \
  }

EVODARCY_DEFINE_ERROR(DegenerateJacobian);
EVODARCY_DEFINE_ERROR(IncompatibleEpsilon);
EVODARCY_DEFINE_ERROR(DisconnectedPore);
EVODARCY_DEFINE_ERROR(NoConvergence);
EVODARCY_DEFINE_ERROR(SingularSystem);
EVODARCY_DEFINE_ERROR(InconsistentBC);
EVODARCY_DEFINE_ERROR(AsymmetryExceeded);
EVODARCY_DEFINE_ERROR(NonSPDCoefficient);
EVODARCY_DEFINE_ERROR(MassBalanceViolation);
EVODARCY_DEFINE_ERROR(EmptyPoreCell);
EVODARCY_DEFINE_ERROR(NewtonDiverged);
EVODARCY_DEFINE_ERROR(SnapshotMismatch);
EVODARCY_DEFINE_ERROR(DegenerateFit);
EVODARCY_DEFINE_ERROR(EmptyDirichletSet);
EVODARCY_DEFINE_ERROR(ConfigError);

#undef EVODARCY_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Tiny 2D vector / matrix. Deliberately minimal: everything heavy lives in
// the sparse layer; these are for pointwise geometry/coefficient algebra.
// ---------------------------------------------------------------------------
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  double& operator[](int i) { return i == 0 ? x : y; }
  double operator[](int i) const { return i == 0 ? x : y; }
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

/// Row-major 2x2 matrix; m(r, c).
struct Mat2 {
  double m[2][2] = {{0.0, 0.0}, {0.0, 0.0}};

  static Mat2 identity() { return {{{1.0, 0.0}, {0.0, 1.0}}}; }
  static Mat2 diag(double a, double b) { return {{{a, 0.0}, {0.0, b}}}; }

  double& operator()(int r, int c) { return m[r][c]; }
  double operator()(int r, int c) const { return m[r][c]; }

  double det() const { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

  Mat2 transpose() const { return {{{m[0][0], m[1][0]}, {m[0][1], m[1][1]}}}; }

  Mat2 inverse() const {
    const double d = det();
    return {{{m[1][1] / d, -m[0][1] / d}, {-m[1][0] / d, m[0][0] / d}}};
  }
};

inline Mat2 operator+(const Mat2& a, const Mat2& b) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r(i, j) = a(i, j) + b(i, j);
  return r;
}

inline Mat2 operator-(const Mat2& a, const Mat2& b) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r(i, j) = a(i, j) - b(i, j);
  return r;
}

inline Mat2 operator*(double s, const Mat2& a) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r(i, j) = s * a(i, j);
  return r;
}

inline Mat2 operator*(const Mat2& a, const Mat2& b) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j);
  return r;
}

inline Vec2 operator*(const Mat2& a, Vec2 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y, a(1, 0) * v.x + a(1, 1) * v.y};
}

/// Frobenius inner product a : b.
inline double frob(const Mat2& a, const Mat2& b) {
  double s = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s += a(i, j) * b(i, j);
  return s;
}

inline double frob_norm(const Mat2& a) { return std::sqrt(frob(a, a)); }

inline Mat2 sym(const Mat2& a) {
  Mat2 r;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r(i, j) = 0.5 * (a(i, j) + a(j, i));
  return r;
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
inline std::array<double, 2> sym_eigenvalues(const Mat2& a) {
  const double tr = a(0, 0) + a(1, 1);
  const double off = 0.5 * (a(0, 1) + a(1, 0));
  const double d = a(0, 0) * a(1, 1) - off * off;
  const double disc = std::sqrt(std::max(0.0, 0.25 * tr * tr - d));
  return {0.5 * tr - disc, 0.5 * tr + disc};
}

}  // namespace evodarcy
