#pragma once
// Exact rational arithmetic (int64, gcd-normalized) for domain tiling and
// lattice admissibility checks, where floating point would make "Ω equals the
// union of ε-cells exactly" undecidable.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace evodarcy {

struct Rational {
  int64_t num = 0;
  int64_t den = 1;  // always > 0

  Rational() = default;
  Rational(int64_t n) : num(n), den(1) {}
  Rational(int64_t n, int64_t d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) throw std::invalid_argument("Rational: zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  double to_double() const { return static_cast<double>(num) / den; }

  /// Parse "3", "-1/4", or a plain decimal like "0.25" exactly.
  static Rational parse(const std::string& s);
};

inline Rational operator+(Rational a, Rational b) {
  return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
}
inline Rational operator-(Rational a, Rational b) {
  return Rational(a.num * b.den - b.num * a.den, a.den * b.den);
}
inline Rational operator*(Rational a, Rational b) {
  return Rational(a.num * b.num, a.den * b.den);
}
inline Rational operator/(Rational a, Rational b) {
  if (b.num == 0) throw std::domain_error("Rational: division by zero");
  return Rational(a.num * b.den, a.den * b.num);
}
inline bool operator==(Rational a, Rational b) {
  return a.num == b.num && a.den == b.den;
}
inline bool operator!=(Rational a, Rational b) { return !(a == b); }
inline bool operator<(Rational a, Rational b) {
  return a.num * b.den < b.num * a.den;
}
inline bool operator<=(Rational a, Rational b) { return a < b || a == b; }
inline bool operator>(Rational a, Rational b) { return b < a; }
inline bool operator>=(Rational a, Rational b) { return b <= a; }

inline Rational rational_min(Rational a, Rational b) { return a < b ? a : b; }
inline Rational rational_max(Rational a, Rational b) { return a < b ? b : a; }

/// Largest integer q with q <= a.
inline int64_t rational_floor(Rational a) {
  int64_t q = a.num / a.den;
  if (a.num % a.den != 0 && a.num < 0) --q;
  return q;
}

inline int64_t rational_ceil(Rational a) { return -rational_floor(Rational(-a.num, a.den)); }

}  // namespace evodarcy
