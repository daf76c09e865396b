#include "evodarcy/geometry.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <deque>

namespace evodarcy {

// ---------------------------------------------------------------------------
// Rational parsing
// ---------------------------------------------------------------------------
Rational Rational::parse(const std::string& s) {
  const auto slash = s.find('/');
  auto parse_int = [](const std::string& t) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      throw std::invalid_argument("Rational::parse: bad integer '" + t + "'");
    return v;
  };
  if (slash != std::string::npos)
    return Rational(parse_int(s.substr(0, slash)),
                    parse_int(s.substr(slash + 1)));
  const auto dot = s.find('.');
  if (dot == std::string::npos) return Rational(parse_int(s));
  // Exact decimal: digits after the dot give the power-of-ten denominator.
  std::string head = s.substr(0, dot), tail = s.substr(dot + 1);
  if (tail.size() > 15)
    throw std::invalid_argument("Rational::parse: too many decimals in " + s);
  int64_t den = 1;
  for (size_t i = 0; i < tail.size(); ++i) den *= 10;
  const bool neg = !head.empty() && head[0] == '-';
  if (head == "-" || head.empty()) head += "0";
  int64_t ip = parse_int(head);
  int64_t fp = tail.empty() ? 0 : parse_int(tail);
  int64_t num = (neg ? -1 : 1) * ((neg ? -ip : ip) * den + fp);
  return Rational(num, den);
}

// ---------------------------------------------------------------------------
// ReferenceCell
// ---------------------------------------------------------------------------
ReferenceCell ReferenceCell::from_levelset(int n,
                                           std::function<double(Vec2)> phi) {
  ReferenceCell c;
  c.n = n;
  c.levelset.resize(static_cast<size_t>(n) * n);
  c.mask.resize(static_cast<size_t>(n) * n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const double v = phi(Vec2{(ix + 0.5) / n, (iy + 0.5) / n});
      c.levelset[static_cast<size_t>(iy) * n + ix] = v;
      c.mask[static_cast<size_t>(iy) * n + ix] = v < 0.0 ? 1 : 0;
    }
  c.levelset_fn = std::move(phi);
  return c;
}

double ReferenceCell::pore_fraction() const {
  size_t cnt = 0;
  for (uint8_t m : mask) cnt += m;
  return static_cast<double>(cnt) / (static_cast<double>(n) * n);
}

void ReferenceCell::validate(bool allow_trivial) const {
  const double frac = pore_fraction();
  if (!allow_trivial && (frac <= 0.0 || frac >= 1.0))
    throw std::runtime_error(
        "ReferenceCell: pore and solid must both have positive measure "
        "(pore fraction " + std::to_string(frac) + ")");
  if (frac <= 0.0)
    throw std::runtime_error("ReferenceCell: empty pore");
  // Opposite-face trace compatibility of the mask.
  for (int j = 0; j < n; ++j) {
    if (pore(0, j) != pore(n - 1, j))
      throw std::runtime_error(
          "ReferenceCell: mask trace mismatch on faces y1=0 / y1=1 at row " +
          std::to_string(j));
    if (pore(j, 0) != pore(j, n - 1))
      throw std::runtime_error(
          "ReferenceCell: mask trace mismatch on faces y2=0 / y2=1 at column " +
          std::to_string(j));
  }
  // Periodic flood fill over pore cells.
  std::vector<uint8_t> seen(mask.size(), 0);
  int64_t start = -1, pore_count = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      ++pore_count;
      if (start < 0) start = static_cast<int64_t>(i);
    }
  std::deque<int64_t> queue{start};
  seen[start] = 1;
  int64_t reached = 0;
  while (!queue.empty()) {
    const int64_t c = queue.front();
    queue.pop_front();
    ++reached;
    const int ix = static_cast<int>(c % n), iy = static_cast<int>(c / n);
    const int nb[4][2] = {{(ix + 1) % n, iy},
                          {(ix + n - 1) % n, iy},
                          {ix, (iy + 1) % n},
                          {ix, (iy + n - 1) % n}};
    for (auto& b : nb) {
      const int64_t idx = static_cast<int64_t>(b[1]) * n + b[0];
      if (mask[idx] && !seen[idx]) {
        seen[idx] = 1;
        queue.push_back(idx);
      }
    }
  }
  if (reached != pore_count)
    throw DisconnectedPore("pore mask splits into multiple components (" +
                           std::to_string(reached) + " of " +
                           std::to_string(pore_count) + " cells reachable)");
}

// ---------------------------------------------------------------------------
// PorosityField
// ---------------------------------------------------------------------------
PorosityField PorosityField::constant(double value) {
  PorosityField p;
  p.theta = [value](double, Vec2) { return value; };
  p.dt_theta = [](double, Vec2) { return 0.0; };
  p.grad_theta = [](double, Vec2) { return Vec2{0.0, 0.0}; };
  return p;
}

double PorosityField::dt(double t, Vec2 x) const {
  if (dt_theta) return dt_theta(t, x);
  const double h = fd_step;
  return (theta(t + h, x) - theta(t - h, x)) / (2.0 * h);
}

Vec2 PorosityField::grad(double t, Vec2 x) const {
  if (grad_theta) return grad_theta(t, x);
  const double h = fd_step;
  return {(theta(t, {x.x + h, x.y}) - theta(t, {x.x - h, x.y})) / (2.0 * h),
          (theta(t, {x.x, x.y + h}) - theta(t, {x.x, x.y - h})) / (2.0 * h)};
}

void PorosityField::check_range(double t0, double t1, Vec2 lo, Vec2 hi,
                                int samples) const {
  auto lerp = [samples](double a, double b, int i) {
    return samples == 1 ? a : a + (b - a) * i / (samples - 1.0);
  };
  for (int it = 0; it < samples; ++it)
    for (int ix = 0; ix < samples; ++ix)
      for (int iy = 0; iy < samples; ++iy) {
        const double t = lerp(t0, t1, it);
        const Vec2 x{lerp(lo.x, hi.x, ix), lerp(lo.y, hi.y, iy)};
        const double v = theta(t, x);
        if (!(v > 0.0 && v < 1.0))
          throw ConfigError("porosity out of (0,1): theta(" +
                            std::to_string(t) + ", " + std::to_string(x.x) +
                            ", " + std::to_string(x.y) + ") = " +
                            std::to_string(v));
      }
}

// ---------------------------------------------------------------------------
// MicroDeformation
// ---------------------------------------------------------------------------
DeformationSample MicroDeformation::eval_theta(double theta, Vec2 y) const {
  DeformationSample s;
  const Vec2 d = disp(theta, y);
  s.psi = y + d;
  if (jac) {
    s.Psi = jac(theta, y);
  } else {
    const double h = fd_step;
    Mat2 g;
    for (int j = 0; j < 2; ++j) {
      Vec2 yp = y, ym = y;
      yp[j] += h;
      ym[j] -= h;
      const Vec2 dp = disp(theta, yp), dm = disp(theta, ym);
      g(0, j) = (dp.x - dm.x) / (2.0 * h);
      g(1, j) = (dp.y - dm.y) / (2.0 * h);
    }
    s.Psi = Mat2::identity() + g;
  }
  s.J = s.Psi.det();
  s.A = s.J * s.Psi.inverse();
  return s;
}

DeformationSample MicroDeformation::eval(double t, Vec2 x, Vec2 y) const {
  const double theta = porosity.theta(t, x);
  DeformationSample s = eval_theta(theta, y);
  if (s.J < c_J)
    throw DegenerateJacobian(
        "J0 = " + std::to_string(s.J) + " < c_J = " + std::to_string(c_J) +
        " for family '" + name + "' at theta = " + std::to_string(theta) +
        ", y = (" + std::to_string(y.x) + ", " + std::to_string(y.y) + ")");
  return s;
}

Vec2 MicroDeformation::psi0(double t, Vec2 x, Vec2 y) const {
  return y + disp(porosity.theta(t, x), y);
}

Vec2 MicroDeformation::dtheta_disp(double theta, Vec2 y) const {
  if (ddisp_dtheta) return ddisp_dtheta(theta, y);
  const double h = theta_fd_step;
  const Vec2 dp = disp(theta + h, y), dm = disp(theta - h, y);
  return {(dp.x - dm.x) / (2.0 * h), (dp.y - dm.y) / (2.0 * h)};
}

Vec2 MicroDeformation::dt_psi0(double t, Vec2 x, Vec2 y) const {
  const double theta = porosity.theta(t, x);
  return dtheta_disp(theta, y) * porosity.dt(t, x);
}

double MicroDeformation::dt_J0(double t, Vec2 x, Vec2 y, double dt_step) const {
  const double jp = eval_theta(porosity.theta(t + dt_step, x), y).J;
  const double jm = eval_theta(porosity.theta(t - dt_step, x), y).J;
  return (jp - jm) / (2.0 * dt_step);
}

DeformationSample eval_micro_deformation(const MicroDeformation& def, double t,
                                         Vec2 x, Vec2 y) {
  return def.eval(t, x, y);
}

PiolaResidual check_piola(const MicroDeformation& def, double t, Vec2 x,
                          int grid_n) {
  const double h = 1.0 / grid_n;
  auto flux = [&](Vec2 y) {  // A₀ ∂ₜψ₀
    const DeformationSample s = def.eval(t, x, y);
    return s.A * def.dt_psi0(t, x, y);
  };
  auto cof = [&](Vec2 y) { return def.eval(t, x, y).A; };

  PiolaResidual res;
  for (int iy = 1; iy < grid_n; ++iy)
    for (int ix = 1; ix < grid_n; ++ix) {
      const Vec2 y{ix * h, iy * h};
      const Vec2 fxp = flux({y.x + h, y.y}), fxm = flux({y.x - h, y.y});
      const Vec2 fyp = flux({y.x, y.y + h}), fym = flux({y.x, y.y - h});
      const double div_f =
          (fxp.x - fxm.x) / (2.0 * h) + (fyp.y - fym.y) / (2.0 * h);
      const double r1 = std::abs(div_f - def.dt_J0(t, x, y));
      res.piola = std::max(res.piola, r1);

      const Mat2 axp = cof({y.x + h, y.y}), axm = cof({y.x - h, y.y});
      const Mat2 ayp = cof({y.x, y.y + h}), aym = cof({y.x, y.y - h});
      for (int i = 0; i < 2; ++i) {
        // Column i of A₀: entries A(j, i); divergence sums ∂_j A(j, i).
        const double d = (axp(0, i) - axm(0, i)) / (2.0 * h) +
                         (ayp(1, i) - aym(1, i)) / (2.0 * h);
        res.cofactor_div = std::max(res.cofactor_div, std::abs(d));
      }
    }
  return res;
}

namespace {

// 4-point Gauss-Legendre on [0,1], exact through degree 7 — enough for the
// degree-7 piecewise-polynomial Jacobians of the built-in families when the
// profile knots align with cell-grid lines.
constexpr double kG4a = 0.06943184420297371;  // (1 − sqrt((3+2·sqrt(6/5))/7))/2
constexpr double kG4b = 0.33000947820757187;  // (1 − sqrt((3−2·sqrt(6/5))/7))/2
constexpr double kG4wa = 0.17392742256872693;  // (18 − sqrt(30))/72
constexpr double kG4wb = 0.32607257743127307;  // (18 + sqrt(30))/72
constexpr double kG4p[4] = {kG4a, kG4b, 1.0 - kG4b, 1.0 - kG4a};
constexpr double kG4w[4] = {kG4wa, kG4wb, kG4wb, kG4wa};

}  // namespace

double pore_volume(const MicroDeformation& def, double t, Vec2 x,
                   PoreQuadrature mode) {
  const ReferenceCell& c = def.cell;
  const int n = c.n;
  const double h = 1.0 / n;
  const double theta = def.porosity.theta(t, x);
  auto sample_J = [&](Vec2 y) {
    const double J = def.eval_theta(theta, y).J;
    if (J < def.c_J)
      throw DegenerateJacobian("J0 = " + std::to_string(J) +
                               " < c_J in pore_volume quadrature (family '" +
                               def.name + "', theta = " +
                               std::to_string(theta) + ")");
    return J;
  };
  double vol = 0.0;
  switch (mode) {
    case PoreQuadrature::gauss:
      for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
          if (!c.pore(ix, iy)) continue;
          double s = 0.0;
          for (int qa = 0; qa < 4; ++qa)
            for (int qb = 0; qb < 4; ++qb) {
              const Vec2 y{(ix + kG4p[qa]) * h, (iy + kG4p[qb]) * h};
              s += kG4w[qa] * kG4w[qb] * sample_J(y);
            }
          vol += s * h * h;
        }
      break;
    case PoreQuadrature::midpoint:
      for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) {
          if (!c.pore(ix, iy)) continue;
          vol += h * h * sample_J(c.midpoint(ix, iy));
        }
      break;
    case PoreQuadrature::levelset_weighted: {
      // 4x4 sub-sampled indicator of the level set, independent of the mask.
      const int sub = 4;
      const double hs = h / sub;
      for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix)
          for (int sy = 0; sy < sub; ++sy)
            for (int sx = 0; sx < sub; ++sx) {
              const Vec2 y{ix * h + (sx + 0.5) * hs, iy * h + (sy + 0.5) * hs};
              if (c.levelset_fn(y) < 0.0) vol += hs * hs * sample_J(y);
            }
      break;
    }
  }
  return vol;
}

double dt_pore_volume(const MicroDeformation& def, double t, Vec2 x,
                      double dt_step, PoreQuadrature mode) {
  const double vp = pore_volume(def, t + dt_step, x, mode);
  const double vm = pore_volume(def, t - dt_step, x, mode);
  return (vp - vm) / (2.0 * dt_step);
}

// ---------------------------------------------------------------------------
// Built-in families
// ---------------------------------------------------------------------------
double smoothstep7(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double x2 = x * x;
  return x2 * x2 * (35.0 + x * (-84.0 + x * (70.0 - 20.0 * x)));
}

double smoothstep7_d(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  const double u = x * (1.0 - x);
  return 140.0 * u * u * u;
}

MicroDeformation make_identity_family(ReferenceCell cell,
                                      PorosityField porosity) {
  MicroDeformation d;
  d.name = "identity";
  d.cell = std::move(cell);
  d.porosity = std::move(porosity);
  d.exact_cofactor = true;
  d.disp = [](double, Vec2) { return Vec2{0.0, 0.0}; };
  d.jac = [](double, Vec2) { return Mat2::identity(); };
  d.ddisp_dtheta = [](double, Vec2) { return Vec2{0.0, 0.0}; };
  return d;
}

namespace {

/// C³ periodic vertical profile: 0 → −1 over the lower pore band,
/// −1 → +1 across the solid strip, +1 → 0 over the upper band.
struct ChannelProfile {
  double lo, hi;  // solid strip [lo, hi]

  double value(double s) const {
    if (s <= lo) return -smoothstep7(s / lo);
    if (s >= hi) return 1.0 - smoothstep7((s - hi) / (1.0 - hi));
    return -1.0 + 2.0 * smoothstep7((s - lo) / (hi - lo));
  }
  double deriv(double s) const {
    if (s <= lo) return -smoothstep7_d(s / lo) / lo;
    if (s >= hi) return -smoothstep7_d((s - hi) / (1.0 - hi)) / (1.0 - hi);
    return 2.0 * smoothstep7_d((s - lo) / (hi - lo)) / (hi - lo);
  }
};

}  // namespace

double channel_height(double theta) { return theta; }

MicroDeformation make_channel_family(int n, PorosityField porosity,
                                     ChannelFamilyParams params) {
  const double a = (1.0 - params.theta_ref) / 2.0;  // half strip thickness
  const ChannelProfile prof{0.5 - a, 0.5 + a};
  const double theta_ref = params.theta_ref;

  MicroDeformation d;
  d.name = "channel";
  d.porosity = std::move(porosity);
  d.exact_cofactor = true;
  d.cell = ReferenceCell::from_levelset(
      n, [a](Vec2 y) { return a - std::abs(y.y - 0.5); });
  d.disp = [prof, theta_ref](double theta, Vec2 y) {
    const double delta = (theta_ref - theta) / 2.0;
    return Vec2{0.0, delta * prof.value(y.y)};
  };
  d.jac = [prof, theta_ref](double theta, Vec2 y) {
    const double delta = (theta_ref - theta) / 2.0;
    return Mat2::diag(1.0, 1.0 + delta * prof.deriv(y.y));
  };
  d.ddisp_dtheta = [prof](double, Vec2 y) {
    return Vec2{0.0, -0.5 * prof.value(y.y)};
  };
  return d;
}

MicroDeformation make_radial_bump_family(int n, PorosityField porosity,
                                         RadialBumpFamilyParams params) {
  const double r_ref = std::sqrt((1.0 - params.theta_ref) / M_PI);
  const double r_in = params.r_in, r_out = params.r_out;
  if (!(r_in < r_ref && r_ref < r_out && r_out < 0.5))
    throw ConfigError("radial-bump family needs r_in < r_ref < r_out < 1/2");
  const Vec2 c{0.5, 0.5};

  auto bump = [=](double s) {
    if (s <= r_in || s >= r_out) return 0.0;
    if (s <= r_ref) return smoothstep7((s - r_in) / (r_ref - r_in));
    return 1.0 - smoothstep7((s - r_ref) / (r_out - r_ref));
  };
  auto bump_d = [=](double s) {
    if (s <= r_in || s >= r_out) return 0.0;
    if (s <= r_ref) return smoothstep7_d((s - r_in) / (r_ref - r_in)) / (r_ref - r_in);
    return -smoothstep7_d((s - r_ref) / (r_out - r_ref)) / (r_out - r_ref);
  };
  auto radius_of_theta = [](double theta) {
    return std::sqrt((1.0 - theta) / M_PI);
  };

  MicroDeformation d;
  d.name = "radial-bump";
  d.porosity = std::move(porosity);
  d.exact_cofactor = true;
  d.cell = ReferenceCell::from_levelset(n, [c, r_ref](Vec2 y) {
    const double s = norm(y - c);
    return r_ref - s;  // negative in the pore (outside the solid disc)
  });
  d.disp = [=](double theta, Vec2 y) {
    const Vec2 rel = y - c;
    const double s = norm(rel);
    if (s <= r_in || s >= r_out) return Vec2{0.0, 0.0};
    const double delta = radius_of_theta(theta) - r_ref;
    return (delta * bump(s) / s) * rel;
  };
  d.jac = [=](double theta, Vec2 y) {
    const Vec2 rel = y - c;
    const double s = norm(rel);
    if (s <= r_in || s >= r_out) return Mat2::identity();
    const double delta = radius_of_theta(theta) - r_ref;
    const double g = s + delta * bump(s);
    const double gp = 1.0 + delta * bump_d(s);
    const Vec2 rhat = (1.0 / s) * rel;
    Mat2 m;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double proj = rhat[i] * rhat[j];
        m(i, j) = gp * proj + (g / s) * ((i == j ? 1.0 : 0.0) - proj);
      }
    return m;
  };
  d.ddisp_dtheta = [=](double theta, Vec2 y) {
    const Vec2 rel = y - c;
    const double s = norm(rel);
    if (s <= r_in || s >= r_out) return Vec2{0.0, 0.0};
    const double dr = -1.0 / (2.0 * M_PI * radius_of_theta(theta));
    return (dr * bump(s) / s) * rel;
  };
  return d;
}

// ---------------------------------------------------------------------------
// MacroDomain and lattice
// ---------------------------------------------------------------------------
MacroDomain MacroDomain::unit_square(std::vector<Rational> ladder) {
  MacroDomain d;
  d.cuboids.push_back({Rational(0), Rational(0), Rational(1), Rational(1)});
  d.epsilon_ladder = std::move(ladder);
  return d;
}

Rational MacroDomain::area() const {
  Rational a(0);
  for (const auto& c : cuboids) a = a + c.area();
  return a;
}

namespace {

Rational overlap_area(const RationalRect& a, const RationalRect& b) {
  const Rational w = rational_min(a.x1, b.x1) - rational_max(a.x0, b.x0);
  const Rational h = rational_min(a.y1, b.y1) - rational_max(a.y0, b.y0);
  if (w <= Rational(0) || h <= Rational(0)) return Rational(0);
  return w * h;
}

}  // namespace

Rational MacroDomain::covered_area(const RationalRect& r) const {
  Rational covered(0);
  for (const auto& c : cuboids) covered = covered + overlap_area(r, c);
  return covered;
}

bool MacroDomain::covers(const RationalRect& r) const {
  return covered_area(r) == r.area();
}

void MacroDomain::validate() const {
  if (cuboids.empty()) throw ConfigError("MacroDomain: no cuboids");
  for (const auto& c : cuboids)
    if (!(c.x0 < c.x1 && c.y0 < c.y1))
      throw ConfigError("MacroDomain: degenerate cuboid");
  for (size_t i = 0; i < cuboids.size(); ++i)
    for (size_t j = i + 1; j < cuboids.size(); ++j)
      if (overlap_area(cuboids[i], cuboids[j]) > Rational(0))
        throw ConfigError("MacroDomain: cuboids overlap");
}

RationalRect MacroDomain::bbox() const {
  RationalRect b = cuboids.at(0);
  for (const auto& c : cuboids) {
    b.x0 = rational_min(b.x0, c.x0);
    b.y0 = rational_min(b.y0, c.y0);
    b.x1 = rational_max(b.x1, c.x1);
    b.y1 = rational_max(b.y1, c.y1);
  }
  return b;
}

std::vector<LatticeCell> build_lattice(const MacroDomain& domain,
                                       Rational eps) {
  domain.validate();
  if (!(eps > Rational(0))) throw IncompatibleEpsilon("epsilon must be > 0");
  const RationalRect bb = domain.bbox();
  const int64_t i0 = rational_floor(bb.x0 / eps), i1 = rational_ceil(bb.x1 / eps);
  const int64_t j0 = rational_floor(bb.y0 / eps), j1 = rational_ceil(bb.y1 / eps);

  std::vector<LatticeCell> cells;
  for (int64_t j = j0; j < j1; ++j)
    for (int64_t i = i0; i < i1; ++i) {
      const RationalRect cell{Rational(i) * eps, Rational(j) * eps,
                              Rational(i + 1) * eps, Rational(j + 1) * eps};
      if (domain.covers(cell))
        cells.push_back({i, j,
                         Vec2{(Rational(i) * eps).to_double(),
                              (Rational(j) * eps).to_double()}});
    }
  // Exact tiling: the admitted cells must reproduce |Ω| in rational arithmetic.
  const Rational total = eps * eps * Rational(static_cast<int64_t>(cells.size()));
  if (total != domain.area())
    throw IncompatibleEpsilon(
        "domain is not an exact union of epsilon-cells for epsilon = " +
        std::to_string(eps.num) + "/" + std::to_string(eps.den));
  return cells;
}

// ---------------------------------------------------------------------------
// EpsDeformation
// ---------------------------------------------------------------------------
Vec2 EpsDeformation::micro_coord(Vec2 x) const {
  const double u = x.x / eps, v = x.y / eps;
  Vec2 y{u - std::floor(u), v - std::floor(v)};
  return y;
}

Vec2 EpsDeformation::psi(double t, Vec2 x) const {
  const double theta = micro->porosity.theta(t, x);
  return x + eps * micro->disp(theta, micro_coord(x));
}

Mat2 EpsDeformation::Psi(double t, Vec2 x) const {
  const double theta = micro->porosity.theta(t, x);
  const Vec2 y = micro_coord(x);
  Mat2 m = micro->jac ? micro->jac(theta, y)
                      : micro->eval_theta(theta, y).Psi;
  const Vec2 dd = micro->dtheta_disp(theta, y);
  const Vec2 gt = micro->porosity.grad(t, x);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) m(i, j) += eps * dd[i] * gt[j];
  return m;
}

double EpsDeformation::J(double t, Vec2 x) const { return Psi(t, x).det(); }

Mat2 EpsDeformation::A(double t, Vec2 x) const {
  const Mat2 m = Psi(t, x);
  return m.det() * m.inverse();
}

Vec2 EpsDeformation::dt_psi(double t, Vec2 x) const {
  const double theta = micro->porosity.theta(t, x);
  return eps * micro->porosity.dt(t, x) *
         micro->dtheta_disp(theta, micro_coord(x));
}

Vec2 EpsDeformation::inverse(double t, Vec2 X, double tol, int maxit) const {
  Vec2 xh = X;
  for (int it = 0; it < maxit; ++it) {
    const Vec2 r = psi(t, xh) - X;
    if (norm(r) <= tol) return xh;
    const Mat2 jinv = Psi(t, xh).inverse();
    xh = xh - jinv * r;
  }
  if (norm(psi(t, xh) - X) <= tol) return xh;
  throw NewtonDiverged("psi_eps inversion at X = (" + std::to_string(X.x) +
                       ", " + std::to_string(X.y) + "), t = " +
                       std::to_string(t));
}

}  // namespace evodarcy
