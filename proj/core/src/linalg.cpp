#include "evodarcy/linalg.hpp"

#include <algorithm>
#include <cassert>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace evodarcy {

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------
double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm_vec(const std::vector<double>& a) { return std::sqrt(dot_vec(a, a)); }

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  assert(x.size() == y.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// SparseMatrix
// ---------------------------------------------------------------------------
void SparseMatrix::multiply(const std::vector<double>& x,
                            std::vector<double>& y) const {
  assert(static_cast<int>(x.size()) == cols);
  y.assign(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
      s += val[k] * x[col[k]];
    y[r] = s;
  }
}

std::vector<double> SparseMatrix::multiply(const std::vector<double>& x) const {
  std::vector<double> y;
  multiply(x, y);
  return y;
}

void SparseMatrix::multiply_transpose(const std::vector<double>& x,
                                      std::vector<double>& y) const {
  assert(static_cast<int>(x.size()) == rows);
  y.assign(cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
      y[col[k]] += val[k] * xr;
  }
}

double& SparseMatrix::coeff_ref(int r, int c) {
  const int32_t* first = col.data() + row_ptr[r];
  const int32_t* last = col.data() + row_ptr[r + 1];
  const int32_t* it = std::lower_bound(first, last, c);
  if (it == last || *it != c)
    throw std::out_of_range("SparseMatrix::coeff_ref: entry not in pattern");
  return val[it - col.data()];
}

double SparseMatrix::coeff(int r, int c) const {
  const int32_t* first = col.data() + row_ptr[r];
  const int32_t* last = col.data() + row_ptr[r + 1];
  const int32_t* it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return val[it - col.data()];
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(rows, 0.0);
  for (int r = 0; r < rows && r < cols; ++r) d[r] = coeff(r, r);
  return d;
}

void SparseMatrix::validate(int sample) const {
  if (static_cast<int>(row_ptr.size()) != rows + 1)
    throw std::logic_error("SparseMatrix: row_ptr size mismatch");
  for (int r = 0; r < rows; ++r) {
    for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      if (col[k] < 0 || col[k] >= cols)
        throw std::logic_error("SparseMatrix: column out of range");
      if (k > row_ptr[r] && col[k] <= col[k - 1])
        throw std::logic_error("SparseMatrix: columns not strictly sorted");
    }
  }
  if (symmetric_hint && nnz() > 0) {
    // Deterministic stride sample over stored entries.
    const int64_t n = nnz();
    const int64_t stride = std::max<int64_t>(1, n / std::max(1, sample));
    for (int64_t k = 0; k < n; k += stride) {
      // Recover the row of entry k.
      int r = static_cast<int>(
          std::upper_bound(row_ptr.begin(), row_ptr.end(), k) -
          row_ptr.begin() - 1);
      const int c = col[k];
      const double a = val[k];
      const double b = coeff(c, r);
      if (std::abs(a - b) > 1e-10 * std::max(1.0, std::abs(a)))
        throw AsymmetryExceeded("symmetry spot-check failed at (" +
                                std::to_string(r) + "," + std::to_string(c) +
                                ")");
    }
  }
}

SparseMatrix SparseMatrix::from_dense(
    const std::vector<std::vector<double>>& dense) {
  SparseMatrix m;
  m.rows = static_cast<int>(dense.size());
  m.cols = m.rows ? static_cast<int>(dense[0].size()) : 0;
  m.row_ptr.assign(m.rows + 1, 0);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (dense[r][c] != 0.0) {
        m.col.push_back(c);
        m.val.push_back(dense[r][c]);
      }
    }
    m.row_ptr[r + 1] = static_cast<int64_t>(m.col.size());
  }
  return m;
}

SparseMatrix SparseMatrix::from_triplets(int rows, int cols,
                                         std::vector<std::array<int, 2>> idx,
                                         const std::vector<double>& values) {
  assert(idx.size() == values.size());
  std::vector<size_t> order(idx.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return idx[a] < idx[b];
  });
  SparseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  int prev_r = -1, prev_c = -1;
  for (size_t i : order) {
    const int r = idx[i][0], c = idx[i][1];
    if (r == prev_r && c == prev_c) {
      m.val.back() += values[i];
    } else {
      m.col.push_back(c);
      m.val.push_back(values[i]);
      prev_r = r;
      prev_c = c;
    }
    m.row_ptr[r + 1] = static_cast<int64_t>(m.col.size());
  }
  for (int r = 0; r < rows; ++r)
    m.row_ptr[r + 1] = std::max(m.row_ptr[r + 1], m.row_ptr[r]);
  return m;
}

void SparseMatrix::dump_matrix_market(std::ostream& os) const {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << rows << " " << cols << " " << nnz() << "\n";
  char buf[64];
  for (int r = 0; r < rows; ++r) {
    for (int64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      std::snprintf(buf, sizeof buf, "%d %d %.17g\n", r + 1, col[k] + 1,
                    val[k]);
      os << buf;
    }
  }
}

void SparseMatrix::dump_matrix_market_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  dump_matrix_market(os);
}

// ---------------------------------------------------------------------------
// CsrBuilder
// ---------------------------------------------------------------------------
CsrBuilder::CsrBuilder(int rows, int cols, int64_t nnz_estimate) {
  m_.rows = rows;
  m_.cols = cols;
  m_.row_ptr.assign(rows + 1, 0);
  if (nnz_estimate > 0) m_.col.reserve(nnz_estimate);
}

void CsrBuilder::begin_row(int r) {
  assert(r == next_row_);
  (void)r;
  ++next_row_;
}

void CsrBuilder::add(int c) {
  assert(next_row_ > 0);
  m_.col.push_back(c);
  m_.row_ptr[next_row_] = static_cast<int64_t>(m_.col.size());
}

SparseMatrix CsrBuilder::finish(bool symmetric_hint) {
  // Rows may have been skipped at the end; close them out.
  for (int r = next_row_; r < m_.rows; ++r)
    m_.row_ptr[r + 1] = m_.row_ptr[r];
  // Sort + unique each row segment in place, then compact.
  int64_t write = 0;
  int64_t prev_end = 0;
  for (int r = 0; r < m_.rows; ++r) {
    const int64_t begin = prev_end;
    const int64_t end = m_.row_ptr[r + 1];
    prev_end = end;
    std::sort(m_.col.begin() + begin, m_.col.begin() + end);
    const int64_t row_start = write;
    for (int64_t k = begin; k < end; ++k) {
      if (k == begin || m_.col[k] != m_.col[k - 1]) m_.col[write++] = m_.col[k];
    }
    m_.row_ptr[r] = row_start;  // temporarily store new begin
    m_.row_ptr[r + 1] = write;
  }
  m_.col.resize(write);
  m_.col.shrink_to_fit();
  m_.val.assign(write, 0.0);
  m_.symmetric_hint = symmetric_hint;
  return std::move(m_);
}

// ---------------------------------------------------------------------------
// CG
// ---------------------------------------------------------------------------
int default_maxit(int64_t dof) {
  const double v = 20.0 * std::sqrt(static_cast<double>(std::max<int64_t>(dof, 1)));
  return std::max(200, static_cast<int>(std::ceil(v)));
}

SolveReport cg_solve(const SparseMatrix& M, const std::vector<double>& b,
                     std::vector<double>& x, const KrylovOptions& opt) {
  const int n = M.rows;
  assert(M.cols == n && static_cast<int>(b.size()) == n);
  if (x.size() != b.size()) x.assign(n, 0.0);
  const int maxit = opt.maxit > 0 ? opt.maxit : default_maxit(n);

  std::vector<double> diag_inv(n, 1.0);
  if (opt.jacobi) {
    const std::vector<double> d = M.diagonal();
    for (int i = 0; i < n; ++i) diag_inv[i] = d[i] > 0.0 ? 1.0 / d[i] : 1.0;
  }

  std::vector<double> r(n), z(n), p(n), Ap(n);
  M.multiply(x, Ap);
  for (int i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  const double bnorm = norm_vec(b);
  if (bnorm == 0.0) {
    x.assign(n, 0.0);
    return {0, 0.0, true};
  }
  double rnorm = norm_vec(r);
  if (rnorm / bnorm <= opt.tol) return {0, rnorm / bnorm, true};

  for (int i = 0; i < n; ++i) z[i] = diag_inv[i] * r[i];
  p = z;
  double rz = dot_vec(r, z);

  SolveReport rep;
  for (int it = 1; it <= maxit; ++it) {
    M.multiply(p, Ap);
    const double pAp = dot_vec(p, Ap);
    if (pAp <= 0.0)
      throw SingularSystem("cg_solve: p·Ap = " + std::to_string(pAp) +
                           " at iteration " + std::to_string(it));
    const double alpha = rz / pAp;
    axpy(alpha, p, x);
    axpy(-alpha, Ap, r);
    rnorm = norm_vec(r);
    rep.iterations = it;
    rep.residual = rnorm / bnorm;
    if (rep.residual <= opt.tol) {
      rep.converged = true;
      return rep;
    }
    for (int i = 0; i < n; ++i) z[i] = diag_inv[i] * r[i];
    const double rz_new = dot_vec(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw NoConvergence("cg_solve: " + std::to_string(maxit) +
                      " iterations, relative residual " +
                      std::to_string(rep.residual));
}

// ---------------------------------------------------------------------------
// Saddle solvers
// ---------------------------------------------------------------------------
void SaddleSystem::validate() const {
  if (A.rows != A.cols) throw std::logic_error("SaddleSystem: A not square");
  if (B.cols != A.rows)
    throw std::logic_error("SaddleSystem: B columns != velocity dofs");
  if (static_cast<int>(f.size()) != A.rows ||
      static_cast<int>(g.size()) != B.rows)
    throw std::logic_error("SaddleSystem: rhs size mismatch");
  if (!pressure_weights.empty() &&
      static_cast<int>(pressure_weights.size()) != B.rows)
    throw std::logic_error("SaddleSystem: pressure weight size mismatch");
  if (pressure_nullspace) {
    // The constraint rhs must be compatible with the constant-pressure mode:
    // the sum of g (g tested against the constant pressure 1) should vanish.
    double gm = 0.0;
    for (int i = 0; i < B.rows; ++i) gm += g[i];
    const double scale =
        std::max(1.0, norm_vec(g) * std::sqrt(static_cast<double>(B.rows)));
    if (std::abs(gm) > 1e-8 * scale)
      throw std::logic_error("SaddleSystem: g incompatible with nullspace");
  }
}

namespace {

struct BlockOp {
  const SparseMatrix& A;
  const SparseMatrix& B;
  int nu, np;
  mutable std::vector<double> tmp_u, tmp_p;

  // y = [[A, -B^T], [-B, 0]] x, with x = (u, p) packed.
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    std::vector<double> u(x.begin(), x.begin() + nu);
    std::vector<double> p(x.begin() + nu, x.end());
    A.multiply(u, tmp_u);
    std::vector<double> btp;
    B.multiply_transpose(p, btp);
    std::vector<double> bu;
    B.multiply(u, bu);
    y.resize(nu + np);
    for (int i = 0; i < nu; ++i) y[i] = tmp_u[i] - btp[i];
    for (int i = 0; i < np; ++i) y[nu + i] = -bu[i];
  }
};

void project_pressure_part(std::vector<double>& x, int nu, int np,
                           const std::vector<double>& w) {
  double s = 0.0, tot = 0.0;
  for (int i = 0; i < np; ++i) {
    s += w[i] * x[nu + i];
    tot += w[i];
  }
  const double mean = s / tot;
  for (int i = 0; i < np; ++i) x[nu + i] -= mean;
}

SaddleSolution saddle_minres(const SaddleSystem& s, const SaddleOptions& opt) {
  const int nu = s.A.rows, np = s.B.rows;
  const int n = nu + np;
  const int maxit = opt.maxit > 0 ? opt.maxit : default_maxit(n);

  std::vector<double> w = s.pressure_weights;
  if (w.empty()) w.assign(np, 1.0);

  // Block-diagonal SPD preconditioner: Jacobi(A) and the lumped pressure mass.
  std::vector<double> pre(n, 1.0);
  {
    const std::vector<double> d = s.A.diagonal();
    for (int i = 0; i < nu; ++i) pre[i] = d[i] > 0.0 ? 1.0 / d[i] : 1.0;
    for (int i = 0; i < np; ++i) pre[nu + i] = w[i] > 0.0 ? 1.0 / w[i] : 1.0;
  }
  BlockOp K{s.A, s.B, nu, np, {}, {}};
  auto precond = [&](const std::vector<double>& r, std::vector<double>& z) {
    z.resize(n);
    for (int i = 0; i < n; ++i) z[i] = pre[i] * r[i];
    if (s.pressure_nullspace) project_pressure_part(z, nu, np, w);
  };

  std::vector<double> b(n);
  for (int i = 0; i < nu; ++i) b[i] = s.f[i];
  for (int i = 0; i < np; ++i) b[nu + i] = -s.g[i];
  if (s.pressure_nullspace) {
    // The saddle matrix annihilates (0, 1), so solvability needs the plain sum
    // of the constraint data to vanish. Assembled data carries a quadrature-
    // level defect there (the discrete divergence theorem is inexact for
    // sampled coefficients); remove it, or the residual can never reach the
    // target.
    double mean = 0.0;
    for (int i = 0; i < np; ++i) mean += b[nu + i];
    mean /= np;
    for (int i = 0; i < np; ++i) b[nu + i] -= mean;
  }
  const double b2 = norm_vec(b);

  std::vector<double> x(n, 0.0);
  SaddleSolution sol;
  if (b2 == 0.0) {
    sol.u.assign(nu, 0.0);
    sol.p.assign(np, 0.0);
    sol.report = {0, 0.0, true};
    return sol;
  }

  // Preconditioned MINRES (Paige & Saunders).
  std::vector<double> r1 = b, r2 = b, y(n), v(n), wv(n, 0.0), w1(n, 0.0),
      w2(n, 0.0), tmp(n);
  precond(r1, y);
  double beta1 = dot_vec(r1, y);
  if (beta1 < 0.0) throw SingularSystem("saddle_solve: preconditioner not SPD");
  beta1 = std::sqrt(beta1);
  if (beta1 == 0.0) {
    sol.u.assign(nu, 0.0);
    sol.p.assign(np, 0.0);
    sol.report = {0, 0.0, true};
    return sol;
  }

  double oldb = 0.0, beta = beta1, dbar = 0.0, epsln = 0.0, phibar = beta1;
  double cs = -1.0, sn = 0.0;
  double best = phibar;
  int best_it = 0;
  SolveReport rep;
  double target = opt.tol * beta1;

  auto true_residual = [&](const std::vector<double>& xx) {
    K.apply(xx, tmp);
    double num = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = b[i] - tmp[i];
      num += d * d;
    }
    return std::sqrt(num) / b2;
  };

  for (int it = 1; it <= maxit; ++it) {
    for (int i = 0; i < n; ++i) v[i] = y[i] / beta;
    K.apply(v, y);
    if (it >= 2) axpy(-beta / oldb, r1, y);
    const double alfa = dot_vec(v, y);
    axpy(-alfa / beta, r2, y);
    r1 = r2;
    r2 = y;
    precond(r2, y);
    oldb = beta;
    double bb = dot_vec(r2, y);
    // bb = 0 is a lucky breakdown (Krylov space exhausted after this step);
    // tiny negative values are the same thing seen through rounding. Clamp,
    // finish the update for this step, and decide below.
    if (bb < 0.0) bb = 0.0;
    beta = std::sqrt(bb);

    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    double gamma = std::sqrt(gbar * gbar + beta * beta);
    gamma = std::max(gamma, 1e-300);
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;

    w1 = w2;
    w2 = wv;
    for (int i = 0; i < n; ++i)
      wv[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
    axpy(phi, wv, x);

    rep.iterations = it;
    rep.residual = phibar / beta1;

    if (phibar < best * opt.stall_factor) {
      best = phibar;
      best_it = it;
    } else if (it - best_it > opt.stall_window && best > 100.0 * target) {
      throw SingularSystem(
          "saddle_solve: residual stalled at relative " +
          std::to_string(best / beta1) + " after " + std::to_string(it) +
          " iterations (possible inf-sup violation)");
    }

    if (phibar <= target || beta == 0.0) {
      // Verify against the true residual; tighten and continue if needed.
      const double tr = true_residual(x);
      rep.residual = tr;
      if (tr <= opt.tol) {
        rep.converged = true;
        break;
      }
      if (beta == 0.0)
        throw SingularSystem(
            "saddle_solve: Krylov space exhausted at relative residual " +
            std::to_string(tr));
      target *= 0.1;
    }
  }
  if (!rep.converged) {
    const double tr = true_residual(x);
    rep.residual = tr;
    rep.converged = tr <= opt.tol;
    if (!rep.converged)
      throw NoConvergence("saddle_solve(minres): " +
                          std::to_string(rep.iterations) +
                          " iterations, relative residual " +
                          std::to_string(tr));
  }

  sol.u.assign(x.begin(), x.begin() + nu);
  sol.p.assign(x.begin() + nu, x.end());
  if (s.pressure_nullspace) sol.p = project_mean_zero(sol.p, s.pressure_weights);
  sol.report = rep;
  return sol;
}

SaddleSolution saddle_uzawa(const SaddleSystem& s, const SaddleOptions& opt) {
  const int nu = s.A.rows, np = s.B.rows;
  std::vector<double> w = s.pressure_weights;
  if (w.empty()) w.assign(np, 1.0);

  KrylovOptions inner;
  inner.tol = std::min(1e-12, opt.outer_tol * 1e-4);
  inner.maxit = opt.maxit > 0 ? opt.maxit : default_maxit(nu);

  // Schur complement S = B A^{-1} B^T, rhs = B A^{-1} f - g; CG on S with the
  // lumped pressure mass as preconditioner.
  auto apply_Ainv = [&](const std::vector<double>& rhs) {
    std::vector<double> out(nu, 0.0);
    cg_solve(s.A, rhs, out, inner);
    return out;
  };

  // S p = g - B A^{-1} f with S = B A^{-1} B^T.
  std::vector<double> Ainv_f = apply_Ainv(s.f);
  std::vector<double> rhs_p;
  s.B.multiply(Ainv_f, rhs_p);
  for (int i = 0; i < np; ++i) rhs_p[i] = s.g[i] - rhs_p[i];

  auto apply_S = [&](const std::vector<double>& p) {
    std::vector<double> btp;
    s.B.multiply_transpose(p, btp);
    std::vector<double> u = apply_Ainv(btp);
    std::vector<double> sp;
    s.B.multiply(u, sp);
    return sp;
  };
  auto project = [&](std::vector<double>& p) {
    if (s.pressure_nullspace) p = project_mean_zero(p, s.pressure_weights);
  };
  // The Schur complement annihilates the plain constant; keep the CG residual
  // and directions Euclidean-orthogonal to it so the iteration runs where S is
  // definite (the weighted projection above only normalizes the solution).
  auto project_ker = [&](std::vector<double>& p) {
    if (!s.pressure_nullspace) return;
    double mean = 0.0;
    for (double v : p) mean += v;
    mean /= static_cast<double>(p.size());
    for (double& v : p) v -= mean;
  };

  std::vector<double> p(np, 0.0), r = rhs_p;
  project_ker(r);
  const double rhs_norm = std::max(norm_vec(rhs_p), 1e-300);
  std::vector<double> z(np), q(np);
  for (int i = 0; i < np; ++i) z[i] = r[i] / w[i];
  project_ker(z);
  std::vector<double> d = z;
  double rz = dot_vec(r, z);
  const int outer_max = opt.maxit > 0 ? opt.maxit : default_maxit(np);
  double best = norm_vec(r) / rhs_norm;
  int best_it = 0;
  SolveReport rep;
  bool done = norm_vec(r) / rhs_norm <= opt.outer_tol;
  for (int it = 1; !done && it <= outer_max; ++it) {
    std::vector<double> Sd = apply_S(d);
    project_ker(Sd);
    const double dSd = dot_vec(d, Sd);
    if (dSd <= 0.0)
      throw SingularSystem("saddle_solve(uzawa): d·Sd = " +
                           std::to_string(dSd));
    const double alpha = rz / dSd;
    axpy(alpha, d, p);
    axpy(-alpha, Sd, r);
    const double rel = norm_vec(r) / rhs_norm;
    rep.iterations = it;
    rep.residual = rel;
    if (rel <= opt.outer_tol) {
      rep.converged = true;
      break;
    }
    if (rel < best * opt.stall_factor) {
      best = rel;
      best_it = it;
    } else if (it - best_it > std::max(20, opt.stall_window / 10) &&
               best > 10.0 * opt.outer_tol) {
      throw SingularSystem(
          "saddle_solve(uzawa): Schur iteration stalled at relative " +
          std::to_string(best) + " (possible inf-sup violation)");
    }
    for (int i = 0; i < np; ++i) z[i] = r[i] / w[i];
    project_ker(z);
    const double rz_new = dot_vec(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < np; ++i) d[i] = z[i] + beta * d[i];
  }
  if (!rep.converged && !done)
    throw NoConvergence("saddle_solve(uzawa): " + std::to_string(outer_max) +
                        " outer iterations, relative residual " +
                        std::to_string(rep.residual));

  // Recover velocity: u = A^{-1} (f + B^T p).
  std::vector<double> btp;
  s.B.multiply_transpose(p, btp);
  std::vector<double> fu = s.f;
  axpy(1.0, btp, fu);
  SaddleSolution sol;
  sol.u = apply_Ainv(fu);
  project(p);
  sol.p = std::move(p);
  sol.report = rep;
  sol.report.converged = true;
  return sol;
}

}  // namespace

SaddleSolution saddle_solve(const SaddleSystem& s, const SaddleOptions& opt) {
  s.validate();
  if (opt.method == SaddleMethod::uzawa) return saddle_uzawa(s, opt);
  return saddle_minres(s, opt);
}

// ---------------------------------------------------------------------------
// Generalized eigenvalue iteration
// ---------------------------------------------------------------------------
double rayleigh_quotient(const SparseMatrix& A, const SparseMatrix& M,
                         const std::vector<double>& v) {
  std::vector<double> Av, Mv;
  A.multiply(v, Av);
  M.multiply(v, Mv);
  return dot_vec(v, Av) / dot_vec(v, Mv);
}

EigResult min_generalized_eig(const SparseMatrix& A, const SparseMatrix& M,
                              double tol, int maxit) {
  const int n = A.rows;
  assert(A.cols == n && M.rows == n && M.cols == n);
  // Deterministic, generic start vector.
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    const uint32_t h = static_cast<uint32_t>(i) * 2654435761u;
    x[i] = 1.0 + static_cast<double>(h) / 4294967296.0;
  }

  KrylovOptions inner;
  inner.tol = std::min(1e-12, tol * 1e-3);

  std::vector<double> Mx, y;
  double lambda_prev = 0.0;
  EigResult res;
  for (int it = 1; it <= maxit; ++it) {
    M.multiply(x, Mx);
    y.assign(n, 0.0);
    cg_solve(A, Mx, y, inner);
    // Normalize in the M-inner product.
    std::vector<double> My;
    M.multiply(y, My);
    const double m2 = dot_vec(y, My);
    if (m2 <= 0.0) throw SingularSystem("min_generalized_eig: M not SPD");
    const double scale = 1.0 / std::sqrt(m2);
    for (int i = 0; i < n; ++i) y[i] *= scale;
    const double lambda = rayleigh_quotient(A, M, y);
    res.iterations = it;
    if (it > 1 && std::abs(lambda - lambda_prev) <=
                      tol * std::max(1.0, std::abs(lambda))) {
      res.v = y;
      res.lambda = rayleigh_quotient(A, M, res.v);
      return res;
    }
    lambda_prev = lambda;
    x = y;
  }
  throw NoConvergence("min_generalized_eig: " + std::to_string(maxit) +
                      " iterations without Rayleigh quotient stagnation");
}

// ---------------------------------------------------------------------------
// Mean projection
// ---------------------------------------------------------------------------
std::vector<double> project_mean_zero(const std::vector<double>& p,
                                      const std::vector<double>& weights) {
  std::vector<double> out = p;
  if (p.empty()) return out;
  double s = 0.0, tot = 0.0;
  if (weights.empty()) {
    for (double v : p) s += v;
    tot = static_cast<double>(p.size());
  } else {
    assert(weights.size() == p.size());
    for (size_t i = 0; i < p.size(); ++i) {
      s += weights[i] * p[i];
      tot += weights[i];
    }
  }
  const double mean = s / tot;
  for (double& v : out) v -= mean;
  return out;
}

}  // namespace evodarcy
