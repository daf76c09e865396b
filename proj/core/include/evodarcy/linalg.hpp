#pragma once
// Sparse CSR storage and the iterative solvers used throughout: Jacobi-CG,
// MINRES and Uzawa for saddle-point systems, inverse-power generalized
// eigenvalue iteration, weighted mean projection.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "evodarcy/common.hpp"

namespace evodarcy {

// ---------------------------------------------------------------------------
// CSR sparse matrix.
// ---------------------------------------------------------------------------
struct SparseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int64_t> row_ptr;  // size rows+1
  std::vector<int32_t> col;      // size nnz, sorted within each row
  std::vector<double> val;       // size nnz
  bool symmetric_hint = false;

  int64_t nnz() const { return static_cast<int64_t>(col.size()); }

  /// y = A x  (y resized).
  void multiply(const std::vector<double>& x, std::vector<double>& y) const;
  std::vector<double> multiply(const std::vector<double>& x) const;

  /// y = A^T x  (y resized).
  void multiply_transpose(const std::vector<double>& x,
                          std::vector<double>& y) const;

  /// Reference to the stored entry (r,c); throws std::out_of_range if the
  /// pattern does not contain it.
  double& coeff_ref(int r, int c);
  /// Value at (r,c), 0 if not in the pattern.
  double coeff(int r, int c) const;

  std::vector<double> diagonal() const;

  /// Check the structural invariants (sorted, in-range columns; when the
  /// symmetric hint is set, spot-check symmetry on a deterministic sample of
  /// stored indices). Throws AsymmetryExceeded / std::logic_error.
  void validate(int sample = 64) const;

  /// Build from dense row-major data, dropping exact zeros (test/support use).
  static SparseMatrix from_dense(const std::vector<std::vector<double>>& dense);

  /// Build from (row, col, value) triplets; duplicate entries are summed.
  static SparseMatrix from_triplets(int rows, int cols,
                                    std::vector<std::array<int, 2>> idx,
                                    const std::vector<double>& values);

  /// Matrix Market coordinate-format text dump (debug interface).
  void dump_matrix_market(std::ostream& os) const;
  void dump_matrix_market_file(const std::string& path) const;
};

/// Incremental CSR builder for assemblers that can enumerate the exact
/// column set of each row up front: call begin_row in row order, add columns
/// (unsorted, duplicates allowed), finish().
class CsrBuilder {
 public:
  CsrBuilder(int rows, int cols, int64_t nnz_estimate = 0);
  void begin_row(int r);                // rows must be begun in order 0..rows-1
  void add(int c);                      // column for the current row
  SparseMatrix finish(bool symmetric_hint = false);

 private:
  SparseMatrix m_;
  int next_row_ = 0;
};

// ---------------------------------------------------------------------------
// Solvers.
// ---------------------------------------------------------------------------
struct SolveReport {
  int iterations = 0;
  double residual = 0.0;  // final relative residual
  bool converged = false;
};

struct KrylovOptions {
  double tol = 1e-10;   // relative residual target
  int maxit = 0;        // 0 -> default rule max(200, 20*sqrt(dof))
  bool jacobi = true;   // diagonal preconditioning
};

int default_maxit(int64_t dof);

/// Preconditioned conjugate gradients for SPD systems. x holds the initial
/// guess on entry and the solution on exit.
/// Throws NoConvergence (budget exhausted) or SingularSystem (p·Ap <= 0).
SolveReport cg_solve(const SparseMatrix& M, const std::vector<double>& b,
                     std::vector<double>& x, const KrylovOptions& opt = {});

/// Saddle-point system
///     A u - B^T p = f
///     B u         = g
/// with A symmetric positive (semi-)definite on ker B and B the
/// divergence-coupling block (rows = pressure dofs, cols = velocity dofs).
struct SaddleSystem {
  SparseMatrix A;
  SparseMatrix B;
  std::vector<double> f;
  std::vector<double> g;
  /// Set when the pressure is only determined up to a constant; p is then
  /// sought with zero weighted mean and g must have zero mean.
  bool pressure_nullspace = false;
  /// Positive weights for the pressure inner product (mean projection and
  /// Schur/mass preconditioning); empty -> all ones.
  std::vector<double> pressure_weights;

  void validate() const;  // dimension checks; throws std::logic_error
};

enum class SaddleMethod { minres, uzawa };

struct SaddleOptions {
  double tol = 1e-10;       // relative residual target for MINRES
  double outer_tol = 1e-8;  // Uzawa outer tolerance
  int maxit = 0;            // 0 -> default rule
  SaddleMethod method = SaddleMethod::minres;
  /// Stall detection: throw SingularSystem if the best residual has not
  /// improved by at least stall_factor over stall_window iterations.
  int stall_window = 250;
  double stall_factor = 0.999;
};

struct SaddleSolution {
  std::vector<double> u;
  std::vector<double> p;
  SolveReport report;
};

SaddleSolution saddle_solve(const SaddleSystem& s,
                            const SaddleOptions& opt = {});

/// Smallest eigenvalue of the pencil A v = lambda M v (A sym PSD, M SPD) by
/// inverse power iteration with CG inner solves. Deterministic start vector.
/// The returned lambda is computed as the Rayleigh quotient of the returned
/// vector (same arithmetic as rayleigh_quotient below).
struct EigResult {
  double lambda = 0.0;
  std::vector<double> v;
  int iterations = 0;
};

EigResult min_generalized_eig(const SparseMatrix& A, const SparseMatrix& M,
                              double tol = 1e-8, int maxit = 500);

double rayleigh_quotient(const SparseMatrix& A, const SparseMatrix& M,
                         const std::vector<double>& v);

/// Subtract the weighted mean: result_i = p_i - (sum w_j p_j / sum w_j).
/// weights must be positive; empty weights -> uniform.
std::vector<double> project_mean_zero(const std::vector<double>& p,
                                      const std::vector<double>& weights);

// Small dense helpers shared by solvers and tests.
double dot_vec(const std::vector<double>& a, const std::vector<double>& b);
double norm_vec(const std::vector<double>& a);
void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y);

}  // namespace evodarcy
