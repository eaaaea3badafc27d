#pragma once

// Truncated Fock-space algebra for two cavities (A, B) and a three-level
// ancilla. Basis index = ((i_a * n_b) + i_b) * n_q + i_q with ancilla levels
// g=0, e=1, f=2. A state with the ancilla traced out uses n_q = 1; a traced
// cavity is represented by a cutoff of 1.

#include <Eigen/Dense>
#include <complex>
#include <initializer_list>
#include <set>
#include <vector>

namespace twobox {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

enum class Mode { A, B, Ancilla };

class SystemDims {
 public:
  SystemDims() = default;
  SystemDims(int n_a, int n_b, int n_q = 3);

  int n_a() const { return n_a_; }
  int n_b() const { return n_b_; }
  int n_q() const { return n_q_; }
  int size(Mode mode) const;
  int total() const { return n_a_ * n_b_ * n_q_; }
  int index(int i_a, int i_b, int i_q = 0) const { return (i_a * n_b_ + i_b) * n_q_ + i_q; }
  bool has_ancilla() const { return n_q_ == 3; }
  SystemDims cavities() const { return SystemDims(n_a_, n_b_, 1); }

  bool operator==(const SystemDims&) const = default;

 private:
  int n_a_ = 12;
  int n_b_ = 12;
  int n_q_ = 3;
};

// ---------------------------------------------------------------------------
// Single-mode building blocks (plain matrices / vectors of size dim).

struct ModeState {
  Vector amplitudes;
  double truncation_weight = 0.0;  // 1 - sum |c_n|^2 before renormalization
};

Vector fock_state(int dim, int n);
ModeState coherent_state(int dim, cplx alpha, bool renormalize = true);
// N(|alpha> + e^{i phase}|-alpha>) on one mode.
ModeState single_mode_cat(int dim, cplx alpha, double phase, bool renormalize = true);

Matrix annihilation(int dim);
Matrix number(int dim);
Matrix parity(int dim);

enum class DisplacementMethod { Expm, Analytic };

// Exact matrix elements <m|D(beta)|n> for m, n < dim. Neither method is
// unitary on the truncated space: both represent the untruncated operator.
Matrix displacement(int dim, cplx beta, DisplacementMethod method = DisplacementMethod::Analytic);
// Rows < rows, columns < cols of the untruncated displacement.
Matrix displacement_block(int rows, int cols, cplx beta);
// exp(beta a^dag - beta^* a) built from the truncated generator. Unitary on
// the truncated space; accurate only for states well inside the cutoff.
Matrix displacement_unitary(int dim, cplx beta);
// K(beta) = D(beta) P D(beta)^dag = D(2 beta) P, exact elements.
Matrix displaced_parity_matrix(int dim, cplx beta);
// Generalized Laguerre L_n^{(k)}(x) for n = 0..n_max.
RealVector laguerre_sequence(int n_max, double k, double x);

// |beta| > sqrt(dim)/2: results are still exact for states inside the cutoff,
// but the phase-space region probed is near the truncation edge.
bool exceeds_truncation_guard(int dim, cplx beta);

// ---------------------------------------------------------------------------
// Full-space objects.

class QOperator {
 public:
  QOperator(SystemDims dims, Matrix data);

  const SystemDims& dims() const { return dims_; }
  const Matrix& data() const { return data_; }

  QOperator adjoint() const { return QOperator(dims_, data_.adjoint()); }
  QOperator operator*(const QOperator& other) const;
  bool is_hermitian(double tol = 1e-12) const;
  bool is_unitary(double tol = 1e-10) const;

 private:
  SystemDims dims_;
  Matrix data_;
};

class StateVector {
 public:
  // Amplitudes must already be normalized to 1e-10.
  StateVector(SystemDims dims, Vector amplitudes, double truncation_weight = 0.0);
  // Divides by the norm; rejects a zero vector.
  static StateVector normalized(SystemDims dims, const Vector& amplitudes, double truncation_weight = 0.0);

  const SystemDims& dims() const { return dims_; }
  const Vector& amplitudes() const { return amps_; }
  double truncation_weight() const { return truncation_weight_; }

 private:
  SystemDims dims_;
  Vector amps_;
  double truncation_weight_ = 0.0;
};

class DensityMatrix {
 public:
  // Validates Hermiticity (then symmetrizes exactly) and unit trace.
  DensityMatrix(SystemDims dims, const Matrix& data);
  explicit DensityMatrix(const StateVector& psi);

  const SystemDims& dims() const { return dims_; }
  const Matrix& data() const { return data_; }
  double min_eigenvalue() const;
  // Throws ValidationError when an eigenvalue is below -tol.
  void check_positive(double tol = 1e-9) const;

 private:
  SystemDims dims_;
  Matrix data_;
};

// Product state |a>|b>|level>, or |a>|b> when dims has no ancilla.
StateVector product_state(const SystemDims& dims, const Vector& mode_a, const Vector& mode_b, int ancilla_level = 0);

// N(|alpha_a, alpha_b> + e^{i phase}|-alpha_a, -alpha_b>) (x) |g>.
StateVector two_mode_cat(const SystemDims& dims, cplx alpha_a, cplx alpha_b, double phase, bool renormalize = true);

QOperator embed(const Matrix& op, Mode mode, const SystemDims& dims);
// op_a (x) op_b (x) op_q; op_q may be 1x1 for a cavity-only space.
QOperator tensor(const Matrix& op_a, const Matrix& op_b, const Matrix& op_q);
QOperator joint_parity(const SystemDims& dims);
QOperator identity(const SystemDims& dims);

// Efficient local application without forming the full-space operator.
Vector apply_mode(const Matrix& op, Mode mode, const SystemDims& dims, const Vector& v);
// op acting on the row index of every column of m.
Matrix apply_mode_left(const Matrix& op, Mode mode, const SystemDims& dims, const Matrix& m);
// op * rho * op^dag.
Matrix conjugate_mode(const Matrix& op, Mode mode, const SystemDims& dims, const Matrix& rho);

DensityMatrix partial_trace(const DensityMatrix& rho, const std::set<Mode>& keep);
// Cavity-only density matrix (ancilla traced); a no-op when already traced.
DensityMatrix cavity_state(const DensityMatrix& rho);

cplx expectation(const DensityMatrix& rho, const QOperator& op);
cplx expectation(const StateVector& psi, const QOperator& op);
double fidelity(const DensityMatrix& rho, const StateVector& target);
double fidelity(const StateVector& a, const StateVector& b);
// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma);
double purity(const DensityMatrix& rho);
// Tr[rho (op_a (x) op_b)] for a cavity-only rho (n_q = 1).
cplx product_expectation(const DensityMatrix& rho, const Matrix& op_a, const Matrix& op_b);

// Keeps Fock components below the target cutoffs, renormalizes, and records
// the discarded weight. Ancilla layouts must match.
StateVector truncate_state(const StateVector& psi, const SystemDims& target);
// Zero-pads cavities up to larger cutoffs.
StateVector pad_state(const StateVector& psi, const SystemDims& target);

}  // namespace twobox
