#include "twobox/hilbert.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>
#include <cmath>
#include <string>

#include "twobox/errors.hpp"

namespace twobox {

namespace {

void require_dim(int dim, const char* what) {
  if (dim < 1) throw ValidationError(std::string(what) + ": dimension must be >= 1");
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector kron(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

// Layout of one mode inside the full index: index = outer * size * stride + i * stride + inner.
struct ModeLayout {
  int size;
  int stride;
  int outer;
};

ModeLayout layout(Mode mode, const SystemDims& dims) {
  switch (mode) {
    case Mode::A: return {dims.n_a(), dims.n_b() * dims.n_q(), 1};
    case Mode::B: return {dims.n_b(), dims.n_q(), dims.n_a()};
    case Mode::Ancilla: return {dims.n_q(), 1, dims.n_a() * dims.n_b()};
  }
  throw ValidationError("unknown mode");
}

void check_local(const Matrix& op, Mode mode, const SystemDims& dims) {
  const int s = dims.size(mode);
  if (op.rows() != s || op.cols() != s)
    throw ValidationError("mode-local operator size " + std::to_string(op.rows()) + " does not match mode dimension " +
                          std::to_string(s));
}

void apply_in_place(const Matrix& op, const ModeLayout& l, cplx* data) {
  using Stride = Eigen::OuterStride<>;
  const Matrix op_t = op.transpose();
  for (int o = 0; o < l.outer; ++o) {
    Eigen::Map<Matrix, 0, Stride> block(data + static_cast<std::ptrdiff_t>(o) * l.size * l.stride, l.stride, l.size,
                                        Stride(l.stride));
    Matrix updated = block * op_t;
    block = updated;
  }
}

}  // namespace

SystemDims::SystemDims(int n_a, int n_b, int n_q) : n_a_(n_a), n_b_(n_b), n_q_(n_q) {
  if (n_a < 1 || n_b < 1) throw ValidationError("cavity cutoffs must be >= 1");
  if (n_q != 1 && n_q != 3) throw ValidationError("ancilla must have 3 levels (or 1 when traced out)");
}

int SystemDims::size(Mode mode) const {
  switch (mode) {
    case Mode::A: return n_a_;
    case Mode::B: return n_b_;
    case Mode::Ancilla: return n_q_;
  }
  return 0;
}

// ---------------------------------------------------------------------------

Vector fock_state(int dim, int n) {
  require_dim(dim, "fock_state");
  if (n < 0 || n >= dim) throw std::out_of_range("fock_state: n=" + std::to_string(n) + " outside [0, " +
                                                 std::to_string(dim) + ")");
  Vector v = Vector::Zero(dim);
  v(n) = 1.0;
  return v;
}

ModeState coherent_state(int dim, cplx alpha, bool renormalize) {
  require_dim(dim, "coherent_state");
  Vector c(dim);
  c(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < dim; ++n) c(n) = c(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  const double kept = c.squaredNorm();
  ModeState out{c, std::max(0.0, 1.0 - kept)};
  if (renormalize) out.amplitudes /= std::sqrt(kept);
  return out;
}

ModeState single_mode_cat(int dim, cplx alpha, double phase, bool renormalize) {
  const ModeState plus = coherent_state(dim, alpha, false);
  const ModeState minus = coherent_state(dim, -alpha, false);
  Vector v = plus.amplitudes + std::polar(1.0, phase) * minus.amplitudes;
  const double exact = 2.0 * (1.0 + std::cos(phase) * std::exp(-2.0 * std::norm(alpha)));
  const double kept = v.squaredNorm();
  if (exact < 1e-24 || kept < 1e-24) throw ValidationError("single_mode_cat: superposition vanishes");
  ModeState out{v, std::max(0.0, 1.0 - kept / exact)};
  out.amplitudes /= renormalize ? std::sqrt(kept) : std::sqrt(exact);
  return out;
}

Matrix annihilation(int dim) {
  require_dim(dim, "annihilation");
  Matrix a = Matrix::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

Matrix number(int dim) {
  require_dim(dim, "number");
  Matrix m = Matrix::Zero(dim, dim);
  for (int n = 0; n < dim; ++n) m(n, n) = static_cast<double>(n);
  return m;
}

Matrix parity(int dim) {
  require_dim(dim, "parity");
  Matrix m = Matrix::Zero(dim, dim);
  for (int n = 0; n < dim; ++n) m(n, n) = (n % 2 == 0) ? 1.0 : -1.0;
  return m;
}

RealVector laguerre_sequence(int n_max, double k, double x) {
  RealVector l(n_max + 1);
  l(0) = 1.0;
  if (n_max >= 1) l(1) = 1.0 + k - x;
  for (int j = 1; j < n_max; ++j) l(j + 1) = ((2.0 * j + 1.0 + k - x) * l(j) - (j + k) * l(j - 1)) / (j + 1.0);
  return l;
}

Matrix displacement_block(int rows, int cols, cplx beta) {
  require_dim(rows, "displacement_block");
  require_dim(cols, "displacement_block");
  Matrix d = Matrix::Zero(rows, cols);
  const double r = std::abs(beta);
  if (r == 0.0) {
    for (int i = 0; i < std::min(rows, cols); ++i) d(i, i) = 1.0;
    return d;
  }
  const double x = r * r;
  const double theta = std::arg(beta);
  const double log_r = std::log(r);
  const int diag = std::min(rows, cols);
  const int kmax = std::max(rows, cols) - 1;
  for (int k = 0; k <= kmax; ++k) {
    const RealVector lag = laguerre_sequence(diag - 1, k, x);
    // m = n + k >= n: sqrt(n!/m!) beta^k e^{-x/2} L_n^{(k)}(x)
    for (int n = 0; n < cols && n + k < rows; ++n) {
      const int m = n + k;
      const double mag = std::exp(0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0)) + k * log_r - 0.5 * x);
      d(m, n) = std::polar(mag * lag(n), k * theta);
    }
    if (k == 0) continue;
    // n = m + k > m: sqrt(m!/n!) (-beta^*)^k e^{-x/2} L_m^{(k)}(x)
    for (int m = 0; m < rows && m + k < cols; ++m) {
      const int n = m + k;
      const double mag = std::exp(0.5 * (std::lgamma(m + 1.0) - std::lgamma(n + 1.0)) + k * log_r - 0.5 * x);
      d(m, n) = std::polar(mag * lag(m), k * (kPi - theta));
    }
  }
  return d;
}

Matrix displacement_unitary(int dim, cplx beta) {
  require_dim(dim, "displacement_unitary");
  const Matrix a = annihilation(dim);
  const Matrix gen = beta * a.adjoint() - std::conj(beta) * a;
  return gen.exp();
}

Matrix displacement(int dim, cplx beta, DisplacementMethod method) {
  require_dim(dim, "displacement");
  if (method == DisplacementMethod::Analytic) return displacement_block(dim, dim, beta);
  // Exponentiate in a padded space so the leading block carries the exact
  // elements rather than the edge-distorted truncated-generator ones.
  const double r = std::abs(beta);
  const int pad = 40 + static_cast<int>(std::ceil(r * r + 10.0 * r + 2.0 * r * std::sqrt(static_cast<double>(dim))));
  return displacement_unitary(dim + pad, beta).topLeftCorner(dim, dim);
}

Matrix displaced_parity_matrix(int dim, cplx beta) {
  Matrix k = displacement_block(dim, dim, 2.0 * beta);
  for (int n = 1; n < dim; n += 2) k.col(n) *= -1.0;
  return k;
}

bool exceeds_truncation_guard(int dim, cplx beta) { return std::abs(beta) > 0.5 * std::sqrt(static_cast<double>(dim)); }

// ---------------------------------------------------------------------------

QOperator::QOperator(SystemDims dims, Matrix data) : dims_(dims), data_(std::move(data)) {
  if (data_.rows() != dims_.total() || data_.cols() != dims_.total())
    throw ValidationError("QOperator: matrix size does not match dims");
}

QOperator QOperator::operator*(const QOperator& other) const {
  if (!(dims_ == other.dims_)) throw ValidationError("QOperator product: dims mismatch");
  return QOperator(dims_, data_ * other.data_);
}

bool QOperator::is_hermitian(double tol) const { return (data_ - data_.adjoint()).cwiseAbs().maxCoeff() < tol; }

bool QOperator::is_unitary(double tol) const {
  const Matrix id = Matrix::Identity(data_.rows(), data_.cols());
  return (data_ * data_.adjoint() - id).cwiseAbs().maxCoeff() < tol;
}

StateVector::StateVector(SystemDims dims, Vector amplitudes, double truncation_weight)
    : dims_(dims), amps_(std::move(amplitudes)), truncation_weight_(truncation_weight) {
  if (amps_.size() != dims_.total()) throw ValidationError("StateVector: amplitude count does not match dims");
  if (std::abs(amps_.norm() - 1.0) > 1e-10) throw ValidationError("StateVector: amplitudes are not normalized");
}

StateVector StateVector::normalized(SystemDims dims, const Vector& amplitudes, double truncation_weight) {
  const double n = amplitudes.norm();
  if (!(n > 1e-300) || !std::isfinite(n)) throw ValidationError("StateVector: cannot normalize a zero vector");
  return StateVector(dims, amplitudes / n, truncation_weight);
}

DensityMatrix::DensityMatrix(SystemDims dims, const Matrix& data) : dims_(dims) {
  if (data.rows() != dims.total() || data.cols() != dims.total())
    throw ValidationError("DensityMatrix: matrix size does not match dims");
  if (!data.allFinite()) throw ValidationError("DensityMatrix: non-finite entries");
  const double scale = std::max(1.0, data.cwiseAbs().maxCoeff());
  if ((data - data.adjoint()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw ValidationError("DensityMatrix: matrix is not Hermitian");
  data_ = 0.5 * (data + data.adjoint());
  const double tr = data_.trace().real();
  if (std::abs(tr - 1.0) > 1e-9) throw ValidationError("DensityMatrix: trace " + std::to_string(tr) + " != 1");
}

DensityMatrix::DensityMatrix(const StateVector& psi)
    : DensityMatrix(psi.dims(), psi.amplitudes() * psi.amplitudes().adjoint()) {}

double DensityMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(data_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void DensityMatrix::check_positive(double tol) const {
  const double lo = min_eigenvalue();
  if (lo < -tol) throw ValidationError("DensityMatrix: negative eigenvalue " + std::to_string(lo));
}

// ---------------------------------------------------------------------------

StateVector product_state(const SystemDims& dims, const Vector& mode_a, const Vector& mode_b, int ancilla_level) {
  if (mode_a.size() != dims.n_a() || mode_b.size() != dims.n_b())
    throw ValidationError("product_state: factor sizes do not match dims");
  if (ancilla_level < 0 || ancilla_level >= dims.n_q()) throw std::out_of_range("product_state: ancilla level");
  Vector q = Vector::Zero(dims.n_q());
  q(ancilla_level) = 1.0;
  return StateVector::normalized(dims, kron(kron(mode_a, mode_b), q));
}

StateVector two_mode_cat(const SystemDims& dims, cplx alpha_a, cplx alpha_b, double phase, bool renormalize) {
  const Vector pa = coherent_state(dims.n_a(), alpha_a, false).amplitudes;
  const Vector pb = coherent_state(dims.n_b(), alpha_b, false).amplitudes;
  const Vector ma = coherent_state(dims.n_a(), -alpha_a, false).amplitudes;
  const Vector mb = coherent_state(dims.n_b(), -alpha_b, false).amplitudes;
  Vector cav = kron(pa, pb) + std::polar(1.0, phase) * kron(ma, mb);
  const double overlap = std::exp(-2.0 * (std::norm(alpha_a) + std::norm(alpha_b)));
  const double exact = 2.0 * (1.0 + std::cos(phase) * overlap);
  const double kept = cav.squaredNorm();
  if (exact < 1e-24 || kept < 1e-24) throw ValidationError("two_mode_cat: superposition vanishes (alpha = 0, phase = pi)");
  const double weight = std::max(0.0, 1.0 - kept / exact);
  if (!renormalize && weight > 1e-10)
    throw ValidationError("two_mode_cat: truncation weight too large without renormalization");
  cav /= renormalize ? std::sqrt(kept) : std::sqrt(exact);
  Vector q = Vector::Zero(dims.n_q());
  q(0) = 1.0;
  return StateVector::normalized(dims, kron(cav, q), weight);
}

QOperator tensor(const Matrix& op_a, const Matrix& op_b, const Matrix& op_q) {
  if (op_a.rows() != op_a.cols() || op_b.rows() != op_b.cols() || op_q.rows() != op_q.cols())
    throw ValidationError("tensor: factors must be square");
  SystemDims dims(static_cast<int>(op_a.rows()), static_cast<int>(op_b.rows()), static_cast<int>(op_q.rows()));
  return QOperator(dims, kron(kron(op_a, op_b), op_q));
}

QOperator embed(const Matrix& op, Mode mode, const SystemDims& dims) {
  check_local(op, mode, dims);
  const Matrix ia = Matrix::Identity(dims.n_a(), dims.n_a());
  const Matrix ib = Matrix::Identity(dims.n_b(), dims.n_b());
  const Matrix iq = Matrix::Identity(dims.n_q(), dims.n_q());
  switch (mode) {
    case Mode::A: return tensor(op, ib, iq);
    case Mode::B: return tensor(ia, op, iq);
    case Mode::Ancilla: return tensor(ia, ib, op);
  }
  throw ValidationError("embed: unknown mode");
}

QOperator joint_parity(const SystemDims& dims) {
  return tensor(parity(dims.n_a()), parity(dims.n_b()), Matrix::Identity(dims.n_q(), dims.n_q()));
}

QOperator identity(const SystemDims& dims) { return QOperator(dims, Matrix::Identity(dims.total(), dims.total())); }

Vector apply_mode(const Matrix& op, Mode mode, const SystemDims& dims, const Vector& v) {
  check_local(op, mode, dims);
  if (v.size() != dims.total()) throw ValidationError("apply_mode: vector size mismatch");
  Vector out = v;
  apply_in_place(op, layout(mode, dims), out.data());
  return out;
}

Matrix apply_mode_left(const Matrix& op, Mode mode, const SystemDims& dims, const Matrix& m) {
  check_local(op, mode, dims);
  if (m.rows() != dims.total()) throw ValidationError("apply_mode_left: row count mismatch");
  Matrix out = m;
  const ModeLayout l = layout(mode, dims);
  for (Eigen::Index c = 0; c < out.cols(); ++c) apply_in_place(op, l, out.col(c).data());
  return out;
}

Matrix conjugate_mode(const Matrix& op, Mode mode, const SystemDims& dims, const Matrix& rho) {
  const Matrix left = apply_mode_left(op, mode, dims, rho);
  return apply_mode_left(op, mode, dims, left.adjoint()).adjoint();
}

DensityMatrix partial_trace(const DensityMatrix& rho, const std::set<Mode>& keep) {
  if (keep.empty()) throw ValidationError("partial_trace: keep-set is empty");
  const SystemDims& d = rho.dims();
  const bool ka = keep.count(Mode::A) > 0;
  const bool kb = keep.count(Mode::B) > 0;
  const bool kq = keep.count(Mode::Ancilla) > 0;
  const SystemDims out_dims(ka ? d.n_a() : 1, kb ? d.n_b() : 1, kq ? d.n_q() : 1);
  Matrix out = Matrix::Zero(out_dims.total(), out_dims.total());
  const Matrix& m = rho.data();
  for (int a = 0; a < d.n_a(); ++a)
    for (int b = 0; b < d.n_b(); ++b)
      for (int q = 0; q < d.n_q(); ++q) {
        const int row = d.index(a, b, q);
        const int orow = out_dims.index(ka ? a : 0, kb ? b : 0, kq ? q : 0);
        for (int a2 = 0; a2 < d.n_a(); ++a2) {
          if (!ka && a2 != a) continue;
          for (int b2 = 0; b2 < d.n_b(); ++b2) {
            if (!kb && b2 != b) continue;
            for (int q2 = 0; q2 < d.n_q(); ++q2) {
              if (!kq && q2 != q) continue;
              out(orow, out_dims.index(ka ? a2 : 0, kb ? b2 : 0, kq ? q2 : 0)) += m(row, d.index(a2, b2, q2));
            }
          }
        }
      }
  return DensityMatrix(out_dims, out);
}

DensityMatrix cavity_state(const DensityMatrix& rho) {
  if (!rho.dims().has_ancilla()) return rho;
  return partial_trace(rho, {Mode::A, Mode::B});
}

cplx expectation(const DensityMatrix& rho, const QOperator& op) {
  if (!(rho.dims() == op.dims())) throw ValidationError("expectation: dims mismatch");
  return (rho.data().cwiseProduct(op.data().transpose())).sum();
}

cplx expectation(const StateVector& psi, const QOperator& op) {
  if (!(psi.dims() == op.dims())) throw ValidationError("expectation: dims mismatch");
  return psi.amplitudes().dot(op.data() * psi.amplitudes());
}

double fidelity(const DensityMatrix& rho, const StateVector& target) {
  if (!(rho.dims() == target.dims())) throw ValidationError("fidelity: dims mismatch");
  return target.amplitudes().dot(rho.data() * target.amplitudes()).real();
}

double fidelity(const StateVector& a, const StateVector& b) {
  if (!(a.dims() == b.dims())) throw ValidationError("fidelity: dims mismatch");
  return std::norm(a.amplitudes().dot(b.amplitudes()));
}

double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (!(rho.dims() == sigma.dims())) throw ValidationError("fidelity: dims mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho.data());
  const double cut = 1e-13 * std::max(1.0, es.eigenvalues().maxCoeff());
  const RealVector root = es.eigenvalues().unaryExpr([cut](double x) { return x > cut ? std::sqrt(x) : 0.0; });
  const Matrix sq = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().adjoint();
  const Matrix inner = sq * sigma.data() * sq;
  Eigen::SelfAdjointEigenSolver<Matrix> es2(0.5 * (inner + inner.adjoint()), Eigen::EigenvaluesOnly);
  const double s = es2.eigenvalues().unaryExpr([cut](double x) { return x > cut ? std::sqrt(x) : 0.0; }).sum();
  return s * s;
}

double purity(const DensityMatrix& rho) { return rho.data().cwiseAbs2().sum(); }

cplx product_expectation(const DensityMatrix& rho, const Matrix& op_a, const Matrix& op_b) {
  const SystemDims& d = rho.dims();
  if (d.n_q() != 1) throw ValidationError("product_expectation: expects a cavity-only state");
  const int na = d.n_a(), nb = d.n_b();
  if (op_a.rows() != na || op_a.cols() != na || op_b.rows() != nb || op_b.cols() != nb)
    throw ValidationError("product_expectation: operator dimension mismatch");
  const Matrix op_b_t = op_b.transpose();
  cplx sum = 0.0;
  for (int i = 0; i < na; ++i)
    for (int m = 0; m < na; ++m) {
      if (op_a(m, i) == cplx(0.0)) continue;
      sum += op_a(m, i) * rho.data().block(i * nb, m * nb, nb, nb).cwiseProduct(op_b_t).sum();
    }
  return sum;
}

StateVector truncate_state(const StateVector& psi, const SystemDims& target) {
  const SystemDims& d = psi.dims();
  if (target.n_q() != d.n_q()) throw ValidationError("truncate_state: ancilla layout mismatch");
  if (target.n_a() > d.n_a() || target.n_b() > d.n_b()) throw ValidationError("truncate_state: target larger than source");
  Vector out(target.total());
  for (int a = 0; a < target.n_a(); ++a)
    for (int b = 0; b < target.n_b(); ++b)
      for (int q = 0; q < d.n_q(); ++q) out(target.index(a, b, q)) = psi.amplitudes()(d.index(a, b, q));
  const double kept = out.squaredNorm();
  return StateVector::normalized(target, out, psi.truncation_weight() + std::max(0.0, 1.0 - kept));
}

StateVector pad_state(const StateVector& psi, const SystemDims& target) {
  const SystemDims& d = psi.dims();
  if (target.n_q() != d.n_q()) throw ValidationError("pad_state: ancilla layout mismatch");
  if (target.n_a() < d.n_a() || target.n_b() < d.n_b()) throw ValidationError("pad_state: target smaller than source");
  Vector out = Vector::Zero(target.total());
  for (int a = 0; a < d.n_a(); ++a)
    for (int b = 0; b < d.n_b(); ++b)
      for (int q = 0; q < d.n_q(); ++q) out(target.index(a, b, q)) = psi.amplitudes()(d.index(a, b, q));
  return StateVector(target, out, psi.truncation_weight());
}

}  // namespace twobox
