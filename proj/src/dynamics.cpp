#include "twobox/dynamics.hpp"

#include <cmath>
#include <string>

#include "twobox/errors.hpp"

namespace twobox {

namespace {

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
}

void require_nonnegative_time(double t, const char* what) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError(std::string(what) + ": time must be finite and >= 0");
}

double binomial(int n, int k) { return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)); }

}  // namespace

double DeviceParams::chi(Mode mode, int level) const {
  const bool a = mode == Mode::A;
  switch (level) {
    case 0: return 0.0;
    case 1: return a ? chi_ge_a : chi_ge_b;
    case 2: return a ? chi_gf_a() : chi_gf_b();
    default: throw std::out_of_range("ancilla level must be 0, 1 or 2");
  }
}

void DeviceParams::validate() const {
  for (double v : {chi_ge_a, chi_ge_b, chi_ef_a, chi_ef_b, kerr_a, kerr_b, kerr_ab})
    if (!std::isfinite(v)) throw ValidationError("device rates must be finite");
  if (!(t1_a > 0.0) || !(t1_b > 0.0)) throw ValidationError("cavity lifetimes must be > 0");
  require_probability(parity_visibility, "parity_visibility");
  require_probability(prep_error, "prep_error");
  require_probability(readout_error, "readout_error");
}

void NoiseConfig::validate() const {
  if (!(parity_phase_error >= -0.5 && parity_phase_error <= 0.5))
    throw ValidationError("parity phase error must lie in [-0.5, 0.5]");
}

Vector conditional_phase_diagonal(const DeviceParams& params, double dt, const SystemDims& dims) {
  require_nonnegative_time(dt, "conditional_phase_unitary");
  Vector d(dims.total());
  for (int a = 0; a < dims.n_a(); ++a)
    for (int b = 0; b < dims.n_b(); ++b)
      for (int q = 0; q < dims.n_q(); ++q) {
        const int level = dims.has_ancilla() ? q : 0;
        const double phase = (params.chi(Mode::A, level) * a + params.chi(Mode::B, level) * b) * dt;
        d(dims.index(a, b, q)) = std::polar(1.0, phase);
      }
  return d;
}

Vector kerr_diagonal(const DeviceParams& params, double dt, const SystemDims& dims) {
  require_nonnegative_time(dt, "kerr_unitary");
  Vector d(dims.total());
  for (int a = 0; a < dims.n_a(); ++a)
    for (int b = 0; b < dims.n_b(); ++b) {
      const double e = 0.5 * params.kerr_a * a * (a - 1.0) + 0.5 * params.kerr_b * b * (b - 1.0) +
                       params.kerr_ab * static_cast<double>(a) * b;
      for (int q = 0; q < dims.n_q(); ++q) d(dims.index(a, b, q)) = std::polar(1.0, e * dt);
    }
  return d;
}

QOperator dispersive_hamiltonian(const DeviceParams& params, const SystemDims& dims, bool include_kerr) {
  Vector h(dims.total());
  for (int a = 0; a < dims.n_a(); ++a)
    for (int b = 0; b < dims.n_b(); ++b)
      for (int q = 0; q < dims.n_q(); ++q) {
        const int level = dims.has_ancilla() ? q : 0;
        double e = -params.chi(Mode::A, level) * a - params.chi(Mode::B, level) * b;
        if (include_kerr)
          e -= 0.5 * params.kerr_a * a * (a - 1.0) + 0.5 * params.kerr_b * b * (b - 1.0) +
               params.kerr_ab * static_cast<double>(a) * b;
        h(dims.index(a, b, q)) = e;
      }
  return QOperator(dims, Matrix(h.asDiagonal()));
}

QOperator conditional_phase_unitary(const DeviceParams& params, double dt, const SystemDims& dims) {
  return QOperator(dims, Matrix(conditional_phase_diagonal(params, dt, dims).asDiagonal()));
}

QOperator kerr_unitary(const DeviceParams& params, double dt, const SystemDims& dims) {
  return QOperator(dims, Matrix(kerr_diagonal(params, dt, dims).asDiagonal()));
}

std::vector<Matrix> amplitude_damping_kraus(int dim, double gamma) {
  require_probability(gamma, "damping gamma");
  std::vector<Matrix> ops;
  for (int k = 0; k < dim; ++k) {
    Matrix m = Matrix::Zero(dim, dim);
    for (int n = k; n < dim; ++n)
      m(n - k, n) = std::sqrt(binomial(n, k) * std::pow(1.0 - gamma, n - k) * std::pow(gamma, k));
    ops.push_back(std::move(m));
  }
  return ops;
}

Matrix apply_amplitude_damping(const Matrix& rho, const SystemDims& dims, double t, double t1_a, double t1_b) {
  require_nonnegative_time(t, "amplitude_damping_channel");
  Matrix out = rho;
  for (Mode mode : {Mode::A, Mode::B}) {
    const double t1 = mode == Mode::A ? t1_a : t1_b;
    const double gamma = std::isinf(t1) ? 0.0 : -std::expm1(-t / t1);
    if (gamma == 0.0) continue;
    Matrix acc = Matrix::Zero(rho.rows(), rho.cols());
    for (const Matrix& k : amplitude_damping_kraus(dims.size(mode), gamma)) acc += conjugate_mode(k, mode, dims, out);
    out = acc;
  }
  return out;
}

DensityMatrix amplitude_damping_channel(const DensityMatrix& rho, double t, const DeviceParams& params) {
  return DensityMatrix(rho.dims(), apply_amplitude_damping(rho.data(), rho.dims(), t, params.t1_a, params.t1_b));
}

Vector parity_error_diagonal(double epsilon, int dim, Mode mode) {
  if (!(epsilon >= -0.5 && epsilon <= 0.5)) throw ValidationError("parity phase error must lie in [-0.5, 0.5]");
  const double sign = mode == Mode::A ? -1.0 : 1.0;
  Vector d(dim);
  for (int n = 0; n < dim; ++n) d(n) = std::polar(1.0, sign * epsilon * kPi * n) * ((n % 2 == 0) ? 1.0 : -1.0);
  return d;
}

QOperator parity_error_operator(double epsilon, const SystemDims& dims) {
  const Vector da = parity_error_diagonal(epsilon, dims.n_a(), Mode::A);
  const Vector db = parity_error_diagonal(epsilon, dims.n_b(), Mode::B);
  return tensor(Matrix(da.asDiagonal()), Matrix(db.asDiagonal()), Matrix::Identity(dims.n_q(), dims.n_q()));
}

DensityMatrix preparation_error_channel(const DensityMatrix& rho, double p) {
  require_probability(p, "prep_error");
  if (p == 0.0) return rho;
  const SystemDims& dims = rho.dims();
  Matrix err = conjugate_mode(annihilation(dims.n_a()), Mode::A, dims, rho.data()) +
               conjugate_mode(annihilation(dims.n_b()), Mode::B, dims, rho.data());
  const double tr = err.trace().real();
  if (tr < 1e-14) return rho;  // vacuum has no loss branch
  return DensityMatrix(dims, (1.0 - p) * rho.data() + p * err / tr);
}

}  // namespace twobox
