#pragma once

// Rotating-frame dispersive evolution, Kerr, cavity loss, and the imperfect
// parity-mapping observable. All rates are angular frequencies (rad/s).

#include <vector>

#include "twobox/hilbert.hpp"

namespace twobox {

inline constexpr double kTwoPi = 2.0 * kPi;

struct DeviceParams {
  double chi_ge_a = kTwoPi * 0.71e6;
  double chi_ge_b = kTwoPi * 1.41e6;
  double chi_ef_a = kTwoPi * 1.54e6;
  double chi_ef_b = kTwoPi * 0.93e6;
  double kerr_a = kTwoPi * 0.83e3;
  double kerr_b = kTwoPi * 5.6e3;
  double kerr_ab = kTwoPi * -9e3;
  double t1_a = 2.75e-3;
  double t1_b = 1.45e-3;
  double parity_visibility = 1.0;
  double prep_error = 0.0;
  double readout_error = 0.0;

  double chi_gf_a() const { return chi_ge_a + chi_ef_a; }
  double chi_gf_b() const { return chi_ge_b + chi_ef_b; }
  // Dispersive shift of cavity `mode` when the ancilla sits in `level` (g=0).
  double chi(Mode mode, int level) const;
  void validate() const;
};

struct NoiseConfig {
  bool kerr_during_waits = false;
  bool amplitude_damping = false;
  double parity_phase_error = 0.0;  // epsilon in [-0.5, 0.5]
  void validate() const;
};

QOperator dispersive_hamiltonian(const DeviceParams& params, const SystemDims& dims, bool include_kerr = true);

// Diagonals of the (diagonal) evolution operators, indexed like the basis.
Vector conditional_phase_diagonal(const DeviceParams& params, double dt, const SystemDims& dims);
Vector kerr_diagonal(const DeviceParams& params, double dt, const SystemDims& dims);

QOperator conditional_phase_unitary(const DeviceParams& params, double dt, const SystemDims& dims);
QOperator kerr_unitary(const DeviceParams& params, double dt, const SystemDims& dims);

// Zero-temperature loss on one mode: K_k|n> = sqrt(C(n,k)) (1-gamma)^{(n-k)/2} gamma^{k/2} |n-k>.
std::vector<Matrix> amplitude_damping_kraus(int dim, double gamma);
// Raw matrix form, usable on any layout with the given dims.
Matrix apply_amplitude_damping(const Matrix& rho, const SystemDims& dims, double t, double t1_a, double t1_b);
DensityMatrix amplitude_damping_channel(const DensityMatrix& rho, double t, const DeviceParams& params);

// e^{-i eps pi n_a} e^{+i eps pi n_b} P_J, identity on the ancilla.
QOperator parity_error_operator(double epsilon, const SystemDims& dims);
// Diagonal of the cavity factor of parity_error_operator for one mode.
Vector parity_error_diagonal(double epsilon, int dim, Mode mode);

// (1 - p) rho + p rho_err where rho_err is the normalized single-photon-loss
// image (a rho a^dag + b rho b^dag), i.e. the opposite-parity error branch.
DensityMatrix preparation_error_channel(const DensityMatrix& rho, double p);

}  // namespace twobox
