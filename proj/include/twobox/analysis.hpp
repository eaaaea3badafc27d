#pragma once

// Analyses built on scaled joint parity: CHSH-type Bell signal, encoded
// two-qubit Pauli tomography, parity decay, photon-number spectrum and cat
// sizes.

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "twobox/dynamics.hpp"
#include "twobox/hilbert.hpp"
#include "twobox/tomography.hpp"

namespace twobox {

// ---------------------------------------------------------------------------
// Bell signal

struct BellSpec {
  cplx beta_a = 0.0, beta_a_prime = 0.0;
  cplx beta_b = 0.0, beta_b_prime = 0.0;

  // Corners in evaluation order; the last one is subtracted.
  std::array<SamplePoint, 4> corners() const;
  void validate() const;
};

// Square in the ImIm plane: three corners on the central negative fringe,
// one near the adjacent positive fringe (-i pi / (32 alpha), 3 i pi / (32 alpha)).
BellSpec default_bell_spec(double alpha);

struct BellResult {
  std::array<SamplePoint, 4> corners;
  std::array<double, 4> values;  // visibility-scaled joint parity
  double signal = 0.0;           // |W1 + W2 + W3 - W4|
};

BellResult bell_signal(const DensityMatrix& rho, const BellSpec& spec, double visibility = 1.0);

// ---------------------------------------------------------------------------
// Encoded two-qubit tomography; |alpha> -> |0>, |-alpha> -> |1> per cavity.

struct LogicalCode {
  double alpha = 1.92;

  cplx y_displacement() const { return cplx(0.0, kPi / (8.0 * alpha)); }
  void validate() const;
};

// Displaced joint parity at (beta_a, beta_b).
using ParityFn = std::function<double(cplx, cplx)>;

struct PauliResult {
  std::array<std::string, 16> labels;  // II, IX, IY, IZ, XI, ..., ZZ
  std::array<double, 16> values{};
  double value(const std::string& label) const;
  // (II + XX - YY + ZZ) / 4
  double direct_fidelity() const;
};

// Y-type slots are scaled by -exp(2 |beta_Y|^2) so that each Y estimate has
// unit code-space magnitude and the standard sigma_y sign.
PauliResult pauli_tomography(const ParityFn& measure, const LogicalCode& code);
// rho_L = (1/4) sum <s_i s_j> s_i (x) s_j, in the basis |00>, |01>, |10>, |11>.
Matrix logical_density(const PauliResult& result);

// N(|alpha> + sign_a |-alpha>) (x) N(|alpha> + sign_b |-alpha>); signs are +1 or -1.
StateVector make_product_cat(const SystemDims& dims, double alpha, int sign_a, int sign_b);

// ---------------------------------------------------------------------------
// Parity decay

double parity_decay_analytic(double t, double alpha, double tau_a, double tau_b, double p0);

struct DecayPoint {
  double t = 0.0;
  double value = 0.0;
};

// Amplitude damping for time t, then <P_J> at the origin. Times ascending.
std::vector<DecayPoint> parity_decay_simulated(const DensityMatrix& rho, const std::vector<double>& times,
                                               const DeviceParams& params);

struct ExponentialFit {
  double amplitude = 0.0;  // signed value at t = 0
  double tau = 0.0;
};

// Least-squares line through (t, ln|v|); all values must share one sign.
ExponentialFit fit_exponential(const std::vector<DecayPoint>& points);

// ---------------------------------------------------------------------------
// Spectrum and size

// P(N) = sum over n_a + n_b = N of the diagonal, N = 0 .. n_a + n_b - 2.
RealVector total_photon_distribution(const DensityMatrix& rho);

double cat_size(double alpha_a, double alpha_b);

// Sign changes of the joint parity along the ImIm line through the origin in
// direction (alpha_a, alpha_b), for |s| <= half_length, sampled at n points.
int count_fringe_crossings(const DensityMatrix& rho, double alpha_a, double alpha_b, double half_length, int n);

// ---------------------------------------------------------------------------
// CSV reports

void write_bell_csv(const std::string& path, const BellResult& result);
void write_pauli_csv(const std::string& path, const PauliResult& result);
// Columns t_s, analytic, simulated; simulated may be empty.
void write_decay_csv(const std::string& path, const std::vector<double>& times, const std::vector<double>& analytic,
                     const std::vector<double>& simulated);

}  // namespace twobox
