#include "twobox/analysis.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "twobox/errors.hpp"
#include "twobox/io.hpp"

namespace twobox {

std::array<SamplePoint, 4> BellSpec::corners() const {
  return {SamplePoint{beta_a, beta_b}, SamplePoint{beta_a_prime, beta_b}, SamplePoint{beta_a, beta_b_prime},
          SamplePoint{beta_a_prime, beta_b_prime}};
}

void BellSpec::validate() const {
  for (cplx b : {beta_a, beta_a_prime, beta_b, beta_b_prime})
    if (!std::isfinite(b.real()) || !std::isfinite(b.imag())) throw ValidationError("Bell corner is not finite");
  if (beta_a == beta_a_prime || beta_b == beta_b_prime) throw ValidationError("Bell corners must be distinct");
}

BellSpec default_bell_spec(double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
  const cplx near(0.0, -kPi / (32.0 * alpha)), far(0.0, 3.0 * kPi / (32.0 * alpha));
  return {near, far, near, far};
}

BellResult bell_signal(const DensityMatrix& rho, const BellSpec& spec, double visibility) {
  spec.validate();
  if (!(visibility >= 0.0 && visibility <= 1.0)) throw ValidationError("visibility must be in [0, 1]");
  BellResult r;
  r.corners = spec.corners();
  for (int k = 0; k < 4; ++k) r.values[k] = visibility * joint_wigner(rho, r.corners[k]).value;
  r.signal = std::abs(r.values[0] + r.values[1] + r.values[2] - r.values[3]);
  return r;
}

// ---------------------------------------------------------------------------

void LogicalCode::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("code amplitude must be > 0");
}

double PauliResult::value(const std::string& label) const {
  for (int k = 0; k < 16; ++k)
    if (labels[k] == label) return values[k];
  throw ValidationError("unknown Pauli label '" + label + "'");
}

double PauliResult::direct_fidelity() const { return 0.25 * (value("II") + value("XX") - value("YY") + value("ZZ")); }

PauliResult pauli_tomography(const ParityFn& measure, const LogicalCode& code) {
  code.validate();
  const double a = code.alpha;
  const cplx y = code.y_displacement();
  using Terms = std::vector<std::pair<cplx, double>>;
  const std::array<Terms, 4> single{
      Terms{{a, 1.0}, {-a, 1.0}},                     // I
      Terms{{0.0, 1.0}},                              // X
      Terms{{y, -std::exp(2.0 * std::norm(y))}},      // Y
      Terms{{a, 1.0}, {-a, -1.0}},                    // Z
  };
  const char names[4] = {'I', 'X', 'Y', 'Z'};
  std::map<std::array<double, 4>, double> cache;
  auto parity = [&](cplx ba, cplx bb) {
    const std::array<double, 4> key{ba.real(), ba.imag(), bb.real(), bb.imag()};
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, measure(ba, bb)).first;
    return it->second;
  };
  PauliResult r;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double v = 0.0;
      for (const auto& [ba, ca] : single[i])
        for (const auto& [bb, cb] : single[j]) v += ca * cb * parity(ba, bb);
      r.labels[4 * i + j] = std::string{names[i], names[j]};
      r.values[4 * i + j] = v;
    }
  return r;
}

Matrix logical_density(const PauliResult& result) {
  const cplx I(0.0, 1.0);
  std::array<Matrix, 4> s;
  s[0] = Matrix::Identity(2, 2);
  s[1] = Matrix::Zero(2, 2);
  s[1](0, 1) = s[1](1, 0) = 1.0;
  s[2] = Matrix::Zero(2, 2);
  s[2](0, 1) = -I;
  s[2](1, 0) = I;
  s[3] = Matrix::Zero(2, 2);
  s[3](0, 0) = 1.0;
  s[3](1, 1) = -1.0;
  Matrix rho = Matrix::Zero(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      Matrix k(4, 4);
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) k.block(2 * r, 2 * c, 2, 2) = s[i](r, c) * s[j];
      rho += 0.25 * result.values[4 * i + j] * k;
    }
  return rho;
}

StateVector make_product_cat(const SystemDims& dims, double alpha, int sign_a, int sign_b) {
  if (!(alpha >= 0.0)) throw ValidationError("alpha must be >= 0");
  for (int s : {sign_a, sign_b})
    if (s != 1 && s != -1) throw ValidationError("cat signs must be +1 or -1");
  if (alpha == 0.0 && (sign_a < 0 || sign_b < 0)) throw ValidationError("odd cat with alpha = 0 vanishes");
  const Vector a = single_mode_cat(dims.n_a(), alpha, sign_a > 0 ? 0.0 : kPi).amplitudes;
  const Vector b = single_mode_cat(dims.n_b(), alpha, sign_b > 0 ? 0.0 : kPi).amplitudes;
  return product_state(dims, a, b);
}

// ---------------------------------------------------------------------------

double parity_decay_analytic(double t, double alpha, double tau_a, double tau_b, double p0) {
  if (!(t >= 0.0)) throw ValidationError("t must be >= 0");
  if (!(tau_a > 0.0 && tau_b > 0.0)) throw ValidationError("decay times must be > 0");
  return p0 * std::exp(-2.0 * alpha * alpha * (2.0 - std::exp(-t / tau_a) - std::exp(-t / tau_b)));
}

std::vector<DecayPoint> parity_decay_simulated(const DensityMatrix& rho, const std::vector<double>& times,
                                               const DeviceParams& params) {
  params.validate();
  std::vector<DecayPoint> out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0)) throw ValidationError("decay times must be >= 0");
    if (i > 0 && times[i] < times[i - 1]) throw ValidationError("decay times must be ascending");
    const DensityMatrix decayed = amplitude_damping_channel(rho, times[i], params);
    out.push_back({times[i], joint_wigner(decayed, {}).value});
  }
  return out;
}

ExponentialFit fit_exponential(const std::vector<DecayPoint>& points) {
  if (points.size() < 2) throw ValidationError("exponential fit needs at least two points");
  const double sign = points.front().value < 0.0 ? -1.0 : 1.0;
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (const DecayPoint& p : points) {
    if (!(sign * p.value > 0.0)) throw ValidationError("exponential fit needs values of one strict sign");
    const double yv = std::log(sign * p.value);
    st += p.t;
    sy += yv;
    stt += p.t * p.t;
    sty += p.t * yv;
  }
  const double n = static_cast<double>(points.size());
  const double den = n * stt - st * st;
  if (!(den > 0.0)) throw ValidationError("exponential fit needs distinct times");
  const double slope = (n * sty - st * sy) / den;
  const double intercept = (sy - slope * st) / n;
  ExponentialFit fit;
  fit.amplitude = sign * std::exp(intercept);
  fit.tau = slope < 0.0 ? -1.0 / slope : std::numeric_limits<double>::infinity();
  return fit;
}

// ---------------------------------------------------------------------------

RealVector total_photon_distribution(const DensityMatrix& rho_in) {
  const DensityMatrix rho = cavity_state(rho_in);
  const int na = rho.dims().n_a(), nb = rho.dims().n_b();
  RealVector p = RealVector::Zero(na + nb - 1);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) p(i + j) += rho.data()(i * nb + j, i * nb + j).real();
  return p;
}

double cat_size(double alpha_a, double alpha_b) { return 4.0 * (alpha_a * alpha_a + alpha_b * alpha_b); }

int count_fringe_crossings(const DensityMatrix& rho, double alpha_a, double alpha_b, double half_length, int n) {
  const double norm = std::hypot(alpha_a, alpha_b);
  if (!(norm > 0.0)) throw ValidationError("fringe direction needs a nonzero amplitude");
  if (n < 2 || !(half_length > 0.0)) throw ValidationError("fringe line needs n >= 2 and half_length > 0");
  std::vector<SamplePoint> pts;
  for (int k = 0; k < n; ++k) {
    const double s = -half_length + 2.0 * half_length * k / (n - 1);
    pts.push_back({cplx(0.0, s * alpha_a / norm), cplx(0.0, s * alpha_b / norm)});
  }
  const std::vector<double> w = evaluate_points(rho, pts);
  int crossings = 0;
  double last = 0.0;
  for (double v : w) {
    if (v == 0.0) continue;
    if (last != 0.0 && (v > 0.0) != (last > 0.0)) ++crossings;
    last = v;
  }
  return crossings;
}

// ---------------------------------------------------------------------------

void write_bell_csv(const std::string& path, const BellResult& r) {
  std::string csv = "corner,re_ba,im_ba,re_bb,im_bb,value,sign\n";
  for (int k = 0; k < 4; ++k)
    csv += std::to_string(k + 1) + "," + format_double(r.corners[k].beta_a.real()) + "," +
           format_double(r.corners[k].beta_a.imag()) + "," + format_double(r.corners[k].beta_b.real()) + "," +
           format_double(r.corners[k].beta_b.imag()) + "," + format_double(r.values[k]) + "," +
           (k == 3 ? "-1" : "1") + "\n";
  csv += "B,,,,," + format_double(r.signal) + ",\n";
  atomic_write(path, csv);
}

void write_pauli_csv(const std::string& path, const PauliResult& r) {
  std::string csv = "label,value\n";
  for (int k = 0; k < 16; ++k) csv += r.labels[k] + "," + format_double(r.values[k]) + "\n";
  csv += "direct_fidelity," + format_double(r.direct_fidelity()) + "\n";
  atomic_write(path, csv);
}

void write_decay_csv(const std::string& path, const std::vector<double>& times, const std::vector<double>& analytic,
                     const std::vector<double>& simulated) {
  if (analytic.size() != times.size() || (!simulated.empty() && simulated.size() != times.size()))
    throw ValidationError("decay columns differ in length");
  std::string csv = "t_s,analytic,simulated\n";
  for (std::size_t i = 0; i < times.size(); ++i)
    csv += format_double(times[i]) + "," + format_double(analytic[i]) + "," +
           (simulated.empty() ? std::string() : format_double(simulated[i])) + "\n";
  atomic_write(path, csv);
}

}  // namespace twobox
