#include "twobox/reconstruction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "twobox/errors.hpp"
#include "twobox/io.hpp"
#include "twobox/parallel.hpp"

namespace twobox {

namespace {

constexpr std::size_t kMaxChunks = 64;
constexpr std::size_t kMaxCachedEntries = std::size_t{1} << 24;

// Tr[rho (ka (x) kb)] for a cavity-space matrix rho.
cplx trace_product(const Matrix& rho, const Matrix& ka, const Matrix& kb, int na, int nb) {
  cplx sum = 0.0;
  for (int i = 0; i < na; ++i)
    for (int m = 0; m < na; ++m) {
      const cplx a = ka(m, i);
      if (a == 0.0) continue;
      sum += a * rho.block(i * nb, m * nb, nb, nb).cwiseProduct(kb.transpose()).sum();
    }
  return sum;
}

// ln x, continued below `floor` by its second-order Taylor expansion so the
// objective stays smooth and concave when a model probability reaches 0 or 1.
double floored_log(double x, double floor, double& derivative) {
  if (x >= floor) {
    derivative = 1.0 / x;
    return std::log(x);
  }
  const double t = (x - floor) / floor;
  derivative = (1.0 - t) / floor;
  return std::log(floor) + t - 0.5 * t * t;
}

void add_product(Matrix& g, cplx c, const Matrix& ka, const Matrix& kb, int na, int nb) {
  for (int i = 0; i < na; ++i)
    for (int m = 0; m < na; ++m) g.block(i * nb, m * nb, nb, nb) += (c * ka(i, m)) * kb;
}

// ---------------------------------------------------------------------------
// L-BFGS with a strong-Wolfe line search, minimizing a value+gradient callback.

using RVec = Eigen::VectorXd;

struct LbfgsOutcome {
  RVec x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

template <class F>
struct LineSearch {
  F& fg;
  const RVec& x;
  const RVec& dir;
  double f0, d0;
  static constexpr double c1 = 1e-4, c2 = 0.9;
  // Lowest sufficient-decrease point seen, used when the curvature test never passes.
  double best_a = 0.0, best_f = 0.0;
  RVec best_g;

  double phi(double a, RVec& g, double& d) {
    const double f = fg(x + a * dir, g);
    d = g.dot(dir);
    if (std::isfinite(f) && f <= f0 + c1 * a * d0 && (best_a == 0.0 || f < best_f)) {
      best_a = a;
      best_f = f;
      best_g = g;
    }
    return f;
  }

  double fallback(RVec& g_out, double& f_out) {
    if (best_a == 0.0) return 0.0;
    g_out = best_g;
    f_out = best_f;
    return best_a;
  }

  static double interpolate(double a_lo, double f_lo, double d_lo, double a_hi, double f_hi, double d_hi) {
    // Minimizer of the cubic through both ends, safeguarded into the interior.
    const double d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi);
    const double disc = d1 * d1 - d_lo * d_hi;
    const double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi), w = hi - lo;
    double a = 0.5 * (lo + hi);
    if (disc >= 0.0 && std::isfinite(disc)) {
      const double d2 = std::copysign(std::sqrt(disc), a_hi - a_lo);
      const double denom = d_hi - d_lo + 2.0 * d2;
      if (denom != 0.0) {
        const double c = a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / denom;
        if (std::isfinite(c) && c > lo + 0.1 * w && c < hi - 0.1 * w) a = c;
      }
    }
    return a;
  }

  // Returns the accepted step (0 on failure); g_out/f_out hold its gradient/value.
  double run(double a_init, RVec& g_out, double& f_out) {
    double a_prev = 0.0, f_prev = f0, d_prev = d0;
    double a = a_init;
    RVec g(x.size());
    for (int i = 0; i < 40; ++i) {
      double d;
      const double f = phi(a, g, d);
      if (!std::isfinite(f) || f > f0 + c1 * a * d0 || (i > 0 && f >= f_prev))
        return zoom(a_prev, f_prev, d_prev, a, std::isfinite(f) ? f : std::numeric_limits<double>::max(),
                    std::isfinite(d) ? d : 0.0, g_out, f_out);
      if (std::abs(d) <= -c2 * d0) {
        g_out = g;
        f_out = f;
        return a;
      }
      if (d >= 0.0) return zoom(a, f, d, a_prev, f_prev, d_prev, g_out, f_out);
      a_prev = a;
      f_prev = f;
      d_prev = d;
      a *= 2.0;
    }
    return fallback(g_out, f_out);
  }

  double zoom(double a_lo, double f_lo, double d_lo, double a_hi, double f_hi, double d_hi, RVec& g_out,
              double& f_out) {
    RVec g(x.size());
    for (int j = 0; j < 40; ++j) {
      const double a = std::isfinite(f_hi) && f_hi < std::numeric_limits<double>::max()
                           ? interpolate(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
                           : 0.5 * (a_lo + a_hi);
      double d;
      const double f = phi(a, g, d);
      if (!std::isfinite(f) || f > f0 + c1 * a * d0 || f >= f_lo) {
        a_hi = a;
        f_hi = std::isfinite(f) ? f : std::numeric_limits<double>::max();
        d_hi = std::isfinite(d) ? d : 0.0;
      } else {
        if (std::abs(d) <= -c2 * d0) {
          g_out = g;
          f_out = f;
          return a;
        }
        if (d * (a_hi - a_lo) >= 0.0) {
          a_hi = a_lo;
          f_hi = f_lo;
          d_hi = d_lo;
        }
        a_lo = a;
        f_lo = f;
        d_lo = d;
      }
      if (std::abs(a_hi - a_lo) < 1e-16 * std::max(1.0, std::abs(a_lo))) break;
    }
    return fallback(g_out, f_out);
  }
};

template <class F>
LbfgsOutcome minimize_lbfgs(F&& fg, RVec x, int max_iters, double gtol, int memory, std::vector<double>* trace) {
  LbfgsOutcome out;
  RVec g(x.size());
  double f = fg(x, g);
  if (!std::isfinite(f)) throw NumericalError("objective is not finite at the starting point");
  std::vector<RVec> s_hist, y_hist;
  std::vector<double> rho_hist;
  for (int it = 0; it < max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= gtol * std::max(1.0, std::abs(f))) {
      out.converged = true;
      break;
    }
    // Two-loop recursion.
    RVec q = g;
    const std::size_t k = s_hist.size();
    std::vector<double> alpha(k);
    for (std::size_t i = k; i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    const double gamma = k > 0 ? s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm() : 1.0 / g.norm();
    RVec dir = gamma * q;
    for (std::size_t i = 0; i < k; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += (alpha[i] - beta) * s_hist[i];
    }
    dir = -dir;
    double d0 = g.dot(dir);
    if (!(d0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g / g.norm();
      d0 = g.dot(dir);
    }
    LineSearch<std::remove_reference_t<F>> ls{fg, x, dir, f, d0, 0.0, 0.0, RVec()};
    RVec g_new(x.size());
    double f_new = f;
    const double step = ls.run(1.0, g_new, f_new);
    if (step <= 0.0 || !(f_new < f)) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      break;  // no progress even along steepest descent
    }
    const RVec s = step * dir;
    const RVec y = g_new - g;
    x += s;
    f = f_new;
    g = g_new;
    out.iterations = it + 1;
    if (trace) trace->push_back(f);
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
    }
  }
  if (!out.converged) out.converged = g.lpNorm<Eigen::Infinity>() <= gtol * std::max(1.0, std::abs(f));
  out.x = std::move(x);
  out.value = f;
  return out;
}

RVec pack(const Matrix& a) {
  const Eigen::Index n = a.size();
  RVec x(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = a.data()[i].real();
    x(n + i) = a.data()[i].imag();
  }
  return x;
}

Matrix unpack(const RVec& x, int d) {
  Matrix a(d, d);
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) a.data()[i] = cplx(x(i), x(n + i));
  return a;
}

Matrix factor_of(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()));
  const RealVector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal();
}

}  // namespace

// ---------------------------------------------------------------------------

void MLEConfig::validate() const {
  if (cutoff_a < 1 || cutoff_b < 1) throw ValidationError("cutoffs must be >= 1");
  if (!(lambda > 0.0) || !(lambda_cap >= lambda)) throw ValidationError("lambda must be > 0 and <= lambda_cap");
  if (!(trace_tolerance > 0.0)) throw ValidationError("trace_tolerance must be > 0");
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(grad_tolerance > 0.0)) throw ValidationError("grad_tolerance must be > 0");
  if (!(probability_floor > 0.0 && probability_floor <= 0.01))
    throw ValidationError("probability_floor must be in (0, 0.01]");
  if (lbfgs_memory < 1) throw ValidationError("lbfgs_memory must be >= 1");
  if (visibility && !(*visibility > 0.0 && *visibility <= 1.0)) throw ValidationError("visibility must be in (0, 1]");
  if (readout_error && !(*readout_error >= 0.0 && *readout_error < 0.5))
    throw ValidationError("readout_error must be in [0, 0.5)");
  if (init == MLEInit::WarmStart) {
    const int d = cutoff_a * cutoff_b;
    if (!warm_start) throw ValidationError("warm-start init needs a matrix");
    if (warm_start->rows() != d || warm_start->cols() != d) throw ValidationError("warm-start matrix has wrong size");
  }
}

LikelihoodModel::LikelihoodModel(const TomographyDataset& dataset, int cutoff_a, int cutoff_b, double visibility,
                                 double readout_error, double probability_floor, int threads)
    : n_a_(cutoff_a), n_b_(cutoff_b), visibility_(visibility), readout_error_(readout_error),
      floor_(probability_floor), threads_(threads) {
  if (cutoff_a < 1 || cutoff_b < 1) throw ValidationError("cutoffs must be >= 1");
  dataset.validate();
  std::map<std::pair<double, double>, int> index_a, index_b;
  std::vector<cplx> betas_a, betas_b;
  auto lookup = [](std::map<std::pair<double, double>, int>& index, std::vector<cplx>& betas, cplx b) {
    const auto [it, inserted] = index.emplace(std::make_pair(b.real(), b.imag()), static_cast<int>(betas.size()));
    if (inserted) betas.push_back(b);
    return it->second;
  };
  for (const MeasurementRecord& r : dataset.records) {
    records_.push_back({lookup(index_a, betas_a, r.point.beta_a), lookup(index_b, betas_b, r.point.beta_b),
                        r.point.beta_a, r.point.beta_b, static_cast<double>(r.n_even),
                        static_cast<double>(r.n_total - r.n_even)});
    total_shots_ += r.n_total;
  }
  const std::size_t entries =
      betas_a.size() * static_cast<std::size_t>(n_a_ * n_a_) + betas_b.size() * static_cast<std::size_t>(n_b_ * n_b_);
  if (entries <= kMaxCachedEntries) {
    kernels_a_.resize(betas_a.size());
    kernels_b_.resize(betas_b.size());
    parallel_for(
        betas_a.size() + betas_b.size(),
        [&](std::size_t i) {
          if (i < betas_a.size())
            kernels_a_[i] = displaced_parity_matrix(n_a_, betas_a[i]);
          else
            kernels_b_[i - betas_a.size()] = displaced_parity_matrix(n_b_, betas_b[i - betas_a.size()]);
        },
        threads_);
  }
}

Matrix LikelihoodModel::kernel_a(const Record& r) const {
  return kernels_a_.empty() ? displaced_parity_matrix(n_a_, r.beta_a) : kernels_a_[r.kernel_a];
}

Matrix LikelihoodModel::kernel_b(const Record& r) const {
  return kernels_b_.empty() ? displaced_parity_matrix(n_b_, r.beta_b) : kernels_b_[r.kernel_b];
}

std::vector<double> LikelihoodModel::parity_expectations(const Matrix& rho) const {
  if (rho.rows() != dim() || rho.cols() != dim()) throw ValidationError("density matrix does not match model cutoffs");
  std::vector<double> out(records_.size());
  parallel_for(
      records_.size(),
      [&](std::size_t k) {
        out[k] = trace_product(rho, kernel_a(records_[k]), kernel_b(records_[k]), n_a_, n_b_).real();
      },
      threads_);
  return out;
}

std::vector<double> LikelihoodModel::probabilities(const Matrix& rho) const {
  std::vector<double> p = parity_expectations(rho);
  for (double& v : p) v = std::clamp(even_probability_unclamped(v), floor_, 1.0 - floor_);
  return p;
}

double LikelihoodModel::even_probability_unclamped(double w) const {
  const double p = 0.5 * (visibility_ * w + 1.0);
  return p * (1.0 - readout_error_) + (1.0 - p) * readout_error_;
}

double LikelihoodModel::evaluate(const Matrix& rho, Matrix* weighted_kernels) const {
  if (rho.rows() != dim() || rho.cols() != dim()) throw ValidationError("density matrix does not match model cutoffs");
  const std::size_t n = records_.size();
  const std::size_t chunks = std::min(kMaxChunks, n);
  std::vector<double> ll(chunks, 0.0);
  std::vector<Matrix> grads(weighted_kernels ? chunks : 0);
  const double slope = 0.5 * visibility_ * (1.0 - 2.0 * readout_error_);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        const std::size_t lo = n * c / chunks, hi = n * (c + 1) / chunks;
        if (weighted_kernels) grads[c] = Matrix::Zero(dim(), dim());
        double sum = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
          const Record& r = records_[k];
          const Matrix ka = kernel_a(r), kb = kernel_b(r);
          const double w = trace_product(rho, ka, kb, n_a_, n_b_).real();
          const double p = even_probability_unclamped(w);
          double d_even, d_odd;
          sum += r.n_even * floored_log(p, floor_, d_even) + r.n_odd * floored_log(1.0 - p, floor_, d_odd);
          if (weighted_kernels) {
            const double coef = (r.n_even * d_even - r.n_odd * d_odd) * slope;
            if (coef != 0.0) add_product(grads[c], coef, ka, kb, n_a_, n_b_);
          }
        }
        ll[c] = sum;
      },
      threads_);
  double total = 0.0;
  for (double v : ll) total += v;
  if (weighted_kernels) {
    *weighted_kernels = Matrix::Zero(dim(), dim());
    for (const Matrix& g : grads) *weighted_kernels += g;
  }
  return total;
}

double LikelihoodModel::log_likelihood_rho(const Matrix& rho) const { return evaluate(rho, nullptr); }

double LikelihoodModel::log_likelihood(const Matrix& a) const {
  const double tr = a.squaredNorm();
  if (!(tr > 0.0)) throw NumericalError("factor is zero");
  return evaluate(a * a.adjoint() / tr, nullptr);
}

double LikelihoodModel::objective(const Matrix& a, double lambda, Matrix* gradient) const {
  if (a.rows() != dim() || a.cols() != dim()) throw ValidationError("factor does not match model cutoffs");
  const double tr = a.squaredNorm();
  if (!(tr > 0.0)) throw NumericalError("factor is zero");
  const Matrix rho = a * a.adjoint() / tr;
  Matrix g;
  const double ll = evaluate(rho, gradient ? &g : nullptr);
  if (gradient) {
    // d rho = (dX - rho dTr X) / Tr X with X = A A^dag.
    const double g_rho = g.cwiseProduct(rho.transpose()).sum().real();
    g.diagonal().array() -= g_rho;
    g /= tr;
    g.diagonal().array() -= 2.0 * lambda * (tr - 1.0);
    *gradient = 2.0 * g * a;
  }
  return ll - lambda * (tr - 1.0) * (tr - 1.0);
}

// ---------------------------------------------------------------------------

MLEResult reconstruct(const TomographyDataset& dataset, const MLEConfig& config) {
  config.validate();
  if (dataset.records.empty()) throw ValidationError("dataset has no records");
  const double visibility = config.visibility.value_or(dataset.provenance.visibility);
  const double readout = config.readout_error.value_or(dataset.provenance.readout_error);
  if (!(visibility > 0.0 && visibility <= 1.0)) throw ValidationError("visibility must be in (0, 1]");
  if (!(readout >= 0.0 && readout < 0.5)) throw ValidationError("readout_error must be in [0, 0.5)");
  const LikelihoodModel model(dataset, config.cutoff_a, config.cutoff_b, visibility, readout, config.probability_floor,
                              config.threads);
  const int d = model.dim();

  int beyond = 0;
  for (const MeasurementRecord& r : dataset.records)
    beyond += exceeds_truncation_guard(config.cutoff_a, r.point.beta_a) ||
              exceeds_truncation_guard(config.cutoff_b, r.point.beta_b);

  Matrix a;
  switch (config.init) {
    case MLEInit::IdentityMixed: a = Matrix::Identity(d, d) / std::sqrt(static_cast<double>(d)); break;
    case MLEInit::Random: {
      std::mt19937_64 rng(config.init_seed);
      std::normal_distribution<double> gauss(0.0, 1.0);
      a.resize(d, d);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = cplx(gauss(rng), gauss(rng));
      a /= a.norm();
      break;
    }
    case MLEInit::WarmStart: {
      // A small identity admixture keeps every direction reachable.
      const Matrix& w = *config.warm_start;
      const double tr = w.trace().real();
      if (!(tr > 0.0)) throw ValidationError("warm-start matrix must have positive trace");
      a = factor_of((1.0 - 1e-3) * w / tr + 1e-3 * Matrix::Identity(d, d) / static_cast<double>(d));
      break;
    }
  }

  // Per-shot scaling keeps the optimizer's numbers O(1).
  const double scale = 1.0 / static_cast<double>(std::max<std::int64_t>(model.total_shots(), 1));
  double lambda = config.lambda;
  MLEResult result{DensityMatrix(SystemDims(config.cutoff_a, config.cutoff_b, 1),
                                 Matrix::Identity(d, d) / static_cast<double>(d)),
                    0.0, 0.0, 0.0, 0, false, 0, {}, {}};
  bool stage_converged = false;
  while (true) {
    auto fg = [&](const RVec& x, RVec& grad) {
      Matrix g;
      const double f = model.objective(unpack(x, d), lambda, &g);
      grad = -scale * pack(g);
      return -scale * f;
    };
    std::vector<double> trace;
    const LbfgsOutcome out =
        minimize_lbfgs(fg, pack(a), config.max_iters, config.grad_tolerance, config.lbfgs_memory, &trace);
    a = unpack(out.x, d);
    // The likelihood is invariant under A -> cA, so the penalty's minimum along
    // that ray is reached exactly by rescaling to unit trace.
    {
      const double f_before = model.objective(a, lambda);
      const Matrix scaled = a / std::sqrt(a.squaredNorm());
      if (model.objective(scaled, lambda) >= f_before) a = scaled;
    }
    for (double v : trace) result.objective_trace.push_back(-v / scale);
    result.iterations += out.iterations;
    stage_converged = out.converged;
    const double dev = std::abs(a.squaredNorm() - 1.0);
    if (dev < config.trace_tolerance || lambda >= config.lambda_cap) break;
    lambda = std::min(2.0 * lambda, config.lambda_cap);
  }

  const double tr = a.squaredNorm();
  if (!(tr > 0.0) || !std::isfinite(tr)) throw NumericalError("reconstruction collapsed to a zero matrix");
  Matrix rho = a * a.adjoint() / tr;
  rho = 0.5 * (rho + rho.adjoint());
  result.rho = DensityMatrix(SystemDims(config.cutoff_a, config.cutoff_b, 1), rho);
  result.trace_deviation = std::abs(tr - 1.0);
  result.lambda = lambda;
  result.log_likelihood = model.log_likelihood_rho(rho);
  result.converged = stage_converged && result.trace_deviation < config.trace_tolerance;
  result.points_beyond_guard = beyond;
  result.metrics = compute_metrics(result.rho);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

struct CatOverlaps {
  double uu_rho = 0.0, ww_rho = 0.0;
  cplx uw_rho = 0.0;
  double uu = 0.0, ww = 0.0;
  cplx uw = 0.0;

  double fidelity(double phase) const {
    const cplx e = std::polar(1.0, phase);
    const double norm = uu + ww + 2.0 * (e * uw).real();
    if (norm < 1e-14) return 0.0;
    return (uu_rho + ww_rho + 2.0 * (e * uw_rho).real()) / norm;
  }

  // Best phase: coarse scan, then golden-section refinement.
  std::pair<double, double> best_phase() const {
    constexpr int n = 72;
    double best = -1.0, best_phi = 0.0;
    for (int k = 0; k < n; ++k) {
      const double phi = -kPi + 2.0 * kPi * k / n;
      const double f = fidelity(phi);
      if (f > best) best = f, best_phi = phi;
    }
    const double h = 2.0 * kPi / n;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = best_phi - h, hi = best_phi + h;
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = fidelity(x1), f2 = fidelity(x2);
    for (int it = 0; it < 60; ++it) {
      if (f1 > f2) {
        hi = x2, x2 = x1, f2 = f1;
        x1 = hi - g * (hi - lo), f1 = fidelity(x1);
      } else {
        lo = x1, x1 = x2, f1 = f2;
        x2 = lo + g * (hi - lo), f2 = fidelity(x2);
      }
    }
    const double phi = 0.5 * (lo + hi);
    const double f = fidelity(phi);
    if (f < best) return {best, best_phi};
    return {f, std::remainder(phi, 2.0 * kPi)};
  }
};

CatOverlaps cat_overlaps(const DensityMatrix& rho, double alpha_a, double alpha_b) {
  const int na = rho.dims().n_a(), nb = rho.dims().n_b();
  auto branch = [&](double sign) {
    const Vector a = coherent_state(na, sign * alpha_a, false).amplitudes;
    const Vector b = coherent_state(nb, sign * alpha_b, false).amplitudes;
    Vector v(na * nb);
    for (int i = 0; i < na; ++i) v.segment(i * nb, nb) = a(i) * b;
    return v;
  };
  const Vector u = branch(1.0), w = branch(-1.0);
  const Vector ru = rho.data() * u, rw = rho.data() * w;
  CatOverlaps o;
  o.uu_rho = u.dot(ru).real();
  o.ww_rho = w.dot(rw).real();
  o.uw_rho = u.dot(rw);
  o.uu = u.squaredNorm();
  o.ww = w.squaredNorm();
  o.uw = u.dot(w);
  return o;
}

template <class F>
double golden_max(F&& f, double lo, double hi, double& arg) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 80 && hi - lo > 1e-10; ++it) {
    if (f1 > f2) {
      hi = x2, x2 = x1, f2 = f1;
      x1 = hi - g * (hi - lo), f1 = f(x1);
    } else {
      lo = x1, x1 = x2, f1 = f2;
      x2 = lo + g * (hi - lo), f2 = f(x2);
    }
  }
  arg = 0.5 * (lo + hi);
  return f(arg);
}

// Nelder-Mead maximization in two dimensions.
template <class F>
std::array<double, 2> nelder_mead_max(F&& f, std::array<double, 2> start, double step) {
  using P = std::array<double, 2>;
  std::array<P, 3> s{start, P{start[0] + step, start[1]}, P{start[0], start[1] + step}};
  std::array<double, 3> v{f(s[0]), f(s[1]), f(s[2])};
  auto lerp = [](const P& a, const P& b, double t) { return P{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}; };
  for (int it = 0; it < 400; ++it) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return v[i] > v[j]; });
    const P best = s[idx[0]], mid = s[idx[1]], worst = s[idx[2]];
    if (std::abs(v[idx[0]] - v[idx[2]]) < 1e-13 &&
        std::max(std::abs(best[0] - worst[0]), std::abs(best[1] - worst[1])) < 1e-7)
      break;
    const P centroid{0.5 * (best[0] + mid[0]), 0.5 * (best[1] + mid[1])};
    const P refl = lerp(centroid, worst, -1.0);
    const double fr = f(refl);
    if (fr > v[idx[0]]) {
      const P exp = lerp(centroid, worst, -2.0);
      const double fe = f(exp);
      if (fe > fr) s[idx[2]] = exp, v[idx[2]] = fe;
      else s[idx[2]] = refl, v[idx[2]] = fr;
    } else if (fr > v[idx[1]]) {
      s[idx[2]] = refl, v[idx[2]] = fr;
    } else {
      const P con = lerp(centroid, worst, 0.5);
      const double fc = f(con);
      if (fc > v[idx[2]]) {
        s[idx[2]] = con, v[idx[2]] = fc;
      } else {
        for (int k : {idx[1], idx[2]}) s[k] = lerp(best, s[k], 0.5), v[k] = f(s[k]);
      }
    }
  }
  int b = 0;
  for (int k = 1; k < 3; ++k)
    if (v[k] > v[b]) b = k;
  return s[b];
}

}  // namespace

double cat_fidelity(const DensityMatrix& rho_in, double alpha_a, double alpha_b, double phase) {
  return cat_overlaps(cavity_state(rho_in), alpha_a, alpha_b).fidelity(phase);
}

CatFit best_fit_cat(const DensityMatrix& rho_in, CatSearch search) {
  const DensityMatrix rho = cavity_state(rho_in);
  const int n_min = std::min(rho.dims().n_a(), rho.dims().n_b());
  const double alpha_max = std::max(0.5, std::sqrt(static_cast<double>(n_min)));
  CatFit fit;
  if (search == CatSearch::Symmetric) {
    const double h = 0.02;
    for (double phase : {0.0, kPi}) {
      auto f = [&](double a) { return cat_fidelity(rho, a, a, phase); };
      double best = -1.0, best_a = h;
      for (double a = h; a <= alpha_max + 1e-12; a += h) {
        const double v = f(a);
        if (v > best) best = v, best_a = a;
      }
      double arg;
      const double v = golden_max(f, std::max(1e-6, best_a - h), best_a + h, arg);
      if (v > fit.fidelity) fit = {arg, arg, phase, v};
    }
    return fit;
  }
  auto f2 = [&](double a, double b) { return cat_overlaps(rho, a, b).best_phase(); };
  const double h = 0.1;
  double best = -1.0;
  std::array<double, 2> start{h, h};
  for (double a = h; a <= alpha_max + 1e-12; a += h)
    for (double b = h; b <= alpha_max + 1e-12; b += h) {
      const double v = f2(a, b).first;
      if (v > best) best = v, start = {a, b};
    }
  const auto opt =
      nelder_mead_max([&](const std::array<double, 2>& p) { return f2(std::abs(p[0]), std::abs(p[1])).first; }, start,
                      0.5 * h);
  const double a = std::abs(opt[0]), b = std::abs(opt[1]);
  const auto [fid, phase] = f2(a, b);
  return {a, b, phase, fid};
}

MLEMetrics compute_metrics(const DensityMatrix& rho_in) {
  const DensityMatrix rho = cavity_state(rho_in);
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho.data());
  const int d = static_cast<int>(rho.data().rows());
  MLEMetrics m;
  m.lambda_max = es.eigenvalues()(d - 1);
  m.purity = es.eigenvalues().squaredNorm();
  const Vector v = es.eigenvectors().col(d - 1);
  const int nb = rho.dims().n_b();
  double parity_value = 0.0;
  for (int k = 0; k < d; ++k) parity_value += (((k / nb) + (k % nb)) % 2 == 0 ? 1.0 : -1.0) * std::norm(v(k));
  m.dominant_parity = parity_value;
  m.best_fit = best_fit_cat(rho, CatSearch::General);
  return m;
}

// ---------------------------------------------------------------------------

void write_density_csv(const std::string& path, const Matrix& rho) {
  if (rho.rows() != rho.cols()) throw ValidationError("density matrix must be square");
  std::string csv = "row,col,re,im\n";
  for (Eigen::Index i = 0; i < rho.rows(); ++i)
    for (Eigen::Index j = 0; j < rho.cols(); ++j)
      csv += std::to_string(i) + "," + std::to_string(j) + "," + format_double(rho(i, j).real()) + "," +
             format_double(rho(i, j).imag()) + "\n";
  atomic_write(path, csv);
}

Matrix read_density_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || (line != "row,col,re,im" && line != "row,col,re,im\r"))
    throw ValidationError("'" + path + "' does not start with header row,col,re,im");
  std::vector<std::tuple<long, long, double, double>> cells;
  long max_index = -1;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    long i, j;
    double re, im;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> i >> c1 >> j >> c2 >> re >> c3 >> im) || c1 != ',' || c2 != ',' || c3 != ',' || i < 0 || j < 0)
      throw ValidationError(path + ":" + std::to_string(row) + ": malformed entry");
    cells.emplace_back(i, j, re, im);
    max_index = std::max({max_index, i, j});
  }
  const long d = max_index + 1;
  if (d <= 0 || static_cast<long>(cells.size()) != d * d)
    throw ValidationError("'" + path + "' does not hold a complete square matrix");
  Matrix m = Matrix::Constant(d, d, cplx(std::numeric_limits<double>::quiet_NaN(), 0.0));
  for (const auto& [i, j, re, im] : cells) m(i, j) = cplx(re, im);
  if (m.hasNaN()) throw ValidationError("'" + path + "' has duplicate or missing entries");
  return m;
}

void write_mle_result(const std::string& path, const MLEResult& r) {
  const MLEMetrics& m = r.metrics;
  const nlohmann::json j{
      {"cutoff_a", r.rho.dims().n_a()},
      {"cutoff_b", r.rho.dims().n_b()},
      {"log_likelihood", r.log_likelihood},
      {"trace_deviation", r.trace_deviation},
      {"lambda", r.lambda},
      {"iterations", r.iterations},
      {"converged", r.converged},
      {"points_beyond_guard", r.points_beyond_guard},
      {"lambda_max", m.lambda_max},
      {"purity", m.purity},
      {"dominant_parity", m.dominant_parity},
      {"best_fit",
       {{"alpha_a", m.best_fit.alpha_a},
        {"alpha_b", m.best_fit.alpha_b},
        {"phase", m.best_fit.phase},
        {"fidelity", m.best_fit.fidelity}}}};
  write_density_csv(path, r.rho.data());
  atomic_write(path + ".json", j.dump(2) + "\n");
}

}  // namespace twobox
