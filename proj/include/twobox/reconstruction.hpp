#pragma once

// Maximum-likelihood reconstruction of the two-cavity density matrix from
// displaced joint-parity counts. rho = A A^dag / Tr[A A^dag] keeps every
// iterate positive; a quadratic penalty pins the scale of A at Tr = 1.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twobox/hilbert.hpp"
#include "twobox/tomography.hpp"

namespace twobox {

enum class MLEInit { IdentityMixed, Random, WarmStart };

struct MLEConfig {
  int cutoff_a = 12;
  int cutoff_b = 12;
  double lambda = 10.0;         // initial trace-penalty weight
  double lambda_cap = 1e6;      // doubling stops here
  double trace_tolerance = 1e-3;
  int max_iters = 2000;         // per penalty stage
  double grad_tolerance = 1e-6; // on the per-shot objective, relative to max(1, |f|)
  double probability_floor = 1e-6;
  int lbfgs_memory = 10;
  MLEInit init = MLEInit::IdentityMixed;
  std::uint64_t init_seed = 0;
  std::optional<Matrix> warm_start;  // cavity density matrix
  // Measurement model; unset values come from the dataset provenance.
  std::optional<double> visibility;
  std::optional<double> readout_error;
  int threads = 0;

  void validate() const;
};

struct CatFit {
  double alpha_a = 0.0;
  double alpha_b = 0.0;
  double phase = 0.0;
  double fidelity = 0.0;
};

struct MLEMetrics {
  double lambda_max = 0.0;        // largest eigenvalue
  double purity = 0.0;
  double dominant_parity = 0.0;   // <v|P_J|v> for the dominant eigenvector
  CatFit best_fit;
};

struct MLEResult {
  DensityMatrix rho;  // cavities only, unit trace
  double log_likelihood = 0.0;
  double trace_deviation = 0.0;  // |Tr[A A^dag] - 1| before normalization
  double lambda = 0.0;           // final penalty weight
  int iterations = 0;
  bool converged = false;
  int points_beyond_guard = 0;
  std::vector<double> objective_trace;  // penalized objective after each accepted step, per stage
  MLEMetrics metrics;
};

// Binomial likelihood with precomputed displaced-parity kernels. Below the
// probability floor, ln p is replaced by its second-order continuation, which
// keeps the objective smooth for unnormalized iterates. Work is split
// into a fixed number of contiguous chunks reduced in order, so values do not
// depend on the thread count.
class LikelihoodModel {
 public:
  LikelihoodModel(const TomographyDataset& dataset, int cutoff_a, int cutoff_b, double visibility = 1.0,
                  double readout_error = 0.0, double probability_floor = 1e-6, int threads = 0);

  int dim() const { return n_a_ * n_b_; }
  std::size_t size() const { return records_.size(); }
  std::int64_t total_shots() const { return total_shots_; }

  // Tr[rho K_A (x) K_B] per record.
  std::vector<double> parity_expectations(const Matrix& rho) const;
  // Modelled even-outcome probability per record, clamped to the floor.
  std::vector<double> probabilities(const Matrix& rho) const;
  double log_likelihood_rho(const Matrix& rho) const;
  // LL at A A^dag / Tr[A A^dag].
  double log_likelihood(const Matrix& a) const;

  // f(A) = LL(A) - lambda (Tr[A A^dag] - 1)^2. The gradient is returned
  // as g = dF/dRe(A) + i dF/dIm(A), so df = Re Tr[g^dag dA].
  double objective(const Matrix& a, double lambda, Matrix* gradient = nullptr) const;

 private:
  struct Record {
    int kernel_a;
    int kernel_b;
    cplx beta_a;
    cplx beta_b;
    double n_even;
    double n_odd;
  };
  double even_probability_unclamped(double w) const;
  Matrix kernel_a(const Record& r) const;
  Matrix kernel_b(const Record& r) const;
  // Sum over records of (LL contribution, optional dLL/dTr[rho M] weights).
  double evaluate(const Matrix& rho, Matrix* weighted_kernels) const;

  int n_a_, n_b_;
  double visibility_, readout_error_, floor_;
  int threads_;
  std::int64_t total_shots_ = 0;
  std::vector<Record> records_;
  std::vector<Matrix> kernels_a_, kernels_b_;  // empty when not cached
};

MLEResult reconstruct(const TomographyDataset& dataset, const MLEConfig& config = {});

enum class CatSearch { Symmetric, General };

// Maximizes <psi|rho|psi> over N(|a_A, a_B> + e^{i phi}|-a_A, -a_B>) with real
// amplitudes. Symmetric: a_A = a_B, phi in {0, pi}.
CatFit best_fit_cat(const DensityMatrix& rho, CatSearch search = CatSearch::General);
// <psi|rho|psi> for one candidate; 0 when the superposition vanishes.
double cat_fidelity(const DensityMatrix& rho, double alpha_a, double alpha_b, double phase);

MLEMetrics compute_metrics(const DensityMatrix& rho);

// CSV `row,col,re,im`, one line per element.
void write_density_csv(const std::string& path, const Matrix& rho);
Matrix read_density_csv(const std::string& path);
// Density CSV plus a JSON metrics sidecar at `path + ".json"`.
void write_mle_result(const std::string& path, const MLEResult& result);

}  // namespace twobox
