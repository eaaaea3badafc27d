#pragma once

// Exact scaled Wigner values, sampling plans, and binomial shot-noise
// datasets. Every public Wigner value is the scaled displaced parity
// <P_J(beta)> in [-1, 1]; (4/pi^2) is applied only in exported metadata.

#include <cstdint>
#include <string>
#include <vector>

#include "twobox/dynamics.hpp"
#include "twobox/hilbert.hpp"

namespace twobox {

struct SamplePoint {
  cplx beta_a = 0.0;
  cplx beta_b = 0.0;
};

struct TomographyPlan {
  std::vector<SamplePoint> points;
  int n_rep = 2000;
  std::string kind;  // human-readable plan description

  void validate() const;
};

enum class CutKind { ReRe, ImIm, ReImA, ReImB };

// n_axis x n_axis grid over [-h, h]^2 in the chosen plane; all other
// coordinates zero. The first axis varies slowest.
TomographyPlan plane_cut(CutKind kind, double half_extent, int n_axis, int n_rep = 2000);
// Low-discrepancy (Halton bases 2, 3, 5, 7) points in [-h, h]^4.
TomographyPlan sprinkle_plan(int n_points, double half_extent, int n_rep = 2000, std::uint64_t skip = 0);
TomographyPlan concat_plans(const std::vector<TomographyPlan>& plans);

CutKind parse_cut_kind(const std::string& name);
std::string cut_kind_name(CutKind kind);

struct WignerValue {
  double value = 0.0;
  bool truncation_warning = false;  // |beta| beyond sqrt(cutoff)/2 on some cavity
};

// rho may carry the ancilla; it is traced out first.
WignerValue joint_wigner(const DensityMatrix& rho, const SamplePoint& point, double epsilon = 0.0);
WignerValue single_wigner(const DensityMatrix& rho, Mode mode, cplx beta);

// Scaled values at every point (kernels reused per distinct displacement,
// data-parallel over points). Visibility is not applied.
std::vector<double> evaluate_points(const DensityMatrix& rho, const std::vector<SamplePoint>& points,
                                    double epsilon = 0.0, int threads = 0);

struct MeasurementRecord {
  SamplePoint point;
  std::int64_t n_even = 0;
  std::int64_t n_total = 0;
};

struct DatasetProvenance {
  std::string state_label;
  std::uint64_t seed = 0;
  double visibility = 1.0;
  double readout_error = 0.0;
  double prep_error = 0.0;
  double parity_phase_error = 0.0;
  int n_a = 0;
  int n_b = 0;
  std::string plan;
};

struct TomographyDataset {
  std::vector<MeasurementRecord> records;
  DatasetProvenance provenance;

  bool ragged() const;
  void validate() const;
};

// Probability of an even outcome for scaled parity `w`: visibility, then a
// symmetric readout flip.
double even_probability(double w, double visibility, double readout_error);

// n_even ~ Binomial(n_rep, p'). The generator for point i is seeded from
// (seed, i), so results do not depend on the thread count.
TomographyDataset sample_dataset(const DensityMatrix& rho, const TomographyPlan& plan, const DeviceParams& params,
                                 const NoiseConfig& noise, std::uint64_t seed, const std::string& state_label = "",
                                 int threads = 0);

struct WignerEstimate {
  SamplePoint point;
  double estimate = 0.0;
  double stderr_ = 0.0;
};

std::vector<WignerEstimate> dataset_to_wigner_estimates(const TomographyDataset& dataset);

// CSV `re_ba,im_ba,re_bb,im_bb,n_even,n_total` plus a JSON sidecar at
// `path + ".json"`. Both files are written atomically.
void write_dataset(const std::string& path, const TomographyDataset& dataset);
// The sidecar is read when present.
TomographyDataset read_dataset(const std::string& path);
// CSV `re_ba,im_ba,re_bb,im_bb,value`.
void write_wigner_csv(const std::string& path, const std::vector<SamplePoint>& points, const std::vector<double>& values);

}  // namespace twobox
