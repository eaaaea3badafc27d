#include "twobox/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "twobox/errors.hpp"
#include "twobox/io.hpp"
#include "twobox/parallel.hpp"
#include "twobox/protocols.hpp"

namespace twobox {

namespace {

using Key = std::pair<double, double>;
Key key_of(cplx z) { return {z.real(), z.imag()}; }

double halton(std::uint64_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

constexpr std::size_t kMaxCachedKernels = 4096;

}  // namespace

void TomographyPlan::validate() const {
  if (n_rep < 1) throw ValidationError("n_rep must be >= 1");
  if (points.empty()) throw ValidationError("plan has no points");
  for (const SamplePoint& p : points)
    for (double x : {p.beta_a.real(), p.beta_a.imag(), p.beta_b.real(), p.beta_b.imag()})
      if (!std::isfinite(x)) throw ValidationError("plan point is not finite");
}

TomographyPlan plane_cut(CutKind kind, double half_extent, int n_axis, int n_rep) {
  if (n_axis < 2) throw ValidationError("plane cut needs at least 2 points per axis");
  if (!(half_extent > 0.0)) throw ValidationError("plane cut half extent must be > 0");
  TomographyPlan plan;
  plan.n_rep = n_rep;
  plan.kind = cut_kind_name(kind) + " cut, " + std::to_string(n_axis) + " per axis, half extent " + format_double(half_extent);
  plan.points.reserve(static_cast<std::size_t>(n_axis) * n_axis);
  for (int i = 0; i < n_axis; ++i) {
    const double x = -half_extent + 2.0 * half_extent * i / (n_axis - 1);
    for (int j = 0; j < n_axis; ++j) {
      const double y = -half_extent + 2.0 * half_extent * j / (n_axis - 1);
      SamplePoint p;
      switch (kind) {
        case CutKind::ReRe: p = {cplx(x, 0.0), cplx(y, 0.0)}; break;
        case CutKind::ImIm: p = {cplx(0.0, x), cplx(0.0, y)}; break;
        case CutKind::ReImA: p = {cplx(x, y), 0.0}; break;
        case CutKind::ReImB: p = {0.0, cplx(x, y)}; break;
      }
      plan.points.push_back(p);
    }
  }
  plan.validate();
  return plan;
}

TomographyPlan sprinkle_plan(int n_points, double half_extent, int n_rep, std::uint64_t skip) {
  if (n_points < 1) throw ValidationError("sprinkle plan needs at least one point");
  if (!(half_extent > 0.0)) throw ValidationError("sprinkle half extent must be > 0");
  TomographyPlan plan;
  plan.n_rep = n_rep;
  plan.kind = "Halton 4D sprinkle, " + std::to_string(n_points) + " points, half extent " + format_double(half_extent);
  auto coord = [&](std::uint64_t i, int base) { return half_extent * (2.0 * halton(i, base) - 1.0); };
  for (int k = 0; k < n_points; ++k) {
    const std::uint64_t i = skip + static_cast<std::uint64_t>(k) + 1;
    plan.points.push_back({cplx(coord(i, 2), coord(i, 3)), cplx(coord(i, 5), coord(i, 7))});
  }
  plan.validate();
  return plan;
}

TomographyPlan concat_plans(const std::vector<TomographyPlan>& plans) {
  if (plans.empty()) throw ValidationError("no plans to combine");
  TomographyPlan out;
  out.n_rep = plans.front().n_rep;
  for (const TomographyPlan& p : plans) {
    if (p.n_rep != out.n_rep) throw ValidationError("combined plans must share n_rep");
    out.points.insert(out.points.end(), p.points.begin(), p.points.end());
    out.kind += (out.kind.empty() ? "" : " + ") + p.kind;
  }
  out.validate();
  return out;
}

CutKind parse_cut_kind(const std::string& name) {
  if (name == "ReRe") return CutKind::ReRe;
  if (name == "ImIm") return CutKind::ImIm;
  if (name == "ReIm_A") return CutKind::ReImA;
  if (name == "ReIm_B") return CutKind::ReImB;
  throw ValidationError("unknown cut '" + name + "' (ReRe, ImIm, ReIm_A, ReIm_B)");
}

std::string cut_kind_name(CutKind kind) {
  switch (kind) {
    case CutKind::ReRe: return "ReRe";
    case CutKind::ImIm: return "ImIm";
    case CutKind::ReImA: return "ReIm_A";
    case CutKind::ReImB: return "ReIm_B";
  }
  return "?";
}

// ---------------------------------------------------------------------------

WignerValue joint_wigner(const DensityMatrix& rho_in, const SamplePoint& point, double epsilon) {
  const DensityMatrix rho = cavity_state(rho_in);
  const int na = rho.dims().n_a(), nb = rho.dims().n_b();
  WignerValue out;
  out.value = product_expectation(rho, displaced_parity_kernel(na, point.beta_a, epsilon, Mode::A),
                                  displaced_parity_kernel(nb, point.beta_b, epsilon, Mode::B))
                  .real();
  out.truncation_warning = exceeds_truncation_guard(na, point.beta_a) || exceeds_truncation_guard(nb, point.beta_b);
  return out;
}

WignerValue single_wigner(const DensityMatrix& rho_in, Mode mode, cplx beta) {
  if (mode == Mode::Ancilla) throw ValidationError("single_wigner needs a cavity");
  const DensityMatrix reduced = partial_trace(rho_in, {mode});
  const int n = reduced.dims().size(mode);
  WignerValue out;
  out.value = (reduced.data() * displaced_parity_matrix(n, beta)).trace().real();
  out.truncation_warning = exceeds_truncation_guard(n, beta);
  return out;
}

std::vector<double> evaluate_points(const DensityMatrix& rho_in, const std::vector<SamplePoint>& points, double epsilon,
                                    int threads) {
  const DensityMatrix rho = cavity_state(rho_in);
  const int na = rho.dims().n_a(), nb = rho.dims().n_b();
  const Matrix& r = rho.data();

  std::map<Key, std::vector<std::size_t>> by_b;
  std::map<Key, std::size_t> a_index;
  for (std::size_t i = 0; i < points.size(); ++i) {
    by_b[key_of(points[i].beta_b)].push_back(i);
    a_index.emplace(key_of(points[i].beta_a), 0);
  }
  const bool cache_a = a_index.size() <= kMaxCachedKernels;
  std::vector<Matrix> kernels_a;
  if (cache_a) {
    std::vector<Key> keys;
    for (auto& [k, idx] : a_index) {
      idx = keys.size();
      keys.push_back(k);
    }
    kernels_a.resize(keys.size());
    parallel_for(
        keys.size(),
        [&](std::size_t i) {
          kernels_a[i] = displaced_parity_kernel(na, cplx(keys[i].first, keys[i].second), epsilon, Mode::A).transpose();
        },
        threads);
  }

  std::vector<const std::pair<const Key, std::vector<std::size_t>>*> groups;
  for (const auto& g : by_b) groups.push_back(&g);
  std::vector<double> values(points.size(), 0.0);
  parallel_for(
      groups.size(),
      [&](std::size_t gi) {
        const auto& [kb, members] = *groups[gi];
        const Matrix kb_t = displaced_parity_kernel(nb, cplx(kb.first, kb.second), epsilon, Mode::B).transpose();
        // t(i, m) = Tr[rho_block(i, m) K_B]
        Matrix t(na, na);
        for (int i = 0; i < na; ++i)
          for (int m = 0; m < na; ++m) t(i, m) = r.block(i * nb, m * nb, nb, nb).cwiseProduct(kb_t).sum();
        for (std::size_t idx : members) {
          const cplx ba = points[idx].beta_a;
          if (cache_a) {
            values[idx] = kernels_a[a_index.at(key_of(ba))].cwiseProduct(t).sum().real();
          } else {
            const Matrix ka_t = displaced_parity_kernel(na, ba, epsilon, Mode::A).transpose();
            values[idx] = ka_t.cwiseProduct(t).sum().real();
          }
        }
      },
      threads);
  return values;
}

// ---------------------------------------------------------------------------

bool TomographyDataset::ragged() const {
  for (const MeasurementRecord& r : records)
    if (r.n_total != records.front().n_total) return true;
  return false;
}

void TomographyDataset::validate() const {
  if (records.empty()) throw ValidationError("dataset has no records");
  for (const MeasurementRecord& r : records) {
    if (r.n_total <= 0) throw ValidationError("record with n_total <= 0");
    if (r.n_even < 0 || r.n_even > r.n_total) throw ValidationError("record with n_even outside [0, n_total]");
    for (double x : {r.point.beta_a.real(), r.point.beta_a.imag(), r.point.beta_b.real(), r.point.beta_b.imag()})
      if (!std::isfinite(x)) throw ValidationError("record point is not finite");
  }
}

double even_probability(double w, double visibility, double readout_error) {
  const double p = std::clamp(0.5 * (visibility * w + 1.0), 0.0, 1.0);
  return p * (1.0 - readout_error) + (1.0 - p) * readout_error;
}

TomographyDataset sample_dataset(const DensityMatrix& rho, const TomographyPlan& plan, const DeviceParams& params,
                                 const NoiseConfig& noise, std::uint64_t seed, const std::string& state_label,
                                 int threads) {
  plan.validate();
  params.validate();
  noise.validate();
  const std::vector<double> w = evaluate_points(rho, plan.points, noise.parity_phase_error, threads);
  TomographyDataset ds;
  ds.records.resize(plan.points.size());
  parallel_for(
      plan.points.size(),
      [&](std::size_t i) {
        const double p = even_probability(w[i], params.parity_visibility, params.readout_error);
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32)};
        std::mt19937_64 gen(seq);
        std::binomial_distribution<std::int64_t> draw(plan.n_rep, p);
        ds.records[i] = {plan.points[i], draw(gen), plan.n_rep};
      },
      threads);
  DatasetProvenance& pv = ds.provenance;
  pv.state_label = state_label;
  pv.seed = seed;
  pv.visibility = params.parity_visibility;
  pv.readout_error = params.readout_error;
  pv.prep_error = params.prep_error;
  pv.parity_phase_error = noise.parity_phase_error;
  pv.n_a = rho.dims().n_a();
  pv.n_b = rho.dims().n_b();
  pv.plan = plan.kind;
  return ds;
}

std::vector<WignerEstimate> dataset_to_wigner_estimates(const TomographyDataset& dataset) {
  std::vector<WignerEstimate> out;
  out.reserve(dataset.records.size());
  for (const MeasurementRecord& r : dataset.records) {
    if (r.n_total <= 0) throw ValidationError("record with n_total <= 0");
    const double p = static_cast<double>(r.n_even) / static_cast<double>(r.n_total);
    out.push_back({r.point, 2.0 * p - 1.0, 2.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(r.n_total))});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const char* kDatasetHeader = "re_ba,im_ba,re_bb,im_bb,n_even,n_total";

nlohmann::json provenance_json(const DatasetProvenance& p, std::size_t n_records) {
  return nlohmann::json{{"state_label", p.state_label},
                        {"seed", p.seed},
                        {"visibility", p.visibility},
                        {"readout_error", p.readout_error},
                        {"prep_error", p.prep_error},
                        {"parity_phase_error", p.parity_phase_error},
                        {"cutoff_a", p.n_a},
                        {"cutoff_b", p.n_b},
                        {"plan", p.plan},
                        {"records", n_records},
                        {"wigner_scale", 4.0 / (kPi * kPi)}};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void write_dataset(const std::string& path, const TomographyDataset& dataset) {
  dataset.validate();
  std::string csv = std::string(kDatasetHeader) + "\n";
  for (const MeasurementRecord& r : dataset.records) {
    csv += format_double(r.point.beta_a.real()) + "," + format_double(r.point.beta_a.imag()) + "," +
           format_double(r.point.beta_b.real()) + "," + format_double(r.point.beta_b.imag()) + "," +
           std::to_string(r.n_even) + "," + std::to_string(r.n_total) + "\n";
  }
  atomic_write(path + ".json", provenance_json(dataset.provenance, dataset.records.size()).dump(2) + "\n");
  atomic_write(path, csv);
}

TomographyDataset read_dataset(const std::string& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kDatasetHeader) throw ValidationError("'" + path + "' does not start with header " + kDatasetHeader);
  TomographyDataset ds;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw ValidationError(path + ":" + std::to_string(row) + ": expected 6 columns");
    try {
      MeasurementRecord r;
      std::size_t used = 0;
      double v[4];
      for (int k = 0; k < 4; ++k) {
        v[k] = std::stod(cells[k], &used);
        if (used != cells[k].size()) throw std::invalid_argument(cells[k]);
      }
      r.point = {cplx(v[0], v[1]), cplx(v[2], v[3])};
      r.n_even = std::stoll(cells[4], &used);
      if (used != cells[4].size()) throw std::invalid_argument(cells[4]);
      r.n_total = std::stoll(cells[5], &used);
      if (used != cells[5].size()) throw std::invalid_argument(cells[5]);
      ds.records.push_back(r);
    } catch (const std::exception&) {
      throw ValidationError(path + ":" + std::to_string(row) + ": malformed value");
    }
  }
  ds.validate();
  const std::string sidecar = path + ".json";
  if (std::filesystem::exists(sidecar)) {
    try {
      const nlohmann::json j = nlohmann::json::parse(read_file(sidecar));
      DatasetProvenance& p = ds.provenance;
      p.state_label = j.value("state_label", "");
      p.seed = j.value("seed", std::uint64_t{0});
      p.visibility = j.value("visibility", 1.0);
      p.readout_error = j.value("readout_error", 0.0);
      p.prep_error = j.value("prep_error", 0.0);
      p.parity_phase_error = j.value("parity_phase_error", 0.0);
      p.n_a = j.value("cutoff_a", 0);
      p.n_b = j.value("cutoff_b", 0);
      p.plan = j.value("plan", "");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad dataset sidecar '" + sidecar + "': " + e.what());
    }
  }
  return ds;
}

void write_wigner_csv(const std::string& path, const std::vector<SamplePoint>& points, const std::vector<double>& values) {
  if (points.size() != values.size()) throw ValidationError("points and values differ in length");
  std::string csv = "re_ba,im_ba,re_bb,im_bb,value\n";
  for (std::size_t i = 0; i < points.size(); ++i)
    csv += format_double(points[i].beta_a.real()) + "," + format_double(points[i].beta_a.imag()) + "," +
           format_double(points[i].beta_b.real()) + "," + format_double(points[i].beta_b.imag()) + "," +
           format_double(values[i]) + "\n";
  atomic_write(path, csv);
}

}  // namespace twobox
