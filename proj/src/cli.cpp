#include "twobox/cli.hpp"

#include <Eigen/Core>
#include <CLI11.hpp>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <regex>

#include "twobox/analysis.hpp"
#include "twobox/errors.hpp"
#include "twobox/io.hpp"
#include "twobox/parallel.hpp"
#include "twobox/protocols.hpp"
#include "twobox/reconstruction.hpp"
#include "twobox/tomography.hpp"

#ifndef TWOBOX_VERSION
#define TWOBOX_VERSION "0.0.0"
#endif

namespace twobox {

using nlohmann::json;

json default_run_config() {
  return json{
      {"device",
       {{"chi_ge_a_mhz", 0.71},
        {"chi_ge_b_mhz", 1.41},
        {"chi_ef_a_mhz", 1.54},
        {"chi_ef_b_mhz", 0.93},
        {"kerr_a_khz", 0.83},
        {"kerr_b_khz", 5.6},
        {"kerr_ab_khz", -9.0},
        {"t1_a_ms", 2.75},
        {"t1_b_ms", 1.45},
        {"parity_visibility", 1.0},
        {"prep_error", 0.0},
        {"readout_error", 0.0}}},
      {"dims", {{"cutoff_a", 12}, {"cutoff_b", 12}}},
      {"state",
       {{"kind", "cat"},
        {"alpha_a", 1.92},
        {"alpha_b", 1.92},
        {"phase_rad", "pi"},
        {"sign_a", 1},
        {"sign_b", 1},
        {"decomposed", false},
        {"sequence_file", ""}}},
      {"plan",
       {{"kind", "cut"}, {"cut", "ReRe"}, {"half_extent", 2.0}, {"n_axis", 81}, {"n_points", 3000}, {"n_rep", 2000}}},
      {"noise", {{"parity_phase_error", 0.0}, {"kerr_during_waits", false}, {"amplitude_damping", false}}},
      {"solve_times",
       {{"protocol", "B"},
        {"target_phi_a_rad", "pi"},
        {"target_phi_b_rad", "pi"},
        {"max_branch", 2},
        {"operating_point", false},
        {"dt1_ns", 0.0},
        {"dt2_ns", 184.0},
        {"padding_ns", 16.0}}},
      {"mle",
       {{"dataset_file", ""},
        {"cutoff_a", 12},
        {"cutoff_b", 12},
        {"lambda", 10.0},
        {"max_iters", 2000},
        {"grad_tolerance", 1e-6},
        {"trace_tolerance", 1e-3},
        {"probability_floor", 1e-6},
        {"init", "identity"}}},
      {"decay", {{"t_max_us", 600.0}, {"n_times", 61}}},
      {"seed", 1},
      {"output_dir", "."}};
}

double parse_angle(const std::string& text) {
  static const std::regex pattern(
      R"(^\s*([+-])?\s*((?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\s*(\*?\s*pi)?\s*(?:/\s*(\d+\.?\d*))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern) || (!m[2].matched && !m[3].matched))
    throw ValidationError("cannot parse angle '" + text + "'");
  if (m[3].matched && m[3].str().front() == '*' && !m[2].matched) throw ValidationError("cannot parse angle '" + text + "'");
  double v = m[2].matched ? std::stod(m[2].str()) : 1.0;
  if (m[3].matched) v *= kPi;
  if (m[4].matched) {
    const double d = std::stod(m[4].str());
    if (d == 0.0) throw ValidationError("angle '" + text + "' divides by zero");
    v /= d;
  }
  return m[1].matched && m[1].str() == "-" ? -v : v;
}

namespace {

// ---------------------------------------------------------------------------
// Config handling

bool is_angle_key(const std::string& key) { return key.size() > 4 && key.compare(key.size() - 4, 4, "_rad") == 0; }

void merge_checked(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ValidationError("config " + (where.empty() ? "root" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string name = where + key;
    const auto it = base.find(key);
    if (it == base.end()) throw ValidationError("unknown config key '" + name + "'");
    if (it->is_object()) {
      merge_checked(*it, value, name + ".");
      continue;
    }
    const bool ok = (it->is_boolean() && value.is_boolean()) ||
                    (it->is_number_integer() && value.is_number_integer()) ||
                    (it->is_number_float() && value.is_number()) || (it->is_string() && value.is_string()) ||
                    (is_angle_key(key) && (value.is_number() || value.is_string()));
    if (!ok) throw ValidationError("config key '" + name + "' has the wrong type");
    *it = value;
  }
}

double angle_of(const json& v) { return v.is_string() ? parse_angle(v.get<std::string>()) : v.get<double>(); }

DeviceParams device_from(const json& d) {
  DeviceParams p;
  const double mhz = kTwoPi * 1e6, khz = kTwoPi * 1e3;
  p.chi_ge_a = mhz * d["chi_ge_a_mhz"].get<double>();
  p.chi_ge_b = mhz * d["chi_ge_b_mhz"].get<double>();
  p.chi_ef_a = mhz * d["chi_ef_a_mhz"].get<double>();
  p.chi_ef_b = mhz * d["chi_ef_b_mhz"].get<double>();
  p.kerr_a = khz * d["kerr_a_khz"].get<double>();
  p.kerr_b = khz * d["kerr_b_khz"].get<double>();
  p.kerr_ab = khz * d["kerr_ab_khz"].get<double>();
  p.t1_a = 1e-3 * d["t1_a_ms"].get<double>();
  p.t1_b = 1e-3 * d["t1_b_ms"].get<double>();
  p.parity_visibility = d["parity_visibility"].get<double>();
  p.prep_error = d["prep_error"].get<double>();
  p.readout_error = d["readout_error"].get<double>();
  p.validate();
  return p;
}

NoiseConfig noise_from(const json& n) {
  NoiseConfig c;
  c.parity_phase_error = n["parity_phase_error"].get<double>();
  c.kerr_during_waits = n["kerr_during_waits"].get<bool>();
  c.amplitude_damping = n["amplitude_damping"].get<bool>();
  c.validate();
  return c;
}

int positive_int(const json& v, const std::string& name) {
  const int x = v.get<int>();
  if (x < 1) throw ValidationError(name + " must be >= 1");
  return x;
}

// Everything a command needs, resolved and validated before any computation.
struct Run {
  std::string command;
  json config;
  DeviceParams device;
  NoiseConfig noise;
  SystemDims dims{1, 1, 1};
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  json results = json::object();
  std::vector<std::string> outputs;

  std::string output(const std::string& name) {
    outputs.push_back(name);
    return (out_dir / name).string();
  }
};

// ---------------------------------------------------------------------------
// States and plans

struct PreparedState {
  DensityMatrix rho;  // cavities only
  std::string label;
  double alpha_a = 0.0;
  double alpha_b = 0.0;
  std::optional<StateVector> target;  // ideal pure state, when one is defined
  std::optional<GateSequence> sequence;
};

PreparedState build_state(const Run& run) {
  const json& s = run.config["state"];
  const std::string kind = s["kind"].get<std::string>();
  const double alpha_a = s["alpha_a"].get<double>(), alpha_b = s["alpha_b"].get<double>();
  if (!std::isfinite(alpha_a) || !std::isfinite(alpha_b)) throw ValidationError("state amplitudes must be finite");
  const double phase = angle_of(s["phase_rad"]);
  std::optional<DensityMatrix> rho;
  PreparedState st{DensityMatrix(SystemDims(1, 1, 1), Matrix::Ones(1, 1)), kind, alpha_a, alpha_b, {}, {}};
  char buf[128];
  if (kind == "cat") {
    st.target = two_mode_cat(run.dims, st.alpha_a, st.alpha_b, phase);
    rho = preparation_error_channel(DensityMatrix(*st.target), run.device.prep_error);
    std::snprintf(buf, sizeof buf, "cat alpha=(%.6g,%.6g) phase=%.6g", st.alpha_a, st.alpha_b, phase);
  } else if (kind == "product_cat") {
    if (st.alpha_a != st.alpha_b) throw ValidationError("product_cat uses one amplitude; set alpha_a = alpha_b");
    st.target = make_product_cat(run.dims, st.alpha_a, s["sign_a"].get<int>(), s["sign_b"].get<int>());
    rho = preparation_error_channel(DensityMatrix(*st.target), run.device.prep_error);
    std::snprintf(buf, sizeof buf, "product_cat alpha=%.6g signs=(%d,%d)", st.alpha_a, s["sign_a"].get<int>(),
                  s["sign_b"].get<int>());
  } else if (kind == "generated") {
    CatGenerationOptions opt;
    opt.alpha_a = st.alpha_a;
    opt.alpha_b = st.alpha_b;
    opt.phase = phase;
    opt.decomposed = s["decomposed"].get<bool>();
    const CatGenerationPlan plan = build_cat_generation(opt, run.device);
    st.sequence = plan.sequence;
    st.target = two_mode_cat(run.dims, plan.alpha_a, plan.alpha_b, plan.phase);
    rho = prepare_cavity_state(plan.sequence, run.dims, run.device, run.noise);
    std::snprintf(buf, sizeof buf, "generated alpha=(%.6g,%.6g) phase=%.6g%s", st.alpha_a, st.alpha_b, phase,
                  opt.decomposed ? " decomposed" : "");
  } else if (kind == "sequence") {
    const std::string file = s["sequence_file"].get<std::string>();
    if (file.empty()) throw ValidationError("state kind 'sequence' needs state.sequence_file");
    st.sequence = parse_sequence(read_file(file));
    rho = prepare_cavity_state(*st.sequence, run.dims, run.device, run.noise);
    std::snprintf(buf, sizeof buf, "sequence %s", std::filesystem::path(file).filename().string().c_str());
  } else {
    throw ValidationError("unknown state kind '" + kind + "' (cat, product_cat, generated, sequence)");
  }
  st.rho = *rho;
  st.label = buf;
  return st;
}

TomographyPlan build_plan(const json& p) {
  const std::string kind = p["kind"].get<std::string>();
  const double half = p["half_extent"].get<double>();
  const int n_axis = positive_int(p["n_axis"], "plan.n_axis");
  const int n_points = positive_int(p["n_points"], "plan.n_points");
  const int n_rep = positive_int(p["n_rep"], "plan.n_rep");
  TomographyPlan plan;
  if (kind == "cut") {
    plan = plane_cut(parse_cut_kind(p["cut"].get<std::string>()), half, n_axis, n_rep);
  } else if (kind == "sprinkle") {
    plan = sprinkle_plan(n_points, half, n_rep);
  } else if (kind == "mixed") {
    std::vector<TomographyPlan> parts;
    for (CutKind c : {CutKind::ReRe, CutKind::ImIm, CutKind::ReImA, CutKind::ReImB})
      parts.push_back(plane_cut(c, half, n_axis, n_rep));
    parts.push_back(sprinkle_plan(n_points, half, n_rep));
    plan = concat_plans(parts);
  } else {
    throw ValidationError("unknown plan kind '" + kind + "' (cut, sprinkle, mixed)");
  }
  plan.validate();
  return plan;
}

ParityProtocol parse_protocol(const std::string& name) {
  if (name == "A" || name == "ge-gf") return ParityProtocol::GeThenGf;
  if (name == "B" || name == "ef-gf") return ParityProtocol::EfThenGf;
  throw ValidationError("unknown protocol '" + name + "' (A | ge-gf, B | ef-gf)");
}

std::string protocol_name(ParityProtocol p) { return p == ParityProtocol::GeThenGf ? "A" : "B"; }

// ---------------------------------------------------------------------------
// Commands

int cmd_solve_times(Run& run, std::ostream& out) {
  const json& c = run.config["solve_times"];
  const ParityProtocol protocol = parse_protocol(c["protocol"].get<std::string>());
  const double phi_a = angle_of(c["target_phi_a_rad"]), phi_b = angle_of(c["target_phi_b_rad"]);
  const int max_branch = c["max_branch"].get<int>();
  if (max_branch < 0) throw ValidationError("solve_times.max_branch must be >= 0");
  const WaitTimeSolution s = solve_wait_times(run.device, protocol, phi_a, phi_b, max_branch);
  // Parity reported at the origin for the ideal odd cat, relative to the ideal -1.
  const int cutoff = std::max(run.dims.n_a(), run.dims.n_b());
  const double alpha = run.config["state"]["alpha_a"].get<double>();
  const double deficit = 1.0 + mapped_parity_value(s.achieved_phi_a, s.achieved_phi_b, alpha, alpha, cutoff);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "protocol %s: dt1 = %.3f ns, dt2 = %.3f ns, branches (%d, %d), %s, residual %.3e rad\n"
                "  achieved phases (%.4f pi, %.4f pi), parity deficit %.4e\n",
                protocol_name(protocol).c_str(), s.dt1 * 1e9, s.dt2 * 1e9, s.branch_a, s.branch_b,
                s.feasible ? "feasible" : "infeasible", s.residual, s.achieved_phi_a / kPi, s.achieved_phi_b / kPi,
                deficit);
  out << buf;
  run.results["solution"] = {{"protocol", protocol_name(protocol)},
                             {"dt1_ns", s.dt1 * 1e9},
                             {"dt2_ns", s.dt2 * 1e9},
                             {"branch_a", s.branch_a},
                             {"branch_b", s.branch_b},
                             {"feasible", s.feasible},
                             {"residual_rad", s.residual},
                             {"achieved_phi_a_rad", s.achieved_phi_a},
                             {"achieved_phi_b_rad", s.achieved_phi_b},
                             {"parity_deficit", deficit}};
  if (c["operating_point"].get<bool>()) {
    const GateSequence seq = build_joint_parity(protocol, 1e-9 * c["dt1_ns"].get<double>(),
                                                1e-9 * c["dt2_ns"].get<double>(), 1e-9 * c["padding_ns"].get<double>());
    const double e1 = seq.effective_wait(1), e2 = seq.effective_wait(3);
    const auto [pa, pb] = achieved_phases(run.device, protocol, e1, e2);
    const double op_deficit = 1.0 + mapped_parity_value(pa, pb, alpha, alpha, cutoff);
    std::snprintf(buf, sizeof buf,
                  "operating point: effective waits (%.3f, %.3f) ns, phases (%.4f pi, %.4f pi), parity deficit %.4e\n",
                  e1 * 1e9, e2 * 1e9, pa / kPi, pb / kPi, op_deficit);
    out << buf;
    run.results["operating_point"] = {{"effective_dt1_ns", e1 * 1e9},
                                      {"effective_dt2_ns", e2 * 1e9},
                                      {"phi_a_rad", pa},
                                      {"phi_b_rad", pb},
                                      {"parity_deficit", op_deficit}};
    atomic_write(run.output("parity_sequence.txt"), serialize_sequence(seq));
  }
  atomic_write(run.output("solve_times.json"), run.results.dump(2) + "\n");
  return kExitOk;
}

int cmd_generate(Run& run, std::ostream& out) {
  const PreparedState st = build_state(run);
  const double parity = joint_wigner(st.rho, {}).value;
  run.results = {{"label", st.label}, {"joint_parity", parity}, {"purity", purity(st.rho)}};
  if (st.target) run.results["fidelity_to_target"] = fidelity(st.rho, *st.target);
  write_density_csv(run.output("state_density.csv"), st.rho.data());
  if (st.sequence) atomic_write(run.output("state_sequence.txt"), serialize_sequence(*st.sequence));
  out << st.label << ": <P_J> = " << format_double(parity);
  if (st.target) out << ", fidelity " << format_double(run.results["fidelity_to_target"].get<double>());
  out << "\n";
  return kExitOk;
}

int cmd_wigner(Run& run, std::ostream& out) {
  const TomographyPlan plan = build_plan(run.config["plan"]);
  const PreparedState st = build_state(run);
  std::vector<double> w = evaluate_points(st.rho, plan.points, run.noise.parity_phase_error);
  for (double& v : w) v *= run.device.parity_visibility;
  write_wigner_csv(run.output("wigner.csv"), plan.points, w);
  run.results = {{"label", st.label}, {"plan", plan.kind}, {"points", plan.points.size()}};
  out << st.label << ": " << plan.points.size() << " points (" << plan.kind << ")\n";
  return kExitOk;
}

int cmd_sample(Run& run, std::ostream& out) {
  const TomographyPlan plan = build_plan(run.config["plan"]);
  const PreparedState st = build_state(run);
  const TomographyDataset ds = sample_dataset(st.rho, plan, run.device, run.noise, run.seed, st.label);
  const std::string path = run.output("dataset.csv");
  run.outputs.push_back("dataset.csv.json");
  write_dataset(path, ds);
  run.results = {{"label", st.label}, {"plan", plan.kind}, {"points", ds.records.size()}, {"n_rep", plan.n_rep}};
  out << st.label << ": " << ds.records.size() << " points x " << plan.n_rep << " shots\n";
  return kExitOk;
}

int cmd_reconstruct(Run& run, std::ostream& out) {
  const json& m = run.config["mle"];
  const std::string in = m["dataset_file"].get<std::string>();
  if (in.empty()) throw ValidationError("reconstruct needs --in or mle.dataset_file");
  MLEConfig cfg;
  cfg.cutoff_a = positive_int(m["cutoff_a"], "mle.cutoff_a");
  cfg.cutoff_b = positive_int(m["cutoff_b"], "mle.cutoff_b");
  cfg.lambda = m["lambda"].get<double>();
  cfg.max_iters = positive_int(m["max_iters"], "mle.max_iters");
  cfg.grad_tolerance = m["grad_tolerance"].get<double>();
  cfg.trace_tolerance = m["trace_tolerance"].get<double>();
  cfg.probability_floor = m["probability_floor"].get<double>();
  const std::string init = m["init"].get<std::string>();
  if (init == "identity")
    cfg.init = MLEInit::IdentityMixed;
  else if (init == "random")
    cfg.init = MLEInit::Random;
  else
    throw ValidationError("unknown mle.init '" + init + "' (identity, random)");
  cfg.init_seed = run.seed;
  cfg.validate();
  const TomographyDataset ds = read_dataset(in);
  const MLEResult r = reconstruct(ds, cfg);
  const std::string path = run.output("mle.csv");
  run.outputs.push_back("mle.csv.json");
  write_mle_result(path, r);
  const CatFit& fit = r.metrics.best_fit;
  run.results = {{"log_likelihood", r.log_likelihood},
                 {"trace_deviation", r.trace_deviation},
                 {"iterations", r.iterations},
                 {"converged", r.converged},
                 {"lambda_max", r.metrics.lambda_max},
                 {"purity", r.metrics.purity},
                 {"best_fit", {{"alpha_a", fit.alpha_a}, {"alpha_b", fit.alpha_b}, {"phase_rad", fit.phase},
                               {"fidelity", fit.fidelity}}}};
  out << "reconstructed " << cfg.cutoff_a << "x" << cfg.cutoff_b << " from " << ds.records.size()
      << " points: lambda_max " << format_double(r.metrics.lambda_max) << ", purity "
      << format_double(r.metrics.purity) << ", best-fit fidelity " << format_double(fit.fidelity)
      << (r.converged ? "" : " (not converged)") << "\n";
  return r.converged ? kExitOk : kExitNumerical;
}

int cmd_bell(Run& run, std::ostream& out) {
  const PreparedState st = build_state(run);
  const BellResult r = bell_signal(st.rho, default_bell_spec(st.alpha_a), run.device.parity_visibility);
  write_bell_csv(run.output("bell.csv"), r);
  run.results = {{"label", st.label}, {"signal", r.signal}, {"values", r.values}};
  out << st.label << ": B = " << format_double(r.signal) << "\n";
  return kExitOk;
}

int cmd_pauli(Run& run, std::ostream& out) {
  const PreparedState st = build_state(run);
  const LogicalCode code{st.alpha_a};
  const PauliResult r = pauli_tomography(
      [&](cplx a, cplx b) { return measure_joint_parity(st.rho, a, b, run.device, run.noise); }, code);
  write_pauli_csv(run.output("pauli.csv"), r);
  run.results = {{"label", st.label}, {"direct_fidelity", r.direct_fidelity()}};
  for (int k = 0; k < 16; ++k) run.results["values"][r.labels[k]] = r.values[k];
  out << st.label << ": direct fidelity " << format_double(r.direct_fidelity()) << "\n";
  return kExitOk;
}

int cmd_decay(Run& run, std::ostream& out) {
  const json& d = run.config["decay"];
  const double t_max = 1e-6 * d["t_max_us"].get<double>();
  const int n = d["n_times"].get<int>();
  if (!(t_max > 0.0) || n < 2) throw ValidationError("decay needs t_max_us > 0 and n_times >= 2");
  const PreparedState st = build_state(run);
  if (st.alpha_a != st.alpha_b) throw ValidationError("decay analysis expects alpha_a = alpha_b");
  std::vector<double> times(n), analytic(n), simulated(n);
  const double p0 = joint_wigner(st.rho, {}).value;
  std::vector<DecayPoint> analytic_pts;
  for (int k = 0; k < n; ++k) {
    times[k] = t_max * k / (n - 1);
    analytic[k] = parity_decay_analytic(times[k], st.alpha_a, run.device.t1_a, run.device.t1_b, p0);
    analytic_pts.push_back({times[k], analytic[k]});
  }
  const std::vector<DecayPoint> sim = parity_decay_simulated(st.rho, times, run.device);
  double max_gap = 0.0;
  for (int k = 0; k < n; ++k) {
    simulated[k] = sim[k].value;
    max_gap = std::max(max_gap, std::abs(simulated[k] - analytic[k]));
  }
  const ExponentialFit fa = fit_exponential(analytic_pts), fs = fit_exponential(sim);
  write_decay_csv(run.output("decay.csv"), times, analytic, simulated);
  run.results = {{"label", st.label},
                 {"analytic_fit", {{"amplitude", fa.amplitude}, {"tau_us", fa.tau * 1e6}}},
                 {"simulated_fit", {{"amplitude", fs.amplitude}, {"tau_us", fs.tau * 1e6}}},
                 {"max_abs_gap", max_gap}};
  atomic_write(run.output("decay_fit.json"), run.results.dump(2) + "\n");
  out << st.label << ": fitted decay " << format_double(fa.tau * 1e6) << " us (analytic), "
      << format_double(fs.tau * 1e6) << " us (channel)\n";
  return kExitOk;
}

int cmd_spectrum(Run& run, std::ostream& out) {
  const PreparedState st = build_state(run);
  const RealVector p = total_photon_distribution(st.rho);
  std::string csv = "n_total,probability\n";
  double mean = 0.0;
  for (int k = 0; k < p.size(); ++k) {
    csv += std::to_string(k) + "," + format_double(p(k)) + "\n";
    mean += k * p(k);
  }
  atomic_write(run.output("spectrum.csv"), csv);
  // Fringe cut along the ImIm line through the origin in direction (alpha_a, alpha_b).
  const double norm = std::hypot(st.alpha_a, st.alpha_b);
  constexpr double kHalfLength = 1.5;
  constexpr int kLinePoints = 601;
  int crossings = 0;
  if (norm > 0.0) {
    std::vector<SamplePoint> pts;
    for (int k = 0; k < kLinePoints; ++k) {
      const double s = -kHalfLength + 2.0 * kHalfLength * k / (kLinePoints - 1);
      pts.push_back({cplx(0.0, s * st.alpha_a / norm), cplx(0.0, s * st.alpha_b / norm)});
    }
    write_wigner_csv(run.output("fringe_cut.csv"), pts, evaluate_points(st.rho, pts));
    crossings = count_fringe_crossings(st.rho, st.alpha_a, st.alpha_b, kHalfLength, kLinePoints);
  }
  run.results = {{"label", st.label},
                 {"mean_total_photons", mean},
                 {"cat_size", cat_size(st.alpha_a, st.alpha_b)},
                 {"fringe_crossings", crossings}};
  out << st.label << ": mean N " << format_double(mean) << ", cat size " << format_double(cat_size(st.alpha_a, st.alpha_b))
      << ", fringe crossings " << crossings << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Flags

struct Flags {
  std::string config_file;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  // state and dims
  std::optional<std::string> state, phase, sequence_file;
  std::optional<double> alpha, alpha_a, alpha_b;
  std::optional<int> sign_a, sign_b, cutoff, cutoff_a, cutoff_b;
  bool decomposed = false;
  // device and noise
  std::optional<double> visibility, prep_error, readout_error, epsilon, t1_a_ms, t1_b_ms;
  // plan
  std::optional<std::string> plan, cut;
  std::optional<double> half_extent;
  std::optional<int> n_axis, n_points, n_rep;
  // solve-times
  std::optional<std::string> protocol, targets;
  std::optional<int> max_branch;
  std::optional<double> dt1_ns, dt2_ns, padding_ns;
  // reconstruct
  std::optional<std::string> input, init;
  std::optional<int> max_iters;
  // decay
  std::optional<double> t_max_us;
  std::optional<int> n_times;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_file, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--threads", f.threads, "worker cap (default: TWOBOX_THREADS, else hardware)");
  cmd->add_option("--seed", f.seed, "RNG seed");
}

void add_device(CLI::App* cmd, Flags& f) {
  cmd->add_option("--visibility", f.visibility, "parity visibility");
  cmd->add_option("--prep-error", f.prep_error, "preparation error probability");
  cmd->add_option("--readout-error", f.readout_error, "readout flip probability");
  cmd->add_option("--epsilon", f.epsilon, "parity mapping phase error");
  cmd->add_option("--t1-a-ms", f.t1_a_ms, "cavity A lifetime (ms)");
  cmd->add_option("--t1-b-ms", f.t1_b_ms, "cavity B lifetime (ms)");
}

void add_state(CLI::App* cmd, Flags& f) {
  cmd->add_option("--state", f.state, "cat | product_cat | generated | sequence");
  cmd->add_option("--alpha", f.alpha, "amplitude for both cavities");
  cmd->add_option("--alpha-a", f.alpha_a, "cavity A amplitude");
  cmd->add_option("--alpha-b", f.alpha_b, "cavity B amplitude");
  cmd->add_option("--phase", f.phase, "branch phase, e.g. pi or 0");
  cmd->add_option("--sign-a", f.sign_a, "product cat sign for A (+1/-1)");
  cmd->add_option("--sign-b", f.sign_b, "product cat sign for B (+1/-1)");
  cmd->add_option("--sequence", f.sequence_file, "gate sequence file (state kind 'sequence')");
  cmd->add_flag("--decomposed", f.decomposed, "generate with the displacement + wait decomposition");
  cmd->add_option("--cutoff", f.cutoff, "Fock cutoff for both cavities");
  cmd->add_option("--cutoff-a", f.cutoff_a, "Fock cutoff for cavity A");
  cmd->add_option("--cutoff-b", f.cutoff_b, "Fock cutoff for cavity B");
}

void add_plan(CLI::App* cmd, Flags& f) {
  cmd->add_option("--plan", f.plan, "cut | sprinkle | mixed");
  cmd->add_option("--cut", f.cut, "ReRe | ImIm | ReIm_A | ReIm_B");
  cmd->add_option("--n", f.n_axis, "grid points per axis");
  cmd->add_option("--half-extent", f.half_extent, "plan half extent");
  cmd->add_option("--points", f.n_points, "sprinkled points");
  cmd->add_option("--nrep", f.n_rep, "shots per point");
}

template <class T>
void put(json& slot, const std::optional<T>& v) {
  if (v) slot = *v;
}

void apply_flags(const std::string& command, const Flags& f, json& c) {
  put(c["output_dir"], f.out_dir);
  put(c["seed"], f.seed);
  json& s = c["state"];
  put(s["kind"], f.state);
  put(s["alpha_a"], f.alpha);
  put(s["alpha_b"], f.alpha);
  put(s["alpha_a"], f.alpha_a);
  put(s["alpha_b"], f.alpha_b);
  put(s["phase_rad"], f.phase);
  put(s["sign_a"], f.sign_a);
  put(s["sign_b"], f.sign_b);
  if (f.sequence_file) {
    s["sequence_file"] = *f.sequence_file;
    if (!f.state) s["kind"] = "sequence";
  }
  if (f.decomposed) s["decomposed"] = true;
  json& dims = command == "reconstruct" ? c["mle"] : c["dims"];
  put(dims["cutoff_a"], f.cutoff);
  put(dims["cutoff_b"], f.cutoff);
  put(dims["cutoff_a"], f.cutoff_a);
  put(dims["cutoff_b"], f.cutoff_b);
  json& d = c["device"];
  put(d["parity_visibility"], f.visibility);
  put(d["prep_error"], f.prep_error);
  put(d["readout_error"], f.readout_error);
  put(d["t1_a_ms"], f.t1_a_ms);
  put(d["t1_b_ms"], f.t1_b_ms);
  put(c["noise"]["parity_phase_error"], f.epsilon);
  json& p = c["plan"];
  put(p["kind"], f.plan);
  if (f.cut) {
    p["cut"] = *f.cut;
    if (!f.plan) p["kind"] = "cut";
  }
  put(p["n_axis"], f.n_axis);
  put(p["half_extent"], f.half_extent);
  put(p["n_points"], f.n_points);
  put(p["n_rep"], f.n_rep);
  json& t = c["solve_times"];
  put(t["protocol"], f.protocol);
  if (f.targets) {
    const auto comma = f.targets->find(',');
    if (comma == std::string::npos) throw ValidationError("--targets expects 'phi_a,phi_b'");
    t["target_phi_a_rad"] = f.targets->substr(0, comma);
    t["target_phi_b_rad"] = f.targets->substr(comma + 1);
  }
  put(t["max_branch"], f.max_branch);
  if (f.dt1_ns || f.dt2_ns) t["operating_point"] = true;
  put(t["dt1_ns"], f.dt1_ns);
  put(t["dt2_ns"], f.dt2_ns);
  put(t["padding_ns"], f.padding_ns);
  json& m = c["mle"];
  put(m["dataset_file"], f.input);
  put(m["init"], f.init);
  put(m["max_iters"], f.max_iters);
  put(c["decay"]["t_max_us"], f.t_max_us);
  put(c["decay"]["n_times"], f.n_times);
}

int resolve_threads(const std::optional<int>& flag) {
  if (flag) {
    if (*flag < 1) throw ValidationError("--threads must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("TWOBOX_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ValidationError("TWOBOX_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return 0;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

json versions() {
  return {{"twobox", TWOBOX_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}};
}

Run prepare_run(const std::string& command, const Flags& f) {
  json config = default_run_config();
  if (!f.config_file.empty()) {
    json file;
    try {
      file = json::parse(read_file(f.config_file));
    } catch (const json::parse_error& e) {
      throw ValidationError("config '" + f.config_file + "' is not valid JSON: " + e.what());
    }
    merge_checked(config, file, "");
  }
  apply_flags(command, f, config);
  Run run;
  run.command = command;
  run.config = config;
  run.device = device_from(config["device"]);
  run.noise = noise_from(config["noise"]);
  run.dims = SystemDims(positive_int(config["dims"]["cutoff_a"], "dims.cutoff_a"),
                        positive_int(config["dims"]["cutoff_b"], "dims.cutoff_b"), 1);
  if (!config["seed"].is_number_integer() || config["seed"].get<std::int64_t>() < 0) throw ValidationError("seed must be a non-negative integer");
  run.seed = config["seed"].get<std::uint64_t>();
  run.out_dir = config["output_dir"].get<std::string>();
  std::error_code ec;
  std::filesystem::create_directories(run.out_dir, ec);
  if (ec || !std::filesystem::is_directory(run.out_dir))
    throw ValidationError("cannot create output directory '" + run.out_dir.string() + "'");
  set_default_threads(resolve_threads(f.threads));
  return run;
}

void write_manifest(Run& run) {
  json config = run.config;
  config.erase("output_dir");
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  const json manifest{{"command", run.command}, {"config", config},           {"config_hash_fnv1a64", hash},
                      {"seed", run.seed},       {"versions", versions()},     {"outputs", run.outputs},
                      {"results", run.results}};
  atomic_write((run.out_dir / ("manifest_" + run.command + ".json")).string(), manifest.dump(2) + "\n");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-cavity cat-state simulation and analysis", "twobox"};
  app.require_subcommand(1);
  Flags f;
  using Handler = std::function<int(Run&, std::ostream&)>;
  std::vector<std::pair<CLI::App*, Handler>> commands;

  auto* solve = app.add_subcommand("solve-times", "solve parity-mapping wait times");
  add_common(solve, f);
  add_device(solve, f);
  solve->add_option("--protocol", f.protocol, "A (ge then gf) | B (ef then gf)");
  solve->add_option("--targets", f.targets, "target phases 'phi_a,phi_b'");
  solve->add_option("--max-branch", f.max_branch, "largest 2 pi branch searched");
  solve->add_option("--dt1-ns", f.dt1_ns, "evaluate programmed first wait (ns)");
  solve->add_option("--dt2-ns", f.dt2_ns, "evaluate programmed second wait (ns)");
  solve->add_option("--padding-ns", f.padding_ns, "pulse padding per adjacent rotation (ns)");
  commands.emplace_back(solve, cmd_solve_times);

  auto state_command = [&](const char* name, const char* help, Handler h, bool plan) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, f);
    add_device(cmd, f);
    add_state(cmd, f);
    if (plan) add_plan(cmd, f);
    commands.emplace_back(cmd, std::move(h));
    return cmd;
  };
  state_command("generate", "prepare a state and write its density matrix", cmd_generate, false);
  state_command("wigner", "exact joint Wigner values on a plan", cmd_wigner, true);
  state_command("sample", "binomial shot-noise dataset on a plan", cmd_sample, true);
  state_command("bell", "Bell signal at the default corners", cmd_bell, false);
  state_command("pauli", "encoded two-qubit Pauli correlators", cmd_pauli, false);
  auto* decay = state_command("decay", "joint parity decay: analytic and channel", cmd_decay, false);
  decay->add_option("--t-max-us", f.t_max_us, "last time (us)");
  decay->add_option("--n-times", f.n_times, "number of times");
  state_command("spectrum", "total photon number distribution and fringe cut", cmd_spectrum, false);

  auto* rec = app.add_subcommand("reconstruct", "maximum-likelihood density matrix from a dataset");
  add_common(rec, f);
  rec->add_option("--in", f.input, "dataset CSV");
  rec->add_option("--cutoff", f.cutoff, "reconstruction cutoff for both cavities");
  rec->add_option("--cutoff-a", f.cutoff_a, "reconstruction cutoff for cavity A");
  rec->add_option("--cutoff-b", f.cutoff_b, "reconstruction cutoff for cavity B");
  rec->add_option("--max-iters", f.max_iters, "iterations per penalty stage");
  rec->add_option("--init", f.init, "identity | random");
  commands.emplace_back(rec, cmd_reconstruct);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const int saved_threads = default_threads();
  int code = kExitOk;
  try {
    for (auto& [cmd, handler] : commands) {
      if (!cmd->parsed()) continue;
      Run run = prepare_run(cmd->get_name(), f);
      code = handler(run, out);
      write_manifest(run);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    code = kExitValidation;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << "\n";
    code = kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    code = kExitNumerical;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    code = kExitNumerical;
  }
  set_default_threads(saved_threads);
  return code;
}

}  // namespace twobox
