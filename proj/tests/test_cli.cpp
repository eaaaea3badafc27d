#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "twobox/cli.hpp"
#include "twobox/errors.hpp"
#include "twobox/hilbert.hpp"
#include "twobox/io.hpp"
#include "twobox/reconstruction.hpp"
#include "twobox/tomography.hpp"

using namespace twobox;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh, empty directory per test.
std::string scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("twobox_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

json read_json(const std::string& path) { return json::parse(read_file(path)); }

std::string write_config(const std::string& dir, const std::string& text) {
  const std::string path = dir + "/config.json";
  atomic_write(path, text);
  return path;
}

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST(Angle, Literals) {
  EXPECT_DOUBLE_EQ(parse_angle("pi"), kPi);
  EXPECT_DOUBLE_EQ(parse_angle("-pi/2"), -kPi / 2);
  EXPECT_DOUBLE_EQ(parse_angle("0.5*pi"), 0.5 * kPi);
  EXPECT_DOUBLE_EQ(parse_angle("2pi"), 2 * kPi);
  EXPECT_DOUBLE_EQ(parse_angle(" 3.5 "), 3.5);
  EXPECT_DOUBLE_EQ(parse_angle("1e-3"), 1e-3);
  EXPECT_DOUBLE_EQ(parse_angle("0"), 0.0);
  for (const char* bad : {"foo", "pi/0", "", "*pi", "pi pi", "1/"}) EXPECT_THROW(parse_angle(bad), ValidationError) << bad;
}

TEST(SolveTimes, ProtocolBDefaults) {
  const std::string dir = scratch("solve_b");
  const Outcome o = run({"solve-times", "--out", dir});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const json s = read_json(dir + "/solve_times.json")["solution"];
  EXPECT_NEAR(s["dt1_ns"].get<double>(), 29.8, 0.1);
  EXPECT_NEAR(s["dt2_ns"].get<double>(), 201.8, 0.1);
  EXPECT_TRUE(s["feasible"].get<bool>());
  EXPECT_NE(o.out.find("protocol B"), std::string::npos);
}

TEST(SolveTimes, ProtocolABranchZeroInfeasible) {
  const std::string dir = scratch("solve_a");
  ASSERT_EQ(run({"solve-times", "--protocol", "A", "--max-branch", "0", "--out", dir}).code, kExitOk);
  const json s = read_json(dir + "/solve_times.json")["solution"];
  EXPECT_FALSE(s["feasible"].get<bool>());
  EXPECT_GT(s["residual_rad"].get<double>(), 0.0);
}

TEST(SolveTimes, OperatingPointPhases) {
  const std::string dir = scratch("solve_op");
  ASSERT_EQ(run({"solve-times", "--protocol", "A", "--dt1-ns", "0", "--dt2-ns", "184", "--out", dir}).code, kExitOk);
  const json op = read_json(dir + "/solve_times.json")["operating_point"];
  EXPECT_NEAR(op["effective_dt2_ns"].get<double>(), 216.0, 1e-9);
  EXPECT_NEAR(op["phi_a_rad"].get<double>() / kPi, 0.97, 0.02);
  EXPECT_TRUE(fs::exists(dir + "/parity_sequence.txt"));
}

TEST(SolveTimes, EqualShiftsGiveZeroSecondWait) {
  const std::string dir = scratch("solve_eq");
  const std::string cfg = write_config(
      dir, R"({"device": {"chi_ge_b_mhz": 0.71, "chi_ef_b_mhz": 1.54}, "solve_times": {"protocol": "A"}})");
  ASSERT_EQ(run({"solve-times", "--config", cfg, "--out", dir}).code, kExitOk);
  const json s = read_json(dir + "/solve_times.json")["solution"];
  EXPECT_TRUE(s["feasible"].get<bool>());
  EXPECT_EQ(s["dt2_ns"].get<double>(), 0.0);
  EXPECT_NEAR(s["dt1_ns"].get<double>(), 1e9 / (2.0 * 0.71e6), 1e-6);
}

TEST(Wigner, ReReCutRowsAndValues) {
  const std::string dir = scratch("wigner");
  ASSERT_EQ(run({"wigner", "--state", "cat", "--alpha", "1.92", "--phase", "pi", "--cut", "ReRe", "--n", "81", "--out",
                 dir})
                .code,
            kExitOk);
  const std::string csv = read_file(dir + "/wigner.csv");
  EXPECT_EQ(count_lines(csv), 6562);
  // Grid midpoint is the origin: the odd cat has joint parity -1 there.
  std::istringstream rows(csv);
  std::string line;
  for (int k = 0; k <= 40 * 81 + 40 + 1; ++k) std::getline(rows, line);
  EXPECT_EQ(line.rfind("0,0,0,0,", 0), 0u) << line;
  EXPECT_NEAR(std::stod(line.substr(8)), -1.0, 1e-9);
}

TEST(Sample, ByteIdenticalAcrossRunsAndThreads) {
  const std::string a = scratch("sample_a"), b = scratch("sample_b");
  const std::vector<std::string> base{"sample", "--alpha", "1.5", "--cutoff", "8",    "--plan", "sprinkle",
                                      "--points", "300", "--nrep", "2000", "--seed", "7"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
  };
  ASSERT_EQ(run(with({"--out", a, "--threads", "1"})).code, kExitOk);
  ASSERT_EQ(run(with({"--out", b, "--threads", "3"})).code, kExitOk);
  for (const char* f : {"dataset.csv", "dataset.csv.json", "manifest_sample.json"})
    EXPECT_EQ(read_file(a + "/" + f), read_file(b + "/" + f)) << f;
  ::setenv("TWOBOX_THREADS", "2", 1);
  ASSERT_EQ(run(with({"--out", b})).code, kExitOk);
  ::unsetenv("TWOBOX_THREADS");
  EXPECT_EQ(read_file(a + "/dataset.csv"), read_file(b + "/dataset.csv"));
  ASSERT_EQ(run({"sample", "--alpha", "1.5", "--cutoff", "8", "--plan", "sprinkle", "--points", "300", "--nrep",
                 "2000", "--seed", "8", "--out", b})
                .code,
            kExitOk);
  EXPECT_NE(read_file(a + "/dataset.csv"), read_file(b + "/dataset.csv"));
}

TEST(Reconstruct, RoundTripThroughFiles) {
  const std::string dir = scratch("reconstruct");
  ASSERT_EQ(run({"sample", "--alpha", "1.0", "--cutoff", "6", "--plan", "mixed", "--n", "11", "--points", "200",
                 "--half-extent", "1.8", "--nrep", "100000", "--seed", "3", "--out", dir})
                .code,
            kExitOk);
  const Outcome o = run({"reconstruct", "--in", dir + "/dataset.csv", "--cutoff", "6", "--out", dir});
  ASSERT_EQ(o.code, kExitOk) << o.err;
  const Matrix rho = read_density_csv(dir + "/mle.csv");
  const SystemDims dims(6, 6, 1);
  EXPECT_GE(fidelity(DensityMatrix(dims, rho), two_mode_cat(dims, 1.0, 1.0, kPi)), 0.98);
  const json m = read_json(dir + "/manifest_reconstruct.json");
  EXPECT_TRUE(m["results"]["converged"].get<bool>());
  EXPECT_EQ(m["config"]["mle"]["cutoff_a"].get<int>(), 6);
}

TEST(Reconstruct, NonConvergenceIsNumericalFailure) {
  const std::string dir = scratch("reconstruct_fail");
  ASSERT_EQ(run({"sample", "--alpha", "1.0", "--cutoff", "5", "--plan", "sprinkle", "--points", "100", "--seed", "3",
                 "--out", dir})
                .code,
            kExitOk);
  EXPECT_EQ(run({"reconstruct", "--in", dir + "/dataset.csv", "--cutoff", "5", "--max-iters", "1", "--out", dir}).code,
            kExitNumerical);
}

TEST(Analyses, ReferenceScenarios) {
  const std::string dir = scratch("analyses");
  ASSERT_EQ(run({"bell", "--visibility", "0.81", "--out", dir}).code, kExitOk);
  EXPECT_NEAR(read_json(dir + "/manifest_bell.json")["results"]["signal"].get<double>(), 2.17, 0.15);
  ASSERT_EQ(run({"pauli", "--phase", "0", "--visibility", "0.81", "--prep-error", "0.02", "--out", dir}).code, kExitOk);
  const double dfe = read_json(dir + "/manifest_pauli.json")["results"]["direct_fidelity"].get<double>();
  EXPECT_GE(dfe, 0.74);
  EXPECT_LE(dfe, 0.82);
  ASSERT_EQ(run({"decay", "--t1-a-ms", "2.6", "--t1-b-ms", "1.5", "--out", dir}).code, kExitOk);
  const json fit = read_json(dir + "/decay_fit.json");
  EXPECT_NEAR(fit["analytic_fit"]["tau_us"].get<double>(), 150.0, 15.0);
  EXPECT_LT(fit["max_abs_gap"].get<double>(), 1e-3);
  EXPECT_EQ(count_lines(read_file(dir + "/decay.csv")), 62);
  ASSERT_EQ(run({"spectrum", "--alpha-a", "3.0", "--alpha-b", "3.3", "--cutoff-a", "20", "--cutoff-b", "22", "--out",
                 dir})
                .code,
            kExitOk);
  EXPECT_NEAR(read_json(dir + "/manifest_spectrum.json")["results"]["cat_size"].get<double>(), 80.0, 0.5);
  EXPECT_EQ(count_lines(read_file(dir + "/spectrum.csv")), 1 + 20 + 22 - 1);
}

TEST(Generate, SequenceStatesAndDensityFile) {
  const std::string dir = scratch("generate");
  ASSERT_EQ(run({"generate", "--state", "generated", "--out", dir}).code, kExitOk);
  const json r = read_json(dir + "/manifest_generate.json")["results"];
  EXPECT_NEAR(r["joint_parity"].get<double>(), -1.0, 1e-6);
  EXPECT_GE(r["fidelity_to_target"].get<double>(), 0.999);
  // The written sequence replays to the same state.
  const Outcome replay = run({"generate", "--sequence", dir + "/state_sequence.txt", "--out", dir + "/replay"});
  ASSERT_EQ(replay.code, kExitOk) << replay.err;
  const Matrix a = read_density_csv(dir + "/state_density.csv");
  const Matrix b = read_density_csv(dir + "/replay/state_density.csv");
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Config, FileOverridesAndFlagsMatch) {
  const std::string a = scratch("config_a"), b = scratch("config_b");
  const std::string cfg = write_config(a, R"({"device": {"t1_a_ms": 2.6, "t1_b_ms": 1.5}, "decay": {"n_times": 11},
                                             "state": {"phase_rad": 3.141592653589793}})");
  ASSERT_EQ(run({"decay", "--config", cfg, "--out", a}).code, kExitOk);
  ASSERT_EQ(run({"decay", "--t1-a-ms", "2.6", "--t1-b-ms", "1.5", "--n-times", "11", "--out", b}).code, kExitOk);
  EXPECT_EQ(read_file(a + "/decay.csv"), read_file(b + "/decay.csv"));
}

TEST(Config, ManifestRecordsProvenance) {
  const std::string a = scratch("manifest_a"), b = scratch("manifest_b");
  ASSERT_EQ(run({"bell", "--seed", "5", "--out", a}).code, kExitOk);
  ASSERT_EQ(run({"bell", "--seed", "5", "--out", b}).code, kExitOk);
  const json ma = read_json(a + "/manifest_bell.json"), mb = read_json(b + "/manifest_bell.json");
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(ma["command"], "bell");
  EXPECT_EQ(ma["seed"].get<int>(), 5);
  EXPECT_EQ(ma["outputs"], json::array({"bell.csv"}));
  EXPECT_EQ(ma["config_hash_fnv1a64"].get<std::string>().size(), 16u);
  for (const char* lib : {"twobox", "eigen", "nlohmann_json", "cli11"}) EXPECT_TRUE(ma["versions"].contains(lib));
  ASSERT_EQ(run({"bell", "--seed", "6", "--out", b}).code, kExitOk);
  EXPECT_NE(read_json(b + "/manifest_bell.json")["config_hash_fnv1a64"], ma["config_hash_fnv1a64"]);
}

TEST(Validation, ErrorsExitTwoWithoutOutputs) {
  const std::string dir = scratch("invalid");
  const std::string unknown = write_config(dir, R"({"device": {"chi_ge_a_hz": 1.0}})");
  const Outcome o = run({"wigner", "--config", unknown, "--out", dir + "/out"});
  EXPECT_EQ(o.code, kExitValidation);
  EXPECT_NE(o.err.find("chi_ge_a_hz"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir + "/out"));
  const std::vector<std::vector<std::string>> cases{
      {"bell", "--phase", "foo"},
      {"wigner", "--cut", "XX"},
      {"bell", "--visibility", "1.5"},
      {"reconstruct", "--in", dir + "/missing.csv"},
      {"reconstruct"},
      {"generate", "--state", "squeezed"},
      {"sample", "--nrep", "0"},
      {"bell", "--threads", "0"},
      {"bell", "--bogus"},
      {},
  };
  for (std::vector<std::string> args : cases) {
    args.insert(args.end(), {"--out", dir + "/out2"});
    if (args.size() == 2) args.clear();
    const Outcome r = run(args);
    EXPECT_EQ(r.code, kExitValidation) << (args.empty() ? "<none>" : args[0] + " " + args[1]);
  }
  for (const char* f : {"wigner.csv", "bell.csv", "dataset.csv", "state_density.csv", "mle.csv"})
    EXPECT_FALSE(fs::exists(dir + "/out2/" + f)) << f;
  const std::string wrong = write_config(dir, R"({"state": {"alpha_a": "big"}})");
  EXPECT_EQ(run({"bell", "--config", wrong, "--out", dir}).code, kExitValidation);
  ::setenv("TWOBOX_THREADS", "many", 1);
  EXPECT_EQ(run({"bell", "--out", dir}).code, kExitValidation);
  ::unsetenv("TWOBOX_THREADS");
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}
