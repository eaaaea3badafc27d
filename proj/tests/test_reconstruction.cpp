#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "twobox/errors.hpp"
#include "twobox/reconstruction.hpp"

using namespace twobox;
using twobox::testing::random_complex;
using twobox::testing::random_density;

namespace {

// Counts set to the model expectation (rounded), for a noise-free dataset.
TomographyDataset expected_dataset(const DensityMatrix& rho, const TomographyPlan& plan, double visibility = 1.0) {
  const std::vector<double> w = evaluate_points(rho, plan.points);
  TomographyDataset ds;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double p = even_probability(w[i], visibility, 0.0);
    ds.records.push_back({plan.points[i], std::llround(p * plan.n_rep), plan.n_rep});
  }
  ds.provenance.visibility = visibility;
  return ds;
}

TomographyPlan dense_plan(double half_extent, int n_axis, int n_sprinkle, int n_rep) {
  return concat_plans({plane_cut(CutKind::ReRe, half_extent, n_axis, n_rep),
                       plane_cut(CutKind::ImIm, half_extent, n_axis, n_rep),
                       plane_cut(CutKind::ReImA, half_extent, n_axis, n_rep),
                       plane_cut(CutKind::ReImB, half_extent, n_axis, n_rep),
                       sprinkle_plan(n_sprinkle, half_extent, n_rep)});
}

Matrix factor(const DensityMatrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho.data());
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

double joint_parity_of(const Vector& v, int nb) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) s += ((k / nb + k % nb) % 2 == 0 ? 1.0 : -1.0) * std::norm(v(k));
  return s;
}

}  // namespace

TEST(Likelihood, HalfProbabilityRecord) {
  // W_J = 0 at the origin for (|0><0| + |1><1|)/2 on A and vacuum on B.
  Matrix rho = Matrix::Zero(4, 4);
  rho(0, 0) = 0.5;  // |0,0>
  rho(2, 2) = 0.5;  // |1,0>
  TomographyDataset ds;
  ds.records.push_back({{}, 500, 1000});
  const LikelihoodModel model(ds, 2, 2);
  EXPECT_NEAR(model.parity_expectations(rho)[0], 0.0, 1e-14);
  EXPECT_NEAR(model.log_likelihood_rho(rho), 1000.0 * std::log(0.5), 1e-9);
}

TEST(Likelihood, MaximumOverScalarPerturbations) {
  std::mt19937_64 rng(3);
  const DensityMatrix rho = random_density(SystemDims(3, 3, 1), rng);
  auto plan = sprinkle_plan(60, 1.2, 1000000);
  const auto ds = expected_dataset(rho, plan, 0.9);
  const LikelihoodModel model(ds, 3, 3, 0.9);
  const double at_truth = model.log_likelihood_rho(rho.data());
  const Matrix mixed = Matrix::Identity(9, 9) / 9.0;
  for (double s : {-0.02, -0.005, 0.005, 0.02}) {
    const Matrix other = (1.0 - s) * rho.data() + s * mixed;
    EXPECT_LT(model.log_likelihood_rho(other), at_truth);
  }
}

TEST(Likelihood, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  const int n = 4, d = n * n;
  const DensityMatrix rho = random_density(SystemDims(n, n, 1), rng);
  const auto plan = sprinkle_plan(20, 1.0, 500);
  const auto ds = sample_dataset(rho, plan, DeviceParams{}, NoiseConfig{}, 5);
  const LikelihoodModel model(ds, n, n, 0.95, 0.01);
  Matrix a = random_complex(d, d, rng);
  a *= 1.1 / a.norm();  // Tr != 1 so the penalty contributes
  const double lambda = 10.0;
  Matrix g;
  model.objective(a, lambda, &g);
  double max_err = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (const cplx dir : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
        Matrix ap = a, am = a;
        ap(i, j) += h * dir;
        am(i, j) -= h * dir;
        const double fd = (model.objective(ap, lambda) - model.objective(am, lambda)) / (2.0 * h);
        const double analytic = dir.real() != 0.0 ? g(i, j).real() : g(i, j).imag();
        max_err = std::max(max_err, std::abs(fd - analytic));
      }
  EXPECT_LT(max_err / g.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Likelihood, PenaltyGradientVanishesAtUnitTrace) {
  std::mt19937_64 rng(2);
  const DensityMatrix rho = random_density(SystemDims(3, 3, 1), rng);
  const auto ds = sample_dataset(rho, sprinkle_plan(15, 1.0, 200), DeviceParams{}, NoiseConfig{}, 1);
  const LikelihoodModel model(ds, 3, 3);
  Matrix a = random_complex(9, 9, rng);
  a /= a.norm();
  Matrix g1, g2;
  const double f1 = model.objective(a, 10.0, &g1);
  const double f2 = model.objective(a, 1e5, &g2);
  EXPECT_NEAR(f1, f2, 1e-9 * std::abs(f1));
  EXPECT_LT((g1 - g2).cwiseAbs().maxCoeff(), 1e-9 * g1.cwiseAbs().maxCoeff());
}

TEST(Likelihood, StationaryAtTruthForExactData) {
  std::mt19937_64 rng(9);
  const DensityMatrix rho = random_density(SystemDims(3, 3, 1), rng);
  const auto ds = expected_dataset(rho, sprinkle_plan(80, 1.3, 1000000000), 0.9);
  const LikelihoodModel model(ds, 3, 3, 0.9);
  const Matrix a = factor(rho);
  Matrix g_truth, g_off;
  model.objective(a, 10.0, &g_truth);
  Matrix perturbed = a;
  perturbed(0, 0) += 0.05;
  model.objective(perturbed / perturbed.norm(), 10.0, &g_off);
  EXPECT_LT(g_truth.norm(), 1e-5 * g_off.norm());
}

TEST(Likelihood, RightUnitaryGaugeInvariance) {
  std::mt19937_64 rng(21);
  const DensityMatrix rho = random_density(SystemDims(3, 4, 1), rng);
  const auto ds = sample_dataset(rho, sprinkle_plan(40, 1.5, 300), DeviceParams{}, NoiseConfig{}, 2);
  const LikelihoodModel model(ds, 3, 4);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a = random_complex(12, 12, rng);
    a *= 0.9 / a.norm();
    const Eigen::HouseholderQR<Matrix> qr(random_complex(12, 12, rng));
    const Matrix v = qr.householderQ();
    const double f = model.objective(a, 10.0), fv = model.objective(a * v, 10.0);
    EXPECT_LT(std::abs(f - fv), 1e-10 * std::abs(f));
  }
}

TEST(Likelihood, ThreadCountDoesNotChangeValues) {
  std::mt19937_64 rng(4);
  const DensityMatrix rho = random_density(SystemDims(4, 4, 1), rng);
  const auto ds = sample_dataset(rho, sprinkle_plan(300, 1.5, 300), DeviceParams{}, NoiseConfig{}, 2);
  const LikelihoodModel serial(ds, 4, 4, 1.0, 0.0, 1e-6, 1), threaded(ds, 4, 4, 1.0, 0.0, 1e-6, 4);
  const Matrix a = factor(rho);
  Matrix g1, g2;
  EXPECT_EQ(serial.objective(a, 10.0, &g1), threaded.objective(a, 10.0, &g2));
  EXPECT_EQ(g1, g2);
}

TEST(Likelihood, RejectsMismatchedSizes) {
  TomographyDataset ds;
  ds.records.push_back({{}, 1, 2});
  const LikelihoodModel model(ds, 2, 2);
  EXPECT_THROW(model.objective(Matrix::Identity(3, 3), 1.0), ValidationError);
  EXPECT_THROW(LikelihoodModel(TomographyDataset{}, 2, 2), ValidationError);
}

TEST(Reconstruct, NoiselessCatRoundTrip) {
  const SystemDims dims(8, 8, 1);
  const StateVector psi = two_mode_cat(dims, 1.5, 1.5, kPi);
  const auto ds = expected_dataset(DensityMatrix(psi), dense_plan(2.0, 21, 400, 1000000));
  MLEConfig config;
  config.cutoff_a = config.cutoff_b = 8;
  const MLEResult r = reconstruct(ds, config);
  EXPECT_GE(fidelity(r.rho, psi), 0.99);
  EXPECT_LT(r.trace_deviation, 1e-3);
  EXPECT_TRUE(r.converged);
  EXPECT_GE(r.rho.min_eigenvalue(), -1e-10);
  EXPECT_NEAR(r.rho.data().trace().real(), 1.0, 1e-12);
  EXPECT_GT(r.points_beyond_guard, 0);
}

TEST(Reconstruct, DominantEigenvectorParityOfMixture) {
  const SystemDims dims(8, 8, 1);
  const Matrix odd = DensityMatrix(two_mode_cat(dims, 1.5, 1.5, kPi)).data();
  const Matrix even = DensityMatrix(two_mode_cat(dims, 1.5, 1.5, 0.0)).data();
  const DensityMatrix truth(dims, 0.9 * odd + 0.1 * even);
  const auto ds = sample_dataset(truth, dense_plan(2.0, 25, 500, 2000), DeviceParams{}, NoiseConfig{}, 11);
  MLEConfig config;
  config.cutoff_a = config.cutoff_b = 8;
  const MLEResult r = reconstruct(ds, config);
  Eigen::SelfAdjointEigenSolver<Matrix> es(r.rho.data());
  const int d = 64;
  EXPECT_LT(joint_parity_of(es.eigenvectors().col(d - 1), 8), -0.95);
  // The 0.1 even-parity component sits about 0.06 above the shot-noise
  // eigenvalues, so its eigenvector keeps a clear even-parity majority.
  EXPECT_GT(joint_parity_of(es.eigenvectors().col(d - 2), 8), 0.5);
  EXPECT_NEAR(r.metrics.dominant_parity, joint_parity_of(es.eigenvectors().col(d - 1), 8), 1e-12);
  EXPECT_NEAR(r.metrics.lambda_max, 0.9, 0.05);
}

TEST(Reconstruct, ObjectiveNeverDecreasesWithinAStage) {
  std::mt19937_64 rng(8);
  const DensityMatrix rho = random_density(SystemDims(3, 3, 1), rng, 2);
  const auto ds = sample_dataset(rho, sprinkle_plan(200, 1.5, 1000), DeviceParams{}, NoiseConfig{}, 3);
  MLEConfig config;
  config.cutoff_a = config.cutoff_b = 3;
  config.lambda_cap = config.lambda;  // single stage
  config.init = MLEInit::Random;
  config.init_seed = 4;
  const MLEResult r = reconstruct(ds, config);
  ASSERT_GT(r.objective_trace.size(), 2u);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
    EXPECT_GE(r.objective_trace[i], r.objective_trace[i - 1]);
  EXPECT_GE(r.rho.min_eigenvalue(), -1e-10);
}

TEST(Reconstruct, FidelityImprovesWithShots) {
  const SystemDims dims(6, 6, 1);
  const StateVector psi = two_mode_cat(dims, 1.2, 1.2, kPi);
  const DensityMatrix truth(psi);
  MLEConfig config;
  config.cutoff_a = config.cutoff_b = 6;
  std::vector<double> medians;
  for (int n_rep : {500, 2000, 8000}) {
    std::vector<double> f;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto ds = sample_dataset(truth, dense_plan(1.8, 11, 150, n_rep), DeviceParams{}, NoiseConfig{}, seed);
      f.push_back(fidelity(reconstruct(ds, config).rho, psi));
    }
    std::sort(f.begin(), f.end());
    medians.push_back(f[1]);
  }
  EXPECT_GE(medians[1], medians[0] - 0.005);
  EXPECT_GE(medians[2], medians[1] - 0.005);
  EXPECT_GT(medians[2], medians[0]);
}

TEST(Reconstruct, WarmStartAndConfigChecks) {
  const SystemDims dims(4, 4, 1);
  const DensityMatrix truth(two_mode_cat(dims, 0.8, 0.8, kPi));
  const auto ds = expected_dataset(truth, dense_plan(1.2, 9, 60, 1000000));
  MLEConfig config;
  config.cutoff_a = config.cutoff_b = 4;
  config.init = MLEInit::WarmStart;
  config.warm_start = truth.data();
  EXPECT_GE(fidelity(reconstruct(ds, config).rho, truth), 0.995);

  MLEConfig bad = config;
  bad.warm_start = Matrix::Identity(3, 3);
  EXPECT_THROW(reconstruct(ds, bad), ValidationError);
  bad = MLEConfig{};
  bad.probability_floor = 0.5;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = MLEConfig{};
  bad.lambda = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = MLEConfig{};
  bad.cutoff_a = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(reconstruct(TomographyDataset{}, MLEConfig{}), ValidationError);
}

TEST(BestFitCat, RecoversIdealEvenCat) {
  const DensityMatrix rho(two_mode_cat(SystemDims(12, 12, 1), 1.92, 1.92, 0.0));
  for (CatSearch mode : {CatSearch::Symmetric, CatSearch::General}) {
    const CatFit fit = best_fit_cat(rho, mode);
    EXPECT_NEAR(fit.alpha_a, 1.92, 1e-3);
    EXPECT_NEAR(fit.alpha_b, 1.92, 1e-3);
    EXPECT_NEAR(std::remainder(fit.phase, 2.0 * kPi), 0.0, 1e-3);
    EXPECT_GT(fit.fidelity, 1.0 - 1e-6);
  }
}

TEST(BestFitCat, AsymmetricOddCat) {
  const DensityMatrix rho(two_mode_cat(SystemDims(12, 12, 1), 1.6, 2.0, kPi - 0.3));
  const CatFit fit = best_fit_cat(rho, CatSearch::General);
  EXPECT_NEAR(fit.alpha_a, 1.6, 1e-3);
  EXPECT_NEAR(fit.alpha_b, 2.0, 1e-3);
  EXPECT_NEAR(std::abs(std::remainder(fit.phase - (kPi - 0.3), 2.0 * kPi)), 0.0, 1e-3);
}

TEST(BestFitCat, EvenOddMixtureIsPhaseDegenerate) {
  const SystemDims dims(12, 12, 1);
  const Matrix odd = DensityMatrix(two_mode_cat(dims, 1.92, 1.92, kPi)).data();
  const Matrix even = DensityMatrix(two_mode_cat(dims, 1.92, 1.92, 0.0)).data();
  const DensityMatrix mix(dims, 0.5 * odd + 0.5 * even);
  EXPECT_NEAR(cat_fidelity(mix, 1.92, 1.92, 0.0), cat_fidelity(mix, 1.92, 1.92, kPi), 1e-9);
  const CatFit fit = best_fit_cat(mix, CatSearch::Symmetric);
  EXPECT_NEAR(fit.fidelity, 0.5, 1e-3);
  EXPECT_EQ(cat_fidelity(mix, 0.0, 0.0, kPi), 0.0);
}

TEST(Metrics, PureOddCat) {
  const DensityMatrix rho(two_mode_cat(SystemDims(10, 10, 1), 1.5, 1.5, kPi));
  const MLEMetrics m = compute_metrics(rho);
  EXPECT_NEAR(m.lambda_max, 1.0, 1e-10);
  EXPECT_NEAR(m.purity, 1.0, 1e-10);
  EXPECT_NEAR(m.dominant_parity, -1.0, 1e-10);
  EXPECT_NEAR(m.best_fit.fidelity, 1.0, 1e-6);
}

TEST(DensityIO, RoundTripAndSidecar) {
  std::mt19937_64 rng(6);
  const DensityMatrix rho = random_density(SystemDims(3, 2, 1), rng);
  const std::string path = (std::filesystem::temp_directory_path() / "twobox_rho.csv").string();
  write_density_csv(path, rho.data());
  EXPECT_EQ(read_density_csv(path), rho.data());

  MLEResult r{rho, -12.5, 1e-4, 20.0, 7, true, 0, {}, compute_metrics(rho)};
  write_mle_result(path, r);
  std::ifstream side(path + ".json");
  std::string text((std::istreambuf_iterator<char>(side)), {});
  EXPECT_NE(text.find("\"purity\""), std::string::npos);
  EXPECT_NE(text.find("\"best_fit\""), std::string::npos);

  std::ofstream(path) << "row,col,re,im\n0,0,1,0\n0,1,0,0\n";
  EXPECT_THROW(read_density_csv(path), ValidationError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}
