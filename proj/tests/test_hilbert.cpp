#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "test_util.hpp"
#include "twobox/errors.hpp"
#include "twobox/hilbert.hpp"

namespace twobox {
namespace {

using testing::max_abs;

// Independent reference: exact displacement elements from a heavily padded
// truncated-generator exponential, computed without the library.
Matrix reference_displacement(int dim, cplx beta, int pad = 120) {
  const int n = dim + pad;
  Matrix a = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(static_cast<double>(k));
  const Matrix gen = beta * a.adjoint() - std::conj(beta) * a;
  return gen.exp();
}

Matrix reference_displaced_parity(int dim, cplx beta) {
  const Matrix d = reference_displacement(dim, beta);
  Matrix p = Matrix::Zero(d.rows(), d.cols());
  for (int k = 0; k < d.rows(); ++k) p(k, k) = (k % 2 == 0) ? 1.0 : -1.0;
  return (d * p * d.adjoint()).topLeftCorner(dim, dim);
}

std::vector<cplx> beta_grid(double max_r) {
  std::vector<cplx> out;
  for (double r : {0.0, 0.3, 1.0, 1.7, 2.4, max_r})
    for (double th : {0.0, 0.7, 2.1, -1.3}) out.push_back(std::polar(r, th));
  return out;
}

TEST(Fock, VacuumHasUnitNorm) {
  const Vector v = fock_state(12, 0);
  EXPECT_DOUBLE_EQ(v.norm(), 1.0);
  EXPECT_EQ(v(0), cplx(1.0));
}

TEST(Fock, NumberExpectation) {
  const Vector v = fock_state(12, 3);
  EXPECT_NEAR(v.dot(number(12) * v).real(), 3.0, 1e-14);
}

TEST(Fock, OutOfRangeThrows) {
  EXPECT_THROW(fock_state(12, 12), std::out_of_range);
  EXPECT_THROW(fock_state(12, -1), std::out_of_range);
}

TEST(Coherent, ZeroAmplitudeIsVacuum) {
  const ModeState s = coherent_state(12, 0.0);
  EXPECT_LT((s.amplitudes - fock_state(12, 0)).norm(), 1e-15);
  EXPECT_NEAR(s.truncation_weight, 0.0, 1e-15);
}

TEST(Coherent, DefaultAmplitudeTruncationWeight) {
  const ModeState s = coherent_state(12, 1.92);
  EXPECT_LT(s.truncation_weight, 1e-3);
  EXPECT_NEAR(s.amplitudes.norm(), 1.0, 1e-14);
}

TEST(Coherent, MeanPhotonNumberBeforeTruncation) {
  const ModeState s = coherent_state(80, 1.92, false);
  const double nbar = s.amplitudes.dot(number(80) * s.amplitudes).real();
  EXPECT_NEAR(nbar, 1.92 * 1.92, 1e-10);
  EXPECT_NEAR(nbar, 3.69, 0.005);
}

TEST(Cat, OddCatIsJointParityEigenstate) {
  const SystemDims dims(12, 12);
  const StateVector psi = two_mode_cat(dims, 1.92, 1.92, kPi);
  const Vector pj = joint_parity(dims).data() * psi.amplitudes();
  EXPECT_LT((pj + psi.amplitudes()).norm(), 1e-10);
  const StateVector even = two_mode_cat(dims, 1.92, 1.92, 0.0);
  EXPECT_LT((joint_parity(dims).data() * even.amplitudes() - even.amplitudes()).norm(), 1e-10);
}

TEST(Cat, ZeroAmplitudeEvenIsVacuum) {
  const SystemDims dims(6, 5);
  const StateVector psi = two_mode_cat(dims, 0.0, 0.0, 0.0);
  EXPECT_NEAR(std::abs(psi.amplitudes()(dims.index(0, 0, 0))), 1.0, 1e-14);
}

TEST(Cat, DegenerateOddVacuumThrows) {
  EXPECT_THROW(two_mode_cat(SystemDims(6, 6), 0.0, 0.0, kPi), ValidationError);
}

TEST(Cat, GeneralFormConstructs) {
  const SystemDims dims(12, 12);
  const StateVector psi = two_mode_cat(dims, 1.881, 1.922, -0.1);
  EXPECT_NEAR(psi.amplitudes().norm(), 1.0, 1e-12);
  EXPECT_LT(psi.truncation_weight(), 2e-3);
}

TEST(Cat, ExactNormalizationWithoutRenormalizing) {
  const SystemDims dims(40, 40, 1);
  const StateVector psi = two_mode_cat(dims, 1.2, 0.8, kPi, false);
  EXPECT_NEAR(psi.amplitudes().norm(), 1.0, 1e-10);
  EXPECT_THROW(two_mode_cat(SystemDims(6, 6), 1.92, 1.92, kPi, false), ValidationError);
}

TEST(ModeOperators, ParityFlipsOddFock) {
  const Vector v = parity(12) * fock_state(12, 3);
  EXPECT_LT((v + fock_state(12, 3)).norm(), 1e-15);
}

TEST(ModeOperators, CommutatorExceptEdge) {
  const int dim = 12;
  const Matrix a = annihilation(dim);
  const Matrix c = a * a.adjoint() - a.adjoint() * a;
  for (int n = 0; n < dim - 1; ++n) EXPECT_NEAR(std::abs(c(n, n) - 1.0), 0.0, 1e-14);
  EXPECT_NEAR(c(dim - 1, dim - 1).real(), -(dim - 1.0), 1e-12);
  EXPECT_LT(max_abs(c - Matrix(c.diagonal().asDiagonal())), 1e-14);
}

TEST(ModeOperators, ParityIsExponentialOfNumber) {
  const Matrix e = (cplx(0.0, kPi) * number(12)).exp();
  EXPECT_LT(max_abs(e - parity(12)), 1e-12);
}

TEST(Displacement, VacuumOverlap) {
  for (cplx b : beta_grid(3.0)) {
    const Matrix d = displacement(20, b);
    EXPECT_NEAR(std::abs(d(0, 0) - std::exp(-0.5 * std::norm(b))), 0.0, 1e-14);
  }
}

TEST(Displacement, VacuumColumnIsCoherentState) {
  const cplx b(1.1, -0.6);
  const Matrix d = displacement(16, b);
  const ModeState c = coherent_state(16, b, false);
  EXPECT_LT((d.col(0) - c.amplitudes).norm(), 1e-13);
}

TEST(Displacement, ExpmMatchesAnalytic) {
  for (cplx b : beta_grid(3.0)) {
    const Matrix e = displacement(20, b, DisplacementMethod::Expm);
    const Matrix l = displacement(20, b, DisplacementMethod::Analytic);
    EXPECT_LT(max_abs(e - l), 1e-8) << "beta = " << b;
  }
}

TEST(Displacement, AnalyticMatchesIndependentReference) {
  for (cplx b : beta_grid(3.0)) {
    const Matrix ref = reference_displacement(20, b).topLeftCorner(20, 20);
    EXPECT_LT(max_abs(displacement(20, b) - ref), 1e-8) << "beta = " << b;
  }
}

TEST(Displacement, TruncatedGeneratorIsUnitary) {
  const Matrix u = displacement_unitary(15, cplx(2.0, 1.0));
  EXPECT_LT(max_abs(u * u.adjoint() - Matrix::Identity(15, 15)), 1e-10);
}

TEST(DisplacedParity, ZeroDisplacementIsParity) { EXPECT_LT(max_abs(displaced_parity_matrix(12, 0.0) - parity(12)), 1e-15); }

TEST(DisplacedParity, VacuumElement) {
  for (cplx b : beta_grid(3.0))
    EXPECT_NEAR(std::abs(displaced_parity_matrix(20, b)(0, 0) - std::exp(-2.0 * std::norm(b))), 0.0, 1e-14);
}

TEST(DisplacedParity, MatchesBruteForceConjugation) {
  for (cplx b : beta_grid(3.0)) {
    const Matrix k = displaced_parity_matrix(20, b);
    EXPECT_LT(max_abs(k - reference_displaced_parity(20, b)), 1e-8) << "beta = " << b;
  }
}

TEST(DisplacedParity, IsHermitian) {
  const Matrix k = displaced_parity_matrix(14, cplx(0.4, 1.3));
  EXPECT_LT(max_abs(k - k.adjoint()), 1e-13);
}

TEST(TruncationGuard, FlagsLargeDisplacements) {
  EXPECT_FALSE(exceeds_truncation_guard(12, 1.7));
  EXPECT_TRUE(exceeds_truncation_guard(12, 1.8));
}

TEST(Embed, ParityProductIsJointParity) {
  const SystemDims dims(5, 4);
  const QOperator pa = embed(parity(5), Mode::A, dims);
  const QOperator pb = embed(parity(4), Mode::B, dims);
  EXPECT_LT(max_abs((pa * pb).data() - joint_parity(dims).data()), 1e-15);
}

TEST(Embed, DistinctModesCommute) {
  std::mt19937_64 rng(11);
  const SystemDims dims(4, 3);
  const QOperator x = embed(testing::random_complex(4, 4, rng), Mode::A, dims);
  const QOperator y = embed(testing::random_complex(3, 3, rng), Mode::B, dims);
  const QOperator z = embed(testing::random_complex(3, 3, rng), Mode::Ancilla, dims);
  EXPECT_LT(max_abs((x * y).data() - (y * x).data()), 1e-12);
  EXPECT_LT(max_abs((x * z).data() - (z * x).data()), 1e-12);
  EXPECT_LT(max_abs((y * z).data() - (z * y).data()), 1e-12);
}

TEST(Embed, TensorOfIdentitiesIsIdentity) {
  const QOperator id = tensor(Matrix::Identity(3, 3), Matrix::Identity(4, 4), Matrix::Identity(3, 3));
  EXPECT_LT(max_abs(id.data() - Matrix::Identity(36, 36)), 1e-15);
}

TEST(Embed, DimMismatchThrows) { EXPECT_THROW(embed(parity(5), Mode::A, SystemDims(4, 4)), ValidationError); }

TEST(Embed, LocalApplicationMatchesEmbedding) {
  std::mt19937_64 rng(5);
  const SystemDims dims(4, 5);
  const Vector v = testing::random_complex(dims.total(), 1, rng).col(0);
  const Matrix rho = testing::random_complex(dims.total(), dims.total(), rng);
  for (Mode m : {Mode::A, Mode::B, Mode::Ancilla}) {
    const Matrix op = testing::random_complex(dims.size(m), dims.size(m), rng);
    const Matrix full = embed(op, m, dims).data();
    EXPECT_LT((apply_mode(op, m, dims, v) - full * v).norm(), 1e-12);
    EXPECT_LT(max_abs(conjugate_mode(op, m, dims, rho) - full * rho * full.adjoint()), 1e-11);
  }
}

TEST(PartialTrace, SingleCavityParityOfEntangledCatVanishes) {
  const SystemDims dims(12, 12);
  const DensityMatrix rho(two_mode_cat(dims, 1.92, 1.92, kPi));
  const DensityMatrix ra = partial_trace(rho, {Mode::A});
  EXPECT_EQ(ra.dims(), SystemDims(12, 1, 1));
  const double pa = expectation(ra, QOperator(ra.dims(), parity(12))).real();
  EXPECT_LT(std::abs(pa), 0.01);
}

TEST(PartialTrace, ProductStateFactor) {
  std::mt19937_64 rng(3);
  const SystemDims dims(4, 5);
  const Vector a = testing::random_mode_vector(4, rng);
  const Vector b = testing::random_mode_vector(5, rng);
  const DensityMatrix rho(product_state(dims, a, b, 1));
  const DensityMatrix rb = partial_trace(rho, {Mode::B});
  EXPECT_LT(max_abs(rb.data() - b * b.adjoint()), 1e-14);
}

TEST(PartialTrace, ReducedCatPurityMatchesGramOracle) {
  const double alpha = 1.92;
  const SystemDims dims(26, 26, 1);
  const DensityMatrix rho(two_mode_cat(dims, alpha, alpha, kPi));
  const DensityMatrix ra = partial_trace(rho, {Mode::A});
  // Reduced state N^2 (|a><a| + |-a><-a| - s|a><-a| - s|-a><a|) in the
  // non-orthogonal basis {|a>, |-a>} with overlap s; purity = Tr (C G C G).
  const double s = std::exp(-2.0 * alpha * alpha);
  const double n2 = 1.0 / (2.0 * (1.0 - s * s));
  Eigen::Matrix2d c;
  c << n2, -s * n2, -s * n2, n2;
  Eigen::Matrix2d g;
  g << 1.0, s, s, 1.0;
  const double oracle = (c * g * c * g).trace();
  EXPECT_NEAR(purity(ra), oracle, 1e-8);
}

TEST(PartialTrace, EmptyKeepSetThrows) {
  const DensityMatrix rho(two_mode_cat(SystemDims(3, 3), 0.5, 0.5, 0.0));
  EXPECT_THROW(partial_trace(rho, {}), ValidationError);
}

TEST(Metrics, FidelityWithSelfIsOne) {
  const StateVector psi = two_mode_cat(SystemDims(8, 8), 1.0, 1.2, 0.3);
  const DensityMatrix rho(psi);
  EXPECT_NEAR(fidelity(rho, psi), 1.0, 1e-12);
  EXPECT_NEAR(fidelity(rho, rho), 1.0, 1e-8);
}

TEST(Metrics, MaximallyMixedPurity) {
  const SystemDims dims(4, 3);
  const DensityMatrix rho(dims, Matrix::Identity(36, 36) / 36.0);
  EXPECT_NEAR(purity(rho), 1.0 / 36.0, 1e-15);
}

TEST(Metrics, EvenCatJointParityIsOne) {
  const SystemDims dims(12, 12);
  const StateVector psi = two_mode_cat(dims, 1.92, 1.92, 0.0);
  EXPECT_NEAR(expectation(psi, joint_parity(dims)).real(), 1.0, 1e-12);
}

TEST(Metrics, UhlmannFidelityOfCommutingStates) {
  const SystemDims dims(2, 1, 1);
  Matrix r(2, 2), s(2, 2);
  r << 0.7, 0, 0, 0.3;
  s << 0.4, 0, 0, 0.6;
  const double expected = std::pow(std::sqrt(0.28) + std::sqrt(0.18), 2);
  EXPECT_NEAR(fidelity(DensityMatrix(dims, r), DensityMatrix(dims, s)), expected, 1e-12);
}

TEST(Types, DensityMatrixRejectsBadTrace) {
  EXPECT_THROW(DensityMatrix(SystemDims(2, 1, 1), Matrix::Identity(2, 2)), ValidationError);
}

TEST(Types, StateVectorRejectsUnnormalized) {
  EXPECT_THROW(StateVector(SystemDims(2, 1, 1), Vector::Ones(2)), ValidationError);
}

TEST(Types, DimensionMismatchRejected) {
  const StateVector psi = two_mode_cat(SystemDims(3, 3), 0.5, 0.5, 0.0);
  EXPECT_THROW(expectation(psi, joint_parity(SystemDims(3, 4))), ValidationError);
}

// ---------------------------------------------------------------------------
// Invariants

TEST(Invariants, ParityConjugationFlipsDisplacement) {
  for (int dim : {6, 12, 20})
    for (cplx b : beta_grid(2.8)) {
      const Matrix p = parity(dim);
      EXPECT_LT(max_abs(p * displacement(dim, b) * p - displacement(dim, -b)), 1e-10);
    }
}

TEST(Invariants, DisplacementComposition) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int dim = 24;
  for (int trial = 0; trial < 20; ++trial) {
    const cplx b1(u(rng), u(rng));
    const cplx b2(u(rng), u(rng));
    // The product needs intermediate states beyond the block; pad the inner
    // index and compare rows/cols well inside the cutoff.
    const Matrix lhs = displacement_block(dim, dim + 60, b1) * displacement_block(dim + 60, dim, b2);
    const Matrix rhs = std::polar(1.0, std::imag(b1 * std::conj(b2))) * displacement(dim, b1 + b2);
    EXPECT_LT(max_abs(lhs - rhs), 1e-8);
    // Plain truncated product, restricted away from the edge.
    const Matrix plain = displacement(dim, b1) * displacement(dim, b2);
    EXPECT_LT(max_abs((plain - rhs).topLeftCorner(dim / 4, dim / 4)), 1e-8);
  }
}

TEST(Invariants, CatsAreParityEigenstates) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.2, 2.2);
  for (int trial = 0; trial < 10; ++trial) {
    const SystemDims dims(6 + trial, 14 - trial);
    for (double phi : {0.0, kPi}) {
      const StateVector psi = two_mode_cat(dims, cplx(u(rng), u(rng) - 1.2), u(rng), phi);
      const double sign = phi == 0.0 ? 1.0 : -1.0;
      EXPECT_LT((joint_parity(dims).data() * psi.amplitudes() - sign * psi.amplitudes()).norm(), 1e-10);
    }
  }
}

TEST(Invariants, PartialTracePreservesTraceAndPositivity) {
  std::mt19937_64 rng(8);
  const SystemDims dims(4, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityMatrix rho = testing::random_density(dims, rng, 1 + trial % 5);
    for (const std::set<Mode>& keep : std::vector<std::set<Mode>>{{Mode::A}, {Mode::B}, {Mode::Ancilla}, {Mode::A, Mode::B}}) {
      const DensityMatrix r = partial_trace(rho, keep);
      EXPECT_NEAR(r.data().trace().real(), 1.0, 1e-12);
      EXPECT_GE(r.min_eigenvalue(), -1e-12);
    }
  }
}

}  // namespace
}  // namespace twobox
