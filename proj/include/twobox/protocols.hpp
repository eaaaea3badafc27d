#pragma once

// Gate-level protocols: cat generation, joint/single parity mapping, the
// wait-time phase solver, and sequence simulation.

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "twobox/dynamics.hpp"
#include "twobox/hilbert.hpp"

namespace twobox {

enum class DisplaceCondition { None, AncillaG };
enum class Subspace { GE, EF };
enum class RotationCondition { None, CavitiesVacuum };

struct Displace {
  Mode mode = Mode::A;
  cplx beta = 0.0;
  DisplaceCondition condition = DisplaceCondition::None;
};

// exp(-i angle/2 (cos(phase) sx + sin(phase) sy)) on the chosen two-level subspace.
struct AncillaRotation {
  Subspace subspace = Subspace::GE;
  double angle = 0.0;
  double axis_phase = 0.0;
  RotationCondition condition = RotationCondition::None;
};

struct Wait {
  double duration = 0.0;  // s
};

struct ProjectAncilla {
  int level = 0;
};

using GateOp = std::variant<Displace, AncillaRotation, Wait, ProjectAncilla>;

struct GateSequence {
  std::vector<GateOp> ops;
  std::string label;
  double pulse_padding = 16e-9;  // s, added to a nonzero wait per adjacent ancilla rotation

  // Duration the dispersive evolution actually runs for the Wait at `index`.
  double effective_wait(std::size_t index) const;
  void validate() const;
};

// 3x3 ancilla rotation matrix.
Matrix ancilla_rotation_matrix(Subspace subspace, double angle, double axis_phase);

// ---------------------------------------------------------------------------
// Wait-time solver.

// GeThenGf: chi_ge dt1 + chi_gf dt2 = phi. EfThenGf: chi_ef dt1 + chi_gf dt2 = phi.
enum class ParityProtocol { GeThenGf, EfThenGf };

struct WaitTimeSolution {
  ParityProtocol protocol = ParityProtocol::EfThenGf;
  double dt1 = 0.0;  // s, effective
  double dt2 = 0.0;
  int branch_a = 0;
  int branch_b = 0;
  double target_phi_a = 0.0;
  double target_phi_b = 0.0;
  double achieved_phi_a = 0.0;
  double achieved_phi_b = 0.0;
  bool feasible = false;
  double residual = 0.0;  // rad, Euclidean norm over both cavities
};

// Phases (A, B) accumulated by effective waits (dt1, dt2).
std::pair<double, double> achieved_phases(const DeviceParams& params, ParityProtocol protocol, double dt1, double dt2);

WaitTimeSolution solve_wait_times(const DeviceParams& params, ParityProtocol protocol, double target_phi_a,
                                  double target_phi_b, int max_branch = 2);

// ---------------------------------------------------------------------------
// Builders.

struct CatGenerationOptions {
  cplx alpha_a = 1.92;
  cplx alpha_b = 1.92;
  double phase = kPi;  // pi gives the odd cat, 0 the even cat
  bool decomposed = false;
  bool include_b = true;
  // Displacement + wait decomposition parameters.
  cplx first_a = 2.25;
  cplx first_b = 2.25;
  cplx second_a = std::polar(2.25, -1.03);
  cplx second_b = std::polar(2.25, 1.03);
  std::optional<double> wait;          // effective; derived from the displacements when unset
  std::optional<cplx> centering_a;     // derived as minus the branch midpoint when unset
  std::optional<cplx> centering_b;
};

struct CatGenerationPlan {
  GateSequence sequence;
  // Expected output N(|a, b> + e^{i phase}|-a, -b>) (x) |g>.
  cplx alpha_a;
  cplx alpha_b;
  double phase;
};

CatGenerationPlan build_cat_generation(const CatGenerationOptions& options, const DeviceParams& params = {});

// Uses the solution's effective times directly (pulse padding 0).
GateSequence build_joint_parity(const WaitTimeSolution& solution);
// Nominal programmed waits; the effective waits include pulse padding.
GateSequence build_joint_parity(ParityProtocol protocol, double dt1, double dt2, double pulse_padding = 16e-9);

// ---------------------------------------------------------------------------
// Simulation.

struct ProjectionRecord {
  std::size_t op_index = 0;
  int level = 0;
  double probability = 0.0;                   // of `level`
  std::optional<DensityMatrix> selected;      // post-measurement state for `level`
  std::optional<DensityMatrix> complement;    // post-measurement state otherwise
};

struct SimulationResult {
  DensityMatrix state;  // continues along the selected outcome of every projection
  std::vector<ProjectionRecord> projections;
};

struct PureSimulationResult {
  StateVector state;
  std::vector<std::pair<std::size_t, double>> projections;  // (op index, probability)
};

SimulationResult simulate_sequence(const GateSequence& seq, const DensityMatrix& initial, const DeviceParams& params,
                                   const NoiseConfig& noise = {});
// Pure-state path; rejects amplitude damping.
PureSimulationResult simulate_sequence(const GateSequence& seq, const StateVector& initial,
                                       const DeviceParams& params, const NoiseConfig& noise = {});

// Runs a sequence from vacuum (x) |g> in a working space sized to hold every
// intermediate coherent branch, then truncates to `target`. Pure evolution:
// amplitude damping is rejected.
StateVector prepare_state(const GateSequence& seq, const SystemDims& target, const DeviceParams& params,
                          const NoiseConfig& noise = {});

// prepare_state, ancilla traced out, then params.prep_error applied.
DensityMatrix prepare_cavity_state(const GateSequence& seq, const SystemDims& cavity_dims,
                                   const DeviceParams& params, const NoiseConfig& noise = {});

// ---------------------------------------------------------------------------
// Measurement.

enum class MeasureMode { Observable, Sequence };

struct MeasureOptions {
  MeasureMode mode = MeasureMode::Observable;
  ParityProtocol protocol = ParityProtocol::EfThenGf;
  std::optional<GateSequence> sequence;  // overrides the solved exact-pi protocol in Sequence mode
};

// Single-mode factor of the displaced parity observable: K(beta) when
// epsilon = 0, otherwise D diag(e^{-/+ i eps pi n}(-1)^n) D^dag (sign by mode)
// built from exact displacement elements.
Matrix displaced_parity_kernel(int dim, cplx beta, double epsilon, Mode mode);

// Visibility-scaled <D P_J D^dag> at (beta_a, beta_b). Observable mode uses
// P_J, or the phase-error operator when noise.parity_phase_error != 0.
double measure_joint_parity(const DensityMatrix& rho, cplx beta_a, cplx beta_b, const DeviceParams& params,
                            const NoiseConfig& noise = {}, const MeasureOptions& options = {});

// Re <psi| e^{i phi_a n_a + i phi_b n_b} |psi> for the ideal odd cat: the
// noise-free value a parity mapping with these phases reports at the origin.
double mapped_parity_value(double phi_a, double phi_b, cplx alpha_a = 1.92, cplx alpha_b = 1.92, int cutoff = 12);

// ---------------------------------------------------------------------------
// Text form (one gate per line, see README).

std::string serialize_sequence(const GateSequence& seq);
GateSequence parse_sequence(const std::string& text);

}  // namespace twobox
