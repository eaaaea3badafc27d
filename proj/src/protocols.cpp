#include "twobox/protocols.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <regex>
#include <sstream>

#include "twobox/errors.hpp"

namespace twobox {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double wrap_phase(double x) {
  double y = std::remainder(x, 2.0 * kPi);
  if (y <= -kPi) y += 2.0 * kPi;
  return y;
}

// Rows kept by a displacement of a state supported below `n` so that the
// discarded tail is far below double precision.
int displaced_support(int n, cplx beta) {
  const double r = std::abs(beta);
  if (r == 0.0) return n;
  const double reach = std::sqrt(std::max(n - 1, 0)) + r;
  return std::max(n, static_cast<int>(std::ceil(reach * reach + 10.0 * reach + 20.0)));
}

// ---------------------------------------------------------------------------
// Coherent-branch bookkeeping: every state reachable from vacuum by these
// gates is a sum of |a, b> (x) (amplitudes over g, e, f).

struct Branch {
  cplx a = 0.0;
  cplx b = 0.0;
  Eigen::Vector3cd amp = Eigen::Vector3cd::Zero();
};

constexpr double kVacuumRadius2 = 1e-2;

class BranchTracker {
 public:
  explicit BranchTracker(const DeviceParams& params) : params_(params) {
    Branch vac;
    vac.amp(0) = 1.0;
    branches_.push_back(vac);
  }

  const std::vector<Branch>& branches() const { return branches_; }
  double max_radius_a() const { return max_a_; }
  double max_radius_b() const { return max_b_; }

  void apply(const GateSequence& seq, std::size_t index) {
    const GateOp& op = seq.ops[index];
    std::vector<Branch> next;
    std::visit(Overloaded{
                   [&](const Displace& d) {
                     for (const Branch& br : branches_) {
                       Branch moved = br;
                       cplx& x = d.mode == Mode::A ? moved.a : moved.b;
                       const cplx phase = std::polar(1.0, std::imag(d.beta * std::conj(x)));
                       x += d.beta;
                       if (d.condition == DisplaceCondition::None) {
                         moved.amp *= phase;
                         next.push_back(moved);
                       } else {
                         moved.amp = Eigen::Vector3cd(br.amp(0) * phase, 0.0, 0.0);
                         Branch stay = br;
                         stay.amp(0) = 0.0;
                         next.push_back(moved);
                         next.push_back(stay);
                       }
                     }
                   },
                   [&](const AncillaRotation& r) {
                     const Matrix rot = ancilla_rotation_matrix(r.subspace, r.angle, r.axis_phase);
                     for (Branch br : branches_) {
                       const bool vacuum = std::norm(br.a) + std::norm(br.b) < kVacuumRadius2;
                       if (r.condition == RotationCondition::None || vacuum) br.amp = rot * br.amp;
                       next.push_back(br);
                     }
                   },
                   [&](const Wait&) {
                     const double dt = seq.effective_wait(index);
                     for (const Branch& br : branches_)
                       for (int level = 0; level < 3; ++level) {
                         if (br.amp(level) == cplx(0.0)) continue;
                         Branch part;
                         part.a = br.a * std::polar(1.0, params_.chi(Mode::A, level) * dt);
                         part.b = br.b * std::polar(1.0, params_.chi(Mode::B, level) * dt);
                         part.amp(level) = br.amp(level);
                         next.push_back(part);
                       }
                   },
                   [&](const ProjectAncilla& p) {
                     for (Branch br : branches_) {
                       for (int level = 0; level < 3; ++level)
                         if (level != p.level) br.amp(level) = 0.0;
                       next.push_back(br);
                     }
                   },
               },
               op);
    merge(next);
  }

 private:
  void merge(const std::vector<Branch>& in) {
    branches_.clear();
    for (const Branch& br : in) {
      if (br.amp.squaredNorm() < 1e-28) continue;
      auto it = std::find_if(branches_.begin(), branches_.end(), [&](const Branch& o) {
        return std::abs(o.a - br.a) < 1e-9 && std::abs(o.b - br.b) < 1e-9;
      });
      if (it == branches_.end())
        branches_.push_back(br);
      else
        it->amp += br.amp;
      max_a_ = std::max(max_a_, std::abs(br.a));
      max_b_ = std::max(max_b_, std::abs(br.b));
    }
  }

  const DeviceParams& params_;
  std::vector<Branch> branches_;
  double max_a_ = 0.0;
  double max_b_ = 0.0;
};

BranchTracker track(const GateSequence& seq, const DeviceParams& params) {
  BranchTracker tracker(params);
  for (std::size_t i = 0; i < seq.ops.size(); ++i) tracker.apply(seq, i);
  return tracker;
}

// ---------------------------------------------------------------------------
// Local gate application on vectors.

void apply_on_level(Vector& v, const SystemDims& dims, int level, const Matrix& op, Mode mode) {
  const SystemDims cav = dims.cavities();
  Vector slice(cav.total());
  for (int i = 0; i < cav.total(); ++i) slice(i) = v(i * dims.n_q() + level);
  slice = apply_mode(op, mode, cav, slice);
  for (int i = 0; i < cav.total(); ++i) v(i * dims.n_q() + level) = slice(i);
}

struct PreparedGate {
  enum class Kind { ModeOp, ConditionalModeOp, AncillaOp, VacuumAncillaOp, Diagonal, Project } kind;
  Mode mode = Mode::A;
  Matrix op;
  Vector diagonal;
  double wait = 0.0;
  int level = 0;
};

PreparedGate prepare_gate(const GateSequence& seq, std::size_t index, const SystemDims& dims,
                          const DeviceParams& params, const NoiseConfig& noise) {
  PreparedGate g{};
  std::visit(Overloaded{
                 [&](const Displace& d) {
                   if (d.mode == Mode::Ancilla) throw ValidationError("displacement must target a cavity");
                   g.mode = d.mode;
                   g.op = displacement_unitary(dims.size(d.mode), d.beta);
                   if (d.condition == DisplaceCondition::AncillaG) {
                     if (!dims.has_ancilla()) throw ValidationError("conditional displacement needs the ancilla");
                     g.kind = PreparedGate::Kind::ConditionalModeOp;
                   } else {
                     g.kind = PreparedGate::Kind::ModeOp;
                   }
                 },
                 [&](const AncillaRotation& r) {
                   if (!dims.has_ancilla()) throw ValidationError("ancilla rotation needs the ancilla");
                   g.op = ancilla_rotation_matrix(r.subspace, r.angle, r.axis_phase);
                   g.kind = r.condition == RotationCondition::CavitiesVacuum ? PreparedGate::Kind::VacuumAncillaOp
                                                                             : PreparedGate::Kind::AncillaOp;
                 },
                 [&](const Wait&) {
                   g.kind = PreparedGate::Kind::Diagonal;
                   g.wait = seq.effective_wait(index);
                   g.diagonal = conditional_phase_diagonal(params, g.wait, dims);
                   if (noise.kerr_during_waits) g.diagonal = g.diagonal.cwiseProduct(kerr_diagonal(params, g.wait, dims));
                 },
                 [&](const ProjectAncilla& p) {
                   if (!dims.has_ancilla()) throw ValidationError("projection needs the ancilla");
                   if (p.level < 0 || p.level > 2) throw ValidationError("projection level must be 0, 1 or 2");
                   g.kind = PreparedGate::Kind::Project;
                   g.level = p.level;
                 },
             },
             seq.ops[index]);
  return g;
}

Vector apply_unitary(const PreparedGate& g, const SystemDims& dims, const Vector& v) {
  switch (g.kind) {
    case PreparedGate::Kind::ModeOp: return apply_mode(g.op, g.mode, dims, v);
    case PreparedGate::Kind::ConditionalModeOp: {
      Vector out = v;
      apply_on_level(out, dims, 0, g.op, g.mode);
      return out;
    }
    case PreparedGate::Kind::AncillaOp: return apply_mode(g.op, Mode::Ancilla, dims, v);
    case PreparedGate::Kind::VacuumAncillaOp: {
      Vector out = v;
      const int base = dims.index(0, 0, 0);
      out.segment(base, 3) = g.op * v.segment(base, 3);
      return out;
    }
    case PreparedGate::Kind::Diagonal: return g.diagonal.cwiseProduct(v);
    case PreparedGate::Kind::Project: break;
  }
  throw std::logic_error("apply_unitary: projection is not unitary");
}

Matrix apply_unitary_columns(const PreparedGate& g, const SystemDims& dims, const Matrix& m) {
  switch (g.kind) {
    case PreparedGate::Kind::ModeOp: return apply_mode_left(g.op, g.mode, dims, m);
    case PreparedGate::Kind::AncillaOp: return apply_mode_left(g.op, Mode::Ancilla, dims, m);
    case PreparedGate::Kind::Diagonal: return g.diagonal.asDiagonal() * m;
    default: {
      Matrix out(m.rows(), m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = apply_unitary(g, dims, m.col(c));
      return out;
    }
  }
}

Vector level_mask(const SystemDims& dims, int level) {
  Vector mask = Vector::Zero(dims.total());
  for (int i = 0; i < dims.total(); ++i)
    if (i % dims.n_q() == level) mask(i) = 1.0;
  return mask;
}

std::array<double, 4> chi_rows(const DeviceParams& params, ParityProtocol protocol) {
  if (protocol == ParityProtocol::GeThenGf)
    return {params.chi_ge_a, params.chi_gf_a(), params.chi_ge_b, params.chi_gf_b()};
  return {params.chi_ef_a, params.chi_gf_a(), params.chi_ef_b, params.chi_gf_b()};
}

}  // namespace

// ---------------------------------------------------------------------------

double GateSequence::effective_wait(std::size_t index) const {
  const auto* w = std::get_if<Wait>(&ops.at(index));
  if (!w) throw std::invalid_argument("effective_wait: op is not a wait");
  if (w->duration <= 0.0) return 0.0;
  int neighbours = 0;
  if (index > 0 && std::holds_alternative<AncillaRotation>(ops[index - 1])) ++neighbours;
  if (index + 1 < ops.size() && std::holds_alternative<AncillaRotation>(ops[index + 1])) ++neighbours;
  return w->duration + neighbours * pulse_padding;
}

void GateSequence::validate() const {
  if (!(pulse_padding >= 0.0) || !std::isfinite(pulse_padding)) throw ValidationError("pulse padding must be >= 0");
  for (const GateOp& op : ops)
    std::visit(Overloaded{
                   [](const Displace& d) {
                     if (!std::isfinite(d.beta.real()) || !std::isfinite(d.beta.imag()))
                       throw ValidationError("displacement must be finite");
                     if (d.mode == Mode::Ancilla) throw ValidationError("displacement must target a cavity");
                   },
                   [](const AncillaRotation& r) {
                     if (!std::isfinite(r.angle) || !std::isfinite(r.axis_phase))
                       throw ValidationError("rotation angle must be finite");
                   },
                   [](const Wait& w) {
                     if (!(w.duration >= 0.0) || !std::isfinite(w.duration)) throw ValidationError("wait must be >= 0");
                   },
                   [](const ProjectAncilla& p) {
                     if (p.level < 0 || p.level > 2) throw ValidationError("projection level must be 0, 1 or 2");
                   },
               },
               op);
}

Matrix ancilla_rotation_matrix(Subspace subspace, double angle, double axis_phase) {
  const int lo = subspace == Subspace::GE ? 0 : 1;
  const double c = std::cos(angle / 2.0), s = std::sin(angle / 2.0);
  Matrix r = Matrix::Identity(3, 3);
  r(lo, lo) = c;
  r(lo + 1, lo + 1) = c;
  r(lo, lo + 1) = cplx(0.0, -s) * std::polar(1.0, -axis_phase);
  r(lo + 1, lo) = cplx(0.0, -s) * std::polar(1.0, axis_phase);
  return r;
}

// ---------------------------------------------------------------------------

std::pair<double, double> achieved_phases(const DeviceParams& params, ParityProtocol protocol, double dt1, double dt2) {
  const auto c = chi_rows(params, protocol);
  return {c[0] * dt1 + c[1] * dt2, c[2] * dt1 + c[3] * dt2};
}

WaitTimeSolution solve_wait_times(const DeviceParams& params, ParityProtocol protocol, double target_phi_a,
                                  double target_phi_b, int max_branch) {
  if (max_branch < 0) throw ValidationError("max_branch must be >= 0");
  const auto c = chi_rows(params, protocol);
  const double norm_a = std::hypot(c[0], c[1]), norm_b = std::hypot(c[2], c[3]);
  if (norm_a == 0.0 || norm_b == 0.0) throw ValidationError("singular dispersive-shift system");
  const double det = c[0] * c[3] - c[1] * c[2];
  const bool full_rank = std::abs(det) > 1e-12 * norm_a * norm_b;

  WaitTimeSolution best;
  best.protocol = protocol;
  best.target_phi_a = target_phi_a;
  best.target_phi_b = target_phi_b;
  bool have_feasible = false;
  double best_total = std::numeric_limits<double>::infinity();
  WaitTimeSolution fallback = best;
  double fallback_residual = std::numeric_limits<double>::infinity();

  auto residual_of = [&](double dt1, double dt2, double ra, double rb) {
    return std::hypot(c[0] * dt1 + c[1] * dt2 - ra, c[2] * dt1 + c[3] * dt2 - rb);
  };
  // Tolerance on negative times caused by round-off.
  const double time_tol = 1e-15;

  for (int ka = 0; ka <= max_branch; ++ka)
    for (int kb = 0; kb <= max_branch; ++kb) {
      const double ra = target_phi_a + 2.0 * kPi * ka, rb = target_phi_b + 2.0 * kPi * kb;
      std::vector<std::pair<double, double>> exact;
      if (full_rank) {
        exact.emplace_back((ra * c[3] - c[1] * rb) / det, (c[0] * rb - c[2] * ra) / det);
      } else {
        // Parallel rows: consistent only when both right-hand sides lie on
        // the same line; prefer the single-wait vertex dt2 = 0.
        const double scale = norm_b / norm_a;
        if (std::abs(rb - ra * scale) <= 1e-12 * std::max(1.0, std::abs(rb))) {
          if (c[0] > 0.0 && ra / c[0] >= 0.0) exact.emplace_back(ra / c[0], 0.0);
          else if (c[1] > 0.0 && ra / c[1] >= 0.0) exact.emplace_back(0.0, ra / c[1]);
        }
      }
      for (auto [dt1, dt2] : exact) {
        if (dt1 < -time_tol || dt2 < -time_tol) continue;
        dt1 = std::max(dt1, 0.0);
        dt2 = std::max(dt2, 0.0);
        if (dt1 + dt2 < best_total - 1e-18) {
          best_total = dt1 + dt2;
          have_feasible = true;
          best.dt1 = dt1;
          best.dt2 = dt2;
          best.branch_a = ka;
          best.branch_b = kb;
        }
      }
      // Clamped candidates on the non-negative boundary.
      const double t1_only = std::max(0.0, (c[0] * ra + c[2] * rb) / (c[0] * c[0] + c[2] * c[2]));
      const double t2_only = std::max(0.0, (c[1] * ra + c[3] * rb) / (c[1] * c[1] + c[3] * c[3]));
      for (auto [dt1, dt2] : {std::pair{t1_only, 0.0}, std::pair{0.0, t2_only}, std::pair{0.0, 0.0}}) {
        const double res = residual_of(dt1, dt2, ra, rb);
        if (res < fallback_residual - 1e-15) {
          fallback_residual = res;
          fallback.dt1 = dt1;
          fallback.dt2 = dt2;
          fallback.branch_a = ka;
          fallback.branch_b = kb;
        }
      }
    }

  WaitTimeSolution out = have_feasible ? best : fallback;
  out.feasible = have_feasible;
  const auto [pa, pb] = achieved_phases(params, protocol, out.dt1, out.dt2);
  out.achieved_phi_a = pa;
  out.achieved_phi_b = pb;
  out.residual = std::hypot(pa - (target_phi_a + 2.0 * kPi * out.branch_a), pb - (target_phi_b + 2.0 * kPi * out.branch_b));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double derive_generation_wait(const CatGenerationOptions& o, const DeviceParams& params) {
  auto cost = [&](double dt) {
    double s = std::norm(o.first_a * std::polar(1.0, params.chi_ge_a * dt) + o.second_a);
    if (o.include_b) s += std::norm(o.first_b * std::polar(1.0, params.chi_ge_b * dt) + o.second_b);
    return s;
  };
  const double chi_min = o.include_b ? std::min(params.chi_ge_a, params.chi_ge_b) : params.chi_ge_a;
  if (!(chi_min > 0.0)) throw ValidationError("decomposed generation needs positive chi_ge");
  const double span = 2.0 * kPi / chi_min;
  const int n = 4000;
  double best = 0.0, best_cost = cost(0.0);
  for (int i = 1; i <= n; ++i) {
    const double t = span * i / n;
    const double v = cost(t);
    if (v < best_cost) best_cost = v, best = t;
  }
  double lo = std::max(0.0, best - span / n), hi = best + span / n;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 200; ++it) {
    const double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    if (cost(x1) < cost(x2)) hi = x2;
    else lo = x1;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

CatGenerationPlan build_cat_generation(const CatGenerationOptions& o, const DeviceParams& params) {
  GateSequence seq;
  seq.label = o.decomposed ? "cat_generation_decomposed" : "cat_generation";
  auto add = [&](GateOp op) { seq.ops.push_back(std::move(op)); };
  add(AncillaRotation{Subspace::GE, kPi / 2.0, 0.0, RotationCondition::None});
  if (!o.decomposed) {
    if (std::abs(o.alpha_a) == 0.0 && (!o.include_b || std::abs(o.alpha_b) == 0.0))
      throw ValidationError("cat amplitude must be nonzero");
    add(Displace{Mode::A, 2.0 * o.alpha_a, DisplaceCondition::AncillaG});
    if (o.include_b) add(Displace{Mode::B, 2.0 * o.alpha_b, DisplaceCondition::AncillaG});
  } else {
    const double wait = o.wait.value_or(derive_generation_wait(o, params));
    if (!(wait >= 0.0)) throw ValidationError("generation wait must be >= 0");
    add(Displace{Mode::A, o.first_a, DisplaceCondition::None});
    if (o.include_b) add(Displace{Mode::B, o.first_b, DisplaceCondition::None});
    add(Wait{wait});
    add(Displace{Mode::A, o.second_a, DisplaceCondition::None});
    if (o.include_b) add(Displace{Mode::B, o.second_b, DisplaceCondition::None});
  }

  // Locate the ground branch G and the (near-)vacuum excited branch E.
  const BranchTracker tracker = track(seq, params);
  const Branch* g_branch = nullptr;
  const Branch* e_branch = nullptr;
  for (const Branch& br : tracker.branches()) {
    if (!g_branch || std::abs(br.amp(0)) > std::abs(g_branch->amp(0))) g_branch = &br;
    if (!e_branch || std::abs(br.amp(1)) > std::abs(e_branch->amp(1))) e_branch = &br;
  }
  if (std::norm(e_branch->a) + std::norm(e_branch->b) > kVacuumRadius2)
    throw ValidationError("generation parameters do not return the excited branch to vacuum");

  const cplx centre_a = 0.5 * (g_branch->a + e_branch->a), centre_b = 0.5 * (g_branch->b + e_branch->b);
  const cplx shift_a = o.centering_a.value_or(-centre_a);
  const cplx shift_b = o.include_b ? o.centering_b.value_or(-centre_b) : cplx(0.0);
  auto shift_phase = [&](const Branch& br) {
    return std::imag(shift_a * std::conj(br.a)) + std::imag(shift_b * std::conj(br.b));
  };
  // R_pi(phi)|e> = -i e^{-i phi}|g>; choose phi so the branches combine with e^{i phase}.
  const cplx c_g = g_branch->amp(0) * std::polar(1.0, shift_phase(*g_branch));
  const cplx c_e = e_branch->amp(1) * std::polar(1.0, shift_phase(*e_branch));
  const double axis = -std::arg(cplx(0.0, 1.0) * std::polar(1.0, o.phase) * c_g / c_e);
  add(AncillaRotation{Subspace::GE, kPi, wrap_phase(axis), RotationCondition::CavitiesVacuum});
  add(Displace{Mode::A, shift_a, DisplaceCondition::None});
  if (o.include_b) add(Displace{Mode::B, shift_b, DisplaceCondition::None});

  CatGenerationPlan plan{seq, 0.5 * (g_branch->a - e_branch->a), 0.5 * (g_branch->b - e_branch->b), o.phase};
  if (!o.include_b) plan.alpha_b = 0.0;
  return plan;
}

GateSequence build_joint_parity(ParityProtocol protocol, double dt1, double dt2, double pulse_padding) {
  if (!(dt1 >= 0.0) || !(dt2 >= 0.0)) throw ValidationError("parity waits must be >= 0");
  GateSequence seq;
  seq.pulse_padding = pulse_padding;
  auto rot = [](Subspace s, double angle, double phase) {
    return AncillaRotation{s, angle, phase, RotationCondition::None};
  };
  if (protocol == ParityProtocol::GeThenGf) {
    seq.label = "joint_parity_ge_gf";
    seq.ops = {rot(Subspace::GE, kPi / 2, 0.0), Wait{dt1}, rot(Subspace::EF, kPi, 0.0),
               Wait{dt2}, rot(Subspace::EF, kPi, 0.0), rot(Subspace::GE, kPi / 2, kPi)};
  } else {
    seq.label = "joint_parity_ef_gf";
    seq.ops = {rot(Subspace::GE, kPi, 0.0), rot(Subspace::EF, kPi / 2, 0.0), Wait{dt1},
               rot(Subspace::GE, kPi, 0.0), Wait{dt2}, rot(Subspace::EF, kPi, 0.0),
               rot(Subspace::GE, kPi / 2, 0.0)};
  }
  return seq;
}

GateSequence build_joint_parity(const WaitTimeSolution& solution) {
  return build_joint_parity(solution.protocol, solution.dt1, solution.dt2, 0.0);
}

// ---------------------------------------------------------------------------

SimulationResult simulate_sequence(const GateSequence& seq, const DensityMatrix& initial, const DeviceParams& params,
                                   const NoiseConfig& noise) {
  seq.validate();
  noise.validate();
  const SystemDims& dims = initial.dims();
  Matrix rho = initial.data();
  std::vector<ProjectionRecord> records;
  for (std::size_t i = 0; i < seq.ops.size(); ++i) {
    const PreparedGate g = prepare_gate(seq, i, dims, params, noise);
    if (g.kind == PreparedGate::Kind::Project) {
      const Vector mask = level_mask(dims, g.level);
      const Matrix keep = mask.asDiagonal() * rho * mask.asDiagonal();
      const Vector other_mask = Vector::Ones(dims.total()) - mask;
      const Matrix rest = other_mask.asDiagonal() * rho * other_mask.asDiagonal();
      const double p = keep.trace().real();
      ProjectionRecord rec;
      rec.op_index = i;
      rec.level = g.level;
      rec.probability = p;
      if (p > 1e-14) rec.selected = DensityMatrix(dims, keep / p);
      if (1.0 - p > 1e-14) rec.complement = DensityMatrix(dims, rest / (1.0 - p));
      if (!rec.selected) throw NumericalError("projection onto a level with zero population");
      rho = rec.selected->data();
      records.push_back(std::move(rec));
      continue;
    }
    if (g.kind == PreparedGate::Kind::Diagonal) {
      rho = (g.diagonal * g.diagonal.adjoint()).cwiseProduct(rho);
      if (noise.amplitude_damping && g.wait > 0.0) rho = apply_amplitude_damping(rho, dims, g.wait, params.t1_a, params.t1_b);
      continue;
    }
    const Matrix left = apply_unitary_columns(g, dims, rho);
    rho = apply_unitary_columns(g, dims, Matrix(left.adjoint()));
  }
  return SimulationResult{DensityMatrix(dims, rho), std::move(records)};
}

PureSimulationResult simulate_sequence(const GateSequence& seq, const StateVector& initial, const DeviceParams& params,
                                       const NoiseConfig& noise) {
  seq.validate();
  noise.validate();
  if (noise.amplitude_damping) throw ValidationError("amplitude damping needs the density-matrix simulation");
  const SystemDims& dims = initial.dims();
  Vector v = initial.amplitudes();
  std::vector<std::pair<std::size_t, double>> records;
  for (std::size_t i = 0; i < seq.ops.size(); ++i) {
    const PreparedGate g = prepare_gate(seq, i, dims, params, noise);
    if (g.kind == PreparedGate::Kind::Project) {
      v = level_mask(dims, g.level).cwiseProduct(v);
      const double p = v.squaredNorm();
      if (p <= 1e-14) throw NumericalError("projection onto a level with zero population");
      v /= std::sqrt(p);
      records.emplace_back(i, p);
      continue;
    }
    v = apply_unitary(g, dims, v);
  }
  return PureSimulationResult{StateVector::normalized(dims, v, initial.truncation_weight()), std::move(records)};
}

StateVector prepare_state(const GateSequence& seq, const SystemDims& target, const DeviceParams& params,
                          const NoiseConfig& noise) {
  if (!target.has_ancilla()) throw ValidationError("prepare_state: target must include the ancilla");
  if (noise.amplitude_damping) throw ValidationError("prepare_state is pure; amplitude damping is not applied during generation");
  const BranchTracker tracker = track(seq, params);
  auto work = [](int n, double r) {
    return r == 0.0 ? n : std::max(n, static_cast<int>(std::ceil(r * r + 8.0 * r + 16.0)));
  };
  const SystemDims wdims(work(target.n_a(), tracker.max_radius_a()), work(target.n_b(), tracker.max_radius_b()), 3);
  const StateVector vac = product_state(wdims, fock_state(wdims.n_a(), 0), fock_state(wdims.n_b(), 0), 0);
  const PureSimulationResult r = simulate_sequence(seq, vac, params, noise);
  return truncate_state(r.state, target);
}

DensityMatrix prepare_cavity_state(const GateSequence& seq, const SystemDims& cavity_dims, const DeviceParams& params,
                                   const NoiseConfig& noise) {
  const SystemDims full(cavity_dims.n_a(), cavity_dims.n_b(), 3);
  const DensityMatrix rho = cavity_state(DensityMatrix(prepare_state(seq, full, params, noise)));
  return preparation_error_channel(rho, params.prep_error);
}

// ---------------------------------------------------------------------------

Matrix displaced_parity_kernel(int dim, cplx beta, double epsilon, Mode mode) {
  if (epsilon == 0.0) return displaced_parity_matrix(dim, beta);
  const int rows = displaced_support(dim, beta);
  const Matrix d = displacement_block(dim, rows, beta);
  return d * parity_error_diagonal(epsilon, rows, mode).asDiagonal() * d.adjoint();
}

double measure_joint_parity(const DensityMatrix& rho_in, cplx beta_a, cplx beta_b, const DeviceParams& params,
                            const NoiseConfig& noise, const MeasureOptions& options) {
  params.validate();
  noise.validate();
  const DensityMatrix rho = cavity_state(rho_in);
  const int na = rho.dims().n_a(), nb = rho.dims().n_b();
  double value = 0.0;
  if (options.mode == MeasureMode::Observable) {
    const double eps = noise.parity_phase_error;
    value = product_expectation(rho, displaced_parity_kernel(na, beta_a, eps, Mode::A),
                                displaced_parity_kernel(nb, beta_b, eps, Mode::B))
                .real();
  } else {
    const GateSequence seq = options.sequence.value_or(
        build_joint_parity(solve_wait_times(params, options.protocol, kPi, kPi)));
    const SystemDims cav(displaced_support(na, beta_a), displaced_support(nb, beta_b), 1);
    const SystemDims work(cav.n_a(), cav.n_b(), 3);
    const Matrix da = displacement_block(cav.n_a(), na, -beta_a);
    const Matrix db = displacement_block(cav.n_b(), nb, -beta_b);
    auto lift = [&](const Vector& v) {
      // v is indexed a * nb + b; as an nb x na column-major matrix X(b, a).
      const Eigen::Map<const Matrix> x(v.data(), nb, na);
      const Matrix y = db * x * da.transpose();
      Vector out = Vector::Zero(work.total());
      for (int a = 0; a < cav.n_a(); ++a)
        for (int b = 0; b < cav.n_b(); ++b) out(work.index(a, b, 0)) = y(b, a);
      return out;
    };
    Eigen::SelfAdjointEigenSolver<Matrix> es(rho.data());
    const Vector mask_e = level_mask(work, 1);
    if (noise.amplitude_damping) {
      if (work.total() > 2000) throw ValidationError("amplitude damping in sequence mode needs a working space <= 2000");
      Matrix w = Matrix::Zero(work.total(), work.total());
      for (int k = 0; k < es.eigenvalues().size(); ++k) {
        const double lam = es.eigenvalues()(k);
        if (lam <= 1e-14) continue;
        const Vector v = lift(es.eigenvectors().col(k));
        w += lam * v * v.adjoint();
      }
      w /= w.trace().real();
      const SimulationResult r = simulate_sequence(seq, DensityMatrix(work, w), params, noise);
      const double pe = (mask_e.asDiagonal() * r.state.data()).trace().real();
      value = 2.0 * pe - 1.0;
    } else {
      double weight = 0.0;
      for (int k = 0; k < es.eigenvalues().size(); ++k) {
        const double lam = es.eigenvalues()(k);
        if (lam <= 1e-14) continue;
        const StateVector psi = StateVector::normalized(work, lift(es.eigenvectors().col(k)));
        const PureSimulationResult r = simulate_sequence(seq, psi, params, noise);
        const double pe = mask_e.cwiseProduct(r.state.amplitudes()).squaredNorm();
        value += lam * (2.0 * pe - 1.0);
        weight += lam;
      }
      value /= weight;
    }
  }
  return params.parity_visibility * value;
}

double mapped_parity_value(double phi_a, double phi_b, cplx alpha_a, cplx alpha_b, int cutoff) {
  const SystemDims dims(cutoff, cutoff, 1);
  const StateVector psi = two_mode_cat(dims, alpha_a, alpha_b, kPi);
  cplx sum = 0.0;
  for (int a = 0; a < cutoff; ++a)
    for (int b = 0; b < cutoff; ++b) sum += std::norm(psi.amplitudes()(dims.index(a, b))) * std::polar(1.0, phi_a * a + phi_b * b);
  return sum.real();
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_complex(cplx z) {
  if (z.imag() == 0.0 && z.real() >= 0.0) return fmt(z.real());
  return fmt(std::abs(z)) + "@" + fmt(std::arg(z));
}

double parse_number(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

double parse_angle(const std::string& s, int line) {
  static const std::regex pi_form(R"(^([+-]?)(?:([0-9.]+(?:[eE][+-]?[0-9]+)?)\*)?pi(?:/([0-9.]+(?:[eE][+-]?[0-9]+)?))?$)");
  std::smatch m;
  if (std::regex_match(s, m, pi_form)) {
    double v = kPi;
    if (m[2].matched) v *= parse_number(m[2], line);
    if (m[3].matched) v /= parse_number(m[3], line);
    return m[1] == "-" ? -v : v;
  }
  return parse_number(s, line);
}

cplx parse_complex(const std::string& s, int line) {
  const auto at = s.find('@');
  if (at == std::string::npos) return parse_number(s, line);
  return std::polar(parse_number(s.substr(0, at), line), parse_angle(s.substr(at + 1), line));
}

double parse_time(const std::string& s, int line) {
  static const std::regex form(R"(^([0-9.eE+-]+)(ns|us|ms|s)$)");
  std::smatch m;
  if (!std::regex_match(s, m, form)) throw ValidationError("line " + std::to_string(line) + ": bad time '" + s + "'");
  const double v = parse_number(m[1], line);
  const std::string unit = m[2];
  const double scale = unit == "ns" ? 1e-9 : unit == "us" ? 1e-6 : unit == "ms" ? 1e-3 : 1.0;
  return v * scale;
}

}  // namespace

std::string serialize_sequence(const GateSequence& seq) {
  std::ostringstream out;
  if (!seq.label.empty()) out << "LABEL " << seq.label << "\n";
  out << "PADDING " << fmt(seq.pulse_padding * 1e9) << "ns\n";
  for (const GateOp& op : seq.ops)
    std::visit(Overloaded{
                   [&](const Displace& d) {
                     out << "DISP " << (d.mode == Mode::A ? "A" : "B") << " " << fmt_complex(d.beta);
                     if (d.condition == DisplaceCondition::AncillaG) out << " COND=G";
                     out << "\n";
                   },
                   [&](const AncillaRotation& r) {
                     out << "ROT " << (r.subspace == Subspace::GE ? "GE" : "EF") << " " << fmt(r.angle)
                         << " PHASE=" << fmt(r.axis_phase);
                     if (r.condition == RotationCondition::CavitiesVacuum) out << " COND=VAC";
                     out << "\n";
                   },
                   [&](const Wait& w) { out << "WAIT " << fmt(w.duration * 1e9) << "ns\n"; },
                   [&](const ProjectAncilla& p) { out << "PROJ " << "GEF"[p.level] << "\n"; },
               },
               op);
  return out.str();
}

GateSequence parse_sequence(const std::string& text) {
  GateSequence seq;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::istringstream words(raw);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    const std::string where = "line " + std::to_string(line) + ": ";
    const std::string& kw = tok[0];
    if (kw == "LABEL") {
      if (tok.size() != 2) throw ValidationError(where + "LABEL takes one word");
      seq.label = tok[1];
    } else if (kw == "PADDING") {
      if (tok.size() != 2) throw ValidationError(where + "PADDING takes a time");
      seq.pulse_padding = parse_time(tok[1], line);
    } else if (kw == "DISP") {
      if (tok.size() < 3 || tok.size() > 4) throw ValidationError(where + "DISP <A|B> <beta> [COND=G]");
      Displace d;
      if (tok[1] == "A") d.mode = Mode::A;
      else if (tok[1] == "B") d.mode = Mode::B;
      else throw ValidationError(where + "unknown cavity '" + tok[1] + "'");
      d.beta = parse_complex(tok[2], line);
      if (tok.size() == 4) {
        if (tok[3] != "COND=G") throw ValidationError(where + "unknown displacement condition '" + tok[3] + "'");
        d.condition = DisplaceCondition::AncillaG;
      }
      seq.ops.push_back(d);
    } else if (kw == "ROT") {
      if (tok.size() < 3 || tok.size() > 5) throw ValidationError(where + "ROT <GE|EF> <angle> [PHASE=x] [COND=VAC]");
      AncillaRotation r;
      if (tok[1] == "GE") r.subspace = Subspace::GE;
      else if (tok[1] == "EF") r.subspace = Subspace::EF;
      else throw ValidationError(where + "unknown subspace '" + tok[1] + "'");
      r.angle = parse_angle(tok[2], line);
      for (std::size_t k = 3; k < tok.size(); ++k) {
        if (tok[k].rfind("PHASE=", 0) == 0) r.axis_phase = parse_angle(tok[k].substr(6), line);
        else if (tok[k] == "COND=VAC") r.condition = RotationCondition::CavitiesVacuum;
        else throw ValidationError(where + "unknown rotation option '" + tok[k] + "'");
      }
      seq.ops.push_back(r);
    } else if (kw == "WAIT") {
      if (tok.size() != 2) throw ValidationError(where + "WAIT takes a time");
      seq.ops.push_back(Wait{parse_time(tok[1], line)});
    } else if (kw == "PROJ") {
      if (tok.size() != 2 || tok[1].size() != 1) throw ValidationError(where + "PROJ <G|E|F>");
      const auto pos = std::string("GEF").find(tok[1][0]);
      if (pos == std::string::npos) throw ValidationError(where + "unknown level '" + tok[1] + "'");
      seq.ops.push_back(ProjectAncilla{static_cast<int>(pos)});
    } else {
      throw ValidationError(where + "unknown gate '" + kw + "'");
    }
  }
  seq.validate();
  return seq;
}

}  // namespace twobox
