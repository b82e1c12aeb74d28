#include "qlink/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "qlink/layout.hpp"

namespace qlink {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

DenseMatrix level_swap_ge() {
  DenseMatrix x = DenseMatrix::Zero(3, 3);
  x(0, 1) = x(1, 0) = x(2, 2) = 1.0;
  return x;
}

DenseMatrix rank_one(const Vector& v) { return v * v.adjoint(); }

Vector vec3(cplx a, cplx b, cplx c) {
  Vector v(3);
  v << a, b, c;
  return v;
}

const char* sign_label(int s) { return s == 0 ? "+" : "-"; }

}  // namespace

// ---- inputs and labels ---------------------------------------------------

void QubitInput::validate(double tol) const {
  const double n = std::norm(c0) + std::norm(c1);
  if (!std::isfinite(n) || std::abs(n - 1.0) > tol) {
    throw std::invalid_argument(fmt::format("qubit amplitudes must satisfy |c0|^2 + |c1|^2 = 1, got {:.12g}", n));
  }
}

Vector QubitInput::as_level_vector() const { return vec3(c0, c1, 0.0); }

QubitInput QubitInput::random(Rng& rng) {
  Vector v(2);
  v << cplx{rng.normal(), rng.normal()}, cplx{rng.normal(), rng.normal()};
  v.normalize();
  return {v[0], v[1]};
}

std::string to_string(ProtocolStatus s) { return s == ProtocolStatus::Success ? "success" : "retry"; }

std::string to_string(RetryReason r) {
  switch (r) {
    case RetryReason::None: return "none";
    case RetryReason::StepIiExcited: return "step_ii_atom1_in_e";
    case RetryReason::StepIvExcited: return "step_iv_atom1_in_e";
    case RetryReason::StepIvBothR: return "step_iv_atom2_atoma_in_RR";
  }
  return "unknown";
}

std::string TeleportOutcome::label() const {
  return fmt::format("b={},atom1={},atoma={}", b == 0 ? "g" : "e", sign_label(sign_1), sign_label(sign_a));
}

// ---- tables --------------------------------------------------------------

CorrectionTable::CorrectionTable(std::array<DenseMatrix, 8> entries) : entries_(std::move(entries)) {
  for (const auto& u : entries_) {
    if (u.rows() != 3 || u.cols() != 3) throw DimensionError("correction entries must be 3x3");
    if (!(u.adjoint() * u).isIdentity(1e-12)) throw std::invalid_argument("correction entry is not unitary");
  }
}

CorrectionTable CorrectionTable::frozen() {
  // Columns are sources (G, E, R), rows are images.
  constexpr int G = 0, E = 1, R = 2;
  std::array<DenseMatrix, 8> t;
  for (int k = 0; k < 8; ++k) {
    const auto o = TeleportOutcome::from_index(k);
    const double s = (o.sign_1 == 0 ? 1.0 : -1.0) * (o.sign_a == 0 ? 1.0 : -1.0);
    DenseMatrix u = DenseMatrix::Zero(3, 3);
    if (o.b == 0) {
      u(G, E) = 1.0;
      u(E, R) = s;
      u(R, G) = 1.0;
    } else {
      u(G, R) = 1.0;
      u(E, E) = s;
      u(R, G) = 1.0;
    }
    t[static_cast<std::size_t>(k)] = u;
  }
  return CorrectionTable(std::move(t));
}

RecoveryTable RecoveryTable::frozen() {
  const DenseMatrix id = DenseMatrix::Identity(3, 3);
  const DenseMatrix x = level_swap_ge();
  return {id, x, {id, id, x}};
}

DenseMatrix canonical_correction(const Vector& v0, const Vector& v1, double tol) {
  if (v0.size() != 3 || v1.size() != 3) throw DimensionError("canonical_correction expects 3-level vectors");
  Eigen::Index l0 = 0, l1 = 0;
  v0.cwiseAbs().maxCoeff(&l0);
  v1.cwiseAbs().maxCoeff(&l1);
  const double scale = std::max(std::abs(v0[l0]), std::abs(v1[l1]));
  if (!(scale > 0.0)) throw std::invalid_argument("canonical_correction: zero vectors");
  for (Eigen::Index k = 0; k < 3; ++k) {
    if ((k != l0 && std::abs(v0[k]) > tol * scale) || (k != l1 && std::abs(v1[k]) > tol * scale)) {
      throw std::invalid_argument("canonical_correction: branch vectors occupy more than one level");
    }
  }
  if (l0 == l1) throw std::invalid_argument("canonical_correction: both inputs land on the same level");
  if (std::abs(std::abs(v0[l0]) - std::abs(v1[l1])) > tol * scale) {
    throw std::invalid_argument("canonical_correction: branch amplitudes differ in magnitude");
  }
  const Eigen::Index l2 = 3 - l0 - l1;
  DenseMatrix u = DenseMatrix::Zero(3, 3);
  u(0, l0) = 1.0;
  const cplx ratio = v0[l0] / v1[l1];
  u(1, l1) = ratio / std::abs(ratio);
  u(2, l2) = 1.0;
  return u;
}

bool equal_up_to_phase(const DenseMatrix& a, const DenseMatrix& b, double tol) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  Eigen::Index r = 0, c = 0;
  a.cwiseAbs().maxCoeff(&r, &c);
  if (std::abs(b(r, c)) == 0.0) return a.isZero(tol);
  const cplx phase = a(r, c) / b(r, c);
  if (std::abs(std::abs(phase) - 1.0) > tol) return false;
  return (a - phase * b).cwiseAbs().maxCoeff() <= tol;
}

// ---- engine ----------------------------------------------------------------

ProtocolEngine::ProtocolEngine(SpacePtr space, CorrectionTable table, RecoveryTable recovery)
    : space_(std::move(space)),
      table_(std::move(table)),
      recovery_(std::move(recovery)),
      atom1_e_({projector(space_, kAtom1, "e"), LinearOperator::identity(space_) - projector(space_, kAtom1, "e")}),
      rr_({projector(space_, kAtom2, "R") * projector(space_, kAtomA, "R"),
           LinearOperator::identity(space_) - projector(space_, kAtom2, "R") * projector(space_, kAtomA, "R")}),
      atom1_levels_({projector(space_, kAtom1, "g"), projector(space_, kAtom1, "e"), projector(space_, kAtom1, "r")}),
      tel_b_({projector(space_, kAtomB, "g"), projector(space_, kAtomB, "e"), projector(space_, kAtomB, "r")}),
      tel_1_({local_operator(space_, kAtom1, rank_one(vec3(kInvSqrt2, 0.0, kInvSqrt2))),
              local_operator(space_, kAtom1, rank_one(vec3(kInvSqrt2, 0.0, -kInvSqrt2))),
              projector(space_, kAtom1, "e")}),
      tel_a_({local_operator(space_, kAtomA, rank_one(vec3(0.0, kInvSqrt2, kInvSqrt2))),
              local_operator(space_, kAtomA, rank_one(vec3(0.0, kInvSqrt2, -kInvSqrt2))),
              projector(space_, kAtomA, "G")}) {
  // Encoding on (atom1, b), local index 3*i_1 + i_b with g=0, e=1, r=2:
  //   gg -> (eg + ge)/sqrt2,  eg -> (ee + gg)/sqrt2
  //   ge -> (eg - ge)/sqrt2,  ee -> (ee - gg)/sqrt2
  DenseMatrix enc = DenseMatrix::Identity(9, 9);
  constexpr int gg = 0, ge = 1, eg = 3, ee = 4;
  for (int c : {gg, ge, eg, ee}) enc.col(c).setZero();
  enc(eg, gg) = kInvSqrt2;
  enc(ge, gg) = kInvSqrt2;
  enc(ee, eg) = kInvSqrt2;
  enc(gg, eg) = kInvSqrt2;
  enc(eg, ge) = kInvSqrt2;
  enc(ge, ge) = -kInvSqrt2;
  enc(ee, ee) = kInvSqrt2;
  enc(gg, ee) = -kInvSqrt2;
  encode_ = embed(LinearOperator::from_dense(local_space(space_, {kAtom1, kAtomB}), enc), space_);

  DenseMatrix cyc = DenseMatrix::Zero(3, 3);
  cyc(0, 2) = 1.0;  // r -> g
  cyc(1, 0) = 1.0;  // g -> e
  cyc(2, 1) = 1.0;  // e -> r
  symmetrize_ = local_operator(space_, kAtom1, cyc);

  const std::array<std::string, 2> targets{kAtom2, kAtomA};
  for (std::size_t gate = 0; gate < 2; ++gate) {
    auto part = [&](ChannelParams p) { return channel_operator(space_, p, kAtom1, targets[gate]); };
    channel_parts_[gate] = {part({1.0, 0.0, 0.0, 0.0, false}), part({0.0, 1.0, 0.0, 0.0, false}),
                            part({0.0, 0.0, 1.0, 0.0, false}), part({0.0, 0.0, 0.0, 1.0, false})};
  }
  for (int k = 0; k < 8; ++k) {
    corrections_[static_cast<std::size_t>(k)] = local_operator(space_, kAtom2, table_.at(TeleportOutcome::from_index(k)));
  }
}

StateVector ProtocolEngine::prepare(const Vector& atom1_state, const std::optional<StateVector>& rest) const {
  const HilbertSpace& sp = *space_;
  if (atom1_state.size() != 3) throw DimensionError("atom1 state must have 3 levels");
  const std::size_t k1 = sp.position(kAtom1);
  const std::size_t kb = sp.position(kAtomB);
  const std::size_t k2 = sp.position(kAtom2);
  const std::size_t ka = sp.position(kAtomA);
  std::vector<std::size_t> others;
  for (std::size_t k = 0; k < sp.num_subsystems(); ++k) {
    if (k != k1 && k != kb && k != k2 && k != ka) others.push_back(k);
  }
  if (rest) {
    const HilbertSpace& rs = *rest->space();
    if (rs.num_subsystems() != others.size()) throw DimensionError("prepare: rest state has the wrong factors");
    for (std::size_t i = 0; i < others.size(); ++i) {
      if (!(rs.subsystem(i).label == sp.subsystem(others[i]).label &&
            rs.subsystem(i).dim() == sp.subsystem(others[i]).dim())) {
        throw DimensionError("prepare: rest state factors do not match the protocol space");
      }
    }
  }
  Vector amp = Vector::Zero(static_cast<Eigen::Index>(sp.total_dim()));
  const std::size_t atoms_base = 0 * sp.stride(kb) + 2 * sp.stride(k2) + 2 * sp.stride(ka);
  const std::size_t rest_dim = rest ? rest->dim() : 1;
  for (std::size_t ri = 0; ri < rest_dim; ++ri) {
    std::size_t offset = 0;
    cplx rest_amp = 1.0;
    if (rest) {
      rest_amp = rest->amplitudes()[static_cast<Eigen::Index>(ri)];
      if (rest_amp == cplx{}) continue;
      for (std::size_t i = 0; i < others.size(); ++i) offset += rest->space()->digit(ri, i) * sp.stride(others[i]);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      amp[static_cast<Eigen::Index>(atoms_base + offset + l * sp.stride(k1))] =
          atom1_state[static_cast<Eigen::Index>(l)] * rest_amp;
    }
  }
  return StateVector(space_, std::move(amp));
}

StateVector ProtocolEngine::encode_backup(const StateVector& psi) const {
  const double outside = 1.0 - expectation(projector(space_, kAtomB, "g"), psi).real() / psi.norm2();
  if (outside > 1e-12) throw std::invalid_argument("encode_backup: backup atom must start in g");
  const double r1 = expectation(projector(space_, kAtom1, "r"), psi).real() / psi.norm2();
  if (r1 > 1e-12) throw std::invalid_argument("encode_backup: atom1 must lie in span{g, e}");
  return apply(encode_, psi);
}

StateVector ProtocolEngine::symmetrize(const StateVector& psi) const {
  const Vector pe = projector(space_, kAtom1, "e").matrix() * psi.amplitudes();
  if (pe.norm() > 1e-10 * psi.norm()) {
    throw std::invalid_argument(fmt::format("symmetrize: atom1 still has e amplitude {:.3g}", pe.norm() / psi.norm()));
  }
  return apply(symmetrize_, psi);
}

LinearOperator ProtocolEngine::channel(const ChannelParams& params, int gate) const {
  const auto& parts = channel_parts_.at(static_cast<std::size_t>(gate));
  return params.alpha * parts[0] + params.beta * parts[1] + params.gamma1 * parts[2] + params.gamma2 * parts[3];
}

StateVector ProtocolEngine::transmit(const StateVector& psi, const ChannelParams& params, int gate) const {
  const auto& parts = channel_parts_.at(static_cast<std::size_t>(gate));
  const auto& x = psi.amplitudes();
  const std::string& target = gate == 0 ? kAtom2 : kAtomA;
  // Sector check: everything must lie in {g,e}_1 x {R}_target.
  const Vector in_sector = (parts[0].matrix() + parts[3].matrix()) * x;
  if (psi.norm2() - in_sector.squaredNorm() > 1e-20 * std::max(1.0, psi.norm2())) {
    throw SectorError(fmt::format("transmission atom1->{}: input outside {{g,e}} x {{R}}", target));
  }
  Vector y = params.alpha * (parts[0].matrix() * x);
  y += params.beta * (parts[1].matrix() * x);
  y += params.gamma1 * (parts[2].matrix() * x);
  y += params.gamma2 * (parts[3].matrix() * x);
  return StateVector(space_, std::move(y));
}

StateVector ProtocolEngine::correct(const StateVector& psi, const TeleportOutcome& o) const {
  return apply(corrections_[static_cast<std::size_t>(o.index())], psi);
}

StateVector ProtocolEngine::project_teleport(const StateVector& psi, const TeleportOutcome& o) const {
  Vector y = tel_b_.projector(static_cast<std::size_t>(o.b)).matrix() * psi.amplitudes();
  y = tel_1_.projector(static_cast<std::size_t>(o.sign_1)).matrix() * y;
  y = tel_a_.projector(static_cast<std::size_t>(o.sign_a)).matrix() * y;
  return StateVector(space_, std::move(y));
}

StateVector ProtocolEngine::on_backup(const StateVector& psi, const DenseMatrix& u) const {
  return apply(local_operator(space_, kAtomB, u), psi);
}

StateVector ProtocolEngine::ideal_after_step_ii(const QubitInput& q) const {
  return transmit(encode_backup(prepare(q)), ChannelParams::ideal(), 0);
}

StateVector ProtocolEngine::ideal_before_teleport(const QubitInput& q) const {
  auto basis = [&](const char* l1, const char* lb, const char* l2, const char* la) {
    return StateVector::basis(space_, {{kAtom1, l1}, {kAtomB, lb}, {kAtom2, l2}, {kAtomA, la}});
  };
  StateVector out = q.c0 * basis("r", "e", "R", "E");
  out += q.c1 * basis("r", "g", "R", "E");
  out += q.c0 * basis("g", "g", "E", "R");
  out += q.c1 * basis("g", "e", "E", "R");
  out *= kInvSqrt2;
  return out;
}

// ---- transmitters --------------------------------------------------------

SampledChannel::SampledChannel(NoiseConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

StateVector SampledChannel::transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                                     nlohmann::json& log) {
  const std::optional<ChannelParams> first = gate == 1 ? first_ : std::nullopt;
  ChannelParams draw = sample_channel(cfg_, rng, first);
  StateVector out = engine.transmit(psi, draw, gate);
  bool resampled = false;
  if (draw.jumped && out.norm2() <= 1e-28 * psi.norm2()) {
    // Nothing to lose: with no excitation in flight a jump cannot happen.
    NoiseConfig forced = cfg_;
    forced.p_nojump = 1.0;
    draw = sample_channel(forced, rng, first);
    out = engine.transmit(psi, draw, gate);
    resampled = true;
  }
  if (gate == 0) first_ = draw;
  log = draw.to_json();
  log["gate"] = gate == 0 ? "ii" : "iv";
  if (resampled) log["resampled_impossible_jump"] = true;
  return out;
}

StateVector FixedChannel::transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng&,
                                   nlohmann::json& log) {
  const auto& draw = draws_.at(static_cast<std::size_t>(gate));
  log = draw.to_json();
  log["gate"] = gate == 0 ? "ii" : "iv";
  return engine.transmit(psi, draw, gate);
}

// ---- runs ----------------------------------------------------------------

nlohmann::json ProtocolOutcome::to_json() const {
  nlohmann::json j;
  j["status"] = to_string(status);
  j["reason"] = to_string(reason);
  j["rounds"] = rounds;
  j["fidelity"] = fidelity;
  if (teleport) j["teleport_outcome"] = teleport->label();
  auto br = nlohmann::json::array();
  for (const auto& e : transcript.entries) {
    br.push_back({{"round", e.round}, {"step", e.step}, {"measurement", e.measurement}, {"outcome", e.outcome},
                  {"probability", e.probability}});
  }
  j["branches"] = std::move(br);
  j["channel_draws"] = channel_draws;
  j["backup_fidelities"] = backup_fidelities;
  return j;
}

namespace {

MeasurementResult record(const ProjectiveMeasurement& m, const StateVector& psi, Rng& rng, Transcript& t, int round,
                         const char* step, const char* what, const std::vector<std::string>& labels) {
  auto res = m.measure(psi, rng.uniform());
  t.entries.push_back({round, step, what, labels.at(res.outcome), res.probability});
  return res;
}

}  // namespace

ProtocolOutcome run_protocol(const ProtocolEngine& engine, const QubitInput& q, Transmitter& channel, Rng& rng,
                             int max_rounds) {
  q.validate();
  if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
  const Vector target = q.as_level_vector();
  ProtocolOutcome out;
  Vector carrier = target;  // state loaded into atom1 at the start of a round

  for (int round = 1; round <= max_rounds; ++round) {
    out.rounds = round;
    out.transcript.rounds_used = round;
    channel.begin_round();
    StateVector psi = engine.encode_backup(engine.prepare(carrier));

    nlohmann::json log;
    psi = channel.transmit(engine, psi, 0, rng, log);
    log["round"] = round;
    out.channel_draws.push_back(log);

    std::optional<StateVector> recovered;
    auto m = record(engine.atom1_excited_check(), psi, rng, out.transcript, round, "ii", "atom1 in e", {"e", "not e"});
    if (m.outcome == 0) {
      recovered = engine.on_backup(m.collapsed, engine.recovery().step_ii_excited);
      out.reason = RetryReason::StepIiExcited;
    } else {
      psi = engine.symmetrize(m.collapsed);
      psi = channel.transmit(engine, psi, 1, rng, log);
      log["round"] = round;
      out.channel_draws.push_back(log);
      m = record(engine.atom1_excited_check(), psi, rng, out.transcript, round, "iv", "atom1 in e", {"e", "not e"});
      if (m.outcome == 0) {
        recovered = engine.on_backup(m.collapsed, engine.recovery().step_iv_excited);
        out.reason = RetryReason::StepIvExcited;
      } else {
        m = record(engine.rr_check(), m.collapsed, rng, out.transcript, round, "iv", "atom2,atoma in RR",
                   {"RR", "not RR"});
        if (m.outcome == 0) {
          auto l = record(engine.atom1_levels(), m.collapsed, rng, out.transcript, round, "iv", "atom1 level",
                          {"g", "e", "r"});
          recovered = engine.on_backup(l.collapsed, engine.recovery().step_iv_rr.at(l.outcome));
          out.reason = RetryReason::StepIvBothR;
        } else {
          auto mb = record(engine.teleport_b(), m.collapsed, rng, out.transcript, round, "v", "atomb level",
                           {"g", "e", "r"});
          auto m1 = record(engine.teleport_1(), mb.collapsed, rng, out.transcript, round, "v", "atom1 (g+-r)",
                           {"+", "-", "e"});
          auto ma = record(engine.teleport_a(), m1.collapsed, rng, out.transcript, round, "v", "atoma (E+-R)",
                           {"+", "-", "G"});
          if (mb.outcome > 1 || m1.outcome > 1 || ma.outcome > 1) {
            throw std::logic_error("teleportation produced an outcome outside the correction table");
          }
          const TeleportOutcome o{static_cast<int>(mb.outcome), static_cast<int>(m1.outcome),
                                  static_cast<int>(ma.outcome)};
          const auto final_state = engine.correct(ma.collapsed, o);
          out.status = ProtocolStatus::Success;
          out.reason = RetryReason::None;
          out.teleport = o;
          out.fidelity = subsystem_fidelity(final_state, kAtom2, target);
          return out;
        }
      }
    }

    // Detected error: the qubit sits on b; reset everything else.
    const auto phi = pure_factor(*recovered, kAtomB, 1e-10);
    if (!phi) throw RecoveryError(fmt::format("round {}: backup atom is entangled after {}", round, to_string(out.reason)));
    const cplx ov = target.dot(*phi);  // conjugates target
    out.fidelity = std::norm(ov);
    out.backup_fidelities.push_back(out.fidelity);
    out.status = ProtocolStatus::RetryAfterDetectedError;
    carrier = *phi;
  }
  return out;
}

ProtocolOutcome run_protocol(const QubitInput& q, const NoiseConfig& cfg, Rng& rng, int max_rounds) {
  static const ProtocolEngine engine(make_atom_space());
  SampledChannel channel(cfg);
  return run_protocol(engine, q, channel, rng, max_rounds);
}

ProtocolBatch run_protocol_batch(const QubitInput& q, const NoiseConfig& cfg, std::size_t n_runs,
                                 std::uint64_t base_seed, int max_rounds, Execution exec) {
  cfg.validate();
  const ProtocolEngine engine(make_atom_space());
  ProtocolBatch batch;
  batch.outcomes.resize(n_runs);
  for_index(exec, n_runs, [&](std::size_t i) {
    Rng rng(base_seed + i);
    SampledChannel channel(cfg);
    batch.outcomes[i] = run_protocol(engine, q, channel, rng, max_rounds);
  });
  std::size_t successes = 0;
  double rounds = 0.0, fid_sum = 0.0;
  double fid_min = std::numeric_limits<double>::infinity();
  for (const auto& o : batch.outcomes) {
    if (o.status == ProtocolStatus::Success) {
      ++successes;
      rounds += o.rounds;
      fid_sum += o.fidelity;
      fid_min = std::min(fid_min, o.fidelity);
    }
  }
  batch.success_rate = n_runs ? static_cast<double>(successes) / static_cast<double>(n_runs) : 0.0;
  batch.mean_rounds = successes ? rounds / static_cast<double>(successes) : 0.0;
  batch.mean_fidelity = successes ? fid_sum / static_cast<double>(successes) : 0.0;
  batch.min_fidelity = successes ? fid_min : 0.0;
  return batch;
}

// ---- deterministic branch analysis ---------------------------------------

namespace {

/// Keeps projector k of m; returns the kept probability and normalizes psi.
double keep(const ProjectiveMeasurement& m, std::size_t k, StateVector& psi) {
  const double total = psi.norm2();
  StateVector kept = apply(m.projector(k), psi);
  const double p = total > 0.0 ? kept.norm2() / total : 0.0;
  if (kept.norm2() > 0.0) kept.normalize();
  psi = std::move(kept);
  return p;
}

}  // namespace

ConditionalResult conditional_protocol(const ProtocolEngine& engine, const QubitInput& q, const GateMap& gates,
                                       const std::optional<StateVector>& initial) {
  q.validate();
  const Vector target = q.as_level_vector();
  const StateVector start = initial ? *initial : engine.prepare(q);
  const StateVector encoded = engine.encode_backup(start);

  // Ideal reference path from the same start state.
  StateVector ideal_ii = engine.transmit(encoded, ChannelParams::ideal(), 0);
  StateVector ideal_tp = engine.transmit(engine.symmetrize(ideal_ii), ChannelParams::ideal(), 1);

  ConditionalResult res;
  res.after_step_ii = gates(encoded, 0);
  res.step_ii_overlap = overlap(ideal_ii, res.after_step_ii);
  res.fidelity.fill(std::numeric_limits<double>::quiet_NaN());
  res.min_fidelity = std::numeric_limits<double>::quiet_NaN();

  StateVector psi = res.after_step_ii;
  double p = keep(engine.atom1_excited_check(), 1, psi);
  if (p > 0.0) {
    psi = gates(engine.symmetrize(psi), 1);
    p *= keep(engine.atom1_excited_check(), 1, psi);
  }
  if (p > 0.0) p *= keep(engine.rr_check(), 1, psi);
  res.p_no_detected_error = p;
  if (!(p > 0.0)) return res;

  res.before_teleport = psi;
  res.pre_teleport_overlap = overlap(ideal_tp, psi);
  double fmin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 8; ++k) {
    const auto o = TeleportOutcome::from_index(k);
    const StateVector branch = engine.project_teleport(psi, o);
    const double pk = branch.norm2();
    res.branch_probability[static_cast<std::size_t>(k)] = pk;
    if (pk <= 1e-14) continue;
    const double f = subsystem_fidelity(engine.correct(branch, o), kAtom2, target);
    res.fidelity[static_cast<std::size_t>(k)] = f;
    fmin = std::min(fmin, f);
  }
  res.min_fidelity = fmin;
  return res;
}

namespace {

/// Amplitudes of psi with `label` fixed to `level`, over all other factors.
Vector level_slice(const StateVector& psi, const std::string& label, std::size_t level) {
  const auto& sp = *psi.space();
  const std::size_t k = sp.position(label);
  const std::size_t d = sp.subsystem(k).dim();
  Vector out(static_cast<Eigen::Index>(sp.total_dim() / d));
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < sp.total_dim(); ++i) {
    if (sp.digit(i, k) == level) out[n++] = psi.amplitudes()[static_cast<Eigen::Index>(i)];
  }
  return out;
}

}  // namespace

BranchMap::BranchMap(const ProtocolEngine& engine, const GateMap& gates) {
  const std::array<QubitInput, 2> basis{QubitInput{1.0, 0.0}, QubitInput{0.0, 1.0}};
  for (std::size_t c = 0; c < 2; ++c) {
    StateVector psi = gates(engine.encode_backup(engine.prepare(basis[c])), 0);
    psi = apply(engine.atom1_excited_check().projector(1), psi);
    psi = gates(engine.symmetrize(psi), 1);
    psi = apply(engine.atom1_excited_check().projector(1), psi);
    psi = apply(engine.rr_check().projector(1), psi);
    for (int k = 0; k < 8; ++k) {
      const auto o = TeleportOutcome::from_index(k);
      const auto kk = static_cast<std::size_t>(k);
      out_[kk][c] = engine.correct(engine.project_teleport(psi, o), o);
    }
  }
  for (std::size_t k = 0; k < 8; ++k) {
    DenseMatrix w(out_[k][0].dim(), 2);
    w << out_[k][0].amplitudes(), out_[k][1].amplitudes();
    gram_[k] = w.adjoint() * w;
    const auto rows = static_cast<Eigen::Index>(w.rows() / 3);
    DenseMatrix s(rows, 4);
    s << level_slice(out_[k][0], kAtom2, 0), level_slice(out_[k][1], kAtom2, 0),
        level_slice(out_[k][0], kAtom2, 1), level_slice(out_[k][1], kAtom2, 1);
    slice_gram_[k] = s.adjoint() * s;
  }
}

StateVector BranchMap::branch(int k, const QubitInput& q) const {
  const auto& w = out_.at(static_cast<std::size_t>(k));
  return q.c0 * w[0] + q.c1 * w[1];
}

double BranchMap::probability(int k, const QubitInput& q) const {
  const Eigen::Vector2cd c(q.c0, q.c1);
  return (c.adjoint() * gram_.at(static_cast<std::size_t>(k)) * c).real()(0, 0);
}

double BranchMap::fidelity(int k, const QubitInput& q) const {
  const double n2 = probability(k, q);
  if (!(n2 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  // <target|_2 v = conj(c0) (c0 G0 + c1 G1) + conj(c1) (c0 E0 + c1 E1)
  const Eigen::Vector4cd x(std::conj(q.c0) * q.c0, std::conj(q.c0) * q.c1, std::conj(q.c1) * q.c0,
                           std::conj(q.c1) * q.c1);
  return (x.adjoint() * slice_gram_.at(static_cast<std::size_t>(k)) * x).real()(0, 0) / n2;
}

double BranchMap::min_fidelity(const QubitInput& q, double min_probability) const {
  double f = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 8; ++k) {
    if (probability(k, q) > min_probability) f = std::min(f, fidelity(k, q));
  }
  return std::isfinite(f) ? f : std::numeric_limits<double>::quiet_NaN();
}

std::vector<BranchLeaf> enumerate_round(const ProtocolEngine& engine, const QubitInput& q, const ChannelParams& step_ii,
                                        const ChannelParams& step_iv) {
  q.validate();
  const Vector target = q.as_level_vector();
  std::vector<BranchLeaf> leaves;
  auto retry_leaf = [&](std::vector<std::string> path, double prob, const StateVector& psi, const DenseMatrix& u) {
    BranchLeaf leaf{std::move(path), prob, false, 0.0};
    if (prob > 0.0) {
      const auto phi = pure_factor(engine.on_backup(psi, u), kAtomB, 1e-10);
      leaf.fidelity = phi ? std::norm(target.dot(*phi)) : 0.0;
    }
    leaves.push_back(std::move(leaf));
  };

  StateVector psi = engine.transmit(engine.encode_backup(engine.prepare(q)), step_ii, 0);
  psi.normalize();
  const auto ii = engine.atom1_excited_check().branches(psi);
  retry_leaf({"ii:e"}, ii[0].probability, ii[0].collapsed, engine.recovery().step_ii_excited);
  if (ii[1].probability <= 0.0) return leaves;
  const double p_ii = ii[1].probability;

  StateVector s = engine.transmit(engine.symmetrize(ii[1].collapsed), step_iv, 1);
  if (!(s.norm2() > 0.0)) return leaves;  // impossible jump; the run would redraw
  s.normalize();
  const auto iv = engine.atom1_excited_check().branches(s);
  retry_leaf({"ii:not e", "iv:e"}, p_ii * iv[0].probability, iv[0].collapsed, engine.recovery().step_iv_excited);
  if (iv[1].probability <= 0.0) return leaves;
  const double p_iv = p_ii * iv[1].probability;

  const auto rr = engine.rr_check().branches(iv[1].collapsed);
  if (rr[0].probability > 0.0) {
    const auto lv = engine.atom1_levels().branches(rr[0].collapsed);
    const char* names[] = {"g", "e", "r"};
    for (std::size_t k = 0; k < 3; ++k) {
      retry_leaf({"ii:not e", "iv:not e", "iv:RR", std::string("iv:atom1=") + names[k]},
                 p_iv * rr[0].probability * lv[k].probability, lv[k].collapsed, engine.recovery().step_iv_rr[k]);
    }
  } else {
    leaves.push_back({{"ii:not e", "iv:not e", "iv:RR"}, 0.0, false, 0.0});
  }
  if (rr[1].probability <= 0.0) return leaves;
  const double p_tp = p_iv * rr[1].probability;
  const StateVector& tp = rr[1].collapsed;

  const char* bl[] = {"g", "e", "r"};
  const char* s1[] = {"+", "-", "e"};
  const char* sa[] = {"+", "-", "G"};
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t a = 0; a < 3; ++a) {
        Vector y = engine.teleport_b().projector(b).matrix() * tp.amplitudes();
        y = engine.teleport_1().projector(i).matrix() * y;
        y = engine.teleport_a().projector(a).matrix() * y;
        StateVector branch(engine.space(), std::move(y));
        BranchLeaf leaf{{"ii:not e", "iv:not e", "iv:not RR", std::string("v:b=") + bl[b],
                         std::string("v:atom1=") + s1[i], std::string("v:atoma=") + sa[a]},
                        p_tp * branch.norm2(),
                        b < 2 && i < 2 && a < 2,
                        0.0};
        if (leaf.success && branch.norm2() > 0.0) {
          const TeleportOutcome o{static_cast<int>(b), static_cast<int>(i), static_cast<int>(a)};
          leaf.fidelity = subsystem_fidelity(engine.correct(branch, o), kAtom2, target);
        }
        leaves.push_back(std::move(leaf));
      }
    }
  }
  return leaves;
}

ConditionalResult env_protocol(const QubitInput& q, const EnvironmentModel& env) {
  env.validate();
  const auto space = make_atom_env_space(static_cast<int>(env.env_dim()));
  const ProtocolEngine engine(space);
  const std::array<LinearOperator, 2> ops{env_channel_operator(space, env, kAtom1, kAtom2),
                                          env_channel_operator(space, env, kAtom1, kAtomA)};
  std::vector<std::string> levels;
  for (std::size_t k = 0; k < env.env_dim(); ++k) levels.push_back("x" + std::to_string(k));
  const StateVector xi(local_space(kEnv, levels), env.xi);
  const GateMap gates = [&](const StateVector& psi, int gate) { return apply(ops.at(static_cast<std::size_t>(gate)), psi); };
  return conditional_protocol(engine, q, gates, engine.prepare(q.as_level_vector(), xi));
}

// ---- derivation ------------------------------------------------------------

namespace {

/// Amplitudes of `label` at the fixed configuration `base` of all other
/// factors (base has digit 0 for `label`).
Vector slice(const StateVector& psi, const std::string& label, std::size_t base) {
  const auto& sp = *psi.space();
  const std::size_t k = sp.position(label);
  Vector v(3);
  for (std::size_t l = 0; l < 3; ++l) v[static_cast<Eigen::Index>(l)] = psi.amplitudes()[static_cast<Eigen::Index>(base + l * sp.stride(k))];
  return v;
}

/// Solves for the unitary on `label` that maps the branch outputs for
/// inputs |0> and |1> back to the logical levels.
DenseMatrix solve_branch(const StateVector& w0, const StateVector& w1, const std::string& label) {
  for (const auto* w : {&w0, &w1}) {
    if (!pure_factor(*w, label, 1e-10)) throw std::logic_error("derivation: branch does not factorize");
  }
  const auto& sp = *w0.space();
  const std::size_t k = sp.position(label);
  Eigen::Index imax = 0;
  (w0.amplitudes().cwiseAbs() + w1.amplitudes().cwiseAbs()).maxCoeff(&imax);
  const std::size_t idx = static_cast<std::size_t>(imax);
  const std::size_t base = idx - sp.digit(idx, k) * sp.stride(k);
  return canonical_correction(slice(w0, label, base), slice(w1, label, base));
}

}  // namespace

DerivedTables derive_tables() {
  const ProtocolEngine engine(make_atom_space());
  // Generic draws: every error branch has nonzero weight; (iv) correlated.
  const ChannelParams d2{std::polar(0.8, 0.3), std::polar(0.6, -0.4), {0.3, 0.1}, {0.2, -0.3}, false};
  const ChannelParams d4{d2.alpha, d2.beta, {-0.25, 0.2}, {0.1, 0.35}, false};
  const auto& pe = engine.atom1_excited_check();
  const auto& prr = engine.rr_check();

  struct Paths {
    StateVector ii_e, iv_e, tp;
    std::array<StateVector, 3> rr;
  };
  auto run = [&](const QubitInput& q) {
    Paths p;
    StateVector s = engine.transmit(engine.encode_backup(engine.prepare(q)), d2, 0);
    p.ii_e = apply(pe.projector(0), s);
    s = engine.transmit(engine.symmetrize(apply(pe.projector(1), s)), d4, 1);
    p.iv_e = apply(pe.projector(0), s);
    s = apply(pe.projector(1), s);
    const StateVector both_r = apply(prr.projector(0), s);
    for (std::size_t k = 0; k < 3; ++k) p.rr[k] = apply(engine.atom1_levels().projector(k), both_r);
    p.tp = apply(prr.projector(1), s);
    return p;
  };
  const Paths a = run({1.0, 0.0});
  const Paths b = run({0.0, 1.0});

  DerivedTables out;
  out.recovery.step_ii_excited = solve_branch(a.ii_e, b.ii_e, kAtomB);
  out.recovery.step_iv_excited = solve_branch(a.iv_e, b.iv_e, kAtomB);
  for (std::size_t k = 0; k < 3; ++k) {
    // atom1 = e is excluded by the preceding check; its entry is unused.
    out.recovery.step_iv_rr[k] =
        a.rr[k].norm2() > 0.0 ? solve_branch(a.rr[k], b.rr[k], kAtomB) : DenseMatrix(DenseMatrix::Identity(3, 3));
  }
  std::array<DenseMatrix, 8> entries;
  for (int k = 0; k < 8; ++k) {
    const auto o = TeleportOutcome::from_index(k);
    entries[static_cast<std::size_t>(k)] =
        solve_branch(engine.project_teleport(a.tp, o), engine.project_teleport(b.tp, o), kAtom2);
  }
  out.correction = CorrectionTable(std::move(entries));

  const QubitInput generic{cplx{0.6, 0.0}, cplx{0.0, 0.8}};
  StateVector tp = engine.transmit(engine.symmetrize(engine.ideal_after_step_ii(generic)), ChannelParams::ideal(), 1);
  tp.normalize();
  for (int k = 0; k < 8; ++k) {
    out.branch_probability[static_cast<std::size_t>(k)] = engine.project_teleport(tp, TeleportOutcome::from_index(k)).norm2();
  }
  return out;
}

}  // namespace qlink
