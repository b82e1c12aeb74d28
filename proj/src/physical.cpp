#include "qlink/physical.hpp"

#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "qlink/layout.hpp"

namespace qlink {

void PhysicalSetup::validate() const {
  params.validate();
  integrator.validate();
  if (pulses.empty()) throw std::invalid_argument("physical setup needs a pulse schedule");
  if (photon_cutoff < 1) throw std::invalid_argument("photon_cutoff must be >= 1");
}

GateLayout protocol_gate_layout(int gate) {
  if (gate != 0 && gate != 1) throw std::invalid_argument("gate must be 0 or 1");
  return {kAtom1, gate == 0 ? kAtom2 : kAtomA};
}

double flush_cavities(StateVector& psi) {
  const double total = psi.norm2();
  const auto& sp = *psi.space();
  const std::size_t k1 = sp.position(kCav1);
  const std::size_t k2 = sp.position(kCav2);
  auto& x = psi.amplitudes();
  double dropped = 0.0;
  for (std::size_t i = 0; i < sp.total_dim(); ++i) {
    if (sp.digit(i, k1) != 0 || sp.digit(i, k2) != 0) {
      dropped += std::norm(x[static_cast<Eigen::Index>(i)]);
      x[static_cast<Eigen::Index>(i)] = 0.0;
    }
  }
  return total > 0.0 ? dropped / total : 0.0;
}

void write_overlap_csv(std::ostream& os, const std::vector<OverlapSample>& series) {
  os << "t,overlap_after_step_ii_target,overlap_final_target,backup_overlap\n";
  for (const auto& s : series) {
    os << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", s.t, s.after_step_ii, s.final_target, s.backup);
  }
}

namespace {

Vector swapped_backup(const QubitInput& q) {
  Vector v(3);
  v << q.c1, q.c0, 0.0;
  return v;
}

struct SeriesRecorder {
  std::vector<OverlapSample>* out;
  const StateVector* ideal_ii;
  const StateVector* ideal_tp;
  Vector backup;
  double offset;
  double t_begin;

  void operator()(double t, const StateVector& psi) const {
    if (!out) return;
    out->push_back({offset + (t - t_begin), overlap(*ideal_ii, psi), overlap(*ideal_tp, psi),
                    subsystem_fidelity(psi, kAtomB, backup)});
  }
};

}  // namespace

PhysicalChannel::PhysicalChannel(const PhysicalSetup& setup, const QubitInput& q, std::vector<OverlapSample>* series)
    : setup_(setup), series_(series), q_(q), backup_target_(swapped_backup(q)) {
  setup_.validate();
}

void PhysicalChannel::begin_round() { ++round_; }

StateVector PhysicalChannel::transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                                      nlohmann::json& log) {
  if (ideal_ii_.dim() == 0) {
    ideal_ii_ = engine.ideal_after_step_ii(q_);
    ideal_tp_ = engine.ideal_before_teleport(q_);
  }
  const double T = setup_.pulses.duration();
  const SeriesRecorder rec{series_, &ideal_ii_, &ideal_tp_, backup_target_,
                           (2.0 * (round_ - 1) + gate) * T, setup_.pulses.t_begin()};
  const std::uint64_t seed = rng.next_u64();
  auto res = run_transmission_gate(psi, protocol_gate_layout(gate), setup_.params, setup_.pulses, setup_.integrator,
                                   seed, std::cref(rec));
  const double dropped = flush_cavities(res.state);
  if (!(res.state.norm2() > 0.0)) throw GateLeakage("gate output has no vacuum-cavity component");
  res.state.normalize();

  log = res.record.to_json();
  log.erase("norm_history");
  log["gate"] = gate == 0 ? "ii" : "iv";
  log["residual_cavity_population"] = dropped;
  return res.state;
}

PhysicalRun run_protocol_physical(const QubitInput& q, const PhysicalSetup& setup, Rng& rng, int max_rounds,
                                  bool record_series) {
  q.validate();
  setup.validate();
  const ProtocolEngine engine(make_node_space(setup.photon_cutoff));
  PhysicalRun run;
  PhysicalChannel channel(setup, q, record_series ? &run.series : nullptr);
  run.outcome = run_protocol(engine, q, channel, rng, max_rounds);
  for (const auto& d : run.outcome.channel_draws) {
    if (d.value("round", 0) != 1) break;
    if (!d.at("events").empty()) {
      run.first_jump_gate = d.at("gate") == "ii" ? 0 : 1;
      break;
    }
  }
  return run;
}

ConditionalResult conditional_physical(const QubitInput& q, const PhysicalSetup& setup,
                                       std::vector<OverlapSample>* series) {
  q.validate();
  setup.validate();
  const ProtocolEngine engine(make_node_space(setup.photon_cutoff));
  const StateVector ideal_ii = engine.ideal_after_step_ii(q);
  const StateVector ideal_tp = engine.ideal_before_teleport(q);
  const double T = setup.pulses.duration();
  const GateMap gates = [&](const StateVector& psi, int gate) {
    const SeriesRecorder rec{series, &ideal_ii, &ideal_tp, swapped_backup(q), gate * T, setup.pulses.t_begin()};
    StateVector out =
        run_gate_no_jump(psi, protocol_gate_layout(gate), setup.params, setup.pulses, setup.integrator, std::cref(rec));
    flush_cavities(out);
    return out;
  };
  return conditional_protocol(engine, q, gates);
}

}  // namespace qlink
