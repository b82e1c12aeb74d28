#pragma once

// The protocol with steps (ii) and (iv) realized by the cavity-QED gate.
// Local operations and measurements stay exact.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "qlink/cqed.hpp"
#include "qlink/protocol.hpp"

namespace qlink {

struct PhysicalSetup {
  PhysicalParams params;
  PulseSchedule pulses;
  IntegratorConfig integrator;  // t_final is ignored
  int photon_cutoff = 1;

  void validate() const;
};

/// Gate 0: atom1 -> atom2, gate 1: atom1 -> atoma.
GateLayout protocol_gate_layout(int gate);

/// Projects both cavities onto vacuum; returns the discarded population
/// (relative to |psi|^2). The state is left unnormalized.
double flush_cavities(StateVector& psi);

/// One row of the overlap time series. Round r occupies
/// [2(r-1)T, 2rT]; step (ii) is its first half, step (iv) the second.
struct OverlapSample {
  double t = 0.0;
  double after_step_ii = 0.0;   // |<ideal after (ii)|psi>|^2
  double final_target = 0.0;    // |<ideal entering (v)|psi>|^2
  double backup = 0.0;          // <phi|rho_b|phi>, phi = c0|e>_b + c1|g>_b
};

void write_overlap_csv(std::ostream& os, const std::vector<OverlapSample>& series);

class PhysicalChannel : public Transmitter {
 public:
  PhysicalChannel(const PhysicalSetup& setup, const QubitInput& q, std::vector<OverlapSample>* series = nullptr);

  void begin_round() override;
  StateVector transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                       nlohmann::json& log) override;

 private:
  const PhysicalSetup& setup_;
  std::vector<OverlapSample>* series_;
  QubitInput q_;
  StateVector ideal_ii_, ideal_tp_;  // filled on first use, once the space is known
  Vector backup_target_;
  int round_ = 0;
};

struct PhysicalRun {
  ProtocolOutcome outcome;
  std::vector<OverlapSample> series;
  /// Gate of the first jump in round 1 (-1 if none).
  int first_jump_gate = -1;
};

/// Full trajectory run of the protocol on the four-atom, two-cavity space.
PhysicalRun run_protocol_physical(const QubitInput& q, const PhysicalSetup& setup, Rng& rng, int max_rounds,
                                  bool record_series = true);

/// No-jump, no-detected-error analysis with the physical gates; `series`
/// receives the (normalized) overlap curves of the no-jump evolution.
ConditionalResult conditional_physical(const QubitInput& q, const PhysicalSetup& setup,
                                       std::vector<OverlapSample>* series = nullptr);

}  // namespace qlink
