#pragma once

// Cascaded two-cavity model with adiabatically eliminated Lambda atoms.
//
// Every atom couples its cavity through the level r (R on node 2): a laser
// of Rabi frequency Omega drives e -> (excited) and the cavity takes the
// excited level back to r, so |e,n> <-> |r,n+1> is the Raman pair. With
// z = Delta + i Gamma/2 and L = (Omega/2)|x><e| + i g a|x><r| the
// eliminated atom contributes L^dag L / z:
//
//   |Omega|^2/(4z) |e><e| + g^2/z a^dag a |r><r|
//     + (i g Omega^*/(2z)) |e><r| a - (i g Omega/(2z)) a^dag |r><e|
//
// Spectator atoms (no laser) keep the cavity Stark term only. The cavity
// part is -delta(n1+n2) - i kappa(n1 + n2 + 2 a2^dag a1)
// - i(kappa'_1 n1 + kappa'_2 n2).

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qlink/channel.hpp"
#include "qlink/linalg.hpp"
#include "qlink/mcwf.hpp"

namespace qlink {

struct PhysicalParams {
  double g = 5.0;
  double kappa = 1.0;
  double kappa_loss_1 = 0.0;
  double kappa_loss_2 = 0.0;
  double Gamma = 0.0;
  double Delta = 10.0;
  double delta = 0.0;

  /// Throws std::invalid_argument.
  void validate() const;
  /// Non-fatal advisories (e.g. Delta < 5 Gamma).
  [[nodiscard]] std::vector<std::string> warnings() const;
  [[nodiscard]] cplx z() const { return {Delta, 0.5 * Gamma}; }
};

struct DerivedCouplings {
  cplx stark_shift;   // Omega^2 / (4 z)
  cplx eff_rabi;      // g Omega / (2 z)
  cplx cavity_stark;  // g^2 / z
};

DerivedCouplings derived_couplings(const PhysicalParams& p, cplx omega);

class PulseOutOfRange : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Sampled laser drives Omega_k(t) = omega_k(t) exp(i phase_k(t)), k = 1, 2,
/// linearly interpolated in envelope and (unwrapped) phase.
class PulseSchedule {
 public:
  PulseSchedule() = default;
  PulseSchedule(std::vector<double> t, std::vector<double> omega1, std::vector<double> omega2,
                std::vector<double> phase1 = {}, std::vector<double> phase2 = {});

  [[nodiscard]] const std::vector<double>& t_grid() const { return t_; }
  [[nodiscard]] const std::vector<double>& omega(int k) const { return k == 1 ? omega1_ : omega2_; }
  [[nodiscard]] const std::vector<double>& phase(int k) const { return k == 1 ? phase1_ : phase2_; }
  [[nodiscard]] std::size_t size() const { return t_.size(); }
  [[nodiscard]] bool empty() const { return t_.empty(); }
  [[nodiscard]] double t_begin() const { return t_.front(); }
  [[nodiscard]] double t_end() const { return t_.back(); }
  [[nodiscard]] double duration() const { return t_.back() - t_.front(); }

  /// Complex drive of laser k at t; throws PulseOutOfRange outside the grid.
  [[nodiscard]] cplx drive(int k, double t) const;
  [[nodiscard]] double envelope(int k, double t) const { return std::abs(drive(k, t)); }

  /// Both envelopes multiplied by `factor` (systematic Rabi-frequency error).
  [[nodiscard]] PulseSchedule scaled(double factor) const;

  /// Header t,omega1,omega2,phase1,phase2.
  void write_csv(std::ostream& os) const;
  /// Accepts 3 columns (t,omega1,omega2; zero phases) or 5 columns.
  static PulseSchedule read_csv(std::istream& is);
  void save(const std::string& path) const;
  static PulseSchedule load(const std::string& path);

 private:
  void validate() const;

  std::vector<double> t_, omega1_, omega2_, phase1_, phase2_;
};

/// Which atoms take part in a transmission gate: sender (node 1, driven by
/// laser 1) emits into cav1, receiver (node 2, laser 2) absorbs from cav2.
struct GateLayout {
  std::string sender = "atom1";
  std::string receiver = "atom2";

  /// Throws std::invalid_argument unless sender/receiver are atoms of the
  /// right nodes and the space holds both plus both cavities.
  void validate(const HilbertSpace& space) const;
};

/// Time-dependent H_eff on `space`. Atoms of node 1 present in `space` sit
/// in cav1, node-2 atoms in cav2.
Generator build_heff(const PhysicalParams& p, const PulseSchedule& pulses, const GateLayout& layout,
                     const SpacePtr& space);
/// H_eff evaluated at t; throws PulseOutOfRange outside the pulse grid.
LinearOperator heff_at(const PhysicalParams& p, const PulseSchedule& pulses, const GateLayout& layout,
                       const SpacePtr& space, double t);

/// Cascaded output sqrt(2 kappa)(a1 + a2), losses sqrt(2 kappa'_c) a_c and
/// one spontaneous-emission channel per atom, sqrt(Gamma)/|z| |r><r| L.
/// Channels with zero rate are omitted.
std::vector<JumpChannel> build_jump_channels(const PhysicalParams& p, const PulseSchedule& pulses,
                                             const GateLayout& layout, const SpacePtr& space);

/// Largest entry of sum_k J_k^dag J_k - i(H - H^dag) at time t.
double trace_identity_residual(const Generator& heff, const std::vector<JumpChannel>& jumps, double t);

class GateLeakage : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kGateLeakageTolerance = 1e-3;

/// Population outside the cavity vacuum.
double cavity_population(const StateVector& psi);

/// One transmission gate as a quantum trajectory over the pulse window.
/// cfg.t_final is ignored (the pulse window sets the horizon).
TrajectoryResult run_transmission_gate(const StateVector& psi, const GateLayout& layout, const PhysicalParams& p,
                                       const PulseSchedule& pulses, const IntegratorConfig& cfg,
                                       std::uint64_t seed, const Observer& observer = {});

/// The same gate conditioned on no jump; the returned state is unnormalized
/// and its squared norm is the no-jump probability.
StateVector run_gate_no_jump(const StateVector& psi, const GateLayout& layout, const PhysicalParams& p,
                             const PulseSchedule& pulses, const IntegratorConfig& cfg, const Observer& observer = {});

struct ExtractedChannel {
  ChannelParams params;
  double residual = 0.0;  // norm of everything outside the four expected components
};

/// Reads (alpha, beta, gamma1, gamma2) from gate outputs for normalized
/// sector inputs in_g = |g>_s|R>_r x rest and in_e = |e>_s|R>_r x rest.
/// Throws std::runtime_error if the residual exceeds 1e-2.
ExtractedChannel extract_channel_params(const StateVector& in_g, const StateVector& out_g, const StateVector& in_e,
                                        const StateVector& out_e, const GateLayout& layout);

/// Runs both reference inputs through the no-jump gate and extracts the
/// channel parameters.
ExtractedChannel gate_channel_params(const PhysicalParams& p, const PulseSchedule& pulses,
                                     const GateLayout& layout, const SpacePtr& space, const IntegratorConfig& cfg);

// ---- pulse design --------------------------------------------------------

struct PulseDesignOptions {
  double min_transfer = 0.98;
  double output_dt = 0.005;  // grid of the returned schedule
  double design_dt = 1e-3;   // grid of the internal sender simulation
  int max_iterations = 300;
  /// Atoms sharing the sender's / receiver's cavity that sit in the
  /// cavity-coupled level during the gate (each adds g^2/Delta to the
  /// photon energy). The protocol always has the receiver's partner in R.
  int sender_spectators_coupled = 0;
  int receiver_spectators_coupled = 1;
  double omega0_start = 3.0;
  double nu_start = 0.5;
  bool verify = true;
  int verify_cutoff = 1;
};

struct PulseDesign {
  PulseSchedule pulses;
  double omega0 = 0.0;
  double nu = 0.0;
  double t1 = 0.0;
  double predicted_transfer = 0.0;  // from the design model
  double achieved_transfer = 0.0;   // full model, cavity cutoff options.verify_cutoff
  int iterations = 0;
};

class PulseDesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sender: Omega_1 = Omega0 sech(nu (t - t1)) with a Stark-compensating
/// phase. Receiver: Omega_2 solved so that the cascaded output vanishes
/// (exact impedance matching for the sender's emitted wavepacket).
/// (Omega0, nu, t1) are tuned by Nelder-Mead on the absorbed population.
PulseDesign design_pulses(const PhysicalParams& p, double gate_duration, const PulseDesignOptions& options = {});

/// |e>_1|R>_2 -> |r>_1|E>_2 population of the ideal-case no-jump gate
/// (kappa' = Gamma = 0 taken from p as given) with atoma in R.
double gate_transfer(const PhysicalParams& p, const PulseSchedule& pulses, int photon_cutoff,
                     const IntegratorConfig& cfg);

}  // namespace qlink
