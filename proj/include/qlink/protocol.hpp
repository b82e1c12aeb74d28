#pragma once

// Repeat-until-success transmission of c0|g>_1 + c1|e>_1 into
// c0|G>_2 + c1|E>_2.
//
//   (i)   entangle atom1 with backup b:  (c0|g>_b + c1|e>_b)|e>_1 + (c0|e>_b + c1|g>_b)|g>_1
//   (ii)  transmit atom1 -> atom2, retry if atom1 is still in e
//   (iii) relabel atom1: r -> g, g -> e, e -> r
//   (iv)  transmit atom1 -> atoma, retry if atom1 in e or (atom2, atoma) in RR
//   (v)   measure b in {g,e}, atom1 in (g +- r), atoma in (E +- R), correct atom2
//
// Every retry leaves the qubit on b (up to a derived one-bit operation), from
// where the next round restarts.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlink/channel.hpp"
#include "qlink/linalg.hpp"
#include "qlink/mcwf.hpp"
#include "qlink/parallel.hpp"
#include "qlink/rng.hpp"

namespace qlink {

struct QubitInput {
  cplx c0{1.0, 0.0};
  cplx c1{};

  /// Throws std::invalid_argument unless |c0|^2 + |c1|^2 = 1 within tol.
  void validate(double tol = 1e-10) const;
  /// Three-level vector (c0, c1, 0) in the (ground, excited, aux) order.
  [[nodiscard]] Vector as_level_vector() const;
  static QubitInput random(Rng& rng);
};

struct TranscriptEntry {
  int round = 0;
  std::string step;
  std::string measurement;
  std::string outcome;
  double probability = 0.0;
};

struct Transcript {
  std::vector<TranscriptEntry> entries;
  int rounds_used = 0;
};

enum class ProtocolStatus { Success, RetryAfterDetectedError };
enum class RetryReason { None, StepIiExcited, StepIvExcited, StepIvBothR };

std::string to_string(ProtocolStatus s);
std::string to_string(RetryReason r);

/// Step-(v) outcome triple: b in {g, e}; atom1 and atoma in {+, -}.
struct TeleportOutcome {
  int b = 0;       // 0 = g, 1 = e
  int sign_1 = 0;  // 0 = +, 1 = -
  int sign_a = 0;  // 0 = +, 1 = -

  [[nodiscard]] int index() const { return 4 * b + 2 * sign_1 + sign_a; }
  static TeleportOutcome from_index(int k) { return {k / 4, (k / 2) % 2, k % 2}; }
  [[nodiscard]] std::string label() const;
};

/// Single-atom unitaries on atom 2's levels (G, E, R), one per outcome triple.
class CorrectionTable {
 public:
  CorrectionTable() = default;
  explicit CorrectionTable(std::array<DenseMatrix, 8> entries);

  /// The table derived once from the outcome enumeration and frozen here:
  ///   b = g:  E -> G,  R -> s E,  G -> R
  ///   b = e:  R -> G,  E -> s E,  G -> R
  /// with s = (+1 for atom-1 "+", -1 for "-") * (same for atoma).
  static CorrectionTable frozen();

  [[nodiscard]] const DenseMatrix& at(const TeleportOutcome& o) const { return entries_.at(static_cast<std::size_t>(o.index())); }
  [[nodiscard]] const std::array<DenseMatrix, 8>& entries() const { return entries_; }

 private:
  std::array<DenseMatrix, 8> entries_;
};

/// One-bit operations on b (levels g, e, r) restoring the qubit after each
/// detected error.
struct RecoveryTable {
  DenseMatrix step_ii_excited;  // atom1 found in e after step (ii)
  DenseMatrix step_iv_excited;  // atom1 found in e after step (iv)
  std::array<DenseMatrix, 3> step_iv_rr;  // (atom2, atoma) in RR, by atom-1 outcome g, e, r

  static RecoveryTable frozen();
};

/// Canonical unitary U with U v0 = lambda |0>, U v1 = lambda |1> and the
/// unused level mapped to |2>; v0, v1 must each occupy a single level with
/// equal magnitude. The phase convention is U|level(v0)> = |0>.
DenseMatrix canonical_correction(const Vector& v0, const Vector& v1, double tol = 1e-9);

struct DerivedTables {
  CorrectionTable correction;
  RecoveryTable recovery;
  std::array<double, 8> branch_probability{};  // for the generic input used
};

/// Enumerates the measurement tree with exact amplitudes and solves for the
/// correction and recovery unitaries.
DerivedTables derive_tables();

/// True if a and b agree up to one global phase, within tol.
bool equal_up_to_phase(const DenseMatrix& a, const DenseMatrix& b, double tol = 1e-12);

/// Precomputed local operators for the protocol on any space containing
/// the four atoms (plus cavities or an environment factor).
class ProtocolEngine {
 public:
  explicit ProtocolEngine(SpacePtr space, CorrectionTable table = CorrectionTable::frozen(),
                          RecoveryTable recovery = RecoveryTable::frozen());

  [[nodiscard]] const SpacePtr& space() const { return space_; }
  [[nodiscard]] const CorrectionTable& table() const { return table_; }
  [[nodiscard]] const RecoveryTable& recovery() const { return recovery_; }

  /// atom1 carries `atom1_state` (3 levels), b in g, atom2 and atoma in R;
  /// the remaining factors take `rest` if given (else their first level).
  [[nodiscard]] StateVector prepare(const Vector& atom1_state, const std::optional<StateVector>& rest = {}) const;
  [[nodiscard]] StateVector prepare(const QubitInput& q) const { return prepare(q.as_level_vector()); }

  [[nodiscard]] StateVector encode_backup(const StateVector& psi) const;
  [[nodiscard]] StateVector symmetrize(const StateVector& psi) const;

  /// Abstract channel for gate 0 (atom1 -> atom2) or 1 (atom1 -> atoma).
  [[nodiscard]] StateVector transmit(const StateVector& psi, const ChannelParams& params, int gate) const;
  [[nodiscard]] LinearOperator channel(const ChannelParams& params, int gate) const;

  [[nodiscard]] const ProjectiveMeasurement& atom1_excited_check() const { return atom1_e_; }
  [[nodiscard]] const ProjectiveMeasurement& rr_check() const { return rr_; }
  [[nodiscard]] const ProjectiveMeasurement& atom1_levels() const { return atom1_levels_; }
  [[nodiscard]] const ProjectiveMeasurement& teleport_b() const { return tel_b_; }
  [[nodiscard]] const ProjectiveMeasurement& teleport_1() const { return tel_1_; }
  [[nodiscard]] const ProjectiveMeasurement& teleport_a() const { return tel_a_; }

  /// Applies the correction for `o` to atom 2.
  [[nodiscard]] StateVector correct(const StateVector& psi, const TeleportOutcome& o) const;
  /// Projects onto the outcome triple (unnormalized).
  [[nodiscard]] StateVector project_teleport(const StateVector& psi, const TeleportOutcome& o) const;

  /// Applies a one-bit operation to b.
  [[nodiscard]] StateVector on_backup(const StateVector& psi, const DenseMatrix& u) const;

  /// Ideal state after the encoded state passes step (ii) (alpha = beta = 1).
  [[nodiscard]] StateVector ideal_after_step_ii(const QubitInput& q) const;
  /// Ideal state entering step (v):
  ///   |r>_1|R>_2|E>_a (c0|e> + c1|g>)_b + |g>_1|E>_2|R>_a (c0|g> + c1|e>)_b
  [[nodiscard]] StateVector ideal_before_teleport(const QubitInput& q) const;

 private:
  SpacePtr space_;
  CorrectionTable table_;
  RecoveryTable recovery_;
  LinearOperator encode_, symmetrize_;
  std::array<std::array<LinearOperator, 4>, 2> channel_parts_;  // alpha, beta, gamma1, gamma2 per gate
  ProjectiveMeasurement atom1_e_, rr_, atom1_levels_, tel_b_, tel_1_, tel_a_;
  std::array<LinearOperator, 8> corrections_;
};

// ---- transmissions -------------------------------------------------------

/// Supplies the physical or abstract channel for steps (ii) and (iv).
class Transmitter {
 public:
  virtual ~Transmitter() = default;
  virtual void begin_round() {}
  /// Returns the post-gate state (normalized or not) and appends a record
  /// describing the draw to `log`.
  virtual StateVector transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                               nlohmann::json& log) = 0;
};

/// Channel parameters sampled from a NoiseConfig. A jump draw that would
/// annihilate the state (no excitation to lose) is redrawn as a no-jump draw.
class SampledChannel : public Transmitter {
 public:
  explicit SampledChannel(NoiseConfig cfg);
  void begin_round() override { first_.reset(); }
  StateVector transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                       nlohmann::json& log) override;

 private:
  NoiseConfig cfg_;
  std::optional<ChannelParams> first_;
};

/// Fixed draws for steps (ii) and (iv).
class FixedChannel : public Transmitter {
 public:
  FixedChannel(ChannelParams step_ii, ChannelParams step_iv) : draws_{step_ii, step_iv} {}
  StateVector transmit(const ProtocolEngine& engine, const StateVector& psi, int gate, Rng& rng,
                       nlohmann::json& log) override;

 private:
  std::array<ChannelParams, 2> draws_;
};

// ---- runs ----------------------------------------------------------------

struct ProtocolOutcome {
  ProtocolStatus status = ProtocolStatus::RetryAfterDetectedError;
  RetryReason reason = RetryReason::None;
  double fidelity = 0.0;  // atom 2 vs input (Success) or b vs input (Retry)
  int rounds = 0;
  Transcript transcript;
  nlohmann::json channel_draws = nlohmann::json::array();
  std::vector<double> backup_fidelities;  // one per detected error, after recovery
  std::optional<TeleportOutcome> teleport;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Thrown when a retry branch leaves b entangled with the other atoms.
class RecoveryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs rounds until success or max_rounds. Measurement draws come from rng.
ProtocolOutcome run_protocol(const ProtocolEngine& engine, const QubitInput& q, Transmitter& channel, Rng& rng,
                             int max_rounds);

/// Abstract-channel protocol on the 81-dimensional atom space.
ProtocolOutcome run_protocol(const QubitInput& q, const NoiseConfig& cfg, Rng& rng, int max_rounds);

struct ProtocolBatch {
  std::vector<ProtocolOutcome> outcomes;
  double success_rate = 0.0;
  double mean_rounds = 0.0;  // over successful runs
  double min_fidelity = 0.0;
  double mean_fidelity = 0.0;
};

/// n_runs independent abstract runs seeded base_seed + index.
ProtocolBatch run_protocol_batch(const QubitInput& q, const NoiseConfig& cfg, std::size_t n_runs,
                                 std::uint64_t base_seed, int max_rounds, Execution exec = Execution::Parallel);

// ---- deterministic branch analysis ---------------------------------------

/// Deterministic transmission: state after gate `gate`, unnormalized.
using GateMap = std::function<StateVector(const StateVector& psi, int gate)>;

struct ConditionalResult {
  double p_no_detected_error = 0.0;       // product of the kept-branch probabilities
  std::array<double, 8> branch_probability{};  // conditional on no detected error
  std::array<double, 8> fidelity{};
  double min_fidelity = 0.0;
  double step_ii_overlap = 0.0;        // normalized post-gate state vs ideal_after_step_ii
  double pre_teleport_overlap = 0.0;   // normalized state entering (v) vs ideal_before_teleport
  StateVector after_step_ii;           // unnormalized, before the e check
  StateVector before_teleport;         // normalized
};

/// Post-selects the no-detected-error path through (ii)-(iv) and evaluates
/// all eight teleportation branches. `initial` defaults to prepare(q).
ConditionalResult conditional_protocol(const ProtocolEngine& engine, const QubitInput& q, const GateMap& gates,
                                       const std::optional<StateVector>& initial = {});

/// The no-detected-error path is linear in the input qubit for a fixed
/// linear gate pair, so it is tabulated once for c = (1,0) and (0,1) and
/// then evaluated for any qubit without re-running the gates.
class BranchMap {
 public:
  BranchMap(const ProtocolEngine& engine, const GateMap& gates);

  /// Corrected, unnormalized branch k for input q.
  [[nodiscard]] StateVector branch(int k, const QubitInput& q) const;
  /// Absolute probability of reaching (v) and observing branch k.
  [[nodiscard]] double probability(int k, const QubitInput& q) const;
  /// Fidelity of atom 2 with c0|G> + c1|E> in branch k; NaN if unreachable.
  [[nodiscard]] double fidelity(int k, const QubitInput& q) const;
  /// Minimum over reachable branches.
  [[nodiscard]] double min_fidelity(const QubitInput& q, double min_probability = 1e-14) const;

 private:
  std::array<std::array<StateVector, 2>, 8> out_;
  // Gram matrices per branch: of the two outputs, and of their <G|_2, <E|_2
  // contractions ordered (G0, G1, E0, E1).
  std::array<DenseMatrix, 8> gram_, slice_gram_;
};

struct BranchLeaf {
  std::vector<std::string> path;
  double probability = 0.0;  // given that each channel acted (its norm loss is renormalized)
  bool success = false;
  double fidelity = 0.0;  // atom 2 (success) or recovered b (retry)
};

/// Full measurement tree of one round for fixed channel draws.
std::vector<BranchLeaf> enumerate_round(const ProtocolEngine& engine, const QubitInput& q, const ChannelParams& step_ii,
                                        const ChannelParams& step_iv);

/// Protocol fidelity through an explicit environment (both transmissions
/// act on the same environment, prepared in env.xi).
ConditionalResult env_protocol(const QubitInput& q, const EnvironmentModel& env);

}  // namespace qlink
