#pragma once

// Monte-Carlo wave-function (quantum trajectory) engine.
//
// Between jumps the unnormalized state follows dpsi/dt = -i H_eff(t) psi
// with fixed-step RK4. Its squared norm is the no-jump probability since the
// last jump. A jump happens when |psi|^2 falls to a uniform draw r; the
// crossing is located by bisection inside the offending step, a channel k is
// chosen with weight |J_k psi|^2 and the state is renormalized.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlink/linalg.hpp"
#include "qlink/parallel.hpp"

namespace qlink {

/// Sum_k c_k(t) M_k over fixed sparse matrices M_k.
class TimeDependentOperator {
 public:
  using Coefficient = std::function<cplx(double)>;

  TimeDependentOperator() = default;
  explicit TimeDependentOperator(SpacePtr space);

  void add_constant(const LinearOperator& op, cplx c = 1.0);
  void add_term(const LinearOperator& op, Coefficient c);

  [[nodiscard]] const SpacePtr& space() const { return space_; }
  [[nodiscard]] std::size_t dim() const { return space_ ? space_->total_dim() : 0; }
  [[nodiscard]] bool empty() const { return constant_.nonZeros() == 0 && terms_.empty(); }

  /// y = O(t) x
  void apply(double t, const Vector& x, Vector& y) const;
  [[nodiscard]] LinearOperator at(double t) const;

 private:
  struct Term {
    SparseMatrix matrix;
    Coefficient coefficient;
  };
  SpacePtr space_;
  SparseMatrix constant_;
  std::vector<Term> terms_;
};

/// H_eff(t); generally non-Hermitian with a negative semidefinite
/// anti-Hermitian part.
using Generator = TimeDependentOperator;

enum class JumpKind { CavityOutput, CavityLoss1, CavityLoss2, SpontaneousEmission };

std::string to_string(JumpKind kind);

struct JumpChannel {
  std::string id;
  JumpKind kind = JumpKind::CavityOutput;
  TimeDependentOperator op;
};

struct IntegratorConfig {
  double dt = 1e-3;       // units of 1/kappa
  double t_final = 1.0;   // horizon
  double norm_bisection_tol = 1e-9;
  int sample_stride = 100;
  /// Throw StepInstability when |psi|^2 grows by more than 1e-6 (relative)
  /// within one step.
  bool check_passive = true;

  void validate() const;
};

struct JumpEvent {
  double t = 0.0;
  std::string channel;
  double norm2 = 0.0;  // |psi(t)|^2 right before the jump
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::string rng_algorithm;
  std::vector<JumpEvent> events;
  std::vector<std::pair<double, double>> norm_history;  // (t, |psi|^2)

  [[nodiscard]] nlohmann::json to_json() const;
};

class StepInstability : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InconsistentJumps : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Called at every sampled time with the normalized state.
using Observer = std::function<void(double t, const StateVector& psi)>;

/// Unnormalized no-jump evolution from t0 to t1.
StateVector evolve_no_jump(const StateVector& psi, const Generator& gen, double t0, double t1,
                           const IntegratorConfig& cfg, const Observer& observer = {});

struct TrajectoryResult {
  StateVector state;  // normalized
  TrajectoryRecord record;
};

/// One quantum trajectory over [t0, cfg.t_final]; deterministic in `seed`.
TrajectoryResult sample_trajectory(const StateVector& psi0, const Generator& gen,
                                   const std::vector<JumpChannel>& jumps, const IntegratorConfig& cfg,
                                   std::uint64_t seed, const Observer& observer = {}, double t0 = 0.0);

/// Times at which sample_trajectory / evolve_no_jump call the observer.
std::vector<double> sample_times(double t0, const IntegratorConfig& cfg);

struct EnsembleSeries {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> standard_error;
  std::size_t n_traj = 0;
};

/// <O> averaged over n_traj trajectories seeded base_seed + index. The
/// reduction runs in index order, so the result does not depend on `exec`.
EnsembleSeries ensemble_expectation(const LinearOperator& observable, const StateVector& psi0,
                                    const Generator& gen, const std::vector<JumpChannel>& jumps,
                                    const IntegratorConfig& cfg, std::size_t n_traj,
                                    std::uint64_t base_seed, Execution exec = Execution::Parallel);

/// Serial reference for ensemble_expectation.
EnsembleSeries ensemble_expectation_serial(const LinearOperator& observable, const StateVector& psi0,
                                           const Generator& gen, const std::vector<JumpChannel>& jumps,
                                           const IntegratorConfig& cfg, std::size_t n_traj,
                                           std::uint64_t base_seed);

struct EnsembleDensity {
  std::vector<double> times;
  std::vector<DenseMatrix> rho;  // trajectory average of |psi><psi| at each time
  std::size_t n_traj = 0;
};

/// Density matrices estimated from n_traj trajectories seeded
/// base_seed + index; reduced in index order.
EnsembleDensity ensemble_density(const StateVector& psi0, const Generator& gen, const std::vector<JumpChannel>& jumps,
                                 const IntegratorConfig& cfg, std::size_t n_traj, std::uint64_t base_seed,
                                 Execution exec = Execution::Parallel);

}  // namespace qlink
