#pragma once

// Density-matrix reference for the trajectory engine:
//   drho/dt = -i(H_eff rho - rho H_eff^dag) + sum_k J_k rho J_k^dag
// integrated with fixed-step RK4 on dense matrices (small spaces only).

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlink/linalg.hpp"
#include "qlink/mcwf.hpp"

namespace qlink {

/// rho at each of `times` (ascending, first >= t0) starting from rho0 at t0.
std::vector<DenseMatrix> integrate_lindblad(const DenseMatrix& rho0, const Generator& heff,
                                            const std::vector<JumpChannel>& jumps, double t0,
                                            const std::vector<double>& times, double dt);

/// (1/2) Tr|a - b| for Hermitian a, b.
double trace_distance(const DenseMatrix& a, const DenseMatrix& b);

/// Resonantly driven two-level atom in a decaying cavity:
///   H = (omega/2)(s+ + s-) + detuning |e><e| + g (s+ a + a^dag s-),
///   H_eff = H - i kappa a^dag a,  J = sqrt(2 kappa) a.
struct ToyModelParams {
  double g = 1.0;
  double kappa = 1.0;
  double omega = 1.5;
  double detuning = 0.0;
  int photon_cutoff = 3;  // 2 x 4 = 8 states

  void validate() const;
};

struct ToyModel {
  SpacePtr space;
  Generator heff;
  std::vector<JumpChannel> jumps;
  StateVector psi0;  // |g, 0>
};

ToyModel make_toy_model(const ToyModelParams& p);

struct OracleComparison {
  std::vector<double> times;
  std::vector<double> trace_distance;
  double max_trace_distance = 0.0;
  std::size_t n_traj = 0;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Trajectory ensemble vs direct integration at the ensemble's sample
/// times (t = 0 excluded).
OracleComparison compare_with_lindblad(const ToyModel& model, const IntegratorConfig& cfg, std::size_t n_traj,
                                       std::uint64_t base_seed, Execution exec = Execution::Parallel);

}  // namespace qlink
