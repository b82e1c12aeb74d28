#include "qlink/mcwf.hpp"

#include <cmath>

#include <fmt/format.h>

#include "qlink/rng.hpp"

namespace qlink {

// ---- TimeDependentOperator ----------------------------------------------

TimeDependentOperator::TimeDependentOperator(SpacePtr space) : space_(std::move(space)) {
  const auto n = static_cast<Eigen::Index>(space_->total_dim());
  constant_ = SparseMatrix(n, n);
}

void TimeDependentOperator::add_constant(const LinearOperator& op, cplx c) {
  if (!same_space(space_, op.space())) throw DimensionError("time-dependent operator: space mismatch");
  if (c == cplx{}) return;
  constant_ += c * op.matrix();
  constant_.makeCompressed();
}

void TimeDependentOperator::add_term(const LinearOperator& op, Coefficient c) {
  if (!same_space(space_, op.space())) throw DimensionError("time-dependent operator: space mismatch");
  if (op.matrix().nonZeros() == 0) return;
  terms_.push_back({op.matrix(), std::move(c)});
}

void TimeDependentOperator::apply(double t, const Vector& x, Vector& y) const {
  y.noalias() = constant_ * x;
  for (const auto& term : terms_) {
    const cplx c = term.coefficient(t);
    if (c != cplx{}) y.noalias() += c * (term.matrix * x);
  }
}

LinearOperator TimeDependentOperator::at(double t) const {
  SparseMatrix m = constant_;
  for (const auto& term : terms_) m += term.coefficient(t) * term.matrix;
  return LinearOperator(space_, std::move(m));
}

std::string to_string(JumpKind kind) {
  switch (kind) {
    case JumpKind::CavityOutput: return "cavity_output";
    case JumpKind::CavityLoss1: return "cavity_loss_1";
    case JumpKind::CavityLoss2: return "cavity_loss_2";
    case JumpKind::SpontaneousEmission: return "spont_em";
  }
  return "unknown";
}

void IntegratorConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("IntegratorConfig: dt must be positive");
  if (!(norm_bisection_tol > 0.0)) throw std::invalid_argument("IntegratorConfig: bisection tolerance must be positive");
  if (sample_stride < 1) throw std::invalid_argument("IntegratorConfig: sample_stride must be >= 1");
}

nlohmann::json TrajectoryRecord::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["rng"] = rng_algorithm;
  auto ev = nlohmann::json::array();
  for (const auto& e : events) ev.push_back({{"t", e.t}, {"channel", e.channel}, {"norm2", e.norm2}});
  j["events"] = std::move(ev);
  auto nh = nlohmann::json::array();
  for (const auto& [t, n2] : norm_history) nh.push_back({t, n2});
  j["norm_history"] = std::move(nh);
  return j;
}

// ---- integration kernels -------------------------------------------------

namespace {

constexpr double kPassiveSlack = 1e-6;

/// Scratch buffers for one RK4 step; one instance per trajectory.
struct Rk4Work {
  Vector k1, k2, k3, k4, tmp;
  explicit Rk4Work(Eigen::Index n) : k1(n), k2(n), k3(n), k4(n), tmp(n) {}
};

// dpsi/dt = -i H psi
void rhs(const Generator& gen, double t, const Vector& x, Vector& out) {
  gen.apply(t, x, out);
  out *= -kI;
}

void rk4_step(const Generator& gen, double t, double h, const Vector& x, Vector& out, Rk4Work& w) {
  rhs(gen, t, x, w.k1);
  w.tmp = x + (0.5 * h) * w.k1;
  rhs(gen, t + 0.5 * h, w.tmp, w.k2);
  w.tmp = x + (0.5 * h) * w.k2;
  rhs(gen, t + 0.5 * h, w.tmp, w.k3);
  w.tmp = x + h * w.k3;
  rhs(gen, t + h, w.tmp, w.k4);
  out = x + (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
}

void check_passive_step(const IntegratorConfig& cfg, double before, double after, double t) {
  if (cfg.check_passive && after > before * (1.0 + kPassiveSlack) + 1e-300) {
    throw StepInstability(fmt::format("norm^2 grew from {:.17g} to {:.17g} in the step at t={:.6g}; "
                                      "reduce dt or check the generator",
                                      before, after, t));
  }
}

struct Grid {
  double t0;
  double h;
  long long steps;
  [[nodiscard]] double time(long long n) const { return t0 + static_cast<double>(n) * h; }
};

Grid make_grid(double t0, double t1, double dt) {
  if (t1 < t0) throw std::invalid_argument("integration end precedes start");
  const double span = t1 - t0;
  const auto steps = static_cast<long long>(std::ceil(span / dt - 1e-9));
  if (steps <= 0) return {t0, 0.0, 0};
  return {t0, span / static_cast<double>(steps), steps};
}

bool is_sample_step(long long n, long long steps, int stride) { return n % stride == 0 || n == steps; }

void notify(const Observer& observer, double t, const SpacePtr& space, const Vector& x) {
  if (!observer) return;
  const double nrm = x.norm();
  if (!(nrm > 0.0)) return;
  observer(t, StateVector(space, x / nrm));
}

}  // namespace

std::vector<double> sample_times(double t0, const IntegratorConfig& cfg) {
  cfg.validate();
  const Grid grid = make_grid(t0, cfg.t_final, cfg.dt);
  std::vector<double> out{t0};
  for (long long n = 1; n <= grid.steps; ++n) {
    if (is_sample_step(n, grid.steps, cfg.sample_stride)) out.push_back(grid.time(n));
  }
  return out;
}

StateVector evolve_no_jump(const StateVector& psi, const Generator& gen, double t0, double t1,
                           const IntegratorConfig& cfg, const Observer& observer) {
  cfg.validate();
  if (!same_space(psi.space(), gen.space())) throw DimensionError("evolve_no_jump: space mismatch");
  const Grid grid = make_grid(t0, t1, cfg.dt);
  Rk4Work work(static_cast<Eigen::Index>(psi.dim()));
  Vector x = psi.amplitudes();
  Vector next(x.size());
  notify(observer, t0, psi.space(), x);
  double n2 = x.squaredNorm();
  for (long long n = 0; n < grid.steps; ++n) {
    rk4_step(gen, grid.time(n), grid.h, x, next, work);
    const double n2_next = next.squaredNorm();
    check_passive_step(cfg, n2, n2_next, grid.time(n));
    x.swap(next);
    n2 = n2_next;
    if (is_sample_step(n + 1, grid.steps, cfg.sample_stride)) notify(observer, grid.time(n + 1), psi.space(), x);
  }
  return StateVector(psi.space(), std::move(x));
}

TrajectoryResult sample_trajectory(const StateVector& psi0, const Generator& gen,
                                   const std::vector<JumpChannel>& jumps, const IntegratorConfig& cfg,
                                   std::uint64_t seed, const Observer& observer, double t0) {
  cfg.validate();
  if (!same_space(psi0.space(), gen.space())) throw DimensionError("sample_trajectory: space mismatch");
  for (const auto& j : jumps) {
    if (!same_space(psi0.space(), j.op.space())) {
      throw DimensionError(fmt::format("jump channel '{}' lives on another space", j.id));
    }
  }
  if (std::abs(psi0.norm2() - 1.0) > 1e-10) {
    throw std::invalid_argument("sample_trajectory: initial state must be normalized");
  }

  Rng rng(seed);
  TrajectoryResult result;
  auto& record = result.record;
  record.seed = seed;
  record.rng_algorithm = std::string(Rng::kAlgorithm);

  const Grid grid = make_grid(t0, cfg.t_final, cfg.dt);
  const auto dim = static_cast<Eigen::Index>(psi0.dim());
  Rk4Work work(dim);
  Vector x = psi0.amplitudes();
  Vector next(dim), trial(dim), jumped(dim);
  double n2 = x.squaredNorm();
  double r = rng.uniform_open();
  double t = t0;

  record.norm_history.emplace_back(t0, n2);
  notify(observer, t0, psi0.space(), x);

  long long n = 0;
  while (n < grid.steps) {
    const double t_next = grid.time(n + 1);
    const double h = t_next - t;
    rk4_step(gen, t, h, x, next, work);
    const double n2_next = next.squaredNorm();
    check_passive_step(cfg, n2, n2_next, t);

    if (n2_next > r) {
      x.swap(next);
      n2 = n2_next;
      t = t_next;
      ++n;
      if (is_sample_step(n, grid.steps, cfg.sample_stride)) {
        record.norm_history.emplace_back(t, n2);
        notify(observer, t, psi0.space(), x);
      }
      continue;
    }

    // The no-jump probability crossed r inside (t, t_next]: bisect on the
    // sub-step length.
    double lo = 0.0;
    double hi = h;
    double tau_h = h;
    double n2_tau = n2_next;
    trial = next;
    for (int it = 0; it < 200; ++it) {
      if (std::abs(n2_tau - r) <= cfg.norm_bisection_tol * r) break;
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      rk4_step(gen, t, mid, x, trial, work);
      n2_tau = trial.squaredNorm();
      tau_h = mid;
      if (n2_tau > r) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double tau = t + tau_h;

    // Channel selection with weights |J_k psi|^2.
    std::vector<double> weights(jumps.size());
    double total = 0.0;
    for (std::size_t k = 0; k < jumps.size(); ++k) {
      jumps[k].op.apply(tau, trial, jumped);
      weights[k] = jumped.squaredNorm();
      total += weights[k];
    }
    if (!(total > 0.0)) {
      throw InconsistentJumps(fmt::format("norm decayed to the jump threshold at t={:.6g} but every "
                                          "jump rate is zero",
                                          tau));
    }
    const double u = rng.uniform() * total;
    std::size_t chosen = jumps.size() - 1;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < jumps.size(); ++k) {
      cumulative += weights[k];
      if (weights[k] > 0.0 && u < cumulative) {
        chosen = k;
        break;
      }
    }
    while (weights[chosen] == 0.0) --chosen;

    record.events.push_back({tau, jumps[chosen].id, n2_tau});
    jumps[chosen].op.apply(tau, trial, jumped);
    x = jumped / std::sqrt(weights[chosen]);
    n2 = 1.0;
    t = tau;
    r = rng.uniform_open();
  }

  const double final_norm = std::sqrt(n2);
  if (!(final_norm > 0.0)) throw std::domain_error("trajectory ended with zero norm");
  result.state = StateVector(psi0.space(), x / final_norm, false);
  return result;
}

// ---- ensembles -----------------------------------------------------------

namespace {

EnsembleSeries reduce_series(std::vector<double> times, const std::vector<std::vector<double>>& rows) {
  EnsembleSeries out;
  out.times = std::move(times);
  out.n_traj = rows.size();
  const std::size_t m = out.times.size();
  out.mean.assign(m, 0.0);
  out.standard_error.assign(m, 0.0);
  const auto n = static_cast<double>(rows.size());
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < m; ++i) out.mean[i] += row[i];
  }
  for (auto& v : out.mean) v /= n;
  if (rows.size() > 1) {
    std::vector<double> ss(m, 0.0);
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < m; ++i) ss[i] += (row[i] - out.mean[i]) * (row[i] - out.mean[i]);
    }
    for (std::size_t i = 0; i < m; ++i) out.standard_error[i] = std::sqrt(ss[i] / (n - 1.0) / n);
  }
  return out;
}

EnsembleSeries run_ensemble(const LinearOperator& observable, const StateVector& psi0, const Generator& gen,
                            const std::vector<JumpChannel>& jumps, const IntegratorConfig& cfg,
                            std::size_t n_traj, std::uint64_t base_seed, Execution exec) {
  if (n_traj < 1) throw std::invalid_argument("ensemble needs at least one trajectory");
  if (!same_space(observable.space(), psi0.space())) throw DimensionError("observable space mismatch");
  auto times = sample_times(0.0, cfg);
  std::vector<std::vector<double>> rows(n_traj);
  for_index(exec, n_traj, [&](std::size_t i) {
    auto& row = rows[i];
    row.reserve(times.size());
    Observer obs = [&](double, const StateVector& psi) { row.push_back(expectation(observable, psi).real()); };
    sample_trajectory(psi0, gen, jumps, cfg, base_seed + i, obs);
    if (row.size() != times.size()) throw std::logic_error("trajectory sample count mismatch");
  });
  return reduce_series(std::move(times), rows);
}

}  // namespace

EnsembleSeries ensemble_expectation(const LinearOperator& observable, const StateVector& psi0,
                                    const Generator& gen, const std::vector<JumpChannel>& jumps,
                                    const IntegratorConfig& cfg, std::size_t n_traj, std::uint64_t base_seed,
                                    Execution exec) {
  return run_ensemble(observable, psi0, gen, jumps, cfg, n_traj, base_seed, exec);
}

EnsembleSeries ensemble_expectation_serial(const LinearOperator& observable, const StateVector& psi0,
                                           const Generator& gen, const std::vector<JumpChannel>& jumps,
                                           const IntegratorConfig& cfg, std::size_t n_traj,
                                           std::uint64_t base_seed) {
  return run_ensemble(observable, psi0, gen, jumps, cfg, n_traj, base_seed, Execution::Serial);
}

EnsembleDensity ensemble_density(const StateVector& psi0, const Generator& gen, const std::vector<JumpChannel>& jumps,
                                 const IntegratorConfig& cfg, std::size_t n_traj, std::uint64_t base_seed,
                                 Execution exec) {
  if (n_traj < 1) throw std::invalid_argument("ensemble needs at least one trajectory");
  EnsembleDensity out;
  out.times = sample_times(0.0, cfg);
  out.n_traj = n_traj;
  const std::size_t m = out.times.size();
  std::vector<std::vector<Vector>> states(n_traj);
  for_index(exec, n_traj, [&](std::size_t i) {
    auto& row = states[i];
    row.reserve(m);
    Observer obs = [&](double, const StateVector& psi) { row.push_back(psi.amplitudes()); };
    sample_trajectory(psi0, gen, jumps, cfg, base_seed + i, obs);
    if (row.size() != m) throw std::logic_error("trajectory sample count mismatch");
  });
  const auto d = static_cast<Eigen::Index>(psi0.dim());
  out.rho.assign(m, DenseMatrix::Zero(d, d));
  for (const auto& row : states) {
    for (std::size_t k = 0; k < m; ++k) out.rho[k].noalias() += row[k] * row[k].adjoint();
  }
  for (auto& r : out.rho) r /= static_cast<double>(n_traj);
  return out;
}

}  // namespace qlink
