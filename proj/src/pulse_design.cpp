#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <fmt/format.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "qlink/cqed.hpp"

namespace qlink {

namespace {

// Below this absorbed population the receiver drive is held at its first
// resolvable value; the inversion is 0/0 there.
constexpr double kAbsorbedFloor = 1e-8;
constexpr double kMaxReceiverRabi = 60.0;

struct DesignModel {
  double g;
  double Delta;
  double kappa;
  double E1;  // photon energy in cavity 1 (Stark shifts included)
  double E2;  // photon energy in cavity 2
};

struct Trial {
  // Fine grid with spacing h/2 for the sender drive (RK4 midpoints are nodes).
  std::vector<double> t_half;
  std::vector<cplx> omega1_half;
  std::vector<double> phase1_half;
  // Step grid (spacing h).
  std::vector<double> t;
  std::vector<cplx> omega2;
  double absorbed = 0.0;
  double sender_left = 0.0;  // |c_e(T)|^2
  double max_omega2 = 0.0;
};

std::vector<double> cumtrapz(const std::vector<double>& f, double h) {
  std::vector<double> out(f.size(), 0.0);
  for (std::size_t i = 1; i < f.size(); ++i) out[i] = out[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
  return out;
}

std::vector<double> unwrap(const std::vector<double>& ph) {
  std::vector<double> out(ph.size());
  if (ph.empty()) return out;
  out[0] = ph[0];
  for (std::size_t i = 1; i < ph.size(); ++i) {
    double d = ph[i] - ph[i - 1];
    d -= 2.0 * std::numbers::pi * std::round(d / (2.0 * std::numbers::pi));
    out[i] = out[i - 1] + d;
  }
  return out;
}

/// |c_E(T)|^2 from the joint single-excitation equations
///   i dc_e/dt = |O1|^2/4D c_e + i g O1^*/2D c_1
///   i dc_1/dt = (E1 - i k) c_1 - i g O1/2D c_e
///   i dc_2/dt = (E2 - i k) c_2 - 2 i k c_1 - i g O2/2D c_E
///   i dc_E/dt = |O2|^2/4D c_E + i g O2^*/2D c_2
/// with O2 interpolated in envelope and phase between step nodes.
double forward_absorbed(const DesignModel& m, const Trial& tr) {
  const std::size_t steps = tr.t.size() - 1;
  const double step = tr.t[1] - tr.t[0];
  auto o2_mid = [&](std::size_t n) {
    const cplx a = tr.omega2[n], b = tr.omega2[n + 1];
    const double dphi = std::arg(b * std::conj(a));
    return std::polar(0.5 * (std::abs(a) + std::abs(b)), std::arg(a) + 0.5 * dphi);
  };
  using Y = std::array<cplx, 4>;
  auto rhs = [&](cplx o1, cplx o2, const Y& y) {
    const double k = m.kappa, D = m.Delta, g = m.g;
    return Y{-kI * (std::norm(o1) / (4.0 * D) * y[0] + kI * g * std::conj(o1) / (2.0 * D) * y[1]),
             -kI * (cplx{m.E1, -k} * y[1] - kI * g * o1 / (2.0 * D) * y[0]),
             -kI * (cplx{m.E2, -k} * y[2] - 2.0 * kI * k * y[1] - kI * g * o2 / (2.0 * D) * y[3]),
             -kI * (std::norm(o2) / (4.0 * D) * y[3] + kI * g * std::conj(o2) / (2.0 * D) * y[2])};
  };
  auto axpy = [](const Y& y, const Y& k, double s) {
    Y out;
    for (int j = 0; j < 4; ++j) out[j] = y[j] + s * k[j];
    return out;
  };
  Y y{1.0, 0.0, 0.0, 0.0};
  for (std::size_t n = 0; n < steps; ++n) {
    const cplx o2m = o2_mid(n);
    const auto k1 = rhs(tr.omega1_half[2 * n], tr.omega2[n], y);
    const auto k2 = rhs(tr.omega1_half[2 * n + 1], o2m, axpy(y, k1, 0.5 * step));
    const auto k3 = rhs(tr.omega1_half[2 * n + 1], o2m, axpy(y, k2, 0.5 * step));
    const auto k4 = rhs(tr.omega1_half[2 * n + 2], tr.omega2[n + 1], axpy(y, k3, step));
    for (int j = 0; j < 4; ++j) y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  }
  return std::norm(y[3]);
}

Trial run_trial(const DesignModel& m, double T, double h, double omega0, double nu, double t1) {
  Trial tr;
  const auto steps = static_cast<std::size_t>(std::llround(T / h));
  const std::size_t nh = 2 * steps + 1;
  const double hh = T / static_cast<double>(2 * steps);
  tr.t_half.resize(nh);
  std::vector<double> amp(nh), dphase(nh);
  for (std::size_t i = 0; i < nh; ++i) {
    const double t = hh * static_cast<double>(i);
    tr.t_half[i] = t;
    amp[i] = omega0 / std::cosh(nu * (t - t1));
    dphase[i] = amp[i] * amp[i] / (4.0 * m.Delta) - m.E1;
  }
  tr.phase1_half = cumtrapz(dphase, hh);
  tr.omega1_half.resize(nh);
  for (std::size_t i = 0; i < nh; ++i) tr.omega1_half[i] = std::polar(amp[i], tr.phase1_half[i]);

  // Sender: amplitudes of |e,0> and |r,1> (receiver side ignored; the
  // cascade does not act back).
  auto rhs = [&](std::size_t i, const std::array<cplx, 2>& y) {
    const cplx o = tr.omega1_half[i];
    const cplx dce = -kI * (std::norm(o) / (4.0 * m.Delta) * y[0] + kI * m.g * std::conj(o) / (2.0 * m.Delta) * y[1]);
    const cplx dc1 = -kI * (-kI * m.g * o / (2.0 * m.Delta) * y[0] + cplx{m.E1, -m.kappa} * y[1]);
    return std::array<cplx, 2>{dce, dc1};
  };
  const double step = 2.0 * hh;
  std::vector<cplx> c1(steps + 1), dc1(steps + 1);
  std::array<cplx, 2> y{1.0, 0.0};
  for (std::size_t n = 0; n <= steps; ++n) {
    const auto k1 = rhs(2 * n, y);
    c1[n] = y[1];
    dc1[n] = k1[1];
    if (n == steps) break;
    auto shift = [&](const std::array<cplx, 2>& k, double s) {
      return std::array<cplx, 2>{y[0] + s * k[0], y[1] + s * k[1]};
    };
    const auto k2 = rhs(2 * n + 1, shift(k1, 0.5 * step));
    const auto k3 = rhs(2 * n + 1, shift(k2, 0.5 * step));
    const auto k4 = rhs(2 * n + 2, shift(k3, step));
    for (int j = 0; j < 2; ++j) y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
  }
  tr.sender_left = std::norm(y[0]);

  // Receiver by inversion of the zero-output condition c2 = -c1:
  //   W = (g Omega2 / 2 Delta) c_E = i(-i dc1 + (E2 + i kappa) c1)
  //   d|c_E|^2/dt = 2 Re(W^* c2),  theta' = -|Omega2|^2/(4 Delta) + Im(W^* c2)/|c_E|^2
  std::vector<cplx> W(steps + 1);
  std::vector<double> flux(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) {
    W[n] = kI * (-kI * dc1[n] + cplx{m.E2, m.kappa} * c1[n]);
    flux[n] = 2.0 * std::real(std::conj(W[n]) * (-c1[n]));
  }
  const auto r2 = cumtrapz(flux, step);
  tr.absorbed = r2.back();
  tr.t.resize(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) tr.t[n] = step * static_cast<double>(n);

  std::size_t first = steps + 1;
  for (std::size_t n = 0; n <= steps; ++n) {
    if (r2[n] > kAbsorbedFloor) {
      first = n;
      break;
    }
  }
  tr.omega2.assign(steps + 1, cplx{});
  if (first > steps) return tr;
  std::vector<double> rabi(steps + 1, 0.0), dtheta(steps + 1, 0.0);
  for (std::size_t n = first; n <= steps; ++n) {
    const double rr = std::max(r2[n], kAbsorbedFloor);
    rabi[n] = 2.0 * m.Delta / m.g * std::abs(W[n]) / std::sqrt(rr);
    dtheta[n] = -rabi[n] * rabi[n] / (4.0 * m.Delta) + std::imag(std::conj(W[n]) * (-c1[n])) / rr;
  }
  std::vector<double> theta(steps + 1, 0.0);
  for (std::size_t n = first + 1; n <= steps; ++n) theta[n] = theta[n - 1] + 0.5 * step * (dtheta[n] + dtheta[n - 1]);
  const double theta_end = theta[steps];
  for (std::size_t n = first; n <= steps; ++n) {
    const double rr = std::max(r2[n], kAbsorbedFloor);
    tr.omega2[n] = 2.0 * m.Delta / m.g * W[n] / std::sqrt(rr) * std::exp(-kI * (theta[n] - theta_end));
  }
  for (std::size_t n = 0; n < first; ++n) tr.omega2[n] = tr.omega2[first];
  for (const auto& o : tr.omega2) tr.max_omega2 = std::max(tr.max_omega2, std::abs(o));
  // An abrupt emission start makes the inverse diverge like 1/sqrt(t). The
  // drive is clipped there, and the absorbed population is then recomputed
  // by integrating both nodes forward.
  bool clipped = false;
  for (auto& o : tr.omega2) {
    if (std::abs(o) > kMaxReceiverRabi) {
      o *= kMaxReceiverRabi / std::abs(o);
      clipped = true;
    }
  }
  if (clipped) tr.absorbed = forward_absorbed(m, tr);
  return tr;
}

/// RK4 stays stable for |lambda dt| below ~2.8; the largest generator rate
/// is bounded by the drive-dependent diagonal plus the Raman coupling.
double stable_step(const PhysicalParams& p, const PulseSchedule& pulses, double dt) {
  double peak = 0.0;
  for (int k : {1, 2}) {
    for (double w : pulses.omega(k)) peak = std::max(peak, w);
  }
  const double z = std::abs(p.z());
  const double rate = peak * peak / (4.0 * z) + 2.0 * p.g * p.g / z + p.g * peak / (2.0 * z) + 4.0 * p.kappa +
                      std::abs(p.delta);
  return std::min(dt, 1.0 / rate);
}

struct Objective {
  DesignModel model;
  double T;
  double h;
};

double penalty_objective(const gsl_vector* x, void* params) {
  const auto* obj = static_cast<const Objective*>(params);
  const double omega0 = gsl_vector_get(x, 0);
  const double nu = gsl_vector_get(x, 1);
  const double t1 = gsl_vector_get(x, 2);
  double penalty = 0.0;
  const double nu_max = 0.95 * obj->model.kappa;
  if (omega0 <= 0.0) return 10.0 - omega0;
  if (nu <= 0.0) return 10.0 - nu;
  if (nu >= nu_max) penalty += 1.0 + 10.0 * (nu - nu_max);
  if (t1 < 0.0 || t1 > obj->T) penalty += 1.0 + std::abs(t1 - std::clamp(t1, 0.0, obj->T));
  const Trial tr = run_trial(obj->model, obj->T, obj->h, omega0, nu, std::clamp(t1, 0.0, obj->T));
  const double value = -tr.absorbed + penalty;
  return std::isfinite(value) ? value : 10.0;
}

PulseSchedule resample(const Trial& tr, double T, double output_dt) {
  const auto n_out = static_cast<std::size_t>(std::llround(T / output_dt));
  const std::size_t steps = tr.t.size() - 1;
  if (n_out == 0 || steps % n_out != 0) {
    throw std::invalid_argument("pulse output grid must be a whole multiple of the design grid");
  }
  const std::size_t stride = steps / n_out;
  std::vector<double> ph2_fine(steps + 1);
  for (std::size_t n = 0; n <= steps; ++n) ph2_fine[n] = std::arg(tr.omega2[n]);
  ph2_fine = unwrap(ph2_fine);

  std::vector<double> t, o1, o2, p1, p2;
  for (std::size_t k = 0; k <= n_out; ++k) {
    const std::size_t n = k * stride;
    t.push_back(tr.t[n]);
    o1.push_back(std::abs(tr.omega1_half[2 * n]));
    p1.push_back(tr.phase1_half[2 * n]);
    o2.push_back(std::abs(tr.omega2[n]));
    p2.push_back(ph2_fine[n]);
  }
  return {t, o1, o2, p1, p2};
}

}  // namespace

PulseDesign design_pulses(const PhysicalParams& p, double T, const PulseDesignOptions& options) {
  p.validate();
  if (!(T >= 10.0 / p.kappa)) throw std::invalid_argument(fmt::format("gate duration {} is below 10/kappa", T));
  if (!(p.g > 0.0)) throw PulseDesignError("g = 0: atoms do not couple to the cavities, no pulse can transfer");
  if (!(options.design_dt > 0.0) || !(options.output_dt >= options.design_dt)) {
    throw std::invalid_argument("pulse design grids must satisfy 0 < design_dt <= output_dt");
  }

  const double stark = p.g * p.g / p.Delta;
  const Objective obj{{p.g, p.Delta, p.kappa, stark * (1.0 + options.sender_spectators_coupled) - p.delta,
                       stark * (1.0 + options.receiver_spectators_coupled) - p.delta},
                      T,
                      options.design_dt};

  gsl_multimin_function fn{&penalty_objective, 3, const_cast<Objective*>(&obj)};
  gsl_vector* x = gsl_vector_alloc(3);
  gsl_vector* steps = gsl_vector_alloc(3);
  gsl_vector_set(x, 0, options.omega0_start);
  gsl_vector_set(x, 1, std::min(options.nu_start, 0.5 * p.kappa));
  gsl_vector_set(x, 2, 0.5 * T);
  gsl_vector_set(steps, 0, 0.5);
  gsl_vector_set(steps, 1, 0.1);
  gsl_vector_set(steps, 2, 1.0);
  gsl_multimin_fminimizer* solver = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 3);
  gsl_multimin_fminimizer_set(solver, &fn, x, steps);
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (gsl_multimin_fminimizer_iterate(solver) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(solver), 1e-5) == GSL_SUCCESS) break;
  }
  PulseDesign out;
  out.omega0 = gsl_vector_get(solver->x, 0);
  out.nu = gsl_vector_get(solver->x, 1);
  out.t1 = std::clamp(gsl_vector_get(solver->x, 2), 0.0, T);
  out.iterations = iter;
  gsl_multimin_fminimizer_free(solver);
  gsl_vector_free(steps);
  gsl_vector_free(x);

  const Trial best = run_trial(obj.model, T, options.design_dt, out.omega0, out.nu, out.t1);
  out.predicted_transfer = best.absorbed;
  out.pulses = resample(best, T, options.output_dt);

  if (options.verify) {
    PhysicalParams ideal = p;
    ideal.kappa_loss_1 = ideal.kappa_loss_2 = ideal.Gamma = 0.0;
    IntegratorConfig cfg;
    cfg.dt = stable_step(ideal, out.pulses, options.design_dt);
    out.achieved_transfer = gate_transfer(ideal, out.pulses, options.verify_cutoff, cfg);
    if (out.achieved_transfer < options.min_transfer) {
      throw PulseDesignError(fmt::format("designed pulses reach transfer {:.6f} < {} (Omega0={:.4g}, nu={:.4g}, "
                                         "t1={:.4g}); check g, Delta and the gate duration",
                                         out.achieved_transfer, options.min_transfer, out.omega0, out.nu, out.t1));
    }
  } else {
    out.achieved_transfer = out.predicted_transfer;
  }
  return out;
}

}  // namespace qlink
