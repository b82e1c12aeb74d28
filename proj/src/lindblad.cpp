#include "qlink/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "qlink/layout.hpp"

namespace qlink {

namespace {

DenseMatrix rhs(double t, const DenseMatrix& rho, const Generator& heff, const std::vector<JumpChannel>& jumps) {
  const DenseMatrix h = heff.at(t).dense();
  const cplx i{0.0, 1.0};
  DenseMatrix out = -i * (h * rho - rho * h.adjoint());
  for (const auto& j : jumps) {
    const DenseMatrix m = j.op.at(t).dense();
    out.noalias() += m * rho * m.adjoint();
  }
  return out;
}

}  // namespace

std::vector<DenseMatrix> integrate_lindblad(const DenseMatrix& rho0, const Generator& heff,
                                            const std::vector<JumpChannel>& jumps, double t0,
                                            const std::vector<double>& times, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (rho0.rows() != static_cast<Eigen::Index>(heff.dim()) || rho0.cols() != rho0.rows()) {
    throw DimensionError("rho0 does not match the generator");
  }
  std::vector<DenseMatrix> out;
  out.reserve(times.size());
  DenseMatrix rho = rho0;
  double t = t0;
  for (const double target : times) {
    if (target < t - 1e-12) throw std::invalid_argument("times must be ascending and >= t0");
    const auto steps = static_cast<long>(std::ceil((target - t) / dt - 1e-9));
    const double h = steps > 0 ? (target - t) / static_cast<double>(steps) : 0.0;
    for (long s = 0; s < steps; ++s) {
      const DenseMatrix k1 = rhs(t, rho, heff, jumps);
      const DenseMatrix k2 = rhs(t + 0.5 * h, rho + 0.5 * h * k1, heff, jumps);
      const DenseMatrix k3 = rhs(t + 0.5 * h, rho + 0.5 * h * k2, heff, jumps);
      const DenseMatrix k4 = rhs(t + h, rho + h * k3, heff, jumps);
      rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    t = target;
    out.push_back(rho);
  }
  return out;
}

double trace_distance(const DenseMatrix& a, const DenseMatrix& b) {
  const DenseMatrix d = a - b;
  const DenseMatrix herm = 0.5 * (d + d.adjoint());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(herm, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

void ToyModelParams::validate() const {
  if (!(kappa > 0.0)) throw std::invalid_argument("toy model: kappa must be positive");
  if (photon_cutoff < 1 || photon_cutoff > 3) throw std::invalid_argument("toy model: photon_cutoff must be in [1, 3]");
  for (double v : {g, omega, detuning}) {
    if (!std::isfinite(v)) throw std::invalid_argument("toy model: parameters must be finite");
  }
}

ToyModel make_toy_model(const ToyModelParams& p) {
  p.validate();
  ToyModel m;
  m.space = make_space({Subsystem{"atom", {"g", "e"}}, cavity_subsystem("cav", p.photon_cutoff)});
  const auto sp = transition(m.space, "atom", "e", "g");
  const auto sm = sp.adjoint();
  const auto a = annihilation(m.space, "cav");
  m.heff = Generator(m.space);
  m.heff.add_constant(sp + sm, 0.5 * p.omega);
  m.heff.add_constant(projector(m.space, "atom", "e"), p.detuning);
  m.heff.add_constant(sp * a + a.adjoint() * sm, p.g);
  m.heff.add_constant(number(m.space, "cav"), cplx{0.0, -p.kappa});
  JumpChannel out{"cavity_output", JumpKind::CavityOutput, TimeDependentOperator(m.space)};
  out.op.add_constant(a, std::sqrt(2.0 * p.kappa));
  m.jumps.push_back(std::move(out));
  m.psi0 = StateVector::basis(m.space, {{"atom", "g"}, {"cav", "0"}});
  return m;
}

nlohmann::json OracleComparison::to_json() const {
  return {{"times", times}, {"trace_distance", trace_distance}, {"max_trace_distance", max_trace_distance},
          {"n_traj", n_traj}};
}

OracleComparison compare_with_lindblad(const ToyModel& model, const IntegratorConfig& cfg, std::size_t n_traj,
                                       std::uint64_t base_seed, Execution exec) {
  const auto ens = ensemble_density(model.psi0, model.heff, model.jumps, cfg, n_traj, base_seed, exec);
  OracleComparison out;
  out.n_traj = n_traj;
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < ens.times.size(); ++k) {
    if (ens.times[k] > 0.0) {
      idx.push_back(k);
      out.times.push_back(ens.times[k]);
    }
  }
  const Vector& x = model.psi0.amplitudes();
  const auto exact = integrate_lindblad(x * x.adjoint(), model.heff, model.jumps, 0.0, out.times, cfg.dt);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double d = trace_distance(ens.rho[idx[k]], exact[k]);
    out.trace_distance.push_back(d);
    out.max_trace_distance = std::max(out.max_trace_distance, d);
  }
  return out;
}

}  // namespace qlink
