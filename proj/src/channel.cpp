#include "qlink/channel.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "qlink/layout.hpp"

namespace qlink {

namespace {

void check_atom_pair(const HilbertSpace& space, const std::string& atom_i, const std::string& atom_j) {
  if (node_of(atom_i) != 1) throw std::invalid_argument(fmt::format("channel source '{}' is not a node-1 atom", atom_i));
  if (node_of(atom_j) != 2) throw std::invalid_argument(fmt::format("channel target '{}' is not a node-2 atom", atom_j));
  (void)space.position(atom_i);
  (void)space.position(atom_j);
}

/// |a_i b_j><c_i d_j|
LinearOperator pair_transition(const SpacePtr& space, const std::string& atom_i, const std::string& to_i,
                               const std::string& from_i, const std::string& atom_j, const std::string& to_j,
                               const std::string& from_j) {
  return transition(space, atom_i, to_i, from_i) * transition(space, atom_j, to_j, from_j);
}

cplx complex_normal(Rng& rng, double scale) {
  const double re = rng.normal();
  const double im = rng.normal();
  return scale / std::numbers::sqrt2 * cplx{re, im};
}

}  // namespace

void ChannelParams::validate(double tol) const {
  if (std::norm(alpha) > 1.0 + tol) throw std::invalid_argument(fmt::format("|alpha|^2 = {} exceeds 1", std::norm(alpha)));
  const double excited = std::norm(beta) + std::norm(gamma1) + std::norm(gamma2);
  if (excited > 1.0 + tol) {
    throw std::invalid_argument(fmt::format("|beta|^2 + |gamma1|^2 + |gamma2|^2 = {} exceeds 1", excited));
  }
  if (jumped && (std::abs(alpha) > tol || std::abs(beta) > tol || std::abs(gamma2) > tol)) {
    throw std::invalid_argument("a jump draw must have alpha = beta = gamma2 = 0");
  }
}

nlohmann::json ChannelParams::to_json() const {
  auto c = [](cplx z) { return nlohmann::json::array({z.real(), z.imag()}); };
  return {{"jumped", jumped}, {"alpha", c(alpha)}, {"beta", c(beta)}, {"gamma1", c(gamma1)}, {"gamma2", c(gamma2)}};
}

double sector_leakage(const StateVector& psi, const std::string& atom_i, const std::string& atom_j) {
  const auto& space = psi.space();
  check_atom_pair(*space, atom_i, atom_j);
  const auto p = (projector(space, atom_i, level_name(atom_i, 0)) + projector(space, atom_i, level_name(atom_i, 1))) *
                 projector(space, atom_j, level_name(atom_j, 2));
  const Vector inside = p.matrix() * psi.amplitudes();
  return std::max(0.0, psi.norm2() - inside.squaredNorm());
}

LinearOperator channel_operator(const SpacePtr& space, const ChannelParams& params, const std::string& atom_i,
                                const std::string& atom_j) {
  check_atom_pair(*space, atom_i, atom_j);
  const auto& g = level_name(atom_i, 0);
  const auto& e = level_name(atom_i, 1);
  const auto& r = level_name(atom_i, 2);
  const auto& E = level_name(atom_j, 1);
  const auto& R = level_name(atom_j, 2);
  auto op = params.alpha * pair_transition(space, atom_i, g, g, atom_j, R, R);
  op += params.beta * pair_transition(space, atom_i, r, e, atom_j, E, R);
  op += params.gamma1 * pair_transition(space, atom_i, r, e, atom_j, R, R);
  op += params.gamma2 * pair_transition(space, atom_i, e, e, atom_j, R, R);
  return op;
}

namespace {

void require_sector(const StateVector& psi, const std::string& atom_i, const std::string& atom_j) {
  const double leak = sector_leakage(psi, atom_i, atom_j);
  if (leak > 1e-20 * std::max(1.0, psi.norm2())) {
    throw SectorError(fmt::format("channel {}->{}: {:.3g} of the norm^2 lies outside {{g,e}} x {{R}}", atom_i, atom_j,
                                  leak / psi.norm2()));
  }
}

}  // namespace

StateVector apply_channel(const StateVector& psi, const ChannelParams& params, const std::string& atom_i,
                          const std::string& atom_j) {
  require_sector(psi, atom_i, atom_j);
  return apply(channel_operator(psi.space(), params, atom_i, atom_j), psi);
}

// ---- sampling ------------------------------------------------------------

void SamplerSpec::validate() const {
  if (kind == Kind::PointMass) {
    point.validate(1e-10);
    return;
  }
  if (!(abs_min >= 0.0 && abs_min <= abs_max && abs_max <= 1.0)) {
    throw std::invalid_argument(fmt::format("sampler magnitudes need 0 <= abs_min <= abs_max <= 1, got [{}, {}]",
                                            abs_min, abs_max));
  }
  if (!(gamma_scale >= 0.0)) throw std::invalid_argument("sampler gamma_scale must be >= 0");
}

void NoiseConfig::validate() const {
  if (!(p_nojump >= 0.0 && p_nojump <= 1.0)) {
    throw std::invalid_argument(fmt::format("p_nojump must lie in [0, 1], got {}", p_nojump));
  }
  sampler.validate();
}

ChannelParams sample_nojump(const SamplerSpec& spec, Rng& rng) {
  // Always consume six draws so streams stay aligned across sampler kinds.
  const double ma = rng.uniform(spec.abs_min, spec.abs_max);
  const double pa = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mb = rng.uniform(spec.abs_min, spec.abs_max);
  const double pb = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const cplx g1 = complex_normal(rng, spec.gamma_scale);
  const cplx g2 = complex_normal(rng, spec.gamma_scale);
  if (spec.kind == SamplerSpec::Kind::PointMass) return spec.point;

  ChannelParams out;
  out.alpha = std::polar(ma, pa);
  out.beta = std::polar(mb, pb);
  out.gamma1 = g1;
  out.gamma2 = g2;
  const double excited = std::norm(out.beta) + std::norm(out.gamma1) + std::norm(out.gamma2);
  if (excited > 1.0) {
    const double s = 1.0 / std::sqrt(excited);
    out.beta *= s;
    out.gamma1 *= s;
    out.gamma2 *= s;
  }
  return out;
}

ChannelParams sample_channel(const NoiseConfig& cfg, Rng& rng, const std::optional<ChannelParams>& first) {
  const bool nojump = rng.uniform() < cfg.p_nojump;
  ChannelParams draw = sample_nojump(cfg.sampler, rng);
  if (!nojump) return ChannelParams::jump();
  if (cfg.correlated && first && !first->jumped) {
    draw.alpha = first->alpha;
    draw.beta = first->beta;
    const double excited = std::norm(draw.beta) + std::norm(draw.gamma1) + std::norm(draw.gamma2);
    if (excited > 1.0) {
      // Keep beta; shrink the fresh gammas into the remaining budget.
      const double room = std::max(0.0, 1.0 - std::norm(draw.beta));
      const double gg = std::norm(draw.gamma1) + std::norm(draw.gamma2);
      const double s = std::sqrt(room / gg);
      draw.gamma1 *= s;
      draw.gamma2 *= s;
    }
  }
  return draw;
}

// ---- explicit environment ------------------------------------------------

void EnvironmentModel::validate(double tol) const {
  const auto d = xi.size();
  if (d < 1) throw DimensionError("environment needs at least one level");
  for (const auto* m : {&T, &S, &G1, &G2}) {
    if (m->rows() != d || m->cols() != d) throw DimensionError(fmt::format("environment operators must be {}x{}", d, d));
  }
  if (std::abs(xi.norm() - 1.0) > tol) throw std::invalid_argument("environment state xi must be normalized");
  auto max_eig = [](const DenseMatrix& m) {
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m);
    return es.eigenvalues().maxCoeff();
  };
  const double t_norm = max_eig(T.adjoint() * T);
  const double e_norm = max_eig(S.adjoint() * S + G1.adjoint() * G1 + G2.adjoint() * G2);
  if (t_norm > 1.0 + tol || e_norm > 1.0 + tol) {
    throw std::invalid_argument(
        fmt::format("environment map is not a contraction (T: {:.6g}, excited branch: {:.6g})", t_norm, e_norm));
  }
}

EnvironmentModel EnvironmentModel::scalar(const ChannelParams& params) {
  EnvironmentModel env;
  env.xi = Vector::Ones(1);
  env.T = DenseMatrix::Constant(1, 1, params.alpha);
  env.S = DenseMatrix::Constant(1, 1, params.beta);
  env.G1 = DenseMatrix::Constant(1, 1, params.gamma1);
  env.G2 = DenseMatrix::Constant(1, 1, params.gamma2);
  return env;
}

CommutingCheck check_commuting(const EnvironmentModel& env, double tol) {
  const Vector d = (env.S * env.T - env.T * env.S) * env.xi;
  CommutingCheck out;
  out.residual = d.norm();
  out.pass = out.residual <= tol;
  return out;
}

LinearOperator env_channel_operator(const SpacePtr& space, const EnvironmentModel& env, const std::string& atom_i,
                                    const std::string& atom_j) {
  check_atom_pair(*space, atom_i, atom_j);
  env.validate();
  const auto& g = level_name(atom_i, 0);
  const auto& e = level_name(atom_i, 1);
  const auto& r = level_name(atom_i, 2);
  const auto& E = level_name(atom_j, 1);
  const auto& R = level_name(atom_j, 2);
  auto term = [&](const std::string& to_i, const std::string& from_i, const std::string& to_j, const DenseMatrix& m) {
    return pair_transition(space, atom_i, to_i, from_i, atom_j, to_j, R) * local_operator(space, kEnv, m);
  };
  auto op = term(g, g, R, env.T);
  op += term(r, e, E, env.S);
  op += term(r, e, R, env.G1);
  op += term(e, e, R, env.G2);
  return op;
}

StateVector apply_env_channel(const StateVector& psi, const EnvironmentModel& env, const std::string& atom_i,
                              const std::string& atom_j) {
  if (!psi.space()->contains(kEnv)) throw DimensionError("apply_env_channel: space has no environment factor");
  if (psi.space()->subsystem(psi.space()->position(kEnv)).dim() != env.env_dim()) {
    throw DimensionError("apply_env_channel: environment dimension mismatch");
  }
  require_sector(psi, atom_i, atom_j);
  return apply(env_channel_operator(psi.space(), env, atom_i, atom_j), psi);
}

}  // namespace qlink
