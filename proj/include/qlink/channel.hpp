#pragma once

// Abstract noisy transmission from atom i (node 1 style, levels g/e/r) to
// atom j (levels G/E/R) with j initially in R:
//
//   |g>_i|R>_j -> alpha |g>_i|R>_j
//   |e>_i|R>_j -> beta |r>_i|E>_j + gamma1 |r>_i|R>_j + gamma2 |e>_i|R>_j
//
// A jump sets alpha = beta = gamma2 = 0 and gamma1 = 1. The environment
// variant replaces the scalars by operators T, S, G1, G2 on an extra factor.

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qlink/linalg.hpp"
#include "qlink/rng.hpp"

namespace qlink {

struct ChannelParams {
  cplx alpha{1.0, 0.0};
  cplx beta{1.0, 0.0};
  cplx gamma1{};
  cplx gamma2{};
  bool jumped = false;

  static ChannelParams ideal() { return {}; }
  static ChannelParams jump() { return {0.0, 0.0, 1.0, 0.0, true}; }

  /// Throws std::invalid_argument when the contraction or jump invariants
  /// fail by more than tol.
  void validate(double tol = 1e-12) const;
  [[nodiscard]] nlohmann::json to_json() const;
};

class SectorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Norm^2 of the part of psi outside {g,e}_i x {R}_j.
double sector_leakage(const StateVector& psi, const std::string& atom_i, const std::string& atom_j);

/// The linear map above as an operator on the full space (zero outside the
/// sector, identity on every other factor).
LinearOperator channel_operator(const SpacePtr& space, const ChannelParams& params, const std::string& atom_i,
                                const std::string& atom_j);

/// Throws SectorError if more than 1e-20 (relative) of |psi|^2 lies outside
/// the sector. The result is unnormalized.
StateVector apply_channel(const StateVector& psi, const ChannelParams& params, const std::string& atom_i,
                          const std::string& atom_j);

// ---- sampling ------------------------------------------------------------

struct SamplerSpec {
  enum class Kind { Uniform, PointMass };
  Kind kind = Kind::Uniform;
  double abs_min = 0.3;  // |alpha|, |beta| uniform in [abs_min, abs_max]
  double abs_max = 1.0;
  double gamma_scale = 0.1;  // gamma_k complex normal, E|gamma_k|^2 = scale^2
  ChannelParams point;       // Kind::PointMass

  void validate() const;
};

struct NoiseConfig {
  double p_nojump = 1.0;
  SamplerSpec sampler;
  bool correlated = true;  // second draw of a round reuses alpha, beta

  void validate() const;
};

/// One channel draw. With probability p_nojump a no-jump draw from the
/// sampler, else ChannelParams::jump(). When `first` is a no-jump draw of the
/// same round and cfg.correlated, alpha and beta are copied from it. The
/// number of RNG calls does not depend on the outcome.
ChannelParams sample_channel(const NoiseConfig& cfg, Rng& rng, const std::optional<ChannelParams>& first = {});

/// A no-jump draw from the sampler alone.
ChannelParams sample_nojump(const SamplerSpec& spec, Rng& rng);

// ---- explicit environment ------------------------------------------------

struct EnvironmentModel {
  Vector xi;  // initial environment state, normalized
  DenseMatrix T, S, G1, G2;

  [[nodiscard]] std::size_t env_dim() const { return static_cast<std::size_t>(xi.size()); }
  /// Shapes, normalization of xi, and the contraction property
  /// T^dag T <= 1, S^dag S + G1^dag G1 + G2^dag G2 <= 1.
  void validate(double tol = 1e-10) const;

  /// One-dimensional environment reproducing the scalar channel.
  static EnvironmentModel scalar(const ChannelParams& params);
};

struct CommutingCheck {
  bool pass = false;
  double residual = 0.0;  // |(ST - TS) xi|
};

CommutingCheck check_commuting(const EnvironmentModel& env, double tol = 1e-10);

/// Channel operator on a space holding atom_i, atom_j and the "env" factor.
LinearOperator env_channel_operator(const SpacePtr& space, const EnvironmentModel& env, const std::string& atom_i,
                                    const std::string& atom_j);

StateVector apply_env_channel(const StateVector& psi, const EnvironmentModel& env, const std::string& atom_i,
                              const std::string& atom_j);

}  // namespace qlink
