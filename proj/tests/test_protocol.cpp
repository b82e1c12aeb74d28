#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracle/oracle.hpp"
#include "qlink/layout.hpp"
#include "qlink/protocol.hpp"
#include "support.hpp"

using namespace qlink;

namespace {

const ProtocolEngine& engine() {
  static const ProtocolEngine e(make_atom_space());
  return e;
}

/// alpha, beta uniform in magnitude [lo, 1] with random phase; gammas
/// complex normal, rescaled so the excited branch is a contraction.
ChannelParams random_draw(Rng& rng, double lo = 0.05, double gscale = 0.3) {
  ChannelParams p;
  p.alpha = std::polar(rng.uniform(lo, 1.0), rng.uniform(0.0, 2.0 * std::numbers::pi));
  p.beta = std::polar(rng.uniform(lo, 1.0), rng.uniform(0.0, 2.0 * std::numbers::pi));
  p.gamma1 = gscale * cplx(rng.normal(), rng.normal());
  p.gamma2 = gscale * cplx(rng.normal(), rng.normal());
  const double ex = std::norm(p.beta) + std::norm(p.gamma1) + std::norm(p.gamma2);
  if (ex > 1.0) {
    p.gamma1 *= std::sqrt(std::max(0.0, 1.0 - std::norm(p.beta)) / (std::norm(p.gamma1) + std::norm(p.gamma2)));
    p.gamma2 *= std::sqrt(std::max(0.0, 1.0 - std::norm(p.beta)) / (std::norm(p.gamma1) + std::norm(p.gamma2) + 1e-300));
  }
  return p;
}

/// Second draw of a round: alpha and beta shared, gammas fresh.
ChannelParams correlated_with(const ChannelParams& first, Rng& rng) {
  auto p = random_draw(rng);
  p.alpha = first.alpha;
  p.beta = first.beta;
  const double room = std::max(0.0, 1.0 - std::norm(p.beta));
  const double gg = std::norm(p.gamma1) + std::norm(p.gamma2);
  if (gg > room) {
    p.gamma1 *= std::sqrt(room / gg);
    p.gamma2 *= std::sqrt(room / gg);
  }
  return p;
}

oracle::Draw to_draw(const ChannelParams& p) { return {p.alpha, p.beta, p.gamma1, p.gamma2}; }

GateMap fixed_gates(const ChannelParams& ii, const ChannelParams& iv) {
  return [ii, iv](const StateVector& psi, int gate) { return engine().transmit(psi, gate == 0 ? ii : iv, gate); };
}

}  // namespace

TEST(Tables, DerivationMatchesFrozenConstants) {
  const auto d = derive_tables();
  const auto frozen = CorrectionTable::frozen();
  for (int k = 0; k < 8; ++k) {
    const auto o = TeleportOutcome::from_index(k);
    EXPECT_TRUE(equal_up_to_phase(d.correction.at(o), frozen.at(o), 1e-9)) << o.label();
    EXPECT_NEAR(d.branch_probability[static_cast<std::size_t>(k)], 0.125, 1e-9);
    EXPECT_LT((frozen.at(o).adjoint() * frozen.at(o) - DenseMatrix::Identity(3, 3)).norm(), 1e-15);
  }
  const auto rec = RecoveryTable::frozen();
  EXPECT_TRUE(equal_up_to_phase(d.recovery.step_ii_excited, rec.step_ii_excited, 1e-9));
  EXPECT_TRUE(equal_up_to_phase(d.recovery.step_iv_excited, rec.step_iv_excited, 1e-9));
  EXPECT_TRUE(equal_up_to_phase(d.recovery.step_iv_rr[0], rec.step_iv_rr[0], 1e-9));
  EXPECT_TRUE(equal_up_to_phase(d.recovery.step_iv_rr[2], rec.step_iv_rr[2], 1e-9));
}

TEST(Tables, FrozenCorrectionsRestoreTheQubitInTheOracle) {
  // Every branch of the independent amplitude model, corrected with the
  // frozen table, leaves atom 2 in c0|G> + c1|E>.
  Rng rng(2718);
  const auto table = CorrectionTable::frozen();
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto d2 = random_draw(rng);
    const auto d4 = correlated_with(d2, rng);
    const auto pre = oracle::pre_teleport(q.c0, q.c1, to_draw(d2), to_draw(d4));
    for (int k = 0; k < 8; ++k) {
      const auto o = TeleportOutcome::from_index(k);
      const oracle::Vec v = oracle::contract(pre, oracle::meas_b(o.b), oracle::meas_1(o.sign_1), oracle::meas_a(o.sign_a));
      if (v.squaredNorm() < 1e-20) continue;
      const Vector w = table.at(o) * v;
      const double f = std::norm(q.as_level_vector().dot(w)) / w.squaredNorm();
      EXPECT_NEAR(f, 1.0, 1e-10) << o.label();
    }
  }
}

TEST(Tables, CanonicalCorrection) {
  Vector v0 = Vector::Zero(3), v1 = Vector::Zero(3);
  v0[2] = cplx(0.0, 0.5);
  v1[0] = -0.5;
  const auto u = canonical_correction(v0, v1);
  Vector e0 = Vector::Zero(3), e1 = Vector::Zero(3);
  e0[0] = 1.0;
  e1[1] = 1.0;
  const Vector a = u * v0, b = u * v1;
  // Same lambda for both.
  EXPECT_NEAR(std::abs(a[0] - b[1]), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(a[0]), 0.5, 1e-15);
  EXPECT_LT((u.adjoint() * u - DenseMatrix::Identity(3, 3)).norm(), 1e-15);
  v1[0] = -0.4;
  EXPECT_THROW((void)canonical_correction(v0, v1), std::invalid_argument);
  EXPECT_TRUE(equal_up_to_phase(u, std::polar(1.0, 0.3) * u));
  EXPECT_FALSE(equal_up_to_phase(u, DenseMatrix::Identity(3, 3)));
}

TEST(Engine, EncodingMatchesOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto psi = engine().encode_backup(engine().prepare(q));
    EXPECT_LT(support::distance(psi, oracle::encoded(q.c0, q.c1)), 1e-14);
  }
  // Step (i) needs b in g and atom1 outside r.
  const auto s = engine().space();
  EXPECT_THROW((void)engine().encode_backup(StateVector::basis(s, {{"atomb", "e"}})), std::invalid_argument);
  EXPECT_THROW((void)engine().encode_backup(StateVector::basis(s, {{"atom1", "r"}})), std::invalid_argument);
}

TEST(Engine, IdealStatesMatchOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto after_ii = oracle::transmit(oracle::encoded(q.c0, q.c1), oracle::A2, {});
    EXPECT_LT(support::infidelity(engine().ideal_after_step_ii(q), after_ii), 1e-14);
    const auto pre = oracle::pre_teleport(q.c0, q.c1, {}, {});
    EXPECT_LT(support::infidelity(engine().ideal_before_teleport(q), pre), 1e-14);
  }
}

TEST(Engine, SymmetrizeRejectsExcitedAtom1) {
  const auto s = engine().space();
  EXPECT_THROW((void)engine().symmetrize(StateVector::basis(s, {{"atom1", "e"}})), std::invalid_argument);
  const auto out = engine().symmetrize(StateVector::basis(s, {{"atom1", "r"}}));
  EXPECT_NEAR(overlap(StateVector::basis(s, {{"atom1", "g"}}), out), 1.0, 1e-15);
}

TEST(Conditional, NoErrorPathMatchesOracleForCorrelatedDraws) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto d2 = random_draw(rng);
    const auto d4 = correlated_with(d2, rng);
    const auto res = conditional_protocol(engine(), q, fixed_gates(d2, d4));
    const auto pre = oracle::pre_teleport(q.c0, q.c1, to_draw(d2), to_draw(d4));
    EXPECT_LT(support::infidelity(res.before_teleport, pre), 1e-12);
    double total = 0.0;
    for (int k = 0; k < 8; ++k) {
      total += res.branch_probability[static_cast<std::size_t>(k)];
      if (res.branch_probability[static_cast<std::size_t>(k)] > 1e-14) {
        EXPECT_NEAR(res.fidelity[static_cast<std::size_t>(k)], 1.0, 1e-10);
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(res.min_fidelity, 1.0, 1e-10);
    // Product of the per-check keep probabilities, each relative to the
    // norm that survived the preceding gate.
    using oracle::Key;
    const auto a = oracle::transmit(oracle::encoded(q.c0, q.c1), oracle::A2, to_draw(d2));
    const auto a_kept = oracle::keep(a, [](const Key& k) { return k[oracle::A1] != 1; });
    const auto b = oracle::transmit(oracle::symmetrize(a_kept), oracle::AA, to_draw(d4));
    const double p = oracle::norm2(a_kept) / oracle::norm2(a) * oracle::norm2(pre) / oracle::norm2(b);
    EXPECT_NEAR(res.p_no_detected_error, p, 1e-12);
  }
}

TEST(Conditional, UncorrelatedDrawsBreakTheFidelity) {
  Rng rng(4);
  double worst = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto d2 = random_draw(rng, 0.3, 0.0);
    auto d4 = random_draw(rng, 0.3, 0.0);
    worst = std::min(worst, conditional_protocol(engine(), q, fixed_gates(d2, d4)).min_fidelity);
  }
  EXPECT_LT(worst, 0.99);
}

TEST(Conditional, IdealChannelBranchesAreInputIndependent) {
  // No-cloning sanity: with the ideal channel the eight outcomes carry no
  // information about the input (each has probability 1/8).
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto res = conditional_protocol(engine(), q, fixed_gates({}, {}));
    EXPECT_NEAR(res.p_no_detected_error, 1.0, 1e-12);
    for (double p : res.branch_probability) EXPECT_NEAR(p, 0.125, 1e-12);
    EXPECT_NEAR(res.min_fidelity, 1.0, 1e-12);
  }
}

TEST(BranchMapTest, AgreesWithDirectEvaluation) {
  Rng rng(6);
  const auto d2 = random_draw(rng);
  const auto d4 = correlated_with(d2, rng);
  const BranchMap map(engine(), fixed_gates(d2, d4));
  for (int trial = 0; trial < 30; ++trial) {
    const auto q = QubitInput::random(rng);
    const auto res = conditional_protocol(engine(), q, fixed_gates(d2, d4));
    // The map is linear, so it keeps the absolute norm of the no-error path;
    // its ratios are the conditional branch probabilities.
    double total = 0.0;
    for (int k = 0; k < 8; ++k) total += map.probability(k, q);
    EXPECT_NEAR(total, oracle::norm2(oracle::pre_teleport(q.c0, q.c1, to_draw(d2), to_draw(d4))), 1e-13);
    for (int k = 0; k < 8; ++k) {
      const double p = map.probability(k, q);
      EXPECT_NEAR(p / total, res.branch_probability[static_cast<std::size_t>(k)], 1e-11);
      if (p > 1e-14) EXPECT_NEAR(map.fidelity(k, q), 1.0, 1e-12);
    }
    EXPECT_NEAR(map.min_fidelity(q), res.min_fidelity, 1e-12);
  }
}

TEST(Round, EnumerationIsComplete) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = QubitInput::random(rng);
    ChannelParams d2 = random_draw(rng), d4 = correlated_with(d2, rng);
    if (trial % 4 == 1) d2 = ChannelParams::jump();
    if (trial % 4 == 2) d4 = ChannelParams::jump();
    const auto leaves = enumerate_round(engine(), q, d2, d4);
    double total = 0.0, success = 0.0;
    for (const auto& l : leaves) {
      total += l.probability;
      if (l.success) success += l.probability;
      if (l.probability > 1e-14) EXPECT_NEAR(l.fidelity, 1.0, 1e-9) << l.path.back();
    }
    // Each measurement is conditional on the norm the preceding channel
    // left, so the leaves partition unit probability. Success is the
    // product of the two no-error keeps, taken from the oracle.
    using oracle::Key;
    const auto a = oracle::transmit(oracle::encoded(q.c0, q.c1), oracle::A2, to_draw(d2));
    const auto a_kept = oracle::keep(a, [](const Key& k) { return k[oracle::A1] != 1; });
    const auto b = oracle::transmit(oracle::symmetrize(a_kept), oracle::AA, to_draw(d4));
    const auto pre = oracle::pre_teleport(q.c0, q.c1, to_draw(d2), to_draw(d4));
    EXPECT_NEAR(total, 1.0, 1e-12);
    const double expect = oracle::norm2(a_kept) > 0.0 && oracle::norm2(b) > 0.0
                              ? oracle::norm2(a_kept) / oracle::norm2(a) * oracle::norm2(pre) / oracle::norm2(b)
                              : 0.0;
    EXPECT_NEAR(success, expect, 1e-12);
  }
}

TEST(Round, LeafProbabilitiesSumToOneForUnitaryDraws) {
  // |alpha| = 1 and |beta|^2 + |gamma1|^2 + |gamma2|^2 = 1: no norm is lost.
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = QubitInput::random(rng);
    ChannelParams d2{std::polar(1.0, rng.uniform(0.0, 6.28)), cplx(0.6, 0.0), cplx(0.0, 0.48), cplx(0.64, 0.0)};
    ChannelParams d4 = d2;
    d4.gamma1 = cplx(0.64, 0.0);
    d4.gamma2 = cplx(0.0, 0.48);
    double total = 0.0;
    for (const auto& l : enumerate_round(engine(), q, d2, d4)) total += l.probability;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Run, JumpsAreRecoveredExactly) {
  Rng rng(9);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto q = QubitInput::random(rng);
    const bool at_ii = trial % 2 == 0;
    const auto other = random_draw(rng);
    FixedChannel ch(at_ii ? ChannelParams::jump() : other, at_ii ? other : ChannelParams::jump());
    Rng mrng(static_cast<std::uint64_t>(trial));
    const auto out = run_protocol(engine(), q, ch, mrng, 1);
    if (out.status == ProtocolStatus::Success) continue;  // the jumped branch was not selected
    ASSERT_EQ(out.backup_fidelities.size(), 1u);
    ASSERT_NEAR(out.backup_fidelities[0], 1.0, 1e-10) << "trial " << trial << " " << to_string(out.reason);
  }
}

TEST(Run, DetectedErrorsOfNoisyDrawsAreRecovered) {
  NoiseConfig cfg;
  cfg.p_nojump = 0.6;
  cfg.sampler.abs_min = 0.05;
  cfg.sampler.gamma_scale = 0.4;
  Rng qrng(10);
  int retries = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    const auto q = QubitInput::random(qrng);
    Rng rng(static_cast<std::uint64_t>(trial) + 1);
    const auto out = run_protocol(q, cfg, rng, 5);
    for (double f : out.backup_fidelities) {
      ++retries;
      ASSERT_NEAR(f, 1.0, 1e-10);
    }
    if (out.status == ProtocolStatus::Success) ASSERT_NEAR(out.fidelity, 1.0, 1e-10);
  }
  EXPECT_GT(retries, 1000);
}

TEST(Run, RetryLeavesBackupFactorized) {
  const auto q = QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.8)};
  // Jump at (ii): the RR check in step (iv) catches it.
  auto psi = engine().encode_backup(engine().prepare(q));
  psi = engine().transmit(psi, ChannelParams::jump(), 0);
  psi = engine().symmetrize(psi.normalized());
  psi = engine().transmit(psi, {}, 1).normalized();
  const auto rr = engine().rr_check().branches(psi);
  EXPECT_NEAR(rr[0].probability, 1.0, 1e-14);
  const auto f = pure_factor(rr[0].collapsed, "atomb");
  ASSERT_TRUE(f.has_value());
  EXPECT_NEAR(std::norm(q.as_level_vector().dot(*f)), 1.0, 1e-14);
}

TEST(Run, GeometricRounds) {
  // Point-mass ideal draws: a round succeeds iff neither transmission
  // jumps, so rounds ~ Geometric(P^2).
  for (double P : {0.5, 1.0 / std::numbers::sqrt2}) {
    NoiseConfig cfg;
    cfg.p_nojump = P;
    cfg.sampler.kind = SamplerSpec::Kind::PointMass;
    const auto q = QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.8)};
    const std::size_t n = 10000;
    const auto batch = run_protocol_batch(q, cfg, n, 500, 200);
    const double p = P * P;
    EXPECT_EQ(batch.success_rate, 1.0);
    const double se = std::sqrt((1.0 - p) / (p * p) / n);
    EXPECT_NEAR(batch.mean_rounds, 1.0 / p, 4.0 * se) << "P=" << P;
    std::size_t first = 0;
    for (const auto& o : batch.outcomes) first += o.rounds == 1 ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(first) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
    EXPECT_NEAR(batch.min_fidelity, 1.0, 1e-10);
  }
}

TEST(Run, GivesUpAfterMaxRounds) {
  NoiseConfig cfg;
  cfg.p_nojump = 0.0;
  Rng rng(1);
  const auto out = run_protocol(QubitInput{cplx(0.6, 0.0), cplx(0.8, 0.0)}, cfg, rng, 3);
  EXPECT_EQ(out.status, ProtocolStatus::RetryAfterDetectedError);
  EXPECT_EQ(out.rounds, 3);
  EXPECT_EQ(out.backup_fidelities.size(), 3u);
  EXPECT_THROW((void)run_protocol(QubitInput{}, cfg, rng, 0), std::invalid_argument);
  EXPECT_THROW((void)run_protocol(QubitInput{cplx(1.0), cplx(1.0)}, cfg, rng, 1), std::invalid_argument);
}

TEST(Run, TranscriptAndJson) {
  NoiseConfig cfg;
  Rng rng(12);
  const auto out = run_protocol(QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.8)}, cfg, rng, 5);
  ASSERT_EQ(out.status, ProtocolStatus::Success);
  const auto j = out.to_json();
  for (const char* key : {"status", "reason", "rounds", "fidelity", "teleport_outcome", "branches", "channel_draws",
                          "backup_fidelities"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["channel_draws"].size(), 2u);
  EXPECT_EQ(j["channel_draws"][0]["gate"], "ii");
  EXPECT_EQ(j["branches"].back()["step"], "v");
  double p = 1.0;
  for (const auto& b : j["branches"]) p *= b["probability"].get<double>();
  EXPECT_GT(p, 0.0);
}

TEST(Run, BatchIsIndependentOfExecution) {
  NoiseConfig cfg;
  cfg.p_nojump = 0.7;
  const auto q = QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.8)};
  const auto a = run_protocol_batch(q, cfg, 200, 42, 50, Execution::Parallel);
  const auto b = run_protocol_batch(q, cfg, 200, 42, 50, Execution::Serial);
  ASSERT_EQ(a.outcomes.size(), b.outcomes.size());
  for (std::size_t i = 0; i < a.outcomes.size(); ++i) EXPECT_EQ(a.outcomes[i].to_json().dump(), b.outcomes[i].to_json().dump());
  EXPECT_EQ(a.mean_rounds, b.mean_rounds);
}

TEST(Environment, CommutingModelsReachUnitFidelity) {
  const auto q = QubitInput{cplx(-0.29, 0.25) * std::numbers::sqrt2, cplx(0.36, 0.473) * std::numbers::sqrt2};
  QubitInput qn = q;
  const double n = std::sqrt(std::norm(q.c0) + std::norm(q.c1));
  qn.c0 /= n;
  qn.c1 /= n;
  // Scalar environment equals the fixed-draw protocol.
  const ChannelParams d{cplx(0.8, 0.1), cplx(0.0, 0.7), cplx(0.2, 0.0), cplx(0.1, 0.1)};
  const auto env_res = env_protocol(qn, EnvironmentModel::scalar(d));
  const auto fixed = conditional_protocol(engine(), qn, fixed_gates(d, d));
  EXPECT_NEAR(env_res.p_no_detected_error, fixed.p_no_detected_error, 1e-12);
  EXPECT_NEAR(env_res.min_fidelity, 1.0, 1e-10);
  // Diagonal (dephasing) T and S commute.
  EnvironmentModel deph;
  deph.xi = Vector::Constant(2, 1.0 / std::numbers::sqrt2);
  deph.T = DenseMatrix::Zero(2, 2);
  deph.T(0, 0) = std::polar(0.9, 0.3);
  deph.T(1, 1) = std::polar(0.9, -0.7);
  deph.S = DenseMatrix::Zero(2, 2);
  deph.S(0, 0) = std::polar(0.8, 1.0);
  deph.S(1, 1) = std::polar(0.8, -0.2);
  deph.G1 = DenseMatrix::Identity(2, 2) * 0.3;
  deph.G2 = DenseMatrix::Identity(2, 2) * 0.2;
  ASSERT_TRUE(check_commuting(deph).pass);
  EXPECT_NEAR(env_protocol(qn, deph).min_fidelity, 1.0, 1e-10);
  // sigma_x / sigma_z: (ST - TS) xi != 0 and the fidelity drops.
  EnvironmentModel nc;
  nc.xi = Vector::Zero(2);
  nc.xi[0] = 1.0;
  nc.T = DenseMatrix::Zero(2, 2);
  nc.T(0, 1) = nc.T(1, 0) = 0.9;
  nc.S = DenseMatrix::Zero(2, 2);
  nc.S(0, 0) = 0.9;
  nc.S(1, 1) = -0.9;
  nc.G1 = nc.G2 = DenseMatrix::Zero(2, 2);
  ASSERT_FALSE(check_commuting(nc).pass);
  EXPECT_LT(env_protocol(qn, nc).min_fidelity, 0.99);
}

TEST(Qubit, Validation) {
  EXPECT_NO_THROW((QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.8)}.validate()));
  EXPECT_THROW((QubitInput{cplx(0.6, 0.0), cplx(0.0, 0.9)}.validate()), std::invalid_argument);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_NO_THROW(QubitInput::random(rng).validate());
  EXPECT_EQ(TeleportOutcome::from_index(5).label(), "b=e,atom1=+,atoma=-");
  for (int k = 0; k < 8; ++k) EXPECT_EQ(TeleportOutcome::from_index(k).index(), k);
}
