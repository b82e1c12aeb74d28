#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "oracle/oracle.hpp"
#include "qlink/cqed.hpp"
#include "qlink/layout.hpp"
#include "qlink/physical.hpp"

using namespace qlink;

namespace {

/// (atom1, atom2, cav1, cav2), cutoff 1: the oracle's 36-state ordering.
SpacePtr two_atom_space() {
  return make_space({{"atom1", kNode1Levels}, {"atom2", kNode2Levels}, cavity_subsystem("cav1", 1),
                     cavity_subsystem("cav2", 1)});
}

/// Constant drives with fixed phases over [0, T].
PulseSchedule constant_pulses(double w1, double w2, double T, double ph1 = 0.0, double ph2 = 0.0) {
  return PulseSchedule({0.0, T}, {w1, w1}, {w2, w2}, {ph1, ph1}, {ph2, ph2});
}

IntegratorConfig fine() {
  IntegratorConfig cfg;
  cfg.dt = 1e-3;
  cfg.sample_stride = 1000;
  return cfg;
}

/// Designed pulses for the default parameters, computed once per binary.
const PulseDesign& default_design() {
  static const PulseDesign d = design_pulses(PhysicalParams{}, 30.0);
  return d;
}

}  // namespace

TEST(Heff, MatchesIndependentConstruction) {
  const auto s = two_atom_space();
  for (const auto& p : {oracle::CqedParams{}, oracle::CqedParams{3.0, 1.0, 0.4, 1.7, 0.8, 7.0, 0.3}}) {
    PhysicalParams pp{p.g, p.kappa, p.kl1, p.kl2, p.Gamma, p.Delta, p.delta};
    const auto pulses = constant_pulses(2.0, 1.3, 5.0, 0.7, -1.1);
    const auto h = heff_at(pp, pulses, GateLayout{"atom1", "atom2"}, s, 2.5);
    const auto ref = oracle::heff_two_atoms(p, std::polar(2.0, 0.7), std::polar(1.3, -1.1));
    EXPECT_LT((h.dense() - ref).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Heff, DerivedCouplings) {
  PhysicalParams p;
  p.Gamma = 2.0;
  const auto c = derived_couplings(p, 3.0);
  const cplx z{10.0, 1.0};
  EXPECT_NEAR(std::abs(c.stark_shift - 9.0 / (4.0 * z)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(c.eff_rabi - 15.0 / (2.0 * z)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(c.cavity_stark - 25.0 / z), 0.0, 1e-15);
}

TEST(Heff, UndrivenIsPureCascadedDecay) {
  // No drive, atoms in g: a photon in cav1 leaks into cav2 and out,
  // c1 = e^{-kt}, c2 = -2kt e^{-kt}.
  const auto s = two_atom_space();
  PhysicalParams p;
  p.kappa = 1.0;
  const auto pulses = constant_pulses(0.0, 0.0, 3.0);
  const auto h = build_heff(p, pulses, GateLayout{}, s);
  const auto psi0 = StateVector::basis(s, {{"cav1", "1"}});
  for (double t : {0.5, 1.0, 2.0, 3.0}) {
    const auto out = evolve_no_jump(psi0, h, 0.0, t, fine());
    const cplx c1 = inner(psi0, out);
    const cplx c2 = inner(StateVector::basis(s, {{"cav2", "1"}}), out);
    EXPECT_NEAR(std::abs(c1 - std::exp(-t)), 0.0, 1e-9) << t;
    EXPECT_NEAR(std::abs(c2 - cplx(-2.0 * t * std::exp(-t), 0.0)), 0.0, 1e-9) << t;
    EXPECT_NEAR(out.norm2(), std::exp(-2.0 * t) * (1.0 + 4.0 * t * t), 1e-9);
  }
}

TEST(Heff, NoFeedbackFromSecondCavity) {
  const auto s = two_atom_space();
  PhysicalParams p;
  const auto pulses = constant_pulses(2.0, 2.0, 5.0);
  const auto h = build_heff(p, pulses, GateLayout{}, s);
  // Receiver emits (E -> R plus a photon in cav2); nothing may reach cav1.
  const auto psi0 = StateVector::basis(s, {{"atom1", "g"}, {"atom2", "E"}});
  const auto n1 = number(s, "cav1");
  evolve_no_jump(psi0, h, 0.0, 5.0, fine(), [&](double t, const StateVector& psi) {
    EXPECT_LE(expectation(n1, psi).real(), 1e-16) << t;
  });
  const DenseMatrix m = h.at(1.0).dense();
  // No a1^dag a2 element anywhere.
  for (std::size_t i = 0; i < s->total_dim(); ++i)
    for (std::size_t j = 0; j < s->total_dim(); ++j)
      if (s->digit(i, 2) == 1 && s->digit(j, 2) == 0 && s->digit(i, 3) == 0 && s->digit(j, 3) == 1)
        EXPECT_EQ(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), cplx{});
}

TEST(Heff, RamanPairFollowsTwoLevelOracle) {
  // Sender alone with a constant drive and a nearly closed cavity:
  // |e,0> <-> |r,1> oscillates as the 2x2 block predicts.
  const auto s = two_atom_space();
  PhysicalParams p;
  p.kappa = 1e-7;
  p.Delta = 8.0;
  p.g = 2.0;
  const double w = 3.0, T = 6.0;
  const auto h = build_heff(p, constant_pulses(w, 0.0, T), GateLayout{}, s);
  oracle::Mat block(2, 2);
  block << w * w / (4.0 * p.Delta), cplx(0.0, p.g * w / (2.0 * p.Delta)), cplx(0.0, -p.g * w / (2.0 * p.Delta)),
      p.g * p.g / p.Delta;
  const auto e0 = StateVector::basis(s, {{"atom1", "e"}, {"atom2", "G"}});
  const auto r1 = StateVector::basis(s, {{"atom1", "r"}, {"atom2", "G"}, {"cav1", "1"}});
  for (double t : {1.0, 2.5, 6.0}) {
    const auto out = evolve_no_jump(e0, h, 0.0, t, fine());
    const oracle::Mat u = (cplx(0.0, -t) * block).exp();
    EXPECT_NEAR(std::abs(inner(e0, out) - u(0, 0)), 0.0, 1e-5) << t;
    EXPECT_NEAR(std::abs(inner(r1, out) - u(1, 0)), 0.0, 1e-5) << t;
  }
}

TEST(Jumps, TraceIdentityHolds) {
  const auto s = make_node_space(1);
  const auto& d = default_design();
  for (const auto& p : {PhysicalParams{}, PhysicalParams{5.0, 1.0, 1.0, 1.0, 1.0, 10.0, 0.0},
                        PhysicalParams{3.0, 1.0, 0.2, 4.0, 0.5, 6.0, 0.7}}) {
    for (int gate = 0; gate < 2; ++gate) {
      const auto layout = protocol_gate_layout(gate);
      const auto h = build_heff(p, d.pulses, layout, s);
      const auto jumps = build_jump_channels(p, d.pulses, layout, s);
      for (int k = 0; k < 20; ++k) {
        const double t = d.pulses.t_begin() + d.pulses.duration() * k / 19.0;
        EXPECT_LT(trace_identity_residual(h, jumps, t), 1e-10) << t;
      }
    }
  }
}

TEST(Jumps, ChannelSetDependsOnRates) {
  const auto s = make_node_space(1);
  const auto pulses = constant_pulses(1.0, 1.0, 1.0);
  EXPECT_EQ(build_jump_channels(PhysicalParams{}, pulses, GateLayout{}, s).size(), 1u);
  PhysicalParams p;
  p.kappa_loss_1 = p.kappa_loss_2 = 0.5;
  p.Gamma = 0.1;
  const auto jumps = build_jump_channels(p, pulses, GateLayout{}, s);
  EXPECT_EQ(jumps.size(), 3u + 4u);  // output, two losses, one per atom
}

TEST(Jumps, LossJumpLeavesSenderInR) {
  // alpha|g,00> + beta|r,10> --(loss in cav1)--> |r,00>
  const auto s = make_node_space(1);
  PhysicalParams p;
  p.kappa_loss_1 = 1.0;
  const auto jumps = build_jump_channels(p, constant_pulses(1.0, 1.0, 1.0), GateLayout{}, s);
  const auto loss = std::find_if(jumps.begin(), jumps.end(), [](const JumpChannel& j) { return j.kind == JumpKind::CavityLoss1; });
  ASSERT_NE(loss, jumps.end());
  const auto psi = 0.6 * StateVector::basis(s, {{"atom2", "R"}, {"atoma", "R"}}) +
                   cplx(0.0, 0.8) * StateVector::basis(s, {{"atom1", "r"}, {"atom2", "R"}, {"atoma", "R"}, {"cav1", "1"}});
  const auto out = apply(loss->op.at(0.0), psi);
  EXPECT_NEAR(overlap(StateVector::basis(s, {{"atom1", "r"}, {"atom2", "R"}, {"atoma", "R"}}), out), 1.0, 1e-15);
}

TEST(Pulses, InterpolationAndCsvRoundTrip) {
  const PulseSchedule ps({0.0, 1.0, 2.0}, {0.0, 2.0, 4.0}, {1.0, 1.0, 1.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 0.0});
  EXPECT_NEAR(std::abs(ps.drive(1, 0.5) - std::polar(1.0, 0.5)), 0.0, 1e-15);
  EXPECT_NEAR(ps.envelope(1, 1.5), 3.0, 1e-15);
  EXPECT_THROW((void)ps.drive(1, 2.5), PulseOutOfRange);
  EXPECT_NEAR(ps.scaled(0.9).envelope(1, 1.0), 1.8, 1e-15);
  std::stringstream ss;
  ps.write_csv(ss);
  const auto back = PulseSchedule::read_csv(ss);
  EXPECT_EQ(back.t_grid(), ps.t_grid());
  EXPECT_EQ(back.omega(1), ps.omega(1));
  EXPECT_EQ(back.phase(1), ps.phase(1));
  std::stringstream three("t,omega1,omega2\n0,1,2\n1,1,2\n");
  EXPECT_EQ(PulseSchedule::read_csv(three).phase(2), std::vector<double>({0.0, 0.0}));
  EXPECT_THROW(PulseSchedule({0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(PulseSchedule({0.0}, {1.0}, {1.0}), std::invalid_argument);
}

TEST(Params, Validation) {
  PhysicalParams p;
  p.kappa = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.Delta = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.Gamma = 3.0;
  EXPECT_FALSE(p.warnings().empty());
  EXPECT_TRUE(PhysicalParams{}.warnings().empty());
}

TEST(Design, DefaultDesignTransfersTheExcitation) {
  const auto& d = default_design();
  EXPECT_GE(d.achieved_transfer, 0.98);
  EXPECT_NEAR(d.pulses.duration(), 30.0, 1e-9);
  // Independent re-check at two cutoffs.
  IntegratorConfig cfg = fine();
  const double t1 = gate_transfer(PhysicalParams{}, d.pulses, 1, cfg);
  const double t2 = gate_transfer(PhysicalParams{}, d.pulses, 2, cfg);
  EXPECT_GE(t1, 0.98);
  EXPECT_LT(std::abs(t1 - t2), 0.01);
}

TEST(Design, RabiErrorDegradesTransfer) {
  const auto& d = default_design();
  const double nominal = gate_transfer(PhysicalParams{}, d.pulses, 1, fine());
  for (double f : {0.9, 1.1}) EXPECT_LT(gate_transfer(PhysicalParams{}, d.pulses.scaled(f), 1, fine()), nominal) << f;
}

TEST(Design, ZeroCouplingIsRejected) {
  PhysicalParams p;
  p.g = 0.0;
  EXPECT_THROW((void)design_pulses(p, 30.0), PulseDesignError);
}

TEST(Design, LongerGatesDoNotTransferWorse) {
  PulseDesignOptions opt;
  opt.min_transfer = 0.0;
  double prev = 0.0;
  for (double T : {10.0, 15.0, 30.0}) {
    const auto d = design_pulses(PhysicalParams{}, T, opt);
    EXPECT_GE(d.achieved_transfer, prev - 1e-6) << T;
    prev = d.achieved_transfer;
  }
  EXPECT_THROW((void)design_pulses(PhysicalParams{}, 6.0, opt), std::invalid_argument);
}

TEST(Gate, ExtractedParametersReproduceTheGate) {
  const auto s = make_node_space(1);
  PhysicalParams p;
  p.kappa_loss_1 = p.kappa_loss_2 = 1.0;
  p.Gamma = 1.0;
  const auto& d = default_design();
  const auto cfg = fine();
  const auto layout = protocol_gate_layout(0);
  const auto ex = gate_channel_params(p, d.pulses, layout, s, cfg);
  EXPECT_LT(ex.residual, 1e-3);
  EXPECT_NO_THROW(ex.params.validate(1e-9));
  // A superposition of the two reference inputs with b and atoma as spectators.
  const auto in = (0.6 * StateVector::basis(s, {{"atom1", "g"}, {"atomb", "e"}, {"atom2", "R"}, {"atoma", "R"}}) +
                   cplx(0.0, 0.8) * StateVector::basis(s, {{"atom1", "e"}, {"atomb", "g"}, {"atom2", "R"}, {"atoma", "R"}}));
  auto gate = run_gate_no_jump(in, layout, p, d.pulses, cfg);
  flush_cavities(gate);
  const auto model = apply_channel(in, ex.params, "atom1", "atom2");
  EXPECT_LT((gate.amplitudes() - model.amplitudes()).norm(), 1e-3);
}

TEST(Gate, JumpTrajectoryEndsInBothAuxiliaryLevels) {
  const auto s = make_node_space(1);
  PhysicalParams p;
  p.kappa_loss_1 = p.kappa_loss_2 = 1.0;
  const auto& d = default_design();
  const auto in = StateVector::basis(s, {{"atom1", "e"}, {"atom2", "R"}, {"atoma", "R"}});
  const auto target = StateVector::basis(s, {{"atom1", "r"}, {"atom2", "R"}, {"atoma", "R"}});
  int with_jump = 0;
  for (std::uint64_t seed = 1; seed <= 20 && with_jump < 3; ++seed) {
    const auto res = run_transmission_gate(in, GateLayout{}, p, d.pulses, fine(), seed);
    if (res.record.events.empty()) continue;
    ++with_jump;
    EXPECT_NEAR(overlap(target, res.state), 1.0, 1e-9) << "seed " << seed;
  }
  EXPECT_GT(with_jump, 0);
}

TEST(Gate, LayoutValidation) {
  const auto s = make_node_space(1);
  EXPECT_THROW((GateLayout{"atom2", "atom1"}.validate(*s)), std::invalid_argument);
  EXPECT_THROW((GateLayout{"atom1", "atom2"}.validate(*make_atom_space())), std::invalid_argument);
  EXPECT_NO_THROW((GateLayout{"atomb", "atoma"}.validate(*s)));
}
