#include "qlink/cqed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "qlink/layout.hpp"

namespace qlink {

// ---- parameters ----------------------------------------------------------

void PhysicalParams::validate() const {
  for (double v : {g, kappa, kappa_loss_1, kappa_loss_2, Gamma, Delta, delta}) {
    if (!std::isfinite(v)) throw std::invalid_argument("physical parameters must be finite");
  }
  if (!(kappa > 0.0)) throw std::invalid_argument(fmt::format("kappa must be positive, got {}", kappa));
  if (g < 0.0) throw std::invalid_argument(fmt::format("g must be >= 0, got {}", g));
  if (kappa_loss_1 < 0.0 || kappa_loss_2 < 0.0) throw std::invalid_argument("loss rates kappa' must be >= 0");
  if (Gamma < 0.0) throw std::invalid_argument(fmt::format("Gamma must be >= 0, got {}", Gamma));
  if (Delta == 0.0) throw std::invalid_argument("Delta must be nonzero (adiabatic elimination needs a detuning)");
}

std::vector<std::string> PhysicalParams::warnings() const {
  std::vector<std::string> out;
  if (std::abs(Delta) < 5.0 * Gamma) {
    out.push_back(fmt::format("|Delta| = {} < 5 Gamma = {}: adiabatic elimination is questionable", Delta, 5.0 * Gamma));
  }
  return out;
}

DerivedCouplings derived_couplings(const PhysicalParams& p, cplx omega) {
  const cplx z = p.z();
  return {omega * omega / (4.0 * z), p.g * omega / (2.0 * z), p.g * p.g / z};
}

// ---- pulse schedule ------------------------------------------------------

PulseSchedule::PulseSchedule(std::vector<double> t, std::vector<double> omega1, std::vector<double> omega2,
                             std::vector<double> phase1, std::vector<double> phase2)
    : t_(std::move(t)), omega1_(std::move(omega1)), omega2_(std::move(omega2)), phase1_(std::move(phase1)),
      phase2_(std::move(phase2)) {
  if (phase1_.empty()) phase1_.assign(t_.size(), 0.0);
  if (phase2_.empty()) phase2_.assign(t_.size(), 0.0);
  validate();
}

void PulseSchedule::validate() const {
  const std::size_t n = t_.size();
  if (n < 2) throw std::invalid_argument("pulse schedule needs at least two samples");
  if (omega1_.size() != n || omega2_.size() != n || phase1_.size() != n || phase2_.size() != n) {
    throw std::invalid_argument("pulse schedule columns differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(t_[i]) || !std::isfinite(omega1_[i]) || !std::isfinite(omega2_[i]) ||
        !std::isfinite(phase1_[i]) || !std::isfinite(phase2_[i])) {
      throw std::invalid_argument(fmt::format("pulse schedule has a non-finite entry at row {}", i));
    }
    if (i > 0 && !(t_[i] > t_[i - 1])) {
      throw std::invalid_argument(fmt::format("pulse time grid not increasing at row {}", i));
    }
  }
}

cplx PulseSchedule::drive(int k, double t) const {
  if (k != 1 && k != 2) throw std::invalid_argument("laser index must be 1 or 2");
  const double slack = 1e-9 * std::max(1.0, duration());
  if (t < t_.front() - slack || t > t_.back() + slack) {
    throw PulseOutOfRange(fmt::format("t = {} outside pulse grid [{}, {}]", t, t_.front(), t_.back()));
  }
  const auto& amp = omega(k);
  const auto& ph = phase(k);
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  std::size_t hi = static_cast<std::size_t>(it - t_.begin());
  hi = std::clamp<std::size_t>(hi, 1, t_.size() - 1);
  const std::size_t lo = hi - 1;
  const double w = std::clamp((t - t_[lo]) / (t_[hi] - t_[lo]), 0.0, 1.0);
  const double a = amp[lo] + w * (amp[hi] - amp[lo]);
  const double p = ph[lo] + w * (ph[hi] - ph[lo]);
  return std::polar(a, p);
}

PulseSchedule PulseSchedule::scaled(double factor) const {
  PulseSchedule out = *this;
  for (auto& v : out.omega1_) v *= factor;
  for (auto& v : out.omega2_) v *= factor;
  return out;
}

void PulseSchedule::write_csv(std::ostream& os) const {
  os << "t,omega1,omega2,phase1,phase2\n";
  for (std::size_t i = 0; i < t_.size(); ++i) {
    os << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", t_[i], omega1_[i], omega2_[i], phase1_[i],
                      phase2_[i]);
  }
}

PulseSchedule PulseSchedule::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("pulse CSV is empty");
  std::vector<std::vector<double>> cols;
  std::size_t width = 0;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw std::invalid_argument(fmt::format("pulse CSV line {}: cannot parse '{}'", lineno, cell));
      }
    }
    if (width == 0) {
      width = row.size();
      if (width != 3 && width != 5) {
        throw std::invalid_argument(fmt::format("pulse CSV line {}: expected 3 or 5 columns, got {}", lineno, width));
      }
      cols.resize(width);
    } else if (row.size() != width) {
      throw std::invalid_argument(fmt::format("pulse CSV line {}: expected {} columns, got {}", lineno, width, row.size()));
    }
    for (std::size_t c = 0; c < width; ++c) cols[c].push_back(row[c]);
  }
  if (width == 0) throw std::invalid_argument("pulse CSV has no data rows");
  if (width == 3) return {cols[0], cols[1], cols[2]};
  return {cols[0], cols[1], cols[2], cols[3], cols[4]};
}

void PulseSchedule::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
  write_csv(os);
}

PulseSchedule PulseSchedule::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(fmt::format("cannot open pulse file '{}'", path));
  return read_csv(is);
}

// ---- Hamiltonian and jumps ----------------------------------------------

void GateLayout::validate(const HilbertSpace& space) const {
  if (node_of(sender) != 1) throw std::invalid_argument(fmt::format("sender '{}' must be a node-1 atom", sender));
  if (node_of(receiver) != 2) throw std::invalid_argument(fmt::format("receiver '{}' must be a node-2 atom", receiver));
  for (const auto& l : {sender, receiver, kCav1, kCav2}) {
    if (!space.contains(l)) throw std::invalid_argument(fmt::format("gate space lacks subsystem '{}'", l));
  }
}

namespace {

const std::string& cavity_of(const std::string& atom) { return node_of(atom) == 1 ? kCav1 : kCav2; }

std::vector<std::string> atoms_in(const HilbertSpace& space) {
  std::vector<std::string> out;
  for (const auto& l : {kAtom1, kAtomB, kAtom2, kAtomA}) {
    if (space.contains(l)) out.push_back(l);
  }
  return out;
}

struct DrivenAtom {
  std::string atom;
  int laser;
};

std::vector<DrivenAtom> driven_atoms(const GateLayout& layout) { return {{layout.sender, 1}, {layout.receiver, 2}}; }

}  // namespace

Generator build_heff(const PhysicalParams& p, const PulseSchedule& pulses, const GateLayout& layout,
                     const SpacePtr& space) {
  p.validate();
  layout.validate(*space);
  const cplx z = p.z();
  const auto n1 = number(space, kCav1);
  const auto n2 = number(space, kCav2);
  const auto a1 = annihilation(space, kCav1);
  const auto a2 = annihilation(space, kCav2);

  Generator h(space);
  h.add_constant(n1, cplx{-p.delta, -(p.kappa + p.kappa_loss_1)});
  h.add_constant(n2, cplx{-p.delta, -(p.kappa + p.kappa_loss_2)});
  h.add_constant(a2.adjoint() * a1, cplx{0.0, -2.0 * p.kappa});

  for (const auto& atom : atoms_in(*space)) {
    const auto& r = level_name(atom, 2);
    h.add_constant(number(space, cavity_of(atom)) * projector(space, atom, r), p.g * p.g / z);
  }

  auto shared = std::make_shared<const PulseSchedule>(pulses);
  for (const auto& d : driven_atoms(layout)) {
    const auto& atom = d.atom;
    const int laser = d.laser;
    const auto& e = level_name(atom, 1);
    const auto& r = level_name(atom, 2);
    const auto a = annihilation(space, cavity_of(atom));
    const double g = p.g;
    h.add_term(projector(space, atom, e), [shared, laser, z](double t) {
      return std::norm(shared->drive(laser, t)) / (4.0 * z);
    });
    h.add_term(transition(space, atom, e, r) * a, [shared, laser, z, g](double t) {
      return kI * g * std::conj(shared->drive(laser, t)) / (2.0 * z);
    });
    h.add_term(a.adjoint() * transition(space, atom, r, e), [shared, laser, z, g](double t) {
      return -kI * g * shared->drive(laser, t) / (2.0 * z);
    });
  }
  return h;
}

LinearOperator heff_at(const PhysicalParams& p, const PulseSchedule& pulses, const GateLayout& layout,
                       const SpacePtr& space, double t) {
  (void)pulses.drive(1, t);  // range check
  return build_heff(p, pulses, layout, space).at(t);
}

std::vector<JumpChannel> build_jump_channels(const PhysicalParams& p, const PulseSchedule& pulses,
                                             const GateLayout& layout, const SpacePtr& space) {
  p.validate();
  layout.validate(*space);
  const auto a1 = annihilation(space, kCav1);
  const auto a2 = annihilation(space, kCav2);
  std::vector<JumpChannel> out;

  JumpChannel output{"cavity_output", JumpKind::CavityOutput, TimeDependentOperator(space)};
  output.op.add_constant(a1 + a2, std::sqrt(2.0 * p.kappa));
  out.push_back(std::move(output));

  if (p.kappa_loss_1 > 0.0) {
    JumpChannel c{"cavity_loss_1", JumpKind::CavityLoss1, TimeDependentOperator(space)};
    c.op.add_constant(a1, std::sqrt(2.0 * p.kappa_loss_1));
    out.push_back(std::move(c));
  }
  if (p.kappa_loss_2 > 0.0) {
    JumpChannel c{"cavity_loss_2", JumpKind::CavityLoss2, TimeDependentOperator(space)};
    c.op.add_constant(a2, std::sqrt(2.0 * p.kappa_loss_2));
    out.push_back(std::move(c));
  }

  if (p.Gamma > 0.0) {
    const double amp = std::sqrt(p.Gamma) / std::abs(p.z());
    auto shared = std::make_shared<const PulseSchedule>(pulses);
    const auto drives = driven_atoms(layout);
    for (const auto& atom : atoms_in(*space)) {
      const auto& e = level_name(atom, 1);
      const auto& r = level_name(atom, 2);
      JumpChannel c{"spont_em_" + atom, JumpKind::SpontaneousEmission, TimeDependentOperator(space)};
      // sqrt(Gamma)/|z| |r><r| L with L = (Omega/2)|x><e| + i g a|x><r|
      c.op.add_constant(projector(space, atom, r) * annihilation(space, cavity_of(atom)), kI * p.g * amp);
      for (const auto& d : drives) {
        if (d.atom != atom) continue;
        const int laser = d.laser;
        c.op.add_term(transition(space, atom, r, e),
                      [shared, laser, amp](double t) { return 0.5 * amp * shared->drive(laser, t); });
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

double trace_identity_residual(const Generator& heff, const std::vector<JumpChannel>& jumps, double t) {
  const auto h = heff.at(t);
  auto lhs = LinearOperator::zero(heff.space());
  for (const auto& j : jumps) {
    const auto op = j.op.at(t);
    lhs += op.adjoint() * op;
  }
  const auto rhs = kI * (h - h.adjoint());
  return max_abs_diff(lhs, rhs);
}

// ---- gates ---------------------------------------------------------------

double cavity_population(const StateVector& psi) {
  const HilbertSpace& space = *psi.space();
  const std::size_t k1 = space.position(kCav1);
  const std::size_t k2 = space.position(kCav2);
  double excited = 0.0;
  const auto& a = psi.amplitudes();
  for (std::size_t i = 0; i < space.total_dim(); ++i) {
    if (space.digit(i, k1) != 0 || space.digit(i, k2) != 0) excited += std::norm(a[static_cast<Eigen::Index>(i)]);
  }
  const double n2 = psi.norm2();
  return n2 > 0.0 ? excited / n2 : 0.0;
}

namespace {

void check_gate_input(const StateVector& psi, const GateLayout& layout) {
  layout.validate(*psi.space());
  if (cavity_population(psi) > 1e-12) throw std::invalid_argument("transmission gate needs both cavities in vacuum");
  const double in_r = expectation(projector(psi.space(), layout.receiver, level_name(layout.receiver, 2)), psi).real();
  if (std::abs(in_r / psi.norm2() - 1.0) > 1e-10) {
    throw std::invalid_argument(fmt::format("receiver '{}' must be in R before the gate", layout.receiver));
  }
}

void check_leakage(const StateVector& out) {
  const double leak = cavity_population(out);
  if (leak > kGateLeakageTolerance) {
    throw GateLeakage(fmt::format("cavity population {:.3g} remains after the gate (tolerance {}); lengthen the gate",
                                  leak, kGateLeakageTolerance));
  }
}

}  // namespace

TrajectoryResult run_transmission_gate(const StateVector& psi, const GateLayout& layout, const PhysicalParams& p,
                                       const PulseSchedule& pulses, const IntegratorConfig& cfg, std::uint64_t seed,
                                       const Observer& observer) {
  check_gate_input(psi, layout);
  const auto h = build_heff(p, pulses, layout, psi.space());
  const auto jumps = build_jump_channels(p, pulses, layout, psi.space());
  IntegratorConfig gate_cfg = cfg;
  gate_cfg.t_final = pulses.t_end();
  auto result = sample_trajectory(psi.normalized(), h, jumps, gate_cfg, seed, observer, pulses.t_begin());
  check_leakage(result.state);
  return result;
}

StateVector run_gate_no_jump(const StateVector& psi, const GateLayout& layout, const PhysicalParams& p,
                             const PulseSchedule& pulses, const IntegratorConfig& cfg, const Observer& observer) {
  check_gate_input(psi, layout);
  const auto h = build_heff(p, pulses, layout, psi.space());
  auto out = evolve_no_jump(psi, h, pulses.t_begin(), pulses.t_end(), cfg, observer);
  check_leakage(out);
  return out;
}

ExtractedChannel extract_channel_params(const StateVector& in_g, const StateVector& out_g, const StateVector& in_e,
                                        const StateVector& out_e, const GateLayout& layout) {
  const auto& space = in_g.space();
  layout.validate(*space);
  const auto& s = layout.sender;
  const auto& rcv = layout.receiver;
  const auto to_r = transition(space, s, level_name(s, 2), level_name(s, 1));
  const auto to_e2 = transition(space, rcv, level_name(rcv, 1), level_name(rcv, 2));

  ExtractedChannel out;
  auto& c = out.params;
  c.alpha = inner(in_g, out_g);
  c.beta = inner(apply(to_e2 * to_r, in_e), out_e);
  c.gamma1 = inner(apply(to_r, in_e), out_e);
  c.gamma2 = inner(in_e, out_e);
  const double rest = out_g.norm2() - std::norm(c.alpha) + out_e.norm2() - std::norm(c.beta) - std::norm(c.gamma1) -
                      std::norm(c.gamma2);
  out.residual = std::sqrt(std::max(0.0, rest));
  if (out.residual > 1e-2) {
    throw std::runtime_error(
        fmt::format("gate output leaves the channel pattern (residual {:.3g} > 1e-2)", out.residual));
  }
  return out;
}

ExtractedChannel gate_channel_params(const PhysicalParams& p, const PulseSchedule& pulses, const GateLayout& layout,
                                     const SpacePtr& space, const IntegratorConfig& cfg) {
  std::map<std::string, std::string> levels;
  for (const auto& atom : atoms_in(*space)) levels[atom] = level_name(atom, node_of(atom) == 1 ? 0 : 2);
  levels[layout.sender] = level_name(layout.sender, 0);
  const auto in_g = StateVector::basis(space, levels);
  levels[layout.sender] = level_name(layout.sender, 1);
  const auto in_e = StateVector::basis(space, levels);
  const auto out_g = run_gate_no_jump(in_g, layout, p, pulses, cfg);
  const auto out_e = run_gate_no_jump(in_e, layout, p, pulses, cfg);
  return extract_channel_params(in_g, out_g, in_e, out_e, layout);
}

double gate_transfer(const PhysicalParams& p, const PulseSchedule& pulses, int photon_cutoff,
                     const IntegratorConfig& cfg) {
  const auto space = make_space({{kAtom1, kNode1Levels},
                                 {kAtom2, kNode2Levels},
                                 {kAtomA, kNode2Levels},
                                 cavity_subsystem(kCav1, photon_cutoff),
                                 cavity_subsystem(kCav2, photon_cutoff)});
  const GateLayout layout{kAtom1, kAtom2};
  const auto in = StateVector::basis(space, {{kAtom1, "e"}, {kAtom2, "R"}, {kAtomA, "R"}});
  const auto target = StateVector::basis(space, {{kAtom1, "r"}, {kAtom2, "E"}, {kAtomA, "R"}});
  const auto out = run_gate_no_jump(in, layout, p, pulses, cfg);
  return std::norm(inner(target, out));
}

}  // namespace qlink
