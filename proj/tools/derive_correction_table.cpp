// Re-derives the step-(v) correction table and the retry recovery
// operations from the exact branch amplitudes and compares them with the
// frozen constants. Exit status 1 on any mismatch.

#include <iostream>
#include <string>

#include <fmt/format.h>

#include "qlink/protocol.hpp"

namespace {

std::string fmt_cplx(qlink::cplx z) {
  if (std::abs(z) < 1e-12) return "0";
  if (std::abs(z.imag()) < 1e-12) return fmt::format("{:+.6g}", z.real());
  if (std::abs(z.real()) < 1e-12) return fmt::format("{:+.6g}i", z.imag());
  return fmt::format("({:.6g}{:+.6g}i)", z.real(), z.imag());
}

/// "G->E, E->-R, R->G" style listing of a permutation-like 3x3 unitary.
std::string describe(const qlink::DenseMatrix& u, const char* levels) {
  std::string s;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 3; ++r) {
      if (std::abs(u(r, c)) < 1e-12) continue;
      const auto coef = u(r, c);
      const std::string k = std::abs(coef - 1.0) < 1e-12 ? "" : fmt_cplx(coef) + " ";
      s += fmt::format("{}{} -> {}{}", s.empty() ? "" : ", ", levels[c], k, levels[r]);
    }
  }
  return s;
}

}  // namespace

int main() {
  using namespace qlink;
  const auto derived = derive_tables();
  const auto frozen = CorrectionTable::frozen();
  const auto rec = RecoveryTable::frozen();
  bool ok = true;

  std::cout << "step (v) corrections on atom 2 (levels G, E, R):\n";
  for (int k = 0; k < 8; ++k) {
    const auto o = TeleportOutcome::from_index(k);
    const bool same = equal_up_to_phase(derived.correction.at(o), frozen.at(o), 1e-9);
    ok &= same;
    fmt::print("  {:<22} p = {:.6f}   {}   [{}]\n", o.label(), derived.branch_probability[static_cast<std::size_t>(k)],
               describe(derived.correction.at(o), "GER"), same ? "matches frozen" : "DIFFERS");
  }

  std::cout << "recovery operations on b (levels g, e, r):\n";
  auto row = [&](const char* name, const DenseMatrix& d, const DenseMatrix& f) {
    const bool same = equal_up_to_phase(d, f, 1e-9);
    ok &= same;
    fmt::print("  {:<28} {}   [{}]\n", name, describe(d, "ger"), same ? "matches frozen" : "DIFFERS");
  };
  row("step (ii), atom1 in e", derived.recovery.step_ii_excited, rec.step_ii_excited);
  row("step (iv), atom1 in e", derived.recovery.step_iv_excited, rec.step_iv_excited);
  row("step (iv), RR, atom1 = g", derived.recovery.step_iv_rr[0], rec.step_iv_rr[0]);
  row("step (iv), RR, atom1 = r", derived.recovery.step_iv_rr[2], rec.step_iv_rr[2]);
  std::cout << "  (step (iv), RR with atom1 = e cannot occur after the preceding check)\n";
  return ok ? 0 : 1;
}
