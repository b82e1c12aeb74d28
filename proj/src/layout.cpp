#include "qlink/layout.hpp"

#include <fmt/format.h>

namespace qlink {

const std::vector<std::string>& node_levels(int node) {
  if (node == 1) return kNode1Levels;
  if (node == 2) return kNode2Levels;
  throw std::invalid_argument(fmt::format("node must be 1 or 2, got {}", node));
}

int node_of(const std::string& atom_label) {
  if (atom_label == kAtom1 || atom_label == kAtomB) return 1;
  if (atom_label == kAtom2 || atom_label == kAtomA) return 2;
  throw LabelError(fmt::format("'{}' is not an atom label", atom_label));
}

const std::string& level_name(const std::string& atom_label, int role) {
  return node_levels(node_of(atom_label)).at(static_cast<std::size_t>(role));
}

namespace {

std::vector<Subsystem> atom_subsystems() {
  return {{kAtom1, kNode1Levels}, {kAtomB, kNode1Levels}, {kAtom2, kNode2Levels}, {kAtomA, kNode2Levels}};
}

}  // namespace

Subsystem cavity_subsystem(const std::string& label, int photon_cutoff) {
  if (photon_cutoff < 1) throw DimensionError("photon cutoff must be at least 1");
  Subsystem s{label, {}};
  for (int n = 0; n <= photon_cutoff; ++n) s.levels.push_back(std::to_string(n));
  return s;
}

SpacePtr make_atom_space() { return make_space(atom_subsystems()); }

SpacePtr make_node_space(int photon_cutoff) {
  auto subs = atom_subsystems();
  subs.push_back(cavity_subsystem(kCav1, photon_cutoff));
  subs.push_back(cavity_subsystem(kCav2, photon_cutoff));
  return make_space(std::move(subs));
}

SpacePtr make_atom_env_space(int env_dim) {
  if (env_dim < 1) throw DimensionError("environment dimension must be positive");
  auto subs = atom_subsystems();
  Subsystem env{kEnv, {}};
  for (int k = 0; k < env_dim; ++k) env.levels.push_back("x" + std::to_string(k));
  subs.push_back(std::move(env));
  return make_space(std::move(subs));
}

}  // namespace qlink
