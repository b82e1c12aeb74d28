#pragma once

// Subsystem labels and level names of the two-node setup.
//
//   node 1, cavity 1: atom1 (sender), atomb (backup)       levels g, e, r
//   node 2, cavity 2: atom2 (receiver), atoma (auxiliary)  levels G, E, R
//
// Subsystem order is frozen as (atom1, atomb, atom2, atoma, cav1, cav2[, env]).

#include <string>
#include <vector>

#include "qlink/linalg.hpp"

namespace qlink {

inline const std::string kAtom1 = "atom1";
inline const std::string kAtomB = "atomb";
inline const std::string kAtom2 = "atom2";
inline const std::string kAtomA = "atoma";
inline const std::string kCav1 = "cav1";
inline const std::string kCav2 = "cav2";
inline const std::string kEnv = "env";

inline const std::vector<std::string> kNode1Levels = {"g", "e", "r"};
inline const std::vector<std::string> kNode2Levels = {"G", "E", "R"};

/// Level names for a node (1 or 2); index 0/1/2 = ground/excited-qubit/auxiliary.
const std::vector<std::string>& node_levels(int node);

/// Node of a standard atom label (1 for atom1/atomb, 2 for atom2/atoma).
int node_of(const std::string& atom_label);

/// Level name of role k (0 = g, 1 = e, 2 = r) for an atom label.
const std::string& level_name(const std::string& atom_label, int role);

/// Four atoms only (81 dimensions).
SpacePtr make_atom_space();
/// Four atoms plus two cavity modes with the given photon cutoff (324 at cutoff 1).
SpacePtr make_node_space(int photon_cutoff = 1);
/// Four atoms plus an environment factor of dimension env_dim.
SpacePtr make_atom_env_space(int env_dim);

Subsystem cavity_subsystem(const std::string& label, int photon_cutoff);

}  // namespace qlink
