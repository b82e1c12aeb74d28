#pragma once

// Subcommand bodies of the qlink tool. Each writes its files into
// cfg.output_dir, prints a short report to `out` and returns the exit code
// (0 ok, 3 threshold failure). Config problems surface as ConfigError.

#include <iosfwd>

#include "qlink/config.hpp"

namespace qlink {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitThreshold = 3;

int cmd_protocol(const RunConfig& cfg, std::ostream& out);
int cmd_physical(const RunConfig& cfg, std::ostream& out);
int cmd_env_check(const RunConfig& cfg, std::ostream& out);
int cmd_pulse_design(const RunConfig& cfg, std::ostream& out);
int cmd_oracle_compare(const RunConfig& cfg, std::ostream& out);

int run_command(const RunConfig& cfg, std::ostream& out);

/// Designed or loaded pulses for cfg (losses and Gamma are ignored during
/// design; the schedule targets the lossless gate).
PulseSchedule resolve_pulses(const RunConfig& cfg, PulseDesign* design = nullptr);

}  // namespace qlink
