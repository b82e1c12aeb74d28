#pragma once

// Run configuration: one JSON document, all quantities in units of kappa.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlink/channel.hpp"
#include "qlink/cqed.hpp"
#include "qlink/lindblad.hpp"
#include "qlink/mcwf.hpp"
#include "qlink/protocol.hpp"

namespace qlink {

enum class Mode { Protocol, Physical, EnvCheck, PulseDesign, OracleCompare };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);  // throws ConfigError

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One curve of the physical sweep; kappa' is applied to both cavities and
/// the pulse envelopes are multiplied by rabi_scale.
struct PhysicalVariant {
  std::string name;
  double kappa_loss = 0.0;
  double Gamma = 0.0;
  double rabi_scale = 1.0;
};

struct EnvModelSpec {
  std::string name;
  std::string kind;  // disjoint | commuting | noncommuting | scalar | explicit
  EnvironmentModel model;
};

struct Thresholds {
  // protocol
  std::optional<double> min_success_rate;
  std::optional<double> min_fidelity;
  // physical
  double min_ideal_step_ii_overlap = 0.98;
  double min_conditional_fidelity = 0.99;
  double min_backup_overlap_after_jump = 1.0 - 1e-6;
  // env-check: models passing the commuting check must reach this
  double min_commuting_fidelity = 1.0 - 1e-9;
  // oracle-compare
  double max_trace_distance = 0.02;
};

struct ToyRun {
  ToyModelParams params;
  double t_final = 5.0;
  int checkpoints = 5;
  double dt = 1e-3;
};

struct RunConfig {
  Mode mode = Mode::Protocol;
  std::uint64_t seed = 0;
  std::size_t n_runs = 0;
  std::string output_dir = "out";
  int max_rounds = 50;

  QubitInput qubit;
  NoiseConfig noise;

  PhysicalParams physical;
  std::optional<std::string> pulse_file;  // else designed at run time
  double gate_duration = 30.0;
  PulseDesignOptions design;
  IntegratorConfig integrator;
  int photon_cutoff = 1;
  std::vector<PhysicalVariant> variants;
  int jump_search_max = 40;

  std::vector<EnvModelSpec> env_models;
  ToyRun toy;
  Thresholds thresholds;
};

/// Built-in environment models used when the config lists none.
std::vector<EnvModelSpec> default_env_models();
/// kappa'/kappa = 0, 1, 10 with Gamma = 0, Gamma = kappa' = kappa, and the
/// latter with a 10% Rabi-frequency error.
std::vector<PhysicalVariant> default_physical_variants();

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_runs;
  std::optional<std::string> output_dir;
  std::vector<std::string> set;  // key.path=value, value parsed as JSON when possible
};

/// Parses `text` (source_name is used in messages) for `mode`; errors name
/// the offending key and its line.
RunConfig parse_config(const std::string& text, const std::string& source_name, Mode mode,
                       const CliOverrides& cli = {});
RunConfig load_config(const std::string& path, Mode mode, const CliOverrides& cli = {});

/// Accepts [re, im] or a real number.
cplx complex_from_json(const nlohmann::json& j);
nlohmann::json complex_to_json(cplx z);

}  // namespace qlink
