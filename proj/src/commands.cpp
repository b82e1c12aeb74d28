#include "qlink/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "qlink/physical.hpp"

namespace qlink {

using nlohmann::json;

namespace {

std::filesystem::path out_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.output_dir);
  return std::filesystem::path(cfg.output_dir) / name;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  const auto p = out_path(cfg, name);
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error(fmt::format("cannot write '{}'", p.string()));
  return os;
}

void write_json(const RunConfig& cfg, const std::string& name, const json& j) {
  auto os = open_out(cfg, name);
  os << j.dump(2) << '\n';
}

json qubit_json(const QubitInput& q) { return {{"c0", complex_to_json(q.c0)}, {"c1", complex_to_json(q.c1)}}; }

/// Records a threshold comparison; returns false on failure.
bool check(json& checks, std::ostream& out, const std::string& what, double value, double bound, bool at_least) {
  const bool ok = std::isfinite(value) && (at_least ? value >= bound : value <= bound);
  checks.push_back({{"check", what}, {"value", value}, {"bound", bound}, {"pass", ok}});
  fmt::print(out, "  {} {}: {:.10g} ({} {})\n", ok ? "ok  " : "FAIL", what, value, at_least ? ">=" : "<=", bound);
  return ok;
}

}  // namespace

// ---- protocol ----------------------------------------------------------------

int cmd_protocol(const RunConfig& cfg, std::ostream& out) {
  const auto batch = run_protocol_batch(cfg.qubit, cfg.noise, cfg.n_runs, cfg.seed, cfg.max_rounds);
  {
    auto os = open_out(cfg, "runs.jsonl");
    for (std::size_t i = 0; i < batch.outcomes.size(); ++i) {
      json j = batch.outcomes[i].to_json();
      j["run"] = i;
      j["seed"] = cfg.seed + i;
      os << j.dump() << '\n';
    }
  }
  std::size_t exhausted = 0;
  for (const auto& o : batch.outcomes) exhausted += o.status != ProtocolStatus::Success;

  fmt::print(out, "protocol: {} runs, success rate {:.6g}, mean rounds {:.6g}, fidelity min {:.12g} mean {:.12g}\n",
             cfg.n_runs, batch.success_rate, batch.mean_rounds, batch.min_fidelity, batch.mean_fidelity);
  json checks = json::array();
  bool ok = true;
  if (cfg.thresholds.min_success_rate) {
    ok &= check(checks, out, "success_rate", batch.success_rate, *cfg.thresholds.min_success_rate, true);
  }
  if (cfg.thresholds.min_fidelity) {
    ok &= check(checks, out, "min_fidelity", batch.min_fidelity, *cfg.thresholds.min_fidelity, true);
  }
  json summary = {{"mode", "protocol"},
                  {"n_runs", cfg.n_runs},
                  {"seed", cfg.seed},
                  {"max_rounds", cfg.max_rounds},
                  {"qubit", qubit_json(cfg.qubit)},
                  {"p_nojump", cfg.noise.p_nojump},
                  {"correlated", cfg.noise.correlated},
                  {"success_rate", batch.success_rate},
                  {"runs_exhausting_max_rounds", exhausted},
                  {"mean_rounds", batch.mean_rounds},
                  {"min_fidelity", batch.min_fidelity},
                  {"mean_fidelity", batch.mean_fidelity},
                  {"checks", checks}};
  write_json(cfg, "summary.json", summary);
  return ok ? kExitOk : kExitThreshold;
}

// ---- pulses --------------------------------------------------------------------

PulseSchedule resolve_pulses(const RunConfig& cfg, PulseDesign* design) {
  if (cfg.pulse_file) return PulseSchedule::load(*cfg.pulse_file);
  PhysicalParams lossless = cfg.physical;
  lossless.kappa_loss_1 = lossless.kappa_loss_2 = lossless.Gamma = 0.0;
  auto d = design_pulses(lossless, cfg.gate_duration, cfg.design);
  if (design) *design = d;
  return d.pulses;
}

namespace {

json design_json(const PulseDesign& d) {
  return {{"omega0", d.omega0},
          {"nu", d.nu},
          {"t1", d.t1},
          {"duration", d.pulses.duration()},
          {"predicted_transfer", d.predicted_transfer},
          {"achieved_transfer", d.achieved_transfer},
          {"iterations", d.iterations}};
}

}  // namespace

int cmd_pulse_design(const RunConfig& cfg, std::ostream& out) {
  PhysicalParams lossless = cfg.physical;
  lossless.kappa_loss_1 = lossless.kappa_loss_2 = lossless.Gamma = 0.0;
  PulseDesign d;
  try {
    d = design_pulses(lossless, cfg.gate_duration, cfg.design);
  } catch (const PulseDesignError& e) {
    fmt::print(out, "pulse-design: {}\n", e.what());
    write_json(cfg, "pulse_design.json", {{"mode", "pulse-design"}, {"error", e.what()}});
    return kExitThreshold;
  }
  {
    auto os = open_out(cfg, "pulses.csv");
    d.pulses.write_csv(os);
  }
  json summary = design_json(d);
  summary["mode"] = "pulse-design";
  summary["g"] = lossless.g;
  summary["Delta"] = lossless.Delta;
  summary["min_transfer"] = cfg.design.min_transfer;
  write_json(cfg, "pulse_design.json", summary);
  fmt::print(out, "pulse-design: Omega0 {:.6g}, nu {:.6g}, t1 {:.6g}; transfer {:.10g} (cutoff {})\n", d.omega0, d.nu,
             d.t1, d.achieved_transfer, cfg.design.verify_cutoff);
  return kExitOk;
}

// ---- physical --------------------------------------------------------------------

namespace {

PhysicalSetup variant_setup(const RunConfig& cfg, const PulseSchedule& pulses, const PhysicalVariant& v) {
  PhysicalSetup s;
  s.params = cfg.physical;
  s.params.kappa_loss_1 = s.params.kappa_loss_2 = v.kappa_loss;
  s.params.Gamma = v.Gamma;
  s.pulses = v.rabi_scale == 1.0 ? pulses : pulses.scaled(v.rabi_scale);
  s.integrator = cfg.integrator;
  s.photon_cutoff = cfg.photon_cutoff;
  return s;
}

struct JumpSearch {
  bool found = false;
  std::uint64_t seed = 0;
  double t_jump = 0.0;
  double min_backup_after = std::numeric_limits<double>::quiet_NaN();
  std::vector<OverlapSample> series;
};

/// First seed whose round 1 has its first jump in step (iv).
JumpSearch find_step_iv_jump(const QubitInput& q, const PhysicalSetup& s, std::uint64_t base, int budget) {
  JumpSearch js;
  const double T = s.pulses.duration();
  for (int k = 0; k < budget; ++k) {
    Rng rng(base + static_cast<std::uint64_t>(k));
    auto run = run_protocol_physical(q, s, rng, 1, true);
    if (run.first_jump_gate != 1) continue;
    js.found = true;
    js.seed = base + static_cast<std::uint64_t>(k);
    for (const auto& d : run.outcome.channel_draws) {
      if (d.at("gate") == "iv" && !d.at("events").empty()) {
        js.t_jump = T + d.at("events")[0].at("t").get<double>() - s.pulses.t_begin();
        break;
      }
    }
    double m = std::numeric_limits<double>::infinity();
    for (const auto& o : run.series) {
      if (o.t > js.t_jump && o.t <= 2.0 * T + 1e-9) m = std::min(m, o.backup);
    }
    js.min_backup_after = m;
    js.series = std::move(run.series);
    break;
  }
  return js;
}

}  // namespace

int cmd_physical(const RunConfig& cfg, std::ostream& out) {
  PulseDesign design;
  const PulseSchedule pulses = resolve_pulses(cfg, &design);
  {
    auto os = open_out(cfg, "pulses.csv");
    pulses.write_csv(os);
  }
  json summary = {{"mode", "physical"},
                  {"seed", cfg.seed},
                  {"n_runs", cfg.n_runs},
                  {"qubit", qubit_json(cfg.qubit)},
                  {"g", cfg.physical.g},
                  {"Delta", cfg.physical.Delta},
                  {"delta", cfg.physical.delta},
                  {"photon_cutoff", cfg.photon_cutoff},
                  {"gate_duration", pulses.duration()}};
  if (!cfg.pulse_file) summary["pulse_design"] = design_json(design);
  fmt::print(out, "physical: gate duration {:.6g}, cutoff {}\n", pulses.duration(), cfg.photon_cutoff);

  json checks = json::array();
  bool ok = true;
  json variants = json::array();
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const auto& v = cfg.variants[vi];
    const PhysicalSetup setup = variant_setup(cfg, pulses, v);
    std::vector<OverlapSample> series;
    const auto cond = conditional_physical(cfg.qubit, setup, &series);
    {
      auto os = open_out(cfg, v.name + "_nojump.csv");
      write_overlap_csv(os, series);
    }

    const std::uint64_t base = cfg.seed + 1000003ULL * vi;
    std::vector<PhysicalRun> runs(cfg.n_runs);
    for_index(Execution::Parallel, cfg.n_runs, [&](std::size_t i) {
      Rng rng(base + i);
      runs[i] = run_protocol_physical(cfg.qubit, setup, rng, cfg.max_rounds, true);
    });
    std::size_t succ = 0;
    double rounds = 0.0, fmin = std::numeric_limits<double>::infinity();
    {
      auto os = open_out(cfg, v.name + "_runs.jsonl");
      for (std::size_t i = 0; i < runs.size(); ++i) {
        json j = runs[i].outcome.to_json();
        j["run"] = i;
        j["seed"] = base + i;
        j["first_jump_gate"] = runs[i].first_jump_gate;
        os << j.dump() << '\n';
        auto ts = open_out(cfg, fmt::format("{}_traj_{}.csv", v.name, i));
        write_overlap_csv(ts, runs[i].series);
        if (runs[i].outcome.status == ProtocolStatus::Success) {
          ++succ;
          rounds += runs[i].outcome.rounds;
          fmin = std::min(fmin, runs[i].outcome.fidelity);
        }
      }
    }

    json vj = {{"name", v.name},
               {"kappa_loss", v.kappa_loss},
               {"Gamma", v.Gamma},
               {"rabi_scale", v.rabi_scale},
               {"step_ii_overlap", cond.step_ii_overlap},
               {"p_no_detected_error", cond.p_no_detected_error},
               {"pre_teleport_overlap", cond.pre_teleport_overlap},
               {"conditional_min_fidelity", cond.min_fidelity},
               {"trajectories",
                {{"n", runs.size()},
                 {"successes", succ},
                 {"mean_rounds", succ ? rounds / static_cast<double>(succ) : 0.0},
                 {"min_fidelity", succ ? fmin : 0.0}}}};
    fmt::print(out, "[{}] kappa'={} Gamma={} rabi x{}: step-ii overlap {:.6g}, P(no detected error) {:.4g}, "
               "conditional fidelity {:.10g}\n",
               v.name, v.kappa_loss, v.Gamma, v.rabi_scale, cond.step_ii_overlap, cond.p_no_detected_error,
               cond.min_fidelity);
    if (v.kappa_loss == 0.0 && v.Gamma == 0.0 && v.rabi_scale == 1.0) {
      ok &= check(checks, out, v.name + ".step_ii_overlap", cond.step_ii_overlap,
                  cfg.thresholds.min_ideal_step_ii_overlap, true);
    }
    if (cond.p_no_detected_error > 0.0) {
      ok &= check(checks, out, v.name + ".conditional_min_fidelity", cond.min_fidelity,
                  cfg.thresholds.min_conditional_fidelity, true);
    }

    if ((v.kappa_loss > 0.0 || v.Gamma > 0.0) && cfg.jump_search_max > 0) {
      const auto js = find_step_iv_jump(cfg.qubit, setup, base + 500000ULL, cfg.jump_search_max);
      json jj = {{"found", js.found}};
      if (js.found) {
        jj["seed"] = js.seed;
        jj["t_jump"] = js.t_jump;
        jj["min_backup_overlap_after_jump"] = js.min_backup_after;
        auto os = open_out(cfg, v.name + "_jump_iv.csv");
        write_overlap_csv(os, js.series);
        ok &= check(checks, out, v.name + ".backup_overlap_after_step_iv_jump", js.min_backup_after,
                    cfg.thresholds.min_backup_overlap_after_jump, true);
      } else {
        fmt::print(out, "  no step-(iv) jump within {} seeds\n", cfg.jump_search_max);
      }
      vj["step_iv_jump"] = jj;
    }
    variants.push_back(vj);
  }
  summary["variants"] = variants;
  summary["checks"] = checks;
  write_json(cfg, "summary.json", summary);
  return ok ? kExitOk : kExitThreshold;
}

// ---- environment -------------------------------------------------------------------

int cmd_env_check(const RunConfig& cfg, std::ostream& out) {
  json models = json::array();
  json checks = json::array();
  bool ok = true;
  for (const auto& spec : cfg.env_models) {
    const auto c = check_commuting(spec.model);
    const auto r = env_protocol(cfg.qubit, spec.model);
    fmt::print(out, "[{}] {}: residual {:.3g} -> {}; protocol fidelity {:.12g} (deficit {:.3g})\n", spec.name,
               spec.kind, c.residual, c.pass ? "commuting" : "NOT commuting", r.min_fidelity, 1.0 - r.min_fidelity);
    models.push_back({{"name", spec.name},
                      {"kind", spec.kind},
                      {"env_dim", spec.model.env_dim()},
                      {"residual", c.residual},
                      {"commuting", c.pass},
                      {"p_no_detected_error", r.p_no_detected_error},
                      {"min_fidelity", r.min_fidelity},
                      {"fidelity_deficit", 1.0 - r.min_fidelity}});
    if (c.pass) {
      ok &= check(checks, out, spec.name + ".min_fidelity", r.min_fidelity, cfg.thresholds.min_commuting_fidelity,
                  true);
    }
  }
  write_json(cfg, "env_check.json",
             {{"mode", "env-check"}, {"qubit", qubit_json(cfg.qubit)}, {"models", models}, {"checks", checks}});
  return ok ? kExitOk : kExitThreshold;
}

// ---- oracle ------------------------------------------------------------------------

int cmd_oracle_compare(const RunConfig& cfg, std::ostream& out) {
  const auto model = make_toy_model(cfg.toy.params);
  IntegratorConfig ic;
  ic.dt = cfg.toy.dt;
  ic.t_final = cfg.toy.t_final;
  ic.sample_stride = static_cast<int>(std::lround(cfg.toy.t_final / cfg.toy.checkpoints / cfg.toy.dt));
  const auto cmp = compare_with_lindblad(model, ic, cfg.n_runs, cfg.seed);
  {
    auto os = open_out(cfg, "oracle_compare.csv");
    os << "t,trace_distance\n";
    for (std::size_t k = 0; k < cmp.times.size(); ++k) {
      os << fmt::format("{:.17g},{:.17g}\n", cmp.times[k], cmp.trace_distance[k]);
    }
  }
  fmt::print(out, "oracle-compare: {} trajectories, {} checkpoints, max trace distance {:.4g}\n", cmp.n_traj,
             cmp.times.size(), cmp.max_trace_distance);
  json checks = json::array();
  const bool ok = check(checks, out, "max_trace_distance", cmp.max_trace_distance, cfg.thresholds.max_trace_distance,
                        false);
  json j = cmp.to_json();
  j["mode"] = "oracle-compare";
  j["seed"] = cfg.seed;
  j["checks"] = checks;
  write_json(cfg, "oracle_compare.json", j);
  return ok ? kExitOk : kExitThreshold;
}

int run_command(const RunConfig& cfg, std::ostream& out) {
  switch (cfg.mode) {
    case Mode::Protocol: return cmd_protocol(cfg, out);
    case Mode::Physical: return cmd_physical(cfg, out);
    case Mode::EnvCheck: return cmd_env_check(cfg, out);
    case Mode::PulseDesign: return cmd_pulse_design(cfg, out);
    case Mode::OracleCompare: return cmd_oracle_compare(cfg, out);
  }
  return kExitConfig;
}

}  // namespace qlink
