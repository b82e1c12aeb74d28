#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "qlink/commands.hpp"
#include "qlink/config.hpp"

using namespace qlink;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text, Mode mode = Mode::Protocol, const CliOverrides& cli = {}) {
  try {
    (void)parse_config(text, "cfg.json", mode, cli);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("qlink_test_config_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(QLINK_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Parse, SeedIsRequired) {
  EXPECT_NE(error_of("{}").find("seed"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": -3})").find("non-negative"), std::string::npos);
  CliOverrides cli;
  cli.seed = 4;
  EXPECT_EQ(parse_config("{}", "cfg.json", Mode::Protocol, cli).seed, 4u);
}

TEST(Parse, UnknownKeyNamesItsLine) {
  const std::string text = "{\n  \"seed\": 1,\n  \"noise\": {\n    \"p_nojumpp\": 0.3\n  }\n}\n";
  const auto msg = error_of(text);
  EXPECT_NE(msg.find("cfg.json:4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("p_nojumpp"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key"), std::string::npos) << msg;
}

TEST(Parse, InvalidJsonNamesItsLine) {
  const auto msg = error_of("{\n \"seed\": 1,\n \"qubit\": {\"c0\": 1, \n}\n");
  EXPECT_NE(msg.find("cfg.json:4"), std::string::npos) << msg;
}

TEST(Parse, Defaults) {
  const auto p = parse_config(R"({"seed": 1})", "x", Mode::Protocol);
  EXPECT_EQ(p.n_runs, 100u);
  EXPECT_EQ(p.max_rounds, 50);
  EXPECT_EQ(p.qubit.c0, cplx(1.0, 0.0));
  EXPECT_EQ(parse_config(R"({"seed": 1})", "x", Mode::Physical).n_runs, 2u);
  EXPECT_EQ(parse_config(R"({"seed": 1})", "x", Mode::OracleCompare).n_runs, 5000u);
  EXPECT_EQ(p.variants.size(), default_physical_variants().size());
  EXPECT_EQ(p.env_models.size(), default_env_models().size());
}

TEST(Parse, QubitNormalization) {
  // Amplitudes given to three digits are renormalized.
  const auto q = parse_config(R"({"seed": 1, "qubit": {"c0_over_sqrt2": [-0.29, 0.25], "c1_over_sqrt2": [0.36, 0.473]}})",
                              "x", Mode::Protocol)
                     .qubit;
  EXPECT_NEAR(std::norm(q.c0) + std::norm(q.c1), 1.0, 1e-15);
  EXPECT_NEAR(std::arg(q.c0), std::arg(cplx(-0.29, 0.25)), 1e-15);
  EXPECT_NE(error_of(R"({"seed": 1, "qubit": {"c0": 1, "c1": 1}})").find("not normalized"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "qubit": {"c0": 1, "c1_over_sqrt2": 0}})").find("either"), std::string::npos);
}

TEST(Parse, RatesAreInUnitsOfKappa) {
  EXPECT_NE(error_of(R"({"seed": 1, "physical": {"kappa": 2}})", Mode::Physical).find("kappa must be 1"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "pulses": {"duration": 5}})", Mode::Physical).find("10/kappa"), std::string::npos);
  EXPECT_EQ(error_of(R"({"seed": 1, "pulses": {"duration": 5}})", Mode::Protocol), "");
}

TEST(Parse, ModeMustMatch) {
  EXPECT_NE(error_of(R"({"seed": 1, "mode": "physical"})", Mode::Protocol).find("physical"), std::string::npos);
  EXPECT_THROW((void)mode_from_string("bogus"), ConfigError);
  for (Mode m : {Mode::Protocol, Mode::Physical, Mode::EnvCheck, Mode::PulseDesign, Mode::OracleCompare}) {
    EXPECT_EQ(mode_from_string(to_string(m)), m);
  }
}

TEST(Parse, Overrides) {
  CliOverrides cli;
  cli.set = {"noise.p_nojump=0.25", "noise.sampler.kind=point", "output_dir=elsewhere"};
  cli.n_runs = 7;
  const auto c = parse_config(R"({"seed": 1, "noise": {"p_nojump": 0.9}})", "x", Mode::Protocol, cli);
  EXPECT_DOUBLE_EQ(c.noise.p_nojump, 0.25);
  EXPECT_EQ(c.noise.sampler.kind, SamplerSpec::Kind::PointMass);
  EXPECT_EQ(c.output_dir, "elsewhere");
  EXPECT_EQ(c.n_runs, 7u);
  cli.set = {"noise.p_nojump=2"};
  EXPECT_NE(error_of(R"({"seed": 1})", Mode::Protocol, cli).find("p_nojump"), std::string::npos);
  cli.set = {"novalue"};
  EXPECT_THROW((void)parse_config(R"({"seed": 1})", "x", Mode::Protocol, cli), ConfigError);
}

TEST(Parse, ShippedConfigsAreValid) {
  const fs::path dir(QLINK_CONFIG_DIR);
  const std::pair<const char*, Mode> files[] = {{"protocol.json", Mode::Protocol},
                                                {"physical.json", Mode::Physical},
                                                {"env_check.json", Mode::EnvCheck},
                                                {"pulse_design.json", Mode::PulseDesign},
                                                {"oracle_compare.json", Mode::OracleCompare}};
  for (const auto& [name, mode] : files) {
    EXPECT_NO_THROW((void)load_config((dir / name).string(), mode)) << name;
  }
  const auto phys = load_config((dir / "physical.json").string(), Mode::Physical);
  EXPECT_EQ(phys.variants.size(), 5u);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  const auto dir = scratch("bad");
  {
    std::ofstream(dir / "bad.json") << "{\n  \"seed\": 1,\n  \"bogus\": 3\n}\n";
  }
  EXPECT_EQ(run_cli("protocol --config " + (dir / "bad.json").string(), dir / "log"), kExitConfig);
  EXPECT_NE(slurp(dir / "log").find("bad.json:3"), std::string::npos) << slurp(dir / "log");
  EXPECT_EQ(run_cli("protocol", dir / "log"), kExitConfig);
}

TEST(Cli, ProtocolOutputIsDeterministic) {
  const auto dir = scratch("det");
  const std::string base = "protocol --config " + (fs::path(QLINK_CONFIG_DIR) / "protocol.json").string() +
                           " --n-runs 200 --seed 77 --out ";
  ASSERT_EQ(run_cli(base + (dir / "a").string(), dir / "log_a"), kExitOk) << slurp(dir / "log_a");
  ASSERT_EQ(run_cli(base + (dir / "b").string(), dir / "log_b"), kExitOk) << slurp(dir / "log_b");
  const auto a = slurp(dir / "a" / "runs.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "runs.jsonl"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 200);
  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  EXPECT_EQ(summary.at("seed"), 77);
  EXPECT_EQ(summary.at("n_runs"), 200);
}

TEST(Cli, ThresholdFailureExitsWithThree) {
  const auto dir = scratch("thr");
  const std::string args = "protocol --config " + (fs::path(QLINK_CONFIG_DIR) / "protocol.json").string() +
                           " --n-runs 20 --out " + (dir / "o").string() +
                           " --override noise.p_nojump=0 max_rounds=1 thresholds.min_success_rate=1";
  EXPECT_EQ(run_cli(args, dir / "log"), kExitThreshold) << slurp(dir / "log");
}

TEST(Cli, EnvCheckWritesItsReport) {
  const auto dir = scratch("env");
  ASSERT_EQ(run_cli("env-check --config " + (fs::path(QLINK_CONFIG_DIR) / "env_check.json").string() + " --out " +
                        (dir / "o").string(),
                    dir / "log"),
            kExitOk)
      << slurp(dir / "log");
  const auto j = nlohmann::json::parse(slurp(dir / "o" / "env_check.json"));
  ASSERT_EQ(j.at("models").size(), 3u);
  for (const auto& m : j.at("models")) {
    if (m.at("commuting")) {
      EXPECT_NEAR(m.at("min_fidelity").get<double>(), 1.0, 1e-9);
    } else {
      EXPECT_LT(m.at("min_fidelity").get<double>(), 0.99);
    }
  }
}
