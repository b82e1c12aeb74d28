#include "qlink/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace qlink {

using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Protocol: return "protocol";
    case Mode::Physical: return "physical";
    case Mode::EnvCheck: return "env-check";
    case Mode::PulseDesign: return "pulse-design";
    case Mode::OracleCompare: return "oracle-compare";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::Protocol, Mode::Physical, Mode::EnvCheck, Mode::PulseDesign, Mode::OracleCompare}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError(fmt::format("unknown mode '{}'", s));
}

cplx complex_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return {j[0].get<double>(), j[1].get<double>()};
  }
  throw std::invalid_argument("expected a number or [re, im]");
}

json complex_to_json(cplx z) { return json::array({z.real(), z.imag()}); }

std::vector<PhysicalVariant> default_physical_variants() {
  return {{"ideal", 0.0, 0.0, 1.0},
          {"loss_1", 1.0, 0.0, 1.0},
          {"loss_10", 10.0, 0.0, 1.0},
          {"loss_1_gamma_1", 1.0, 1.0, 1.0},
          {"loss_1_gamma_1_rabi_0.9", 1.0, 1.0, 0.9}};
}

namespace {

DenseMatrix pauli_x() {
  DenseMatrix m = DenseMatrix::Zero(2, 2);
  m(0, 1) = m(1, 0) = 1.0;
  return m;
}

DenseMatrix pauli_z() {
  DenseMatrix m = DenseMatrix::Identity(2, 2);
  m(1, 1) = -1.0;
  return m;
}

DenseMatrix rotation(double theta, double phi) {
  DenseMatrix m(2, 2);
  m << std::cos(theta), -std::polar(1.0, -phi) * std::sin(theta), std::polar(1.0, phi) * std::sin(theta),
      std::cos(theta);
  return m;
}

DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

/// Two reservoirs A (x) B: the first-branch map T acts on A only, the
/// excited-branch maps S, G1, G2 on B only.
EnvironmentModel disjoint_model() {
  const DenseMatrix id = DenseMatrix::Identity(2, 2);
  EnvironmentModel m;
  m.xi = Vector::Zero(4);
  m.xi << 0.6, cplx{0.0, 0.48}, 0.36, cplx{-0.4, 0.352};
  m.xi.normalize();
  m.T = kron(0.9 * rotation(0.7, 0.3), id);
  m.S = kron(id, 0.8 * rotation(-0.4, 1.1));
  m.G1 = kron(id, 0.4 * rotation(1.3, -0.2));
  m.G2 = kron(id, 0.3 * pauli_x());
  return m;
}

/// Both maps diagonal in one basis (pure dephasing of a qubit reservoir).
EnvironmentModel commuting_model() {
  EnvironmentModel m;
  m.xi = Vector::Zero(2);
  m.xi << std::sqrt(0.3), cplx{0.0, std::sqrt(0.7)};
  m.T = DenseMatrix::Zero(2, 2);
  m.T.diagonal() << std::polar(0.95, 0.4), std::polar(0.85, -1.2);
  m.S = DenseMatrix::Zero(2, 2);
  m.S.diagonal() << std::polar(0.9, 0.7), std::polar(0.8, 0.2);
  m.G1 = 0.3 * DenseMatrix::Identity(2, 2);
  m.G2 = 0.2 * pauli_z();
  return m;
}

/// T = sigma_x, S = sigma_z on a reservoir qubit starting in |0>:
/// (ST - TS)|0> = -2|1>.
EnvironmentModel noncommuting_model() {
  EnvironmentModel m;
  m.xi = Vector::Zero(2);
  m.xi[0] = 1.0;
  m.T = pauli_x();
  m.S = pauli_z();
  m.G1 = DenseMatrix::Zero(2, 2);
  m.G2 = DenseMatrix::Zero(2, 2);
  return m;
}

}  // namespace

std::vector<EnvModelSpec> default_env_models() {
  return {{"disjoint_reservoirs", "disjoint", disjoint_model()},
          {"dephasing", "commuting", commuting_model()},
          {"sigma_x_sigma_z", "noncommuting", noncommuting_model()}};
}

namespace {

/// Line of the last key of `path` in the source text (best effort, 0 if
/// not found). Keys are searched in order, each after the previous hit.
int locate(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  std::size_t hit = std::string::npos;
  for (const auto& key : path) {
    if (!key.empty() && key.front() == '[') continue;
    const auto p = text.find("\"" + key + "\"", pos);
    if (p == std::string::npos) break;
    hit = p;
    pos = p + key.size() + 2;
  }
  if (hit == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(hit), '\n'));
}

class Ctx {
 public:
  Ctx(const std::string& text, std::string source, std::set<std::string> overridden)
      : text_(text), source_(std::move(source)), overridden_(std::move(overridden)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& msg) const {
    std::string dotted;
    for (const auto& k : path) dotted += (dotted.empty() || k.front() == '[' ? "" : ".") + k;
    std::string where;
    for (const auto& o : overridden_) {
      if (dotted == o || dotted.rfind(o + ".", 0) == 0 || dotted.rfind(o + "[", 0) == 0) where = "--override " + o;
    }
    if (where.empty()) {
      const int line = locate(text_, path);
      where = line > 0 ? fmt::format("{}:{}", source_, line) : source_;
    }
    throw ConfigError(fmt::format("{}: '{}': {}", where, dotted, msg));
  }

 private:
  const std::string& text_;
  std::string source_;
  std::set<std::string> overridden_;
};

/// Object reader with path tracking and unknown-key rejection.
class Obj {
 public:
  Obj(const json& j, std::vector<std::string> path, const Ctx& ctx) : j_(j), path_(std::move(path)), ctx_(ctx) {
    if (!j_.is_object()) ctx_.fail(path_, "expected an object");
  }
  ~Obj() = default;

  [[nodiscard]] bool has(const std::string& k) const {
    seen_.insert(k);
    return j_.contains(k) && !j_.at(k).is_null();
  }
  [[nodiscard]] std::vector<std::string> at(const std::string& k) const {
    auto p = path_;
    p.push_back(k);
    return p;
  }
  [[nodiscard]] const json& raw(const std::string& k) const {
    seen_.insert(k);
    return j_.at(k);
  }

  double num(const std::string& k, double def) const {
    if (!has(k)) return def;
    const auto& v = j_.at(k);
    if (!v.is_number()) ctx_.fail(at(k), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) ctx_.fail(at(k), "must be finite");
    return x;
  }
  double num_in(const std::string& k, double def, double lo, double hi) const {
    const double x = num(k, def);
    if (x < lo || x > hi) ctx_.fail(at(k), fmt::format("{} is outside [{}, {}]", x, lo, hi));
    return x;
  }
  double positive(const std::string& k, double def) const {
    const double x = num(k, def);
    if (!(x > 0.0)) ctx_.fail(at(k), fmt::format("must be positive, got {}", x));
    return x;
  }
  double nonneg(const std::string& k, double def) const {
    const double x = num(k, def);
    if (x < 0.0) ctx_.fail(at(k), fmt::format("must be >= 0, got {}", x));
    return x;
  }
  long long integer(const std::string& k, long long def, long long lo, long long hi) const {
    if (!has(k)) return def;
    const auto& v = j_.at(k);
    if (!v.is_number_integer()) ctx_.fail(at(k), "expected an integer");
    const auto x = v.get<long long>();
    if (x < lo || x > hi) ctx_.fail(at(k), fmt::format("{} is outside [{}, {}]", x, lo, hi));
    return x;
  }
  bool boolean(const std::string& k, bool def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_boolean()) ctx_.fail(at(k), "expected true or false");
    return j_.at(k).get<bool>();
  }
  std::string str(const std::string& k, const std::string& def) const {
    if (!has(k)) return def;
    if (!j_.at(k).is_string()) ctx_.fail(at(k), "expected a string");
    return j_.at(k).get<std::string>();
  }
  cplx complex(const std::string& k, cplx def) const {
    if (!has(k)) return def;
    try {
      return complex_from_json(j_.at(k));
    } catch (const std::invalid_argument& e) {
      ctx_.fail(at(k), e.what());
    }
  }
  [[nodiscard]] Obj sub(const std::string& k) const { return Obj(raw(k), at(k), ctx_); }

  /// Rejects keys that no accessor asked about.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) ctx_.fail(at(k), "unknown key");
    }
  }

  const Ctx& ctx() const { return ctx_; }

 private:
  const json& j_;
  std::vector<std::string> path_;
  const Ctx& ctx_;
  mutable std::set<std::string> seen_;
};

DenseMatrix read_matrix(const Obj& o, const std::string& k, Eigen::Index d) {
  const auto& v = o.raw(k);
  if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != d) {
    o.ctx().fail(o.at(k), fmt::format("expected {} rows", d));
  }
  DenseMatrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d) {
      o.ctx().fail(o.at(k), fmt::format("row {} must have {} entries", i, d));
    }
    for (Eigen::Index c = 0; c < d; ++c) {
      try {
        m(i, c) = complex_from_json(row[static_cast<std::size_t>(c)]);
      } catch (const std::invalid_argument& e) {
        o.ctx().fail(o.at(k), fmt::format("entry ({}, {}): {}", i, c, e.what()));
      }
    }
  }
  return m;
}

QubitInput read_qubit(const Obj& o) {
  QubitInput q;
  const bool scaled = o.has("c0_over_sqrt2") || o.has("c1_over_sqrt2");
  const double f = scaled ? std::sqrt(2.0) : 1.0;
  if (scaled && (o.has("c0") || o.has("c1"))) o.ctx().fail(o.at("c0"), "give either c0/c1 or c0_over_sqrt2/c1_over_sqrt2");
  q.c0 = f * o.complex(scaled ? "c0_over_sqrt2" : "c0", 1.0);
  q.c1 = f * o.complex(scaled ? "c1_over_sqrt2" : "c1", 0.0);
  const double tol = o.num_in("normalization_tolerance", 1e-3, 0.0, 0.5);
  const double n2 = std::norm(q.c0) + std::norm(q.c1);
  if (std::abs(n2 - 1.0) > tol) {
    o.ctx().fail(o.at(scaled ? "c0_over_sqrt2" : "c0"),
                 fmt::format("qubit is not normalized: |c0|^2 + |c1|^2 = {:.6g} (tolerance {})", n2, tol));
  }
  const double n = std::sqrt(n2);
  q.c0 /= n;
  q.c1 /= n;
  o.finish();
  return q;
}

ChannelParams read_channel_params(const Obj& o) {
  ChannelParams p;
  p.alpha = o.complex("alpha", p.alpha);
  p.beta = o.complex("beta", p.beta);
  p.gamma1 = o.complex("gamma1", p.gamma1);
  p.gamma2 = o.complex("gamma2", p.gamma2);
  p.jumped = o.boolean("jumped", false);
  try {
    p.validate(1e-12);
  } catch (const std::invalid_argument& e) {
    o.ctx().fail(o.at("alpha"), e.what());
  }
  o.finish();
  return p;
}

NoiseConfig read_noise(const Obj& o) {
  NoiseConfig n;
  n.p_nojump = o.num_in("p_nojump", n.p_nojump, 0.0, 1.0);
  n.correlated = o.boolean("correlated", n.correlated);
  if (o.has("sampler")) {
    const Obj s = o.sub("sampler");
    const auto kind = s.str("kind", "uniform");
    if (kind == "uniform") {
      n.sampler.kind = SamplerSpec::Kind::Uniform;
    } else if (kind == "point") {
      n.sampler.kind = SamplerSpec::Kind::PointMass;
    } else {
      s.ctx().fail(s.at("kind"), "expected 'uniform' or 'point'");
    }
    n.sampler.abs_min = s.num_in("abs_min", n.sampler.abs_min, 0.0, 1.0);
    n.sampler.abs_max = s.num_in("abs_max", n.sampler.abs_max, 0.0, 1.0);
    if (n.sampler.abs_min > n.sampler.abs_max) s.ctx().fail(s.at("abs_min"), "abs_min exceeds abs_max");
    n.sampler.gamma_scale = s.nonneg("gamma_scale", n.sampler.gamma_scale);
    if (s.has("point")) n.sampler.point = read_channel_params(s.sub("point"));
    s.finish();
  }
  try {
    n.validate();
  } catch (const std::invalid_argument& e) {
    o.ctx().fail(o.at("sampler"), e.what());
  }
  o.finish();
  return n;
}

PhysicalParams read_physical(const Obj& o) {
  PhysicalParams p;
  p.g = o.nonneg("g", p.g);
  p.kappa = o.positive("kappa", p.kappa);
  if (std::abs(p.kappa - 1.0) > 1e-12) o.ctx().fail(o.at("kappa"), "all rates are in units of kappa; kappa must be 1");
  p.kappa_loss_1 = o.nonneg("kappa_loss_1", p.kappa_loss_1);
  p.kappa_loss_2 = o.nonneg("kappa_loss_2", p.kappa_loss_2);
  p.Gamma = o.nonneg("Gamma", p.Gamma);
  p.Delta = o.num("Delta", p.Delta);
  p.delta = o.num("delta", p.delta);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    o.ctx().fail(o.at("Delta"), e.what());
  }
  o.finish();
  return p;
}

EnvModelSpec read_env_model(const Obj& o) {
  EnvModelSpec spec;
  spec.kind = o.str("kind", "explicit");
  spec.name = o.str("name", spec.kind);
  if (spec.kind == "disjoint") {
    spec.model = disjoint_model();
  } else if (spec.kind == "commuting") {
    spec.model = commuting_model();
  } else if (spec.kind == "noncommuting") {
    spec.model = noncommuting_model();
  } else if (spec.kind == "scalar") {
    spec.model = EnvironmentModel::scalar(read_channel_params(o.sub("params")));
  } else if (spec.kind == "explicit") {
    if (!o.has("xi")) o.ctx().fail(o.at("xi"), "explicit model needs xi, T, S, G1, G2");
    const auto& xi = o.raw("xi");
    if (!xi.is_array() || xi.empty()) o.ctx().fail(o.at("xi"), "expected a non-empty array");
    const auto d = static_cast<Eigen::Index>(xi.size());
    spec.model.xi = Vector(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      try {
        spec.model.xi[i] = complex_from_json(xi[static_cast<std::size_t>(i)]);
      } catch (const std::invalid_argument& e) {
        o.ctx().fail(o.at("xi"), e.what());
      }
    }
    spec.model.T = read_matrix(o, "T", d);
    spec.model.S = read_matrix(o, "S", d);
    spec.model.G1 = read_matrix(o, "G1", d);
    spec.model.G2 = read_matrix(o, "G2", d);
  } else {
    o.ctx().fail(o.at("kind"), "expected disjoint, commuting, noncommuting, scalar or explicit");
  }
  try {
    spec.model.validate();
  } catch (const std::exception& e) {
    o.ctx().fail(o.at("kind"), e.what());
  }
  o.finish();
  return spec;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("--override '{}': expected key.path=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError(fmt::format("--override '{}': empty key segment", assignment));
    if (!node->is_object()) throw ConfigError(fmt::format("--override '{}': '{}' is not an object", assignment, parts[i - 1]));
    if (i + 1 == parts.size()) {
      (*node)[parts[i]] = value;
    } else {
      node = &(*node)[parts[i]];
      if (node->is_null()) *node = json::object();
    }
  }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source_name, Mode mode, const CliOverrides& cli) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError(fmt::format("{}:{}: invalid JSON: {}", source_name, line, e.what()));
  }
  if (!doc.is_object()) throw ConfigError(fmt::format("{}: top level must be a JSON object", source_name));
  std::set<std::string> overridden;
  for (const auto& s : cli.set) {
    apply_override(doc, s);
    overridden.insert(s.substr(0, s.find('=')));
  }
  const Ctx ctx(text, source_name, overridden);
  const Obj root(doc, {}, ctx);

  RunConfig cfg;
  cfg.mode = mode;
  if (root.has("mode") && root.str("mode", "") != to_string(mode)) {
    ctx.fail({"mode"}, fmt::format("config is for '{}' but the command is '{}'", root.str("mode", ""), to_string(mode)));
  }
  if (cli.seed) {
    (void)root.has("seed");
    cfg.seed = *cli.seed;
  } else if (root.has("seed")) {
    const auto& s = root.raw("seed");
    if (!s.is_number_unsigned()) ctx.fail({"seed"}, "expected a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  } else {
    ctx.fail({"seed"}, "missing: give an explicit seed (there is no clock seeding)");
  }

  const std::size_t default_runs = mode == Mode::OracleCompare ? 5000 : mode == Mode::Physical ? 2 : 100;
  cfg.n_runs = static_cast<std::size_t>(root.integer("n_runs", static_cast<long long>(default_runs), 1, 100000000));
  if (cli.n_runs) cfg.n_runs = *cli.n_runs;
  if (cfg.n_runs < 1) throw ConfigError("--n-runs must be >= 1");
  cfg.output_dir = root.str("output_dir", cfg.output_dir);
  if (cli.output_dir) cfg.output_dir = *cli.output_dir;
  cfg.max_rounds = static_cast<int>(root.integer("max_rounds", cfg.max_rounds, 1, 1000000));

  if (root.has("qubit")) cfg.qubit = read_qubit(root.sub("qubit"));
  if (root.has("noise")) cfg.noise = read_noise(root.sub("noise"));
  if (root.has("physical")) cfg.physical = read_physical(root.sub("physical"));

  if (root.has("pulses")) {
    const Obj p = root.sub("pulses");
    if (p.has("file")) cfg.pulse_file = p.str("file", "");
    cfg.gate_duration = p.positive("duration", cfg.gate_duration);
    cfg.design.output_dt = p.positive("output_dt", cfg.design.output_dt);
    cfg.design.design_dt = p.positive("design_dt", cfg.design.design_dt);
    cfg.design.max_iterations = static_cast<int>(p.integer("max_iterations", cfg.design.max_iterations, 1, 100000));
    cfg.design.min_transfer = p.num_in("min_transfer", cfg.design.min_transfer, 0.0, 1.0);
    cfg.design.verify_cutoff = static_cast<int>(p.integer("verify_cutoff", cfg.design.verify_cutoff, 1, 4));
    p.finish();
  }
  if (root.has("integrator")) {
    const Obj it = root.sub("integrator");
    cfg.integrator.dt = it.positive("dt", cfg.integrator.dt);
    cfg.integrator.sample_stride = static_cast<int>(it.integer("sample_stride", cfg.integrator.sample_stride, 1, 1 << 30));
    cfg.integrator.norm_bisection_tol = it.positive("norm_bisection_tol", cfg.integrator.norm_bisection_tol);
    it.finish();
  }
  cfg.photon_cutoff = static_cast<int>(root.integer("photon_cutoff", cfg.photon_cutoff, 1, 4));
  cfg.jump_search_max = static_cast<int>(root.integer("jump_search_max", cfg.jump_search_max, 0, 100000));

  if (root.has("variants")) {
    const auto& arr = root.raw("variants");
    if (!arr.is_array() || arr.empty()) ctx.fail({"variants"}, "expected a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Obj v(arr[i], {"variants", fmt::format("[{}]", i)}, ctx);
      PhysicalVariant pv;
      pv.name = v.str("name", fmt::format("variant_{}", i));
      pv.kappa_loss = v.nonneg("kappa_loss", 0.0);
      pv.Gamma = v.nonneg("Gamma", 0.0);
      pv.rabi_scale = v.positive("rabi_scale", 1.0);
      v.finish();
      cfg.variants.push_back(pv);
    }
  } else {
    cfg.variants = default_physical_variants();
  }

  if (root.has("environment")) {
    const Obj env = root.sub("environment");
    if (env.has("models")) {
      const auto& arr = env.raw("models");
      if (!arr.is_array() || arr.empty()) ctx.fail({"environment", "models"}, "expected a non-empty array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        cfg.env_models.push_back(read_env_model(Obj(arr[i], {"environment", "models", fmt::format("[{}]", i)}, ctx)));
      }
    }
    env.finish();
  }
  if (cfg.env_models.empty()) cfg.env_models = default_env_models();

  if (root.has("toy")) {
    const Obj t = root.sub("toy");
    cfg.toy.params.g = t.num("g", cfg.toy.params.g);
    cfg.toy.params.kappa = t.positive("kappa", cfg.toy.params.kappa);
    cfg.toy.params.omega = t.num("omega", cfg.toy.params.omega);
    cfg.toy.params.detuning = t.num("detuning", cfg.toy.params.detuning);
    cfg.toy.params.photon_cutoff = static_cast<int>(t.integer("photon_cutoff", cfg.toy.params.photon_cutoff, 1, 3));
    cfg.toy.t_final = t.positive("t_final", cfg.toy.t_final);
    cfg.toy.checkpoints = static_cast<int>(t.integer("checkpoints", cfg.toy.checkpoints, 1, 10000));
    cfg.toy.dt = t.positive("dt", cfg.toy.dt);
    const double per = cfg.toy.t_final / cfg.toy.checkpoints / cfg.toy.dt;
    if (std::abs(per - std::round(per)) > 1e-6) {
      ctx.fail({"toy", "dt"}, "t_final / checkpoints must be a whole number of steps");
    }
    t.finish();
  }

  if (root.has("thresholds")) {
    const Obj t = root.sub("thresholds");
    auto& th = cfg.thresholds;
    if (t.has("min_success_rate")) th.min_success_rate = t.num_in("min_success_rate", 0.0, 0.0, 1.0);
    if (t.has("min_fidelity")) th.min_fidelity = t.num_in("min_fidelity", 0.0, 0.0, 1.0);
    th.min_ideal_step_ii_overlap = t.num_in("min_ideal_step_ii_overlap", th.min_ideal_step_ii_overlap, 0.0, 1.0);
    th.min_conditional_fidelity = t.num_in("min_conditional_fidelity", th.min_conditional_fidelity, 0.0, 1.0);
    th.min_backup_overlap_after_jump =
        t.num_in("min_backup_overlap_after_jump", th.min_backup_overlap_after_jump, 0.0, 1.0);
    th.min_commuting_fidelity = t.num_in("min_commuting_fidelity", th.min_commuting_fidelity, 0.0, 1.0);
    th.max_trace_distance = t.num_in("max_trace_distance", th.max_trace_distance, 0.0, 1.0);
    t.finish();
  }
  root.finish();

  if (mode == Mode::Physical || mode == Mode::PulseDesign) {
    if (!(cfg.gate_duration >= 10.0 / cfg.physical.kappa)) {
      ctx.fail({"pulses", "duration"}, "gate duration must be at least 10/kappa");
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path, Mode mode, const CliOverrides& cli) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, mode, cli);
}

}  // namespace qlink
