#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "esmc/core.hpp"
#include "esmc/diagnostics.hpp"
#include "esmc/samplers.hpp"
#include "esmc/targets.hpp"

namespace esmc::experiment {

/// Invalid configuration; the message names the offending field.
class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kConfigFailure = 1, kIoFailure = 2, kNumericFailure = 3 };

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

/// Read from ESMC_LOG: quiet|info|debug or 0|1|2. Defaults to info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("ESMC_LOG");
    if (!env) return LogLevel::kInfo;
    const std::string_view v(env);
    if (v == "quiet" || v == "0" || v == "off") return LogLevel::kQuiet;
    if (v == "debug" || v == "2") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log(LogLevel level, const std::string& message) {
  static std::mutex mutex;
  if (level > log_level() || level == LogLevel::kQuiet) return;
  std::lock_guard lock(mutex);
  std::clog << "[esmc] " << message << '\n';
}

// ---------------------------------------------------------------------------
// Configuration

/// Sampler choice with every scale parameter; only those of the named
/// sampler are used. An empty covariance means the identity.
struct SamplerSpec {
  std::string name = "esmc";
  double h = 0.35;
  double duration = 10.0;
  double dt = 1.0;
  Matrix proposal_covariance;
};

struct ExperimentConfig {
  std::string label = "run";
  targets::TargetSpec target;
  SamplerSpec sampler;
  int chains = 5;
  std::int64_t samples = 5000;
  double burn_in_fraction = 0.1;
  std::uint64_t seed = 1;
  std::int64_t max_lag = 50;
  InitialState init = InitKind::kStandardNormal;
  std::filesystem::path output = "esmc-out";
  bool emit_trace = false;
  unsigned threads = 0;
  std::optional<diagnostics::BinSpec> kl_bins;
  std::optional<int> angular_sectors;
};

inline SamplerParams make_sampler(const SamplerSpec& spec, Index dim) {
  if (spec.name == "rwmc") {
    if (spec.proposal_covariance.size() == 0) return RwmcParams{MassMatrix::identity(dim)};
    const Matrix& c = spec.proposal_covariance;
    if (c.cols() == 1 && c.rows() == 1) return RwmcParams{MassMatrix::diagonal(Vector::Constant(dim, c(0, 0)))};
    if (c.cols() == 1) return RwmcParams{MassMatrix::diagonal(c.col(0))};
    return RwmcParams{MassMatrix::dense(c)};
  }
  if (spec.name == "hmc") return HmcParams{spec.dt, spec.duration};
  if (spec.name == "esmc") return EsmcParams{spec.h, spec.duration};
  throw ConfigError("sampler.name: unknown sampler '" + spec.name + "' (expected rwmc, hmc or esmc)");
}

inline std::optional<diagnostics::BinSpec> default_kl_bins(const targets::TargetSpec& target) {
  if (target.name == "bimodal1d") return diagnostics::BinSpec{-12.0, 10.0, 50};
  return std::nullopt;
}

inline std::optional<int> default_angular_sectors(const targets::TargetSpec& target) {
  if (target.name == "flower") return target.petals;
  return std::nullopt;
}

/// Field-level validation; throws ConfigError.
inline void validate(const ExperimentConfig& config) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw ConfigError(config.label + ": " + field + ": " + why);
  };
  if (config.chains < 1) fail("chains", "must be >= 1");
  if (config.samples < 2) fail("samples", "must be >= 2");
  if (!(config.burn_in_fraction >= 0.0 && config.burn_in_fraction < 1.0)) fail("burn_in", "must be in [0, 1)");
  const auto burn_in = std::llround(static_cast<double>(config.samples) * config.burn_in_fraction);
  if (config.samples - burn_in < 2) fail("samples", "fewer than two samples remain after burn-in");
  if (config.max_lag < 0) fail("max_lag", "must be >= 0");
  if (config.kl_bins) {
    try {
      config.kl_bins->validate();
    } catch (const UsageError& e) {
      fail("kl_bins", e.what());
    }
  }
  if (config.angular_sectors && *config.angular_sectors < 1) fail("angular_sectors", "must be >= 1");
  try {
    const auto target = targets::make_target(config.target);
    const auto params = make_sampler(config.sampler, target.dim());
    esmc::validate(params);
    if (const auto* fixed = std::get_if<Vector>(&config.init); fixed && fixed->size() != target.dim())
      fail("init", "length " + std::to_string(fixed->size()) + " does not match target dimension " +
                       std::to_string(target.dim()));
    if (const auto* kind = std::get_if<InitKind>(&config.init);
        kind && *kind == InitKind::kExactDraw && !target.has_exact_sampler())
      fail("init", "target '" + config.target.name + "' has no exact sampler");
  } catch (const ConfigError&) {
    throw;
  } catch (const UsageError& e) {
    throw ConfigError(config.label + ": " + e.what());
  }
}

/// Optional overrides, filled from a config file and then from flags.
struct ConfigPatch {
  std::optional<std::string> preset;
  std::optional<std::string> target;
  std::optional<Index> dim;
  std::optional<double> gamma;
  std::optional<int> petals;
  std::optional<std::string> sampler;
  std::optional<double> h, duration, dt;
  std::optional<Matrix> cov;
  std::optional<int> chains;
  std::optional<std::int64_t> samples;
  std::optional<double> burn_in;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_lag;
  std::optional<InitialState> init;
  std::optional<std::filesystem::path> output;
  std::optional<bool> emit_trace;
  std::optional<unsigned> threads;
  std::optional<diagnostics::BinSpec> kl_bins;
  std::optional<int> angular_sectors;

  /// Later values win.
  void merge(const ConfigPatch& other) {
    auto take = [](auto& mine, const auto& theirs) {
      if (theirs) mine = theirs;
    };
    take(preset, other.preset);
    take(target, other.target);
    take(dim, other.dim);
    take(gamma, other.gamma);
    take(petals, other.petals);
    take(sampler, other.sampler);
    take(h, other.h);
    take(duration, other.duration);
    take(dt, other.dt);
    take(cov, other.cov);
    take(chains, other.chains);
    take(samples, other.samples);
    take(burn_in, other.burn_in);
    take(seed, other.seed);
    take(max_lag, other.max_lag);
    take(init, other.init);
    take(output, other.output);
    take(emit_trace, other.emit_trace);
    take(threads, other.threads);
    take(kl_bins, other.kl_bins);
    take(angular_sectors, other.angular_sectors);
  }
};

/// Applies run-level overrides. Preset runs (`keep_design`) keep their target
/// and sampler; scale overrides still apply and each sampler reads only its own.
inline void apply(const ConfigPatch& patch, ExperimentConfig& config, bool keep_design = false) {
  if (!keep_design) {
    if (patch.target) config.target.name = *patch.target;
    if (patch.dim) config.target.dim = *patch.dim;
    if (patch.gamma) config.target.gamma = *patch.gamma;
    if (patch.petals) config.target.petals = *patch.petals;
    if (patch.sampler) config.sampler.name = *patch.sampler;
  }
  if (patch.h) config.sampler.h = *patch.h;
  if (patch.duration) config.sampler.duration = *patch.duration;
  if (patch.dt) config.sampler.dt = *patch.dt;
  if (patch.cov) config.sampler.proposal_covariance = *patch.cov;
  if (patch.chains) config.chains = *patch.chains;
  if (patch.samples) config.samples = *patch.samples;
  if (patch.burn_in) config.burn_in_fraction = *patch.burn_in;
  if (patch.seed) config.seed = *patch.seed;
  if (patch.max_lag) config.max_lag = *patch.max_lag;
  if (patch.init) config.init = *patch.init;
  if (patch.output) config.output = *patch.output;
  if (patch.emit_trace) config.emit_trace = *patch.emit_trace;
  if (patch.threads) config.threads = *patch.threads;
  if (patch.kl_bins) config.kl_bins = patch.kl_bins;
  if (patch.angular_sectors) config.angular_sectors = patch.angular_sectors;
}

namespace detail {

inline Matrix parse_covariance(const nlohmann::json& j) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ConfigError("sampler.cov: expected a number, a vector or a matrix");
  if (j.front().is_number()) {
    Matrix c(static_cast<Index>(j.size()), 1);
    for (std::size_t i = 0; i < j.size(); ++i) c(static_cast<Index>(i), 0) = j[i].get<double>();
    return c;
  }
  const auto n = static_cast<Index>(j.size());
  Matrix c(n, n);
  for (Index r = 0; r < n; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n) throw ConfigError("sampler.cov: matrix must be square");
    for (Index col = 0; col < n; ++col) c(r, col) = row[static_cast<std::size_t>(col)].get<double>();
  }
  return c;
}

inline InitialState parse_init(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "standard_normal") return InitKind::kStandardNormal;
    if (s == "exact") return InitKind::kExactDraw;
    throw ConfigError("init: expected 'standard_normal', 'exact' or a vector");
  }
  if (!j.is_array()) throw ConfigError("init: expected 'standard_normal', 'exact' or a vector");
  Vector q(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) q[static_cast<Index>(i)] = j[i].get<double>();
  return q;
}

inline void reject_unknown(const nlohmann::json& object, std::initializer_list<std::string_view> known,
                           const std::string& where) {
  for (const auto& [key, value] : object.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + key + ": unknown key");
  }
}

}  // namespace detail

/// Parses a JSON config document into a patch.
inline ConfigPatch parse_config(const nlohmann::json& doc) {
  using detail::reject_unknown;
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(doc,
                 {"preset", "target", "sampler", "chains", "samples", "burn_in", "seed", "max_lag", "init", "out",
                  "emit_trace", "threads", "kl_bins", "angular_sectors"},
                 "");
  ConfigPatch patch;
  auto field = [&](const nlohmann::json& obj, const char* key, auto& slot, const std::string& path) {
    if (!obj.contains(key)) return;
    using T = typename std::decay_t<decltype(slot)>::value_type;
    try {
      slot = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path + key + ": wrong type");
    }
  };
  field(doc, "preset", patch.preset, "");
  if (doc.contains("target")) {
    const auto& t = doc["target"];
    if (t.is_string()) {
      patch.target = t.get<std::string>();
    } else {
      if (!t.is_object()) throw ConfigError("target: expected a name or an object");
      reject_unknown(t, {"name", "dim", "gamma", "m"}, "target.");
      field(t, "name", patch.target, "target.");
      field(t, "dim", patch.dim, "target.");
      field(t, "gamma", patch.gamma, "target.");
      field(t, "m", patch.petals, "target.");
    }
  }
  if (doc.contains("sampler")) {
    const auto& s = doc["sampler"];
    if (s.is_string()) {
      patch.sampler = s.get<std::string>();
    } else {
      if (!s.is_object()) throw ConfigError("sampler: expected a name or an object");
      reject_unknown(s, {"name", "h", "T", "dt", "cov"}, "sampler.");
      field(s, "name", patch.sampler, "sampler.");
      field(s, "h", patch.h, "sampler.");
      field(s, "T", patch.duration, "sampler.");
      field(s, "dt", patch.dt, "sampler.");
      if (s.contains("cov")) patch.cov = detail::parse_covariance(s["cov"]);
    }
  }
  field(doc, "chains", patch.chains, "");
  field(doc, "samples", patch.samples, "");
  field(doc, "burn_in", patch.burn_in, "");
  field(doc, "seed", patch.seed, "");
  field(doc, "max_lag", patch.max_lag, "");
  if (doc.contains("init")) patch.init = detail::parse_init(doc["init"]);
  if (doc.contains("out")) {
    std::optional<std::string> out;
    field(doc, "out", out, "");
    patch.output = *out;
  }
  field(doc, "emit_trace", patch.emit_trace, "");
  field(doc, "threads", patch.threads, "");
  if (doc.contains("kl_bins")) {
    const auto& b = doc["kl_bins"];
    if (!b.is_object()) throw ConfigError("kl_bins: expected {lo, hi, bins}");
    reject_unknown(b, {"lo", "hi", "bins"}, "kl_bins.");
    try {
      patch.kl_bins = diagnostics::BinSpec{b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("bins").get<int>()};
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("kl_bins: need numeric lo, hi and integer bins");
    }
  }
  field(doc, "angular_sectors", patch.angular_sectors, "");
  return patch;
}

inline ConfigPatch load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Presets

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1", "mixture2d", "highdim", "flower"};
  return names;
}

/// Expands a named experiment into its runs. Labels are "<preset>/<detail>/<sampler>".
inline std::vector<ExperimentConfig> expand_preset(const std::string& name) {
  std::vector<ExperimentConfig> runs;
  auto add = [&](ExperimentConfig base, const std::string& stem, SamplerSpec rwmc, SamplerSpec hmc, SamplerSpec esmc) {
    for (auto* s : {&rwmc, &hmc, &esmc}) {
      ExperimentConfig c = base;
      c.sampler = *s;
      c.label = stem + "/" + s->name;
      runs.push_back(std::move(c));
    }
  };
  auto rwmc = [](Matrix cov) { return SamplerSpec{"rwmc", 0.0, 0.0, 0.0, std::move(cov)}; };
  auto hmc = [](double dt, double T) { return SamplerSpec{"hmc", 0.0, T, dt, {}}; };
  auto esmc = [](double h, double T) { return SamplerSpec{"esmc", h, T, 0.0, {}}; };
  auto scalar = [](double v) { return Matrix::Constant(1, 1, v); };

  if (name == "table1") {
    ExperimentConfig base;
    base.target.name = "bimodal1d";
    base.chains = 5;
    base.samples = 5000;
    base.burn_in_fraction = 0.1;
    add(base, "table1", rwmc(scalar(1.0)), hmc(1.0, 10.0), esmc(0.35, 10.0));
  } else if (name == "mixture2d") {
    ExperimentConfig base;
    base.target.name = "mixture2d";
    base.chains = 6;
    base.samples = 1000;
    base.burn_in_fraction = 0.1;
    add(base, "mixture2d", rwmc(scalar(0.1)), hmc(1.0, 10.0), esmc(1.0, 10.0));
  } else if (name == "highdim") {
    for (Index n : {4, 8, 16, 32, 64}) {
      ExperimentConfig base;
      base.target.name = "diag_gaussian";
      base.target.dim = n;
      base.chains = 5;
      base.samples = 5000;
      base.burn_in_fraction = 0.1;
      base.init = InitKind::kExactDraw;
      const double nd = static_cast<double>(n);
      add(base, "highdim/N" + std::to_string(n), rwmc(scalar(1.0 / (nd * nd))), hmc(1.0 / nd, 5.0),
          esmc(std::sqrt(nd) / 2.0, 5.0));
    }
  } else if (name == "flower") {
    for (std::int64_t len : {1000, 2000, 3000, 4000, 5000}) {
      ExperimentConfig base;
      base.target.name = "flower";
      base.target.gamma = 1.0 / 3.0;
      base.target.petals = 15;
      base.chains = 1;
      base.samples = len;
      base.burn_in_fraction = 0.1;
      add(base, "flower/L" + std::to_string(len), rwmc(scalar(0.1)), hmc(0.3, 0.3), esmc(1.0, 0.3));
    }
  } else {
    throw ConfigError("preset: unknown preset '" + name + "' (expected table1, mixture2d, highdim or flower)");
  }
  return runs;
}

/// Builds the runs described by a patch: a preset expansion with overrides,
/// or a single run.
inline std::vector<ExperimentConfig> build_runs(const ConfigPatch& patch) {
  std::vector<ExperimentConfig> runs;
  if (patch.preset) {
    runs = expand_preset(*patch.preset);
    if (patch.sampler) {
      std::erase_if(runs, [&](const ExperimentConfig& c) { return c.sampler.name != *patch.sampler; });
      if (runs.empty()) throw ConfigError("sampler.name: unknown sampler '" + *patch.sampler + "'");
    }
    for (auto& c : runs) apply(patch, c, true);
  } else {
    ExperimentConfig c;
    apply(patch, c);
    c.label = c.target.name + "/" + c.sampler.name;
    runs.push_back(std::move(c));
  }
  for (auto& c : runs) {
    if (!c.kl_bins) c.kl_bins = default_kl_bins(c.target);
    if (!c.angular_sectors) c.angular_sectors = default_angular_sectors(c.target);
    validate(c);
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Running

struct RunSummary {
  ExperimentConfig config;
  std::vector<Chain> chains;
  diagnostics::ChainStats pooled;
  std::vector<diagnostics::ChainStats> per_chain;
  double wall_seconds = 0.0;
  std::int64_t retries = 0;
  std::int64_t divergences = 0;
  std::int64_t total_segments = 0;
  double max_energy_drift = 0.0;
};

inline diagnostics::StatsOptions stats_options(const ExperimentConfig& config, const targets::AnyTarget& target) {
  diagnostics::StatsOptions opt;
  opt.max_lag = config.max_lag;
  opt.kl_bins = config.kl_bins;
  opt.angular_sectors = config.angular_sectors;
  opt.exact = target.exact_moments();
  if (config.sampler.name == "esmc") opt.duration = config.sampler.duration;
  return opt;
}

/// Runs every chain of one configuration and computes its diagnostics.
inline RunSummary run_experiment(const ExperimentConfig& config) {
  validate(config);
  const auto target = targets::make_target(config.target);
  const auto params = make_sampler(config.sampler, target.dim());
  ChainSettings settings;
  settings.samples = config.samples;
  settings.burn_in_fraction = config.burn_in_fraction;
  settings.init = config.init;
  settings.record_trace = config.emit_trace;

  log(LogLevel::kInfo, config.label + ": " + std::to_string(config.chains) + " chains x " +
                           std::to_string(config.samples) + " samples");
  const auto start = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.config = config;
  summary.chains = run_chains(target, params, settings, config.seed, config.chains, config.threads);
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const auto opt = stats_options(config, target);
  summary.pooled = diagnostics::chain_stats(std::span<const Chain>(summary.chains), target, opt);
  for (const auto& c : summary.chains) {
    summary.per_chain.push_back(diagnostics::chain_stats(std::span<const Chain>(&c, 1), target, opt));
    summary.retries += c.retries;
    summary.divergences += c.divergences;
    summary.total_segments += c.total_segments();
    summary.max_energy_drift = std::max(summary.max_energy_drift, c.max_energy_drift);
  }
  if (config.sampler.name == "esmc" && summary.pooled.acceptance != 1.0)
    throw IntegratorError(config.label + ": ESMC acceptance ratio is not 1");
  log(LogLevel::kInfo, config.label + ": acceptance " + std::to_string(summary.pooled.acceptance) + ", " +
                           std::to_string(summary.wall_seconds) + " s");
  return summary;
}

// ---------------------------------------------------------------------------
// Serialization

/// 17 significant digits: parses back to the same double.
inline std::string format_double17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Flat chain file: chain_id, step, accepted, q_0..q_{N-1}, hamiltonian, segments.
inline void write_chain_csv(std::ostream& out, std::span<const Chain> chains) {
  if (chains.empty()) return;
  const Index dim = chains.front().initial.size();
  out << "chain_id,step,accepted";
  for (Index k = 0; k < dim; ++k) out << ",q_" << k;
  out << ",hamiltonian,segments\n";
  for (const auto& c : chains) {
    for (std::int64_t i = 0; i < c.size(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      out << c.chain_id << ',' << i << ',' << int{c.accepted[u]};
      for (Index k = 0; k < dim; ++k) out << ',' << format_double17(c.samples[u][k]);
      out << ',';
      if (!std::isnan(c.hamiltonians[u])) out << format_double17(c.hamiltonians[u]);
      out << ',';
      if (c.segments[u] >= 0) out << c.segments[u];
      out << '\n';
    }
  }
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <class T>
T parse_number(std::string_view text, std::int64_t line) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is correctly rounded and locale-free.
    const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
    if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
      throw IoError("chain csv line " + std::to_string(line) + ": bad number '" + std::string(text) + "'");
  } else {
    const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
    if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
      throw IoError("chain csv line " + std::to_string(line) + ": bad integer '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace detail

/// Reads a chain file back. Burn-in is not stored, so it comes back as 0.
inline std::vector<Chain> read_chain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("chain csv: empty input");
  const auto header = detail::split_csv(line);
  if (header.size() < 6 || header[0] != "chain_id") throw IoError("chain csv: unexpected header");
  const auto dim = static_cast<Index>(header.size() - 5);
  std::vector<Chain> chains;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (static_cast<Index>(f.size()) != dim + 5)
      throw IoError("chain csv line " + std::to_string(line_no) + ": wrong field count");
    const auto id = detail::parse_number<std::uint64_t>(f[0], line_no);
    if (chains.empty() || chains.back().chain_id != id) {
      chains.emplace_back();
      chains.back().chain_id = id;
    }
    Chain& c = chains.back();
    c.accepted.push_back(static_cast<std::uint8_t>(detail::parse_number<int>(f[2], line_no)));
    Vector q(dim);
    for (Index k = 0; k < dim; ++k) q[k] = detail::parse_number<double>(f[static_cast<std::size_t>(3 + k)], line_no);
    c.samples.push_back(std::move(q));
    const auto h = f[static_cast<std::size_t>(3 + dim)];
    c.hamiltonians.push_back(h.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : detail::parse_number<double>(h, line_no));
    const auto s = f[static_cast<std::size_t>(4 + dim)];
    c.segments.push_back(s.empty() ? -1 : detail::parse_number<std::int64_t>(s, line_no));
  }
  for (auto& c : chains) {
    if (!c.samples.empty()) c.initial = c.samples.front();
  }
  return chains;
}

inline void write_trace_csv(std::ostream& out, std::span<const Chain> chains) {
  out << "chain_id,step,t_start,t_end,event,V_level\n";
  for (const auto& c : chains)
    for (const auto& r : c.trace)
      out << c.chain_id << ',' << r.step << ',' << format_double17(r.t_start) << ',' << format_double17(r.t_end)
          << ',' << to_string(r.event) << ',' << format_double17(r.level) << '\n';
}

namespace detail {

inline nlohmann::json to_json(const Vector& v) {
  auto a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const diagnostics::ChainStats& s) {
  return {{"acceptance", s.acceptance},
          {"acf", s.acf},
          {"acf_degenerate", s.acf_degenerate},
          {"mean", detail::to_json(s.mean)},
          {"cov_diag", detail::to_json(s.cov_diag)},
          {"e1", detail::optional_json(s.e1)},
          {"e2", detail::optional_json(s.e2)},
          {"kl", detail::optional_json(s.kl)},
          {"dt_effective", detail::optional_json(s.dt_effective)},
          {"angular_std", detail::optional_json(s.angular_std)}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sampler{{"name", c.sampler.name}};
  if (c.sampler.name == "esmc") {
    sampler["h"] = c.sampler.h;
    sampler["T"] = c.sampler.duration;
  } else if (c.sampler.name == "hmc") {
    sampler["dt"] = c.sampler.dt;
    sampler["T"] = c.sampler.duration;
  } else {
    const Matrix& m = c.sampler.proposal_covariance;
    if (m.size() == 0) {
      sampler["cov"] = 1.0;
    } else if (m.size() == 1) {
      sampler["cov"] = m(0, 0);
    } else {
      auto rows = nlohmann::json::array();
      for (Index r = 0; r < m.rows(); ++r) rows.push_back(detail::to_json(m.row(r).transpose()));
      sampler["cov"] = m.cols() == 1 ? detail::to_json(m.col(0)) : rows;
    }
  }
  nlohmann::json init;
  if (const auto* q = std::get_if<Vector>(&c.init)) {
    init = detail::to_json(*q);
  } else {
    init = std::get<InitKind>(c.init) == InitKind::kExactDraw ? "exact" : "standard_normal";
  }
  nlohmann::json j{{"label", c.label},
                   {"target", {{"name", c.target.name}}},
                   {"sampler", sampler},
                   {"chains", c.chains},
                   {"samples", c.samples},
                   {"burn_in", c.burn_in_fraction},
                   {"seed", c.seed},
                   {"max_lag", c.max_lag},
                   {"init", init},
                   {"emit_trace", c.emit_trace}};
  if (c.target.name == "diag_gaussian") j["target"]["dim"] = c.target.dim;
  if (c.target.name == "flower") {
    j["target"]["gamma"] = c.target.gamma;
    j["target"]["m"] = c.target.petals;
  }
  if (c.kl_bins) j["kl_bins"] = {{"lo", c.kl_bins->lo}, {"hi", c.kl_bins->hi}, {"bins", c.kl_bins->bins}};
  if (c.angular_sectors) j["angular_sectors"] = *c.angular_sectors;
  return j;
}

inline nlohmann::json to_json(const RunSummary& s) {
  auto per_chain = nlohmann::json::array();
  for (std::size_t i = 0; i < s.chains.size(); ++i) {
    auto j = to_json(s.per_chain[i]);
    const auto& c = s.chains[i];
    j["chain_id"] = c.chain_id;
    j["burn_in"] = c.burn_in;
    j["retries"] = c.retries;
    j["divergences"] = c.divergences;
    j["segments"] = c.total_segments();
    j["max_energy_drift"] = c.max_energy_drift;
    per_chain.push_back(std::move(j));
  }
  return {{"schema_version", kSchemaVersion},
          {"config", to_json(s.config)},
          {"wall_clock_seconds", s.wall_seconds},
          {"retries", s.retries},
          {"divergences", s.divergences},
          {"total_segments", s.total_segments},
          {"max_energy_drift", s.max_energy_drift},
          {"pooled", to_json(s.pooled)},
          {"per_chain", per_chain}};
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Writes chains.csv, summary.json and plot data under <output>/<label>/.
inline std::filesystem::path write_run(const RunSummary& s) {
  const auto dir = s.config.output / s.config.label;
  const auto chains = std::span<const Chain>(s.chains);
  {
    const auto path = dir / "chains.csv";
    auto out = detail::open_output(path);
    write_chain_csv(out, chains);
    detail::finish(out, path);
  }
  {
    const auto path = dir / "summary.json";
    auto out = detail::open_output(path);
    out << to_json(s).dump(2) << '\n';
    detail::finish(out, path);
  }
  {
    const auto path = dir / "acf.csv";
    auto out = detail::open_output(path);
    out << "lag";
    for (const auto& c : s.chains) out << ",chain_" << c.chain_id;
    out << '\n';
    for (std::size_t lag = 0; lag < s.per_chain.front().acf.size(); ++lag) {
      out << lag;
      for (const auto& st : s.per_chain) out << ',' << (lag < st.acf.size() ? format_double17(st.acf[lag]) : "");
      out << '\n';
    }
    detail::finish(out, path);
  }
  const auto target = targets::make_target(s.config.target);
  if (s.config.kl_bins && target.dim() == 1) {
    const auto path = dir / "histogram.csv";
    auto out = detail::open_output(path);
    std::vector<double> xs;
    for (const auto& v : diagnostics::pooled_samples(chains)) xs.push_back(v[0]);
    const auto& spec = *s.config.kl_bins;
    const auto p = diagnostics::histogram(xs, spec);
    const auto q = diagnostics::target_bin_masses(target, spec);
    out << "bin_lo,bin_hi,empirical,target\n";
    for (int b = 0; b < spec.bins; ++b)
      out << format_double17(spec.lo + b * spec.width()) << ',' << format_double17(spec.lo + (b + 1) * spec.width())
          << ',' << format_double17(p[static_cast<std::size_t>(b)]) << ','
          << format_double17(q[static_cast<std::size_t>(b)]) << '\n';
    detail::finish(out, path);
  }
  if (s.config.angular_sectors && target.dim() == 2) {
    const auto path = dir / "sectors.csv";
    auto out = detail::open_output(path);
    const auto fractions = diagnostics::sector_fractions(diagnostics::pooled_samples(chains), *s.config.angular_sectors);
    out << "sector,fraction\n";
    for (std::size_t j = 0; j < fractions.size(); ++j) out << j << ',' << format_double17(fractions[j]) << '\n';
    detail::finish(out, path);
  }
  if (s.config.emit_trace && s.config.sampler.name == "esmc") {
    const auto path = dir / "trace.csv";
    auto out = detail::open_output(path);
    write_trace_csv(out, chains);
    detail::finish(out, path);
  }
  return dir;
}

/// One row per run: the comparison tables and per-N error tables.
inline void write_table(std::ostream& out, std::span<const RunSummary> runs) {
  out << "label,target,dim,sampler,chains,samples,acceptance,e1,e2,kl,kl_last_chain,dt_effective,angular_std,"
         "total_segments,retries,divergences,wall_clock_seconds\n";
  auto opt = [](const std::optional<double>& x) { return x ? format_double17(*x) : std::string(); };
  for (const auto& r : runs) {
    const auto target = targets::make_target(r.config.target);
    out << r.config.label << ',' << r.config.target.name << ',' << target.dim() << ',' << r.config.sampler.name << ','
        << r.config.chains << ',' << r.config.samples << ',' << format_double17(r.pooled.acceptance) << ','
        << opt(r.pooled.e1) << ',' << opt(r.pooled.e2) << ',' << opt(r.pooled.kl) << ','
        << opt(r.per_chain.back().kl) << ',' << opt(r.pooled.dt_effective) << ',' << opt(r.pooled.angular_std) << ','
        << r.total_segments << ',' << r.retries << ',' << r.divergences << ',' << format_double17(r.wall_seconds)
        << '\n';
  }
}

inline void write_table_file(const std::filesystem::path& path, std::span<const RunSummary> runs) {
  auto out = detail::open_output(path);
  write_table(out, runs);
  detail::finish(out, path);
}

}  // namespace esmc::experiment
