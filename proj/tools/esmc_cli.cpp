// Experiment runner: named presets or a single configured run, written as
// chain CSVs, summary JSON and plot-ready tables.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "esmc/experiment.hpp"

namespace ex = esmc::experiment;

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Energy-stepping, HMC and random-walk Monte Carlo experiments"};
  app.set_help_flag("--help", "print this help and exit");
  app.set_version_flag("--version", "esmc 1.0.0");

  ex::ConfigPatch flags;
  std::string config_path, out, init, cov_text;
  double gamma = 0, h = 0, duration = 0, dt = 0, burn_in = 0;
  long long dim = 0, samples = 0, max_lag = 0;
  int chains = 0, petals = 0;
  unsigned long long seed = 0;
  unsigned threads = 0;
  std::string preset, target, sampler;
  bool emit_trace = false, list_presets = false;

  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_option("--preset", preset, "table1 | mixture2d | highdim | flower");
  app.add_option("--target", target, "bimodal1d | mixture2d | diag_gaussian | flower | kepler");
  app.add_option("--dim", dim, "diag_gaussian dimension");
  app.add_option("--gamma", gamma, "flower petal angle");
  app.add_option("--m", petals, "flower petal count");
  app.add_option("--sampler", sampler, "rwmc | hmc | esmc (with --preset: run only this sampler)");
  app.add_option("--h", h, "ESMC energy step");
  app.add_option("--T", duration, "HMC/ESMC trajectory length");
  app.add_option("--dt", dt, "HMC leapfrog step");
  app.add_option("--cov", cov_text, "RWMC proposal covariance: scalar times identity, or comma-separated diagonal");
  app.add_option("--chains", chains, "number of chains");
  app.add_option("--samples", samples, "samples per chain, burn-in included");
  app.add_option("--burn-in", burn_in, "burn-in fraction in [0, 1)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--max-lag", max_lag, "largest autocorrelation lag");
  app.add_option("--init", init, "standard_normal | exact | comma-separated start point");
  app.add_option("--out", out, "output directory");
  app.add_flag("--emit-trace", emit_trace, "write ESMC segment traces");
  app.add_option("--threads", threads, "worker threads (0: all cores)");
  app.add_flag("--list-presets", list_presets, "print preset names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ex::kOk : ex::kConfigFailure;
  }
  if (list_presets) {
    for (const auto& p : ex::preset_names()) std::cout << p << '\n';
    return ex::kOk;
  }

  auto given = [&](const char* name) { return app.count(name) > 0; };
  if (given("--preset")) flags.preset = preset;
  if (given("--target")) flags.target = target;
  if (given("--dim")) flags.dim = dim;
  if (given("--gamma")) flags.gamma = gamma;
  if (given("--m")) flags.petals = petals;
  if (given("--sampler")) flags.sampler = sampler;
  if (given("--h")) flags.h = h;
  if (given("--T")) flags.duration = duration;
  if (given("--dt")) flags.dt = dt;
  if (given("--chains")) flags.chains = chains;
  if (given("--samples")) flags.samples = samples;
  if (given("--burn-in")) flags.burn_in = burn_in;
  if (given("--seed")) flags.seed = seed;
  if (given("--max-lag")) flags.max_lag = max_lag;
  if (given("--out")) flags.output = out;
  if (emit_trace) flags.emit_trace = true;
  if (given("--threads")) flags.threads = threads;
  auto parse_list = [](const std::string& text, const char* what) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse("[" + text + "]");
    } catch (const nlohmann::json::exception&) {
      throw ex::ConfigError(std::string(what) + ": expected comma-separated numbers");
    }
    return j.size() == 1 ? j.front() : j;
  };
  if (given("--cov")) flags.cov = ex::detail::parse_covariance(parse_list(cov_text, "cov"));
  if (given("--init")) {
    if (init == "standard_normal" || init == "exact") {
      flags.init = ex::detail::parse_init(init);
    } else {
      auto j = parse_list(init, "init");
      flags.init = ex::detail::parse_init(j.is_array() ? j : nlohmann::json::array({j}));
    }
  }

  ex::ConfigPatch patch;
  if (!config_path.empty()) patch = ex::load_config(config_path);
  patch.merge(flags);

  const auto runs = ex::build_runs(patch);
  std::vector<ex::RunSummary> summaries;
  for (const auto& config : runs) {
    summaries.push_back(ex::run_experiment(config));
    const auto dir = ex::write_run(summaries.back());
    ex::log(ex::LogLevel::kDebug, "wrote " + dir.string());
  }
  const auto root = runs.front().output;
  const std::string table_name = patch.preset ? *patch.preset + ".csv" : "table.csv";
  ex::write_table_file(root / table_name, summaries);
  ex::write_table(std::cout, summaries);
  return ex::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ex::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ex::kIoFailure;
  } catch (const esmc::UsageError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ex::kConfigFailure;
  } catch (const esmc::IntegratorError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return ex::kNumericFailure;
  } catch (const esmc::EvaluationError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return ex::kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ex::kIoFailure;
  }
}
