// Command-line front end: one subcommand per experiment stage.

#include <CLI11.hpp>

#include <iostream>

#include "deepanen/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigFailure = 1, kDataFailure = 2, kDiverged = 3 };

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

deepanen::ExperimentConfig load(const Options& o) {
  auto cfg = deepanen::load_config(o.config);
  if (o.seed) {
    // Appended last so the override is also what the provenance header shows.
    cfg.set("seed", std::to_string(*o.seed));
    cfg.set("train.seed", std::to_string(*o.seed));
    cfg.set("synth.seed", std::to_string(*o.seed));
  }
  return cfg;
}

int run(const std::string& cmd, const Options& o) {
  using namespace deepanen;
  const auto cfg = load(o);
  const fs::path out = o.out;
  if (cmd == "synth") {
    const auto r = cmd_synth(cfg, out);
    std::cout << "wrote " << r.forecasts.string() << ", " << r.observations.string() << ", " << r.manifest.string()
              << '\n';
  } else if (cmd == "ingest") {
    const auto s = cmd_ingest(cfg, out);
    std::cout << s.stations << " stations, " << s.variables << " variables, " << s.cycles << " cycles, " << s.leads
              << " leads; " << s.missing_forecasts << " missing forecast values, " << s.missing_observations
              << " missing observations\n";
  } else if (cmd == "train") {
    const auto r = cmd_train(cfg, out);
    std::cout << "trained " << r.result.iterations_run << " iterations"
              << (r.result.early_stopped ? " (early stop)" : "") << "; best at iteration "
              << r.result.checkpoint.meta.iterations << "; wrote " << r.checkpoint.string() << '\n';
  } else if (cmd == "predict") {
    const auto r = cmd_predict(cfg, out);
    std::cout << r.summary.predicted << " of " << r.summary.targets << " targets predicted, " << r.summary.skipped
              << " skipped, " << r.summary.failed << " failed; wrote " << r.predictions.string() << '\n';
  } else if (cmd == "verify") {
    const auto r = cmd_verify(cfg, out);
    const auto& a = r.report_data.aggregate;
    std::cout << r.pairs << " pairs (" << r.excluded_missing_obs << " without observation): rmse "
              << format_short(a.rmse) << ", crps " << format_short(a.crps) << "; wrote " << r.report.string() << '\n';
  } else if (cmd == "experiment-search-length") {
    const auto rows = cmd_experiment_search_length(cfg, out);
    for (const auto& r : rows)
      std::cout << to_string(r.method) << " split " << r.split << ": rmse " << format_short(r.rmse) << ", crps "
                << format_short(r.crps) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analog ensemble forecasting with a learned similarity metric"};
  app.require_subcommand(1);
  Options opt;
  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "validate the forecast and observation archives"},
      {"synth", "generate a synthetic archive with a known predictor subset"},
      {"train", "train the embedding network on reverse-analog triplets"},
      {"predict", "build analog ensembles for the test period"},
      {"verify", "score predictions against observations"},
      {"experiment-search-length", "accuracy versus search repository length"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "key=value experiment config")->required();
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "overrides every seed in the config");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigFailure;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, opt);
  } catch (const deepanen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const deepanen::DivergenceError& e) {
    std::cerr << "diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataFailure;
  }
}
