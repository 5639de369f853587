#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>

#include "deepanen/archive.hpp"
#include "deepanen/classic_metric.hpp"
#include "deepanen/config.hpp"
#include "deepanen/embed_net.hpp"
#include "deepanen/ensemble.hpp"
#include "deepanen/synth.hpp"
#include "deepanen/trainer.hpp"
#include "deepanen/verify.hpp"

namespace deepanen {

namespace fs = std::filesystem;

/// Runs fn(i) for i in [0, n) on up to hardware_concurrency workers. Callers
/// write results into slot i, so output order never depends on scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

inline std::ofstream open_output(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  return out;
}

inline std::string require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("config key '") + key + "' is required");
  if (!fs::exists(value)) throw ConfigError(std::string(key) + " file '" + value + "' does not exist");
  return value;
}

}  // namespace detail

/// Archives plus the station/lead selection resolved from a config.
struct ExperimentData {
  ForecastArchive fcst;
  ObservationArchive obs;
  std::vector<std::size_t> stations;
  std::vector<std::size_t> leads;

  IndexRange cycles(const std::optional<TimeRange>& r, const char* what) const {
    if (!r) throw ConfigError(std::string(what) + " period is not configured");
    if (r->end <= r->start) throw ConfigError(std::string(what) + " period is empty");
    return fcst.cycles_between(r->start, r->end);
  }
};

inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  d.fcst = load_forecasts(detail::require_path(cfg.forecasts, "forecasts"));
  d.obs = load_observations(detail::require_path(cfg.observations, "observations"));
  if (cfg.stations.empty()) {
    for (std::size_t s = 0; s < d.fcst.n_stations(); ++s) d.stations.push_back(s);
  } else {
    for (const auto& id : cfg.stations) {
      const auto s = d.fcst.station_index(id);
      if (!s) throw ConfigError("station '" + id + "' not in forecast archive");
      d.stations.push_back(*s);
    }
  }
  if (cfg.leads.empty()) {
    for (std::size_t l = 0; l < d.fcst.n_leads(); ++l) d.leads.push_back(l);
  } else {
    for (const auto lead : cfg.leads) {
      const auto l = d.fcst.lead_index(lead);
      if (!l) throw ConfigError("lead " + std::to_string(lead) + " s not in forecast archive");
      d.leads.push_back(*l);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// synth / ingest

struct SynthOutputs {
  fs::path forecasts, observations, manifest;
};

inline SynthOutputs cmd_synth(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto ds = generate(cfg.synth);
  SynthOutputs o{out_dir / "forecasts.csv", out_dir / "observations.csv", out_dir / "manifest.txt"};
  auto f = detail::open_output(o.forecasts);
  write_forecasts(f, ds.forecasts);
  auto ob = detail::open_output(o.observations);
  write_observations(ob, ds.observations);
  auto m = detail::open_output(o.manifest);
  write_manifest(m, cfg.synth, ds.manifest);
  return o;
}

struct IngestSummary {
  std::size_t stations = 0, variables = 0, cycles = 0, leads = 0, missing_forecasts = 0;
  std::size_t obs_stations = 0, obs_times = 0, missing_observations = 0;
};

/// Loads and validates both archives and writes a summary.
inline IngestSummary cmd_ingest(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto d = load_experiment_data(cfg);
  IngestSummary s;
  s.stations = d.fcst.n_stations();
  s.variables = d.fcst.n_variables();
  s.cycles = d.fcst.n_cycles();
  s.leads = d.fcst.n_leads();
  s.missing_forecasts = d.fcst.missing_count();
  s.obs_stations = d.obs.n_stations();
  s.obs_times = d.obs.n_times();
  s.missing_observations = static_cast<std::size_t>(std::count_if(d.obs.values.begin(), d.obs.values.end(), is_missing));
  auto out = detail::open_output(out_dir / "ingest_summary.txt");
  out << "stations=" << s.stations << "\nvariables=" << s.variables << "\ncycles=" << s.cycles << "\nleads=" << s.leads
      << "\nmissing_forecasts=" << s.missing_forecasts << "\nobservation_stations=" << s.obs_stations
      << "\nobservation_times=" << s.obs_times << "\nmissing_observations=" << s.missing_observations << '\n';
  return s;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutputs {
  fs::path checkpoint, log;
  TrainResult result;
};

inline TrainResult train_from_config(const ExperimentConfig& cfg, const ExperimentData& d) {
  TrainConfig tc = cfg.train_cfg;
  tc.half_window = cfg.half_window;
  return train(d.fcst, d.obs, d.stations, d.leads, d.cycles(cfg.train, "training"), tc);
}

inline TrainOutputs cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto d = load_experiment_data(cfg);
  TrainOutputs o;
  o.checkpoint = cfg.checkpoint.empty() ? out_dir / "model.ckpt" : fs::path(cfg.checkpoint);
  o.log = out_dir / "train_log.csv";
  try {
    o.result = train_from_config(cfg, d);
  } catch (const DivergenceError& e) {
    if (e.last_good()) {
      const auto p = out_dir / "last_good.ckpt";
      fs::create_directories(out_dir);
      save_checkpoint(p.string(), *e.last_good());
      throw DivergenceError(std::string(e.what()) + "; last good checkpoint written to " + p.string(), e.iteration(),
                            nullptr);
    }
    throw;
  }
  if (o.checkpoint.has_parent_path()) fs::create_directories(o.checkpoint.parent_path());
  save_checkpoint(o.checkpoint.string(), o.result.checkpoint);
  auto log = detail::open_output(o.log);
  write_train_log(log, o.result.log);
  return o;
}

// ---------------------------------------------------------------------------
// predict

struct PredictSummary {
  std::size_t targets = 0;
  std::size_t predicted = 0;
  std::size_t skipped = 0;  // target window unavailable
  std::size_t failed = 0;   // search or ensemble construction failed
  std::size_t short_ensembles = 0;
};

/// Effective per-variable weights for a classic method.
inline std::vector<double> effective_weights(const ExperimentConfig& cfg, const ForecastArchive& fcst, Method m) {
  std::vector<double> w(fcst.n_variables(), m == Method::AnenEqual ? 1.0 : 0.0);
  if (m == Method::AnenWeighted)
    for (const auto& [name, value] : cfg.weights) {
      const auto v = fcst.variable_index(name);
      if (!v) throw ConfigError("weight given for unknown variable '" + name + "'");
      w[*v] = value;
    }
  return w;
}

/// Ensembles for every (station, test cycle, lead); rows go to `out`, one
/// line per failed or skipped target to `errors`.
inline PredictSummary run_predictions(const ExperimentConfig& cfg, const ExperimentData& d, Method method,
                                      IndexRange search, IndexRange test, const ModelCheckpoint* model,
                                      std::ostream& out, std::ostream& errors) {
  if (method == Method::DeepAnen && !model) throw ConfigError("deep_anen requires a checkpoint");
  if (model) check_archive_variables(*model, d.fcst);
  if (search.empty()) throw DataError("search period contains no cycles");
  if (test.begin < search.end && search.begin < test.end) throw ConfigError("test cycles overlap the search cycles");
  const std::size_t half_window = model && method == Method::DeepAnen ? model->meta.half_window : cfg.half_window;
  std::vector<double> weights;
  if (method != Method::DeepAnen) weights = effective_weights(cfg, d.fcst, method);

  struct TaskOutput {
    std::string rows, errors;
    PredictSummary summary;
  };
  const std::size_t n_tasks = d.stations.size() * d.leads.size();
  std::vector<TaskOutput> results(n_tasks);
  parallel_for(n_tasks, [&](std::size_t task) {
    const std::size_t s = d.stations[task / d.leads.size()];
    const std::size_t l = d.leads[task % d.leads.size()];
    auto& res = results[task];
    std::ostringstream rows, errs;
    std::optional<MetricConfig> metric;
    std::optional<EmbeddingBlock> block;
    auto note = [&](std::size_t c, const std::string& what) {
      errs << d.fcst.stations[s] << ',' << format_iso8601(d.fcst.cycles[c]) << ',' << d.fcst.leads[l] << ',' << what
           << '\n';
    };
    for (std::size_t c = test.begin; c < test.end; ++c) {
      ++res.summary.targets;
      if (!find_window(d.fcst, s, c, l, half_window)) {
        ++res.summary.skipped;
        note(c, "skipped: target window unavailable");
        continue;
      }
      const AnalogQuery q{s, c, l, half_window, cfg.members, search};
      try {
        std::vector<RankedCandidate> ranked;
        if (method == Method::DeepAnen) {
          if (!block) block = embed_block(*model, d.fcst, s, l, {0, d.fcst.n_cycles()});
          ranked = search_latent(q, *block, d.fcst, d.obs);
        } else {
          if (!metric) {
            const auto stats = climatology_stats(d.fcst, s, l, search);
            metric.emplace(weights, stats.sigma, half_window);
          }
          ranked = search_classic(q, d.fcst, d.obs, *metric);
        }
        const auto ens = build_ensemble(ranked, d.fcst, d.obs, q, cfg.allow_short);
        res.summary.short_ensembles += ens.short_ensemble;
        ++res.summary.predicted;
        write_prediction_rows(rows, d.fcst, s, c, l, ens);
      } catch (const DataError& e) {
        ++res.summary.failed;
        note(c, std::string("error: ") + e.what());
      }
    }
    res.rows = rows.str();
    res.errors = errs.str();
  });

  PredictSummary total;
  for (const auto& r : results) {
    out << r.rows;
    errors << r.errors;
    total.targets += r.summary.targets;
    total.predicted += r.summary.predicted;
    total.skipped += r.summary.skipped;
    total.failed += r.summary.failed;
    total.short_ensembles += r.summary.short_ensembles;
  }
  return total;
}

struct PredictOutputs {
  fs::path predictions, errors;
  PredictSummary summary;
};

/// Writes `predictions.csv` (with a provenance header) and `predict_errors.csv`.
inline PredictOutputs predict_to_dir(const ExperimentConfig& cfg, const ExperimentData& d, Method method,
                                     IndexRange search, IndexRange test, const ModelCheckpoint* model,
                                     const fs::path& out_dir) {
  PredictOutputs o{out_dir / "predictions.csv", out_dir / "predict_errors.csv", {}};
  auto out = detail::open_output(o.predictions);
  auto err = detail::open_output(o.errors);
  write_provenance(out, cfg);
  out << "# method=" << to_string(method) << '\n';
  out << "# search_cycles=" << format_iso8601(d.fcst.cycles[search.begin]) << ".."
      << format_iso8601(d.fcst.cycles[search.end - 1]) << '\n';
  if (method != Method::DeepAnen) {
    const auto w = effective_weights(cfg, d.fcst, method);
    for (std::size_t v = 0; v < w.size(); ++v) out << "# effective_weight." << d.fcst.variables[v] << '=' << format_short(w[v]) << '\n';
  } else {
    out << "# checkpoint_iterations=" << model->meta.iterations << '\n';
  }
  out << kPredictionHeader << '\n';
  err << "station,cycle_time,lead_s,reason\n";
  o.summary = run_predictions(cfg, d, method, search, test, model, out, err);
  if (o.summary.predicted == 0 && o.summary.failed > 0) throw DataError("every prediction target failed");
  return o;
}

inline PredictOutputs cmd_predict(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const Method method = cfg.method();
  std::optional<ModelCheckpoint> model;
  if (method == Method::DeepAnen) model = load_checkpoint(detail::require_path(cfg.checkpoint, "checkpoint"));
  const auto d = load_experiment_data(cfg);
  return predict_to_dir(cfg, d, method, d.cycles(cfg.search, "search"), d.cycles(cfg.test, "test"),
                        model ? &*model : nullptr, out_dir);
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOutputs {
  fs::path report, rank_histogram;
  VerificationReport report_data;
  std::size_t pairs = 0;
  std::size_t excluded_missing_obs = 0;
  std::size_t excluded_missing_baseline = 0;
  std::vector<double> thresholds;
  std::optional<ErrorIntervalResult> intervals;
};

/// Verification pairs from parsed predictions; ensembles without an
/// observation are dropped and counted.
inline VerificationSet pair_predictions(const std::vector<PredictedEnsemble>& preds, const ObservationArchive& obs,
                                        std::size_t& excluded) {
  VerificationSet set;
  excluded = 0;
  std::set<std::string> stations;
  for (const auto& p : preds) {
    const double o = obs.value_at(p.station, p.cycle_time + p.lead);
    if (is_missing(o)) {
      ++excluded;
      continue;
    }
    set.pairs.push_back({p.lead, p.members, o});
    stations.insert(p.station);
    if (set.pairs.size() == 1 || p.cycle_time < set.period_begin) set.period_begin = p.cycle_time;
    if (set.pairs.size() == 1 || p.cycle_time + 1 > set.period_end) set.period_end = p.cycle_time + 1;
  }
  set.stations.assign(stations.begin(), stations.end());
  return set;
}

inline VerifyOutputs verify_predictions(const ExperimentConfig& cfg, const ObservationArchive& obs,
                                        const ForecastArchive* fcst, const fs::path& predictions,
                                        const fs::path& out_dir) {
  std::ifstream in(predictions);
  if (!in) throw DataError("cannot open predictions '" + predictions.string() + "'");
  const auto preds = read_predictions(in);
  VerifyOutputs o;
  o.report = out_dir / "report.csv";
  o.rank_histogram = out_dir / "rank_histogram.csv";
  const auto set = pair_predictions(preds, obs, o.excluded_missing_obs);
  if (set.pairs.empty()) throw DataError("no verifiable predictions");
  o.pairs = set.pairs.size();

  if (cfg.brier_auto) {
    std::vector<double> observed;
    for (const auto& p : set.pairs) observed.push_back(p.observation);
    o.thresholds = {percentile(observed, cfg.brier_percentile)};
  } else {
    o.thresholds = cfg.brier_thresholds;
  }
  ReportOptions opt{o.thresholds, cfg.spread_bins, cfg.seed};
  o.report_data = build_report(set, opt);

  if (!cfg.error_intervals.empty() && !cfg.baseline_variable.empty()) {
    if (!fcst) throw ConfigError("error intervals require the forecast archive");
    const auto v = fcst->variable_index(cfg.baseline_variable);
    if (!v) throw ConfigError("baseline_variable '" + cfg.baseline_variable + "' not in forecast archive");
    std::vector<double> baseline;
    for (const auto& p : preds) {
      if (is_missing(obs.value_at(p.station, p.cycle_time + p.lead))) continue;
      const auto s = fcst->station_index(p.station);
      const auto c = fcst->cycle_index(p.cycle_time);
      const auto l = fcst->lead_index(p.lead);
      const double f = s && c && l ? fcst->at(*s, *v, *c, *l) : kMissing;
      baseline.push_back(is_missing(f) ? kMissing : f - obs.value_at(p.station, p.cycle_time + p.lead));
    }
    o.intervals = error_interval_rmse(set.pairs, baseline, cfg.error_intervals);
    o.excluded_missing_baseline = o.intervals->excluded;
  }

  auto out = detail::open_output(o.report);
  out << "# pairs=" << o.pairs << '\n';
  out << "# excluded_missing_obs=" << o.excluded_missing_obs << '\n';
  for (std::size_t k = 0; k < o.thresholds.size(); ++k)
    out << "# brier_threshold." << k << '=' << format_real(o.thresholds[k])
        << (cfg.brier_auto ? " (observed p" + format_short(cfg.brier_percentile) + ")" : std::string()) << '\n';
  write_report(out, o.report_data);
  if (o.intervals) {
    for (std::size_t k = 0; k < o.intervals->intervals.size(); ++k) {
      const auto& b = o.intervals->intervals[k];
      out << "all,interval_rmse," << (b.rmse ? format_real(*b.rmse) : std::string()) << ',' << k << ','
          << format_real(b.lo) << ',' << format_real(b.hi) << ',' << b.count << '\n';
    }
    out << "all,interval_excluded,,,,," << o.intervals->excluded << '\n';
  }
  auto rh = detail::open_output(o.rank_histogram);
  write_rank_histogram(rh, o.report_data.aggregate.ranks);
  return o;
}

inline VerifyOutputs cmd_verify(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto obs = load_observations(detail::require_path(cfg.observations, "observations"));
  std::optional<ForecastArchive> fcst;
  if (!cfg.error_intervals.empty() && !cfg.baseline_variable.empty())
    fcst = load_forecasts(detail::require_path(cfg.forecasts, "forecasts"));
  const fs::path preds = cfg.predictions.empty() ? out_dir / "predictions.csv" : fs::path(cfg.predictions);
  return verify_predictions(cfg, obs, fcst ? &*fcst : nullptr, preds, out_dir);
}

// ---------------------------------------------------------------------------
// experiment-search-length

struct SearchLengthRow {
  Method method;
  std::size_t split = 0;
  IndexRange search;
  double rmse = 0.0, crps = 0.0, brier = 0.0, threshold = 0.0;
  std::size_t pairs = 0;
};

/// Nested search ranges ending at the end of the search period: split k uses
/// the most recent k / max(splits) of its cycles.
inline std::vector<IndexRange> nested_search_ranges(IndexRange search, std::span<const std::size_t> splits) {
  const std::size_t units = *std::max_element(splits.begin(), splits.end());
  std::vector<IndexRange> out;
  for (const auto k : splits) {
    const std::size_t n = (search.size() * k + units - 1) / units;
    out.push_back({search.end - n, search.end});
  }
  return out;
}

inline std::vector<SearchLengthRow> cmd_experiment_search_length(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto d = load_experiment_data(cfg);
  const auto search = d.cycles(cfg.search, "search");
  const auto test = d.cycles(cfg.test, "test");
  if (search.empty()) throw DataError("search period contains no cycles");
  std::vector<std::size_t> splits = cfg.search_splits;
  std::sort(splits.begin(), splits.end());
  splits.erase(std::unique(splits.begin(), splits.end()), splits.end());
  const auto ranges = nested_search_ranges(search, splits);
  fs::create_directories(out_dir);

  std::optional<ModelCheckpoint> model;
  if (std::find(cfg.methods.begin(), cfg.methods.end(), Method::DeepAnen) != cfg.methods.end()) {
    if (!cfg.checkpoint.empty() && fs::exists(cfg.checkpoint)) {
      model = load_checkpoint(cfg.checkpoint);
    } else {
      const auto res = train_from_config(cfg, d);
      model = res.checkpoint;
      save_checkpoint((out_dir / "model.ckpt").string(), *model);
      auto log = detail::open_output(out_dir / "train_log.csv");
      write_train_log(log, res.log);
    }
  }

  std::vector<SearchLengthRow> rows;
  for (const auto method : cfg.methods)
    for (std::size_t i = 0; i < splits.size(); ++i) {
      const auto dir = out_dir / ("split_" + std::to_string(splits[i])) / to_string(method);
      const auto pred = predict_to_dir(cfg, d, method, ranges[i], test, model ? &*model : nullptr, dir);
      const auto ver = verify_predictions(cfg, d.obs, &d.fcst, pred.predictions, dir);
      const auto& agg = ver.report_data.aggregate;
      rows.push_back({method, splits[i], ranges[i], agg.rmse, agg.crps, agg.brier.empty() ? kMissing : agg.brier.front(),
                      ver.thresholds.empty() ? kMissing : ver.thresholds.front(), ver.pairs});
    }

  auto out = detail::open_output(out_dir / "search_length.csv");
  out << "method,split,search_start,search_end,search_cycles,pairs,rmse,crps,brier,brier_threshold\n";
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << r.split << ',' << format_iso8601(d.fcst.cycles[r.search.begin]) << ','
        << format_iso8601(d.fcst.cycles[r.search.end - 1]) << ',' << r.search.size() << ',' << r.pairs << ','
        << format_real(r.rmse) << ',' << format_real(r.crps) << ',' << format_real(r.brier) << ','
        << format_real(r.threshold) << '\n';
  return rows;
}

}  // namespace deepanen
