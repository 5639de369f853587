#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deepanen/common.hpp"
#include "deepanen/synth.hpp"
#include "deepanen/trainer.hpp"

namespace deepanen {

enum class Method { AnenEqual, AnenWeighted, DeepAnen };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::AnenEqual:
      return "anen_equal";
    case Method::AnenWeighted:
      return "anen_weighted";
    case Method::DeepAnen:
      return "deep_anen";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  s = trim(s);
  if (s == "anen_equal") return Method::AnenEqual;
  if (s == "anen_weighted") return Method::AnenWeighted;
  if (s == "deep_anen") return Method::DeepAnen;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

/// Half-open time interval [start, end).
struct TimeRange {
  Timestamp start = 0;
  Timestamp end = 0;
  bool overlaps(const TimeRange& o) const { return start < o.end && o.start < end; }
};

/// Flat `key=value` experiment description. Every entry is kept in file order
/// so it can be echoed into output provenance headers.
struct ExperimentConfig {
  std::vector<std::pair<std::string, std::string>> entries;

  std::string forecasts;
  std::string observations;
  std::string checkpoint;
  std::string predictions;
  std::vector<Method> methods = {Method::AnenEqual};
  std::map<std::string, double> weights;
  std::size_t half_window = 1;
  std::size_t members = 11;
  bool allow_short = false;
  std::vector<std::string> stations;  // empty: all
  std::vector<Timestamp> leads;       // empty: all
  std::optional<TimeRange> search, train, test;
  std::uint64_t seed = 0;
  TrainConfig train_cfg;
  bool brier_auto = true;
  double brier_percentile = 75.0;
  std::vector<double> brier_thresholds;
  std::size_t spread_bins = 10;
  std::vector<double> error_intervals;
  std::string baseline_variable;
  std::vector<std::size_t> search_splits = {1, 2, 4, 8};
  SynthSpec synth;

  Method method() const { return methods.front(); }
  const std::string* find(const std::string& key) const {
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
      if (it->first == key) return &it->second;
    return nullptr;
  }
  bool has(const std::string& key) const { return find(key) != nullptr; }

  /// Applies one entry, validating and recording it.
  void set(const std::string& key, const std::string& value);

  /// Disjointness of test vs. search/training periods.
  void validate() const {
    if (test && search && test->overlaps(*search)) throw ConfigError("test period overlaps the search period");
    if (test && train && test->overlaps(*train)) throw ConfigError("test period overlaps the training period");
    train_cfg.validate();
    if (members == 0) throw ConfigError("members must be >= 1");
  }
};

namespace detail {

inline std::string cfg_key(const std::string& key) { return "config key '" + key + "'"; }

inline double cfg_real(const std::string& key, const std::string& v) {
  double x;
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (!parse_real(v, x) || is_missing(x)) throw ConfigError(cfg_key(key) + ": expected a number, got '" + v + "'");
  return x;
}

template <typename Int>
Int cfg_int(const std::string& key, const std::string& v) {
  Int x;
  if (!parse_int(v, x)) throw ConfigError(cfg_key(key) + ": expected an integer, got '" + v + "'");
  return x;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(cfg_key(key) + ": expected true/false, got '" + v + "'");
}

inline Timestamp cfg_time(const std::string& key, const std::string& v) {
  Timestamp t;
  if (!parse_iso8601(v, t)) throw ConfigError(cfg_key(key) + ": expected YYYY-MM-DDTHH:MM:SSZ, got '" + v + "'");
  return t;
}

inline std::vector<std::string> cfg_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto s : split(v, ',')) out.emplace_back(trim(s));
  return out;
}

inline void set_range_bound(std::optional<TimeRange>& r, bool is_start, Timestamp t) {
  if (!r) r = TimeRange{};
  (is_start ? r->start : r->end) = t;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string& k = key;
  const std::string& v = value;
  auto& tc = train_cfg;
  if (k.starts_with("weight.")) {
    const double w = cfg_real(k, v);
    if (w < 0.0) throw ConfigError(cfg_key(k) + ": weights must be >= 0");
    weights[k.substr(7)] = w;
  } else if (k == "forecasts") {
    forecasts = v;
  } else if (k == "observations") {
    observations = v;
  } else if (k == "checkpoint") {
    checkpoint = v;
  } else if (k == "predictions") {
    predictions = v;
  } else if (k == "method" || k == "methods") {
    methods.clear();
    for (const auto& m : cfg_list(v)) methods.push_back(parse_method(m));
    if (methods.empty()) throw ConfigError(cfg_key(k) + ": no method given");
  } else if (k == "half_window") {
    half_window = cfg_int<std::size_t>(k, v);
    tc.half_window = half_window;
  } else if (k == "members") {
    members = cfg_int<std::size_t>(k, v);
  } else if (k == "allow_short") {
    allow_short = cfg_bool(k, v);
  } else if (k == "stations") {
    stations = cfg_list(v);
  } else if (k == "leads") {
    leads.clear();
    for (const auto& s : cfg_list(v)) leads.push_back(cfg_int<Timestamp>(k, s));
  } else if (k == "search_start" || k == "search_end") {
    set_range_bound(search, k == "search_start", cfg_time(k, v));
  } else if (k == "train_start" || k == "train_end") {
    set_range_bound(train, k == "train_start", cfg_time(k, v));
  } else if (k == "test_start" || k == "test_end") {
    set_range_bound(test, k == "test_start", cfg_time(k, v));
  } else if (k == "seed") {
    seed = cfg_int<std::uint64_t>(k, v);
    if (!has("train.seed")) tc.seed = seed;
    if (!has("synth.seed")) synth.seed = seed;
  } else if (k == "train.seed") {
    tc.seed = cfg_int<std::uint64_t>(k, v);
  } else if (k == "train.alpha") {
    tc.alpha = cfg_real(k, v);
  } else if (k == "train.learning_rate") {
    tc.learning_rate = cfg_real(k, v);
  } else if (k == "train.dropout_rate") {
    tc.dropout_rate = cfg_real(k, v);
  } else if (k == "train.max_iterations") {
    tc.max_iterations = cfg_int<std::size_t>(k, v);
  } else if (k == "train.batch_size") {
    tc.batch_size = cfg_int<std::size_t>(k, v);
  } else if (k == "train.k_pos") {
    tc.k_pos = cfg_int<std::size_t>(k, v);
  } else if (k == "train.patience") {
    tc.early_stop.patience = cfg_int<std::size_t>(k, v);
  } else if (k == "train.min_improvement") {
    tc.early_stop.min_relative_improvement = cfg_real(k, v);
  } else if (k == "train.eval_interval") {
    tc.eval_interval = cfg_int<std::size_t>(k, v);
  } else if (k == "train.validation_fraction") {
    tc.validation_fraction = cfg_real(k, v);
  } else if (k == "train.monitor_triplets") {
    tc.monitor_triplets = cfg_int<std::size_t>(k, v);
  } else if (k == "train.hidden") {
    tc.hidden = cfg_int<std::size_t>(k, v);
  } else if (k == "train.layers") {
    tc.layers = cfg_int<std::size_t>(k, v);
  } else if (k == "train.embed_dim") {
    tc.embed_dim = cfg_int<std::size_t>(k, v);
  } else if (k == "train.beta1") {
    tc.adam.beta1 = cfg_real(k, v);
  } else if (k == "train.beta2") {
    tc.adam.beta2 = cfg_real(k, v);
  } else if (k == "train.epsilon") {
    tc.adam.epsilon = cfg_real(k, v);
  } else if (k == "brier_thresholds") {
    brier_auto = v == "auto";
    brier_thresholds.clear();
    if (!brier_auto)
      for (const auto& s : cfg_list(v)) brier_thresholds.push_back(cfg_real(k, s));
  } else if (k == "brier_percentile") {
    brier_percentile = cfg_real(k, v);
    if (!(brier_percentile >= 0.0 && brier_percentile <= 100.0)) throw ConfigError(cfg_key(k) + ": must be in [0, 100]");
  } else if (k == "spread_bins") {
    spread_bins = cfg_int<std::size_t>(k, v);
  } else if (k == "error_intervals") {
    error_intervals.clear();
    for (const auto& s : cfg_list(v)) error_intervals.push_back(cfg_real(k, s));
  } else if (k == "baseline_variable") {
    baseline_variable = v;
  } else if (k == "search_splits") {
    search_splits.clear();
    for (const auto& s : cfg_list(v)) {
      const auto n = cfg_int<std::size_t>(k, s);
      if (n == 0) throw ConfigError(cfg_key(k) + ": splits must be positive");
      search_splits.push_back(n);
    }
    if (search_splits.empty()) throw ConfigError(cfg_key(k) + ": no splits given");
  } else if (k == "synth.n_stations") {
    synth.n_stations = cfg_int<std::size_t>(k, v);
  } else if (k == "synth.n_cycles") {
    synth.n_cycles = cfg_int<std::size_t>(k, v);
  } else if (k == "synth.n_leads") {
    synth.n_leads = cfg_int<std::size_t>(k, v);
  } else if (k == "synth.n_variables") {
    synth.n_variables = cfg_int<std::size_t>(k, v);
  } else if (k == "synth.seed") {
    synth.seed = cfg_int<std::uint64_t>(k, v);
  } else if (k == "synth.hidden") {
    synth.hidden.clear();
    for (const auto& s : cfg_list(v)) {
      const auto i = cfg_int<std::size_t>(k, s);
      if (i == 0) throw ConfigError(cfg_key(k) + ": variable numbers are 1-based");
      synth.hidden.push_back(i - 1);
    }
  } else if (k == "synth.rule") {
    synth.rule = parse_latent_rule(v);
  } else if (k == "synth.noise_sigma") {
    synth.noise_sigma = cfg_real(k, v);
  } else if (k == "synth.lead_correlation") {
    synth.lead_correlation = cfg_real(k, v);
  } else if (k == "synth.start") {
    synth.start_time = cfg_time(k, v);
  } else if (k == "synth.cycle_step_s") {
    synth.cycle_step_s = cfg_int<Timestamp>(k, v);
  } else if (k == "synth.lead_step_s") {
    synth.lead_step_s = cfg_int<Timestamp>(k, v);
  } else {
    throw ConfigError("unknown config key '" + k + "'");
  }
  entries.emplace_back(key, value);
}

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    cfg.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

inline void write_provenance(std::ostream& out, const ExperimentConfig& cfg) {
  for (const auto& [k, v] : cfg.entries) out << "# " << k << '=' << v << '\n';
}

}  // namespace deepanen
