#pragma once

#include <algorithm>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deepanen/archive.hpp"
#include "deepanen/classic_metric.hpp"
#include "deepanen/embed_net.hpp"

namespace deepanen {

/// One analog search: the target forecast at (station, target_cycle, lead)
/// is compared against the cycles of `search`, which must exclude the target.
struct AnalogQuery {
  std::size_t station = 0;
  std::size_t target_cycle = 0;
  std::size_t lead = 0;
  std::size_t half_window = 1;
  std::size_t members = 11;
  IndexRange search;

  void validate() const {
    if (members == 0) throw ConfigError("ensemble size must be >= 1");
    if (search.contains(target_cycle)) throw ConfigError("search range contains the target cycle");
  }
};

struct RankedCandidate {
  std::size_t cycle = 0;
  double score = 0.0;
};

struct AnalogSource {
  std::size_t cycle = 0;
  double score = 0.0;
};

struct EnsembleForecast {
  std::vector<double> members;
  std::vector<AnalogSource> sources;  // ascending score
  bool short_ensemble = false;

  double mean() const {
    double s = 0.0;
    for (double m : members) s += m;
    return members.empty() ? kMissing : s / static_cast<double>(members.size());
  }
};

namespace detail {

inline void sort_ranked(std::vector<RankedCandidate>& v) {
  std::sort(v.begin(), v.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.cycle < b.cycle;
  });
}

inline void check_query(const AnalogQuery& q, const ForecastArchive& fcst) {
  q.validate();
  if (q.station >= fcst.n_stations() || q.target_cycle >= fcst.n_cycles() || q.lead >= fcst.n_leads() ||
      q.search.end > fcst.n_cycles())
    throw std::out_of_range("analog query index out of range");
}

}  // namespace detail

/// Candidates scored with the weighted-Euclidean metric, ascending (ties: earlier cycle).
/// A candidate is eligible when its window is complete and its observation at
/// the same lead exists.
inline std::vector<RankedCandidate> search_classic(const AnalogQuery& query, const ForecastArchive& fcst,
                                                   const ObservationArchive& obs, const MetricConfig& cfg) {
  detail::check_query(query, fcst);
  if (cfg.half_window() != query.half_window) throw ConfigError("metric half-window does not match query");
  ForecastWindow target;
  if (try_extract_window(fcst, query.station, query.target_cycle, query.lead, query.half_window, target) !=
      WindowStatus::Ok)
    throw DataError("target window unavailable");
  const auto obs_station = obs.station_index(fcst.stations[query.station]);
  std::vector<RankedCandidate> ranked;
  ForecastWindow cand;
  for (std::size_t c = query.search.begin; c < query.search.end; ++c) {
    if (!obs_station || is_missing(obs.value_at(*obs_station, valid_time(fcst, c, query.lead)))) continue;
    if (try_extract_window(fcst, query.station, c, query.lead, query.half_window, cand) != WindowStatus::Ok) continue;
    ranked.push_back({c, dissimilarity(target, cand, cfg).score});
  }
  if (ranked.empty()) throw DataError("no eligible analog candidates");
  detail::sort_ranked(ranked);
  return ranked;
}

/// Candidates ranked by Euclidean distance in embedding space.
inline std::vector<RankedCandidate> search_latent(const AnalogQuery& query, const EmbeddingBlock& embeddings,
                                                  const ForecastArchive& fcst, const ObservationArchive& obs) {
  detail::check_query(query, fcst);
  if (embeddings.station != query.station || embeddings.lead != query.lead)
    throw ConfigError("embeddings were computed for a different station or lead");
  if (!embeddings.has(query.target_cycle)) throw DataError("target window unavailable");
  const auto target = embeddings.row(query.target_cycle);
  const auto obs_station = obs.station_index(fcst.stations[query.station]);
  std::vector<RankedCandidate> ranked;
  for (std::size_t c = query.search.begin; c < query.search.end; ++c) {
    if (!embeddings.has(c)) continue;
    if (!obs_station || is_missing(obs.value_at(*obs_station, valid_time(fcst, c, query.lead)))) continue;
    const auto row = embeddings.row(c);
    double ss = 0.0;
    for (std::size_t e = 0; e < row.size(); ++e) ss += (row[e] - target[e]) * (row[e] - target[e]);
    ranked.push_back({c, std::sqrt(ss)});
  }
  if (ranked.empty()) throw DataError("no eligible analog candidates");
  detail::sort_ranked(ranked);
  return ranked;
}

/// Observations of the query.members best candidates.
inline EnsembleForecast build_ensemble(std::span<const RankedCandidate> ranked, const ForecastArchive& fcst,
                                       const ObservationArchive& obs, const AnalogQuery& query,
                                       bool allow_short = false) {
  query.validate();
  if (ranked.size() < query.members && !allow_short)
    throw DataError("insufficient analogs: " + std::to_string(ranked.size()) + " of " + std::to_string(query.members));
  const std::size_t m = std::min(ranked.size(), query.members);
  EnsembleForecast ens;
  ens.short_ensemble = m < query.members;
  const auto& station = fcst.stations.at(query.station);
  for (std::size_t i = 0; i < m; ++i) {
    const double o = obs.value_at(station, valid_time(fcst, ranked[i].cycle, query.lead));
    if (is_missing(o)) throw DataError("ranked candidate without observation");
    ens.members.push_back(o);
    ens.sources.push_back({ranked[i].cycle, ranked[i].score});
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Prediction CSV

inline constexpr std::string_view kPredictionHeader =
    "station,cycle_time,lead_s,member_rank,member_value,source_cycle_time,score";

inline void write_prediction_rows(std::ostream& out, const ForecastArchive& fcst, std::size_t station,
                                  std::size_t cycle, std::size_t lead, const EnsembleForecast& ens) {
  const auto cycle_time = format_iso8601(fcst.cycles[cycle]);
  for (std::size_t i = 0; i < ens.members.size(); ++i)
    out << fcst.stations[station] << ',' << cycle_time << ',' << fcst.leads[lead] << ',' << (i + 1) << ','
        << format_real(ens.members[i]) << ',' << format_iso8601(fcst.cycles[ens.sources[i].cycle]) << ','
        << format_real(ens.sources[i].score) << '\n';
}

/// One parsed ensemble from a prediction file.
struct PredictedEnsemble {
  std::string station;
  Timestamp cycle_time = 0;
  Timestamp lead = 0;
  std::vector<double> members;
  std::vector<Timestamp> source_cycles;
  std::vector<double> scores;
};

/// Reads a prediction CSV (lines starting with '#' are provenance), grouping
/// consecutive rows of the same (station, cycle_time, lead_s).
inline std::vector<PredictedEnsemble> read_predictions(std::istream& in) {
  std::vector<PredictedEnsemble> out;
  detail::read_csv(in, kPredictionHeader, [&](const std::vector<std::string_view>& cols, std::size_t line) {
    PredictedEnsemble row;
    row.station = std::string(trim(cols[0]));
    std::size_t rank = 0;
    double value = 0.0, score = 0.0;
    Timestamp src = 0;
    if (!parse_iso8601(cols[1], row.cycle_time) || !parse_int(cols[2], row.lead) || !parse_int(cols[3], rank) ||
        !parse_real(cols[4], value) || !parse_iso8601(cols[5], src) || !parse_real(cols[6], score))
      throw DataError(detail::line_error(line, "malformed prediction row"));
    const bool same = !out.empty() && out.back().station == row.station && out.back().cycle_time == row.cycle_time &&
                      out.back().lead == row.lead;
    if (!same) {
      if (rank != 1) throw DataError(detail::line_error(line, "ensemble does not start at member_rank 1"));
      out.push_back(std::move(row));
    } else if (rank != out.back().members.size() + 1) {
      throw DataError(detail::line_error(line, "member_rank out of sequence"));
    }
    out.back().members.push_back(value);
    out.back().source_cycles.push_back(src);
    out.back().scores.push_back(score);
  });
  return out;
}

}  // namespace deepanen
