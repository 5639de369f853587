#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deepanen/common.hpp"

namespace deepanen {

/// One verified ensemble.
struct VerificationPair {
  Timestamp lead = 0;
  std::vector<double> members;
  double observation = 0.0;
};

struct VerificationSet {
  std::vector<VerificationPair> pairs;
  std::vector<std::string> stations;
  Timestamp period_begin = 0;
  Timestamp period_end = 0;
};

namespace detail {

inline void require_pairs(std::span<const VerificationPair> set, const char* what) {
  if (set.empty()) throw DataError(std::string(what) + ": empty verification set");
}

/// Mean as an offset from the first value, so identical members average to
/// exactly that value.
inline double mean_of(std::span<const double> v) {
  if (v.empty()) return kMissing;
  double s = 0.0;
  for (double x : v) s += x - v.front();
  return v.front() + s / static_cast<double>(v.size());
}

inline std::size_t common_size(std::span<const VerificationPair> set) {
  const std::size_t m = set.front().members.size();
  if (m == 0) throw DataError("verification: empty ensemble");
  for (const auto& p : set)
    if (p.members.size() != m) throw DataError("verification: ensembles differ in member count");
  return m;
}

}  // namespace detail

/// Linear-interpolation percentile, p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("percentile of empty sample");
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double ensemble_mean(std::span<const double> members) { return detail::mean_of(members); }

/// Sample standard deviation of the members (0 for a single member).
inline double ensemble_spread(std::span<const double> members) {
  if (members.size() < 2) return 0.0;
  const double m = detail::mean_of(members);
  double ss = 0.0;
  for (double x : members) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(members.size() - 1));
}

inline double bias(std::span<const VerificationPair> set) {
  detail::require_pairs(set, "bias");
  double s = 0.0;
  for (const auto& p : set) s += ensemble_mean(p.members) - p.observation;
  return s / static_cast<double>(set.size());
}

inline double rmse(std::span<const VerificationPair> set) {
  detail::require_pairs(set, "rmse");
  double s = 0.0;
  for (const auto& p : set) {
    const double e = ensemble_mean(p.members) - p.observation;
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(set.size()));
}

/// Empirical-CDF CRPS of one ensemble:
/// (1/M) sum_i |x_i - y| - (1/(2 M^2)) sum_i sum_j |x_i - x_j|.
inline double crps_ensemble(std::span<const double> members, double obs) {
  const double m = static_cast<double>(members.size());
  double abs_err = 0.0;
  for (double x : members) abs_err += std::abs(x - obs);
  // sum_{i,j} |x_i - x_j| = 2 sum_k (2k - M + 1) x_(k) over the sorted members.
  std::vector<double> sorted(members.begin(), members.end());
  std::sort(sorted.begin(), sorted.end());
  double spread = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) spread += (2.0 * static_cast<double>(k) - m + 1.0) * sorted[k];
  return abs_err / m - spread / (m * m);
}

inline double crps(std::span<const VerificationPair> set) {
  detail::require_pairs(set, "crps");
  double s = 0.0;
  for (const auto& p : set) s += crps_ensemble(p.members, p.observation);
  return s / static_cast<double>(set.size());
}

struct RankHistogram {
  std::vector<std::size_t> counts;  // counts[r - 1] for rank r = 1 .. M + 1
  double mre = 0.0;                 // (count[1] + count[M+1]) / N - 2 / (M + 1)
};

/// Rank of each observation among its sorted members; ties with members are
/// placed uniformly at random among the tied positions.
inline RankHistogram rank_histogram(std::span<const VerificationPair> set, std::uint64_t seed) {
  detail::require_pairs(set, "rank_histogram");
  const std::size_t m = detail::common_size(set);
  Rng rng(seed);
  RankHistogram h;
  h.counts.assign(m + 1, 0);
  for (const auto& p : set) {
    std::size_t below = 0, equal = 0;
    for (double x : p.members) {
      below += x < p.observation;
      equal += x == p.observation;
    }
    std::size_t r = below;
    if (equal > 0) r += std::uniform_int_distribution<std::size_t>(0, equal)(rng);
    ++h.counts[r];
  }
  const double n = static_cast<double>(set.size());
  h.mre = static_cast<double>(h.counts.front() + h.counts.back()) / n - 2.0 / static_cast<double>(m + 1);
  return h;
}

struct SpreadErrorBin {
  double mean_spread = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
  double lo = 0.0;  // bootstrap 5th percentile of the bin rmse
  double hi = 0.0;  // bootstrap 95th percentile
};

/// Pairs sorted by spread and split into equal-population bins.
inline std::vector<SpreadErrorBin> spread_error(std::span<const VerificationPair> set, std::size_t n_bins,
                                                std::uint64_t seed, std::size_t resamples = 1000) {
  detail::require_pairs(set, "spread_error");
  if (n_bins == 0) throw ConfigError("spread_error: n_bins must be >= 1");
  if (set.size() < n_bins) throw DataError("spread_error: fewer pairs than bins");
  struct Item {
    double spread;
    double err;
    std::size_t idx;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < set.size(); ++i)
    items.push_back({ensemble_spread(set[i].members), ensemble_mean(set[i].members) - set[i].observation, i});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return a.spread != b.spread ? a.spread < b.spread : a.idx < b.idx;
  });
  Rng rng(seed);
  std::vector<SpreadErrorBin> bins;
  const std::size_t n = items.size();
  std::vector<double> boot(resamples);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * n / n_bins, hi = (b + 1) * n / n_bins;
    SpreadErrorBin bin;
    bin.count = hi - lo;
    double ss = 0.0, sp = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      sp += items[i].spread;
      ss += items[i].err * items[i].err;
    }
    bin.mean_spread = sp / static_cast<double>(bin.count);
    bin.rmse = std::sqrt(ss / static_cast<double>(bin.count));
    std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
    for (auto& r : boot) {
      double s = 0.0;
      for (std::size_t k = 0; k < bin.count; ++k) {
        const double e = items[pick(rng)].err;
        s += e * e;
      }
      r = std::sqrt(s / static_cast<double>(bin.count));
    }
    if (resamples > 0) {
      bin.lo = percentile(boot, 5.0);
      bin.hi = percentile(boot, 95.0);
    } else {
      bin.lo = bin.hi = bin.rmse;
    }
    bins.push_back(bin);
  }
  return bins;
}

/// Mean over pairs of (p - o)^2, p the fraction of members above the
/// threshold and o whether the observation is above it.
inline double brier(std::span<const VerificationPair> set, double threshold) {
  detail::require_pairs(set, "brier");
  double s = 0.0;
  for (const auto& pair : set) {
    std::size_t above = 0;
    for (double x : pair.members) above += x > threshold;
    const double p = static_cast<double>(above) / static_cast<double>(pair.members.size());
    const double o = pair.observation > threshold ? 1.0 : 0.0;
    s += (p - o) * (p - o);
  }
  return s / static_cast<double>(set.size());
}

struct ErrorIntervalBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::optional<double> rmse;  // empty when count == 0
};

struct ErrorIntervalResult {
  std::vector<ErrorIntervalBin> intervals;
  std::size_t excluded = 0;  // pairs without a baseline error
};

/// Groups pairs by |baseline error| into [edges[k], edges[k+1]) and reports the
/// ensemble-mean rmse of each group.
inline ErrorIntervalResult error_interval_rmse(std::span<const VerificationPair> set, std::span<const double> baseline,
                                               std::span<const double> edges) {
  if (baseline.size() != set.size()) throw DataError("error_interval_rmse: one baseline error per pair required");
  if (edges.size() < 2) throw ConfigError("error_interval_rmse: need at least two interval edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i - 1] < edges[i])) throw ConfigError("error_interval_rmse: edges must be strictly increasing");
  ErrorIntervalResult out;
  std::vector<double> ss(edges.size() - 1, 0.0);
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) out.intervals.push_back({edges[k], edges[k + 1], 0, std::nullopt});
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (is_missing(baseline[i])) {
      ++out.excluded;
      continue;
    }
    const double mag = std::abs(baseline[i]);
    const auto it = std::upper_bound(edges.begin(), edges.end(), mag);
    if (it == edges.begin() || it == edges.end()) continue;
    const auto k = static_cast<std::size_t>(it - edges.begin()) - 1;
    const double e = ensemble_mean(set[i].members) - set[i].observation;
    ss[k] += e * e;
    ++out.intervals[k].count;
  }
  for (std::size_t k = 0; k < ss.size(); ++k)
    if (out.intervals[k].count > 0) out.intervals[k].rmse = std::sqrt(ss[k] / static_cast<double>(out.intervals[k].count));
  return out;
}

// ---------------------------------------------------------------------------
// Aggregated report

struct MetricSummary {
  std::optional<Timestamp> lead;  // empty for the aggregate over all leads
  std::size_t count = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double crps = 0.0;
  RankHistogram ranks;
  std::vector<double> brier;  // one per threshold
  std::vector<SpreadErrorBin> spread;
};

struct VerificationReport {
  std::vector<double> thresholds;
  std::vector<MetricSummary> per_lead;
  MetricSummary aggregate;
};

struct ReportOptions {
  std::vector<double> thresholds;
  std::size_t spread_bins = 10;
  std::uint64_t seed = 0;
};

inline MetricSummary summarize(std::span<const VerificationPair> set, std::optional<Timestamp> lead,
                               const ReportOptions& opt) {
  MetricSummary s;
  s.lead = lead;
  s.count = set.size();
  s.bias = bias(set);
  s.rmse = rmse(set);
  s.crps = crps(set);
  s.ranks = rank_histogram(set, opt.seed);
  for (double t : opt.thresholds) s.brier.push_back(brier(set, t));
  if (opt.spread_bins > 0 && set.size() >= opt.spread_bins) s.spread = spread_error(set, opt.spread_bins, opt.seed);
  return s;
}

inline VerificationReport build_report(const VerificationSet& set, const ReportOptions& opt) {
  detail::require_pairs(set.pairs, "report");
  VerificationReport r;
  r.thresholds = opt.thresholds;
  std::map<Timestamp, std::vector<VerificationPair>> by_lead;
  for (const auto& p : set.pairs) by_lead[p.lead].push_back(p);
  for (const auto& [lead, pairs] : by_lead) r.per_lead.push_back(summarize(pairs, lead, opt));
  r.aggregate = summarize(set.pairs, std::nullopt, opt);
  return r;
}

inline constexpr std::string_view kReportHeader = "lead_s,metric,value,bin,lo,hi,count";

inline void write_report(std::ostream& out, const VerificationReport& r) {
  out << kReportHeader << '\n';
  auto emit = [&](const MetricSummary& s) {
    const std::string lead = s.lead ? std::to_string(*s.lead) : "all";
    const std::string n = std::to_string(s.count);
    out << lead << ",bias," << format_real(s.bias) << ",,,," << n << '\n';
    out << lead << ",rmse," << format_real(s.rmse) << ",,,," << n << '\n';
    out << lead << ",crps," << format_real(s.crps) << ",,,," << n << '\n';
    out << lead << ",mre," << format_real(s.ranks.mre) << ",,,," << n << '\n';
    for (std::size_t k = 0; k < s.brier.size(); ++k)
      out << lead << ",brier," << format_real(s.brier[k]) << ',' << k << ',' << format_real(r.thresholds[k]) << ','
          << format_real(r.thresholds[k]) << ',' << n << '\n';
    for (std::size_t b = 0; b < s.spread.size(); ++b) {
      const auto& bin = s.spread[b];
      out << lead << ",spread," << format_real(bin.mean_spread) << ',' << b << ",,," << bin.count << '\n';
      out << lead << ",spread_rmse," << format_real(bin.rmse) << ',' << b << ',' << format_real(bin.lo) << ','
          << format_real(bin.hi) << ',' << bin.count << '\n';
    }
  };
  for (const auto& s : r.per_lead) emit(s);
  emit(r.aggregate);
}

inline void write_rank_histogram(std::ostream& out, const RankHistogram& h) {
  out << "rank,count\n";
  for (std::size_t r = 0; r < h.counts.size(); ++r) out << (r + 1) << ',' << h.counts[r] << '\n';
}

}  // namespace deepanen
