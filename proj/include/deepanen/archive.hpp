#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "deepanen/common.hpp"

namespace deepanen {

/// Dense archive of deterministic forecasts indexed [station][variable][cycle][lead].
/// Missing cells hold kMissing.
struct ForecastArchive {
  std::vector<std::string> stations;
  std::vector<std::string> variables;
  std::vector<Timestamp> cycles;  // initialization times
  std::vector<Timestamp> leads;   // offsets in seconds
  std::vector<double> values;

  std::size_t n_stations() const { return stations.size(); }
  std::size_t n_variables() const { return variables.size(); }
  std::size_t n_cycles() const { return cycles.size(); }
  std::size_t n_leads() const { return leads.size(); }

  std::size_t offset(std::size_t s, std::size_t v, std::size_t c, std::size_t l) const {
    return ((s * n_variables() + v) * n_cycles() + c) * n_leads() + l;
  }
  double at(std::size_t s, std::size_t v, std::size_t c, std::size_t l) const { return values[offset(s, v, c, l)]; }
  double& at(std::size_t s, std::size_t v, std::size_t c, std::size_t l) { return values[offset(s, v, c, l)]; }

  /// Allocates an all-missing archive with the given index lists.
  static ForecastArchive with_shape(std::vector<std::string> stations, std::vector<std::string> variables,
                                    std::vector<Timestamp> cycles, std::vector<Timestamp> leads) {
    ForecastArchive a{std::move(stations), std::move(variables), std::move(cycles), std::move(leads), {}};
    a.values.assign(a.n_stations() * a.n_variables() * a.n_cycles() * a.n_leads(), kMissing);
    a.validate();
    return a;
  }

  std::optional<std::size_t> station_index(std::string_view id) const {
    const auto it = std::find(stations.begin(), stations.end(), id);
    if (it == stations.end()) return std::nullopt;
    return static_cast<std::size_t>(it - stations.begin());
  }
  std::optional<std::size_t> variable_index(std::string_view name) const {
    const auto it = std::find(variables.begin(), variables.end(), name);
    if (it == variables.end()) return std::nullopt;
    return static_cast<std::size_t>(it - variables.begin());
  }
  std::optional<std::size_t> cycle_index(Timestamp t) const {
    const auto it = std::lower_bound(cycles.begin(), cycles.end(), t);
    if (it == cycles.end() || *it != t) return std::nullopt;
    return static_cast<std::size_t>(it - cycles.begin());
  }
  std::optional<std::size_t> lead_index(Timestamp l) const {
    const auto it = std::lower_bound(leads.begin(), leads.end(), l);
    if (it == leads.end() || *it != l) return std::nullopt;
    return static_cast<std::size_t>(it - leads.begin());
  }

  /// Cycle indices whose initialization time falls in [start, end).
  IndexRange cycles_between(Timestamp start, Timestamp end) const {
    const auto lo = std::lower_bound(cycles.begin(), cycles.end(), start);
    const auto hi = std::lower_bound(cycles.begin(), cycles.end(), end);
    return {static_cast<std::size_t>(lo - cycles.begin()),
            static_cast<std::size_t>(std::max(lo, hi) - cycles.begin())};
  }

  std::size_t missing_count() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), is_missing));
  }

  void validate() const;
};

/// Observed predictand indexed [station][valid time].
struct ObservationArchive {
  std::vector<std::string> stations;
  std::vector<Timestamp> times;
  std::vector<double> values;

  std::size_t n_stations() const { return stations.size(); }
  std::size_t n_times() const { return times.size(); }
  double at(std::size_t s, std::size_t t) const { return values[s * n_times() + t]; }
  double& at(std::size_t s, std::size_t t) { return values[s * n_times() + t]; }

  static ObservationArchive with_shape(std::vector<std::string> stations, std::vector<Timestamp> times) {
    ObservationArchive a{std::move(stations), std::move(times), {}};
    a.values.assign(a.n_stations() * a.n_times(), kMissing);
    a.validate();
    return a;
  }

  std::optional<std::size_t> station_index(std::string_view id) const {
    const auto it = std::find(stations.begin(), stations.end(), id);
    if (it == stations.end()) return std::nullopt;
    return static_cast<std::size_t>(it - stations.begin());
  }

  /// Value at (station, valid time); kMissing when either is not in the archive.
  double value_at(std::size_t station, Timestamp t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end() || *it != t) return kMissing;
    return at(station, static_cast<std::size_t>(it - times.begin()));
  }
  double value_at(std::string_view station, Timestamp t) const {
    const auto s = station_index(station);
    return s ? value_at(*s, t) : kMissing;
  }

  void validate() const;
};

struct WindowOrigin {
  std::size_t station = 0;
  std::size_t cycle = 0;
  std::size_t lead = 0;
};

/// Forecast values around one lead, [variable][position], position spanning
/// lead - half_window ... lead + half_window. Never contains missing values.
struct ForecastWindow {
  std::size_t n_variables = 0;
  std::size_t length = 0;
  std::vector<double> data;
  WindowOrigin origin;

  double operator()(std::size_t variable, std::size_t pos) const { return data[variable * length + pos]; }
  double& operator()(std::size_t variable, std::size_t pos) { return data[variable * length + pos]; }
  std::size_t half_window() const { return length / 2; }

  static ForecastWindow from_rows(const std::vector<std::vector<double>>& rows) {
    ForecastWindow w;
    w.n_variables = rows.size();
    w.length = rows.empty() ? 0 : rows.front().size();
    for (const auto& r : rows) {
      if (r.size() != w.length) throw DataError("ragged window rows");
      w.data.insert(w.data.end(), r.begin(), r.end());
    }
    return w;
  }
};

/// Per-variable climatological mean and population standard deviation.
struct ClimatologyStats {
  std::vector<double> mean;
  std::vector<double> sigma;
  std::vector<bool> degenerate;  // fewer than 2 samples or zero variance
  std::size_t population = 0;    // minimum per-variable sample count

  std::size_t degenerate_count() const {
    return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), true));
  }
};

// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void require_strictly_increasing(const std::vector<T>& v, const char* what) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i - 1] < v[i])) throw DataError(std::string(what) + " must be strictly increasing");
}

inline void require_unique(const std::vector<std::string>& v, const char* what) {
  std::set<std::string> seen;
  for (const auto& s : v)
    if (!seen.insert(s).second) throw DataError(std::string("duplicate ") + what + " '" + s + "'");
}

inline std::string line_error(std::size_t line, const std::string& msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

/// Reads non-empty lines, validates the header, hands each data row (split on
/// commas) to `row` together with its 1-based line number.
template <typename RowFn>
void read_csv(std::istream& in, std::string_view expected_header, RowFn&& row) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  const auto n_cols = split(expected_header, ',').size();
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (!have_header) {
      if (t != expected_header)
        throw DataError(line_error(line_no, "expected header '" + std::string(expected_header) + "'"));
      have_header = true;
      continue;
    }
    const auto cols = split(t, ',');
    if (cols.size() != n_cols)
      throw DataError(line_error(line_no, "expected " + std::to_string(n_cols) + " columns, got " +
                                              std::to_string(cols.size())));
    row(cols, line_no);
  }
  if (!have_header) throw DataError("missing header '" + std::string(expected_header) + "'");
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

template <typename T>
std::vector<T> sorted_unique(const std::set<T>& s) {
  return std::vector<T>(s.begin(), s.end());
}

template <typename T>
std::size_t index_of(const std::vector<T>& sorted, const T& v) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

}  // namespace detail

inline void ForecastArchive::validate() const {
  if (values.size() != n_stations() * n_variables() * n_cycles() * n_leads())
    throw DataError("forecast array extents do not match index lists");
  detail::require_strictly_increasing(cycles, "cycles");
  detail::require_strictly_increasing(leads, "leads");
  detail::require_unique(stations, "station");
  detail::require_unique(variables, "variable");
}

inline void ObservationArchive::validate() const {
  if (values.size() != n_stations() * n_times())
    throw DataError("observation array extents do not match index lists");
  detail::require_strictly_increasing(times, "observation times");
  detail::require_unique(stations, "station");
}

// ---------------------------------------------------------------------------
// CSV I/O

inline constexpr std::string_view kForecastHeader = "station,variable,cycle_time,lead_s,value";
inline constexpr std::string_view kObservationHeader = "station,valid_time,value";

inline ForecastArchive read_forecasts(std::istream& in) {
  struct Row {
    std::string station, variable;
    Timestamp cycle, lead;
    double value;
  };
  std::vector<Row> rows;
  std::set<std::string> stations, variables;
  std::set<Timestamp> cycles, leads;

  detail::read_csv(in, kForecastHeader, [&](const std::vector<std::string_view>& cols, std::size_t line) {
    Row r;
    r.station = std::string(trim(cols[0]));
    r.variable = std::string(trim(cols[1]));
    if (r.station.empty() || r.variable.empty()) throw DataError(detail::line_error(line, "empty station or variable"));
    if (!parse_iso8601(cols[2], r.cycle))
      throw DataError(detail::line_error(line, "unparsable cycle_time '" + std::string(cols[2]) + "'"));
    if (!parse_int(cols[3], r.lead)) throw DataError(detail::line_error(line, "unparsable lead_s '" + std::string(cols[3]) + "'"));
    if (trim(cols[4]).empty()) {
      r.value = kMissing;
    } else if (!parse_real(cols[4], r.value)) {
      throw DataError(detail::line_error(line, "unparsable value '" + std::string(cols[4]) + "'"));
    }
    stations.insert(r.station);
    variables.insert(r.variable);
    cycles.insert(r.cycle);
    leads.insert(r.lead);
    rows.push_back(std::move(r));
  });
  if (rows.empty()) throw DataError("no records");

  auto archive = ForecastArchive::with_shape(detail::sorted_unique(stations), detail::sorted_unique(variables),
                                             detail::sorted_unique(cycles), detail::sorted_unique(leads));
  std::vector<bool> seen(archive.values.size(), false);
  for (const auto& r : rows) {
    const auto off = archive.offset(detail::index_of(archive.stations, r.station),
                                    detail::index_of(archive.variables, r.variable),
                                    detail::index_of(archive.cycles, r.cycle), detail::index_of(archive.leads, r.lead));
    if (seen[off])
      throw DataError("duplicate key (" + r.station + ", " + r.variable + ", " + format_iso8601(r.cycle) + ", " +
                      std::to_string(r.lead) + ")");
    seen[off] = true;
    archive.values[off] = r.value;
  }
  return archive;
}

inline ForecastArchive load_forecasts(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return read_forecasts(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline ObservationArchive read_observations(std::istream& in) {
  struct Row {
    std::string station;
    Timestamp time;
    double value;
  };
  std::vector<Row> rows;
  std::set<std::string> stations;
  std::set<Timestamp> times;
  detail::read_csv(in, kObservationHeader, [&](const std::vector<std::string_view>& cols, std::size_t line) {
    Row r;
    r.station = std::string(trim(cols[0]));
    if (r.station.empty()) throw DataError(detail::line_error(line, "empty station"));
    if (!parse_iso8601(cols[1], r.time))
      throw DataError(detail::line_error(line, "unparsable valid_time '" + std::string(cols[1]) + "'"));
    if (trim(cols[2]).empty()) {
      r.value = kMissing;
    } else if (!parse_real(cols[2], r.value)) {
      throw DataError(detail::line_error(line, "unparsable value '" + std::string(cols[2]) + "'"));
    }
    stations.insert(r.station);
    times.insert(r.time);
    rows.push_back(std::move(r));
  });
  if (rows.empty()) throw DataError("no records");

  auto archive = ObservationArchive::with_shape(detail::sorted_unique(stations), detail::sorted_unique(times));
  std::vector<bool> seen(archive.values.size(), false);
  for (const auto& r : rows) {
    const auto off = detail::index_of(archive.stations, r.station) * archive.n_times() +
                     detail::index_of(archive.times, r.time);
    if (seen[off]) throw DataError("duplicate key (" + r.station + ", " + format_iso8601(r.time) + ")");
    seen[off] = true;
    archive.values[off] = r.value;
  }
  return archive;
}

inline ObservationArchive load_observations(const std::string& path) {
  auto in = detail::open_input(path);
  try {
    return read_observations(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Writes every cell, missing ones with an empty value, so index lists survive a reload.
inline void write_forecasts(std::ostream& out, const ForecastArchive& a) {
  out << kForecastHeader << '\n';
  for (std::size_t s = 0; s < a.n_stations(); ++s)
    for (std::size_t v = 0; v < a.n_variables(); ++v)
      for (std::size_t c = 0; c < a.n_cycles(); ++c) {
        const auto cycle = format_iso8601(a.cycles[c]);
        for (std::size_t l = 0; l < a.n_leads(); ++l) {
          const double x = a.at(s, v, c, l);
          out << a.stations[s] << ',' << a.variables[v] << ',' << cycle << ',' << a.leads[l] << ','
              << (is_missing(x) ? std::string() : format_real(x)) << '\n';
        }
      }
}

inline void write_observations(std::ostream& out, const ObservationArchive& a) {
  out << kObservationHeader << '\n';
  for (std::size_t s = 0; s < a.n_stations(); ++s)
    for (std::size_t t = 0; t < a.n_times(); ++t) {
      const double x = a.at(s, t);
      out << a.stations[s] << ',' << format_iso8601(a.times[t]) << ',' << (is_missing(x) ? std::string() : format_real(x))
          << '\n';
    }
}

// ---------------------------------------------------------------------------
// Indexing and slicing

inline Timestamp valid_time(const ForecastArchive& a, std::size_t cycle, std::size_t lead) {
  if (cycle >= a.n_cycles()) throw std::out_of_range("cycle index " + std::to_string(cycle) + " out of range");
  if (lead >= a.n_leads()) throw std::out_of_range("lead index " + std::to_string(lead) + " out of range");
  return a.cycles[cycle] + a.leads[lead];
}

/// Observation paired with forecast (station, cycle, lead); kMissing when the
/// station or valid time is absent from the observation archive.
inline double paired_observation(const ForecastArchive& fcst, const ObservationArchive& obs, std::size_t station,
                                 std::size_t cycle, std::size_t lead) {
  return obs.value_at(fcst.stations[station], valid_time(fcst, cycle, lead));
}

enum class WindowStatus { Ok, OutOfBounds, Incomplete };

/// Non-throwing window extraction; `out` is filled only when the result is Ok.
inline WindowStatus try_extract_window(const ForecastArchive& a, std::size_t station, std::size_t cycle,
                                       std::size_t lead, std::size_t half_window, ForecastWindow& out) {
  if (station >= a.n_stations() || cycle >= a.n_cycles() || lead >= a.n_leads())
    throw std::out_of_range("window origin out of range");
  if (lead < half_window || lead + half_window >= a.n_leads()) return WindowStatus::OutOfBounds;
  const std::size_t len = 2 * half_window + 1;
  out.n_variables = a.n_variables();
  out.length = len;
  out.data.resize(out.n_variables * len);
  out.origin = {station, cycle, lead};
  for (std::size_t v = 0; v < a.n_variables(); ++v) {
    const double* src = &a.values[a.offset(station, v, cycle, lead - half_window)];
    for (std::size_t j = 0; j < len; ++j) {
      if (is_missing(src[j])) return WindowStatus::Incomplete;
      out.data[v * len + j] = src[j];
    }
  }
  return WindowStatus::Ok;
}

inline std::optional<ForecastWindow> find_window(const ForecastArchive& a, std::size_t station, std::size_t cycle,
                                                 std::size_t lead, std::size_t half_window) {
  ForecastWindow w;
  if (try_extract_window(a, station, cycle, lead, half_window, w) != WindowStatus::Ok) return std::nullopt;
  return w;
}

inline ForecastWindow extract_window(const ForecastArchive& a, std::size_t station, std::size_t cycle, std::size_t lead,
                                     std::size_t half_window) {
  ForecastWindow w;
  switch (try_extract_window(a, station, cycle, lead, half_window, w)) {
    case WindowStatus::Ok:
      return w;
    case WindowStatus::OutOfBounds:
      throw DataError("window out of bounds");
    case WindowStatus::Incomplete:
      break;
  }
  throw DataError("incomplete window");
}

/// Mean and population standard deviation per variable over the non-missing
/// values at (station, ·, cycles in range, lead).
inline ClimatologyStats climatology_stats(const ForecastArchive& a, std::size_t station, std::size_t lead,
                                          IndexRange cycles) {
  if (cycles.empty()) throw DataError("empty cycle range");
  if (cycles.end > a.n_cycles() || station >= a.n_stations() || lead >= a.n_leads())
    throw std::out_of_range("climatology index out of range");
  ClimatologyStats st;
  st.mean.assign(a.n_variables(), 0.0);
  st.sigma.assign(a.n_variables(), 0.0);
  st.degenerate.assign(a.n_variables(), false);
  st.population = std::numeric_limits<std::size_t>::max();
  for (std::size_t v = 0; v < a.n_variables(); ++v) {
    std::size_t n = 0;
    double sum = 0.0;
    for (std::size_t c = cycles.begin; c < cycles.end; ++c) {
      const double x = a.at(station, v, c, lead);
      if (is_missing(x)) continue;
      ++n;
      sum += x;
    }
    st.population = std::min(st.population, n);
    if (n == 0) {
      st.degenerate[v] = true;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t c = cycles.begin; c < cycles.end; ++c) {
      const double x = a.at(station, v, c, lead);
      if (!is_missing(x)) ss += (x - mean) * (x - mean);
    }
    st.mean[v] = mean;
    st.sigma[v] = n >= 2 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
    st.degenerate[v] = n < 2 || st.sigma[v] == 0.0;
  }
  if (a.n_variables() == 0) st.population = 0;
  return st;
}

}  // namespace deepanen
