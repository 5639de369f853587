#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "deepanen/archive.hpp"

namespace deepanen {

/// Nonlinear map from the hidden variables to the observation.
enum class LatentRule {
  ProductSine,  // h1 * h2 + sin(h3)
  Sum,          // h1 + h2 + ...
};

inline std::string to_string(LatentRule r) { return r == LatentRule::ProductSine ? "product_sine" : "sum"; }

inline LatentRule parse_latent_rule(std::string_view s) {
  if (s == "product_sine") return LatentRule::ProductSine;
  if (s == "sum") return LatentRule::Sum;
  throw ConfigError("unknown latent rule '" + std::string(s) + "'");
}

struct SynthSpec {
  std::size_t n_stations = 1;
  std::size_t n_cycles = 1000;
  std::size_t n_leads = 3;
  std::size_t n_variables = 6;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden = {0, 1, 2};  // variable indices feeding the rule
  LatentRule rule = LatentRule::ProductSine;
  double noise_sigma = 0.1;
  double lead_correlation = 0.5;  // AR(1) coefficient along the lead axis
  Timestamp start_time = 1262304000;  // 2010-01-01T00:00:00Z
  Timestamp cycle_step_s = 86400;
  Timestamp lead_step_s = 3600;

  void validate() const {
    if (n_stations == 0 || n_cycles == 0 || n_leads == 0 || n_variables == 0)
      throw ConfigError("synth: dimensions must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
    if (!(lead_correlation > -1.0 && lead_correlation < 1.0)) throw ConfigError("synth: lead_correlation must be in (-1, 1)");
    if (hidden.empty()) throw ConfigError("synth: hidden subset must not be empty");
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      if (hidden[i] >= n_variables) throw ConfigError("synth: hidden variable index out of range");
      for (std::size_t j = 0; j < i; ++j)
        if (hidden[i] == hidden[j]) throw ConfigError("synth: duplicate hidden variable");
    }
    if (rule == LatentRule::ProductSine && hidden.size() != 3)
      throw ConfigError("synth: product_sine rule needs exactly 3 hidden variables");
    if (cycle_step_s <= 0 || lead_step_s <= 0) throw ConfigError("synth: time steps must be positive");
    if (static_cast<Timestamp>(n_leads - 1) * lead_step_s >= cycle_step_s)
      throw ConfigError("synth: lead span must be shorter than the cycle step so valid times are unique");
  }
};

/// Ground truth needed to build oracle predictions.
struct SynthManifest {
  LatentRule rule = LatentRule::ProductSine;
  std::vector<std::string> hidden;  // variable names, in rule order
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  std::string formula() const {
    if (rule == LatentRule::ProductSine) return hidden[0] + "*" + hidden[1] + "+sin(" + hidden[2] + ")";
    std::string f;
    for (const auto& h : hidden) f += (f.empty() ? "" : "+") + h;
    return f;
  }
};

struct SynthDataset {
  ForecastArchive forecasts;
  ObservationArchive observations;
  SynthManifest manifest;
};

/// Noise-free observation for the hidden-variable values `h` (rule order).
inline double latent_value(LatentRule rule, std::span<const double> h) {
  if (rule == LatentRule::ProductSine) return h[0] * h[1] + std::sin(h[2]);
  double s = 0.0;
  for (double x : h) s += x;
  return s;
}

inline std::string synth_variable_name(std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n).size();
  std::string digits = std::to_string(i + 1);
  return "v" + std::string(width - digits.size(), '0') + digits;
}

/// Forecast variables are standard-normal AR(1) series along the lead axis,
/// independent across stations, cycles and variables. The observation at
/// (station, cycle, lead) applies the rule to the hidden variables at that
/// same lead and adds Normal(0, noise_sigma) noise.
inline SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<std::string> stations, variables;
  for (std::size_t s = 0; s < spec.n_stations; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%03zu", s + 1);
    stations.emplace_back(buf);
  }
  for (std::size_t v = 0; v < spec.n_variables; ++v) variables.push_back(synth_variable_name(v, spec.n_variables));
  std::vector<Timestamp> cycles, leads, times;
  for (std::size_t c = 0; c < spec.n_cycles; ++c) cycles.push_back(spec.start_time + static_cast<Timestamp>(c) * spec.cycle_step_s);
  for (std::size_t l = 0; l < spec.n_leads; ++l) leads.push_back(static_cast<Timestamp>(l) * spec.lead_step_s);
  for (auto c : cycles)
    for (auto l : leads) times.push_back(c + l);

  SynthDataset ds;
  ds.forecasts = ForecastArchive::with_shape(stations, variables, cycles, leads);
  ds.observations = ObservationArchive::with_shape(stations, times);
  ds.manifest.rule = spec.rule;
  ds.manifest.noise_sigma = spec.noise_sigma;
  ds.manifest.seed = spec.seed;
  for (auto h : spec.hidden) ds.manifest.hidden.push_back(variables[h]);

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho = spec.lead_correlation;
  const double innov = std::sqrt(1.0 - rho * rho);
  std::vector<double> h(spec.hidden.size());
  for (std::size_t s = 0; s < spec.n_stations; ++s)
    for (std::size_t c = 0; c < spec.n_cycles; ++c) {
      for (std::size_t v = 0; v < spec.n_variables; ++v) {
        double x = normal(rng);
        ds.forecasts.at(s, v, c, 0) = x;
        for (std::size_t l = 1; l < spec.n_leads; ++l) {
          x = rho * x + innov * normal(rng);
          ds.forecasts.at(s, v, c, l) = x;
        }
      }
      for (std::size_t l = 0; l < spec.n_leads; ++l) {
        for (std::size_t k = 0; k < spec.hidden.size(); ++k) h[k] = ds.forecasts.at(s, spec.hidden[k], c, l);
        const double eps = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal(rng) : 0.0;
        ds.observations.at(s, c * spec.n_leads + l) = latent_value(spec.rule, h) + eps;
      }
    }
  return ds;
}

inline void write_manifest(std::ostream& out, const SynthSpec& spec, const SynthManifest& m) {
  out << "rule=" << to_string(m.rule) << '\n';
  out << "formula=" << m.formula() << '\n';
  out << "hidden=";
  for (std::size_t i = 0; i < m.hidden.size(); ++i) out << (i ? "," : "") << m.hidden[i];
  out << '\n';
  out << "noise_sigma=" << format_real(m.noise_sigma) << '\n';
  out << "seed=" << m.seed << '\n';
  out << "n_stations=" << spec.n_stations << '\n';
  out << "n_cycles=" << spec.n_cycles << '\n';
  out << "n_leads=" << spec.n_leads << '\n';
  out << "n_variables=" << spec.n_variables << '\n';
  out << "lead_correlation=" << format_real(spec.lead_correlation) << '\n';
}

}  // namespace deepanen
