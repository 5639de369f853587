#pragma once

#include <random>
#include <string>
#include <vector>

#include "deepanen/archive.hpp"
#include "deepanen/embed_net.hpp"
#include "deepanen/trainer.hpp"

namespace fixtures {

/// Single-station archive with hourly leads and daily cycles, filled with
/// standard-normal noise, plus observations equal to variable 0 at each lead.
struct Small {
  deepanen::ForecastArchive fcst;
  deepanen::ObservationArchive obs;
};

inline Small random_archive(std::size_t n_vars, std::size_t n_cycles, std::size_t n_leads, std::uint64_t seed) {
  std::vector<std::string> vars;
  for (std::size_t v = 0; v < n_vars; ++v) vars.push_back("x" + std::to_string(v));
  std::vector<deepanen::Timestamp> cycles, leads, times;
  for (std::size_t c = 0; c < n_cycles; ++c) cycles.push_back(static_cast<deepanen::Timestamp>(c) * 86400);
  for (std::size_t l = 0; l < n_leads; ++l) leads.push_back(static_cast<deepanen::Timestamp>(l) * 3600);
  for (auto c : cycles)
    for (auto l : leads) times.push_back(c + l);
  Small s{deepanen::ForecastArchive::with_shape({"A"}, vars, cycles, leads),
          deepanen::ObservationArchive::with_shape({"A"}, times)};
  deepanen::Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : s.fcst.values) x = n(rng);
  for (std::size_t c = 0; c < n_cycles; ++c)
    for (std::size_t l = 0; l < n_leads; ++l) s.obs.at(0, c * n_leads + l) = s.fcst.at(0, 0, c, l);
  return s;
}

inline deepanen::ForecastWindow random_window(std::size_t n_vars, std::size_t length, deepanen::Rng& rng) {
  deepanen::ForecastWindow w;
  w.n_variables = n_vars;
  w.length = length;
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < n_vars * length; ++i) w.data.push_back(n(rng));
  return w;
}

/// Randomly initialized model with identity normalization.
inline deepanen::ModelCheckpoint random_model(std::size_t n_inputs, std::size_t hidden, std::size_t layers,
                                              std::size_t embed, std::size_t half_window, deepanen::Rng& rng,
                                              double scale = 1.0) {
  deepanen::ModelCheckpoint m;
  for (std::size_t v = 0; v < n_inputs; ++v) m.meta.variables.push_back("x" + std::to_string(v));
  m.meta.half_window = half_window;
  m.norm.mean.assign(n_inputs, 0.0);
  m.norm.sigma.assign(n_inputs, 1.0);
  m.params = deepanen::init_network({n_inputs, hidden, layers, embed}, rng);
  m.params.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    for (auto& x : d) x *= scale;
  });
  return m;
}

inline std::vector<deepanen::Triplet> random_triplets(std::size_t n, std::size_t n_vars, std::size_t length,
                                                      deepanen::Rng& rng) {
  std::vector<deepanen::Triplet> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({random_window(n_vars, length, rng), random_window(n_vars, length, rng),
                   random_window(n_vars, length, rng), 1.0});
  return out;
}

}  // namespace fixtures
