#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "deepanen/archive.hpp"
#include "deepanen/embed_net.hpp"

namespace deepanen {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct EarlyStopConfig {
  std::size_t patience = 5000;             // iterations without sufficient improvement
  double min_relative_improvement = 1e-3;  // relative drop in validation loss that resets patience
};

struct TrainConfig {
  double alpha = 1.0;  // triplet margin
  double learning_rate = 0.005;
  double dropout_rate = 0.015;
  std::size_t max_iterations = 200000;
  std::size_t batch_size = 32;
  std::size_t k_pos = 11;
  std::uint64_t seed = 0;
  EarlyStopConfig early_stop;
  AdamConfig adam;
  std::size_t eval_interval = 100;
  double validation_fraction = 0.1;
  std::size_t monitor_triplets = 256;  // fixed training triplets used for the logged train loss

  std::size_t half_window = 1;
  std::size_t hidden = 20;
  std::size_t layers = 3;
  std::size_t embed_dim = 20;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (k_pos == 0) throw ConfigError("k_pos must be >= 1");
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("validation_fraction must be in (0, 1)");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0))
      throw ConfigError("invalid ADAM constants");
    if (hidden == 0 || layers == 0 || embed_dim == 0) throw ConfigError("network dimensions must be positive");
  }
};

/// Anchor/positive/negative windows; the anchor's observation is closer to
/// the positive's than to the negative's by obs_gap > 0.
struct Triplet {
  ForecastWindow anchor;
  ForecastWindow positive;
  ForecastWindow negative;
  double obs_gap = 0.0;
};

/// Raised when a loss or gradient becomes non-finite. Carries the best model
/// seen before the failure.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::uint64_t iteration, std::shared_ptr<const ModelCheckpoint> last_good)
      : Error(msg), iteration_(iteration), last_good_(std::move(last_good)) {}
  std::uint64_t iteration() const { return iteration_; }
  const ModelCheckpoint* last_good() const { return last_good_.get(); }

 private:
  std::uint64_t iteration_;
  std::shared_ptr<const ModelCheckpoint> last_good_;
};

// ---------------------------------------------------------------------------
// Reverse-analog triplet sampling

/// Cycles at one (station, lead) with a complete window and an observation.
struct TripletPool {
  struct Entry {
    std::size_t cycle = 0;
    double observation = 0.0;
    ForecastWindow window;
  };
  std::size_t station = 0;
  std::size_t lead = 0;
  std::vector<Entry> entries;  // ascending cycle
};

inline TripletPool build_pool(const ForecastArchive& fcst, const ObservationArchive& obs, std::size_t station,
                              std::size_t lead, IndexRange cycles, std::size_t half_window) {
  TripletPool pool;
  pool.station = station;
  pool.lead = lead;
  const auto obs_station = obs.station_index(fcst.stations.at(station));
  if (!obs_station) return pool;
  ForecastWindow w;
  for (std::size_t c = cycles.begin; c < cycles.end; ++c) {
    const double o = obs.value_at(*obs_station, valid_time(fcst, c, lead));
    if (is_missing(o)) continue;
    if (try_extract_window(fcst, station, c, lead, half_window, w) != WindowStatus::Ok) continue;
    pool.entries.push_back({c, o, w});
  }
  return pool;
}

/// Draws one triplet for `anchor` from `candidates` (the anchor's own cycle is
/// ignored). Candidates are ranked by |O_anchor - O_candidate| (ties: earlier
/// cycle). The positive is chosen by roulette over the k_pos closest with
/// fitness 1/rank; the negative uniformly among the remaining candidates whose
/// distance strictly exceeds the k_pos-th. Returns nullopt when no valid
/// triplet exists.
inline std::optional<Triplet> draw_triplet(const TripletPool::Entry& anchor, const TripletPool& candidates,
                                           std::size_t k_pos, Rng& rng) {
  struct Ranked {
    double diff;
    std::size_t idx;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(candidates.entries.size());
  for (std::size_t i = 0; i < candidates.entries.size(); ++i) {
    const auto& e = candidates.entries[i];
    if (e.cycle == anchor.cycle) continue;
    ranked.push_back({std::abs(anchor.observation - e.observation), i});
  }
  if (ranked.size() < k_pos + 1) return std::nullopt;
  const auto closer = [&](const Ranked& a, const Ranked& b) {
    if (a.diff != b.diff) return a.diff < b.diff;
    return candidates.entries[a.idx].cycle < candidates.entries[b.idx].cycle;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k_pos), ranked.end(), closer);

  const double threshold = ranked[k_pos - 1].diff;
  std::size_t n_neg = 0;
  for (std::size_t i = k_pos; i < ranked.size(); ++i) n_neg += ranked[i].diff > threshold;
  if (n_neg == 0) return std::nullopt;

  double total_fitness = 0.0;
  for (std::size_t r = 1; r <= k_pos; ++r) total_fitness += 1.0 / static_cast<double>(r);
  const double spin = std::uniform_real_distribution<double>(0.0, total_fitness)(rng);
  std::size_t pos_rank = k_pos - 1;
  double acc = 0.0;
  for (std::size_t r = 1; r <= k_pos; ++r) {
    acc += 1.0 / static_cast<double>(r);
    if (spin < acc) {
      pos_rank = r - 1;
      break;
    }
  }

  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n_neg - 1)(rng);
  std::size_t neg_idx = 0;
  for (std::size_t i = k_pos; i < ranked.size(); ++i) {
    if (!(ranked[i].diff > threshold)) continue;
    if (pick == 0) {
      neg_idx = ranked[i].idx;
      break;
    }
    --pick;
  }

  const auto& p = candidates.entries[ranked[pos_rank].idx];
  const auto& n = candidates.entries[neg_idx];
  return Triplet{anchor.window, p.window, n.window,
                 std::abs(anchor.observation - n.observation) - std::abs(anchor.observation - p.observation)};
}

struct TripletSample {
  std::vector<Triplet> triplets;
  std::size_t skipped_anchors = 0;
};

/// One triplet per eligible anchor cycle of the range, for each station at `lead`.
inline TripletSample sample_triplets(const ForecastArchive& fcst, const ObservationArchive& obs,
                                     std::span<const std::size_t> stations, std::size_t lead, IndexRange cycles,
                                     const TrainConfig& cfg, Rng& rng) {
  TripletSample out;
  for (const auto s : stations) {
    const auto pool = build_pool(fcst, obs, s, lead, cycles, cfg.half_window);
    out.skipped_anchors += cycles.size() - pool.entries.size();
    for (const auto& anchor : pool.entries) {
      auto t = draw_triplet(anchor, pool, cfg.k_pos, rng);
      if (t)
        out.triplets.push_back(std::move(*t));
      else
        ++out.skipped_anchors;
    }
  }
  if (out.triplets.empty()) throw DataError("no triplets could be sampled");
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss);
}

/// max(0, |e_a - e_p| - |e_a - e_n| + alpha).
inline double triplet_loss(std::span<const double> e_a, std::span<const double> e_p, std::span<const double> e_n,
                           double alpha) {
  if (e_a.size() != e_p.size() || e_a.size() != e_n.size()) throw DataError("triplet_loss: dimension mismatch");
  return std::max(0.0, euclidean_distance(e_a, e_p) - euclidean_distance(e_a, e_n) + alpha);
}

struct BackwardResult {
  NetworkParams gradients;
  double loss = 0.0;               // mean hinge loss over the batch
  std::size_t active_triplets = 0; // triplets with positive hinge
};

namespace detail {

inline bool all_finite(const NetworkParams& p) {
  bool ok = true;
  p.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
    for (double x : d) ok = ok && std::isfinite(x);
  });
  return ok;
}

inline void draw_masks(const NetworkParams& p, std::size_t steps, double rate, Rng& rng, DropoutMasks& masks) {
  masks.resize(p.layers.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    masks[k].resize(steps * p.layers[k].hidden_size);
    for (auto& m : masks[k]) m = u(rng) < rate ? 0.0 : keep_scale;
  }
}

/// Accumulates d(loss)/d(params) for one recorded pass given d(loss)/d(embedding).
inline void backprop_sequence(const NetworkParams& p, const SequenceTrace& tr, const DropoutMasks* masks,
                              std::span<const double> d_embed, NetworkParams& g) {
  const std::size_t E = p.embed_dim();
  const std::size_t L = p.layers.size();
  const std::size_t T = tr.layers.front().steps;
  const std::size_t Htop = p.layers.back().hidden_size;

  std::vector<double> d_above(T * Htop, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    g.head_bias[e] += d_embed[e];
    for (std::size_t h = 0; h < Htop; ++h) {
      g.head_weights(e, h) += d_embed[e] * tr.head_input[h];
      d_above[(T - 1) * Htop + h] += p.head_weights(e, h) * d_embed[e];
    }
  }
  if (masks)
    for (std::size_t h = 0; h < Htop; ++h) d_above[(T - 1) * Htop + h] *= masks->back()[(T - 1) * Htop + h];

  std::vector<double> d_below, da_next, dc_next, dc_prev, dz, dpre;
  for (std::size_t kk = L; kk-- > 0;) {
    const auto& layer = p.layers[kk];
    auto& gl = g.layers[kk];
    const auto& lt = tr.layers[kk];
    const std::size_t H = layer.hidden_size, I = layer.input_size, Z = H + I;
    d_below.assign(kk > 0 ? T * I : 0, 0.0);
    da_next.assign(H, 0.0);
    dc_next.assign(H, 0.0);
    dc_prev.assign(H, 0.0);
    dz.assign(Z, 0.0);
    dpre.assign(kGates * H, 0.0);
    for (std::size_t t = T; t-- > 0;) {
      const double* gates = &lt.gates[t * kGates * H];
      const double* gu = gates + kUpdateGate * H;
      const double* gf = gates + kForgetGate * H;
      const double* go = gates + kOutputGate * H;
      const double* cc = gates + kCandidate * H;
      const double* tc = &lt.tanh_c[t * H];
      const double* z = &lt.z[t * Z];
      for (std::size_t h = 0; h < H; ++h) {
        const double c_prev = t > 0 ? lt.c[(t - 1) * H + h] : 0.0;
        const double da = d_above[t * H + h] + da_next[h];
        const double d_go = da * tc[h];
        const double dc = dc_next[h] + da * go[h] * (1.0 - tc[h] * tc[h]);
        const double d_gu = dc * cc[h];
        const double d_cc = dc * gu[h];
        const double d_gf = dc * c_prev;
        dc_prev[h] = dc * gf[h];
        dpre[kUpdateGate * H + h] = d_gu * gu[h] * (1.0 - gu[h]);
        dpre[kForgetGate * H + h] = d_gf * gf[h] * (1.0 - gf[h]);
        dpre[kOutputGate * H + h] = d_go * go[h] * (1.0 - go[h]);
        dpre[kCandidate * H + h] = d_cc * (1.0 - cc[h] * cc[h]);
      }
      std::fill(dz.begin(), dz.end(), 0.0);
      for (std::size_t gi = 0; gi < kGates; ++gi) {
        const double* W = layer.weights[gi].data.data();
        double* dW = gl.weights[gi].data.data();
        double* db = gl.biases[gi].data();
        for (std::size_t h = 0; h < H; ++h) {
          const double d = dpre[gi * H + h];
          if (d == 0.0) continue;
          db[h] += d;
          const double* row = W + h * Z;
          double* drow = dW + h * Z;
          for (std::size_t j = 0; j < Z; ++j) {
            drow[j] += d * z[j];
            dz[j] += row[j] * d;
          }
        }
      }
      std::copy(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(H), da_next.begin());
      std::swap(dc_next, dc_prev);
      if (kk > 0) std::copy(dz.begin() + static_cast<std::ptrdiff_t>(H), dz.end(), d_below.begin() + static_cast<std::ptrdiff_t>(t * I));
    }
    if (kk > 0) {
      if (masks)
        for (std::size_t i = 0; i < d_below.size(); ++i) d_below[i] *= (*masks)[kk - 1][i];
      d_above.swap(d_below);
    }
  }
}

/// Mean hinge loss of the batch with dropout rate `dropout`; accumulates
/// gradients into `grads` when non-null. Masks are drawn from `rng` per
/// triplet and shared by its three passes.
inline double triplet_pass(const ModelCheckpoint& model, std::span<const Triplet> batch, double alpha, double dropout,
                           Rng& rng, NetworkParams* grads, std::size_t* active = nullptr) {
  if (batch.empty()) throw DataError("empty triplet batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::array<SequenceTrace, 3> tr;
  std::array<std::vector<double>, 3> x;
  std::array<std::vector<double>, 3> de;
  DropoutMasks masks;
  double total = 0.0;
  std::size_t n_active = 0;
  for (const auto& t : batch) {
    const std::array<const ForecastWindow*, 3> w = {&t.anchor, &t.positive, &t.negative};
    const bool use_masks = dropout > 0.0;
    if (use_masks) draw_masks(model.params, w[0]->length, dropout, rng, masks);
    for (std::size_t i = 0; i < 3; ++i) {
      check_window(model, *w[i]);
      standardize(model.norm, *w[i], x[i]);
      run_sequence(model.params, x[i], w[i]->length, use_masks ? &masks : nullptr, tr[i]);
    }
    const auto& ea = tr[0].embedding;
    const auto& ep = tr[1].embedding;
    const auto& en = tr[2].embedding;
    const double d_ap = euclidean_distance(ea, ep);
    const double d_an = euclidean_distance(ea, en);
    const double hinge = d_ap - d_an + alpha;
    if (!(hinge > 0.0)) {
      if (!std::isfinite(hinge)) return std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    total += hinge;
    ++n_active;
    if (!grads) continue;
    const std::size_t E = ea.size();
    for (auto& v : de) v.assign(E, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
      const double up = d_ap > 0.0 ? (ea[e] - ep[e]) / d_ap : 0.0;
      const double un = d_an > 0.0 ? (ea[e] - en[e]) / d_an : 0.0;
      de[0][e] = scale * (up - un);
      de[1][e] = -scale * up;
      de[2][e] = scale * un;
    }
    for (std::size_t i = 0; i < 3; ++i) backprop_sequence(model.params, tr[i], use_masks ? &masks : nullptr, de[i], *grads);
  }
  if (active) *active = n_active;
  return total * scale;
}

}  // namespace detail

/// Mean hinge loss and its exact gradient with respect to every parameter.
/// Anchor, positive and negative run through the same parameters.
inline BackwardResult backward(const ModelCheckpoint& model, std::span<const Triplet> batch, const TrainConfig& cfg,
                               Rng& rng) {
  BackwardResult r;
  r.gradients = model.params.zeros_like();
  r.loss = detail::triplet_pass(model, batch, cfg.alpha, cfg.dropout_rate, rng, &r.gradients, &r.active_triplets);
  if (!std::isfinite(r.loss) || !detail::all_finite(r.gradients))
    throw DivergenceError("numerical divergence in backward pass", 0, nullptr);
  return r;
}

/// The loss `backward` would report for the same rng state, without gradients.
inline double batch_loss(const ModelCheckpoint& model, std::span<const Triplet> batch, const TrainConfig& cfg, Rng& rng) {
  return detail::triplet_pass(model, batch, cfg.alpha, cfg.dropout_rate, rng, nullptr);
}

/// Mean hinge loss without dropout.
inline double evaluate_loss(const ModelCheckpoint& model, std::span<const Triplet> batch, double alpha) {
  Rng unused;
  return detail::triplet_pass(model, batch, alpha, 0.0, unused, nullptr);
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  std::uint64_t step = 0;

  static AdamState for_params(const NetworkParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

namespace detail {
template <typename P>
auto tensor_spans(P& p) {
  using Span = std::conditional_t<std::is_const_v<P>, std::span<const double>, std::span<double>>;
  std::vector<Span> out;
  p.for_each_tensor([&](const std::string&, std::size_t, std::size_t, Span d) { out.push_back(d); });
  return out;
}
}  // namespace detail

inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, double learning_rate,
                      const AdamConfig& cfg) {
  auto p = detail::tensor_spans(params);
  const auto g = detail::tensor_spans(grads);
  auto m = detail::tensor_spans(state.m);
  auto v = detail::tensor_spans(state.v);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw DataError("adam_step: parameter structure mismatch");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (g[i].size() != p[i].size() || m[i].size() != p[i].size() || v[i].size() != p[i].size())
      throw DataError("adam_step: tensor shape mismatch");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) {
      const double gj = g[i][j];
      m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * gj;
      v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = m[i][j] / bc1;
      const double v_hat = v[i][j] / bc2;
      p[i][j] -= learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogRow {
  std::uint64_t iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // best validation loss
  std::vector<TrainLogRow> log;
  std::uint64_t iterations_run = 0;
  bool early_stopped = false;
  std::size_t train_anchors = 0;
  std::size_t validation_triplets = 0;
};

inline void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "iteration,train_loss,val_loss\n";
  for (const auto& r : log) out << r.iteration << ',' << format_real(r.train_loss) << ',' << format_real(r.val_loss) << '\n';
}

/// Population mean / standard deviation per variable over the given stations,
/// every lead, and cycles in range.
inline InputNormalization input_normalization(const ForecastArchive& fcst, std::span<const std::size_t> stations,
                                              IndexRange cycles) {
  InputNormalization norm;
  for (std::size_t v = 0; v < fcst.n_variables(); ++v) {
    double sum = 0.0, ss = 0.0;
    std::size_t n = 0;
    for (const auto s : stations)
      for (std::size_t c = cycles.begin; c < cycles.end; ++c)
        for (std::size_t l = 0; l < fcst.n_leads(); ++l) {
          const double x = fcst.at(s, v, c, l);
          if (is_missing(x)) continue;
          sum += x;
          ++n;
        }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    for (const auto s : stations)
      for (std::size_t c = cycles.begin; c < cycles.end; ++c)
        for (std::size_t l = 0; l < fcst.n_leads(); ++l) {
          const double x = fcst.at(s, v, c, l);
          if (!is_missing(x)) ss += (x - mean) * (x - mean);
        }
    norm.mean.push_back(mean);
    norm.sigma.push_back(n >= 2 ? std::sqrt(ss / static_cast<double>(n)) : 0.0);
  }
  return norm;
}

/// Trains the embedding network on reverse-analog triplets drawn per
/// (station, lead). The last `validation_fraction` of the range's cycles are
/// held out: they never appear in training triplets and supply the fixed
/// validation set used for early stopping and best-model selection.
inline TrainResult train(const ForecastArchive& fcst, const ObservationArchive& obs,
                         std::span<const std::size_t> stations, std::span<const std::size_t> leads, IndexRange cycles,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (stations.empty() || leads.empty()) throw ConfigError("train: no stations or leads selected");
  if (cycles.empty() || cycles.end > fcst.n_cycles()) throw ConfigError("train: invalid cycle range");
  for (const auto s : stations)
    if (s >= fcst.n_stations()) throw ConfigError("train: station index out of range");
  for (const auto l : leads)
    if (l >= fcst.n_leads()) throw ConfigError("train: lead index out of range");

  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(cycles.size()))));
  if (n_val >= cycles.size()) throw DataError("train: cycle range too short for a validation split");
  const IndexRange fit_range{cycles.begin, cycles.end - n_val};

  Rng rng(cfg.seed);
  TrainResult result;

  std::vector<TripletPool> fit_pools;
  std::vector<Triplet> validation;
  for (const auto s : stations)
    for (const auto l : leads) {
      const auto full = build_pool(fcst, obs, s, l, cycles, cfg.half_window);
      TripletPool fit{s, l, {}};
      for (const auto& e : full.entries)
        if (e.cycle < fit_range.end) fit.entries.push_back(e);
      for (const auto& e : full.entries) {
        if (e.cycle < fit_range.end) continue;
        if (auto t = draw_triplet(e, full, cfg.k_pos, rng)) validation.push_back(std::move(*t));
      }
      if (fit.entries.size() >= cfg.k_pos + 2) fit_pools.push_back(std::move(fit));
    }
  if (fit_pools.empty()) throw DataError("no triplets could be sampled: too few eligible training cycles");
  if (validation.empty()) throw DataError("no validation triplets could be sampled");

  std::vector<std::size_t> cumulative;
  for (const auto& p : fit_pools) cumulative.push_back((cumulative.empty() ? 0 : cumulative.back()) + p.entries.size());
  result.train_anchors = cumulative.back();
  result.validation_triplets = validation.size();

  auto draw_batch = [&](std::size_t n, std::vector<Triplet>& out) {
    out.clear();
    std::uniform_int_distribution<std::size_t> pick(0, cumulative.back() - 1);
    std::size_t failures = 0;
    while (out.size() < n) {
      const std::size_t u = pick(rng);
      const auto pi = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      const std::size_t ei = u - (pi == 0 ? 0 : cumulative[pi - 1]);
      if (auto t = draw_triplet(fit_pools[pi].entries[ei], fit_pools[pi], cfg.k_pos, rng)) {
        out.push_back(std::move(*t));
      } else if (++failures > 100 * n + 1000) {
        throw DataError("no triplets could be sampled: observations too degenerate");
      }
    }
  };

  ModelCheckpoint model;
  model.meta.variables = fcst.variables;
  model.meta.half_window = cfg.half_window;
  model.meta.seed = cfg.seed;
  model.meta.iterations = 0;
  model.norm = input_normalization(fcst, stations, fit_range);
  model.params = init_network({fcst.n_variables(), cfg.hidden, cfg.layers, cfg.embed_dim}, rng);

  std::vector<Triplet> monitor;
  draw_batch(std::min(cfg.monitor_triplets, result.train_anchors), monitor);

  auto best = std::make_shared<ModelCheckpoint>(model);
  double best_val = evaluate_loss(model, validation, cfg.alpha);
  double reference_val = best_val;
  std::uint64_t last_improvement = 0;
  result.log.push_back({0, evaluate_loss(model, monitor, cfg.alpha), best_val});

  AdamState adam = AdamState::for_params(model.params);
  std::vector<Triplet> batch;
  for (std::uint64_t it = 1; it <= cfg.max_iterations; ++it) {
    draw_batch(cfg.batch_size, batch);
    BackwardResult br;
    try {
      br = backward(model, batch, cfg, rng);
    } catch (const DivergenceError&) {
      throw DivergenceError("numerical divergence at iteration " + std::to_string(it), it, best);
    }
    adam_step(model.params, br.gradients, adam, cfg.learning_rate, cfg.adam);
    model.meta.iterations = it;
    result.iterations_run = it;
    if (!detail::all_finite(model.params))
      throw DivergenceError("numerical divergence at iteration " + std::to_string(it), it, best);

    if (it % cfg.eval_interval != 0 && it != cfg.max_iterations) continue;
    const double val = evaluate_loss(model, validation, cfg.alpha);
    if (!std::isfinite(val)) throw DivergenceError("numerical divergence at iteration " + std::to_string(it), it, best);
    result.log.push_back({it, evaluate_loss(model, monitor, cfg.alpha), val});
    if (val < best_val) {
      best_val = val;
      best = std::make_shared<ModelCheckpoint>(model);
    }
    if (val < reference_val * (1.0 - cfg.early_stop.min_relative_improvement)) {
      reference_val = val;
      last_improvement = it;
    } else if (it - last_improvement >= cfg.early_stop.patience) {
      result.early_stopped = true;
      break;
    }
  }
  result.checkpoint = *best;
  return result;
}

}  // namespace deepanen
