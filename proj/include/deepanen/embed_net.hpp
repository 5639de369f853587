#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "deepanen/archive.hpp"

namespace deepanen {

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum Gate : std::size_t { kUpdateGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };
inline constexpr std::size_t kGates = 4;
inline constexpr std::array<const char*, kGates> kGateNames = {"u", "f", "o", "c"};

/// One LSTM layer. Each gate matrix is [hidden x (hidden + input)] and acts on
/// the concatenation [a_prev; x] in that order.
struct LstmLayerParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::array<Matrix, kGates> weights;
  std::array<std::vector<double>, kGates> biases;

  static LstmLayerParams zeros(std::size_t input, std::size_t hidden) {
    LstmLayerParams p;
    p.input_size = input;
    p.hidden_size = hidden;
    for (std::size_t g = 0; g < kGates; ++g) {
      p.weights[g] = Matrix(hidden, hidden + input);
      p.biases[g].assign(hidden, 0.0);
    }
    return p;
  }

  void validate() const {
    for (std::size_t g = 0; g < kGates; ++g) {
      if (weights[g].rows != hidden_size || weights[g].cols != hidden_size + input_size ||
          weights[g].data.size() != weights[g].rows * weights[g].cols)
        throw DataError("lstm layer: gate weight shape mismatch");
      if (biases[g].size() != hidden_size) throw DataError("lstm layer: gate bias length mismatch");
    }
  }
  friend bool operator==(const LstmLayerParams&, const LstmLayerParams&) = default;
};

struct LstmState {
  std::vector<double> a;
  std::vector<double> c;

  static LstmState zeros(std::size_t hidden) { return {std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0)}; }
};

/// Trainable parameters: stacked LSTM layers followed by a linear head.
struct NetworkParams {
  std::vector<LstmLayerParams> layers;
  Matrix head_weights;  // [embed_dim x top hidden]
  std::vector<double> head_bias;

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().input_size; }
  std::size_t embed_dim() const { return head_bias.size(); }

  /// Calls f(name, rows, cols, data) for every parameter tensor in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) { n += d.size(); });
    return n;
  }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each_tensor([](const std::string&, std::size_t, std::size_t, std::span<double> d) {
      std::fill(d.begin(), d.end(), 0.0);
    });
    return z;
  }

  void validate() const {
    if (layers.empty()) throw DataError("network has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].validate();
      if (k > 0 && layers[k].input_size != layers[k - 1].hidden_size)
        throw DataError("layer " + std::to_string(k) + " input size does not chain with previous hidden size");
    }
    if (head_weights.cols != layers.back().hidden_size || head_weights.rows != head_bias.size() ||
        head_weights.data.size() != head_weights.rows * head_weights.cols)
      throw DataError("head shape mismatch");
  }
  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    for (std::size_t k = 0; k < self.layers.size(); ++k) {
      auto& layer = self.layers[k];
      const std::string prefix = "layer" + std::to_string(k) + ".";
      for (std::size_t g = 0; g < kGates; ++g)
        f(prefix + "W_" + kGateNames[g], layer.weights[g].rows, layer.weights[g].cols, std::span(layer.weights[g].data));
      for (std::size_t g = 0; g < kGates; ++g)
        f(prefix + "b_" + kGateNames[g], std::size_t{1}, layer.biases[g].size(), std::span(layer.biases[g]));
    }
    f(std::string("head.W"), self.head_weights.rows, self.head_weights.cols, std::span(self.head_weights.data));
    f(std::string("head.b"), std::size_t{1}, self.head_bias.size(), std::span(self.head_bias));
  }
};

struct NetworkShape {
  std::size_t n_inputs = 0;
  std::size_t hidden = 20;
  std::size_t layers = 3;
  std::size_t embed_dim = 20;
};

/// Per-variable input standardization, x -> (x - mean) / sigma; sigma == 0 maps to 0.
struct InputNormalization {
  std::vector<double> mean;
  std::vector<double> sigma;
  friend bool operator==(const InputNormalization&, const InputNormalization&) = default;
};

struct CheckpointMeta {
  std::vector<std::string> variables;
  std::size_t half_window = 1;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct ModelCheckpoint {
  NetworkParams params;
  InputNormalization norm;
  CheckpointMeta meta;

  std::size_t window_length() const { return 2 * meta.half_window + 1; }

  void validate() const {
    params.validate();
    if (params.input_size() != meta.variables.size())
      throw DataError("checkpoint: first layer input size " + std::to_string(params.input_size()) + " but " +
                      std::to_string(meta.variables.size()) + " variables");
    if (norm.mean.size() != meta.variables.size() || norm.sigma.size() != meta.variables.size())
      throw DataError("checkpoint: normalization does not cover every variable");
  }

  /// Variables whose normalization sigma is 0 (they standardize to 0).
  std::size_t degenerate_inputs() const {
    return static_cast<std::size_t>(std::count(norm.sigma.begin(), norm.sigma.end(), 0.0));
  }
  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

/// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in
/// being the column count of the matrix they belong to.
inline NetworkParams init_network(const NetworkShape& shape, Rng& rng) {
  if (shape.n_inputs == 0 || shape.hidden == 0 || shape.layers == 0 || shape.embed_dim == 0)
    throw ConfigError("network shape dimensions must be positive");
  NetworkParams p;
  std::size_t input = shape.n_inputs;
  for (std::size_t k = 0; k < shape.layers; ++k) {
    p.layers.push_back(LstmLayerParams::zeros(input, shape.hidden));
    input = shape.hidden;
  }
  p.head_weights = Matrix(shape.embed_dim, shape.hidden);
  p.head_bias.assign(shape.embed_dim, 0.0);
  // Each bias shares the bound of the matrix that precedes it in visit order.
  double bound = 1.0;
  p.for_each_tensor([&](const std::string& name, std::size_t, std::size_t cols, std::span<double> d) {
    if (name.find(".W") != std::string::npos) bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : d) x = u(rng);
  });
  return p;
}

// ---------------------------------------------------------------------------
// Forward machinery shared by inference and training.

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Activations recorded for one layer over a sequence of length T (time-major).
struct LayerTrace {
  std::size_t steps = 0, hidden = 0, input = 0;
  std::vector<double> z;       // T x (hidden + input), [a_prev; x]
  std::vector<double> gates;   // T x 4 x hidden, post-nonlinearity
  std::vector<double> c;       // T x hidden
  std::vector<double> tanh_c;  // T x hidden
  std::vector<double> a;       // T x hidden

  void reset(std::size_t t, std::size_t h, std::size_t in) {
    steps = t;
    hidden = h;
    input = in;
    z.resize(t * (h + in));
    gates.resize(t * kGates * h);
    c.resize(t * h);
    tanh_c.resize(t * h);
    a.resize(t * h);
  }
};

struct SequenceTrace {
  std::vector<LayerTrace> layers;
  std::vector<double> head_input;
  std::vector<double> embedding;
};

/// Inverted-dropout scale factors on each layer's output, [layer][T x hidden].
using DropoutMasks = std::vector<std::vector<double>>;

/// One cell update. `z` receives [a_prev; x]; `gates` receives the four
/// activations in Gate order.
inline void cell_step(const LstmLayerParams& L, const double* a_prev, const double* x, const double* c_prev, double* z,
                      double* gates, double* c, double* tanh_c, double* a) {
  const std::size_t H = L.hidden_size, I = L.input_size, Z = H + I;
  std::copy(a_prev, a_prev + H, z);
  std::copy(x, x + I, z + H);
  for (std::size_t g = 0; g < kGates; ++g) {
    const double* W = L.weights[g].data.data();
    const double* b = L.biases[g].data();
    double* out = gates + g * H;
    for (std::size_t h = 0; h < H; ++h) {
      const double* row = W + h * Z;
      double acc = b[h];
      for (std::size_t j = 0; j < Z; ++j) acc += row[j] * z[j];
      out[h] = g == kCandidate ? std::tanh(acc) : sigmoid(acc);
    }
  }
  const double* gu = gates + kUpdateGate * H;
  const double* gf = gates + kForgetGate * H;
  const double* go = gates + kOutputGate * H;
  const double* cc = gates + kCandidate * H;
  for (std::size_t h = 0; h < H; ++h) {
    c[h] = gu[h] * cc[h] + gf[h] * c_prev[h];
    tanh_c[h] = std::tanh(c[h]);
    a[h] = go[h] * tanh_c[h];
  }
}

/// Runs a standardized sequence (T x n_inputs, time-major) through the layer
/// stack and the head. `masks` may be null (inference).
inline void run_sequence(const NetworkParams& p, std::span<const double> inputs, std::size_t steps,
                         const DropoutMasks* masks, SequenceTrace& tr) {
  tr.layers.resize(p.layers.size());
  std::vector<double> zeros;
  std::vector<double> layer_in;
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& L = p.layers[k];
    const std::size_t H = L.hidden_size, I = L.input_size;
    auto& lt = tr.layers[k];
    lt.reset(steps, H, I);
    zeros.assign(H, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* x;
      if (k == 0) {
        x = inputs.data() + t * I;
      } else {
        const auto& below = tr.layers[k - 1];
        layer_in.assign(below.a.begin() + static_cast<std::ptrdiff_t>(t * I),
                        below.a.begin() + static_cast<std::ptrdiff_t>((t + 1) * I));
        if (masks)
          for (std::size_t i = 0; i < I; ++i) layer_in[i] *= (*masks)[k - 1][t * I + i];
        x = layer_in.data();
      }
      const double* a_prev = t == 0 ? zeros.data() : &lt.a[(t - 1) * H];
      const double* c_prev = t == 0 ? zeros.data() : &lt.c[(t - 1) * H];
      cell_step(L, a_prev, x, c_prev, &lt.z[t * (H + I)], &lt.gates[t * kGates * H], &lt.c[t * H], &lt.tanh_c[t * H],
                &lt.a[t * H]);
    }
  }
  const auto& top = tr.layers.back();
  const std::size_t H = top.hidden;
  tr.head_input.assign(top.a.end() - static_cast<std::ptrdiff_t>(H), top.a.end());
  if (masks)
    for (std::size_t h = 0; h < H; ++h) tr.head_input[h] *= masks->back()[(steps - 1) * H + h];
  const std::size_t E = p.embed_dim();
  tr.embedding.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    double acc = p.head_bias[e];
    for (std::size_t h = 0; h < H; ++h) acc += p.head_weights(e, h) * tr.head_input[h];
    tr.embedding[e] = acc;
  }
}

/// Window -> standardized time-major input sequence.
inline void standardize(const InputNormalization& norm, const ForecastWindow& w, std::vector<double>& out) {
  out.resize(w.length * w.n_variables);
  for (std::size_t t = 0; t < w.length; ++t)
    for (std::size_t v = 0; v < w.n_variables; ++v)
      out[t * w.n_variables + v] = norm.sigma[v] == 0.0 ? 0.0 : (w(v, t) - norm.mean[v]) / norm.sigma[v];
}

inline void check_window(const ModelCheckpoint& model, const ForecastWindow& w) {
  if (w.n_variables != model.meta.variables.size())
    throw DataError("window has " + std::to_string(w.n_variables) + " variables, model expects " +
                    std::to_string(model.meta.variables.size()));
  if (w.length != model.window_length())
    throw DataError("window length " + std::to_string(w.length) + " does not match model half-window " +
                    std::to_string(model.meta.half_window));
}

}  // namespace detail

/// Single LSTM cell update from `prev` given input `x`.
inline LstmState lstm_cell_step(const LstmLayerParams& layer, std::span<const double> x, const LstmState& prev) {
  layer.validate();
  const std::size_t H = layer.hidden_size;
  if (x.size() != layer.input_size || prev.a.size() != H || prev.c.size() != H)
    throw DataError("lstm_cell_step: dimension mismatch");
  std::vector<double> z(H + layer.input_size), gates(kGates * H), tanh_c(H);
  LstmState next = LstmState::zeros(H);
  detail::cell_step(layer, prev.a.data(), x.data(), prev.c.data(), z.data(), gates.data(), next.c.data(), tanh_c.data(),
                    next.a.data());
  return next;
}

/// Embedding of one window (inference: no dropout).
inline std::vector<double> forward(const ModelCheckpoint& model, const ForecastWindow& window) {
  detail::check_window(model, window);
  std::vector<double> x;
  detail::standardize(model.norm, window, x);
  detail::SequenceTrace tr;
  detail::run_sequence(model.params, x, window.length, nullptr, tr);
  return std::move(tr.embedding);
}

/// Embeddings for every cycle of a range at one (station, lead).
struct EmbeddingBlock {
  std::size_t station = 0;
  std::size_t lead = 0;
  IndexRange cycles;
  std::size_t embed_dim = 0;
  std::vector<double> values;   // cycles.size() x embed_dim
  std::vector<bool> available;  // false where the window could not be built

  std::size_t rows() const { return cycles.size(); }
  bool has(std::size_t cycle) const { return cycles.contains(cycle) && available[cycle - cycles.begin]; }
  std::span<const double> row(std::size_t cycle) const {
    return {values.data() + (cycle - cycles.begin) * embed_dim, embed_dim};
  }
};

inline void check_archive_variables(const ModelCheckpoint& model, const ForecastArchive& archive) {
  if (archive.variables != model.meta.variables) {
    std::string have, want;
    for (const auto& v : archive.variables) have += (have.empty() ? "" : ",") + v;
    for (const auto& v : model.meta.variables) want += (want.empty() ? "" : ",") + v;
    throw DataError("archive variables {" + have + "} do not match model variables {" + want + "}");
  }
}

inline EmbeddingBlock embed_block(const ModelCheckpoint& model, const ForecastArchive& archive, std::size_t station,
                                  std::size_t lead, IndexRange cycles) {
  check_archive_variables(model, archive);
  if (cycles.end > archive.n_cycles()) throw std::out_of_range("embed_block: cycle range out of range");
  EmbeddingBlock block;
  block.station = station;
  block.lead = lead;
  block.cycles = cycles;
  block.embed_dim = model.params.embed_dim();
  block.values.assign(cycles.size() * block.embed_dim, 0.0);
  block.available.assign(cycles.size(), false);
  ForecastWindow w;
  std::vector<double> x;
  detail::SequenceTrace tr;
  for (std::size_t c = cycles.begin; c < cycles.end; ++c) {
    if (try_extract_window(archive, station, c, lead, model.meta.half_window, w) != WindowStatus::Ok) continue;
    detail::standardize(model.norm, w, x);
    detail::run_sequence(model.params, x, w.length, nullptr, tr);
    std::copy(tr.embedding.begin(), tr.embedding.end(), block.values.begin() + static_cast<std::ptrdiff_t>((c - cycles.begin) * block.embed_dim));
    block.available[c - cycles.begin] = true;
  }
  return block;
}

// ---------------------------------------------------------------------------
// Checkpoint file: `key=value` metadata, then `array <name> <rows> <cols>`
// headers each followed by one line of row-major values.

inline constexpr std::string_view kCheckpointFormat = "deepanen-checkpoint/1";

inline void write_checkpoint(std::ostream& out, const ModelCheckpoint& m) {
  m.validate();
  out << "format=" << kCheckpointFormat << '\n';
  out << "variables=";
  for (std::size_t i = 0; i < m.meta.variables.size(); ++i) out << (i ? "," : "") << m.meta.variables[i];
  out << '\n';
  out << "half_window=" << m.meta.half_window << '\n';
  out << "seed=" << m.meta.seed << '\n';
  out << "iterations=" << m.meta.iterations << '\n';
  out << "n_layers=" << m.params.layers.size() << '\n';
  auto write_array = [&](const std::string& name, std::size_t rows, std::size_t cols, std::span<const double> d) {
    out << "array " << name << ' ' << rows << ' ' << cols << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) out << (i ? " " : "") << format_real(d[i]);
    out << '\n';
  };
  write_array("norm.mean", 1, m.norm.mean.size(), m.norm.mean);
  write_array("norm.sigma", 1, m.norm.sigma.size(), m.norm.sigma);
  m.params.for_each_tensor(write_array);
}

inline ModelCheckpoint read_checkpoint(std::istream& in) {
  std::map<std::string, std::string> kv;
  struct Array {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;
  };
  std::map<std::string, Array> arrays;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.starts_with("array ")) {
      std::istringstream hdr{std::string(t)};
      std::string tag, name;
      Array a;
      if (!(hdr >> tag >> name >> a.rows >> a.cols)) throw DataError("checkpoint: bad array header '" + std::string(t) + "'");
      std::string body;
      if (!std::getline(in, body)) throw DataError("checkpoint: missing values for array " + name);
      const auto tb = trim(body);
      if (!tb.empty())
        for (auto tok : split(tb, ' ')) {
          double v;
          if (!parse_real(tok, v)) throw DataError("checkpoint: bad value in array " + name);
          a.data.push_back(v);
        }
      if (a.data.size() != a.rows * a.cols) throw DataError("checkpoint: array " + name + " has wrong element count");
      arrays[name] = std::move(a);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw DataError("checkpoint: unexpected line '" + std::string(t) + "'");
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  auto need = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError("checkpoint: missing key '" + k + "'");
    return it->second;
  };
  auto need_array = [&](const std::string& k) -> Array& {
    const auto it = arrays.find(k);
    if (it == arrays.end()) throw DataError("checkpoint: missing array '" + k + "'");
    return it->second;
  };
  if (need("format") != kCheckpointFormat) throw DataError("checkpoint: unsupported format '" + need("format") + "'");

  ModelCheckpoint m;
  for (auto v : split(need("variables"), ',')) m.meta.variables.emplace_back(trim(v));
  std::size_t n_layers = 0;
  if (!parse_int(need("half_window"), m.meta.half_window) || !parse_int(need("seed"), m.meta.seed) ||
      !parse_int(need("iterations"), m.meta.iterations) || !parse_int(need("n_layers"), n_layers) || n_layers == 0)
    throw DataError("checkpoint: bad integer metadata");
  m.norm.mean = need_array("norm.mean").data;
  m.norm.sigma = need_array("norm.sigma").data;
  for (std::size_t k = 0; k < n_layers; ++k) {
    const std::string prefix = "layer" + std::to_string(k) + ".";
    const auto& wu = need_array(prefix + "W_u");
    if (wu.cols < wu.rows) throw DataError("checkpoint: malformed " + prefix + "W_u");
    auto layer = LstmLayerParams::zeros(wu.cols - wu.rows, wu.rows);
    for (std::size_t g = 0; g < kGates; ++g) {
      auto& w = need_array(prefix + "W_" + kGateNames[g]);
      auto& b = need_array(prefix + "b_" + kGateNames[g]);
      if (w.rows != layer.hidden_size || w.cols != layer.weights[g].cols || b.data.size() != layer.hidden_size)
        throw DataError("checkpoint: gate shape mismatch in " + prefix);
      layer.weights[g].data = std::move(w.data);
      layer.biases[g] = std::move(b.data);
    }
    m.params.layers.push_back(std::move(layer));
  }
  auto& hw = need_array("head.W");
  m.params.head_weights = Matrix(hw.rows, hw.cols);
  m.params.head_weights.data = std::move(hw.data);
  m.params.head_bias = need_array("head.b").data;
  m.validate();
  return m;
}

inline void save_checkpoint(const std::string& path, const ModelCheckpoint& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, m);
  if (!out) throw DataError("error writing checkpoint '" + path + "'");
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace deepanen
