#pragma once

// Small dense-network engine: row-major matrices, dense layers, batched
// forward/backward with an activation tape, Adam and binary cross-entropy.
//
// Every dense product accumulates out[o] = bias[o] + x[0]*w[0][o] + x[1]*w[1][o] + ...
// in input order, whatever the batch size. Batched scoring and per-item scoring
// therefore agree bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/rng.hpp"

namespace recomind::nn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() == 0 ? 0 : rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw ConfigError("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.row(r++).begin());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { identity, relu, sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// weights is in x out: row k is the fan-out of input k. y = x W + b.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in_width() const { return weights.rows(); }
  std::size_t out_width() const { return weights.cols(); }

  bool operator==(const DenseLayer&) const = default;
};

// Glorot-uniform weights, zero bias.
inline DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("make_dense: zero width");
  DenseLayer layer{Matrix(in, out), std::vector<double>(out, 0.0), act};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weights.values()) w = dist(rng);
  return layer;
}

struct MlpNet {
  std::vector<DenseLayer> layers;
  std::vector<std::string> head_names;
  // Bumped on every parameter update; tapes remember the value they saw.
  std::uint64_t revision = 0;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in_width(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().out_width(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("MlpNet: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.out_width())
        throw ConfigError("MlpNet: layer " + std::to_string(i) + " bias width mismatch");
      if (i > 0 && layers[i - 1].out_width() != l.in_width())
        throw ConfigError("MlpNet: layer " + std::to_string(i) + " input width does not chain");
    }
    if (output_width() != head_names.size())
      throw ConfigError("MlpNet: final width " + std::to_string(output_width()) + " != " +
                        std::to_string(head_names.size()) + " heads");
  }

  // Parameters only; revision is bookkeeping.
  bool same_parameters(const MlpNet& o) const {
    return layers == o.layers && head_names == o.head_names;
  }
};

inline MlpNet make_mlp(std::size_t input, const std::vector<std::size_t>& hidden,
                       Activation hidden_act, std::vector<std::string> heads,
                       Activation head_act, Rng& rng) {
  MlpNet net;
  std::size_t prev = input;
  for (std::size_t h : hidden) {
    net.layers.push_back(make_dense(prev, h, hidden_act, rng));
    prev = h;
  }
  net.layers.push_back(make_dense(prev, heads.size(), head_act, rng));
  net.head_names = std::move(heads);
  net.validate();
  return net;
}

namespace detail {

// acc[o] += sum_j x[j] * W[k_begin + j][o], j ascending.
inline void accumulate(std::span<double> acc, std::span<const double> x, const Matrix& w,
                       std::size_t k_begin) {
  constexpr std::size_t kTile = 16;
  const std::size_t out = acc.size(), cols = w.cols();
  double* __restrict a = acc.data();
  const double* __restrict wbase = w.values().data() + k_begin * cols;
  std::size_t o0 = 0;
  // Register tiles over outputs; each output still sums over j in order.
  for (; o0 + kTile <= out; o0 += kTile) {
    double t[kTile];
    for (std::size_t o = 0; o < kTile; ++o) t[o] = a[o0 + o];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double xk = x[j];
      const double* __restrict wr = wbase + j * cols + o0;
      for (std::size_t o = 0; o < kTile; ++o) t[o] += xk * wr[o];
    }
    for (std::size_t o = 0; o < kTile; ++o) a[o0 + o] = t[o];
  }
  for (std::size_t j = 0; o0 < out && j < x.size(); ++j) {
    const double xk = x[j];
    const double* __restrict wr = wbase + j * cols;
    for (std::size_t o = o0; o < out; ++o) a[o] += xk * wr[o];
  }
}

// Row-blocked variant of accumulate over every row of `acc` and `x`. Same
// per-element summation order, so results match the single-row kernel.
inline void accumulate_rows(Matrix& acc, const Matrix& x, const Matrix& w, std::size_t k_begin) {
  using v4 = double __attribute__((vector_size(32)));
  constexpr std::size_t kRows = 4, kLanes = 4, kVecs = 2, kTile = kLanes * kVecs;
  const std::size_t n = acc.rows(), out = acc.cols(), in = x.cols(), cols = w.cols();
  const double* wbase = w.values().data() + k_begin * cols;
  std::size_t r0 = 0;
  for (; r0 + kRows <= n; r0 += kRows) {
    double* a = acc.values().data() + r0 * out;
    const double* xb = x.values().data() + r0 * in;
    std::size_t o0 = 0;
    for (; o0 + kTile <= out; o0 += kTile) {
      v4 t[kRows][kVecs];
      for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(&t[r][v], a + r * out + o0 + v * kLanes, sizeof(v4));
      for (std::size_t j = 0; j < in; ++j) {
        v4 wv[kVecs];
        for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(&wv[v], wbase + j * cols + o0 + v * kLanes, sizeof(v4));
        for (std::size_t r = 0; r < kRows; ++r) {
          const double xk = xb[r * in + j];
          for (std::size_t v = 0; v < kVecs; ++v) t[r][v] += xk * wv[v];
        }
      }
      for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t v = 0; v < kVecs; ++v) std::memcpy(a + r * out + o0 + v * kLanes, &t[r][v], sizeof(v4));
    }
    for (; o0 + kLanes <= out; o0 += kLanes) {
      v4 t[kRows];
      for (std::size_t r = 0; r < kRows; ++r) std::memcpy(&t[r], a + r * out + o0, sizeof(v4));
      for (std::size_t j = 0; j < in; ++j) {
        v4 wv;
        std::memcpy(&wv, wbase + j * cols + o0, sizeof(v4));
        for (std::size_t r = 0; r < kRows; ++r) t[r] += xb[r * in + j] * wv;
      }
      for (std::size_t r = 0; r < kRows; ++r) std::memcpy(a + r * out + o0, &t[r], sizeof(v4));
    }
    for (; o0 < out; ++o0) {
      double t[kRows];
      for (std::size_t r = 0; r < kRows; ++r) t[r] = a[r * out + o0];
      for (std::size_t j = 0; j < in; ++j) {
        const double wk = wbase[j * cols + o0];
        for (std::size_t r = 0; r < kRows; ++r) t[r] += xb[r * in + j] * wk;
      }
      for (std::size_t r = 0; r < kRows; ++r) a[r * out + o0] = t[r];
    }
  }
  for (; r0 < n; ++r0) accumulate(acc.row(r0), x.row(r0), w, k_begin);
}

inline void activate(std::span<double> v, Activation act) {
  switch (act) {
    case Activation::identity: break;
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::sigmoid:
      for (double& x : v) x = sigmoid(x);
      break;
  }
}

// dL/dpre from dL/dpost, using the post-activation value.
inline double activation_grad(Activation act, double post, double g) {
  switch (act) {
    case Activation::identity: return g;
    case Activation::relu: return post > 0.0 ? g : 0.0;
    case Activation::sigmoid: return g * post * (1.0 - post);
  }
  return g;
}

}  // namespace detail

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_width())
    throw ConfigError("dense_forward: input width " + std::to_string(x.cols()) + " != " +
                      std::to_string(layer.in_width()));
  Matrix y(x.rows(), layer.out_width());
  for (std::size_t r = 0; r < x.rows(); ++r) std::copy(layer.bias.begin(), layer.bias.end(), y.row(r).begin());
  detail::accumulate_rows(y, x, layer.weights, 0);
  detail::activate(y.values(), layer.activation);
  return y;
}

struct LayerGrad {
  Matrix weights;
  std::vector<double> bias;
};

struct LayerBackward {
  LayerGrad grad;
  Matrix input_grad;
};

// output_grad is dL/d(post-activation output).
inline LayerBackward dense_backward(const DenseLayer& layer, const Matrix& input,
                                    const Matrix& output, const Matrix& output_grad) {
  const std::size_t in = layer.in_width(), out = layer.out_width();
  if (output.rows() != input.rows() || output_grad.rows() != input.rows() ||
      output_grad.cols() != out || input.cols() != in)
    throw UsageError("dense_backward: tape does not match layer");
  LayerBackward res{{Matrix(in, out), std::vector<double>(out, 0.0)}, Matrix(input.rows(), in)};
  std::vector<double> dpre(out);
  for (std::size_t r = 0; r < input.rows(); ++r) {
    const auto yr = output.row(r);
    const auto gr = output_grad.row(r);
    for (std::size_t o = 0; o < out; ++o) dpre[o] = detail::activation_grad(layer.activation, yr[o], gr[o]);
    for (std::size_t o = 0; o < out; ++o) res.grad.bias[o] += dpre[o];
    const auto xr = input.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double xk = xr[k];
      double* __restrict gw = res.grad.weights.row(k).data();
      const double* __restrict wr = layer.weights.row(k).data();
      double dx = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        gw[o] += xk * dpre[o];
        dx += wr[o] * dpre[o];
      }
      res.input_grad(r, k) = dx;
    }
  }
  return res;
}

struct Tape {
  const MlpNet* net = nullptr;
  std::uint64_t revision = 0;
  std::vector<Matrix> inputs;   // input of layer i
  std::vector<Matrix> outputs;  // post-activation output of layer i
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

inline ForwardResult forward(const MlpNet& net, const Matrix& input) {
  if (input.cols() != net.input_width())
    throw ConfigError("forward: input width " + std::to_string(input.cols()) + " != " +
                      std::to_string(net.input_width()));
  ForwardResult res;
  res.tape.net = &net;
  res.tape.revision = net.revision;
  Matrix cur = input;
  for (const auto& layer : net.layers) {
    Matrix next = dense_forward(layer, cur);
    res.tape.inputs.push_back(std::move(cur));
    res.tape.outputs.push_back(next);
    cur = std::move(next);
  }
  res.output = std::move(cur);
  return res;
}

struct VectorForward {
  std::vector<double> output;
  Tape tape;
};

inline VectorForward forward(const MlpNet& net, std::span<const double> input) {
  Matrix x(1, input.size());
  std::copy(input.begin(), input.end(), x.row(0).begin());
  auto r = forward(net, x);
  return {{r.output.values().begin(), r.output.values().end()}, std::move(r.tape)};
}

// Forward without a tape.
inline Matrix predict(const MlpNet& net, Matrix input) {
  if (input.cols() != net.input_width())
    throw ConfigError("predict: input width " + std::to_string(input.cols()) + " != " +
                      std::to_string(net.input_width()));
  for (const auto& layer : net.layers) input = dense_forward(layer, input);
  return input;
}

// Rows are [prefix | suffix.row(r)]. The prefix contribution to the first layer
// is accumulated once and reused; results equal predict() on the concatenated rows.
inline Matrix predict_shared_prefix(const MlpNet& net, std::span<const double> prefix,
                                    const Matrix& suffix) {
  if (prefix.size() + suffix.cols() != net.input_width())
    throw ConfigError("predict_shared_prefix: input width mismatch");
  const DenseLayer& first = net.layers.front();
  std::vector<double> base(first.bias);
  detail::accumulate(base, prefix, first.weights, 0);
  Matrix h(suffix.rows(), first.out_width());
  for (std::size_t r = 0; r < suffix.rows(); ++r) std::copy(base.begin(), base.end(), h.row(r).begin());
  detail::accumulate_rows(h, suffix, first.weights, prefix.size());
  detail::activate(h.values(), first.activation);
  for (std::size_t i = 1; i < net.layers.size(); ++i) h = dense_forward(net.layers[i], h);
  return h;
}

struct Gradients {
  std::vector<LayerGrad> layers;
  Matrix input;  // dL/dinput
};

inline Gradients backward(const MlpNet& net, const Tape& tape, const Matrix& output_grad) {
  if (tape.net != &net || tape.revision != net.revision ||
      tape.inputs.size() != net.layers.size())
    throw UsageError("backward: tape was not produced by the current parameters of this net");
  if (output_grad.cols() != net.output_width() ||
      output_grad.rows() != tape.outputs.back().rows())
    throw UsageError("backward: output gradient shape mismatch");
  Gradients g;
  g.layers.resize(net.layers.size());
  Matrix upstream = output_grad;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    auto lb = dense_backward(net.layers[i], tape.inputs[i], tape.outputs[i], upstream);
    g.layers[i] = std::move(lb.grad);
    upstream = std::move(lb.input_grad);
  }
  g.input = std::move(upstream);
  return g;
}

inline Gradients backward(const MlpNet& net, const Tape& tape, std::span<const double> output_grad) {
  Matrix g(1, output_grad.size());
  std::copy(output_grad.begin(), output_grad.end(), g.row(0).begin());
  return backward(net, tape, g);
}

// ---- parameter views ----

inline void append_spans(DenseLayer& l, std::vector<std::span<double>>& out) {
  out.emplace_back(l.weights.values());
  out.emplace_back(l.bias);
}

inline void append_spans(const LayerGrad& g, std::vector<std::span<const double>>& out) {
  out.emplace_back(g.weights.values());
  out.emplace_back(g.bias);
}

inline std::vector<std::span<double>> parameter_spans(MlpNet& net) {
  std::vector<std::span<double>> out;
  for (auto& l : net.layers) append_spans(l, out);
  return out;
}

inline std::vector<std::span<const double>> gradient_spans(const Gradients& g) {
  std::vector<std::span<const double>> out;
  for (const auto& l : g.layers) append_spans(l, out);
  return out;
}

// ---- Adam ----

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moments are sized lazily on the first step.
inline void adam_step(std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads, AdamState& state) {
  if (!(state.learning_rate > 0.0)) throw ConfigError("adam_step: learning_rate must be > 0");
  if (params.size() != grads.size()) throw UsageError("adam_step: params/grads block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) throw UsageError("adam_step: block shape mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw UsageError("adam_step: optimizer state belongs to a different parameter set");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    if (m.size() != params[b].size()) throw UsageError("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[b][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      params[b][i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

inline void apply_adam(MlpNet& net, const Gradients& g, AdamState& state) {
  const auto p = parameter_spans(net);
  const auto gs = gradient_spans(g);
  adam_step(p, gs, state);
  ++net.revision;
}

// ---- loss ----

inline constexpr double kProbClamp = 1e-7;

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean binary cross-entropy over heads; grad is w.r.t. the (clamped) predictions.
inline LossAndGrad bce_loss(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size() || pred.empty())
    throw UsageError("bce_loss: prediction/label length mismatch");
  const double n = static_cast<double>(pred.size());
  LossAndGrad out{0.0, std::vector<double>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    const double y = label[i];
    out.loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    out.grad[i] = (p - y) / (p * (1.0 - p)) / n;
  }
  out.loss /= n;
  return out;
}

// ---- checkpoint text format ----

namespace detail {

inline void write_values(std::ostream& os, std::span<const double> v) {
  std::ostringstream line;
  line << std::hexfloat;
  for (std::size_t i = 0; i < v.size(); ++i) line << (i ? " " : "") << v[i];
  os << line.str() << '\n';
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw ConfigError("checkpoint: bad number '" + tok + "'");
  return v;
}

inline void read_values(std::istream& is, std::span<double> v) {
  std::string tok;
  for (double& x : v) {
    if (!(is >> tok)) throw ConfigError("checkpoint: truncated value block");
    x = parse_double(tok);
  }
}

inline void expect_token(std::istream& is, std::string_view want) {
  std::string tok;
  if (!(is >> tok) || tok != want)
    throw ConfigError("checkpoint: expected '" + std::string(want) + "', got '" + tok + "'");
}

}  // namespace detail

inline void write_layer(std::ostream& os, const DenseLayer& l) {
  os << "layer " << l.in_width() << ' ' << l.out_width() << ' ' << to_string(l.activation) << '\n';
  detail::write_values(os, l.weights.values());
  detail::write_values(os, l.bias);
}

inline DenseLayer read_layer(std::istream& is) {
  detail::expect_token(is, "layer");
  std::size_t in = 0, out = 0;
  std::string act;
  if (!(is >> in >> out >> act) || in == 0 || out == 0) throw ConfigError("checkpoint: bad layer header");
  DenseLayer l{Matrix(in, out), std::vector<double>(out), activation_from_string(act)};
  detail::read_values(is, l.weights.values());
  detail::read_values(is, l.bias);
  return l;
}

inline constexpr std::string_view kMlpMagic = "recomind-mlp";
inline constexpr int kMlpFormatVersion = 1;

inline void write_mlp(std::ostream& os, const MlpNet& net) {
  os << kMlpMagic << ' ' << kMlpFormatVersion << '\n';
  os << "heads " << net.head_names.size();
  for (const auto& h : net.head_names) os << ' ' << h;
  os << "\nlayers " << net.layers.size() << '\n';
  for (const auto& l : net.layers) write_layer(os, l);
}

inline MlpNet read_mlp(std::istream& is) {
  detail::expect_token(is, kMlpMagic);
  int version = 0;
  if (!(is >> version) || version != kMlpFormatVersion)
    throw ConfigError("checkpoint: unsupported mlp format version " + std::to_string(version));
  detail::expect_token(is, "heads");
  std::size_t n_heads = 0;
  is >> n_heads;
  MlpNet net;
  net.head_names.resize(n_heads);
  for (auto& h : net.head_names) is >> h;
  detail::expect_token(is, "layers");
  std::size_t n_layers = 0;
  if (!(is >> n_layers)) throw ConfigError("checkpoint: bad layer count");
  for (std::size_t i = 0; i < n_layers; ++i) net.layers.push_back(read_layer(is));
  net.validate();
  return net;
}

}  // namespace recomind::nn
