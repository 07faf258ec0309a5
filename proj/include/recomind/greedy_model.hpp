#pragma once

// State-action encoder shared by the greedy feedback model and the Q-network:
// each history slot (item embedding, feedback bits, presence bit) goes through
// a dense projection, present slots are mean-pooled, and the trunk MLP sees
// [user | pooled history | action item].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/feedback.hpp"
#include "recomind/nn_core.hpp"
#include "recomind/rng.hpp"
#include "recomind/state.hpp"
#include "recomind/world.hpp"

namespace recomind {

struct EncoderConfig {
  std::size_t embed_dim = 16;
  std::size_t window = 8;
  std::size_t slot_width = 16;
  std::vector<std::size_t> trunk_hidden{64, 32};

  std::size_t slot_input_width() const { return embed_dim + kNumFeedback + 1; }
  std::size_t feature_width() const { return embed_dim + slot_width + embed_dim; }

  void validate() const {
    if (embed_dim < 1 || window < 1 || slot_width < 1) throw ConfigError("encoder: widths must be >= 1");
    for (auto h : trunk_hidden)
      if (h < 1) throw ConfigError("encoder: trunk widths must be >= 1");
  }
  bool operator==(const EncoderConfig&) const = default;
};

struct EncodedNet {
  EncoderConfig config;
  nn::DenseLayer slot_projection;
  nn::MlpNet trunk;

  bool same_parameters(const EncodedNet& o) const {
    return config == o.config && slot_projection == o.slot_projection && trunk.same_parameters(o.trunk);
  }
  std::size_t parameter_count() const {
    return slot_projection.weights.size() + slot_projection.bias.size() + trunk.parameter_count();
  }
};

// Multi-head one-step feedback model.
struct GreedyNet {
  EncodedNet net;
};

inline GreedyNet make_greedy_net(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  GreedyNet g;
  g.net.config = cfg;
  g.net.slot_projection = nn::make_dense(cfg.slot_input_width(), cfg.slot_width, nn::Activation::identity, rng);
  g.net.trunk = nn::make_mlp(cfg.feature_width(), cfg.trunk_hidden, nn::Activation::relu,
                             feedback_head_names(), nn::Activation::sigmoid, rng);
  return g;
}

struct StateAction {
  const SessionState* state = nullptr;
  int action = -1;
};

namespace detail {

inline void fill_slot(std::span<double> row, const Catalog& catalog, const HistorySlot& slot) {
  const auto e = catalog.item(slot.item_id);
  std::copy(e.begin(), e.end(), row.begin());
  for (std::size_t f = 0; f < kNumFeedback; ++f) row[e.size() + f] = slot.bits[f];
  row[e.size() + kNumFeedback] = 1.0;  // presence
}

// Mean over rows [begin, begin+count) of proj; zero when count == 0.
inline void mean_pool(std::span<double> out, const nn::Matrix& proj, std::size_t begin, std::size_t count) {
  std::fill(out.begin(), out.end(), 0.0);
  if (count == 0) return;
  for (std::size_t r = begin; r < begin + count; ++r) {
    const auto pr = proj.row(r);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += pr[j];
  }
  for (double& x : out) x /= static_cast<double>(count);
}

inline void check_state(const EncodedNet& net, const Catalog& catalog, const SessionState& s) {
  if (s.window.size() > net.config.window)
    throw ConfigError("encoder: window holds " + std::to_string(s.window.size()) + " slots, L = " +
                      std::to_string(net.config.window));
  if (s.user.size() != net.config.embed_dim || catalog.dim() != net.config.embed_dim)
    throw ConfigError("encoder: embedding dimension mismatch");
}

}  // namespace detail

// Pooled history block for one state.
inline std::vector<double> pooled_history(const EncodedNet& net, const Catalog& catalog, const SessionState& s) {
  detail::check_state(net, catalog, s);
  std::vector<double> pooled(net.config.slot_width, 0.0);
  if (s.window.empty()) return pooled;
  nn::Matrix slots(s.window.size(), net.config.slot_input_width());
  for (std::size_t i = 0; i < s.window.size(); ++i) detail::fill_slot(slots.row(i), catalog, s.window[i]);
  const auto proj = nn::dense_forward(net.slot_projection, slots);
  detail::mean_pool(pooled, proj, 0, s.window.size());
  return pooled;
}

// user | pooled history | action
inline std::vector<double> encode_state_action(const EncodedNet& net, const Catalog& catalog,
                                               const SessionState& s, int action) {
  auto pooled = pooled_history(net, catalog, s);
  std::vector<double> x;
  x.reserve(net.config.feature_width());
  x.insert(x.end(), s.user.begin(), s.user.end());
  x.insert(x.end(), pooled.begin(), pooled.end());
  const auto a = catalog.item(action);
  x.insert(x.end(), a.begin(), a.end());
  return x;
}

// Trunk outputs for every candidate action in one state (rows follow `actions`).
inline nn::Matrix score_actions(const EncodedNet& net, const Catalog& catalog, const SessionState& s,
                                std::span<const int> actions) {
  auto prefix = pooled_history(net, catalog, s);
  prefix.insert(prefix.begin(), s.user.begin(), s.user.end());
  nn::Matrix suffix(actions.size(), net.config.embed_dim);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto a = catalog.item(actions[i]);
    std::copy(a.begin(), a.end(), suffix.row(i).begin());
  }
  return nn::predict_shared_prefix(net.trunk, prefix, suffix);
}

inline std::vector<double> score_action(const EncodedNet& net, const Catalog& catalog, const SessionState& s,
                                        int action) {
  const int a[1] = {action};
  const auto m = score_actions(net, catalog, s, a);
  return {m.values().begin(), m.values().end()};
}

// ---- batched training path ----

struct EncodedTape {
  nn::Matrix slot_input;
  nn::Matrix slot_output;
  std::vector<std::size_t> slot_begin;
  std::vector<std::size_t> slot_count;
  nn::Tape trunk_tape;
};

struct EncodedForward {
  nn::Matrix output;
  EncodedTape tape;
};

inline EncodedForward forward_batch(const EncodedNet& net, const Catalog& catalog,
                                    std::span<const StateAction> batch) {
  const auto& cfg = net.config;
  EncodedForward res;
  auto& tp = res.tape;
  std::size_t total = 0;
  for (const auto& sa : batch) {
    detail::check_state(net, catalog, *sa.state);
    tp.slot_begin.push_back(total);
    tp.slot_count.push_back(sa.state->window.size());
    total += sa.state->window.size();
  }
  tp.slot_input = nn::Matrix(total, cfg.slot_input_width());
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t i = 0; i < tp.slot_count[b]; ++i)
      detail::fill_slot(tp.slot_input.row(tp.slot_begin[b] + i), catalog, batch[b].state->window[i]);
  tp.slot_output = nn::dense_forward(net.slot_projection, tp.slot_input);

  nn::Matrix x(batch.size(), cfg.feature_width());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto row = x.row(b);
    const auto& u = batch[b].state->user;
    std::copy(u.begin(), u.end(), row.begin());
    detail::mean_pool(row.subspan(cfg.embed_dim, cfg.slot_width), tp.slot_output, tp.slot_begin[b], tp.slot_count[b]);
    const auto a = catalog.item(batch[b].action);
    std::copy(a.begin(), a.end(), row.begin() + static_cast<std::ptrdiff_t>(cfg.embed_dim + cfg.slot_width));
  }
  auto fr = nn::forward(net.trunk, x);
  res.output = std::move(fr.output);
  tp.trunk_tape = std::move(fr.tape);
  return res;
}

struct EncodedGradients {
  nn::LayerGrad slot;
  nn::Gradients trunk;
};

inline EncodedGradients backward_batch(const EncodedNet& net, const EncodedTape& tape, const nn::Matrix& output_grad) {
  const auto& cfg = net.config;
  EncodedGradients g;
  g.trunk = nn::backward(net.trunk, tape.trunk_tape, output_grad);
  nn::Matrix dproj(tape.slot_output.rows(), cfg.slot_width);
  for (std::size_t b = 0; b < tape.slot_count.size(); ++b) {
    const std::size_t n = tape.slot_count[b];
    if (n == 0) continue;
    const auto dx = g.trunk.input.row(b).subspan(cfg.embed_dim, cfg.slot_width);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = dproj.row(tape.slot_begin[b] + i);
      for (std::size_t j = 0; j < cfg.slot_width; ++j) r[j] = dx[j] / static_cast<double>(n);
    }
  }
  g.slot = nn::dense_backward(net.slot_projection, tape.slot_input, tape.slot_output, dproj).grad;
  return g;
}

inline std::vector<std::span<double>> parameter_spans(EncodedNet& net) {
  std::vector<std::span<double>> out;
  nn::append_spans(net.slot_projection, out);
  for (auto& l : net.trunk.layers) nn::append_spans(l, out);
  return out;
}

inline std::vector<std::span<const double>> gradient_spans(const EncodedGradients& g) {
  std::vector<std::span<const double>> out;
  nn::append_spans(g.slot, out);
  for (const auto& l : g.trunk.layers) nn::append_spans(l, out);
  return out;
}

inline void apply_adam(EncodedNet& net, const EncodedGradients& g, nn::AdamState& state) {
  const auto p = parameter_spans(net);
  const auto gs = gradient_spans(g);
  nn::adam_step(p, gs, state);
  ++net.trunk.revision;
}

// ---- greedy model API ----

inline FeedbackProbs predict_heads(const GreedyNet& g, const Catalog& catalog, const SessionState& s, int action) {
  const auto out = score_action(g.net, catalog, s, action);
  FeedbackProbs p{};
  std::copy(out.begin(), out.end(), p.begin());
  return p;
}

inline SessionState state_for_row(const UserPool& users, const DatasetRow& row) {
  SessionState s;
  s.user_id = row.user_id;
  const auto u = users.user(row.user_id);
  s.user.assign(u.begin(), u.end());
  s.window = row.window;
  s.t = row.step;
  return s;
}

struct GreedyTrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double holdout_fraction = 0.1;
  bool operator==(const GreedyTrainConfig&) const = default;
};

struct GreedyTrainResult {
  GreedyNet model;
  std::vector<double> loss_curve;  // mean train BCE; entry 0 is before any update
};

// Sessions with this property form the held-out split.
inline bool is_holdout_session(int session_id, double fraction, std::uint64_t seed) {
  return static_cast<double>(derive_seed(seed, 0x401d, static_cast<std::uint64_t>(session_id)) >> 11) * 0x1.0p-53 <
         fraction;
}

inline double mean_bce(const GreedyNet& g, const Catalog& catalog, std::span<const SessionState> states,
                       std::span<const DatasetRow* const> rows) {
  double total = 0.0;
  std::vector<StateAction> batch;
  constexpr std::size_t kChunk = 1024;
  for (std::size_t i = 0; i < rows.size(); i += kChunk) {
    batch.clear();
    const std::size_t end = std::min(rows.size(), i + kChunk);
    for (std::size_t j = i; j < end; ++j) batch.push_back({&states[j], rows[j]->action});
    const auto fr = forward_batch(g.net, catalog, batch);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      std::array<double, kNumFeedback> label{};
      for (std::size_t f = 0; f < kNumFeedback; ++f) label[f] = rows[i + j]->label[f];
      total += nn::bce_loss(fr.output.row(j), label).loss;
    }
  }
  return rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
}

inline GreedyTrainResult train_greedy(std::span<const DatasetRow* const> rows, const Catalog& catalog,
                                      const UserPool& users, const EncoderConfig& enc,
                                      const GreedyTrainConfig& cfg, std::uint64_t seed) {
  if (rows.empty()) throw ConfigError("train_greedy: empty dataset");
  if (cfg.batch_size < 1) throw ConfigError("train_greedy: batch_size must be >= 1");
  GreedyTrainResult res{make_greedy_net(enc, derive_seed(seed, 0x9e7)), {}};
  std::vector<SessionState> states;
  states.reserve(rows.size());
  for (const auto* r : rows) states.push_back(state_for_row(users, *r));

  nn::AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  Rng rng(derive_seed(seed, 0x5f));
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  res.loss_curve.push_back(mean_bce(res.model, catalog, states, rows));
  std::vector<StateAction> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), i + cfg.batch_size);
      batch.clear();
      for (std::size_t j = i; j < end; ++j) batch.push_back({&states[order[j]], rows[order[j]]->action});
      auto fr = forward_batch(res.model.net, catalog, batch);
      nn::Matrix dout(batch.size(), kNumFeedback);
      const double scale = 1.0 / static_cast<double>(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        std::array<double, kNumFeedback> label{};
        for (std::size_t f = 0; f < kNumFeedback; ++f) label[f] = rows[order[i + j]]->label[f];
        const auto lg = nn::bce_loss(fr.output.row(j), label);
        epoch_loss += lg.loss;
        for (std::size_t f = 0; f < kNumFeedback; ++f) dout(j, f) = lg.grad[f] * scale;
      }
      if (!std::isfinite(epoch_loss))
        throw TrainingError("train_greedy: non-finite loss in epoch " + std::to_string(epoch + 1));
      const auto grads = backward_batch(res.model.net, fr.tape, dout);
      apply_adam(res.model.net, grads, adam);
    }
    res.loss_curve.push_back(epoch_loss / static_cast<double>(rows.size()));
  }
  return res;
}

// Rank AUC with average ranks for ties; NaN when one class is absent.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nan("");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct HeadReport {
  std::array<double, kNumFeedback> auc{};
  std::array<double, kNumFeedback> mean_pred{};
  std::array<double, kNumFeedback> label_rate{};
  double mean_auc = 0.0;
};

inline HeadReport evaluate_heads(const GreedyNet& g, const Catalog& catalog, const UserPool& users,
                                 std::span<const DatasetRow* const> rows) {
  HeadReport rep;
  std::array<std::vector<double>, kNumFeedback> scores;
  std::array<std::vector<std::uint8_t>, kNumFeedback> labels;
  std::vector<SessionState> states;
  std::vector<StateAction> batch;
  constexpr std::size_t kChunk = 1024;
  for (std::size_t i = 0; i < rows.size(); i += kChunk) {
    const std::size_t end = std::min(rows.size(), i + kChunk);
    states.clear();
    batch.clear();
    for (std::size_t j = i; j < end; ++j) states.push_back(state_for_row(users, *rows[j]));
    for (std::size_t j = i; j < end; ++j) batch.push_back({&states[j - i], rows[j]->action});
    const auto fr = forward_batch(g.net, catalog, batch);
    for (std::size_t j = 0; j < batch.size(); ++j)
      for (std::size_t f = 0; f < kNumFeedback; ++f) {
        scores[f].push_back(fr.output(j, f));
        labels[f].push_back(rows[i + j]->label[f]);
      }
  }
  double s = 0.0;
  for (std::size_t f = 0; f < kNumFeedback; ++f) {
    rep.auc[f] = auc(scores[f], labels[f]);
    s += rep.auc[f];
    const double n = static_cast<double>(rows.size());
    rep.mean_pred[f] = std::accumulate(scores[f].begin(), scores[f].end(), 0.0) / n;
    rep.label_rate[f] = std::accumulate(labels[f].begin(), labels[f].end(), 0.0) / n;
  }
  rep.mean_auc = s / static_cast<double>(kNumFeedback);
  return rep;
}

}  // namespace recomind
