// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  The SyLSTM network and its hand-written backward pass.
 *
 * Data flow for a batch of tweets (row-vector convention, y = x W + b):
 *
 *   ids -> embedding -> stacked BiLSTM ------------------------> h_final
 *                            |                                    |
 *                   bn1 over all packed nodes                      |
 *                            |                                    |
 *          ReLU(A_hat L W_gcn) -> bn2 -> dropout                   |
 *                            |                                    |
 *                 ReLU(Z W_ffnn + b) -> pool per tweet -> [pooled, h_final]
 *                                                                 |
 *                                              linear -> softmax probabilities
 *
 * Graphs are packed block-diagonally, so batch normalization sees exactly
 * the real (non-padding) nodes of the batch. Everything is templated on the
 * scalar so that training runs in float and the numerical checks in double.
 */
#pragma once

#include "sylstm/common.hpp"
#include "sylstm/depgraph.hpp"
#include "sylstm/vocab.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sylstm {

enum class Mode { Train, Eval };
enum class Pooling { Mean, Max };

inline std::string pooling_name(Pooling p) { return p == Pooling::Mean ? "mean" : "max"; }

inline Pooling parse_pooling(std::string_view s) {
  if (s == "mean")
    return Pooling::Mean;
  if (s == "max")
    return Pooling::Max;
  throw ConfigError("unknown pooling '" + std::string(s) + "' (expected mean or max)");
}

struct ModelConfig {
  std::size_t d_w = 200;
  std::size_t lstm_hidden = 32; ///< per direction
  std::size_t lstm_layers = 2;
  double lstm_dropout = 0.4;
  double bn_momentum = 0.6;
  double bn_eps = 1e-5;
  std::size_t gcn_out = 32;
  double gcn_dropout = 0.5;
  std::size_t ffnn_out = 32;
  std::size_t n_classes = 2;
  std::size_t max_len = 64;
  Pooling pooling = Pooling::Mean;

  std::size_t seq_width() const { return 2 * lstm_hidden; }
  std::size_t feature_width() const { return ffnn_out + seq_width(); }

  void validate() const {
    auto dim = [](std::size_t v, const char *name) {
      if (v < 1)
        throw ConfigError(std::string(name) + " must be at least 1");
    };
    dim(d_w, "d_w");
    dim(lstm_hidden, "lstm_hidden");
    dim(lstm_layers, "lstm_layers");
    dim(gcn_out, "gcn_out");
    dim(ffnn_out, "ffnn_out");
    dim(max_len, "max_len");
    if (n_classes < 2)
      throw ConfigError("n_classes must be at least 2");
    if (!(lstm_dropout >= 0.0 && lstm_dropout < 1.0) ||
        !(gcn_dropout >= 0.0 && gcn_dropout < 1.0))
      throw ConfigError("dropout rates must lie in [0, 1)");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
      throw ConfigError("bn_momentum must lie in (0, 1)");
    if (!(bn_eps > 0.0))
      throw ConfigError("bn_eps must be positive");
  }

  nlohmann::json to_json() const {
    return {{"d_w", d_w},
            {"lstm_hidden", lstm_hidden},
            {"lstm_layers", lstm_layers},
            {"lstm_dropout", lstm_dropout},
            {"bn_momentum", bn_momentum},
            {"bn_eps", bn_eps},
            {"gcn_out", gcn_out},
            {"gcn_dropout", gcn_dropout},
            {"ffnn_out", ffnn_out},
            {"n_classes", n_classes},
            {"max_len", max_len},
            {"pooling", pooling_name(pooling)}};
  }

  static ModelConfig from_json(const nlohmann::json &j) {
    ModelConfig c;
    try {
      c.d_w = j.at("d_w");
      c.lstm_hidden = j.at("lstm_hidden");
      c.lstm_layers = j.at("lstm_layers");
      c.lstm_dropout = j.at("lstm_dropout");
      c.bn_momentum = j.at("bn_momentum");
      c.bn_eps = j.at("bn_eps");
      c.gcn_out = j.at("gcn_out");
      c.gcn_dropout = j.at("gcn_dropout");
      c.ffnn_out = j.at("ffnn_out");
      c.n_classes = j.at("n_classes");
      c.max_len = j.at("max_len");
      c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

/// Which optimizer treatment a tensor gets (weight decay applies to Weight
/// and Embedding only).
enum class ParamKind { Embedding, Weight, Bias, Norm };

/// One LSTM direction: gates = x w_input + h w_recurrent + bias, order i,f,g,o.
template <typename T> struct LstmCell {
  Mat<T> w_input;     ///< in x 4H
  Mat<T> w_recurrent; ///< H x 4H
  Mat<T> bias;        ///< 1 x 4H
};

template <typename T> struct Params {
  Mat<T> embedding;                            ///< |V| x d_w
  std::vector<std::array<LstmCell<T>, 2>> lstm; ///< [layer][forward, backward]
  Mat<T> bn1_scale, bn1_shift;                 ///< 1 x 2H
  Mat<T> gcn_weight;                           ///< 2H x gcn_out
  Mat<T> bn2_scale, bn2_shift;                 ///< 1 x gcn_out
  Mat<T> ffnn_weight, ffnn_bias;               ///< gcn_out x ffnn_out, 1 x ffnn_out
  Mat<T> classifier_weight, classifier_bias;   ///< (ffnn_out + 2H) x K, 1 x K

  /// Calls f(name, tensor, kind) for every trainable tensor in a fixed order.
  template <typename F> void for_each(F &&f) { visit(*this, f); }
  template <typename F> void for_each(F &&f) const { visit(*this, f); }

  Params zeros_like() const {
    Params z = *this;
    z.for_each([](const std::string &, Mat<T> &m, ParamKind) { m.setZero(); });
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string &, const Mat<T> &m, ParamKind) {
      n += static_cast<std::size_t>(m.size());
    });
    return n;
  }

private:
  template <typename Self, typename F> static void visit(Self &s, F &f) {
    f(std::string("embedding"), s.embedding, ParamKind::Embedding);
    for (std::size_t l = 0; l < s.lstm.size(); ++l) {
      for (std::size_t d = 0; d < 2; ++d) {
        const std::string p =
          "lstm.l" + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
        f(p + "w_input", s.lstm[l][d].w_input, ParamKind::Weight);
        f(p + "w_recurrent", s.lstm[l][d].w_recurrent, ParamKind::Weight);
        f(p + "bias", s.lstm[l][d].bias, ParamKind::Bias);
      }
    }
    f(std::string("bn1.scale"), s.bn1_scale, ParamKind::Norm);
    f(std::string("bn1.shift"), s.bn1_shift, ParamKind::Norm);
    f(std::string("gcn.weight"), s.gcn_weight, ParamKind::Weight);
    f(std::string("bn2.scale"), s.bn2_scale, ParamKind::Norm);
    f(std::string("bn2.shift"), s.bn2_shift, ParamKind::Norm);
    f(std::string("ffnn.weight"), s.ffnn_weight, ParamKind::Weight);
    f(std::string("ffnn.bias"), s.ffnn_bias, ParamKind::Bias);
    f(std::string("classifier.weight"), s.classifier_weight, ParamKind::Weight);
    f(std::string("classifier.bias"), s.classifier_bias, ParamKind::Bias);
  }
};

/// Batch-norm running statistics (not trained by gradient).
template <typename T> struct Buffers {
  Mat<T> bn1_mean, bn1_var, bn2_mean, bn2_var;

  template <typename F> void for_each(F &&f) { visit(*this, f); }
  template <typename F> void for_each(F &&f) const { visit(*this, f); }

private:
  template <typename Self, typename F> static void visit(Self &s, F &f) {
    f(std::string("bn1.running_mean"), s.bn1_mean);
    f(std::string("bn1.running_var"), s.bn1_var);
    f(std::string("bn2.running_mean"), s.bn2_mean);
    f(std::string("bn2.running_var"), s.bn2_var);
  }
};

template <typename T> struct SyLSTM {
  ModelConfig config;
  Params<T> params;
  Buffers<T> buffers;
  bool embedding_trainable = true;

  std::size_t vocab_size() const { return static_cast<std::size_t>(params.embedding.rows()); }
};

namespace detail {

template <typename T> void xavier_uniform(Mat<T> &m, Rng &rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T> Mat<T> sized(std::size_t r, std::size_t c) {
  return Mat<T>::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

} // namespace detail

/**
 * Fresh parameters around a given embedding table. Every weight matrix is
 * Xavier-uniform with bound sqrt(6 / (fan_in + fan_out)); biases and
 * batch-norm shifts are zero, batch-norm scales one.
 */
template <typename T>
SyLSTM<T> init_params(const ModelConfig &cfg, const EmbeddingMatrix<T> &emb,
                      std::uint64_t seed) {
  cfg.validate();
  if (emb.dim() != cfg.d_w)
    throw ShapeError("embedding dimension " + std::to_string(emb.dim()) +
                     " does not match d_w = " + std::to_string(cfg.d_w));
  if (emb.rows() < 2)
    throw ShapeError("embedding table needs at least the <pad> and <unk> rows");
  using detail::sized;
  Rng rng(seed);
  SyLSTM<T> m;
  m.config = cfg;
  m.embedding_trainable = emb.trainable;
  auto &p = m.params;
  p.embedding = emb.values;
  p.embedding.row(kPad).setZero();
  const std::size_t H = cfg.lstm_hidden;
  p.lstm.resize(cfg.lstm_layers);
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.d_w : 2 * H;
    for (auto &cell : p.lstm[l]) {
      cell.w_input = sized<T>(in, 4 * H);
      cell.w_recurrent = sized<T>(H, 4 * H);
      cell.bias = sized<T>(1, 4 * H);
      detail::xavier_uniform(cell.w_input, rng);
      detail::xavier_uniform(cell.w_recurrent, rng);
    }
  }
  p.bn1_scale = Mat<T>::Ones(1, static_cast<Eigen::Index>(2 * H));
  p.bn1_shift = sized<T>(1, 2 * H);
  p.gcn_weight = sized<T>(2 * H, cfg.gcn_out);
  detail::xavier_uniform(p.gcn_weight, rng);
  p.bn2_scale = Mat<T>::Ones(1, static_cast<Eigen::Index>(cfg.gcn_out));
  p.bn2_shift = sized<T>(1, cfg.gcn_out);
  p.ffnn_weight = sized<T>(cfg.gcn_out, cfg.ffnn_out);
  detail::xavier_uniform(p.ffnn_weight, rng);
  p.ffnn_bias = sized<T>(1, cfg.ffnn_out);
  p.classifier_weight = sized<T>(cfg.feature_width(), cfg.n_classes);
  detail::xavier_uniform(p.classifier_weight, rng);
  p.classifier_bias = sized<T>(1, cfg.n_classes);

  m.buffers.bn1_mean = sized<T>(1, 2 * H);
  m.buffers.bn1_var = Mat<T>::Ones(1, static_cast<Eigen::Index>(2 * H));
  m.buffers.bn2_mean = sized<T>(1, cfg.gcn_out);
  m.buffers.bn2_var = Mat<T>::Ones(1, static_cast<Eigen::Index>(cfg.gcn_out));
  return m;
}

/// Per-block trainable parameter counts, in forward order.
template <typename T>
std::vector<std::pair<std::string, std::size_t>> parameter_breakdown(const Params<T> &p) {
  std::vector<std::pair<std::string, std::size_t>> blocks;
  auto add = [&](const std::string &name, std::size_t n) {
    if (!blocks.empty() && blocks.back().first == name)
      blocks.back().second += n;
    else
      blocks.emplace_back(name, n);
  };
  p.for_each([&](const std::string &name, const Mat<T> &m, ParamKind) {
    std::string block = name.substr(0, name.find('.'));
    if (block == "lstm")
      block = name.substr(0, name.find('.', 5));
    add(block, static_cast<std::size_t>(m.size()));
  });
  return blocks;
}

// ---------------------------------------------------------------------------
// Forward caches

template <typename T> struct LstmDirCache {
  Mat<T> input;  ///< T x in
  Mat<T> gates;  ///< T x 4H, post-activation (i, f, g, o)
  Mat<T> cell;   ///< T x H
  Mat<T> hidden; ///< T x H
  bool reverse = false;
};

template <typename T> struct SequenceCache {
  std::vector<TokenId> ids; ///< non-padding prefix
  std::vector<std::array<LstmDirCache<T>, 2>> layers;
  std::vector<Mat<T>> dropout_masks; ///< between layers; empty in eval mode
  Mat<T> output;                     ///< T x 2H of the last layer
  RowVec<T> h_final;                 ///< forward state at T-1, backward state at 0
};

template <typename T> struct BatchNormCache {
  Mat<T> xhat;
  RowVec<T> mean, var, inv_std;
  bool batch_stats = false;
};

template <typename T> struct BatchTrace {
  Mode mode = Mode::Eval;
  std::vector<SequenceCache<T>> sequences;
  depgraph::PackedAdjacency adjacency;
  std::vector<std::size_t> lengths;
  Mat<T> h_seq;      ///< N x 2H, stacked BiLSTM outputs
  BatchNormCache<T> bn1;
  Mat<T> bn1_out;    ///< N x 2H, the GCN input
  Mat<T> propagated; ///< A_hat * bn1_out
  Mat<T> gcn_pre;    ///< propagated * W_gcn
  Mat<T> gcn_relu;
  BatchNormCache<T> bn2;
  Mat<T> bn2_out;
  Mat<T> gcn_dropout_mask; ///< empty in eval mode
  Mat<T> z;                ///< N x gcn_out after dropout
  Mat<T> ffnn_pre, ffnn_out;
  Mat<T> pooled;           ///< B x ffnn_out
  std::vector<std::vector<Eigen::Index>> max_rows; ///< max pooling argmax rows
  Mat<T> features;         ///< B x (ffnn_out + 2H)
  Mat<T> logits, probabilities;
};

/// One tweet: token ids (padding only at the end) and its graph.
struct Input {
  std::span<const TokenId> ids;
  const depgraph::NormalizedAdjacency *adjacency = nullptr;
};

namespace detail {

inline std::size_t real_length(std::span<const TokenId> ids, std::size_t max_len) {
  std::size_t t = 0;
  while (t < ids.size() && ids[t] != kPad)
    ++t;
  for (std::size_t k = t; k < ids.size(); ++k)
    if (ids[k] != kPad)
      throw PreconditionError("padding may only appear after the last real token");
  if (t == 0)
    throw PreconditionError("input consists only of padding");
  if (t > max_len)
    throw PreconditionError("sequence of length " + std::to_string(t) +
                            " exceeds max_len " + std::to_string(max_len));
  return t;
}

template <typename T> Mat<T> dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng &rng) {
  Mat<T> m(r, c);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = rng.bernoulli(p) ? T(0) : keep;
  return m;
}

template <typename T>
LstmDirCache<T> lstm_direction_forward(const LstmCell<T> &cell, const Mat<T> &x, bool reverse) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index H = cell.w_recurrent.rows();
  LstmDirCache<T> c;
  c.input = x;
  c.reverse = reverse;
  c.gates.resize(steps, 4 * H);
  c.cell.resize(steps, H);
  c.hidden.resize(steps, H);
  const Mat<T> xw = x * cell.w_input;
  RowVec<T> h = RowVec<T>::Zero(H), cs = RowVec<T>::Zero(H);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::Index t = reverse ? steps - 1 - k : k;
    RowVec<T> a = xw.row(t) + h * cell.w_recurrent + cell.bias;
    for (Eigen::Index j = 0; j < H; ++j) {
      a(j) = sigmoid(a(j));
      a(H + j) = sigmoid(a(H + j));
      a(2 * H + j) = std::tanh(a(2 * H + j));
      a(3 * H + j) = sigmoid(a(3 * H + j));
      cs(j) = a(H + j) * cs(j) + a(j) * a(2 * H + j);
      h(j) = a(3 * H + j) * std::tanh(cs(j));
    }
    c.gates.row(t) = a;
    c.cell.row(t) = cs;
    c.hidden.row(t) = h;
  }
  return c;
}

/// Backpropagation through time; returns d(input) and accumulates into `grad`.
template <typename T>
Mat<T> lstm_direction_backward(const LstmCell<T> &cell, const LstmDirCache<T> &c,
                               const Mat<T> &d_hidden, LstmCell<T> &grad) {
  const Eigen::Index steps = c.input.rows();
  const Eigen::Index H = cell.w_recurrent.rows();
  Mat<T> d_pre(steps, 4 * H);
  Mat<T> h_prev = Mat<T>::Zero(steps, H);
  RowVec<T> dh_next = RowVec<T>::Zero(H), dc_next = RowVec<T>::Zero(H);
  for (Eigen::Index k = steps - 1; k >= 0; --k) {
    const Eigen::Index t = c.reverse ? steps - 1 - k : k;
    const bool first = k == 0;
    const Eigen::Index tp = c.reverse ? t + 1 : t - 1;
    RowVec<T> dh = d_hidden.row(t) + dh_next;
    for (Eigen::Index j = 0; j < H; ++j) {
      const T i = c.gates(t, j), f = c.gates(t, H + j), g = c.gates(t, 2 * H + j),
              o = c.gates(t, 3 * H + j);
      const T tc = std::tanh(c.cell(t, j));
      const T c_prev = first ? T(0) : c.cell(tp, j);
      const T dc = dh(j) * o * (T(1) - tc * tc) + dc_next(j);
      d_pre(t, j) = dc * g * i * (T(1) - i);
      d_pre(t, H + j) = dc * c_prev * f * (T(1) - f);
      d_pre(t, 2 * H + j) = dc * i * (T(1) - g * g);
      d_pre(t, 3 * H + j) = dh(j) * tc * o * (T(1) - o);
      dc_next(j) = dc * f;
    }
    if (!first)
      h_prev.row(t) = c.hidden.row(tp);
    dh_next = d_pre.row(t) * cell.w_recurrent.transpose();
  }
  grad.w_input.noalias() += c.input.transpose() * d_pre;
  grad.w_recurrent.noalias() += h_prev.transpose() * d_pre;
  grad.bias += d_pre.colwise().sum();
  return d_pre * cell.w_input.transpose();
}

template <typename T>
Mat<T> batchnorm_forward(const Mat<T> &x, const Mat<T> &scale, const Mat<T> &shift,
                         const Mat<T> &run_mean, const Mat<T> &run_var, double eps,
                         bool batch_stats, BatchNormCache<T> &c) {
  c.batch_stats = batch_stats;
  const T n = static_cast<T>(x.rows());
  if (batch_stats) {
    c.mean = x.colwise().sum() / n;
    const Mat<T> centered = x.rowwise() - c.mean;
    c.var = centered.array().square().colwise().sum() / n;
  } else {
    c.mean = run_mean;
    c.var = run_var;
  }
  c.inv_std = (c.var.array() + static_cast<T>(eps)).rsqrt();
  c.xhat = (x.rowwise() - c.mean).array().rowwise() * c.inv_std.array();
  return (c.xhat.array().rowwise() * scale.row(0).array()).rowwise() + shift.row(0).array();
}

template <typename T>
Mat<T> batchnorm_backward(const Mat<T> &dy, const Mat<T> &scale, const BatchNormCache<T> &c,
                          Mat<T> &d_scale, Mat<T> &d_shift) {
  d_scale += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  d_shift += dy.colwise().sum();
  const RowVec<T> g = scale.row(0).array() * c.inv_std.array();
  if (!c.batch_stats)
    return dy.array().rowwise() * g.array();
  const T n = static_cast<T>(dy.rows());
  const RowVec<T> mean_dy = dy.colwise().sum() / n;
  const RowVec<T> mean_dy_xhat = (dy.array() * c.xhat.array()).colwise().sum() / n;
  Mat<T> centered = (dy.rowwise() - mean_dy);
  centered.array() -= c.xhat.array().rowwise() * mean_dy_xhat.array();
  return centered.array().rowwise() * g.array();
}

} // namespace detail

/**
 * Stacked BiLSTM over one tweet. `cache.output` is the last layer's
 * sequence output (T x 2H, forward half first) before batch norm.
 * Inter-layer dropout is drawn from `rng` in training mode.
 */
template <typename T>
SequenceCache<T> semantic_forward(const SyLSTM<T> &m, std::span<const TokenId> ids, Mode mode,
                                  Rng *rng) {
  const auto &cfg = m.config;
  const std::size_t len = detail::real_length(ids, cfg.max_len);
  SequenceCache<T> s;
  s.ids.assign(ids.begin(), ids.begin() + static_cast<long>(len));
  Mat<T> x(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(cfg.d_w));
  for (std::size_t t = 0; t < len; ++t) {
    const TokenId id = s.ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= m.vocab_size())
      throw PreconditionError("token id " + std::to_string(id) + " outside the vocabulary");
    x.row(static_cast<Eigen::Index>(t)) = m.params.embedding.row(id);
  }
  const bool drop = mode == Mode::Train && cfg.lstm_dropout > 0.0;
  if (drop && !rng)
    throw PreconditionError("training mode with dropout needs a random generator");
  const Eigen::Index H = static_cast<Eigen::Index>(cfg.lstm_hidden);
  s.layers.resize(cfg.lstm_layers);
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    auto &layer = s.layers[l];
    layer[0] = detail::lstm_direction_forward(m.params.lstm[l][0], x, false);
    layer[1] = detail::lstm_direction_forward(m.params.lstm[l][1], x, true);
    Mat<T> out(x.rows(), 2 * H);
    out.leftCols(H) = layer[0].hidden;
    out.rightCols(H) = layer[1].hidden;
    if (l + 1 < cfg.lstm_layers) {
      if (drop) {
        s.dropout_masks.push_back(detail::dropout_mask<T>(out.rows(), out.cols(),
                                                          cfg.lstm_dropout, *rng));
        out.array() *= s.dropout_masks.back().array();
      }
      x = std::move(out);
    } else {
      s.output = std::move(out);
    }
  }
  const auto &last = s.layers.back();
  s.h_final.resize(2 * H);
  s.h_final.head(H) = last[0].hidden.row(static_cast<Eigen::Index>(len) - 1);
  s.h_final.tail(H) = last[1].hidden.row(0);
  return s;
}

/**
 * Backward through the BiLSTM; gradients accumulate into `g` (the
 * embedding rows of the used ids included). `d_out` is T x 2H and
 * `d_final` is 1 x 2H.
 */
template <typename T>
void semantic_backward(const SyLSTM<T> &m, const SequenceCache<T> &s, const Mat<T> &d_out,
                       const RowVec<T> &d_final, Params<T> &g) {
  const Eigen::Index H = static_cast<Eigen::Index>(m.config.lstm_hidden);
  const Eigen::Index len = static_cast<Eigen::Index>(s.ids.size());
  Mat<T> d = d_out;
  d.row(len - 1).head(H) += d_final.head(H);
  d.row(0).tail(H) += d_final.tail(H);
  for (std::size_t l = s.layers.size(); l-- > 0;) {
    const Mat<T> dh_fwd = d.leftCols(H);
    const Mat<T> dh_bwd = d.rightCols(H);
    Mat<T> dx = detail::lstm_direction_backward(m.params.lstm[l][0], s.layers[l][0], dh_fwd,
                                                g.lstm[l][0]);
    dx += detail::lstm_direction_backward(m.params.lstm[l][1], s.layers[l][1], dh_bwd,
                                          g.lstm[l][1]);
    if (l > 0) {
      if (!s.dropout_masks.empty())
        dx.array() *= s.dropout_masks[l - 1].array();
      d = std::move(dx);
    } else {
      for (Eigen::Index t = 0; t < len; ++t)
        g.embedding.row(s.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    }
  }
}

/**
 * Full forward pass over a batch. Pure: batch-norm running statistics are
 * not touched (see update_running_stats). In training mode `rng` supplies
 * dropout masks and batch norm uses statistics of the packed nodes.
 */
template <typename T>
BatchTrace<T> forward_batch(const SyLSTM<T> &m, std::span<const Input> batch, Mode mode,
                            Rng *rng = nullptr) {
  require(!batch.empty(), "empty batch");
  const auto &cfg = m.config;
  const auto &p = m.params;
  const bool train = mode == Mode::Train;
  if (train && (cfg.lstm_dropout > 0.0 || cfg.gcn_dropout > 0.0) && !rng)
    throw PreconditionError("training mode with dropout needs a random generator");
  BatchTrace<T> tr;
  tr.mode = mode;
  std::vector<const depgraph::NormalizedAdjacency *> graphs;
  std::size_t total = 0;
  for (const auto &in : batch) {
    if (!in.adjacency)
      throw PreconditionError("input without adjacency");
    tr.sequences.push_back(semantic_forward(m, in.ids, mode, rng));
    const std::size_t len = tr.sequences.back().ids.size();
    if (in.adjacency->n() != len)
      throw AlignmentError("graph has " + std::to_string(in.adjacency->n()) +
                           " nodes but the sequence has " + std::to_string(len) + " tokens");
    tr.lengths.push_back(len);
    graphs.push_back(in.adjacency);
    total += len;
  }
  tr.adjacency = depgraph::batch_graphs(std::span<const depgraph::NormalizedAdjacency *const>(graphs));

  const Eigen::Index W = static_cast<Eigen::Index>(cfg.seq_width());
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  tr.h_seq.resize(static_cast<Eigen::Index>(total), W);
  for (std::size_t b = 0; b < batch.size(); ++b)
    tr.h_seq.middleRows(static_cast<Eigen::Index>(tr.adjacency.offsets[b]),
                        static_cast<Eigen::Index>(tr.lengths[b])) = tr.sequences[b].output;

  tr.bn1_out = detail::batchnorm_forward(tr.h_seq, p.bn1_scale, p.bn1_shift, m.buffers.bn1_mean,
                                         m.buffers.bn1_var, cfg.bn_eps, train, tr.bn1);
  tr.propagated = tr.adjacency.matrix.multiply(tr.bn1_out);
  tr.gcn_pre = tr.propagated * p.gcn_weight;
  tr.gcn_relu = tr.gcn_pre.cwiseMax(T(0));
  tr.bn2_out = detail::batchnorm_forward(tr.gcn_relu, p.bn2_scale, p.bn2_shift, m.buffers.bn2_mean,
                                         m.buffers.bn2_var, cfg.bn_eps, train, tr.bn2);
  tr.z = tr.bn2_out;
  if (train && cfg.gcn_dropout > 0.0) {
    tr.gcn_dropout_mask =
      detail::dropout_mask<T>(tr.z.rows(), tr.z.cols(), cfg.gcn_dropout, *rng);
    tr.z.array() *= tr.gcn_dropout_mask.array();
  }
  tr.ffnn_pre = (tr.z * p.ffnn_weight).rowwise() + p.ffnn_bias.row(0);
  tr.ffnn_out = tr.ffnn_pre.cwiseMax(T(0));

  const Eigen::Index F = static_cast<Eigen::Index>(cfg.ffnn_out);
  tr.pooled.resize(B, F);
  if (cfg.pooling == Pooling::Max)
    tr.max_rows.assign(batch.size(), std::vector<Eigen::Index>(static_cast<std::size_t>(F)));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto rows = tr.ffnn_out.middleRows(static_cast<Eigen::Index>(tr.adjacency.offsets[b]),
                                             static_cast<Eigen::Index>(tr.lengths[b]));
    if (cfg.pooling == Pooling::Mean) {
      tr.pooled.row(static_cast<Eigen::Index>(b)) =
        rows.colwise().sum() / static_cast<T>(tr.lengths[b]);
    } else {
      for (Eigen::Index j = 0; j < F; ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < rows.rows(); ++r)
          if (rows(r, j) > rows(best, j))
            best = r;
        tr.max_rows[b][static_cast<std::size_t>(j)] = best;
        tr.pooled(static_cast<Eigen::Index>(b), j) = rows(best, j);
      }
    }
  }

  tr.features.resize(B, static_cast<Eigen::Index>(cfg.feature_width()));
  tr.features.leftCols(F) = tr.pooled;
  for (std::size_t b = 0; b < batch.size(); ++b)
    tr.features.row(static_cast<Eigen::Index>(b)).tail(W) = tr.sequences[b].h_final;
  tr.logits = (tr.features * p.classifier_weight).rowwise() + p.classifier_bias.row(0);
  tr.probabilities.resize(tr.logits.rows(), tr.logits.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    const T mx = tr.logits.row(b).maxCoeff();
    RowVec<T> e = (tr.logits.row(b).array() - mx).exp();
    tr.probabilities.row(b) = e / e.sum();
  }
  return tr;
}

/**
 * Gradients of a scalar loss with respect to every trainable tensor, given
 * d(loss)/d(logits) (B x K).
 */
template <typename T>
Params<T> backward(const SyLSTM<T> &m, const BatchTrace<T> &tr, const Mat<T> &d_logits) {
  const auto &cfg = m.config;
  const auto &p = m.params;
  Params<T> g = p.zeros_like();
  const Eigen::Index F = static_cast<Eigen::Index>(cfg.ffnn_out);
  const Eigen::Index W = static_cast<Eigen::Index>(cfg.seq_width());

  g.classifier_weight.noalias() += tr.features.transpose() * d_logits;
  g.classifier_bias += d_logits.colwise().sum();
  const Mat<T> d_features = d_logits * p.classifier_weight.transpose();

  Mat<T> d_ffnn_out = Mat<T>::Zero(tr.ffnn_out.rows(), tr.ffnn_out.cols());
  for (std::size_t b = 0; b < tr.lengths.size(); ++b) {
    const Eigen::Index off = static_cast<Eigen::Index>(tr.adjacency.offsets[b]);
    const Eigen::Index len = static_cast<Eigen::Index>(tr.lengths[b]);
    const RowVec<T> dp = d_features.row(static_cast<Eigen::Index>(b)).head(F);
    if (cfg.pooling == Pooling::Mean) {
      d_ffnn_out.middleRows(off, len).rowwise() += dp / static_cast<T>(len);
    } else {
      for (Eigen::Index j = 0; j < F; ++j)
        d_ffnn_out(off + tr.max_rows[b][static_cast<std::size_t>(j)], j) += dp(j);
    }
  }

  const Mat<T> d_ffnn_pre = d_ffnn_out.cwiseProduct(
    (tr.ffnn_pre.array() > T(0)).template cast<T>().matrix());
  g.ffnn_weight.noalias() += tr.z.transpose() * d_ffnn_pre;
  g.ffnn_bias += d_ffnn_pre.colwise().sum();
  Mat<T> d_z = d_ffnn_pre * p.ffnn_weight.transpose();
  if (tr.gcn_dropout_mask.size())
    d_z.array() *= tr.gcn_dropout_mask.array();

  const Mat<T> d_relu = detail::batchnorm_backward(d_z, p.bn2_scale, tr.bn2, g.bn2_scale, g.bn2_shift);
  const Mat<T> d_gcn_pre =
    d_relu.cwiseProduct((tr.gcn_pre.array() > T(0)).template cast<T>().matrix());
  g.gcn_weight.noalias() += tr.propagated.transpose() * d_gcn_pre;
  // A_hat is symmetric, so its transpose is itself.
  const Mat<T> d_bn1_out = tr.adjacency.matrix.multiply(Mat<T>(d_gcn_pre * p.gcn_weight.transpose()));
  const Mat<T> d_h_seq =
    detail::batchnorm_backward(d_bn1_out, p.bn1_scale, tr.bn1, g.bn1_scale, g.bn1_shift);

  for (std::size_t b = 0; b < tr.sequences.size(); ++b) {
    const Mat<T> d_out = d_h_seq.middleRows(static_cast<Eigen::Index>(tr.adjacency.offsets[b]),
                                            static_cast<Eigen::Index>(tr.lengths[b]));
    const RowVec<T> d_final = d_features.row(static_cast<Eigen::Index>(b)).tail(W);
    semantic_backward(m, tr.sequences[b], d_out, d_final, g);
  }
  g.embedding.row(kPad).setZero();
  return g;
}

/**
 * Blend the batch statistics of a training-mode trace into the running
 * statistics: running = (1 - momentum) running + momentum batch, with the
 * unbiased variance. A single-row batch leaves the running variance alone.
 */
template <typename T> void update_running_stats(SyLSTM<T> &m, const BatchTrace<T> &tr) {
  if (tr.mode != Mode::Train)
    return;
  const T mom = static_cast<T>(m.config.bn_momentum);
  auto blend = [&](Mat<T> &mean, Mat<T> &var, const BatchNormCache<T> &c, Eigen::Index n) {
    mean = (T(1) - mom) * mean + mom * Mat<T>(c.mean);
    if (n > 1) {
      const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
      var = (T(1) - mom) * var + mom * unbias * Mat<T>(c.var);
    }
  };
  blend(m.buffers.bn1_mean, m.buffers.bn1_var, tr.bn1, tr.h_seq.rows());
  blend(m.buffers.bn2_mean, m.buffers.bn2_var, tr.bn2, tr.gcn_relu.rows());
}

// ---------------------------------------------------------------------------
// Single-tweet views

template <typename T> struct SemanticOutput {
  Mat<T> h_seq;      ///< T x 2H
  RowVec<T> h_final; ///< 2H
};

template <typename T>
SemanticOutput<T> semantic_encode(const SyLSTM<T> &m, std::span<const TokenId> ids, Mode mode,
                                  Rng *rng = nullptr) {
  auto s = semantic_forward(m, ids, mode, rng);
  return {std::move(s.output), std::move(s.h_final)};
}

/**
 * Z = ReLU(A_hat H W_gcn), then bn2 and (training only) dropout. `h` is the
 * batch-normalized BiLSTM output, one row per graph node.
 */
template <typename T>
Mat<T> syntactic_encode(const SyLSTM<T> &m, const Mat<T> &h,
                        const depgraph::NormalizedAdjacency &adj, Mode mode, Rng *rng = nullptr) {
  const auto &cfg = m.config;
  if (static_cast<std::size_t>(h.cols()) != cfg.seq_width())
    throw ShapeError("node features must have " + std::to_string(cfg.seq_width()) + " columns");
  if (static_cast<std::size_t>(h.rows()) != adj.n())
    throw ShapeError("adjacency has " + std::to_string(adj.n()) + " nodes but features have " +
                     std::to_string(h.rows()) + " rows");
  const Mat<T> relu = (adj.multiply(h) * m.params.gcn_weight).cwiseMax(T(0));
  BatchNormCache<T> c;
  Mat<T> z = detail::batchnorm_forward(relu, m.params.bn2_scale, m.params.bn2_shift,
                                       m.buffers.bn2_mean, m.buffers.bn2_var, cfg.bn_eps,
                                       mode == Mode::Train, c);
  if (mode == Mode::Train && cfg.gcn_dropout > 0.0) {
    if (!rng)
      throw PreconditionError("training mode with dropout needs a random generator");
    z.array() *= detail::dropout_mask<T>(z.rows(), z.cols(), cfg.gcn_dropout, *rng).array();
  }
  return z;
}

/// Node features Z -> pooled FFNN features -> logits, given h_final.
template <typename T> struct HeadOutput {
  RowVec<T> pooled;
  RowVec<T> logits;
};

template <typename T>
HeadOutput<T> classify_nodes(const SyLSTM<T> &m, const Mat<T> &z, const RowVec<T> &h_final) {
  const auto &p = m.params;
  const Mat<T> f = ((z * p.ffnn_weight).rowwise() + p.ffnn_bias.row(0)).cwiseMax(T(0));
  HeadOutput<T> out;
  out.pooled = m.config.pooling == Pooling::Mean
                 ? RowVec<T>(f.colwise().sum() / static_cast<T>(f.rows()))
                 : RowVec<T>(f.colwise().maxCoeff());
  RowVec<T> feat(static_cast<Eigen::Index>(m.config.feature_width()));
  feat << out.pooled, h_final;
  out.logits = feat * p.classifier_weight + p.classifier_bias;
  return out;
}

template <typename T> struct ForwardTrace {
  Mat<T> h_seq;      ///< T x 2H before batch norm
  RowVec<T> h_final; ///< 2H
  Mat<T> z_gcn;      ///< T x gcn_out
  RowVec<T> pooled;
  RowVec<T> logits;
  RowVec<T> probabilities;
};

template <typename T>
ForwardTrace<T> forward(const SyLSTM<T> &m, std::span<const TokenId> ids,
                        const depgraph::NormalizedAdjacency &adj, Mode mode, Rng *rng = nullptr) {
  const Input in{ids, &adj};
  auto tr = forward_batch(m, std::span<const Input>(&in, 1), mode, rng);
  ForwardTrace<T> out;
  out.h_seq = tr.h_seq;
  out.h_final = tr.sequences[0].h_final;
  out.z_gcn = tr.z;
  out.pooled = tr.pooled.row(0);
  out.logits = tr.logits.row(0);
  out.probabilities = tr.probabilities.row(0);
  return out;
}

/// Index of the largest probability; ties go to the lowest index.
template <typename Derived> std::size_t argmax(const Eigen::MatrixBase<Derived> &row) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < row.size(); ++k)
    if (row(k) > row(static_cast<Eigen::Index>(best)))
      best = static_cast<std::size_t>(k);
  return best;
}

template <typename T>
std::size_t predict(const SyLSTM<T> &m, std::span<const TokenId> ids,
                    const depgraph::NormalizedAdjacency &adj) {
  return argmax(forward(m, ids, adj, Mode::Eval).probabilities);
}

/// Eval-mode labels for many tweets, in input order.
template <typename T>
std::vector<std::size_t> predict_batch(const SyLSTM<T> &m, std::span<const Input> inputs,
                                       std::size_t chunk = 64) {
  std::vector<std::size_t> labels;
  labels.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); i += chunk) {
    const auto part = inputs.subspan(i, std::min(chunk, inputs.size() - i));
    const auto tr = forward_batch(m, part, Mode::Eval);
    for (Eigen::Index b = 0; b < tr.probabilities.rows(); ++b)
      labels.push_back(argmax(tr.probabilities.row(b)));
  }
  return labels;
}

} // namespace sylstm
