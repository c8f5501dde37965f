// SPDX-License-Identifier: Apache-2.0
/**
 * @file   support.hpp
 * @brief  Generators and straight-line reference implementations used by
 *         the tests and the acceptance runner.
 *
 * The references deliberately avoid the library's matrix code: loops over
 * scalars, dense adjacency, no caching.
 */
#pragma once

#include "sylstm/corpus.hpp"
#include "sylstm/depgraph.hpp"
#include "sylstm/model.hpp"
#include "sylstm/pipeline.hpp"
#include "sylstm/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace sylstm::testing {

inline std::filesystem::path fixture(const std::string &rel) {
  return std::filesystem::path(SYLSTM_FIXTURE_DIR) / rel;
}

/// Uniformly random rooted tree over n tokens.
inline depgraph::DependencyParse random_tree(Rng &rng, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i)
    order[i] = i;
  rng.shuffle(order.begin(), order.end());
  depgraph::DependencyParse p;
  p.heads.assign(n, depgraph::kRoot);
  for (std::size_t k = 1; k < n; ++k)
    p.heads[order[k]] = static_cast<int>(order[rng.below(k)]);
  for (std::size_t i = 0; i < n; ++i) {
    p.tokens.push_back("t" + std::to_string(i));
    p.relations.push_back(p.heads[i] == depgraph::kRoot ? "root" : "dep");
  }
  return p;
}

/// D^-1/2 (A + I) D^-1/2 computed densely from the head array.
inline std::vector<std::vector<double>> dense_adjacency(const std::vector<int> &heads,
                                                        double alpha = 1.0) {
  const std::size_t n = heads.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (std::size_t d = 0; d < n; ++d)
    if (heads[d] >= 0) {
      a[d][static_cast<std::size_t>(heads[d])] = alpha;
      a[static_cast<std::size_t>(heads[d])][d] = alpha;
    }
  for (std::size_t i = 0; i < n; ++i)
    a[i][i] += 1.0;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      deg[i] += a[i][j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a[i][j] /= std::sqrt(deg[i] * deg[j]);
  return a;
}

inline Mat<double> to_mat(const std::vector<std::vector<double>> &v) {
  Mat<double> m(static_cast<Eigen::Index>(v.size()),
                static_cast<Eigen::Index>(v.empty() ? 0 : v[0].size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j];
  return m;
}

inline Mat<double> random_matrix(Rng &rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      m(i, j) = rng.uniform(-scale, scale);
  return m;
}

/// Widths of at most 4, no dropout.
inline ModelConfig tiny_config(Pooling pooling = Pooling::Mean) {
  ModelConfig c;
  c.d_w = 3;
  c.lstm_hidden = 2;
  c.lstm_layers = 2;
  c.lstm_dropout = 0.0;
  c.gcn_out = 3;
  c.gcn_dropout = 0.0;
  c.ffnn_out = 4;
  c.n_classes = 3;
  c.max_len = 8;
  c.pooling = pooling;
  return c;
}

/// Every tensor random (batch-norm scales near 1, running variances positive).
inline void randomize(SyLSTM<double> &m, Rng &rng, double scale = 0.5) {
  m.params.for_each([&](const std::string &name, Mat<double> &t, ParamKind kind) {
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j)
        t(i, j) = kind == ParamKind::Norm && name.find("scale") != std::string::npos
                    ? rng.uniform(0.5, 1.5)
                    : rng.uniform(-scale, scale);
  });
  m.params.embedding.row(kPad).setZero();
  for (auto *b : {&m.buffers.bn1_mean, &m.buffers.bn2_mean})
    for (Eigen::Index j = 0; j < b->cols(); ++j)
      (*b)(0, j) = rng.uniform(-0.3, 0.3);
  for (auto *b : {&m.buffers.bn1_var, &m.buffers.bn2_var})
    for (Eigen::Index j = 0; j < b->cols(); ++j)
      (*b)(0, j) = rng.uniform(0.5, 2.0);
}

inline SyLSTM<double> tiny_model(Rng &rng, const ModelConfig &cfg, std::size_t vocab = 7) {
  EmbeddingMatrix<double> emb;
  emb.values = Mat<double>::Zero(static_cast<Eigen::Index>(vocab),
                                 static_cast<Eigen::Index>(cfg.d_w));
  auto m = init_params(cfg, emb, rng.below(1u << 30));
  randomize(m, rng);
  return m;
}

/// Random ids in [2, vocab) of the given length.
inline std::vector<TokenId> random_ids(Rng &rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> ids(n);
  for (auto &id : ids)
    id = static_cast<TokenId>(2 + rng.below(vocab - 2));
  return ids;
}

// ---------------------------------------------------------------------------
// Scalar reference forward pass (eval mode)

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One LSTM direction, gate order i, f, g, o, step by step.
inline Rows reference_lstm(const LstmCell<double> &cell, const Rows &x, bool reverse) {
  const std::size_t steps = x.size();
  const std::size_t H = static_cast<std::size_t>(cell.w_recurrent.rows());
  Rows out(steps, Vec(H, 0.0));
  Vec h(H, 0.0), c(H, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Vec a(4 * H, 0.0);
    for (std::size_t u = 0; u < 4 * H; ++u) {
      double s = cell.bias(0, static_cast<Eigen::Index>(u));
      for (std::size_t i = 0; i < x[t].size(); ++i)
        s += x[t][i] * cell.w_input(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(u));
      for (std::size_t j = 0; j < H; ++j)
        s += h[j] * cell.w_recurrent(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(u));
      a[u] = s;
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigm(a[j]), fg = sigm(a[H + j]), gg = std::tanh(a[2 * H + j]),
                   og = sigm(a[3 * H + j]);
      c[j] = fg * c[j] + ig * gg;
      h[j] = og * std::tanh(c[j]);
    }
    out[t] = h;
  }
  return out;
}

struct ReferenceOutput {
  Rows h_seq;
  Vec h_final;
  Rows z;
  Vec pooled, logits, probs;
};

inline Rows reference_bn(const Rows &x, const Mat<double> &scale, const Mat<double> &shift,
                         const Mat<double> &mean, const Mat<double> &var, double eps) {
  Rows y = x;
  for (auto &row : y)
    for (std::size_t j = 0; j < row.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      row[j] = (row[j] - mean(0, jj)) / std::sqrt(var(0, jj) + eps) * scale(0, jj) + shift(0, jj);
    }
  return y;
}

inline Rows reference_matmul(const Rows &x, const Mat<double> &w) {
  Rows y(x.size(), Vec(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index k = 0; k < w.cols(); ++k)
      for (std::size_t j = 0; j < x[i].size(); ++j)
        y[i][static_cast<std::size_t>(k)] += x[i][j] * w(static_cast<Eigen::Index>(j), k);
  return y;
}

/// Whole network in eval mode over one tweet, dense everything.
inline ReferenceOutput reference_forward(const SyLSTM<double> &m, const std::vector<TokenId> &ids,
                                         const std::vector<std::vector<double>> &adj) {
  const auto &cfg = m.config;
  const auto &p = m.params;
  const std::size_t T = ids.size();
  Rows x(T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < cfg.d_w; ++j)
      x[t].push_back(p.embedding(ids[t], static_cast<Eigen::Index>(j)));
  Rows fwd, bwd;
  for (std::size_t l = 0; l < cfg.lstm_layers; ++l) {
    fwd = reference_lstm(p.lstm[l][0], x, false);
    bwd = reference_lstm(p.lstm[l][1], x, true);
    for (std::size_t t = 0; t < T; ++t) {
      x[t] = fwd[t];
      x[t].insert(x[t].end(), bwd[t].begin(), bwd[t].end());
    }
  }
  ReferenceOutput r;
  r.h_seq = x;
  r.h_final = fwd[T - 1];
  r.h_final.insert(r.h_final.end(), bwd[0].begin(), bwd[0].end());

  const Rows l = reference_bn(x, p.bn1_scale, p.bn1_shift, m.buffers.bn1_mean, m.buffers.bn1_var,
                              cfg.bn_eps);
  Rows al(T, Vec(l[0].size(), 0.0));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t k = 0; k < l[0].size(); ++k)
        al[i][k] += adj[i][j] * l[j][k];
  Rows g = reference_matmul(al, p.gcn_weight);
  for (auto &row : g)
    for (auto &v : row)
      v = std::max(0.0, v);
  r.z = reference_bn(g, p.bn2_scale, p.bn2_shift, m.buffers.bn2_mean, m.buffers.bn2_var,
                     cfg.bn_eps);
  Rows f = reference_matmul(r.z, p.ffnn_weight);
  for (auto &row : f)
    for (std::size_t k = 0; k < row.size(); ++k)
      row[k] = std::max(0.0, row[k] + p.ffnn_bias(0, static_cast<Eigen::Index>(k)));
  r.pooled.assign(cfg.ffnn_out, cfg.pooling == Pooling::Mean ? 0.0 : -1e300);
  for (const auto &row : f)
    for (std::size_t k = 0; k < row.size(); ++k)
      r.pooled[k] = cfg.pooling == Pooling::Mean ? r.pooled[k] + row[k] / static_cast<double>(T)
                                                 : std::max(r.pooled[k], row[k]);
  Vec feat = r.pooled;
  feat.insert(feat.end(), r.h_final.begin(), r.h_final.end());
  r.logits.assign(cfg.n_classes, 0.0);
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    double s = p.classifier_bias(0, static_cast<Eigen::Index>(c));
    for (std::size_t j = 0; j < feat.size(); ++j)
      s += feat[j] * p.classifier_weight(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
    r.logits[c] = s;
  }
  double mx = r.logits[0], z = 0.0;
  for (double v : r.logits)
    mx = std::max(mx, v);
  for (double v : r.logits)
    z += std::exp(v - mx);
  for (double v : r.logits)
    r.probs.push_back(std::exp(v - mx) / z);
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  std::string worst_tensor;
  double worst_rel = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

/// Mean cross-entropy of a batch and d(loss)/d(logits).
inline double batch_loss(const SyLSTM<double> &m, std::span<const Input> batch,
                         const std::vector<std::size_t> &gold, Mode mode,
                         Mat<double> *d_logits = nullptr) {
  const auto tr = forward_batch(m, batch, mode);
  const auto B = static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b)
    loss -= std::log(tr.probabilities(static_cast<Eigen::Index>(b),
                                      static_cast<Eigen::Index>(gold[b])));
  if (d_logits) {
    *d_logits = tr.probabilities / B;
    for (std::size_t b = 0; b < batch.size(); ++b)
      (*d_logits)(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(gold[b])) -= 1.0 / B;
  }
  return loss / B;
}

/**
 * Central differences (step h) of the mean cross-entropy over `batch`
 * against the analytic backward pass, for every tensor. Relative error is
 * |a - n| / max(|a|, |n|, 1e-8) in the L2 norm over the tensor.
 */
inline GradCheckResult gradient_check(const SyLSTM<double> &model, std::span<const Input> batch,
                                      const std::vector<std::size_t> &gold, Mode mode,
                                      double h = 1e-5) {
  Mat<double> d_logits;
  batch_loss(model, batch, gold, mode, &d_logits);
  const auto analytic = backward(model, forward_batch(model, batch, mode), d_logits);

  std::vector<Mat<double>> numeric;
  SyLSTM<double> probe = model;
  std::vector<Mat<double> *> slots;
  probe.params.for_each(
    [&](const std::string &, Mat<double> &t, ParamKind) { slots.push_back(&t); });
  for (auto *t : slots) {
    Mat<double> g(t->rows(), t->cols());
    for (Eigen::Index i = 0; i < t->rows(); ++i)
      for (Eigen::Index j = 0; j < t->cols(); ++j) {
        const double keep = (*t)(i, j);
        (*t)(i, j) = keep + h;
        const double up = batch_loss(probe, batch, gold, mode);
        (*t)(i, j) = keep - h;
        const double down = batch_loss(probe, batch, gold, mode);
        (*t)(i, j) = keep;
        g(i, j) = (up - down) / (2.0 * h);
      }
    numeric.push_back(std::move(g));
  }
  // The padding row is frozen, so its numeric derivative is not compared.
  numeric[0].row(kPad).setZero();

  GradCheckResult r;
  std::size_t k = 0;
  analytic.for_each([&](const std::string &name, const Mat<double> &a, ParamKind) {
    const Mat<double> &n = numeric[k++];
    const double denom = std::max({a.norm(), n.norm(), 1e-8});
    const double rel = (a - n).norm() / denom;
    r.per_tensor.emplace_back(name, rel);
    if (rel >= r.worst_rel) {
      r.worst_rel = rel;
      r.worst_tensor = name;
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic separable corpus

struct ToyData {
  Vocabulary vocab;
  std::vector<std::string> classes;
  std::vector<Example> train, dev, test;
};

/// The bundled 200-tweet corpus, split and encoded as the CLI would.
inline ToyData toy_data(std::uint64_t seed = 7, std::size_t max_len = 64) {
  const auto xs = corpus::load_olid(fixture("toy/olid_toy.tsv"), corpus::Task::A);
  const auto parses = depgraph::read_conllu(fixture("toy/olid_toy.conllu"));
  const auto split = corpus::make_split(xs, corpus::Task::A, 0.1, seed, corpus::HeldOut{0.1});
  ToyData d;
  d.classes = corpus::labels(corpus::Task::A);
  const auto train_parses = pipeline::attach_parses(split.train, parses);
  std::vector<std::vector<std::string>> docs;
  for (const auto &p : train_parses)
    docs.push_back(pipeline::tokens_of(p, max_len));
  d.vocab = Vocabulary::build(docs);
  auto encode = [&](const std::vector<corpus::LabeledExample> &part) {
    return pipeline::make_examples(part, pipeline::attach_parses(part, parses), d.vocab,
                                   corpus::Task::A, max_len, 1.0);
  };
  d.train = encode(split.train);
  d.dev = encode(split.dev);
  d.test = encode(split.test);
  return d;
}

inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.d_w = 32;
  c.n_classes = 2;
  return c;
}

inline TrainConfig toy_train_config() {
  TrainConfig t;
  t.epochs = 10;
  t.batch_size = 8;
  t.lr0 = 0.01;
  t.weight_decay = 0.01;
  t.seed = 7;
  return t;
}

template <typename T> SyLSTM<T> toy_model(const ToyData &d, std::uint64_t seed = 7) {
  const auto cfg = toy_model_config();
  return init_params(cfg, random_embeddings<T>(d.vocab, cfg.d_w, seed + 1), seed + 2);
}

template <typename T> double accuracy(const SyLSTM<T> &m, const std::vector<Example> &xs) {
  const auto inputs = as_inputs(xs);
  const auto pred = predict_batch(m, std::span<const Input>(inputs));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    ok += pred[i] == xs[i].label;
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

} // namespace sylstm::testing
