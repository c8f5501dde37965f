// SPDX-License-Identifier: Apache-2.0
/**
 * @file   train.hpp
 * @brief  Cross-entropy loss, AdamW, cosine schedule and the epoch loop.
 */
#pragma once

#include "sylstm/eval.hpp"
#include "sylstm/model.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

namespace sylstm {

inline constexpr double kProbabilityFloor = 1e-12;

struct TrainConfig {
  double lr0 = 1e-3;
  double weight_decay = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 13;
  double clip_norm = 5.0; ///< global gradient norm; 0 disables clipping
  bool coupled_l2 = false; ///< add wd * theta to the gradient instead of decoupled decay
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const {
    if (!(lr0 > 0.0))
      throw ConfigError("lr0 must be positive");
    if (!(weight_decay >= 0.0))
      throw ConfigError("weight_decay must be non-negative");
    if (epochs < 1)
      throw ConfigError("epochs must be at least 1");
    if (batch_size < 1)
      throw ConfigError("batch_size must be at least 1");
    if (!(clip_norm >= 0.0))
      throw ConfigError("clip_norm must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
      throw ConfigError("invalid Adam hyperparameters");
  }

  nlohmann::json to_json() const {
    return {{"lr0", lr0},           {"weight_decay", weight_decay}, {"epochs", epochs},
            {"batch_size", batch_size}, {"seed", seed},          {"clip_norm", clip_norm},
            {"coupled_l2", coupled_l2}, {"beta1", beta1},        {"beta2", beta2},
            {"adam_eps", adam_eps}};
  }
};

// ---------------------------------------------------------------------------
// Loss

/// -log p[gold], with p[gold] clamped at 1e-12 (logged once per call).
template <typename Derived>
double cross_entropy(const Eigen::MatrixBase<Derived> &probs, std::size_t gold) {
  if (gold >= static_cast<std::size_t>(probs.size()))
    throw PreconditionError("gold label outside the probability vector");
  double p = static_cast<double>(probs(static_cast<Eigen::Index>(gold)));
  if (p < kProbabilityFloor) {
    spdlog::warn("probability of gold class {} is {}; clamped to {}", gold, p, kProbabilityFloor);
    p = kProbabilityFloor;
  }
  return -std::log(p);
}

/// Mean cross-entropy over the rows of a B x K probability matrix.
template <typename T>
double batch_cross_entropy(const Mat<T> &probs, std::span<const std::size_t> gold) {
  require(static_cast<std::size_t>(probs.rows()) == gold.size() && !gold.empty(),
          "one gold label per probability row is required");
  double s = 0.0;
  for (Eigen::Index b = 0; b < probs.rows(); ++b)
    s += cross_entropy(probs.row(b), gold[static_cast<std::size_t>(b)]);
  return s / static_cast<double>(gold.size());
}

/// d(mean cross-entropy)/d(logits) = (p - onehot) / B.
template <typename T>
Mat<T> cross_entropy_grad(const Mat<T> &probs, std::span<const std::size_t> gold) {
  Mat<T> d = probs;
  for (Eigen::Index b = 0; b < d.rows(); ++b)
    d(b, static_cast<Eigen::Index>(gold[static_cast<std::size_t>(b)])) -= T(1);
  return d / static_cast<T>(d.rows());
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

/// 0.5 * lr0 * (1 + cos(pi * step / total)), no restarts.
inline double cosine_lr(std::size_t step, std::size_t total, double lr0) {
  if (total == 0 || step > total)
    throw PreconditionError("cosine_lr needs 0 <= step <= total_steps and total_steps > 0");
  if (step == total)
    return 0.0;
  if (2 * step == total)
    return 0.5 * lr0;
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Whether decay touches a tensor: weights and embeddings yes, biases and
/// batch-norm scale/shift no.
inline bool decays(ParamKind k) { return k == ParamKind::Weight || k == ParamKind::Embedding; }

template <typename T> struct AdamState {
  Params<T> m, v;
  std::size_t step = 0;

  static AdamState like(const Params<T> &p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

struct AdamOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  bool coupled_l2 = false;
  bool update_embedding = true;
};

struct StepStatus {
  bool applied = true;
  std::string diagnostic; ///< set when the step was refused
};

/**
 * One AdamW update in place:
 *   theta <- theta (1 - lr wd)                      (decoupled decay)
 *   m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
 *   theta <- theta - lr mhat / (sqrt(vhat) + eps)
 * The padding row of the embedding is never changed. Any non-finite
 * gradient refuses the whole step and leaves params and state untouched.
 */
template <typename T>
StepStatus adamw_step(Params<T> &params, const Params<T> &grads, AdamState<T> &st, double lr,
                      double weight_decay, const AdamOptions &opt = {}) {
  std::vector<const Mat<T> *> gs;
  std::vector<std::string> names;
  grads.for_each([&](const std::string &name, const Mat<T> &g, ParamKind) {
    gs.push_back(&g);
    names.push_back(name);
  });
  for (std::size_t k = 0; k < gs.size(); ++k)
    if (!gs[k]->allFinite())
      return {false, "non-finite gradient in " + names[k] + "; step skipped"};

  std::vector<Mat<T> *> ms, vs;
  st.m.for_each([&](const std::string &, Mat<T> &m, ParamKind) { ms.push_back(&m); });
  st.v.for_each([&](const std::string &, Mat<T> &v, ParamKind) { vs.push_back(&v); });
  ++st.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  std::size_t k = 0;
  params.for_each([&](const std::string &, Mat<T> &theta, ParamKind kind) {
    const std::size_t idx = k++;
    if (kind == ParamKind::Embedding && !opt.update_embedding)
      return;
    Mat<T> g = *gs[idx];
    const bool decay = decays(kind) && weight_decay != 0.0;
    if (decay && opt.coupled_l2)
      g += static_cast<T>(weight_decay) * theta;
    Mat<T> pad_row;
    if (kind == ParamKind::Embedding)
      pad_row = theta.row(kPad);
    if (decay && !opt.coupled_l2)
      theta *= static_cast<T>(1.0 - lr * weight_decay);
    Mat<T> &m = *ms[idx];
    Mat<T> &v = *vs[idx];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    const Mat<T> mhat = m / static_cast<T>(bc1);
    const Mat<T> vhat = v / static_cast<T>(bc2);
    theta.array() -=
      static_cast<T>(lr) * mhat.array() / (vhat.array().sqrt() + static_cast<T>(opt.eps));
    if (kind == ParamKind::Embedding)
      theta.row(kPad) = pad_row;
  });
  return {};
}

/// Global L2 norm of all gradients.
template <typename T> double grad_norm(const Params<T> &g) {
  double s = 0.0;
  g.for_each([&](const std::string &, const Mat<T> &m, ParamKind) {
    s += m.template cast<double>().squaredNorm();
  });
  return std::sqrt(s);
}

/// Scale gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
template <typename T> double clip_grad_norm(Params<T> &g, double max_norm) {
  const double n = grad_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const T scale = static_cast<T>(max_norm / n);
    g.for_each([&](const std::string &, Mat<T> &m, ParamKind) { m *= scale; });
  }
  return n;
}

// ---------------------------------------------------------------------------
// Training loop

/// A tweet ready for the network.
struct Example {
  std::string id;
  std::vector<TokenId> ids;
  depgraph::NormalizedAdjacency adjacency;
  std::size_t label = 0;
};

inline std::vector<Input> as_inputs(const std::vector<Example> &xs) {
  std::vector<Input> in;
  in.reserve(xs.size());
  for (const auto &x : xs)
    in.push_back({x.ids, &x.adjacency});
  return in;
}

struct TrainHistory {
  std::vector<double> train_loss, dev_loss, dev_wf1, lr;
  std::size_t best_epoch = 0; ///< 1-based; 0 before any epoch

  std::size_t epochs() const { return train_loss.size(); }

  std::string to_csv() const {
    std::string out = "epoch,train_loss,dev_loss,dev_wf1,lr\n";
    for (std::size_t e = 0; e < epochs(); ++e)
      out += fmt::format("{},{:.6f},{:.6f},{:.4f},{:.8e}\n", e + 1, train_loss[e], dev_loss[e],
                         dev_wf1[e], lr[e]);
    return out;
  }
};

/// Reject examples whose graph and token sequence disagree, naming them.
inline void check_alignment(const std::vector<Example> &xs, std::size_t max_len,
                            const char *which) {
  std::vector<std::string> bad;
  for (const auto &x : xs) {
    std::size_t len = 0;
    while (len < x.ids.size() && x.ids[len] != kPad)
      ++len;
    if (len == 0 || len > max_len || x.adjacency.n() != len)
      bad.push_back(x.id);
  }
  if (!bad.empty()) {
    std::string list;
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i)
      list += (i ? ", " : "") + bad[i];
    if (bad.size() > 20)
      list += fmt::format(" (+{} more)", bad.size() - 20);
    throw AlignmentError(fmt::format("{} {} example(s) have misaligned graphs: {}", bad.size(),
                                     which, list));
  }
}

template <typename T> struct DevScore {
  double loss = 0.0;
  double wf1 = 0.0;
};

/// Eval-mode loss and weighted F1 (percent) over a set of examples.
template <typename T>
DevScore<T> score(const SyLSTM<T> &m, const std::vector<Example> &xs,
                  const std::vector<std::string> &classes, std::size_t chunk = 64) {
  require(!xs.empty(), "cannot score an empty example set");
  const auto inputs = as_inputs(xs);
  std::vector<std::size_t> gold, pred;
  double loss = 0.0;
  for (std::size_t i = 0; i < inputs.size(); i += chunk) {
    const std::size_t len = std::min(chunk, inputs.size() - i);
    const auto tr = forward_batch(m, std::span<const Input>(inputs).subspan(i, len), Mode::Eval);
    for (std::size_t b = 0; b < len; ++b) {
      const auto row = tr.probabilities.row(static_cast<Eigen::Index>(b));
      gold.push_back(xs[i + b].label);
      pred.push_back(argmax(row));
      loss += cross_entropy(row, xs[i + b].label);
    }
  }
  return {loss / static_cast<double>(xs.size()),
          eval::weighted_metrics(gold, pred, classes).f1};
}

template <typename T> struct TrainResult {
  SyLSTM<T> best;       ///< parameters after the best dev epoch
  SyLSTM<T> last;       ///< parameters after the final epoch
  AdamState<T> optimizer;
  TrainHistory history;
};

/**
 * Mini-batch training with a seeded shuffle per epoch and a cosine schedule
 * over all steps. After each epoch the dev set is scored in eval mode; the
 * epoch with the highest dev weighted F1 is kept (earliest on ties).
 * `on_epoch(epoch, history)` is called after each epoch if given.
 */
template <typename T>
TrainResult<T> train(SyLSTM<T> model, const TrainConfig &cfg, const std::vector<Example> &train_set,
                     const std::vector<Example> &dev_set, const std::vector<std::string> &classes,
                     const std::function<void(std::size_t, const TrainHistory &)> &on_epoch = {}) {
  require(cfg.epochs >= 1, "training needs at least one epoch");
  cfg.validate();
  if (train_set.empty() || dev_set.empty())
    throw PreconditionError("training needs non-empty train and dev sets");
  check_alignment(train_set, model.config.max_len, "train");
  check_alignment(dev_set, model.config.max_len, "dev");
  for (const auto *set : {&train_set, &dev_set})
    for (const auto &x : *set)
      if (x.label >= model.config.n_classes)
        throw PreconditionError("example " + x.id + " has a label outside the class range");

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng = shuffle_rng.fork();
  const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const AdamOptions opt{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.coupled_l2,
                        model.embedding_trainable};

  TrainResult<T> res{model, model, AdamState<T>::like(model.params), {}};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t seen = 0;
    double lr = cfg.lr0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      std::vector<Input> batch;
      std::vector<std::size_t> gold;
      for (std::size_t k = 0; k < len; ++k) {
        const auto &x = train_set[order[start + k]];
        batch.push_back({x.ids, &x.adjacency});
        gold.push_back(x.label);
      }
      const auto tr = forward_batch(model, std::span<const Input>(batch), Mode::Train, &dropout_rng);
      loss_sum += batch_cross_entropy(tr.probabilities, gold) * static_cast<double>(len);
      seen += len;
      auto grads = backward(model, tr, cross_entropy_grad(tr.probabilities, gold));
      if (cfg.clip_norm > 0.0)
        clip_grad_norm(grads, cfg.clip_norm);
      lr = cosine_lr(step, total, cfg.lr0);
      const StepStatus st =
        adamw_step(model.params, grads, res.optimizer, lr, cfg.weight_decay, opt);
      if (st.applied)
        update_running_stats(model, tr);
      else
        spdlog::warn("epoch {} step {}: {}", epoch, step, st.diagnostic);
    }
    const auto dev = score(model, dev_set, classes);
    auto &h = res.history;
    h.train_loss.push_back(loss_sum / static_cast<double>(seen));
    h.dev_loss.push_back(dev.loss);
    h.dev_wf1.push_back(dev.wf1);
    h.lr.push_back(lr);
    if (dev.wf1 > best) {
      best = dev.wf1;
      h.best_epoch = epoch;
      res.best = model;
    }
    spdlog::info("epoch {:>3}  train loss {:.4f}  dev loss {:.4f}  dev wF1 {:.2f}  lr {:.2e}",
                 epoch, h.train_loss.back(), dev.loss, dev.wf1, lr);
    if (on_epoch)
      on_epoch(epoch, res.history);
  }
  res.last = std::move(model);
  return res;
}

} // namespace sylstm
