// SPDX-License-Identifier: Apache-2.0
/**
 * @file   eval.hpp
 * @brief  Weighted precision/recall/F1, comparison tables, the unigram
 *         linear SVM baseline and the paired t-test.
 */
#pragma once

#include "sylstm/common.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

namespace sylstm::eval {

struct ClassMetrics {
  double precision = 0.0; ///< percent
  double recall = 0.0;    ///< percent
  double f1 = 0.0;        ///< percent
  std::size_t support = 0;
};

/**
 * Per-class and support-weighted scores. Percentages are stored unrounded;
 * rounding to one decimal happens only when formatting. A metric whose
 * denominator is zero counts as 0.
 */
struct EvalReport {
  std::string task;
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion; ///< [gold][predicted]
  std::size_t n = 0;

  nlohmann::json to_json() const {
    nlohmann::json pc = nlohmann::json::array();
    for (std::size_t c = 0; c < classes.size(); ++c)
      pc.push_back({{"class", classes[c]},
                    {"precision", per_class[c].precision},
                    {"recall", per_class[c].recall},
                    {"f1", per_class[c].f1},
                    {"support", per_class[c].support}});
    return {{"task", task},
            {"n", n},
            {"classes", classes},
            {"per_class", pc},
            {"weighted", {{"precision", precision}, {"recall", recall}, {"f1", f1}}},
            {"confusion", confusion}};
  }
};

inline double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

inline EvalReport weighted_metrics(const std::vector<std::size_t> &gold,
                                   const std::vector<std::size_t> &pred,
                                   const std::vector<std::string> &classes,
                                   std::string task = {}) {
  if (gold.empty())
    throw PreconditionError("cannot score an empty prediction set");
  if (gold.size() != pred.size())
    throw PreconditionError("gold and predicted label counts differ");
  const std::size_t k = classes.size();
  EvalReport r;
  r.task = std::move(task);
  r.classes = classes;
  r.n = gold.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= k || pred[i] >= k)
      throw PreconditionError("label index outside the class list");
    ++r.confusion[gold[i]][pred[i]];
  }
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = r.confusion[c][c], gold_c = 0, pred_c = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gold_c += r.confusion[c][j];
      pred_c += r.confusion[j][c];
    }
    const double p = safe_div(static_cast<double>(tp), static_cast<double>(pred_c));
    const double rc = safe_div(static_cast<double>(tp), static_cast<double>(gold_c));
    auto &m = r.per_class[c];
    m.support = gold_c;
    m.precision = 100.0 * p;
    m.recall = 100.0 * rc;
    m.f1 = 100.0 * safe_div(2.0 * p * rc, p + rc);
    const double w = static_cast<double>(gold_c) / static_cast<double>(r.n);
    r.precision += w * m.precision;
    r.recall += w * m.recall;
    r.f1 += w * m.f1;
  }
  return r;
}

/// Predict `label` for every example.
inline EvalReport trivial_baseline(const std::vector<std::string> &classes, std::size_t label,
                                   const std::vector<std::size_t> &gold, std::string task = {}) {
  if (label >= classes.size())
    throw PreconditionError("trivial label outside the class list");
  return weighted_metrics(gold, std::vector<std::size_t>(gold.size(), label), classes,
                          std::move(task));
}

// ---------------------------------------------------------------------------
// Tables

struct ResultRow {
  std::string system;
  double precision = 0.0, recall = 0.0, f1 = 0.0; ///< percent
};

inline ResultRow row_of(std::string system, const EvalReport &r) {
  return {std::move(system), r.precision, r.recall, r.f1};
}

inline std::vector<ResultRow> trivial_rows(const std::vector<std::string> &classes,
                                           const std::vector<std::size_t> &gold) {
  std::vector<ResultRow> rows;
  for (std::size_t c = 0; c < classes.size(); ++c)
    rows.push_back(row_of("All " + classes[c], trivial_baseline(classes, c, gold)));
  return rows;
}

/// Aligned text table, one decimal.
inline std::string format_table(const std::vector<ResultRow> &rows) {
  std::size_t w = 6;
  for (const auto &r : rows)
    w = std::max(w, r.system.size());
  std::string out = fmt::format("{:<{}}  {:>9}  {:>6}  {:>6}\n", "System", w, "Precision",
                                "Recall", "F1");
  for (const auto &r : rows)
    out += fmt::format("{:<{}}  {:>9.1f}  {:>6.1f}  {:>6.1f}\n", r.system, w, r.precision,
                       r.recall, r.f1);
  return out;
}

inline std::string format_csv(const std::vector<ResultRow> &rows) {
  std::string out = "system,precision,recall,f1\n";
  for (const auto &r : rows) {
    std::string name = r.system;
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : name)
        q += c == '"' ? std::string("\"\"") : std::string(1, c);
      name = q + "\"";
    }
    out += fmt::format("{},{:.1f},{:.1f},{:.1f}\n", name, r.precision, r.recall, r.f1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear SVM on unigram counts

struct SvmOptions {
  std::vector<double> c_grid{0.01, 0.1, 1.0, 10.0};
  std::size_t iterations = 600;
};

/**
 * One-vs-rest linear SVM over L2-normalized unigram counts plus a constant
 * bias feature. Each binary problem minimizes
 *
 *   (lambda / 2) |w|^2 + mean_i max(0, 1 - y_i (w . x_i)),   lambda = 1 / C,
 *
 * by full-batch subgradient descent with step 1 / (lambda t), averaging the
 * iterates of the second half. The procedure is deterministic.
 */
class SvmModel {
public:
  using Sparse = std::vector<std::pair<std::size_t, double>>;

  SvmModel() = default;

  std::size_t n_features() const { return vocab_.size(); }
  std::size_t n_classes() const { return weights_.size(); }
  double c() const { return c_; }
  const std::vector<std::vector<double>> &weights() const { return weights_; }
  const std::vector<double> &biases() const { return biases_; }

  Sparse featurize(const std::vector<std::string> &tokens) const {
    std::map<std::size_t, double> counts;
    for (const auto &t : tokens) {
      auto it = vocab_.find(t);
      if (it != vocab_.end())
        counts[it->second] += 1.0;
    }
    double norm = 0.0;
    for (const auto &[_, v] : counts)
      norm += v * v;
    norm = std::sqrt(norm);
    Sparse x(counts.begin(), counts.end());
    if (norm > 0)
      for (auto &[_, v] : x)
        v /= norm;
    return x;
  }

  std::vector<double> scores(const std::vector<std::string> &tokens) const {
    const Sparse x = featurize(tokens);
    std::vector<double> s(weights_.size());
    for (std::size_t c = 0; c < weights_.size(); ++c) {
      double v = biases_[c];
      for (const auto &[j, xv] : x)
        v += weights_[c][j] * xv;
      s[c] = v;
    }
    return s;
  }

  /// Highest one-vs-rest score; ties go to the lowest class index.
  std::size_t predict(const std::vector<std::string> &tokens) const {
    const auto s = scores(tokens);
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.size(); ++c)
      if (s[c] > s[best])
        best = c;
    return best;
  }

  std::vector<std::size_t> predict(const std::vector<std::vector<std::string>> &docs) const {
    std::vector<std::size_t> out;
    out.reserve(docs.size());
    for (const auto &d : docs)
      out.push_back(predict(d));
    return out;
  }

  /// Fit at a single C.
  static SvmModel fit(const std::vector<std::vector<std::string>> &docs,
                      const std::vector<std::size_t> &labels, std::size_t n_classes, double c,
                      std::size_t iterations) {
    if (docs.size() != labels.size() || docs.empty())
      throw PreconditionError("SVM training needs one label per non-empty document list");
    if (!(c > 0.0))
      throw PreconditionError("SVM C must be positive");
    std::vector<bool> present(n_classes, false);
    for (auto y : labels) {
      if (y >= n_classes)
        throw PreconditionError("SVM label outside the class range");
      present[y] = true;
    }
    if (std::count(present.begin(), present.end(), true) < 2)
      throw PreconditionError("SVM training set contains a single class");

    SvmModel m;
    m.c_ = c;
    for (const auto &d : docs)
      for (const auto &t : d)
        m.vocab_.emplace(t, m.vocab_.size());
    std::vector<Sparse> xs;
    xs.reserve(docs.size());
    for (const auto &d : docs)
      xs.push_back(m.featurize(d));

    const double lambda = 1.0 / c;
    const std::size_t dim = m.vocab_.size();
    const double n = static_cast<double>(docs.size());
    const std::size_t avg_from = iterations / 2 + 1;
    m.weights_.assign(n_classes, std::vector<double>(dim, 0.0));
    m.biases_.assign(n_classes, 0.0);
    std::vector<double> w(dim), g(dim), w_avg(dim);
    for (std::size_t k = 0; k < n_classes; ++k) {
      std::fill(w.begin(), w.end(), 0.0);
      std::fill(w_avg.begin(), w_avg.end(), 0.0);
      double b = 0.0, b_avg = 0.0;
      std::size_t averaged = 0;
      for (std::size_t t = 1; t <= iterations; ++t) {
        std::fill(g.begin(), g.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          const double y = labels[i] == k ? 1.0 : -1.0;
          double margin = b;
          for (const auto &[j, xv] : xs[i])
            margin += w[j] * xv;
          if (y * margin < 1.0) {
            for (const auto &[j, xv] : xs[i])
              g[j] += y * xv;
            gb += y;
          }
        }
        const double eta = 1.0 / (lambda * static_cast<double>(t));
        const double shrink = 1.0 - eta * lambda;
        for (std::size_t j = 0; j < dim; ++j)
          w[j] = shrink * w[j] + eta * g[j] / n;
        b = shrink * b + eta * gb / n;
        if (t >= avg_from) {
          ++averaged;
          const double a = 1.0 / static_cast<double>(averaged);
          for (std::size_t j = 0; j < dim; ++j)
            w_avg[j] += a * (w[j] - w_avg[j]);
          b_avg += a * (b - b_avg);
        }
      }
      m.weights_[k] = w_avg;
      m.biases_[k] = b_avg;
    }
    return m;
  }

private:
  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<std::vector<double>> weights_;
  std::vector<double> biases_;
  double c_ = 1.0;
};

struct SvmSelection {
  SvmModel model;
  std::vector<std::pair<double, double>> dev_scores; ///< (C, dev weighted F1)
};

/// Grid search over C by dev weighted F1; ties keep the earlier grid value.
inline SvmSelection svm_baseline(const std::vector<std::vector<std::string>> &train_docs,
                                 const std::vector<std::size_t> &train_labels,
                                 const std::vector<std::vector<std::string>> &dev_docs,
                                 const std::vector<std::size_t> &dev_labels,
                                 const std::vector<std::string> &classes,
                                 const SvmOptions &opt = {}) {
  if (opt.c_grid.empty())
    throw PreconditionError("empty C grid");
  SvmSelection sel;
  double best = -1.0;
  for (double c : opt.c_grid) {
    SvmModel m = SvmModel::fit(train_docs, train_labels, classes.size(), c, opt.iterations);
    const double f1 = weighted_metrics(dev_labels, m.predict(dev_docs), classes).f1;
    sel.dev_scores.emplace_back(c, f1);
    if (f1 > best) {
      best = f1;
      sel.model = std::move(m);
    }
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Paired t-test

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t dof = 0;
  bool degenerate = false; ///< zero variance of the differences
};

/**
 * Two-sided paired Student t-test on a[i] - b[i]. With zero variance the
 * statistic is 0 (all differences zero, p = 1) or +/-infinity (p = 0), and
 * `degenerate` is set.
 */
inline TTestResult paired_t_test(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size() || a.size() < 2)
    throw PreconditionError("paired t-test needs two equal-length lists of at least 2 scores");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i)
    d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d)
    ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(n - 1);
  TTestResult r;
  r.dof = n - 1;
  if (var == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(r.dof));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

} // namespace sylstm::eval
