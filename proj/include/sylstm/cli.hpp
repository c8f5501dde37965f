// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  The `sylstm` command line: prep, train, eval, predict, baseline
 *         and params.
 *
 * Run settings come from a key-value file (`key = value`, full-line `#`
 * comments, relative paths resolved against the file's directory) and can
 * each be overridden with `--key value`. Exit status: 0 success, 1 invalid
 * configuration or arguments, 2 I/O or malformed input data, 3 artifact
 * integrity (checkpoint damage, vocabulary mismatch), 4 tweet/parse
 * alignment.
 */
#pragma once

#include "sylstm/checkpoint.hpp"
#include "sylstm/corpus.hpp"
#include "sylstm/eval.hpp"
#include "sylstm/pipeline.hpp"
#include "sylstm/textprep.hpp"
#include "sylstm/train.hpp"

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace sylstm::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kIoError = 2,
  kIntegrityError = 3,
  kAlignmentError = 4,
};

struct Key {
  std::string name;
  std::string fallback;
  std::string help;
  bool is_path = false;
};

/// Every run setting with its default.
inline const std::vector<Key> &run_keys() {
  static const std::vector<Key> keys = {
    {"dataset", "olid", "olid or davidson"},
    {"task", "A", "A, B, C (olid) or D3 (davidson)"},
    {"data", "", "training pool: OLID training TSV or Davidson CSV", true},
    {"test_tweets", "", "OLID test tweets TSV (id, tweet)", true},
    {"test_labels", "", "OLID test gold labels CSV (id, label)", true},
    {"parses", "", "CoNLL-U parses of the cleaned training pool", true},
    {"test_parses", "", "CoNLL-U parses of the cleaned OLID test tweets", true},
    {"embeddings", "random", "random or glove"},
    {"glove", "", "GloVe text file used when embeddings = glove", true},
    {"freeze_embeddings", "false", "keep the embedding table fixed"},
    {"output", "", "output directory for artifacts", true},
    {"checkpoint", "", "checkpoint for eval (default <output>/model.ckpt)", true},
    {"vocab", "", "vocabulary dump for eval (default <output>/vocab.json)", true},
    {"vocab_size", "30000", "most frequent training tokens kept"},
    {"dev_fraction", "0.1", "stratified dev share of the training pool"},
    {"test_fraction", "0.1", "held-out test share when no test files are given"},
    {"seed", "13", "seed for splits, initialization, shuffling and dropout"},
    {"alpha", "1", "dependency edge weight"},
    {"d_w", "200", "embedding width"},
    {"lstm_hidden", "32", "BiLSTM units per direction"},
    {"lstm_layers", "2", "stacked BiLSTM layers"},
    {"lstm_dropout", "0.4", "dropout between BiLSTM layers"},
    {"bn_momentum", "0.6", "batch-norm running-statistics momentum"},
    {"gcn_out", "32", "GCN output width"},
    {"gcn_dropout", "0.5", "dropout after the GCN batch norm"},
    {"ffnn_out", "32", "FFNN output width"},
    {"max_len", "64", "tokens kept per tweet"},
    {"pooling", "mean", "node pooling: mean or max"},
    {"lr0", "0.001", "initial learning rate"},
    {"weight_decay", "0.1", "AdamW weight decay"},
    {"coupled_l2", "false", "use an L2 gradient term instead of decoupled decay"},
    {"epochs", "30", "training epochs"},
    {"batch_size", "32", "mini-batch size"},
    {"clip_norm", "5", "global gradient-norm clip (0 disables)"},
    {"svm_c_grid", "0.01,0.1,1,10", "comma-separated SVM C values"},
    {"svm_iterations", "600", "SVM subgradient iterations"},
  };
  return keys;
}

using Settings = std::map<std::string, std::string>;

inline const Key *find_key(const std::string &name) {
  for (const auto &k : run_keys())
    if (k.name == name)
      return &k;
  return nullptr;
}

/// Parse a `key = value` file; relative paths become relative to its folder.
inline Settings read_config_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config file " + path.string());
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    text::strip_cr(line);
    const auto t = text::trim(line);
    if (t.empty() || t[0] == '#')
      continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", path.string(), lineno));
    const std::string key(text::trim(t.substr(0, eq)));
    std::string value(text::trim(t.substr(eq + 1)));
    const Key *k = find_key(key);
    if (!k)
      throw ConfigError(fmt::format("{}:{}: unknown key '{}'", path.string(), lineno, key));
    if (k->is_path && !value.empty() && fs::path(value).is_relative())
      value = (path.parent_path() / value).lexically_normal().string();
    s[key] = value;
  }
  return s;
}

struct RunConfig {
  std::string dataset;
  corpus::Task task = corpus::Task::A;
  fs::path data, test_tweets, test_labels, parses, test_parses, glove, output, checkpoint, vocab;
  bool glove_embeddings = false;
  bool freeze_embeddings = false;
  std::size_t vocab_size = kDefaultVocabSize;
  double dev_fraction = 0.1, test_fraction = 0.1;
  std::uint64_t seed = 13;
  double alpha = 1.0;
  ModelConfig model;
  TrainConfig train;
  eval::SvmOptions svm;
  Settings settings; ///< resolved key/value pairs, for the artifact record

  bool has_test_files() const { return !test_tweets.empty(); }
  const std::vector<std::string> &classes() const { return corpus::labels(task); }
};

/// What a command needs beyond the model settings.
struct Needs {
  bool data = false;
  bool parses = false;
  bool output = false;
};

namespace detail {

class Reader {
public:
  Reader(const Settings &s, std::vector<std::string> &errors, std::vector<std::string> &missing)
      : s_(s), errors_(errors), missing_(missing) {}

  std::string str(const std::string &k) const { return s_.at(k); }

  std::size_t size(const std::string &k) const {
    const auto &v = s_.at(k);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      errors_.push_back(fmt::format("{}: '{}' is not a non-negative integer", k, v));
    return out;
  }

  double real(const std::string &k) const {
    const auto &v = s_.at(k);
    char *end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out))
      errors_.push_back(fmt::format("{}: '{}' is not a number", k, v));
    return out;
  }

  bool flag(const std::string &k) const {
    const auto v = text::to_lower(s_.at(k));
    if (v == "true" || v == "1" || v == "yes")
      return true;
    if (v == "false" || v == "0" || v == "no")
      return false;
    errors_.push_back(fmt::format("{}: '{}' is not true/false", k, s_.at(k)));
    return false;
  }

  fs::path file(const std::string &k, bool required) const {
    const auto &v = s_.at(k);
    if (v.empty()) {
      if (required)
        errors_.push_back(k + " is required");
      return {};
    }
    if (!fs::exists(v))
      missing_.push_back(fmt::format("{}: no such file '{}'", k, v));
    return v;
  }

private:
  const Settings &s_;
  std::vector<std::string> &errors_;
  std::vector<std::string> &missing_;
};

inline std::string join_errors(const std::vector<std::string> &errors) {
  std::string out = "invalid configuration:";
  for (const auto &e : errors)
    out += "\n  - " + e;
  return out;
}

} // namespace detail

/**
 * Validate settings (defaults filled in) and turn them into a RunConfig.
 * Every problem is collected and reported together.
 */
inline RunConfig resolve(Settings given, Needs needs) {
  Settings s;
  for (const auto &k : run_keys())
    s[k.name] = k.fallback;
  for (auto &[k, v] : given) {
    if (!find_key(k))
      throw ConfigError("unknown key '" + k + "'");
    s[k] = v;
  }
  std::vector<std::string> errors, missing;
  detail::Reader r(s, errors, missing);
  RunConfig c;
  c.settings = s;

  c.dataset = s["dataset"];
  if (c.dataset != "olid" && c.dataset != "davidson")
    errors.push_back("dataset must be olid or davidson, got '" + c.dataset + "'");
  try {
    c.task = corpus::parse_task(s["task"]);
    const bool olid_task = c.task != corpus::Task::D3;
    if (c.dataset == "olid" && !olid_task)
      errors.push_back("task D3 belongs to the davidson dataset");
    if (c.dataset == "davidson" && olid_task)
      errors.push_back("task " + s["task"] +
                       " is part of the OLID hierarchy and does not exist for davidson");
  } catch (const ConfigError &e) {
    errors.push_back(e.what());
  }

  c.data = r.file("data", needs.data);
  c.test_tweets = r.file("test_tweets", false);
  c.test_labels = r.file("test_labels", false);
  if (c.test_tweets.empty() != c.test_labels.empty())
    errors.push_back("test_tweets and test_labels must be given together");
  if (c.dataset == "davidson" && !c.test_tweets.empty())
    errors.push_back("davidson has no separate test files; its test set is held out");
  c.parses = r.file("parses", needs.parses);
  c.test_parses = r.file("test_parses", needs.parses && !c.test_tweets.empty());

  const auto emb = s["embeddings"];
  if (emb != "random" && emb != "glove")
    errors.push_back("embeddings must be random or glove, got '" + emb + "'");
  c.glove_embeddings = emb == "glove";
  c.glove = r.file("glove", c.glove_embeddings);
  c.freeze_embeddings = r.flag("freeze_embeddings");

  if (needs.output && s["output"].empty())
    errors.push_back("output is required");
  c.output = s["output"];
  c.checkpoint = s["checkpoint"].empty() ? c.output / "model.ckpt" : fs::path(s["checkpoint"]);
  c.vocab = s["vocab"].empty() ? c.output / "vocab.json" : fs::path(s["vocab"]);

  c.vocab_size = r.size("vocab_size");
  if (c.vocab_size < 1)
    errors.push_back("vocab_size must be at least 1");
  c.dev_fraction = r.real("dev_fraction");
  c.test_fraction = r.real("test_fraction");
  if (!(c.dev_fraction > 0 && c.dev_fraction < 1) || !(c.test_fraction > 0 && c.test_fraction < 1))
    errors.push_back("dev_fraction and test_fraction must lie in (0, 1)");
  c.seed = r.size("seed");
  c.alpha = r.real("alpha");
  if (!(c.alpha > 0))
    errors.push_back("alpha must be positive");

  auto &m = c.model;
  m.d_w = r.size("d_w");
  m.lstm_hidden = r.size("lstm_hidden");
  m.lstm_layers = r.size("lstm_layers");
  m.lstm_dropout = r.real("lstm_dropout");
  m.bn_momentum = r.real("bn_momentum");
  m.gcn_out = r.size("gcn_out");
  m.gcn_dropout = r.real("gcn_dropout");
  m.ffnn_out = r.size("ffnn_out");
  m.max_len = r.size("max_len");
  try {
    m.pooling = parse_pooling(s["pooling"]);
  } catch (const ConfigError &e) {
    errors.push_back(e.what());
  }
  m.n_classes = corpus::labels(c.task).size();

  auto &t = c.train;
  t.lr0 = r.real("lr0");
  t.weight_decay = r.real("weight_decay");
  t.coupled_l2 = r.flag("coupled_l2");
  t.epochs = r.size("epochs");
  t.batch_size = r.size("batch_size");
  t.clip_norm = r.real("clip_norm");
  t.seed = c.seed;

  c.svm.c_grid.clear();
  for (const auto &part : text::split(s["svm_c_grid"], ',')) {
    const auto v = std::string(text::trim(part));
    char *end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !(x > 0))
      errors.push_back("svm_c_grid: '" + v + "' is not a positive number");
    else
      c.svm.c_grid.push_back(x);
  }
  c.svm.iterations = r.size("svm_iterations");
  if (c.svm.iterations < 1)
    errors.push_back("svm_iterations must be at least 1");

  if (errors.empty()) {
    for (auto check : {+[](const RunConfig &x) { x.model.validate(); },
                       +[](const RunConfig &x) { x.train.validate(); }}) {
      try {
        check(c);
      } catch (const ConfigError &e) {
        errors.push_back(e.what());
      }
    }
  }
  // Invalid settings outrank absent files.
  if (!errors.empty())
    throw ConfigError(detail::join_errors(errors));
  if (!missing.empty())
    throw IoError(detail::join_errors(missing));
  return c;
}

// ---------------------------------------------------------------------------
// Data assembly shared by train, eval and baseline

struct Data {
  corpus::DatasetSplit split;
  std::vector<corpus::LabeledExample> pool;      ///< the training file
  std::vector<corpus::LabeledExample> test_file; ///< OLID test files, if given
};

/// Load the dataset and split it (or re-apply a saved manifest).
inline Data load_split(const RunConfig &c, const nlohmann::json *manifest = nullptr) {
  Data d;
  if (c.dataset == "olid") {
    d.pool = corpus::load_olid(c.data, c.task);
    if (c.has_test_files())
      d.test_file = corpus::load_olid_test(c.test_tweets, c.test_labels, c.task);
  } else {
    d.pool = corpus::load_davidson(c.data);
  }
  if (manifest) {
    auto all = d.pool;
    all.insert(all.end(), d.test_file.begin(), d.test_file.end());
    d.split = corpus::apply_manifest(*manifest, all);
  } else if (c.has_test_files()) {
    d.split = corpus::make_split(d.pool, c.task, c.dev_fraction, c.seed, d.test_file);
  } else {
    d.split = corpus::make_split(d.pool, c.task, c.dev_fraction, c.seed,
                                 corpus::HeldOut{c.test_fraction});
  }
  return d;
}

using ParseIndex = std::unordered_map<std::string, depgraph::DependencyParse>;

/// Parses of the training file and the OLID test file, by example id.
inline ParseIndex load_parses(const RunConfig &c, const Data &d) {
  ParseIndex idx;
  auto add = [&](const std::vector<corpus::LabeledExample> &xs, const fs::path &file) {
    if (xs.empty())
      return;
    auto parses = pipeline::attach_parses(xs, depgraph::read_conllu(file));
    for (std::size_t i = 0; i < xs.size(); ++i)
      idx.emplace(xs[i].id, std::move(parses[i]));
  };
  add(d.pool, c.parses);
  add(d.test_file, c.test_parses);
  return idx;
}

inline std::vector<depgraph::DependencyParse>
parses_for(const std::vector<corpus::LabeledExample> &xs, const ParseIndex &idx) {
  std::vector<depgraph::DependencyParse> out;
  std::vector<std::string> missing;
  for (const auto &x : xs) {
    auto it = idx.find(x.id);
    if (it == idx.end())
      missing.push_back(x.id);
    else
      out.push_back(it->second);
  }
  if (!missing.empty())
    throw AlignmentError(fmt::format("{} example(s) have no parse, first: {}", missing.size(),
                                     missing.front()));
  return out;
}

inline void write_text(const fs::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << content;
  if (!out)
    throw IoError("short write to " + path.string());
}

inline nlohmann::json read_json(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline std::string timestamp() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}", fmt::localtime(std::time(nullptr)));
}

// ---------------------------------------------------------------------------
// Commands

/// Clean one tweet per line; blank lines stay blank.
inline int cmd_prep(const fs::path &in_path, const fs::path &out_path,
                    const fs::path &resources = textprep::resource_dir()) {
  std::ifstream in(in_path);
  if (!in)
    throw IoError("cannot open " + in_path.string());
  const auto prep = textprep::Preprocessor::from_resources(resources);
  std::string out, line;
  while (std::getline(in, line)) {
    text::strip_cr(line);
    if (!text::trim(line).empty())
      out += prep(line).text;
    out += '\n';
  }
  write_text(out_path, out);
  return kOk;
}

/// Print the trainable parameter count per block and in total.
inline int cmd_params(const RunConfig &c, std::ostream &os = std::cout) {
  EmbeddingMatrix<float> emb;
  emb.values = Mat<float>::Zero(static_cast<Eigen::Index>(c.vocab_size + 2),
                                static_cast<Eigen::Index>(c.model.d_w));
  const auto m = init_params(c.model, emb, c.seed);
  std::size_t total = 0;
  for (const auto &[name, n] : parameter_breakdown(m.params)) {
    os << fmt::format("{:<12} {:>12}\n", name, n);
    total += n;
  }
  os << fmt::format("{:<12} {:>12}\n", "total", total);
  return kOk;
}

inline int cmd_train(const RunConfig &c, std::ostream &os = std::cout) {
  // Everything that can fail on input is done before the output directory
  // is touched.
  const Data d = load_split(c);
  const ParseIndex idx = load_parses(c, d);
  const auto train_parses = parses_for(d.split.train, idx);
  const auto dev_parses = parses_for(d.split.dev, idx);

  std::vector<std::vector<std::string>> corpus_tokens;
  for (const auto &p : train_parses)
    corpus_tokens.push_back(pipeline::tokens_of(p, c.model.max_len));
  const Vocabulary vocab = Vocabulary::build(corpus_tokens, c.vocab_size);

  EmbeddingMatrix<float> emb = c.glove_embeddings
                                 ? load_glove<float>(c.glove, vocab, c.model.d_w, c.seed + 1).embedding
                                 : random_embeddings<float>(vocab, c.model.d_w, c.seed + 1);
  emb.trainable = !c.freeze_embeddings;
  auto model = init_params(c.model, emb, c.seed + 2);
  std::size_t total = 0;
  for (const auto &[name, n] : parameter_breakdown(model.params)) {
    spdlog::info("parameters {:<12} {:>10}", name, n);
    total += n;
  }
  spdlog::info("trainable parameters: {}", total);

  const auto train_set =
    pipeline::make_examples(d.split.train, train_parses, vocab, c.task, c.model.max_len, c.alpha);
  const auto dev_set =
    pipeline::make_examples(d.split.dev, dev_parses, vocab, c.task, c.model.max_len, c.alpha);
  check_alignment(train_set, c.model.max_len, "train");
  check_alignment(dev_set, c.model.max_len, "dev");

  fs::create_directories(c.output);
  const std::string started = timestamp();
  write_text(c.output / "vocab.json", vocab.to_json().dump(1) + "\n");
  write_text(c.output / "split.json", corpus::manifest(d.split).dump(1) + "\n");
  write_text(c.output / "config.json", nlohmann::json(c.settings).dump(1) + "\n");

  auto result = train(std::move(model), c.train, train_set, dev_set, c.classes());
  const auto &h = result.history;
  write_text(c.output / "history.csv", h.to_csv());

  checkpoint::Metadata meta;
  meta.vocab_hash = vocab.hash();
  meta.task = corpus::task_name(c.task);
  meta.classes = c.classes();
  meta.seed = c.seed;
  meta.extra = {{"alpha", c.alpha}};
  meta.epoch = h.best_epoch;
  meta.dev_wf1 = h.dev_wf1[h.best_epoch - 1];
  checkpoint::save(c.output / "model.ckpt", result.best, meta);
  meta.epoch = h.epochs();
  meta.dev_wf1 = h.dev_wf1.back();
  meta.optimizer_step = result.optimizer.step;
  checkpoint::save(c.output / "last.ckpt", result.last, meta, &result.optimizer.m,
                   &result.optimizer.v);
  write_text(c.output / "run.log",
             fmt::format("started {}\nfinished {}\ntrain {} dev {} test {}\nparameters {}\n",
                         started, timestamp(), d.split.train.size(), d.split.dev.size(),
                         d.split.test.size(), total));

  os << fmt::format("best dev weighted F1: {:.1f} (epoch {} of {})\n",
                    h.dev_wf1[h.best_epoch - 1], h.best_epoch, h.epochs());
  return kOk;
}

/// Load a checkpoint and the vocabulary it was trained with.
inline std::pair<checkpoint::Contents<float>, Vocabulary> load_model(const fs::path &ckpt,
                                                                      const fs::path &vocab_path) {
  auto contents = checkpoint::load<float>(ckpt);
  const Vocabulary vocab = Vocabulary::from_json(read_json(vocab_path));
  if (vocab.hash() != contents.meta.vocab_hash)
    throw IntegrityError("vocabulary " + vocab_path.string() +
                         " does not match the checkpoint's vocabulary hash");
  if (vocab.size() != contents.model.vocab_size())
    throw IntegrityError("vocabulary size does not match the checkpoint's embedding table");
  return {std::move(contents), vocab};
}

inline int cmd_eval(const RunConfig &c, std::ostream &os = std::cout) {
  auto [contents, vocab] = load_model(c.checkpoint, c.vocab);
  if (contents.meta.task != corpus::task_name(c.task))
    throw ConfigError("checkpoint was trained for task " + contents.meta.task);
  const fs::path manifest_path = c.output / "split.json";
  std::optional<nlohmann::json> manifest;
  if (fs::exists(manifest_path))
    manifest = read_json(manifest_path);
  const Data d = load_split(c, manifest ? &*manifest : nullptr);
  const ParseIndex idx = load_parses(c, d);
  const auto &test = d.split.test;
  if (test.empty())
    throw PreconditionError("the test partition is empty");
  const double alpha = contents.meta.extra.value("alpha", 1.0);
  const auto examples = pipeline::make_examples(test, parses_for(test, idx), vocab, c.task,
                                                contents.model.config.max_len, alpha);
  check_alignment(examples, contents.model.config.max_len, "test");
  const auto inputs = as_inputs(examples);
  const auto pred = predict_batch(contents.model, std::span<const Input>(inputs));
  std::vector<std::size_t> gold;
  for (const auto &x : examples)
    gold.push_back(x.label);
  const auto report = eval::weighted_metrics(gold, pred, c.classes(), corpus::task_name(c.task));

  std::vector<eval::ResultRow> rows = eval::trivial_rows(c.classes(), gold);
  rows.push_back(eval::row_of("SyLSTM", report));
  nlohmann::json trivial = nlohmann::json::array();
  for (std::size_t k = 0; k < c.classes().size(); ++k)
    trivial.push_back({{"system", rows[k].system},
                       {"report", eval::trivial_baseline(c.classes(), k, gold).to_json()}});
  fs::create_directories(c.output);
  write_text(c.output / "eval_report.json",
             nlohmann::json{{"model", report.to_json()}, {"trivial", trivial}}.dump(1) + "\n");
  write_text(c.output / "eval_table.csv", eval::format_csv(rows));
  os << eval::format_table(rows);
  return kOk;
}

inline int cmd_baseline(const RunConfig &c, std::ostream &os = std::cout,
                        const fs::path &resources = textprep::resource_dir()) {
  const Data d = load_split(c);
  const auto prep = textprep::Preprocessor::from_resources(resources);
  auto docs = [&](const std::vector<corpus::LabeledExample> &xs) {
    std::vector<std::vector<std::string>> out;
    for (const auto &x : xs)
      out.push_back(text::split_ws(prep(x.raw).text));
    return out;
  };
  auto labels = [&](const std::vector<corpus::LabeledExample> &xs) {
    std::vector<std::size_t> out;
    for (const auto &x : xs)
      out.push_back(x.label(c.task));
    return out;
  };
  const auto test_gold = labels(d.split.test);
  const auto sel = eval::svm_baseline(docs(d.split.train), labels(d.split.train),
                                      docs(d.split.dev), labels(d.split.dev), c.classes(), c.svm);
  const auto report = eval::weighted_metrics(test_gold, sel.model.predict(docs(d.split.test)),
                                             c.classes(), corpus::task_name(c.task));
  std::vector<eval::ResultRow> rows = eval::trivial_rows(c.classes(), test_gold);
  rows.push_back(eval::row_of("SVM", report));
  nlohmann::json grid = nlohmann::json::array();
  for (const auto &[cv, f1] : sel.dev_scores)
    grid.push_back({{"C", cv}, {"dev_wf1", f1}});
  if (!c.output.empty()) {
    fs::create_directories(c.output);
    write_text(c.output / "baseline_report.json",
               nlohmann::json{{"svm", report.to_json()}, {"chosen_C", sel.model.c()}, {"grid", grid}}
                   .dump(1) +
                 "\n");
    write_text(c.output / "baseline_table.csv", eval::format_csv(rows));
  }
  os << fmt::format("SVM C = {} (dev weighted F1 {:.1f})\n", sel.model.c(),
                    sel.dev_scores.empty() ? 0.0 : [&] {
                      for (const auto &[cv, f1] : sel.dev_scores)
                        if (cv == sel.model.c())
                          return f1;
                      return 0.0;
                    }());
  os << eval::format_table(rows);
  return kOk;
}

struct PredictArgs {
  fs::path checkpoint, vocab, input, output, parses;
  std::string parser_cmd; ///< shell command with {in} and {out} placeholders
  fs::path resources = textprep::resource_dir();
};

inline std::string replace_all(std::string s, const std::string &from, const std::string &to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
  return s;
}

inline int cmd_predict(const PredictArgs &a) {
  if (a.parses.empty() == a.parser_cmd.empty())
    throw ConfigError("give exactly one of --parses or --parser-cmd");
  auto [contents, vocab] = load_model(a.checkpoint, a.vocab);
  std::ifstream in(a.input);
  if (!in)
    throw IoError("cannot open " + a.input.string());
  std::vector<std::string> tweets;
  for (std::string line; std::getline(in, line);) {
    text::strip_cr(line);
    tweets.push_back(line);
  }
  for (std::size_t i = 0; i < tweets.size(); ++i)
    if (text::trim(tweets[i]).empty())
      throw PreconditionError(fmt::format("line {} is empty", i + 1));

  std::vector<depgraph::DependencyParse> parses;
  if (!a.parses.empty()) {
    parses = depgraph::read_conllu(a.parses);
  } else {
    const auto prep = textprep::Preprocessor::from_resources(a.resources);
    const fs::path tmp = fs::temp_directory_path() /
                         fmt::format("sylstm-predict-{}", std::hash<std::string>{}(a.input.string()));
    fs::create_directories(tmp);
    std::string cleaned;
    for (const auto &t : tweets)
      cleaned += prep(t).text + "\n";
    write_text(tmp / "cleaned.txt", cleaned);
    const std::string cmd = replace_all(replace_all(a.parser_cmd, "{in}", (tmp / "cleaned.txt").string()),
                                        "{out}", (tmp / "parsed.conllu").string());
    if (std::system(cmd.c_str()) != 0)
      throw IoError("parser command failed: " + cmd);
    parses = depgraph::read_conllu(tmp / "parsed.conllu");
    fs::remove_all(tmp);
  }

  // Examples are identified by their 1-based line number.
  std::vector<corpus::LabeledExample> xs(tweets.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    xs[i].id = std::to_string(i + 1);
  const bool keyed = !parses.empty() && std::all_of(parses.begin(), parses.end(), [](const auto &p) {
    return !p.sent_id.empty();
  });
  if (!keyed && parses.size() != tweets.size()) {
    std::string lines;
    const std::size_t lo = std::min(parses.size(), tweets.size()) + 1;
    const std::size_t hi = std::max(parses.size(), tweets.size());
    lines = lo == hi ? std::to_string(lo) : fmt::format("{}-{}", lo, hi);
    throw AlignmentError(fmt::format("{} tweets but {} parses; unmatched line(s) {}",
                                     tweets.size(), parses.size(), lines));
  }
  parses = pipeline::attach_parses(xs, std::move(parses));

  const auto &cfg = contents.model.config;
  const double alpha = contents.meta.extra.value("alpha", 1.0);
  std::vector<Example> examples;
  for (std::size_t i = 0; i < xs.size(); ++i)
    examples.push_back(pipeline::make_example(xs[i].id, parses[i], vocab, 0, cfg.max_len, alpha));
  const auto inputs = as_inputs(examples);
  const auto pred = predict_batch(contents.model, std::span<const Input>(inputs));
  std::string out;
  for (auto p : pred)
    out += contents.meta.classes[p] + "\n";
  write_text(a.output, out);
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

/// Map an exception to its exit status and print it.
inline int report_error(std::ostream &err) {
  try {
    throw;
  } catch (const AlignmentError &e) {
    err << "alignment error: " << e.what() << "\n";
    return kAlignmentError;
  } catch (const IntegrityError &e) {
    err << "integrity error: " << e.what() << "\n";
    return kIntegrityError;
  } catch (const IoError &e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const DataError &e) {
    err << "data error: " << e.what() << "\n";
    return kIoError;
  } catch (const ParseError &e) {
    err << "parse error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error &e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
}

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout,
               std::ostream &err = std::cerr) {
  CLI::App app{"SyLSTM offensive-language classifier"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::string prep_in, prep_out, resources = textprep::resource_dir().string();
  auto *prep = app.add_subcommand("prep", "clean one tweet per line");
  prep->add_option("--in", prep_in, "raw tweets")->required();
  prep->add_option("--out", prep_out, "cleaned tweets")->required();
  prep->add_option("--resources", resources, "folder with emoticons.tsv and wordfreq.tsv");

  struct RunCommand {
    CLI::App *app = nullptr;
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option *> options;
  };
  std::map<std::string, RunCommand> commands;
  for (const auto &[name, help] : std::vector<std::pair<std::string, std::string>>{
         {"train", "train a model and write its artifacts"},
         {"eval", "score a checkpoint on the test partition"},
         {"baseline", "linear SVM and trivial baselines"},
         {"params", "print the trainable parameter count"}}) {
    auto &rc = commands[name];
    rc.app = app.add_subcommand(name, help);
    rc.app->add_option("--config", rc.config, "key = value settings file");
    for (const auto &k : run_keys())
      rc.options[k.name] =
        rc.app->add_option("--" + k.name, rc.values[k.name], k.help + " [" + k.fallback + "]");
    if (name == "baseline")
      rc.app->add_option("--resources", resources, "folder with emoticons.tsv and wordfreq.tsv");
  }

  PredictArgs pa;
  std::string pa_resources = resources;
  auto *pred = app.add_subcommand("predict", "label raw tweets with a trained model");
  pred->add_option("--checkpoint", pa.checkpoint, "model checkpoint")->required();
  pred->add_option("--vocab", pa.vocab, "vocabulary dump written by train")->required();
  pred->add_option("--in", pa.input, "raw tweets, one per line")->required();
  pred->add_option("--out", pa.output, "labels, one per line")->required();
  pred->add_option("--parses", pa.parses, "CoNLL-U parses of the cleaned tweets");
  pred->add_option("--parser-cmd", pa.parser_cmd,
                   "shell command parsing {in} (cleaned text) into {out} (CoNLL-U)");
  pred->add_option("--resources", pa_resources, "folder with emoticons.tsv and wordfreq.tsv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (prep->parsed())
      return cmd_prep(prep_in, prep_out, resources);
    if (pred->parsed()) {
      pa.resources = pa_resources;
      return cmd_predict(pa);
    }
    for (auto &[name, rc] : commands) {
      if (!rc.app->parsed())
        continue;
      Settings s;
      if (!rc.config.empty())
        s = read_config_file(rc.config);
      for (const auto &[key, opt] : rc.options)
        if (opt->count() > 0)
          s[key] = rc.values[key];
      if (name == "params")
        return cmd_params(resolve(s, {}), out);
      if (name == "train")
        return cmd_train(resolve(s, {true, true, true}), out);
      if (name == "eval")
        return cmd_eval(resolve(s, {true, true, true}), out);
      return cmd_baseline(resolve(s, {true, false, false}), out, resources);
    }
    return kConfigError;
  } catch (...) {
    return report_error(err);
  }
}

} // namespace sylstm::cli
