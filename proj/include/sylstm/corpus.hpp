// SPDX-License-Identifier: Apache-2.0
/**
 * @file   corpus.hpp
 * @brief  OLID and Davidson dataset readers, the label schemes of both
 *         datasets, and seeded stratified train/dev/test splits.
 */
#pragma once

#include "sylstm/common.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace sylstm::corpus {

/// A: offensive?  B: targeted?  C: target type.  D3: Davidson 3-class.
enum class Task { A, B, C, D3 };

inline std::string task_name(Task t) {
  switch (t) {
  case Task::A:
    return "A";
  case Task::B:
    return "B";
  case Task::C:
    return "C";
  case Task::D3:
    return "D3";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "A" || s == "a")
    return Task::A;
  if (s == "B" || s == "b")
    return Task::B;
  if (s == "C" || s == "c")
    return Task::C;
  if (s == "D3" || s == "d3")
    return Task::D3;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected A, B, C or D3)");
}

/// Class names in index order. The index order fixes argmax tie-breaking.
inline const std::vector<std::string> &labels(Task t) {
  static const std::vector<std::string> a{"NOT", "OFF"};
  static const std::vector<std::string> b{"TIN", "UNT"};
  static const std::vector<std::string> c{"IND", "GRP", "OTH"};
  static const std::vector<std::string> d3{"HATE", "OFF", "NONE"};
  switch (t) {
  case Task::A:
    return a;
  case Task::B:
    return b;
  case Task::C:
    return c;
  case Task::D3:
    return d3;
  }
  return a;
}

inline std::optional<std::size_t> label_index(Task t, std::string_view label) {
  const auto &alpha = labels(t);
  for (std::size_t i = 0; i < alpha.size(); ++i)
    if (alpha[i] == label)
      return i;
  return std::nullopt;
}

struct LabeledExample {
  std::string id;
  std::string raw;
  std::map<Task, std::string> task_labels;
  std::size_t row = 0; ///< 0-based position among the data rows of its file

  bool has(Task t) const { return task_labels.count(t) != 0; }

  std::size_t label(Task t) const {
    auto it = task_labels.find(t);
    if (it == task_labels.end())
      throw PreconditionError("example " + id + " has no label for task " +
                              task_name(t));
    return *label_index(t, it->second);
  }
};

namespace detail {

inline std::ifstream open(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return in;
}

inline std::map<std::string, std::size_t> header_index(const std::vector<std::string> &cols) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < cols.size(); ++i)
    idx.emplace(std::string(text::trim(cols[i])), i);
  return idx;
}

inline std::size_t need(const std::map<std::string, std::size_t> &idx,
                        const std::string &name, const std::string &file) {
  auto it = idx.find(name);
  if (it == idx.end())
    throw DataError(file, 1, "missing column '" + name + "'");
  return it->second;
}

/**
 * One RFC 4180 record: quoted fields may contain separators, doubled
 * quotes and newlines. Returns false at end of input. `line` is advanced
 * past the consumed physical lines.
 */
inline bool read_csv_record(std::istream &in, std::vector<std::string> &fields,
                            std::size_t &line, const std::string &file) {
  fields.clear();
  std::string field;
  bool in_quotes = false, any = false, was_quoted = false;
  const std::size_t start_line = line + 1;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    const char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n')
          ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && field.empty() && !was_quoted) {
      in_quotes = was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r')
        field.pop_back();
      fields.push_back(std::move(field));
      return true;
    } else {
      field += c;
    }
  }
  if (in_quotes)
    throw DataError(file, start_line, "unterminated quoted field");
  if (!any)
    return false;
  ++line;
  if (!field.empty() && field.back() == '\r')
    field.pop_back();
  fields.push_back(std::move(field));
  return true;
}

} // namespace detail

/**
 * Read the OLID training TSV (`id, tweet, subtask_a, subtask_b, subtask_c`)
 * and return the rows labelled for `task`. Missing labels are written
 * `NULL`. The label hierarchy is validated for every row.
 */
inline std::vector<LabeledExample> load_olid(const std::filesystem::path &path, Task task) {
  require(task != Task::D3, "task D3 belongs to the Davidson dataset");
  const std::string file = path.string();
  auto in = detail::open(path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError(file, 1, "missing header");
  text::strip_cr(line);
  const auto header = text::split(line, '\t');
  const auto idx = detail::header_index(header);
  const std::size_t c_id = detail::need(idx, "id", file);
  const std::size_t c_tweet = detail::need(idx, "tweet", file);
  const std::size_t c_a = detail::need(idx, "subtask_a", file);
  const std::size_t c_b = detail::need(idx, "subtask_b", file);
  const std::size_t c_c = detail::need(idx, "subtask_c", file);

  std::vector<LabeledExample> out;
  std::size_t lineno = 1, row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    text::strip_cr(line);
    if (line.empty())
      continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != header.size())
      throw DataError(file, lineno,
                      "expected " + std::to_string(header.size()) + " columns, got " +
                        std::to_string(cols.size()));
    LabeledExample ex;
    ex.id = cols[c_id];
    ex.raw = cols[c_tweet];
    ex.row = row++;
    const std::pair<Task, std::size_t> tasks[] = {
      {Task::A, c_a}, {Task::B, c_b}, {Task::C, c_c}};
    for (auto [t, col] : tasks) {
      const std::string value(text::trim(cols[col]));
      if (value == "NULL" || value.empty())
        continue;
      if (!label_index(t, value))
        throw DataError(file, lineno,
                        "unknown label '" + value + "' for subtask " + task_name(t));
      ex.task_labels.emplace(t, value);
    }
    if (!ex.has(Task::A))
      throw DataError(file, lineno, "subtask_a label is required");
    if (ex.has(Task::B) && ex.task_labels[Task::A] != "OFF")
      throw DataError(file, lineno, "subtask_b label requires subtask_a == OFF");
    if (ex.has(Task::C) && (!ex.has(Task::B) || ex.task_labels[Task::B] != "TIN"))
      throw DataError(file, lineno, "subtask_c label requires subtask_b == TIN");
    if (ex.has(task))
      out.push_back(std::move(ex));
  }
  return out;
}

/**
 * Assemble an OLID test set from its distributed pieces: a TSV with
 * `id, tweet` and a headerless CSV of `id,label` pairs for one subtask.
 */
inline std::vector<LabeledExample> load_olid_test(const std::filesystem::path &tweets,
                                                  const std::filesystem::path &gold,
                                                  Task task) {
  require(task != Task::D3, "task D3 belongs to the Davidson dataset");
  std::unordered_map<std::string, std::string> gold_by_id;
  {
    const std::string file = gold.string();
    auto in = detail::open(gold);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      text::strip_cr(line);
      if (text::trim(line).empty())
        continue;
      const auto cols = text::split(line, ',');
      if (cols.size() != 2)
        throw DataError(file, lineno, "expected id,label");
      const std::string label(text::trim(cols[1]));
      if (!label_index(task, label))
        throw DataError(file, lineno, "unknown label '" + label + "'");
      gold_by_id[std::string(text::trim(cols[0]))] = label;
    }
  }
  const std::string file = tweets.string();
  auto in = detail::open(tweets);
  std::string line;
  if (!std::getline(in, line))
    throw DataError(file, 1, "missing header");
  text::strip_cr(line);
  const auto header = text::split(line, '\t');
  const auto idx = detail::header_index(header);
  const std::size_t c_id = detail::need(idx, "id", file);
  const std::size_t c_tweet = detail::need(idx, "tweet", file);
  std::vector<LabeledExample> out;
  std::size_t lineno = 1, row = 0;
  while (std::getline(in, line)) {
    ++lineno;
    text::strip_cr(line);
    if (line.empty())
      continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != header.size())
      throw DataError(file, lineno, "column count mismatch");
    auto it = gold_by_id.find(cols[c_id]);
    if (it == gold_by_id.end())
      throw DataError(file, lineno, "no gold label for id " + cols[c_id]);
    LabeledExample ex;
    ex.id = cols[c_id];
    ex.raw = cols[c_tweet];
    ex.row = row++;
    ex.task_labels.emplace(task, it->second);
    out.push_back(std::move(ex));
  }
  return out;
}

/**
 * Read the Davidson CSV (`count, hate_speech, offensive_language, neither,
 * class, tweet`, optionally preceded by an unnamed index column used as the
 * id). Class 0/1/2 maps to HATE/OFF/NONE under task D3.
 */
inline std::vector<LabeledExample> load_davidson(const std::filesystem::path &path) {
  const std::string file = path.string();
  auto in = detail::open(path);
  std::vector<std::string> header, fields;
  std::size_t line = 0;
  if (!detail::read_csv_record(in, header, line, file))
    throw DataError(file, 1, "missing header");
  const auto idx = detail::header_index(header);
  const std::size_t c_class = detail::need(idx, "class", file);
  const std::size_t c_tweet = detail::need(idx, "tweet", file);
  std::optional<std::size_t> c_id;
  if (auto it = idx.find(""); it != idx.end())
    c_id = it->second;
  else if (auto it2 = idx.find("id"); it2 != idx.end())
    c_id = it2->second;

  std::vector<LabeledExample> out;
  std::size_t row = 0;
  while (true) {
    const std::size_t start = line + 1;
    if (!detail::read_csv_record(in, fields, line, file))
      break;
    if (fields.size() == 1 && text::trim(fields[0]).empty())
      continue;
    if (fields.size() != header.size())
      throw DataError(file, start,
                      "expected " + std::to_string(header.size()) + " columns, got " +
                        std::to_string(fields.size()));
    const std::string cls(text::trim(fields[c_class]));
    std::string label;
    if (cls == "0")
      label = "HATE";
    else if (cls == "1")
      label = "OFF";
    else if (cls == "2")
      label = "NONE";
    else
      throw DataError(file, start, "unknown class '" + cls + "' (expected 0, 1 or 2)");
    LabeledExample ex;
    ex.id = c_id ? fields[*c_id] : std::to_string(row);
    ex.raw = fields[c_tweet];
    ex.row = row++;
    ex.task_labels.emplace(Task::D3, label);
    out.push_back(std::move(ex));
  }
  return out;
}

struct DatasetSplit {
  std::vector<LabeledExample> train, dev, test;
  std::uint64_t seed = 0;
  double dev_fraction = 0.10;
};

/// Where the test partition comes from.
struct HeldOut {
  double fraction = 0.10;
};
using TestSource = std::variant<std::vector<LabeledExample>, HeldOut>;

namespace detail {

/// Stratified draw: per class, shuffle and take max(1, round(f * n)).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_take(const std::vector<LabeledExample> &examples,
                const std::vector<std::size_t> &pool, Task task, double fraction,
                Rng &rng, const char *what) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i : pool)
    by_class[examples[i].label(task)].push_back(i);
  std::vector<std::size_t> taken, rest;
  for (auto &[cls, members] : by_class) {
    rng.shuffle(members.begin(), members.end());
    std::size_t k = 0;
    if (members.size() < 2) {
      spdlog::warn("class {} has {} member(s); kept whole in train, none in {}",
                   labels(task)[cls], members.size(), what);
    } else {
      const auto want = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members.size())));
      k = std::clamp<std::size_t>(want, 1, members.size() - 1);
    }
    taken.insert(taken.end(), members.begin(), members.begin() + static_cast<long>(k));
    rest.insert(rest.end(), members.begin() + static_cast<long>(k), members.end());
  }
  std::sort(taken.begin(), taken.end());
  std::sort(rest.begin(), rest.end());
  return {taken, rest};
}

} // namespace detail

/**
 * Seeded stratified split. The test partition is either given (OLID's
 * predefined test set) or held out from `examples` first; dev is then drawn
 * from what remains. Partitions keep the input order.
 */
inline DatasetSplit make_split(const std::vector<LabeledExample> &examples, Task task,
                               double dev_fraction, std::uint64_t seed,
                               TestSource test = HeldOut{}) {
  require(dev_fraction > 0.0 && dev_fraction < 1.0, "dev_fraction must lie in (0, 1)");
  require(!examples.empty(), "cannot split an empty example list");
  for (const auto &ex : examples)
    require(ex.has(task), "example " + ex.id + " lacks a label for task " + task_name(task));

  DatasetSplit split;
  split.seed = seed;
  split.dev_fraction = dev_fraction;
  Rng rng(seed);
  std::vector<std::size_t> pool(examples.size());
  std::iota(pool.begin(), pool.end(), 0);

  if (auto *held = std::get_if<HeldOut>(&test)) {
    require(held->fraction > 0.0 && held->fraction < 1.0,
            "held-out test fraction must lie in (0, 1)");
    auto [test_idx, rest] =
      detail::stratified_take(examples, pool, task, held->fraction, rng, "test");
    for (std::size_t i : test_idx)
      split.test.push_back(examples[i]);
    pool = std::move(rest);
  } else {
    split.test = std::get<std::vector<LabeledExample>>(std::move(test));
  }

  auto [dev_idx, train_idx] =
    detail::stratified_take(examples, pool, task, dev_fraction, rng, "dev");
  for (std::size_t i : dev_idx)
    split.dev.push_back(examples[i]);
  for (std::size_t i : train_idx)
    split.train.push_back(examples[i]);
  return split;
}

inline nlohmann::json manifest(const DatasetSplit &split) {
  auto ids = [](const std::vector<LabeledExample> &xs) {
    std::vector<std::string> out;
    out.reserve(xs.size());
    for (const auto &x : xs)
      out.push_back(x.id);
    return out;
  };
  return {{"seed", split.seed},
          {"dev_fraction", split.dev_fraction},
          {"train_ids", ids(split.train)},
          {"dev_ids", ids(split.dev)},
          {"test_ids", ids(split.test)}};
}

/// Rebuild a split from its manifest and a pool holding every listed example.
inline DatasetSplit apply_manifest(const nlohmann::json &m,
                                   const std::vector<LabeledExample> &pool) {
  std::unordered_map<std::string, const LabeledExample *> by_id;
  for (const auto &ex : pool)
    by_id.emplace(ex.id, &ex);
  DatasetSplit split;
  try {
    split.seed = m.at("seed").get<std::uint64_t>();
    split.dev_fraction = m.at("dev_fraction").get<double>();
    auto fill = [&](const char *key, std::vector<LabeledExample> &dst) {
      for (const auto &id : m.at(key)) {
        auto it = by_id.find(id.get<std::string>());
        if (it == by_id.end())
          throw ConfigError(std::string("manifest ") + key + " lists unknown id " +
                            id.get<std::string>());
        dst.push_back(*it->second);
      }
    };
    fill("train_ids", split.train);
    fill("dev_ids", split.dev);
    fill("test_ids", split.test);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed split manifest: ") + e.what());
  }
  return split;
}

} // namespace sylstm::corpus
