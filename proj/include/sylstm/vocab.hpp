// SPDX-License-Identifier: Apache-2.0
/**
 * @file   vocab.hpp
 * @brief  Token vocabulary and word embedding tables.
 */
#pragma once

#include "sylstm/common.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace sylstm {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr std::size_t kDefaultVocabSize = 30000;

/**
 * Bijection between tokens and contiguous ids. Ids 0 and 1 are the
 * reserved padding and unknown-token entries.
 */
class Vocabulary {
public:
  static constexpr const char *kPadToken = "<pad>";
  static constexpr const char *kUnkToken = "<unk>";

  Vocabulary() : tokens_{kPadToken, kUnkToken} {
    index_.emplace(kPadToken, kPad);
    index_.emplace(kUnkToken, kUnk);
  }

  /**
   * Keep the `max_size` most frequent tokens; equal counts are ordered
   * lexicographically.
   */
  static Vocabulary build(const std::vector<std::vector<std::string>> &corpus,
                          std::size_t max_size = kDefaultVocabSize) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto &sentence : corpus)
      for (const auto &tok : sentence)
        ++freq[tok];
    freq.erase(kPadToken);
    freq.erase(kUnkToken);
    if (freq.empty())
      throw PreconditionError("cannot build a vocabulary from an empty corpus");
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto &a, const auto &b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > max_size)
      ranked.resize(max_size);
    Vocabulary v;
    for (auto &[tok, _] : ranked)
      v.push(tok);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId id(const std::string &token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string &token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw PreconditionError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string &token) const { return index_.count(token) != 0; }

  std::vector<TokenId> encode(const std::vector<std::string> &tokens) const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto &t : tokens)
      ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<TokenId> &ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId i : ids)
      out.push_back(token(i));
    return out;
  }

  /// JSON array of tokens ordered by id.
  nlohmann::json to_json() const { return tokens_; }

  static Vocabulary from_json(const nlohmann::json &j) {
    if (!j.is_array() || j.size() < 2 || j[0] != kPadToken || j[1] != kUnkToken)
      throw ConfigError("vocabulary dump must be an array starting with <pad>, <unk>");
    Vocabulary v;
    for (std::size_t i = 2; i < j.size(); ++i) {
      if (!j[i].is_string())
        throw ConfigError("vocabulary entries must be strings");
      const auto tok = j[i].get<std::string>();
      if (v.contains(tok))
        throw ConfigError("duplicate vocabulary entry '" + tok + "'");
      v.push(tok);
    }
    return v;
  }

  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("");
    for (const auto &t : tokens_) {
      h = fnv1a(t, h);
      h = fnv1a("\n", h);
    }
    return h;
  }

private:
  void push(const std::string &tok) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

template <typename T> struct EmbeddingMatrix {
  Mat<T> values; ///< |V| x d_w; row kPad is all zero
  bool trainable = true;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

inline constexpr double kEmbeddingInitRange = 0.05;

/// Uniform(-0.05, 0.05) entries with a zero padding row.
template <typename T>
EmbeddingMatrix<T> random_embeddings(const Vocabulary &v, std::size_t d_w,
                                     std::uint64_t seed) {
  require(d_w >= 1, "embedding dimension must be at least 1");
  Rng rng(seed);
  EmbeddingMatrix<T> e;
  e.values.resize(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(d_w));
  for (Eigen::Index i = 0; i < e.values.rows(); ++i)
    for (Eigen::Index j = 0; j < e.values.cols(); ++j)
      e.values(i, j) =
        static_cast<T>(rng.uniform(-kEmbeddingInitRange, kEmbeddingInitRange));
  e.values.row(kPad).setZero();
  return e;
}

template <typename T> struct GloveResult {
  EmbeddingMatrix<T> embedding;
  std::size_t found = 0;
  double coverage = 0.0; ///< found / (|V| - 2)
};

/**
 * Copy pretrained rows for in-vocabulary tokens from a GloVe text file
 * (`token v1 ... vd` per line). All other rows, UNK included, keep their
 * seeded uniform initialization; the padding row is zero.
 */
template <typename T>
GloveResult<T> load_glove(const std::filesystem::path &path, const Vocabulary &v,
                          std::size_t d_w, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open embeddings file " + path.string());
  GloveResult<T> r{random_embeddings<T>(v, d_w, seed), 0, 0.0};
  std::vector<bool> seen(v.size(), false);
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> row(d_w);
  while (std::getline(in, line)) {
    ++lineno;
    text::strip_cr(line);
    if (line.empty())
      continue;
    const auto sp = line.find(' ');
    const std::string tok = line.substr(0, sp);
    std::size_t count = 0;
    const char *p = sp == std::string::npos ? line.data() + line.size() : line.data() + sp;
    const char *end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ')
        ++p;
      if (p == end)
        break;
      double x = 0;
      auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc())
        throw DataError(path.string(), lineno, "bad number in embedding row");
      if (count < d_w)
        row[count] = x;
      ++count;
      p = next;
    }
    if (count != d_w)
      throw DataError(path.string(), lineno,
                      "expected " + std::to_string(d_w) + " values, got " +
                        std::to_string(count));
    const TokenId id = v.id(tok);
    if (id == kUnk || id == kPad || seen[static_cast<std::size_t>(id)])
      continue;
    seen[static_cast<std::size_t>(id)] = true;
    for (std::size_t j = 0; j < d_w; ++j) {
      if (!std::isfinite(row[j]))
        throw DataError(path.string(), lineno, "non-finite embedding value");
      r.embedding.values(id, static_cast<Eigen::Index>(j)) = static_cast<T>(row[j]);
    }
    ++r.found;
  }
  const std::size_t real = v.size() > 2 ? v.size() - 2 : 0;
  r.coverage = real ? static_cast<double>(r.found) / static_cast<double>(real) : 0.0;
  spdlog::info("pretrained vectors cover {}/{} vocabulary entries ({:.1f}%)", r.found,
               real, 100.0 * r.coverage);
  return r;
}

} // namespace sylstm
