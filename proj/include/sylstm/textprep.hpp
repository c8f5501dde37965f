// SPDX-License-Identifier: Apache-2.0
/**
 * @file   textprep.hpp
 * @brief  Tweet normalization: usernames, URLs, hashtags, emoticons,
 *         compound words and character lengthening.
 *
 * Every rule is a pure function over text. Rules that need data (the
 * emoticon table and the word-frequency list) take an immutable resource
 * object which can be shared between threads once loaded.
 */
#pragma once

#include "sylstm/common.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#ifndef SYLSTM_DEFAULT_RESOURCE_DIR
#define SYLSTM_DEFAULT_RESOURCE_DIR "data"
#endif

namespace sylstm::textprep {

inline constexpr std::string_view kUserToken = "@user";
inline constexpr std::string_view kUrlToken = "url";

/// Resource directory: $SYLSTM_RESOURCE_DIR, else the build-time default.
inline std::filesystem::path resource_dir() {
  if (const char *env = std::getenv("SYLSTM_RESOURCE_DIR"); env && *env)
    return env;
  return SYLSTM_DEFAULT_RESOURCE_DIR;
}

namespace detail {

inline bool is_ascii(std::string_view s) {
  for (unsigned char c : s)
    if (c >= 0x80)
      return false;
  return true;
}

/// Byte length of the UTF-8 sequence starting with `lead` (1 on garbage).
inline std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80)
    return 1;
  if ((lead >> 5) == 0x6)
    return 2;
  if ((lead >> 4) == 0xe)
    return 3;
  if ((lead >> 3) == 0x1e)
    return 4;
  return 1;
}

inline bool starts_with_icase(std::string_view s, std::size_t pos,
                              std::string_view prefix) {
  if (s.size() - pos < prefix.size())
    return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    char c = s[pos + k];
    if (c >= 'A' && c <= 'Z')
      c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[k])
      return false;
  }
  return true;
}

inline bool has_triple_run(std::string_view w) {
  for (std::size_t i = 2; i < w.size(); ++i)
    if (w[i] == w[i - 1] && w[i] == w[i - 2])
      return true;
  return false;
}

} // namespace detail

/// Replace every `@` followed by word characters with `@user`.
inline std::string replace_usernames(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '@' && i + 1 < text.size() && text::is_word_char(text[i + 1])) {
      out += kUserToken;
      i += 1;
      while (i < text.size() && text::is_word_char(text[i]))
        ++i;
    } else {
      out += text[i++];
    }
  }
  return out;
}

/**
 * Replace URLs with `url`. A URL starts at a word boundary with
 * `http://`, `https://` or `www.` (case-insensitive) and runs to the next
 * whitespace character.
 */
inline std::string replace_urls(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const bool boundary = i == 0 || !text::is_word_char(text[i - 1]);
    std::size_t prefix = 0;
    if (boundary) {
      if (detail::starts_with_icase(text, i, "https://"))
        prefix = 8;
      else if (detail::starts_with_icase(text, i, "http://"))
        prefix = 7;
      else if (detail::starts_with_icase(text, i, "www."))
        prefix = 4;
    }
    if (prefix) {
      out += kUrlToken;
      i += prefix;
      while (i < text.size() && !text::is_space(text[i]))
        ++i;
    } else {
      out += text[i++];
    }
  }
  return out;
}

/**
 * Collapse runs of three or more identical characters to two. Runs are
 * compared per UTF-8 code point and ASCII letters compare case-insensitively,
 * so the result is stable under later lowercasing.
 */
inline std::string reduce_lengthening(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::string_view prev;
  std::size_t run = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = detail::utf8_len(static_cast<unsigned char>(text[i]));
    len = std::min(len, text.size() - i);
    std::string_view cp = text.substr(i, len);
    const bool same = !prev.empty() && prev.size() == cp.size() &&
                      (cp.size() == 1 ? text::to_lower(prev) == text::to_lower(cp)
                                      : prev == cp);
    run = same ? run + 1 : 1;
    if (run <= 2)
      out += cp;
    prev = cp;
    i += len;
  }
  return out;
}

/**
 * Emoticon and emoji to phrase mapping. ASCII emoticons are matched as
 * whole whitespace-delimited tokens (exactly, then lowercased); emoji
 * containing non-ASCII bytes are matched anywhere, longest key first.
 */
class EmojiTable {
public:
  EmojiTable() = default;

  explicit EmojiTable(const std::vector<std::pair<std::string, std::string>> &entries) {
    for (const auto &[key, phrase] : entries)
      add(key, phrase, 0);
  }

  /// Load a UTF-8 `emoticon<TAB>phrase` file; `#` starts a comment line.
  static EmojiTable load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot open emoticon map " + path.string());
    EmojiTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      text::strip_cr(line);
      if (line.empty() || line[0] == '#')
        continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": expected emoticon<TAB>phrase");
      table.add(line.substr(0, tab), line.substr(tab + 1), lineno);
    }
    return table;
  }

  std::size_t size() const { return ascii_.size() + emoji_.size(); }

  std::string normalize(std::string_view input) const {
    std::vector<std::string> out;
    for (auto &tok : text::split_ws(input)) {
      if (auto it = ascii_.find(tok); it != ascii_.end()) {
        out.push_back(it->second);
        continue;
      }
      if (auto it = ascii_.find(text::to_lower(tok)); it != ascii_.end()) {
        out.push_back(it->second);
        continue;
      }
      if (emoji_.empty() || detail::is_ascii(tok)) {
        out.push_back(tok);
        continue;
      }
      std::string rebuilt;
      std::size_t i = 0;
      while (i < tok.size()) {
        std::size_t matched = 0;
        const std::string *phrase = nullptr;
        for (std::size_t len = std::min(max_emoji_len_, tok.size() - i); len > 0;
             --len) {
          if (auto it = emoji_.find(tok.substr(i, len)); it != emoji_.end()) {
            matched = len;
            phrase = &it->second;
            break;
          }
        }
        if (phrase) {
          rebuilt += ' ';
          rebuilt += *phrase;
          rebuilt += ' ';
          i += matched;
        } else {
          rebuilt += tok[i++];
        }
      }
      for (auto &piece : text::split_ws(rebuilt))
        out.push_back(std::move(piece));
    }
    return text::join(out);
  }

  /// Every word used by a phrase (lowercase).
  std::vector<std::string> phrase_words() const {
    std::unordered_set<std::string> seen;
    std::vector<std::string> words;
    auto collect = [&](const std::string &phrase) {
      for (auto &w : text::split_ws(phrase))
        if (seen.insert(w).second)
          words.push_back(w);
    };
    for (const auto &[k, v] : ascii_)
      collect(v);
    for (const auto &[k, v] : emoji_)
      collect(v);
    std::sort(words.begin(), words.end());
    return words;
  }

private:
  void add(const std::string &key, const std::string &phrase, std::size_t lineno) {
    auto where = [&] {
      return lineno ? " (line " + std::to_string(lineno) + ")" : std::string();
    };
    if (key.empty() || text::trim(key).size() != key.size() ||
        text::split_ws(key).size() != 1)
      throw ConfigError("emoticon key must be a single token" + where());
    const auto words = text::split_ws(phrase);
    if (words.empty())
      throw ConfigError("empty phrase for emoticon '" + key + "'" + where());
    for (const auto &w : words)
      for (char c : w)
        if (!(c >= 'a' && c <= 'z'))
          throw ConfigError("phrase words must be lowercase ASCII letters" + where());
    auto &bucket = detail::is_ascii(key) ? ascii_ : emoji_;
    if (!bucket.emplace(key, text::join(words)).second)
      throw ConfigError("duplicate emoticon '" + key + "'" + where());
    if (&bucket == &emoji_)
      max_emoji_len_ = std::max(max_emoji_len_, key.size());
  }

  std::unordered_map<std::string, std::string> ascii_;
  std::unordered_map<std::string, std::string> emoji_;
  std::size_t max_emoji_len_ = 0;
};

/**
 * Unigram word segmenter. A token is split into the sequence of dictionary
 * words maximizing the sum of log relative frequencies (Viterbi over prefix
 * positions). Dictionary words containing a character three times in a row
 * are dropped at load; those cannot survive lengthening reduction anyway.
 */
class WordSegmenter {
public:
  WordSegmenter() = default;

  explicit WordSegmenter(const std::map<std::string, double> &counts) {
    for (const auto &[w, c] : counts)
      insert(w, c);
  }

  /// Load a UTF-8 `word<TAB>count` file; `#` starts a comment line.
  static WordSegmenter load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot open word list " + path.string());
    WordSegmenter seg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      text::strip_cr(line);
      if (line.empty() || line[0] == '#')
        continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": expected word<TAB>count");
      double count = 0;
      try {
        count = std::stod(line.substr(tab + 1));
      } catch (const std::exception &) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": bad count");
      }
      if (!(count > 0))
        throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                          ": count must be positive");
      seg.insert(text::to_lower(line.substr(0, tab)), count);
    }
    return seg;
  }

  /// Add words that must count as in-dictionary (phrase words, `user`, ...).
  void add_known(const std::vector<std::string> &words, double count = 1.0) {
    for (const auto &w : words)
      if (!counts_.count(w))
        insert(w, count);
  }

  bool contains(std::string_view word) const {
    return counts_.count(text::to_lower(word)) != 0;
  }

  std::size_t size() const { return counts_.size(); }

  /// Best segmentation of a lowercase alphabetic word, if one exists.
  std::optional<std::vector<std::string>> segment(std::string_view word) const {
    const std::size_t n = word.size();
    if (n == 0 || counts_.empty())
      return std::nullopt;
    const double log_total = std::log(total_);
    constexpr double kNone = -std::numeric_limits<double>::infinity();
    std::vector<double> best(n + 1, kNone);
    std::vector<std::size_t> back(n + 1, 0);
    best[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      const std::size_t lo = i > max_len_ ? i - max_len_ : 0;
      for (std::size_t j = lo; j < i; ++j) {
        if (best[j] == kNone)
          continue;
        auto it = counts_.find(std::string(word.substr(j, i - j)));
        if (it == counts_.end())
          continue;
        const double score = best[j] + std::log(it->second) - log_total;
        if (score > best[i]) {
          best[i] = score;
          back[i] = j;
        }
      }
    }
    if (best[n] == kNone)
      return std::nullopt;
    std::vector<std::string> parts;
    for (std::size_t i = n; i > 0; i = back[i])
      parts.emplace_back(word.substr(back[i], i - back[i]));
    std::reverse(parts.begin(), parts.end());
    return parts;
  }

  /**
   * Split one token. Leading and trailing non-letters are kept aside; the
   * letter core is left alone when it is in the dictionary or is not purely
   * ASCII alphabetic. Otherwise its lengthening-reduced lowercase form is
   * segmented; an unsplittable core is returned unchanged.
   */
  std::string split_token(std::string_view token) const {
    std::size_t b = 0, e = token.size();
    while (b < e && !text::is_alpha(token[b]))
      ++b;
    while (e > b && !text::is_alpha(token[e - 1]))
      --e;
    if (b == e)
      return std::string(token);
    const std::string_view core = token.substr(b, e - b);
    for (char c : core)
      if (!text::is_alpha(c))
        return std::string(token);
    const std::string lower = text::to_lower(core);
    if (counts_.count(lower))
      return std::string(token);
    const auto parts = segment(reduce_lengthening(lower));
    if (!parts)
      return std::string(token);
    return std::string(token.substr(0, b)) + text::join(*parts) +
           std::string(token.substr(e));
  }

private:
  void insert(const std::string &word, double count) {
    if (word.empty() || detail::has_triple_run(word))
      return;
    auto [it, fresh] = counts_.emplace(word, count);
    if (!fresh) {
      total_ -= it->second;
      it->second = count;
    }
    total_ += count;
    max_len_ = std::max(max_len_, word.size());
  }

  std::unordered_map<std::string, double> counts_;
  double total_ = 0.0;
  std::size_t max_len_ = 0;
};

inline std::string split_compounds(std::string_view text, const WordSegmenter &seg) {
  std::vector<std::string> out;
  for (const auto &tok : text::split_ws(text))
    out.push_back(seg.split_token(tok));
  return text::join(out);
}

/// `#tag` becomes `# tag`; the tag body is passed through the segmenter.
inline std::string segment_hashtags(std::string_view text, const WordSegmenter &seg) {
  std::string out;
  out.reserve(text.size() + 8);
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '#' && i + 1 < text.size() && text::is_word_char(text[i + 1])) {
      std::size_t j = i + 1;
      while (j < text.size() && text::is_word_char(text[j]))
        ++j;
      out += "# ";
      out += seg.split_token(text.substr(i + 1, j - i - 1));
      i = j;
    } else {
      out += text[i++];
    }
  }
  return out;
}

inline std::string normalize_emojis(std::string_view text, const EmojiTable &table) {
  return table.normalize(text);
}

struct CleanTweet {
  std::string text;
  std::vector<std::string> applied_rules;
};

/**
 * The full pipeline: usernames, URLs, hashtags, emojis, compounds,
 * lengthening, then ASCII lowercasing. `applied_rules` lists the rules that
 * changed the text, in order.
 */
class Preprocessor {
public:
  Preprocessor(EmojiTable emojis, WordSegmenter words)
    : emojis_(std::move(emojis)), words_(std::move(words)) {
    words_.add_known(emojis_.phrase_words());
    words_.add_known({"user", "url"});
  }

  static Preprocessor from_resources(const std::filesystem::path &dir = resource_dir()) {
    return Preprocessor(EmojiTable::load(dir / "emoticons.tsv"),
                        WordSegmenter::load(dir / "wordfreq.tsv"));
  }

  const EmojiTable &emojis() const { return emojis_; }
  const WordSegmenter &words() const { return words_; }

  CleanTweet operator()(std::string_view raw) const {
    require(!text::trim(raw).empty(), "tweet is empty after stripping whitespace");
    CleanTweet result;
    std::string cur = text::join(text::split_ws(raw));
    auto step = [&](const char *name, std::string next) {
      next = text::join(text::split_ws(next));
      if (next != cur)
        result.applied_rules.emplace_back(name);
      cur = std::move(next);
    };
    step("replace_usernames", replace_usernames(cur));
    step("replace_urls", replace_urls(cur));
    step("segment_hashtags", segment_hashtags(cur, words_));
    step("normalize_emojis", normalize_emojis(cur, emojis_));
    step("split_compounds", split_compounds(cur, words_));
    step("reduce_lengthening", reduce_lengthening(cur));
    step("lowercase", text::to_lower(cur));
    result.text = std::move(cur);
    return result;
  }

private:
  EmojiTable emojis_;
  WordSegmenter words_;
};

} // namespace sylstm::textprep
