// SPDX-License-Identifier: Apache-2.0
/**
 * @file   common.hpp
 * @brief  Error types, dense matrix aliases, portable RNG and binary I/O
 *         helpers shared by every sylstm module.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sylstm {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/** Base class of every error raised by the library. */
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition.
class PreconditionError : public Error {
public:
  using Error::Error;
};

/// Malformed configuration or resource file.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
  using Error::Error;
};

/** Row-level problem in a dataset file. `line()` is 1-based. */
class DataError : public Error {
public:
  DataError(const std::string &file, std::size_t line, const std::string &what)
    : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/** Sentence-level problem in a CoNLL-U file. `sentence()` is 0-based. */
class ParseError : public Error {
public:
  ParseError(std::size_t sentence, const std::string &what)
    : Error("sentence " + std::to_string(sentence) + ": " + what),
      sentence_(sentence) {}
  std::size_t sentence() const { return sentence_; }

private:
  std::size_t sentence_;
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Checkpoint or cache failed its integrity checks.
class IntegrityError : public Error {
public:
  using Error::Error;
};

/// Examples and graphs that do not line up.
class AlignmentError : public Error {
public:
  using Error::Error;
};

inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw PreconditionError(msg);
}

/**
 * Seeded generator with distributions defined here rather than by the
 * standard library, so that streams are identical across toolchains.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n) by rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0)
      throw PreconditionError("Rng::below(0)");
    const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename It> void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i)
      std::iter_swap(first + (i - 1), first + below(i));
  }

  /// Derive an independent stream, e.g. one per epoch.
  Rng fork() { return Rng(next() ^ 0x9e3779b97f4a7c15ULL); }

private:
  std::mt19937_64 engine_;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace io {

static_assert(std::endian::native == std::endian::little ||
                std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U> void put_le(std::ostream &os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(buf, buf + sizeof(U));
  os.write(reinterpret_cast<const char *>(buf), sizeof(U));
}

template <typename U> U get_le(std::istream &is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char *>(buf), sizeof(U)))
    throw IntegrityError("unexpected end of binary stream");
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(buf, buf + sizeof(U));
  U value;
  std::memcpy(&value, buf, sizeof(U));
  return value;
}

inline void put_string(std::ostream &os, std::string_view s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream &is, std::size_t max_len = 1u << 24) {
  const auto n = get_le<std::uint32_t>(is);
  if (n > max_len)
    throw IntegrityError("string length out of range");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw IntegrityError("unexpected end of binary stream");
  return s;
}

} // namespace io

namespace text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_';
}

inline bool is_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char &c : out)
    if (c >= 'A' && c <= 'Z')
      c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front()))
    s.remove_prefix(1);
  while (!s.empty() && is_space(s.back()))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i]))
      ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j]))
      ++j;
    if (j > i)
      out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string join(const std::vector<std::string> &parts,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i)
      out += sep;
    out += parts[i];
  }
  return out;
}

inline void strip_cr(std::string &line) {
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
}

} // namespace text

} // namespace sylstm
