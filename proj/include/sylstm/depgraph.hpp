// SPDX-License-Identifier: Apache-2.0
/**
 * @file   depgraph.hpp
 * @brief  Dependency parses, their undirected token graphs, and the
 *         symmetrically normalized adjacency D^-1/2 (A + I) D^-1/2 used by
 *         the graph convolution.
 */
#pragma once

#include "sylstm/common.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace sylstm::depgraph {

inline constexpr int kRoot = -1;

struct DependencyParse {
  std::vector<std::string> tokens;
  std::vector<int> heads; ///< 0-based; kRoot marks the root
  std::vector<std::string> relations;
  std::string sent_id; ///< from a `# sent_id =` comment, may be empty

  std::size_t size() const { return tokens.size(); }

  /// Empty string when valid, otherwise the first violated invariant.
  std::string violation() const {
    const std::size_t n = tokens.size();
    if (heads.size() != n || relations.size() != n)
      return "token, head and relation arrays differ in length";
    if (n == 0)
      return "empty sentence";
    std::size_t roots = 0;
    for (int h : heads) {
      if (h == kRoot)
        ++roots;
      else if (h < 0 || static_cast<std::size_t>(h) >= n)
        return "head index out of range";
    }
    if (roots != 1)
      return "expected exactly one root, found " + std::to_string(roots);
    // Every walk towards the root must terminate within n steps.
    for (std::size_t i = 0; i < n; ++i) {
      int cur = static_cast<int>(i);
      std::size_t steps = 0;
      while (cur != kRoot) {
        cur = heads[static_cast<std::size_t>(cur)];
        if (++steps > n)
          return "heads contain a cycle";
      }
    }
    return {};
  }
};

namespace detail {

inline bool parse_int(std::string_view s, int &out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

} // namespace detail

/**
 * Read CoNLL-U sentence blocks. Heads become 0-based with the root at
 * kRoot; multiword-token ranges (`1-2`) and empty nodes (`1.1`) are
 * skipped. Malformed or non-tree sentences raise ParseError.
 */
inline std::vector<DependencyParse> read_conllu(std::istream &in) {
  std::vector<DependencyParse> out;
  DependencyParse cur;
  bool open = false;
  std::size_t index = 0;
  auto flush = [&] {
    if (!open)
      return;
    if (auto v = cur.violation(); !v.empty())
      throw ParseError(index, v);
    out.push_back(std::move(cur));
    cur = DependencyParse{};
    open = false;
    ++index;
  };
  std::string line;
  while (std::getline(in, line)) {
    text::strip_cr(line);
    if (text::trim(line).empty()) {
      flush();
      continue;
    }
    open = true;
    if (line[0] == '#') {
      constexpr std::string_view key = "# sent_id";
      if (line.compare(0, key.size(), key) == 0) {
        auto eq = line.find('=');
        if (eq != std::string::npos)
          cur.sent_id = std::string(text::trim(std::string_view(line).substr(eq + 1)));
      }
      continue;
    }
    const auto cols = text::split(line, '\t');
    if (cols.size() != 10)
      throw ParseError(index, "expected 10 tab-separated columns, got " +
                                std::to_string(cols.size()));
    if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos)
      continue;
    int id = 0, head = 0;
    if (!detail::parse_int(cols[0], id) || id != static_cast<int>(cur.tokens.size()) + 1)
      throw ParseError(index, "token ids must run 1..n, saw '" + cols[0] + "'");
    if (!detail::parse_int(cols[6], head) || head < 0)
      throw ParseError(index, "bad head '" + cols[6] + "' on token " + cols[0]);
    cur.tokens.push_back(cols[1]);
    cur.heads.push_back(head - 1);
    cur.relations.push_back(cols[7]);
  }
  flush();
  return out;
}

inline std::vector<DependencyParse> read_conllu(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  return read_conllu(in);
}

inline void write_conllu(std::ostream &os, const DependencyParse &p) {
  if (!p.sent_id.empty())
    os << "# sent_id = " << p.sent_id << '\n';
  for (std::size_t i = 0; i < p.size(); ++i)
    os << i + 1 << '\t' << p.tokens[i] << "\t_\t_\t_\t_\t" << p.heads[i] + 1 << '\t'
       << p.relations[i] << "\t_\t_\n";
  os << '\n';
}

/// Undirected token graph; self-connections are implicit.
struct TweetGraph {
  std::size_t n = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges; ///< i < j, sorted
};

/**
 * One undirected edge per dependency. With `max_len`, only the first
 * `max_len` tokens are kept and edges touching dropped tokens disappear.
 */
inline TweetGraph build_graph(const DependencyParse &p,
                              std::size_t max_len = std::numeric_limits<std::size_t>::max()) {
  if (auto v = p.violation(); !v.empty())
    throw PreconditionError("invalid parse: " + v);
  TweetGraph g;
  g.n = std::min(p.size(), max_len);
  for (std::size_t d = 0; d < g.n; ++d) {
    const int h = p.heads[d];
    if (h == kRoot || static_cast<std::size_t>(h) >= g.n)
      continue;
    const auto a = static_cast<std::uint32_t>(std::min<std::size_t>(d, h));
    const auto b = static_cast<std::uint32_t>(std::max<std::size_t>(d, h));
    g.edges.emplace_back(a, b);
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

/**
 * Sparse symmetric operator D^-1/2 (A + I) D^-1/2 in CSR form with sorted
 * column indices. `degrees[i]` is the row sum of A + I.
 */
class NormalizedAdjacency {
public:
  NormalizedAdjacency() = default;

  std::size_t n() const { return degrees_.size(); }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<double> &degrees() const { return degrees_; }
  const std::vector<std::size_t> &row_ptr() const { return row_ptr_; }
  const std::vector<std::uint32_t> &cols() const { return cols_; }
  const std::vector<double> &values() const { return values_; }

  double at(std::size_t i, std::size_t j) const {
    for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      if (cols_[k] == j)
        return values_[k];
    return 0.0;
  }

  Mat<double> to_dense() const {
    Mat<double> m = Mat<double>::Zero(static_cast<Eigen::Index>(n()),
                                      static_cast<Eigen::Index>(n()));
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        m(static_cast<Eigen::Index>(i), cols_[k]) = values_[k];
    return m;
  }

  /// Returns this * x for a dense row-major x with n() rows.
  template <typename T> Mat<T> multiply(const Mat<T> &x) const {
    if (static_cast<std::size_t>(x.rows()) != n())
      throw ShapeError("adjacency is " + std::to_string(n()) + "x" + std::to_string(n()) +
                       " but features have " + std::to_string(x.rows()) + " rows");
    Mat<T> y = Mat<T>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        y.row(static_cast<Eigen::Index>(i)) +=
          static_cast<T>(values_[k]) * x.row(cols_[k]);
    return y;
  }

  /// Build from COO triplets; duplicates are rejected.
  static NormalizedAdjacency
  from_triplets(std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t,
                std::vector<double> degrees) {
    std::sort(t.begin(), t.end(), [](const auto &a, const auto &b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) <
             std::tie(std::get<0>(b), std::get<1>(b));
    });
    NormalizedAdjacency m;
    m.degrees_ = std::move(degrees);
    m.row_ptr_.assign(n + 1, 0);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto [i, j, v] = t[k];
      if (i >= n || j >= n)
        throw IntegrityError("adjacency index out of range");
      if (k && std::get<0>(t[k - 1]) == i && std::get<1>(t[k - 1]) == j)
        throw IntegrityError("duplicate adjacency entry");
      ++m.row_ptr_[i + 1];
      m.cols_.push_back(j);
      m.values_.push_back(v);
    }
    for (std::size_t i = 0; i < n; ++i)
      m.row_ptr_[i + 1] += m.row_ptr_[i];
    return m;
  }

  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> triplets() const {
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
    t.reserve(nnz());
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
        t.emplace_back(static_cast<std::uint32_t>(i), cols_[k], values_[k]);
    return t;
  }

private:
  std::vector<double> degrees_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> cols_;
  std::vector<double> values_;
};

/**
 * A_ij = alpha on every edge, A~ = A + I, D~_ii = sum_j A~_ij and
 * entries A~_ij / sqrt(D~_ii D~_jj).
 */
inline NormalizedAdjacency normalize(const TweetGraph &g, double alpha = 1.0) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw PreconditionError("edge weight alpha must be positive");
  std::vector<double> deg(g.n, 1.0);
  for (auto [i, j] : g.edges) {
    if (i >= g.n || j >= g.n || i == j)
      throw PreconditionError("graph edge out of range or self-loop");
    deg[i] += alpha;
    deg[j] += alpha;
  }
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
  t.reserve(g.n + 2 * g.edges.size());
  for (std::size_t i = 0; i < g.n; ++i)
    t.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i), 1.0 / deg[i]);
  for (auto [i, j] : g.edges) {
    const double v = alpha / std::sqrt(deg[i] * deg[j]);
    t.emplace_back(i, j, v);
    t.emplace_back(j, i, v);
  }
  return NormalizedAdjacency::from_triplets(g.n, std::move(t), std::move(deg));
}

struct PackedAdjacency {
  NormalizedAdjacency matrix;       ///< block diagonal
  std::vector<std::size_t> offsets; ///< first packed row of each graph
};

/// Pack graphs into one block-diagonal operator without padding nodes.
inline PackedAdjacency batch_graphs(std::span<const NormalizedAdjacency *const> graphs) {
  require(!graphs.empty(), "cannot pack an empty list of graphs");
  PackedAdjacency packed;
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
  std::vector<double> deg;
  std::size_t offset = 0;
  for (const auto *g : graphs) {
    packed.offsets.push_back(offset);
    for (auto [i, j, v] : g->triplets())
      t.emplace_back(static_cast<std::uint32_t>(i + offset),
                     static_cast<std::uint32_t>(j + offset), v);
    deg.insert(deg.end(), g->degrees().begin(), g->degrees().end());
    offset += g->n();
  }
  packed.matrix = NormalizedAdjacency::from_triplets(offset, std::move(t), std::move(deg));
  return packed;
}

inline PackedAdjacency batch_graphs(const std::vector<NormalizedAdjacency> &graphs) {
  std::vector<const NormalizedAdjacency *> ptrs;
  for (const auto &g : graphs)
    ptrs.push_back(&g);
  return batch_graphs(std::span<const NormalizedAdjacency *const>(ptrs));
}

namespace cache {

inline constexpr char kMagic[4] = {'S', 'Y', 'G', 'C'};
inline constexpr std::uint32_t kVersion = 1;

/**
 * Layout (little-endian): magic "SYGC", u32 version, u32 count, then per
 * entry: u32 id length, id bytes, u32 n, u32 nnz, and nnz triplets of
 * (u32 row, u32 col, f64 value).
 */
inline void write(const std::filesystem::path &path,
                  const std::vector<std::pair<std::string, NormalizedAdjacency>> &entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  io::put_le<std::uint32_t>(os, kVersion);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto &[id, adj] : entries) {
    io::put_string(os, id);
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(adj.n()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(adj.nnz()));
    for (auto [i, j, v] : adj.triplets()) {
      io::put_le<std::uint32_t>(os, i);
      io::put_le<std::uint32_t>(os, j);
      io::put_le<double>(os, v);
    }
  }
  if (!os)
    throw IoError("write failed for " + path.string());
}

/// Degrees are recovered from the diagonal, which equals 1 / D~_ii.
inline std::map<std::string, NormalizedAdjacency> read(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IntegrityError("not an adjacency cache: " + path.string());
  if (io::get_le<std::uint32_t>(is) != kVersion)
    throw IntegrityError("unsupported adjacency cache version");
  const auto count = io::get_le<std::uint32_t>(is);
  std::map<std::string, NormalizedAdjacency> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string id = io::get_string(is);
    const auto n = io::get_le<std::uint32_t>(is);
    const auto nnz = io::get_le<std::uint32_t>(is);
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> t;
    std::vector<double> deg(n, 0.0);
    for (std::uint32_t k = 0; k < nnz; ++k) {
      const auto i = io::get_le<std::uint32_t>(is);
      const auto j = io::get_le<std::uint32_t>(is);
      const auto v = io::get_le<double>(is);
      if (i >= n || j >= n)
        throw IntegrityError("adjacency cache index out of range");
      if (i == j) {
        if (!(v > 0.0))
          throw IntegrityError("non-positive diagonal in adjacency cache");
        deg[i] = 1.0 / v;
      }
      t.emplace_back(i, j, v);
    }
    for (double d : deg)
      if (d == 0.0)
        throw IntegrityError("adjacency cache entry is missing a diagonal");
    out.emplace(std::move(id), NormalizedAdjacency::from_triplets(n, std::move(t), std::move(deg)));
  }
  return out;
}

} // namespace cache

} // namespace sylstm::depgraph
