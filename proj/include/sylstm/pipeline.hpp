// SPDX-License-Identifier: Apache-2.0
/**
 * @file   pipeline.hpp
 * @brief  Glue between labeled tweets, their parses and network inputs.
 */
#pragma once

#include "sylstm/corpus.hpp"
#include "sylstm/depgraph.hpp"
#include "sylstm/train.hpp"
#include "sylstm/vocab.hpp"

#include <unordered_map>

namespace sylstm::pipeline {

/**
 * Pair every example with its parse. When the parses carry `# sent_id`
 * comments they are matched by id; otherwise they are taken positionally
 * and the counts must agree. Mismatches raise AlignmentError naming the
 * offending ids.
 */
inline std::vector<depgraph::DependencyParse>
attach_parses(const std::vector<corpus::LabeledExample> &examples,
              std::vector<depgraph::DependencyParse> parses) {
  const bool keyed = !parses.empty() && std::all_of(parses.begin(), parses.end(), [](const auto &p) {
    return !p.sent_id.empty();
  });
  std::vector<depgraph::DependencyParse> out;
  out.reserve(examples.size());
  if (keyed) {
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < parses.size(); ++i)
      by_id.emplace(parses[i].sent_id, i);
    std::vector<std::string> missing;
    for (const auto &ex : examples) {
      auto it = by_id.find(ex.id);
      if (it == by_id.end())
        missing.push_back(ex.id);
      else
        out.push_back(parses[it->second]);
    }
    if (!missing.empty()) {
      std::string list;
      for (std::size_t i = 0; i < missing.size() && i < 20; ++i)
        list += (i ? ", " : "") + missing[i];
      if (missing.size() > 20)
        list += " (+" + std::to_string(missing.size() - 20) + " more)";
      throw AlignmentError(std::to_string(missing.size()) + " example(s) have no parse: " + list);
    }
    return out;
  }
  if (parses.size() != examples.size())
    throw AlignmentError("found " + std::to_string(parses.size()) + " parses for " +
                         std::to_string(examples.size()) +
                         " examples; first unmatched example " +
                         (parses.size() < examples.size() ? examples[parses.size()].id
                                                          : std::string("(none, extra parses)")));
  return parses;
}

/// Surface tokens of a parse, cut at max_len.
inline std::vector<std::string> tokens_of(const depgraph::DependencyParse &p, std::size_t max_len) {
  const std::size_t n = std::min(p.size(), max_len);
  return {p.tokens.begin(), p.tokens.begin() + static_cast<long>(n)};
}

/// Network input for one tweet: ids of the (truncated) parse tokens and
/// the normalized graph over the same tokens.
inline Example make_example(std::string id, const depgraph::DependencyParse &p,
                            const Vocabulary &v, std::size_t label, std::size_t max_len,
                            double alpha) {
  Example x;
  x.id = std::move(id);
  x.ids = v.encode(tokens_of(p, max_len));
  x.adjacency = depgraph::normalize(depgraph::build_graph(p, max_len), alpha);
  x.label = label;
  return x;
}

inline std::vector<Example> make_examples(const std::vector<corpus::LabeledExample> &xs,
                                          const std::vector<depgraph::DependencyParse> &parses,
                                          const Vocabulary &v, corpus::Task task,
                                          std::size_t max_len, double alpha) {
  require(xs.size() == parses.size(), "one parse per example is required");
  std::vector<Example> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    out.push_back(make_example(xs[i].id, parses[i], v, xs[i].label(task), max_len, alpha));
  return out;
}

} // namespace sylstm::pipeline
