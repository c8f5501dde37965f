// SPDX-License-Identifier: Apache-2.0
#include "sylstm/corpus.hpp"
#include "sylstm/vocab.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace sylstm;
using namespace sylstm::corpus;

namespace {

std::filesystem::path temp_file(const std::string &name, const std::string &body) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p, std::ios::binary) << body;
  return p;
}

const char *kOlidHeader = "id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c\n";

std::vector<LabeledExample> two_class(std::size_t off, std::size_t nots) {
  std::vector<LabeledExample> xs;
  for (std::size_t i = 0; i < off + nots; ++i) {
    LabeledExample ex;
    ex.id = "x" + std::to_string(i);
    ex.raw = "tweet " + std::to_string(i);
    ex.row = i;
    ex.task_labels.emplace(Task::A, i < off ? "OFF" : "NOT");
    xs.push_back(ex);
  }
  return xs;
}

std::size_t count_label(const std::vector<LabeledExample> &xs, const std::string &l) {
  std::size_t n = 0;
  for (const auto &x : xs)
    n += x.task_labels.at(Task::A) == l;
  return n;
}

std::set<std::string> ids(const std::vector<LabeledExample> &xs) {
  std::set<std::string> s;
  for (const auto &x : xs)
    s.insert(x.id);
  return s;
}

} // namespace

TEST(Corpus, OlidLoadsPerTask) {
  const auto path = temp_file("sylstm_olid.tsv",
                              std::string(kOlidHeader) +
                                "1\t@user you suck\tOFF\tTIN\tIND\n"
                                "2\tnice day\tNOT\tNULL\tNULL\n"
                                "3\twhat a mess\tOFF\tUNT\tNULL\n");
  EXPECT_EQ(load_olid(path, Task::A).size(), 3u);
  const auto b = load_olid(path, Task::B);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].task_labels.at(Task::B), "UNT");
  const auto c = load_olid(path, Task::C);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].id, "1");
  EXPECT_EQ(c[0].label(Task::C), 0u);
}

TEST(Corpus, OlidEmptyAndErrors) {
  EXPECT_TRUE(load_olid(temp_file("sylstm_olid_empty.tsv", kOlidHeader), Task::A).empty());
  try {
    load_olid(temp_file("sylstm_olid_bad.tsv",
                        std::string(kOlidHeader) + "1\tok\tNOT\tNULL\tNULL\n2\tx\tXYZ\tNULL\tNULL\n"),
              Task::A);
    FAIL() << "expected a malformed-label error";
  } catch (const DataError &e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(load_olid(temp_file("sylstm_olid_cols.tsv",
                                   std::string(kOlidHeader) + "1\tonly three\tNOT\n"),
                         Task::A),
               DataError);
  // Hierarchy: a B label without A == OFF.
  EXPECT_THROW(load_olid(temp_file("sylstm_olid_hier.tsv",
                                   std::string(kOlidHeader) + "1\tx\tNOT\tTIN\tNULL\n"),
                         Task::A),
               DataError);
  EXPECT_THROW(load_olid("/nonexistent/olid.tsv", Task::A), IoError);
}

TEST(Corpus, Davidson) {
  const auto path = temp_file("sylstm_dav.csv",
                              ",count,hate_speech,offensive_language,neither,class,tweet\n"
                              "0,3,0,0,3,2,\"hello, world\"\n"
                              "1,3,2,1,0,0,bad words\n"
                              "2,3,0,3,0,1,\"multi\nline\"\n");
  const auto xs = load_davidson(path);
  ASSERT_EQ(xs.size(), 3u);
  EXPECT_EQ(xs[0].task_labels.at(Task::D3), "NONE");
  EXPECT_EQ(xs[0].raw, "hello, world");
  EXPECT_EQ(xs[1].task_labels.at(Task::D3), "HATE");
  EXPECT_EQ(xs[2].task_labels.at(Task::D3), "OFF");
  EXPECT_TRUE(load_davidson(temp_file("sylstm_dav_empty.csv",
                                      "count,hate_speech,offensive_language,neither,class,tweet\n"))
                .empty());
  EXPECT_THROW(load_davidson(temp_file("sylstm_dav_bad.csv",
                                       "count,hate_speech,offensive_language,neither,class,tweet\n"
                                       "3,0,0,3,7,x\n")),
               DataError);
}

TEST(Corpus, StratifiedSplitArithmetic) {
  const auto xs = two_class(60, 40);
  const auto s = make_split(xs, Task::A, 0.10, 7, std::vector<LabeledExample>{});
  EXPECT_EQ(count_label(s.dev, "OFF"), 6u);
  EXPECT_EQ(count_label(s.dev, "NOT"), 4u);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_THROW(make_split(xs, Task::A, 0.0, 7), PreconditionError);
}

TEST(Corpus, SplitPropertiesRandomized) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto off = 1 + rng.below(40), nots = 1 + rng.below(40);
    const auto xs = two_class(off, nots);
    const std::uint64_t seed = rng.below(1000);
    const auto a = make_split(xs, Task::A, 0.10, seed);
    const auto b = make_split(xs, Task::A, 0.10, seed);
    EXPECT_EQ(ids(a.train), ids(b.train));
    EXPECT_EQ(ids(a.dev), ids(b.dev));
    EXPECT_EQ(ids(a.test), ids(b.test));
    const auto tr = ids(a.train), dv = ids(a.dev), te = ids(a.test);
    EXPECT_EQ(tr.size() + dv.size() + te.size(), xs.size());
    std::set<std::string> all = tr;
    all.insert(dv.begin(), dv.end());
    all.insert(te.begin(), te.end());
    EXPECT_EQ(all.size(), xs.size()) << "partitions overlap";
    // Manifest round trip.
    const auto back = apply_manifest(manifest(a), xs);
    EXPECT_EQ(ids(back.train), tr);
    EXPECT_EQ(ids(back.dev), dv);
    EXPECT_EQ(ids(back.test), te);
  }
}

TEST(Vocab, BuildRanksByFrequencyThenLexicographic) {
  const auto v = Vocabulary::build({{"a", "a", "b"}});
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("<pad>"), 0);
  EXPECT_EQ(v.id("<unk>"), 1);
  EXPECT_EQ(v.id("a"), 2);
  EXPECT_EQ(v.id("b"), 3);
  const auto one = Vocabulary::build({{"x", "y"}}, 1);
  EXPECT_EQ(one.size(), 3u);
  EXPECT_TRUE(one.contains("x"));
  EXPECT_FALSE(one.contains("y"));
  EXPECT_THROW(Vocabulary::build({}), PreconditionError);
  EXPECT_THROW(Vocabulary::build({{}}), PreconditionError);
}

TEST(Vocab, Encode) {
  const auto v = Vocabulary::build({{"a", "a", "b"}});
  EXPECT_EQ(v.encode({"a", "zzz"}), (std::vector<TokenId>{2, 1}));
  EXPECT_TRUE(v.encode({}).empty());
  EXPECT_EQ(v.encode({"b", "b"}), (std::vector<TokenId>{3, 3}));
  EXPECT_EQ(v.decode(v.encode({"b", "a"})), (std::vector<std::string>{"b", "a"}));
}

TEST(Vocab, JsonRoundTripAndHash) {
  const auto v = Vocabulary::build({{"q", "r", "r", "s"}});
  const auto back = Vocabulary::from_json(v.to_json());
  EXPECT_EQ(back.size(), v.size());
  EXPECT_EQ(back.hash(), v.hash());
  EXPECT_NE(Vocabulary::build({{"q"}}).hash(), v.hash());
  EXPECT_THROW(Vocabulary::from_json(nlohmann::json::array({"a"})), ConfigError);
}

TEST(Vocab, LookupEqualsOneHotProduct) {
  const auto v = Vocabulary::build({{"a", "b", "c", "d"}});
  const auto e = random_embeddings<double>(v, 5, 3);
  for (TokenId id = 0; id < static_cast<TokenId>(v.size()); ++id) {
    Mat<double> onehot = Mat<double>::Zero(1, static_cast<Eigen::Index>(v.size()));
    onehot(0, id) = 1.0;
    const Mat<double> prod = onehot * e.values;
    EXPECT_TRUE(prod.row(0) == e.values.row(id));
  }
}

TEST(Vocab, RandomEmbeddings) {
  const auto v = Vocabulary::build({{"a", "b", "c"}});
  const auto a = random_embeddings<double>(v, 200, 42);
  const auto b = random_embeddings<double>(v, 200, 42);
  EXPECT_TRUE(a.values == b.values);
  EXPECT_EQ(a.values.rows(), 5);
  EXPECT_EQ(a.values.cols(), 200);
  EXPECT_TRUE(a.values.row(kPad).isZero(0));
  EXPECT_LE(a.values.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_TRUE(a.trainable);
}

TEST(Vocab, RandomEmbeddingMeanIsNearZero) {
  std::vector<std::vector<std::string>> corpus(1);
  for (int i = 0; i < 30000; ++i)
    corpus[0].push_back("w" + std::to_string(i));
  const auto v = Vocabulary::build(corpus);
  const auto e = random_embeddings<double>(v, 200, 1);
  const double n = static_cast<double>(e.values.size() - 200);
  const double mean = e.values.sum() / n;
  // Uniform(-a, a) has standard deviation a / sqrt(3).
  const double sigma = 0.05 / std::sqrt(3.0) / std::sqrt(n);
  EXPECT_LT(std::abs(mean), 3.0 * sigma);
}

TEST(Vocab, GloveLoader) {
  const auto v = Vocabulary::build({{"a", "a", "b"}});
  std::string line = "a";
  for (int i = 0; i < 4; ++i)
    line += " 0.1";
  const auto path = temp_file("sylstm_glove.txt", "zzz 1 2 3 4\n" + line + "\n");
  const auto r = load_glove<double>(path, v, 4, 9);
  for (int j = 0; j < 4; ++j)
    EXPECT_EQ(r.embedding.values(v.id("a"), j), 0.1);
  EXPECT_TRUE(r.embedding.values.row(kPad).isZero(0));
  EXPECT_EQ(r.found, 1u);
  EXPECT_DOUBLE_EQ(r.coverage, 0.5);
  // Rows not in the file keep the seeded initialization.
  const auto fresh = random_embeddings<double>(v, 4, 9);
  EXPECT_TRUE(r.embedding.values.row(v.id("b")) == fresh.values.row(v.id("b")));
  EXPECT_TRUE(r.embedding.values.row(kUnk) == fresh.values.row(kUnk));

  try {
    load_glove<double>(temp_file("sylstm_glove_bad.txt", line + "\nb 1 2 3\n"), v, 4, 9);
    FAIL() << "expected a dimension mismatch";
  } catch (const DataError &e) {
    EXPECT_EQ(e.line(), 2u);
  }
}
