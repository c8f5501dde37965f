// SPDX-License-Identifier: Apache-2.0
#include "sylstm/textprep.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <regex>

using namespace sylstm;
using namespace sylstm::textprep;

namespace {

const Preprocessor &bundled() {
  static const Preprocessor p = Preprocessor::from_resources();
  return p;
}

WordSegmenter tiny_words() {
  return WordSegmenter({{"cat", 1000}, {"dog", 1000}, {"catd", 1}, {"og", 1}, {"love", 500},
                        {"it", 800}, {"hello", 50}});
}

std::vector<std::string> fixture_tweets() {
  std::ifstream in(sylstm::testing::fixture("tweets_1k.txt"));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!text::trim(line).empty())
      out.push_back(line);
  return out;
}

std::filesystem::path temp_file(const std::string &name, const std::string &body) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

} // namespace

TEST(Textprep, TableTransformations) {
  const auto &p = bundled();
  EXPECT_EQ(p("@india is great").text, "@user is great");
  EXPECT_EQ(p("see https://t.co/xyz now").text, "see url now");
  EXPECT_EQ(p("#banislam").text, "# banislam");
  EXPECT_EQ(p(":)").text, "smiley face");
  EXPECT_EQ(p("putuporshutup").text, "put up or shut up");
  EXPECT_EQ(p("waaaaayyyy").text, "waayy");
}

TEST(Textprep, Usernames) {
  EXPECT_EQ(replace_usernames("@india is great"), "@user is great");
  EXPECT_EQ(replace_usernames("no handles here"), "no handles here");
  EXPECT_EQ(replace_usernames("@a @b hi"), "@user @user hi");
}

TEST(Textprep, UsernamesMatchRegexOracle) {
  const std::regex handle("@\\w+");
  Rng rng(5);
  const std::string alphabet = "ab@_ 1!.";
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const auto n = rng.below(20);
    for (std::size_t k = 0; k < n; ++k)
      s += alphabet[rng.below(alphabet.size())];
    EXPECT_EQ(replace_usernames(s), std::regex_replace(s, handle, "@user")) << s;
  }
}

TEST(Textprep, Urls) {
  EXPECT_EQ(replace_urls("see https://t.co/xyz now"), "see url now");
  EXPECT_EQ(replace_urls("no links"), "no links");
  EXPECT_EQ(replace_urls("www.example.com rocks"), "url rocks");
  EXPECT_EQ(replace_urls("http://a.b/c"), "url");
}

TEST(Textprep, Hashtags) {
  const auto words = tiny_words();
  EXPECT_EQ(segment_hashtags("#banislam", bundled().words()), "# banislam");
  EXPECT_EQ(segment_hashtags("plain text", words), "plain text");
  EXPECT_EQ(segment_hashtags("#loveit now", words), "# love it now");
}

TEST(Textprep, Emojis) {
  const auto &table = bundled().emojis();
  EXPECT_EQ(normalize_emojis(":)", table), "smiley face");
  EXPECT_EQ(normalize_emojis("hello", table), "hello");
  EXPECT_EQ(normalize_emojis(":) :)", table), "smiley face smiley face");
  EXPECT_GE(table.size(), 90u);
}

TEST(Textprep, EmojiTableErrors) {
  EXPECT_THROW(EmojiTable::load(temp_file("sylstm_bad_emoji.tsv", ":)smiley\n")), ConfigError);
  EXPECT_THROW(EmojiTable::load("/nonexistent/emoticons.tsv"), ConfigError);
  EXPECT_THROW(WordSegmenter::load(temp_file("sylstm_bad_words.tsv", "cat\tmany\n")), ConfigError);
}

TEST(Textprep, Compounds) {
  const auto words = tiny_words();
  EXPECT_EQ(split_compounds("catdog", words), "cat dog");
  EXPECT_EQ(split_compounds("hello", words), "hello");
  EXPECT_EQ(split_compounds("putuporshutup", bundled().words()), "put up or shut up");
  // Unsplittable tokens come back unchanged.
  EXPECT_EQ(split_compounds("xqzv", words), "xqzv");
}

TEST(Textprep, Lengthening) {
  EXPECT_EQ(reduce_lengthening("waaaaayyyy"), "waayy");
  EXPECT_EQ(reduce_lengthening("good"), "good");
  EXPECT_EQ(reduce_lengthening("cooool!!!!"), "cool!!");
}

TEST(Textprep, LengtheningMatchesRunLengthOracle) {
  Rng rng(11);
  const std::string alphabet = "ab!. ";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto n = rng.below(30);
    for (std::size_t k = 0; k < n; ++k)
      s += alphabet[rng.below(alphabet.size())];
    std::string expect;
    for (std::size_t i = 0; i < s.size();) {
      std::size_t j = i;
      while (j < s.size() && s[j] == s[i])
        ++j;
      expect.append(std::min<std::size_t>(j - i, 2), s[i]);
      i = j;
    }
    EXPECT_EQ(reduce_lengthening(s), expect) << s;
  }
}

TEST(Textprep, Composition) {
  const auto &p = bundled();
  EXPECT_EQ(p("@india :)").text, "@user smiley face");
  EXPECT_EQ(p("#banislam waaaaayyyy").text, "# banislam waayy");
  EXPECT_THROW(p("   \t "), PreconditionError);
  EXPECT_THROW(p(""), PreconditionError);
}

TEST(Textprep, AppliedRulesInOrder) {
  const auto r = bundled()("@india :)");
  ASSERT_EQ(r.applied_rules.size(), 2u);
  EXPECT_EQ(r.applied_rules[0], "replace_usernames");
  EXPECT_EQ(r.applied_rules[1], "normalize_emojis");
}

TEST(Textprep, IdempotentOverFixture) {
  const auto tweets = fixture_tweets();
  ASSERT_EQ(tweets.size(), 1000u);
  const auto &p = bundled();
  for (const auto &t : tweets) {
    const auto once = p(t).text;
    if (text::trim(once).empty())
      continue;
    EXPECT_EQ(p(once).text, once) << t;
  }
}

TEST(Textprep, OutputInvariantsOverFixture) {
  const auto &p = bundled();
  const std::regex url("(https?://|www\\.)");
  const std::regex handle("@(\\w+)");
  for (const auto &t : fixture_tweets()) {
    const auto out = p(t).text;
    EXPECT_FALSE(textprep::detail::has_triple_run(out)) << out;
    EXPECT_FALSE(std::regex_search(out, url)) << out;
    for (std::sregex_iterator it(out.begin(), out.end(), handle), end; it != end; ++it)
      EXPECT_EQ((*it)[1].str(), "user") << out;
  }
}

TEST(Textprep, Deterministic) {
  const auto a = Preprocessor::from_resources();
  const auto b = Preprocessor::from_resources();
  for (const auto &t : fixture_tweets())
    ASSERT_EQ(a(t).text, b(t).text);
}
