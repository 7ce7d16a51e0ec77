#include "comporth/corpus.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace comporth;

namespace {

// Independent enumerator: all strings over {A,B} of length 1..max_len via
// bit patterns, collected length-major.
std::vector<std::string> brute_force_ab_words(int max_len) {
  std::vector<std::string> out;
  for (int len = 1; len <= max_len; ++len) {
    for (int bits = 0; bits < (1 << len); ++bits) {
      std::string w;
      for (int p = len - 1; p >= 0; --p) w.push_back((bits >> p) & 1 ? 'B' : 'A');
      out.push_back(w);
    }
  }
  return out;
}

}  // namespace

TEST(CorpusTest, SixtyTwoWords) {
  const auto words = enumerate_words({'A', 'B'}, 5);
  ASSERT_EQ(words.size(), 62u);
  EXPECT_EQ(words.front().letters, "A");
  EXPECT_EQ(words.back().letters, "BBBBB");
}

TEST(CorpusTest, DegenerateAlphabet) {
  const auto words = enumerate_words({'A'}, 1);
  ASSERT_EQ(words.size(), 1u);
  EXPECT_EQ(words[0].letters, "A");
  EXPECT_EQ(words[0].index, 0);
}

TEST(CorpusTest, LengthThreeGrid) {
  const auto words = enumerate_words({'A', 'B'}, 3);
  ASSERT_EQ(words.size(), 14u);  // 2 + 4 + 8
  EXPECT_EQ(words[3].letters, "AB");
  EXPECT_EQ(words[3].index, 3);
}

TEST(CorpusTest, MatchesBruteForceEnumeration) {
  const auto words = enumerate_words({'A', 'B'}, 5);
  const auto expected = brute_force_ab_words(5);
  ASSERT_EQ(words.size(), expected.size());
  for (size_t i = 0; i < words.size(); ++i) {
    EXPECT_EQ(words[i].letters, expected[i]) << "at index " << i;
    EXPECT_EQ(words[i].index, static_cast<int>(i));
  }
}

TEST(CorpusTest, InvalidConfigurations) {
  EXPECT_THROW(enumerate_words({}, 5), ConfigError);
  EXPECT_THROW(enumerate_words({'A', 'B'}, 0), ConfigError);
  EXPECT_THROW(enumerate_words({'A', 'A'}, 2), ConfigError);
}

TEST(CorpusTest, WordIndexRoundTrips) {
  const std::vector<char> alphabet{'A', 'B'};
  const auto words = enumerate_words(alphabet, 5);
  for (const Word& w : words) EXPECT_EQ(word_index(w.letters, alphabet, 5), w.index);
}

TEST(CorpusTest, AssignmentCountIsGridProduct) {
  FactorGrid grid = FactorGrid::defaults();
  const auto assignments = enumerate_assignments(grid);
  EXPECT_EQ(assignments.size(), 62u * 9 * 9 * 5);  // 25,110
  EXPECT_EQ(static_cast<long>(assignments.size()), grid.assignment_count());

  FactorGrid singleton = grid;
  singleton.x_shifts = {0};
  singleton.y_shifts = {0};
  singleton.spacings = {0};
  EXPECT_EQ(enumerate_assignments(singleton).size(), 62u);

  FactorGrid short_words = grid;
  short_words.max_length = 1;
  EXPECT_EQ(enumerate_assignments(short_words).size(), 810u);  // 2 * 405
}

TEST(CorpusTest, AssignmentOrderIsWordMajor) {
  FactorGrid grid = FactorGrid::defaults();
  const auto a = enumerate_assignments(grid);
  EXPECT_EQ(a[0].word.letters, "A");
  EXPECT_EQ(a[0].x_shift, -4);
  EXPECT_EQ(a[0].y_shift, -4);
  EXPECT_EQ(a[0].spacing, -2);
  EXPECT_EQ(a[1].spacing, -1);  // spacing is the innermost axis
  EXPECT_EQ(a[5].y_shift, -3);
  EXPECT_EQ(a[405].word.letters, "B");  // 9*9*5 assignments per word
}

TEST(CorpusTest, GridValidation) {
  FactorGrid g = FactorGrid::defaults();
  g.x_shifts = {};
  EXPECT_THROW(g.validate(), ConfigError);
  g = FactorGrid::defaults();
  g.spacings = {0, 0};
  EXPECT_THROW(g.validate(), ConfigError);
  g = FactorGrid::defaults();
  g.y_shifts = {2, 1};
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(CorpusTest, ManifestSerializationIsDeterministic) {
  FactorGrid grid = FactorGrid::defaults();
  grid.max_length = 2;
  std::ostringstream a, b;
  write_manifest_jsonl(build_manifest(grid), a);
  write_manifest_jsonl(build_manifest(grid), b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_FALSE(a.str().empty());
}

TEST(CorpusTest, ManifestRoundTrip) {
  FactorGrid grid = FactorGrid::defaults();
  grid.max_length = 2;
  const auto rows = build_manifest(grid);
  const std::string path = testing::TempDir() + "manifest_roundtrip.jsonl";
  write_manifest_jsonl(rows, path);
  const auto back = read_manifest_jsonl(path);
  ASSERT_EQ(back.size(), rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].id, rows[i].id);
    EXPECT_EQ(back[i].word, rows[i].word);
    EXPECT_EQ(back[i].word_index, rows[i].word_index);
    EXPECT_EQ(back[i].length, rows[i].length);
    EXPECT_EQ(back[i].x_shift, rows[i].x_shift);
    EXPECT_EQ(back[i].y_shift, rows[i].y_shift);
    EXPECT_EQ(back[i].spacing, rows[i].spacing);
  }
}
