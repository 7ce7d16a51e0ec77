#pragma once

// Word vocabulary and generative factor grid. Enumeration order is the
// canonical dataset order everywhere: word index major, then x-shift,
// y-shift, spacing.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/error.hpp"

namespace comporth {

struct Word {
  std::string letters;
  int index = 0;

  int length() const { return static_cast<int>(letters.size()); }
};

// Canonical order: length ascending, then lexicographic in alphabet order.
inline std::vector<Word> enumerate_words(const std::vector<char>& alphabet, int max_length) {
  if (alphabet.empty()) throw ConfigError("enumerate_words: empty alphabet");
  if (max_length < 1) throw ConfigError("enumerate_words: max_length < 1");
  for (size_t i = 0; i < alphabet.size(); ++i)
    for (size_t j = i + 1; j < alphabet.size(); ++j)
      if (alphabet[i] == alphabet[j]) throw ConfigError("enumerate_words: duplicate symbol");

  std::vector<Word> words;
  std::string current;
  auto extend = [&](auto&& self, int remaining) -> void {
    if (!current.empty()) words.push_back({current, static_cast<int>(words.size())});
    if (remaining == 0) return;
    for (char c : alphabet) {
      current.push_back(c);
      self(self, remaining - 1);
      current.pop_back();
    }
  };
  // Depth-first emits prefix order; re-sort to length-major.
  extend(extend, max_length);
  std::stable_sort(words.begin(), words.end(), [](const Word& a, const Word& b) {
    return a.letters.size() < b.letters.size();
  });
  for (size_t i = 0; i < words.size(); ++i) words[i].index = static_cast<int>(i);
  return words;
}

inline int word_index(const std::string& letters, const std::vector<char>& alphabet,
                      int max_length) {
  const long k = static_cast<long>(alphabet.size());
  if (letters.empty() || static_cast<int>(letters.size()) > max_length)
    throw ConfigError("word_index: word length out of range: \"" + letters + "\"");
  long offset = 0, pw = 1;
  for (int l = 1; l < static_cast<int>(letters.size()); ++l) {
    pw *= k;
    offset += pw;
  }
  long value = 0;
  for (char c : letters) {
    auto it = std::find(alphabet.begin(), alphabet.end(), c);
    if (it == alphabet.end()) throw ConfigError(std::string("word_index: symbol not in alphabet: ") + c);
    value = value * k + (it - alphabet.begin());
  }
  return static_cast<int>(offset + value);
}

struct FactorGrid {
  std::vector<char> alphabet{'A', 'B'};
  int max_length = 5;
  std::vector<int> x_shifts;
  std::vector<int> y_shifts;
  std::vector<int> spacings;

  static FactorGrid defaults() {
    FactorGrid g;
    for (int s = -4; s <= 4; ++s) g.x_shifts.push_back(s);
    for (int s = -4; s <= 4; ++s) g.y_shifts.push_back(s);
    for (int s = -2; s <= 2; ++s) g.spacings.push_back(s);
    return g;
  }

  void validate() const {
    if (alphabet.empty()) throw ConfigError("FactorGrid: empty alphabet");
    if (max_length < 1) throw ConfigError("FactorGrid: max_length < 1");
    auto check_list = [](const std::vector<int>& xs, const char* name) {
      if (xs.empty()) throw ConfigError(std::string("FactorGrid: empty ") + name);
      for (size_t i = 1; i < xs.size(); ++i)
        if (xs[i] <= xs[i - 1])
          throw ConfigError(std::string("FactorGrid: ") + name + " not strictly increasing");
    };
    check_list(x_shifts, "x_shifts");
    check_list(y_shifts, "y_shifts");
    check_list(spacings, "spacings");
  }

  long assignment_count() const {
    long n = 0, pw = 1;
    for (int l = 1; l <= max_length; ++l) {
      pw *= static_cast<long>(alphabet.size());
      n += pw;
    }
    return n * static_cast<long>(x_shifts.size()) * static_cast<long>(y_shifts.size()) *
           static_cast<long>(spacings.size());
  }
};

struct FactorAssignment {
  Word word;
  int x_shift = 0;
  int y_shift = 0;  // positive = up
  int spacing = 0;  // delta on the default inter-glyph gap
};

inline std::vector<FactorAssignment> enumerate_assignments(const FactorGrid& grid) {
  grid.validate();
  const auto words = enumerate_words(grid.alphabet, grid.max_length);
  std::vector<FactorAssignment> out;
  out.reserve(static_cast<size_t>(grid.assignment_count()));
  for (const Word& w : words)
    for (int x : grid.x_shifts)
      for (int y : grid.y_shifts)
        for (int s : grid.spacings) out.push_back({w, x, y, s});
  return out;
}

struct ManifestRow {
  long id = 0;
  std::string word;
  int word_index = 0;
  int length = 0;
  int x_shift = 0;
  int y_shift = 0;
  int spacing = 0;
};

inline std::vector<ManifestRow> build_manifest(const FactorGrid& grid) {
  const auto assignments = enumerate_assignments(grid);
  std::vector<ManifestRow> rows;
  rows.reserve(assignments.size());
  for (size_t i = 0; i < assignments.size(); ++i) {
    const FactorAssignment& a = assignments[i];
    rows.push_back({static_cast<long>(i), a.word.letters, a.word.index, a.word.length(), a.x_shift,
                    a.y_shift, a.spacing});
  }
  return rows;
}

// One JSON object per line, ids in enumeration order.
inline void write_manifest_jsonl(const std::vector<ManifestRow>& rows, std::ostream& os) {
  for (const ManifestRow& r : rows) {
    nlohmann::json j{{"id", r.id},         {"word", r.word},       {"word_index", r.word_index},
                     {"length", r.length}, {"x_shift", r.x_shift}, {"y_shift", r.y_shift},
                     {"spacing", r.spacing}};
    os << j.dump() << "\n";
  }
}

inline void write_manifest_jsonl(const std::vector<ManifestRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open manifest for writing: " + path);
  write_manifest_jsonl(rows, os);
}

inline std::vector<ManifestRow> read_manifest_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    rows.push_back({j.at("id").get<long>(), j.at("word").get<std::string>(),
                    j.at("word_index").get<int>(), j.at("length").get<int>(),
                    j.at("x_shift").get<int>(), j.at("y_shift").get<int>(),
                    j.at("spacing").get<int>()});
  }
  return rows;
}

}  // namespace comporth
