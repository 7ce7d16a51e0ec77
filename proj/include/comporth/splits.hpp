#pragma once

// The three generalization tests, each a family of left-in/left-out
// partitions over manifest ids.

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/corpus.hpp"
#include "comporth/error.hpp"

namespace comporth {

struct SplitSpec {
  std::string family;  // spatial | length | compositional
  std::string key;
  std::vector<long> left_in;
  std::vector<long> left_out;

  std::string filename() const { return family + "__" + key + ".json"; }

  void validate(long total) const {
    if (left_in.empty() || left_out.empty())
      throw ConfigError("split " + family + "/" + key + ": a side of the partition is empty");
    if (static_cast<long>(left_in.size() + left_out.size()) != total)
      throw ConfigError("split " + family + "/" + key + ": not a partition of the manifest");
    std::set<long> seen(left_in.begin(), left_in.end());
    seen.insert(left_out.begin(), left_out.end());
    if (static_cast<long>(seen.size()) != total)
      throw ConfigError("split " + family + "/" + key + ": overlapping or missing ids");
  }
};

namespace detail {
template <typename Pred>
SplitSpec make_split(const std::vector<ManifestRow>& manifest, std::string family,
                     std::string key, Pred leave_out) {
  SplitSpec s;
  s.family = std::move(family);
  s.key = std::move(key);
  for (const ManifestRow& r : manifest)
    (leave_out(r) ? s.left_out : s.left_in).push_back(r.id);
  s.validate(static_cast<long>(manifest.size()));
  return s;
}

inline std::string signed_str(int v) { return (v >= 0 ? "+" : "") + std::to_string(v); }
}  // namespace detail

// One split per (x_shift, y_shift) pair: every word and spacing at that
// pair is left out.
inline std::vector<SplitSpec> spatial_splits(const std::vector<ManifestRow>& manifest) {
  std::set<std::pair<int, int>> pairs;
  for (const ManifestRow& r : manifest) pairs.insert({r.x_shift, r.y_shift});
  std::vector<SplitSpec> out;
  for (const auto& [x, y] : pairs) {
    out.push_back(detail::make_split(
        manifest, "spatial", "x" + detail::signed_str(x) + "y" + detail::signed_str(y),
        [x = x, y = y](const ManifestRow& r) { return r.x_shift == x && r.y_shift == y; }));
  }
  return out;
}

// One split per word length.
inline std::vector<SplitSpec> length_splits(const std::vector<ManifestRow>& manifest) {
  std::set<int> lengths;
  for (const ManifestRow& r : manifest) lengths.insert(r.length);
  std::vector<SplitSpec> out;
  for (int len : lengths) {
    out.push_back(detail::make_split(manifest, "length", "len" + std::to_string(len),
                                     [len](const ManifestRow& r) { return r.length == len; }));
  }
  return out;
}

// One split per (letter, position). Positions are 1-based from the left;
// words shorter than the position stay left-in.
inline std::vector<SplitSpec> compositional_splits(const std::vector<ManifestRow>& manifest) {
  std::set<char> letters;
  int max_len = 0;
  for (const ManifestRow& r : manifest) {
    for (char c : r.word) letters.insert(c);
    max_len = std::max(max_len, r.length);
  }
  std::vector<SplitSpec> out;
  for (char letter : letters) {
    for (int pos = 1; pos <= max_len; ++pos) {
      out.push_back(detail::make_split(
          manifest, "compositional", std::string(1, letter) + "@" + std::to_string(pos),
          [letter, pos](const ManifestRow& r) {
            return r.length >= pos && r.word[static_cast<size_t>(pos - 1)] == letter;
          }));
    }
  }
  return out;
}

inline void write_split_json(const SplitSpec& s, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open split for writing: " + path);
  nlohmann::json j{{"family", s.family}, {"key", s.key}, {"left_in", s.left_in},
                   {"left_out", s.left_out}};
  os << j.dump() << "\n";
}

inline SplitSpec read_split_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open split: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  SplitSpec s;
  s.family = j.at("family").get<std::string>();
  s.key = j.at("key").get<std::string>();
  s.left_in = j.at("left_in").get<std::vector<long>>();
  s.left_out = j.at("left_out").get<std::vector<long>>();
  return s;
}

}  // namespace comporth
