#pragma once

// Rasterizer: white glyphs on a black canvas, binary pixels, integer
// placement. Glyph bitmaps are embedded so rendering is bit-identical
// on every platform.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/corpus.hpp"
#include "comporth/error.hpp"

namespace comporth {

struct Glyph {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;  // row-major, 0/1

  static Glyph from_rows(const std::vector<std::string>& rows) {
    Glyph g;
    g.height = static_cast<int>(rows.size());
    g.width = static_cast<int>(rows.front().size());
    for (const std::string& r : rows)
      for (char c : r) g.bits.push_back(c == '#' ? 1 : 0);
    return g;
  }
};

struct GlyphSet {
  std::map<char, Glyph> glyphs;
  int height = 0;
  int default_gap = 2;  // inter-glyph gap in px at spacing 0

  // 7x10 block capitals. 'A' is mirror-symmetric, 'B' is not.
  static GlyphSet builtin() {
    GlyphSet gs;
    gs.glyphs['A'] = Glyph::from_rows({
        "..###..",
        ".#...#.",
        "#.....#",
        "#.....#",
        "#.....#",
        "#######",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
    });
    gs.glyphs['B'] = Glyph::from_rows({
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        "######.",
        "#.....#",
        "#.....#",
        "#.....#",
        "#.....#",
        "######.",
    });
    gs.height = 10;
    return gs;
  }

  void validate(const std::vector<char>& alphabet) const {
    for (char c : alphabet) {
      auto it = glyphs.find(c);
      if (it == glyphs.end()) throw ConfigError(std::string("GlyphSet: no glyph for ") + c);
      if (it->second.height != height) throw ConfigError("GlyphSet: glyph heights differ");
    }
    for (size_t i = 0; i < alphabet.size(); ++i)
      for (size_t j = i + 1; j < alphabet.size(); ++j)
        if (glyphs.at(alphabet[i]).bits == glyphs.at(alphabet[j]).bits)
          throw ConfigError("GlyphSet: two glyphs have identical bitmaps");
  }
};

struct Canvas {
  int height = 64;
  int width = 64;
};

// Grayscale frame; pixel values 0 or 255 (binary rendering, no AA).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

// Bounding-box center goes to canvas center + (x_shift, -y_shift) in
// raster coordinates; even-sized remainders are floored.
inline Image render(const FactorAssignment& a, const GlyphSet& glyphs, const Canvas& canvas) {
  const int n = a.word.length();
  const int gap = glyphs.default_gap + a.spacing;
  if (n > 1 && gap < 0)
    throw RenderBoundsError("render: negative effective gap " + std::to_string(gap) + " for \"" +
                            a.word.letters + "\"");
  int width = 0;
  for (int i = 0; i < n; ++i) {
    width += glyphs.glyphs.at(a.word.letters[static_cast<size_t>(i)]).width;
    if (i + 1 < n) width += gap;
  }
  const int height = glyphs.height;
  const int x0 = (canvas.width - width) / 2 + a.x_shift;
  const int y0 = (canvas.height - height) / 2 - a.y_shift;
  if (x0 < 0 || y0 < 0 || x0 + width > canvas.width || y0 + height > canvas.height)
    throw RenderBoundsError("render: \"" + a.word.letters + "\" at x=" +
                            std::to_string(a.x_shift) + " y=" + std::to_string(a.y_shift) +
                            " sp=" + std::to_string(a.spacing) + " overflows canvas");

  Image img(canvas.height, canvas.width);
  int cursor = x0;
  for (char c : a.word.letters) {
    const Glyph& g = glyphs.glyphs.at(c);
    for (int r = 0; r < g.height; ++r)
      for (int col = 0; col < g.width; ++col)
        if (g.bits[static_cast<size_t>(r) * g.width + col]) img.at(y0 + r, cursor + col) = 255;
    cursor += g.width + gap;
  }
  return img;
}

// All frames of a dataset, concatenated in manifest order.
struct ImageStore {
  int canvas_height = 0;
  int canvas_width = 0;
  long count = 0;
  std::vector<uint8_t> frames;  // count * h * w bytes

  long frame_size() const { return static_cast<long>(canvas_height) * canvas_width; }
  const uint8_t* frame(long id) const { return frames.data() + id * frame_size(); }

  Image image(long id) const {
    Image img(canvas_height, canvas_width);
    std::copy(frame(id), frame(id) + frame_size(), img.pixels.begin());
    return img;
  }
};

inline ImageStore generate_dataset(const std::vector<FactorAssignment>& assignments,
                                   const GlyphSet& glyphs, const Canvas& canvas,
                                   int threads = 0) {
  ImageStore store;
  store.canvas_height = canvas.height;
  store.canvas_width = canvas.width;
  store.count = static_cast<long>(assignments.size());
  store.frames.assign(static_cast<size_t>(store.count) * store.frame_size(), 0);

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  std::vector<std::thread> pool;
  std::vector<std::string> errors(static_cast<size_t>(threads));
  const long n = store.count;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      // Deterministic: each frame is written exactly once at its own offset.
      for (long i = t; i < n; i += threads) {
        try {
          Image img = render(assignments[static_cast<size_t>(i)], glyphs, canvas);
          std::copy(img.pixels.begin(), img.pixels.end(),
                    store.frames.begin() + i * store.frame_size());
        } catch (const RenderBoundsError& e) {
          if (errors[static_cast<size_t>(t)].empty())
            errors[static_cast<size_t>(t)] = "assignment id " + std::to_string(i) + ": " + e.what();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw RenderBoundsError(e);
  return store;
}

inline ImageStore generate_dataset(const FactorGrid& grid, const GlyphSet& glyphs,
                                   const Canvas& canvas, int threads = 0) {
  return generate_dataset(enumerate_assignments(grid), glyphs, canvas, threads);
}

// Packed store: one-line JSON header, then raw u8 frames.
inline void write_store(const ImageStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open store for writing: " + path);
  nlohmann::json header{{"canvas_h", store.canvas_height},
                        {"canvas_w", store.canvas_width},
                        {"count", store.count},
                        {"dtype", "u8"}};
  os << header.dump() << "\n";
  os.write(reinterpret_cast<const char*>(store.frames.data()),
           static_cast<std::streamsize>(store.frames.size()));
}

inline ImageStore read_store(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open store: " + path);
  std::string header_line;
  if (!std::getline(is, header_line)) throw IoError("store missing header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (header.at("dtype").get<std::string>() != "u8")
    throw IoError("store dtype not u8: " + path);
  ImageStore store;
  store.canvas_height = header.at("canvas_h").get<int>();
  store.canvas_width = header.at("canvas_w").get<int>();
  store.count = header.at("count").get<long>();
  store.frames.resize(static_cast<size_t>(store.count) * store.frame_size());
  is.read(reinterpret_cast<char*>(store.frames.data()),
          static_cast<std::streamsize>(store.frames.size()));
  if (is.gcount() != static_cast<std::streamsize>(store.frames.size()))
    throw IoError("store payload truncated: " + path);
  return store;
}

// Plain PBM (P1) for eyeballing single frames.
inline void write_pbm(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open pbm for writing: " + path);
  os << "P1\n" << img.width << " " << img.height << "\n";
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) os << (img.at(r, c) ? '1' : '0');
    os << "\n";
  }
}

}  // namespace comporth
