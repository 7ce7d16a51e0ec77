#include "comporth/renderer.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "comporth/corpus.hpp"

using namespace comporth;

namespace {

FactorAssignment assign(const std::string& letters, int x, int y, int sp) {
  return {{letters, word_index(letters, {'A', 'B'}, 5)}, x, y, sp};
}

struct Bbox {
  int top = 0, bottom = -1, left = 0, right = -1;
  bool empty = true;
};

Bbox lit_bbox(const Image& img) {
  Bbox b;
  b.top = img.height;
  b.left = img.width;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      if (img.at(r, c)) {
        b.empty = false;
        b.top = std::min(b.top, r);
        b.bottom = std::max(b.bottom, r);
        b.left = std::min(b.left, c);
        b.right = std::max(b.right, c);
      }
  return b;
}

long lit_count(const Image& img) {
  long n = 0;
  for (uint8_t p : img.pixels) n += p != 0;
  return n;
}

}  // namespace

TEST(RendererTest, SingleGlyphCentering) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  const Image img = render(assign("A", 0, 0, 0), glyphs, canvas);
  const Bbox b = lit_bbox(img);
  ASSERT_FALSE(b.empty);
  // 7x10 glyph on 64x64: box starts at floor((64-7)/2), floor((64-10)/2)
  EXPECT_EQ(b.left, 28);
  EXPECT_EQ(b.right, 34);
  EXPECT_EQ(b.top, 27);
  EXPECT_EQ(b.bottom, 36);
}

TEST(RendererTest, MirrorSymmetryFollowsGlyph) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  auto bbox_mirror_symmetric = [](const Image& img) {
    const Bbox b = lit_bbox(img);
    for (int r = b.top; r <= b.bottom; ++r)
      for (int c = b.left; c <= b.right; ++c)
        if (img.at(r, c) != img.at(r, b.right - (c - b.left))) return false;
    return true;
  };
  EXPECT_TRUE(bbox_mirror_symmetric(render(assign("A", 0, 0, 0), glyphs, canvas)));
  EXPECT_FALSE(bbox_mirror_symmetric(render(assign("B", 0, 0, 0), glyphs, canvas)));
}

TEST(RendererTest, UnitShiftTranslatesExactly) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  const Image base = render(assign("AB", 0, 0, 0), glyphs, canvas);
  const Image moved = render(assign("AB", 1, 1, 0), glyphs, canvas);
  // one pixel right, one pixel up
  for (int r = 0; r < canvas.height; ++r)
    for (int c = 0; c < canvas.width; ++c) {
      const int src_r = r + 1, src_c = c - 1;
      const uint8_t expect = (src_r >= 0 && src_r < canvas.height && src_c >= 0 &&
                              src_c < canvas.width)
                                 ? base.at(src_r, src_c)
                                 : 0;
      ASSERT_EQ(moved.at(r, c), expect) << "pixel (" << r << "," << c << ")";
    }
}

TEST(RendererTest, TranslationEquivariance) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  const Image base = render(assign("ABBA", 0, 0, 1), glyphs, canvas);
  for (int dx = -4; dx <= 4; dx += 2) {
    for (int dy = -4; dy <= 4; dy += 2) {
      const Image moved = render(assign("ABBA", dx, dy, 1), glyphs, canvas);
      for (int r = 0; r < canvas.height; ++r)
        for (int c = 0; c < canvas.width; ++c) {
          const int src_r = r + dy, src_c = c - dx;
          const uint8_t expect = (src_r >= 0 && src_r < canvas.height && src_c >= 0 &&
                                  src_c < canvas.width)
                                     ? base.at(src_r, src_c)
                                     : 0;
          ASSERT_EQ(moved.at(r, c), expect) << "d=(" << dx << "," << dy << ")";
        }
    }
  }
}

TEST(RendererTest, ExtremeAssignmentStaysInBoundsWithoutOverlap) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  const Image img = render(assign("BBBBB", 4, -4, 2), glyphs, canvas);
  const Bbox b = lit_bbox(img);
  EXPECT_LE(b.right, canvas.width - 1);
  // no overlap: lit mass is exactly five single glyphs
  const long single = lit_count(render(assign("B", 0, 0, 0), glyphs, canvas));
  EXPECT_EQ(lit_count(img), 5 * single);
}

TEST(RendererTest, SpacingMonotonicity) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  for (const std::string& word : {"AB", "BAB", "ABABA"}) {
    int last_width = -1;
    for (int sp = -2; sp <= 2; ++sp) {
      const Bbox b = lit_bbox(render(assign(word, 0, 0, sp), glyphs, canvas));
      const int width = b.right - b.left + 1;
      EXPECT_GE(width, last_width) << word << " at spacing " << sp;
      last_width = width;
    }
  }
}

TEST(RendererTest, AllWordsDistinctAtZeroAssignment) {
  const GlyphSet glyphs = GlyphSet::builtin();
  const Canvas canvas;
  const auto words = enumerate_words({'A', 'B'}, 5);
  std::set<std::vector<uint8_t>> seen;
  for (const Word& w : words) {
    Image img = render({w, 0, 0, 0}, glyphs, canvas);
    EXPECT_TRUE(seen.insert(img.pixels).second) << "duplicate render for " << w.letters;
  }
}

TEST(RendererTest, BoundsErrors) {
  const GlyphSet glyphs = GlyphSet::builtin();
  EXPECT_THROW(render(assign("BBBBB", 12, 0, 2), glyphs, Canvas{}), RenderBoundsError);
  EXPECT_THROW(render(assign("AA", 0, 0, 0), glyphs, Canvas{10, 10}), RenderBoundsError);
  GlyphSet tight = GlyphSet::builtin();
  tight.default_gap = 0;
  EXPECT_THROW(render(assign("AA", 0, 0, -1), tight, Canvas{}), RenderBoundsError);
  // a single glyph has no gap to violate
  EXPECT_NO_THROW(render(assign("A", 0, 0, -1), tight, Canvas{}));
}

TEST(RendererTest, DefaultGridRendersCompletely) {
  const FactorGrid grid = FactorGrid::defaults();
  const ImageStore store = generate_dataset(grid, GlyphSet::builtin(), Canvas{});
  EXPECT_EQ(store.count, 25110);
  EXPECT_EQ(store.frames.size(), 25110u * 64 * 64);
}

TEST(RendererTest, SingletonGridDistinctFrames) {
  FactorGrid grid = FactorGrid::defaults();
  grid.x_shifts = {0};
  grid.y_shifts = {0};
  grid.spacings = {0};
  const ImageStore store = generate_dataset(grid, GlyphSet::builtin(), Canvas{});
  ASSERT_EQ(store.count, 62);
  std::set<std::vector<uint8_t>> seen;
  for (long i = 0; i < store.count; ++i)
    EXPECT_TRUE(seen.insert(store.image(i).pixels).second);
}

TEST(RendererTest, GenerationIsDeterministic) {
  FactorGrid grid = FactorGrid::defaults();
  grid.max_length = 3;
  const ImageStore a = generate_dataset(grid, GlyphSet::builtin(), Canvas{}, 2);
  const ImageStore b = generate_dataset(grid, GlyphSet::builtin(), Canvas{}, 1);
  EXPECT_EQ(a.frames, b.frames);
}

TEST(RendererTest, StoreRoundTrip) {
  FactorGrid grid = FactorGrid::defaults();
  grid.max_length = 2;
  const ImageStore store = generate_dataset(grid, GlyphSet::builtin(), Canvas{});
  const std::string path = testing::TempDir() + "store_roundtrip.bin";
  write_store(store, path);
  const ImageStore back = read_store(path);
  EXPECT_EQ(back.canvas_height, store.canvas_height);
  EXPECT_EQ(back.canvas_width, store.canvas_width);
  EXPECT_EQ(back.count, store.count);
  EXPECT_EQ(back.frames, store.frames);
}

TEST(RendererTest, PbmExport) {
  const Image img = render(assign("AB", 0, 0, 0), GlyphSet::builtin(), Canvas{});
  const std::string path = testing::TempDir() + "frame.pbm";
  write_pbm(img, path);
  std::ifstream is(path);
  std::string magic;
  int w = 0, h = 0;
  is >> magic >> w >> h;
  EXPECT_EQ(magic, "P1");
  EXPECT_EQ(w, 64);
  EXPECT_EQ(h, 64);
}

TEST(RendererTest, GlyphSetValidation) {
  GlyphSet gs = GlyphSet::builtin();
  EXPECT_NO_THROW(gs.validate({'A', 'B'}));
  EXPECT_THROW(gs.validate({'A', 'C'}), ConfigError);
  gs.glyphs['B'] = gs.glyphs['A'];
  EXPECT_THROW(gs.validate({'A', 'B'}), ConfigError);
}
