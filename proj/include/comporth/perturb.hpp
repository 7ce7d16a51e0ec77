#pragma once

// Latent-unit perturbation: set one unit of the eval-mode code to a range
// of levels, decode after each, and lay the reconstructions out as a
// samples x levels panel.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "comporth/betavae.hpp"
#include "comporth/error.hpp"
#include "comporth/renderer.hpp"

namespace comporth {

struct TraversalGrid {
  int unit = 0;
  std::vector<long> sample_ids;
  std::vector<double> levels;  // strictly increasing; levels[baseline_col] is the baseline
  int baseline_col = 0;
  std::vector<Image> images;  // row-major samples x levels

  const Image& at(size_t row, size_t col) const { return images[row * levels.size() + col]; }
};

enum class PerturbMode { kAbsolute, kAdditive };

inline std::vector<double> default_levels() {
  // +/-3 prior standard deviations, 9 steps
  std::vector<double> v;
  for (int i = 0; i < 9; ++i) v.push_back(-3.0 + 0.75 * i);
  return v;
}

// At the baseline column the unit keeps its own encoded value; elsewhere
// it is set to the level (absolute mode) or shifted by it (additive).
template <typename T>
TraversalGrid perturb_unit(const BetaVae<T>& model, const ImageStore& store,
                           const std::vector<long>& ids, int unit,
                           const std::vector<double>& levels,
                           PerturbMode mode = PerturbMode::kAbsolute) {
  if (levels.empty()) throw ConfigError("perturb_unit: empty level list");
  for (size_t i = 1; i < levels.size(); ++i)
    if (levels[i] <= levels[i - 1])
      throw ConfigError("perturb_unit: levels must be strictly increasing");
  if (unit < 0 || unit >= model.config().latent_size)
    throw ConfigError("perturb_unit: unit " + std::to_string(unit) + " out of range [0," +
                      std::to_string(model.config().latent_size) + ")");
  if (ids.empty()) throw ConfigError("perturb_unit: no sample ids");
  const auto zero_it = std::find(levels.begin(), levels.end(), 0.0);
  if (zero_it == levels.end())
    throw ConfigError("perturb_unit: levels must include 0 (the baseline column)");

  TraversalGrid grid;
  grid.unit = unit;
  grid.sample_ids = ids;
  grid.levels = levels;
  grid.baseline_col = static_cast<int>(zero_it - levels.begin());

  const long L = model.config().latent_size;
  Tensor<T> batch = BetaVae<T>::make_batch(store, ids, 0, ids.size());
  LatentCode code = model.encode(batch);

  for (size_t row = 0; row < ids.size(); ++row) {
    for (size_t col = 0; col < levels.size(); ++col) {
      Tensor<T> z({1, L});
      for (long j = 0; j < L; ++j) z[j] = static_cast<T>(code.mu[static_cast<long>(row) * L + j]);
      const T base = z[unit];
      if (static_cast<int>(col) == grid.baseline_col)
        z[unit] = base;
      else
        z[unit] = mode == PerturbMode::kAbsolute ? static_cast<T>(levels[col])
                                                 : base + static_cast<T>(levels[col]);
      Tensor<T> probs = model.decode(z);
      Image img(store.canvas_height, store.canvas_width);
      for (long px = 0; px < store.frame_size(); ++px)
        img.pixels[static_cast<size_t>(px)] =
            static_cast<uint8_t>(std::lround(std::clamp(static_cast<double>(probs[px]), 0.0, 1.0) * 255.0));
      grid.images.push_back(std::move(img));
    }
  }
  return grid;
}

// Single PGM raster: rows = samples, columns = levels, 1px gray separators.
inline void emit_grid(const TraversalGrid& grid, const std::string& path) {
  if (grid.images.empty()) throw ConfigError("emit_grid: empty grid");
  const int h = grid.images[0].height, w = grid.images[0].width;
  const int rows = static_cast<int>(grid.sample_ids.size());
  const int cols = static_cast<int>(grid.levels.size());
  const int H = rows * h + (rows - 1);
  const int W = cols * w + (cols - 1);
  std::vector<uint8_t> canvas(static_cast<size_t>(H) * W, 128);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Image& img = grid.at(static_cast<size_t>(r), static_cast<size_t>(c));
      const int y0 = r * (h + 1), x0 = c * (w + 1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          canvas[static_cast<size_t>(y0 + y) * W + x0 + x] = img.at(y, x);
    }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open grid image for writing: " + path);
  os << "P5\n" << W << " " << H << "\n255\n";
  os.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
}

}  // namespace comporth
