#pragma once

// Neural disentanglement metrics: a plug-in histogram MI matrix over
// (latent unit, generative factor) pairs, MIG and MIR on top of it,
// Pareto-front selection, and a permutation-tested Pearson correlation.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/corpus.hpp"
#include "comporth/error.hpp"
#include "comporth/rng.hpp"
#include "comporth/tensor.hpp"

namespace comporth {

struct MIMatrix {
  int n_units = 0;
  int n_factors = 0;
  std::vector<double> mi;  // row-major [n_units x n_factors], nats
  std::vector<double> factor_entropy;
  std::vector<std::string> factor_names;
  std::vector<bool> constant_unit;  // flagged rows with MI defined as 0

  double at(int unit, int factor) const { return mi[static_cast<size_t>(unit) * n_factors + factor]; }

  nlohmann::json to_json() const {
    return {{"n_units", n_units},
            {"n_factors", n_factors},
            {"mi", mi},
            {"factor_entropy", factor_entropy},
            {"factor_names", factor_names},
            {"constant_unit", constant_unit}};
  }
};

// Discrete per-image factor values, coded 0..levels-1.
struct FactorSet {
  std::vector<std::string> names;
  std::vector<std::vector<int>> values;  // [factor][sample]
  std::vector<int> levels;

  size_t n_samples() const { return values.empty() ? 0 : values[0].size(); }

  void add(std::string name, std::vector<int> v) {
    int mx = 0;
    for (int x : v) {
      if (x < 0) throw ConfigError("FactorSet: negative code in " + name);
      mx = std::max(mx, x);
    }
    if (!values.empty() && v.size() != values[0].size())
      throw ConfigError("FactorSet: ragged factor " + name);
    names.push_back(std::move(name));
    levels.push_back(mx + 1);
    values.push_back(std::move(v));
  }

  // Surface factors over any subset of the manifest.
  static FactorSet surface(const std::vector<ManifestRow>& manifest,
                           const std::vector<long>& ids) {
    auto code = [](const std::vector<int>& sorted_levels, int v) {
      return static_cast<int>(std::lower_bound(sorted_levels.begin(), sorted_levels.end(), v) -
                              sorted_levels.begin());
    };
    std::vector<int> xs, ys, sps, lens;
    for (const ManifestRow& r : manifest) {
      xs.push_back(r.x_shift);
      ys.push_back(r.y_shift);
      sps.push_back(r.spacing);
      lens.push_back(r.length);
    }
    auto uniq = [](std::vector<int> v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      return v;
    };
    const auto ux = uniq(xs), uy = uniq(ys), us = uniq(sps), ul = uniq(lens);
    FactorSet f;
    std::vector<int> cx, cy, cs, cl;
    for (long id : ids) {
      const ManifestRow& r = manifest[static_cast<size_t>(id)];
      cx.push_back(code(ux, r.x_shift));
      cy.push_back(code(uy, r.y_shift));
      cs.push_back(code(us, r.spacing));
      cl.push_back(code(ul, r.length));
    }
    f.add("x_shift", std::move(cx));
    f.add("y_shift", std::move(cy));
    f.add("spacing", std::move(cs));
    f.add("length", std::move(cl));
    return f;
  }

  // Word-identity scheme: letter at positions 1..max_len, over ids whose
  // words all have exactly max_len letters.
  static FactorSet compositional(const std::vector<ManifestRow>& manifest,
                                 const std::vector<long>& ids, int word_len,
                                 const std::vector<char>& alphabet) {
    FactorSet f;
    for (int pos = 1; pos <= word_len; ++pos) {
      std::vector<int> codes;
      for (long id : ids) {
        const ManifestRow& r = manifest[static_cast<size_t>(id)];
        if (r.length != word_len)
          throw ConfigError("compositional factors: id " + std::to_string(id) +
                            " has length " + std::to_string(r.length));
        const char c = r.word[static_cast<size_t>(pos - 1)];
        const auto it = std::find(alphabet.begin(), alphabet.end(), c);
        if (it == alphabet.end()) throw ConfigError("compositional factors: unknown letter");
        codes.push_back(static_cast<int>(it - alphabet.begin()));
      }
      f.add("letter@pos" + std::to_string(pos), std::move(codes));
    }
    return f;
  }
};

namespace detail {

inline double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

}  // namespace detail

// Latent means binned into `bins` equal-width bins over their observed
// range, then plug-in discrete MI against every factor. Constant units
// get MI 0 and a flag.
inline MIMatrix mi_matrix(const Tensor<float>& latents, const FactorSet& factors, int bins = 20) {
  if (latents.shape.size() != 2)
    throw ShapeError("mi_matrix: latents must be [N,units], got " + shape_string(latents.shape));
  const long n = latents.shape[0], units = latents.shape[1];
  if (factors.values.empty()) throw ConfigError("mi_matrix: no factors");
  if (factors.n_samples() != static_cast<size_t>(n))
    throw ConfigError("mi_matrix: " + std::to_string(factors.n_samples()) + " factor rows vs " +
                      std::to_string(n) + " latent rows");
  if (bins < 2) throw ConfigError("mi_matrix: bins < 2");

  MIMatrix M;
  M.n_units = static_cast<int>(units);
  M.n_factors = static_cast<int>(factors.values.size());
  M.factor_names = factors.names;
  M.mi.assign(static_cast<size_t>(units) * M.n_factors, 0.0);
  M.constant_unit.assign(static_cast<size_t>(units), false);

  for (int k = 0; k < M.n_factors; ++k) {
    std::vector<double> pv(static_cast<size_t>(factors.levels[static_cast<size_t>(k)]), 0.0);
    for (int v : factors.values[static_cast<size_t>(k)]) pv[static_cast<size_t>(v)] += 1.0 / n;
    M.factor_entropy.push_back(detail::entropy(pv));
  }

  std::vector<int> bin_of(static_cast<size_t>(n));
  for (long j = 0; j < units; ++j) {
    float lo = latents[j], hi = latents[j];
    for (long i = 0; i < n; ++i) {
      const float x = latents[i * units + j];
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi <= lo) {
      M.constant_unit[static_cast<size_t>(j)] = true;
      continue;  // MI defined as 0 for this row
    }
    const double width = (static_cast<double>(hi) - lo) / bins;
    for (long i = 0; i < n; ++i) {
      int b = static_cast<int>((latents[i * units + j] - lo) / width);
      bin_of[static_cast<size_t>(i)] = std::clamp(b, 0, bins - 1);
    }
    std::vector<double> pb(static_cast<size_t>(bins), 0.0);
    for (int b : bin_of) pb[static_cast<size_t>(b)] += 1.0 / n;
    for (int k = 0; k < M.n_factors; ++k) {
      const int levels = factors.levels[static_cast<size_t>(k)];
      std::vector<double> joint(static_cast<size_t>(bins) * levels, 0.0);
      const std::vector<int>& vals = factors.values[static_cast<size_t>(k)];
      for (long i = 0; i < n; ++i)
        joint[static_cast<size_t>(bin_of[static_cast<size_t>(i)]) * levels +
              vals[static_cast<size_t>(i)]] += 1.0 / n;
      std::vector<double> pv(static_cast<size_t>(levels), 0.0);
      for (int b = 0; b < bins; ++b)
        for (int v = 0; v < levels; ++v) pv[static_cast<size_t>(v)] += joint[static_cast<size_t>(b) * levels + v];
      double mi = 0;
      for (int b = 0; b < bins; ++b)
        for (int v = 0; v < levels; ++v) {
          const double pbv = joint[static_cast<size_t>(b) * levels + v];
          if (pbv > 0) mi += pbv * std::log(pbv / (pb[static_cast<size_t>(b)] * pv[static_cast<size_t>(v)]));
        }
      M.mi[static_cast<size_t>(j) * M.n_factors + k] = mi;
    }
  }
  return M;
}

// Mean over factors of the normalized gap between the two most
// informative units.
inline double mig(const MIMatrix& M) {
  if (M.n_units < 2) throw ConfigError("mig: need at least 2 latent units");
  double sum = 0;
  int used = 0;
  for (int k = 0; k < M.n_factors; ++k) {
    const double H = M.factor_entropy[static_cast<size_t>(k)];
    if (H <= 0) continue;  // degenerate factor, excluded
    double best = -1, second = -1;
    for (int j = 0; j < M.n_units; ++j) {
      const double v = M.at(j, k);
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    sum += (best - second) / H;
    ++used;
  }
  if (used == 0) throw ConfigError("mig: all factors have zero entropy");
  return sum / used;
}

// Per-unit concentration of MI on one factor, over units whose total MI
// clears the activity threshold, normalized so that one-factor units
// score 1 and uniform units score 0. Threshold < 0 selects the default
// of 1% of the largest factor entropy.
inline double mir(const MIMatrix& M, double activity_threshold = -1) {
  if (M.n_factors < 2) throw ConfigError("mir: undefined for a single factor");
  if (activity_threshold < 0) {
    double hmax = 0;
    for (double h : M.factor_entropy) hmax = std::max(hmax, h);
    activity_threshold = 0.01 * hmax;
  }
  const double K = M.n_factors;
  double sum = 0;
  int active = 0;
  for (int j = 0; j < M.n_units; ++j) {
    double total = 0, best = 0;
    for (int k = 0; k < M.n_factors; ++k) {
      const double v = M.at(j, k);
      total += v;
      best = std::max(best, v);
    }
    if (total <= activity_threshold) continue;
    sum += best / total;
    ++active;
  }
  if (active == 0) throw ConfigError("mir: no active units above threshold");
  const double rbar = sum / active;
  return (rbar - 1.0 / K) / (1.0 - 1.0 / K);
}

// Indices of points not dominated on (loss, score): lower loss and
// higher score both weakly, one strictly. Stable order.
inline std::vector<size_t> pareto_front(const std::vector<std::array<double, 2>>& points) {
  std::vector<size_t> front;
  for (size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < points.size() && !dominated; ++j) {
      if (j == i) continue;
      const bool weakly = points[j][0] <= points[i][0] && points[j][1] >= points[i][1];
      const bool strictly = points[j][0] < points[i][0] || points[j][1] > points[i][1];
      if (weakly && strictly) dominated = true;
    }
    if (!dominated) front.push_back(i);
  }
  return front;
}

struct PearsonResult {
  double rho = 0;
  double p_value = 1;
};

// Two-sided permutation test; exact under exchangeability.
inline PearsonResult pearson_corr(const std::vector<double>& x, const std::vector<double>& y,
                                  int permutations = 10000, uint64_t seed = 99) {
  if (x.size() != y.size()) throw ConfigError("pearson_corr: size mismatch");
  const size_t n = x.size();
  if (n < 3) throw ConfigError("pearson_corr: need at least 3 points");
  auto rho_of = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < n; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) throw ConfigError("pearson_corr: zero variance");
    return sab / std::sqrt(saa * sbb);
  };
  PearsonResult res;
  res.rho = rho_of(x, y);
  const double target = std::abs(res.rho);
  CounterRng rng(seed);
  std::vector<double> perm = y;
  long hits = 0;
  for (int it = 0; it < permutations; ++it) {
    rng.shuffle(perm);
    if (std::abs(rho_of(x, perm)) >= target) ++hits;
  }
  res.p_value = static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
  return res;
}

}  // namespace comporth
