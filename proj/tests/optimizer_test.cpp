#include "comporth/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "comporth/tensor.hpp"

using namespace comporth;

namespace {

ParamStore<double> small_store() {
  ParamStore<double> s;
  s.add("w", seeded_normal<double>({3, 4}, 1));
  s.add("b", seeded_normal<double>({4}, 2));
  return s;
}

}  // namespace

TEST(AdamTest, ZeroGradientLeavesParamsUnchanged) {
  ParamStore<double> s = small_store();
  const auto before = s.param("w").v;
  adam_step(s, AdamConfig{1e-3});
  EXPECT_EQ(s.param("w").v, before);
  EXPECT_EQ(s.step, 1);
}

TEST(AdamTest, FirstStepMagnitudeIsLearningRate) {
  ParamStore<double> s = small_store();
  const auto before = s.param("w").v;
  for (long i = 0; i < s.grad("w").size(); ++i) s.grad("w")[i] = (i % 2) ? 2.5 : -0.3;
  adam_step(s, AdamConfig{1e-3});
  for (long i = 0; i < s.param("w").size(); ++i) {
    const double delta = std::abs(s.param("w")[i] - before[static_cast<size_t>(i)]);
    EXPECT_NEAR(delta, 1e-3, 1e-3 * 1e-6);
  }
}

TEST(AdamTest, MatchesReferenceImplementation) {
  // independent scalar reference, run coordinate by coordinate
  ParamStore<double> s;
  s.add("p", seeded_normal<double>({5}, 3));
  std::vector<double> ref = s.param("p").v;
  std::vector<double> m(5, 0), v(5, 0);
  const AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8};
  for (int t = 1; t <= 10; ++t) {
    auto g = seeded_normal<double>({5}, 100 + t);
    s.grads.at("p") = g;
    adam_step(s, cfg);
    for (int i = 0; i < 5; ++i) {
      m[static_cast<size_t>(i)] = 0.9 * m[static_cast<size_t>(i)] + 0.1 * g[i];
      v[static_cast<size_t>(i)] = 0.999 * v[static_cast<size_t>(i)] + 0.001 * g[i] * g[i];
      const double mhat = m[static_cast<size_t>(i)] / (1 - std::pow(0.9, t));
      const double vhat = v[static_cast<size_t>(i)] / (1 - std::pow(0.999, t));
      ref[static_cast<size_t>(i)] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(s.param("p")[i], ref[static_cast<size_t>(i)], 1e-12);
}

TEST(AdamTest, DeterministicAcrossRuns) {
  ParamStore<double> a = small_store(), b = small_store();
  const AdamConfig cfg{5e-3};
  for (int t = 0; t < 7; ++t) {
    auto g = seeded_normal<double>({3, 4}, 50 + t);
    a.grads.at("w") = g;
    b.grads.at("w") = g;
    adam_step(a, cfg);
    adam_step(b, cfg);
  }
  EXPECT_EQ(a.param("w").v, b.param("w").v);
  EXPECT_EQ(a.param("b").v, b.param("b").v);
}

TEST(AdamTest, RejectsNonPositiveLearningRate) {
  ParamStore<double> s = small_store();
  EXPECT_THROW(adam_step(s, AdamConfig{0.0}), ConfigError);
}

TEST(ParamStoreTest, AccumulateChecksShapes) {
  ParamStore<double> s = small_store();
  EXPECT_THROW(s.accumulate("w", seeded_normal<double>({4, 3}, 9)), ShapeError);
  EXPECT_THROW(s.add("w", seeded_normal<double>({1}, 9)), ConfigError);
}
