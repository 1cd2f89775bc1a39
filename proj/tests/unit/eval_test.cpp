#include "viclf/eval.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

namespace viclf {
namespace {

Image mask_from(const std::vector<std::vector<int>>& rows) {
  Image m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      for (int c = 0; c < 3; ++c) m.at(y, x, c) = rows[y][x];
    }
  }
  return m;
}

Image random_mask(int h, int w, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution on(p);
  Image m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = on(rng) ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) m.at(y, x, c) = v;
    }
  }
  return m;
}

TEST(Binarize, ThresholdIsInclusive) {
  EXPECT_EQ(binarize(Image(3, 3, 0.9)), Image(3, 3, 1.0));
  EXPECT_EQ(binarize(Image(3, 3, 0.5)), Image(3, 3, 1.0));
  EXPECT_EQ(binarize(Image(3, 3, 0.4999)), Image(3, 3, 0.0));
  Image mixed(1, 1);
  mixed.at(0, 0, 0) = 1.0;  // channel mean 1/3
  EXPECT_EQ(binarize(mixed).at(0, 0, 2), 0.0);
  std::mt19937_64 rng(1);
  const Image m = random_mask(6, 5, 0.4, rng);
  EXPECT_EQ(binarize(m), m);
  EXPECT_THROW(binarize(m, 1.0), ConfigError);
}

TEST(Miou, HandCases) {
  // 2 predicted cells, 4 ground-truth cells, overlap 2.
  const Image gt = mask_from({{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  const Image pred = mask_from({{1, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  EXPECT_DOUBLE_EQ(miou(pred, gt), 2.0 / 4.0);
  // Same sizes shifted so only 2 cells overlap out of a union of 6.
  const Image shifted = mask_from({{0, 1, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  EXPECT_NEAR(miou(shifted, gt), 2.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(miou(gt, gt), 1.0);
  EXPECT_DOUBLE_EQ(miou(Image(4, 4), Image(4, 4)), 1.0);
  const Image corner = mask_from({{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 1}});
  EXPECT_DOUBLE_EQ(miou(corner, gt), 0.0);
  EXPECT_THROW(miou(Image(4, 4), Image(4, 5)), ShapeError);
}

TEST(Miou, MatchesCountingOracleAndIsSymmetric) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Image a = random_mask(8, 8, 0.3, rng);
    const Image b = random_mask(8, 8, 0.3, rng);
    int inter = 0;
    int uni = 0;
    for (std::size_t k = 0; k < a.data().size(); k += 3) {
      inter += a.data()[k] > 0.5 && b.data()[k] > 0.5;
      uni += a.data()[k] > 0.5 || b.data()[k] > 0.5;
    }
    const double expect = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    EXPECT_NEAR(miou(a, b), expect, 1e-12);
    EXPECT_EQ(miou(a, b), miou(b, a));
    EXPECT_GE(miou(a, b), 0.0);
    EXPECT_LE(miou(a, b), 1.0);
  }
}

TEST(Mse, HandCases) {
  EXPECT_EQ(mse(Image(2, 2, 0.3), Image(2, 2, 0.3)), 0.0);
  EXPECT_EQ(mse(Image(2, 2, 0.0), Image(2, 2, 1.0)), 1.0);
  EXPECT_EQ(mse(Image(2, 2, 0.0), Image(2, 2, 0.5)), 0.25);
  Image a(1, 2, 0.0);
  a.at(0, 1, 2) = 0.6;
  EXPECT_NEAR(mse(a, Image(1, 2)), 0.36 / 6.0, 1e-15);
  EXPECT_EQ(mse(a, Image(1, 2)), mse(Image(1, 2), a));
  EXPECT_THROW(mse(Image(1, 2), Image(2, 1)), ShapeError);
}

TEST(Report, AggregatesAreMeansOfEmittedScores) {
  MetricReport r;
  r.method = "top1";
  r.metric = "miou";
  r.config_hash = "00000000000000ab";
  r.seeds.push_back({0, {{10, 0.5}, {11, 1.0}}});
  r.seeds.push_back({1, {{10, 0.0}, {11, 0.5}}});
  EXPECT_DOUBLE_EQ(r.seeds[0].mean(), 0.75);
  EXPECT_DOUBLE_EQ(r.mean(), 0.5);
  EXPECT_DOUBLE_EQ(r.std_over_seeds(), 0.25);

  const std::string jl = to_jsonl(r);
  double total = 0.0;
  int lines = 0;
  std::istringstream in(jl);
  for (std::string line; std::getline(in, line); ++lines) {
    total += nlohmann::json::parse(line).at("score").get<double>();
  }
  EXPECT_EQ(lines, 4);
  EXPECT_DOUBLE_EQ(total / 4.0, r.mean());
  EXPECT_EQ(jl.find("wall"), std::string::npos);
  r.wall_clock_s = 3.0;
  EXPECT_EQ(to_jsonl(r), jl);
  EXPECT_EQ(summary_json(r).at("mean").get<double>(), 0.5);
  EXPECT_NE(to_csv({r}).find("top1,,miou,0.500000,0.250000,2"), std::string::npos);
}

TEST(Report, MethodNamesRoundTrip) {
  for (const char* name : {"top1", "condenser_single", "multi_full", "multi_only_g1", "multi_no_residual"}) {
    EXPECT_EQ(MethodId::parse(name).name(), name);
  }
  EXPECT_EQ(MethodId::parse("multi_random_guidance").variant, AblationVariant::kRandomGuidance);
  EXPECT_THROW(MethodId::parse("oracle"), ConfigError);
}

}  // namespace
}  // namespace viclf
