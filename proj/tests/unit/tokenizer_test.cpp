#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "viclf/tokenizer.hpp"

namespace viclf {
namespace {

Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.data()) v = u(rng);
  return img;
}

Codebook constant_codebook(std::initializer_list<double> levels, int patch) {
  Codebook cb;
  cb.patch_size = patch;
  cb.entries.resize(static_cast<Eigen::Index>(levels.size()), patch * patch * 3);
  int k = 0;
  for (double v : levels) cb.entries.row(k++).setConstant(v);
  return cb;
}

/// Image tiled with solid patches; color of each patch picked from `colors`.
Image palette_image(const std::vector<std::array<double, 3>>& colors, int grid, int patch,
                    std::mt19937_64& rng) {
  Image img(grid * patch, grid * patch);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const auto& col = colors[rng() % colors.size()];
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int ch = 0; ch < 3; ++ch) img.at(r * patch + y, c * patch + x, ch) = col[ch];
    }
  }
  return img;
}

TEST(FitCodebook, TwoLevelImagesGiveTwoConstantEntries) {
  std::mt19937_64 rng(1);
  std::vector<Image> images;
  for (int i = 0; i < 4; ++i) images.push_back(palette_image({{0, 0, 0}, {1, 1, 1}}, 4, 2, rng));
  const Codebook cb = fit_codebook(images, 2, 2, 11);
  ASSERT_EQ(cb.size(), 2);
  std::vector<double> firsts{cb.entries(0, 0), cb.entries(1, 0)};
  std::sort(firsts.begin(), firsts.end());
  EXPECT_EQ(firsts[0], 0.0);
  EXPECT_EQ(firsts[1], 1.0);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(cb.entries.row(k).minCoeff(), cb.entries.row(k).maxCoeff());
}

TEST(FitCodebook, DeterministicUnderSeed) {
  std::mt19937_64 rng(2);
  std::vector<Image> images;
  for (int i = 0; i < 3; ++i) images.push_back(random_image(8, 8, rng));
  const Codebook a = fit_codebook(images, 5, 4, 42);
  const Codebook b = fit_codebook(images, 5, 4, 42);
  EXPECT_EQ(a.entries, b.entries);
}

TEST(FitCodebook, RecoversSeparatedColors) {
  const std::vector<std::array<double, 3>> colors = {
      {0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.2, 0.2, 0.9}, {0.95, 0.9, 0.1}};
  std::mt19937_64 rng(3);
  std::vector<Image> images;
  for (int i = 0; i < 6; ++i) images.push_back(palette_image(colors, 4, 2, rng));
  const Codebook cb = fit_codebook(images, 4, 2, 5);
  for (const auto& col : colors) {
    double best = 1e9;
    for (int k = 0; k < 4; ++k) {
      double worst_channel = 0.0;
      for (int j = 0; j < cb.entries.cols(); ++j) {
        worst_channel = std::max(worst_channel, std::abs(cb.entries(k, j) - col[j % 3]));
      }
      best = std::min(best, worst_channel);
    }
    EXPECT_LT(best, 1e-6);
  }
}

TEST(FitCodebook, RejectsVocabularyLargerThanDistinctPatches) {
  std::mt19937_64 rng(4);
  std::vector<Image> images{palette_image({{0, 0, 0}, {1, 1, 1}}, 4, 2, rng)};
  EXPECT_THROW(fit_codebook(images, 3, 2, 0), ConfigError);
}

TEST(Encode, ConstantImagesPickNearestLevel) {
  const Codebook cb = constant_codebook({1.0, 0.0}, 2);
  const TokenGrid zeros = encode(Image(4, 4, 0.0), cb);
  for (int t : zeros.tokens) EXPECT_EQ(t, 1);
  const TokenGrid point_four = encode(Image(4, 4, 0.4), cb);
  for (int t : point_four.tokens) EXPECT_EQ(t, 1);
}

TEST(Encode, TiesGoToLowestIndex) {
  const Codebook cb = constant_codebook({0.0, 1.0}, 2);
  for (int t : encode(Image(2, 2, 0.5), cb).tokens) EXPECT_EQ(t, 0);
}

TEST(Decode, TilesEntries) {
  const Codebook cb = constant_codebook({0.25, 0.75}, 2);
  const TokenGrid grid{2, 3, {1, 1, 1, 1, 1, 1}};
  EXPECT_EQ(decode(grid, cb), Image(4, 6, 0.75));
  TokenGrid bad{1, 1, {2}};
  EXPECT_THROW(decode(bad, cb), ConfigError);
}

TEST(Quantization, IdempotentAndNearestNeighbourOptimal) {
  std::mt19937_64 rng(5);
  std::vector<Image> train;
  for (int i = 0; i < 4; ++i) train.push_back(random_image(8, 8, rng));
  const Codebook cb = fit_codebook(train, 8, 2, 9);
  for (int trial = 0; trial < 10; ++trial) {
    const Image x = random_image(8, 8, rng);
    const TokenGrid t = encode(x, cb);
    const Image recon = decode(t, cb);
    EXPECT_EQ(encode(recon, cb), t);
    EXPECT_EQ(decode(encode(recon, cb), cb), recon);

    auto mse = [](const Image& a, const Image& b) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
      }
      return s / static_cast<double>(a.data().size());
    };
    const double ours = mse(recon, x);
    for (int k = 0; k < cb.size(); ++k) {
      TokenGrid fixed{t.grid_h, t.grid_w, std::vector<int>(t.tokens.size(), k)};
      EXPECT_LE(ours, mse(decode(fixed, cb), x) + 1e-15);
    }
  }
}

}  // namespace
}  // namespace viclf
