#include "viclf/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace viclf {

namespace {

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                        const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t count_distinct_rows(const Eigen::MatrixXd& rows, std::size_t stop_at) {
  std::vector<std::vector<double>> keys;
  keys.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    auto& key = keys.emplace_back(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index c = 0; c < rows.cols(); ++c) key[c] = rows(r, c);
  }
  std::sort(keys.begin(), keys.end());
  const auto end = std::unique(keys.begin(), keys.end());
  return std::min(static_cast<std::size_t>(end - keys.begin()), stop_at);
}

}  // namespace

Codebook fit_codebook(const std::vector<Image>& images, int vocab, int patch_size,
                      std::uint64_t seed) {
  if (vocab < 2) throw ConfigError("codebook size must be at least 2");
  if (images.empty()) throw ConfigError("no images to fit the codebook on");

  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index total = 0;
  for (const auto& img : images) {
    blocks.push_back(image_to_patches(img, patch_size));
    total += blocks.back().rows();
  }
  const int dim = patch_size * patch_size * Image::kChannels;
  Eigen::MatrixXd data(total, dim);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    data.middleRows(offset, b.rows()) = b;
    offset += b.rows();
  }
  if (count_distinct_rows(data, static_cast<std::size_t>(vocab)) <
      static_cast<std::size_t>(vocab)) {
    throw ConfigError("codebook size exceeds the number of distinct patches");
  }

  const Eigen::Index n = data.rows();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centroids(vocab, dim);

  // k-means++ seeding. Already-chosen points have zero weight, so duplicates
  // of a chosen patch are never picked twice.
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = data.row(pick(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = squared_distance(data.row(i), centroids.row(0));
  for (int k = 1; k < vocab; ++k) {
    std::discrete_distribution<Eigen::Index> weighted(d2.begin(), d2.end());
    centroids.row(k) = data.row(weighted(rng));
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data.row(i), centroids.row(k)));
    }
  }

  Codebook cb{centroids, patch_size};
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  const Eigen::VectorXd data_sq = data.rowwise().squaredNorm();
  for (int iter = 0; iter < kKMeansIterations; ++iter) {
    // Expanded squared distances; only used for the fitting iterations.
    Eigen::MatrixXd dist = -2.0 * data * cb.entries.transpose();
    dist.colwise() += data_sq;
    dist.rowwise() += cb.entries.rowwise().squaredNorm().transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      assign[i] = static_cast<int>(best);
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(vocab, dim);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(vocab), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.row(i);
      ++counts[assign[i]];
    }
    for (int k = 0; k < vocab; ++k) {
      if (counts[k] > 0) {
        cb.entries.row(k) = sums.row(k) / static_cast<double>(counts[k]);
        continue;
      }
      // Empty cluster: reseed at the point farthest from its centroid.
      Eigen::Index far = 0;
      double best = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(data.row(i), cb.entries.row(assign[i]));
        if (d > best) {
          best = d;
          far = i;
        }
      }
      cb.entries.row(k) = data.row(far);
      assign[far] = k;
    }
  }
  cb.entries = cb.entries.cwiseMax(0.0).cwiseMin(1.0);
  return cb;
}

int nearest_entry(const Codebook& cb, const Eigen::Ref<const Eigen::RowVectorXd>& patch) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = squared_distance(patch, cb.entries.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

TokenGrid encode(const Image& image, const Codebook& cb) {
  const Eigen::MatrixXd patches = image_to_patches(image, cb.patch_size);
  TokenGrid grid{image.height() / cb.patch_size, image.width() / cb.patch_size, {}};
  grid.tokens.reserve(static_cast<std::size_t>(patches.rows()));
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    grid.tokens.push_back(nearest_entry(cb, patches.row(r)));
  }
  return grid;
}

Image decode(const TokenGrid& tokens, const Codebook& cb) {
  if (tokens.tokens.size() != static_cast<std::size_t>(tokens.grid_h) * tokens.grid_w) {
    throw ShapeError("token grid size does not match its dimensions");
  }
  Eigen::MatrixXd patches(static_cast<Eigen::Index>(tokens.tokens.size()), cb.entries.cols());
  for (std::size_t i = 0; i < tokens.tokens.size(); ++i) {
    const int t = tokens.tokens[i];
    if (t < 0 || t >= cb.size()) throw ConfigError("token index out of codebook range");
    patches.row(static_cast<Eigen::Index>(i)) = cb.entries.row(t);
  }
  return patches_to_image(patches, tokens.grid_h * cb.patch_size, tokens.grid_w * cb.patch_size,
                          cb.patch_size);
}

}  // namespace viclf
