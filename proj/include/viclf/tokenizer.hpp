#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "viclf/core_types.hpp"

namespace viclf {

/// Flat patch palette standing in for a VQGAN codebook. Row k is the
/// flattened (patch, patch, 3) content of token k.
struct Codebook {
  Eigen::MatrixXd entries;
  int patch_size = 8;

  int size() const { return static_cast<int>(entries.rows()); }
};

struct TokenGrid {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<int> tokens;  // row-major

  int at(int r, int c) const { return tokens[static_cast<std::size_t>(r) * grid_w + c]; }
  bool operator==(const TokenGrid& other) const = default;
};

inline constexpr int kKMeansIterations = 25;

/// k-means (k-means++ seeding, fixed iteration count) over every patch of
/// every image. Throws ConfigError if fewer than `vocab` distinct patches.
Codebook fit_codebook(const std::vector<Image>& images, int vocab, int patch_size,
                      std::uint64_t seed);

/// Index of the nearest entry to one flattened patch; ties go to the lowest index.
int nearest_entry(const Codebook& cb, const Eigen::Ref<const Eigen::RowVectorXd>& patch);

TokenGrid encode(const Image& image, const Codebook& cb);
Image decode(const TokenGrid& tokens, const Codebook& cb);

}  // namespace viclf
