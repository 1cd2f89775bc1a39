#pragma once

#include <vector>

#include <Eigen/Dense>

#include "viclf/backbone.hpp"
#include "viclf/core_types.hpp"

namespace viclf {

struct ImageEmbedding {
  Eigen::VectorXd vec;
  bool degenerate = false;  // zero feature mean; vec is all zeros
};

/// Mean final-block feature of the image tiled into every quadrant of a
/// canvas, L2-normalized.
ImageEmbedding embed_image(const Image& img, const Backbone& bb);

double cosine(const ImageEmbedding& a, const ImageEmbedding& b);

struct RankedEntry {
  SupportPair pair;
  double score = 0.0;
};

struct RankedSupport {
  std::vector<RankedEntry> entries;  // descending score, ties by ascending id
  int query_id = -1;

  int size() const { return static_cast<int>(entries.size()); }
};

/// Precomputed support embeddings so ranking many queries embeds each
/// support image once.
struct SupportIndex {
  std::vector<SupportPair> pairs;
  std::vector<ImageEmbedding> embeddings;
};

SupportIndex build_support_index(const std::vector<SupportPair>& support, const Backbone& bb);

RankedSupport rank_top_k(const ImageEmbedding& query, const SupportIndex& index, int k,
                         int query_id = -1);
RankedSupport select_top_k(const Image& query, const std::vector<SupportPair>& support, int k,
                           const Backbone& bb, int query_id = -1);

struct PromptGroups {
  std::vector<SupportPair> holistic;
  std::vector<SupportPair> high;
  std::vector<SupportPair> low;
};

/// holistic = all K, high = first k_g1, low = last k_g2.
PromptGroups mpgs_partition(const RankedSupport& ranked, int k_g1, int k_g2);

/// Splits the ranking into `count` contiguous, near-equal chunks (earlier
/// chunks take the remainder). count == 1 returns the whole ranking.
std::vector<std::vector<SupportPair>> split_even(const RankedSupport& ranked, int count);

}  // namespace viclf
