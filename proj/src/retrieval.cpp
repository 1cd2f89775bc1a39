#include "viclf/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace viclf {

ImageEmbedding embed_image(const Image& img, const Backbone& bb) {
  const CanvasConfig& cfg = bb.config.canvas;
  if (img.height() != cfg.quadrant_h || img.width() != cfg.quadrant_w) {
    throw ShapeError("embed_image: image does not match quadrant size");
  }
  Canvas solo{compose_canvas(img, img, img, cfg).pixels, Quadrant::kBottomRight};
  solo.pixels.paste(img, cfg.quadrant_h, cfg.quadrant_w);

  FeatureSequence x = patch_embed(solo, bb);
  for (int i = 1; i <= bb.config.depth; ++i) x = run_block(i, x, bb);
  ImageEmbedding out;
  out.vec = x.features.colwise().mean().transpose();
  const double norm = out.vec.norm();
  if (!(norm > 1e-12)) {
    out.vec.setZero();
    out.degenerate = true;
  } else {
    out.vec /= norm;
  }
  return out;
}

double cosine(const ImageEmbedding& a, const ImageEmbedding& b) {
  if (a.vec.size() != b.vec.size()) throw ShapeError("embedding sizes differ");
  return a.vec.dot(b.vec);
}

SupportIndex build_support_index(const std::vector<SupportPair>& support, const Backbone& bb) {
  SupportIndex index;
  index.pairs = support;
  index.embeddings.reserve(support.size());
  for (const auto& p : support) index.embeddings.push_back(embed_image(p.image, bb));
  return index;
}

RankedSupport rank_top_k(const ImageEmbedding& query, const SupportIndex& index, int k,
                         int query_id) {
  const int n = static_cast<int>(index.pairs.size());
  if (k < 1 || k > n) {
    throw ConfigError("top-k needs 1 <= K <= |support| (K=" + std::to_string(k) +
                      ", |support|=" + std::to_string(n) + ")");
  }
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scores[i] = cosine(query, index.embeddings[i]);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.pairs[a].id < index.pairs[b].id;
  });
  RankedSupport ranked;
  ranked.query_id = query_id;
  for (int r = 0; r < k; ++r) ranked.entries.push_back({index.pairs[order[r]], scores[order[r]]});
  return ranked;
}

RankedSupport select_top_k(const Image& query, const std::vector<SupportPair>& support, int k,
                           const Backbone& bb, int query_id) {
  if (k < 1 || k > static_cast<int>(support.size())) {
    throw ConfigError("top-k needs 1 <= K <= |support|");
  }
  return rank_top_k(embed_image(query, bb), build_support_index(support, bb), k, query_id);
}

PromptGroups mpgs_partition(const RankedSupport& ranked, int k_g1, int k_g2) {
  const int k = ranked.size();
  if (k_g1 < 1 || k_g2 < 1 || k_g1 + k_g2 > k) {
    throw ConfigError("MPGS needs K_g1 >= 1, K_g2 >= 1 and K_g1+K_g2 <= K (got " +
                      std::to_string(k_g1) + ", " + std::to_string(k_g2) + ", K=" +
                      std::to_string(k) + ")");
  }
  PromptGroups g;
  for (const auto& e : ranked.entries) g.holistic.push_back(e.pair);
  g.high.assign(g.holistic.begin(), g.holistic.begin() + k_g1);
  g.low.assign(g.holistic.end() - k_g2, g.holistic.end());
  return g;
}

std::vector<std::vector<SupportPair>> split_even(const RankedSupport& ranked, int count) {
  const int k = ranked.size();
  if (count < 1 || count > k) throw ConfigError("group count must be in [1, K]");
  std::vector<std::vector<SupportPair>> out(static_cast<std::size_t>(count));
  int pos = 0;
  for (int g = 0; g < count; ++g) {
    const int len = k / count + (g < k % count ? 1 : 0);
    for (int j = 0; j < len; ++j) out[g].push_back(ranked.entries[pos++].pair);
  }
  return out;
}

}  // namespace viclf
