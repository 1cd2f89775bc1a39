#pragma once

#include <cstdint>
#include <vector>

#include "viclf/backbone.hpp"
#include "viclf/core_types.hpp"
#include "viclf/nn.hpp"
#include "viclf/tokenizer.hpp"

namespace viclf {

/// One fused prompt: a pixel-space image and a continuous label image.
struct FusedPair {
  Image image;
  Image label;
};

struct PromptGeneratorConfig {
  int patch_size = 8;
  int attn_dim = 32;
  double attn_init_std = 0.15;

  void validate() const;
  bool operator==(const PromptGeneratorConfig& other) const = default;
};

/// Single-head cross-attention pooler. Query patches attend over the
/// patches of every group image; the same attention weights pool the group
/// images and the group labels. Each pooled value v is refined by
/// v + v(1 - v) tanh(z), which stays in [0, 1] and is the identity when the
/// z projections are zero.
class PromptGenerator {
 public:
  PromptGeneratorConfig config;
  nn::Linear q, k;           // patch -> attn_dim
  nn::Param img_w, img_u;    // z_img = v_img img_w + query img_u + img_c
  nn::Param img_c;
  nn::Param lbl_w, lbl_u;    // z_lbl = v_lbl lbl_w + v_img lbl_u + lbl_c
  nn::Param lbl_c;

  /// Attention projections random (k starts equal to q); refinement heads zero.
  static PromptGenerator create(const PromptGeneratorConfig& cfg, std::uint64_t seed);

  nn::ParamList params();
  std::vector<nn::NamedConstParam> params() const;
  std::uint64_t hash() const;
};

struct CondenseCache {
  nn::Mat query;      // (T x P)
  nn::Mat values;     // [group images | group labels], (M*T x 2P)
  nn::Mat q, k;
  nn::AttentionCache attn;
  nn::Mat v_img, v_lbl;
  nn::Mat t_img, t_lbl;  // tanh(z)
};

/// Group members in the canonical order condense uses (ascending id, then
/// pixel content), which makes the result independent of input order.
std::vector<SupportPair> canonical_order(std::vector<SupportPair> group);

FusedPair condense(const std::vector<SupportPair>& group, const Image& query,
                   const PromptGenerator& pg, CondenseCache* cache = nullptr);
/// Accumulates parameter gradients given gradients w.r.t. the fused image
/// and label patch matrices (T x P, row-major patch order).
void condense_backward(PromptGenerator& pg, const CondenseCache& cache, const nn::Mat& d_image,
                       const nn::Mat& d_label);

/// [[fused image, fused label], [query, mask fill]].
Canvas build_fused_canvas(const FusedPair& fp, const Image& query, const CanvasConfig& cfg);

/// Mean squared pixel error between the fused image and the query.
double alignment_loss(const Image& fused_image, const Image& query);
/// (1 - lambda) * alignment + lambda * masked CE.
double pg_loss(const FusedPair& fp, const Image& query, const TokenLogits& logits,
               const TokenGrid& target, const std::vector<int>& mask, double lambda);

struct PGTrainConfig {
  double lambda = 0.9;
  double lr = 0.05;
  int epochs = 10;
  int batch = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;

  void validate() const;
  bool operator==(const PGTrainConfig& other) const = default;
};

/// A retrieved group, its query and the query's ground-truth label.
struct PGSample {
  std::vector<SupportPair> group;
  Image query;
  Image label;
};

/// Canvas tokens whose bottom-right quadrant is the encoded ground truth.
TokenGrid label_target(const Image& query, const Image& label, const Codebook& cb,
                       const CanvasConfig& cfg);

/// Loss of one sample through condense and the backbone. When `backward`
/// is set, gradients are accumulated into pg (and into `scratch`, which is
/// a throwaway copy of the frozen backbone).
double pg_sample_loss(PromptGenerator& pg, Backbone& scratch, const PGSample& sample,
                      const TokenGrid& target, double lambda, bool backward);

struct PGTrainResult {
  PromptGenerator weights;
  std::vector<double> loss_trace;
};

/// Optimizes the prompt generator only; `backbone` is read, never written.
PGTrainResult train_prompt_generator(const std::vector<PGSample>& samples,
                                     const Backbone& backbone, const Codebook& cb,
                                     const PromptGeneratorConfig& pg_cfg,
                                     const PGTrainConfig& cfg);

}  // namespace viclf
