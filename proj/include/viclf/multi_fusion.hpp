#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "viclf/backbone.hpp"
#include "viclf/prompt_generator.hpp"
#include "viclf/retrieval.hpp"

namespace viclf {

/// Inclusive block range [n_down, n_up] after which FUSE runs. n_down == 0
/// encodes the empty range.
struct FusionRange {
  int n_down = 8;
  int n_up = 14;

  static FusionRange none() { return {0, 0}; }
  /// Range of `width` blocks centred on `center` (n_down = center - (width-1)/2),
  /// clipped to [1, depth]. width 0 gives the empty range.
  static FusionRange from_center_width(int center, int width, int depth);

  bool empty() const { return n_down == 0; }
  bool contains(int i) const { return !empty() && i >= n_down && i <= n_up; }
  int size() const { return empty() ? 0 : n_up - n_down + 1; }
  void validate(int depth) const;
  bool operator==(const FusionRange& other) const = default;
};

enum class AblationVariant {
  kFull,
  kOnlyG1,
  kOnlyG2,
  kG1AsMain,
  kG2AsMain,
  kRandomGuidance,
  kFreezeBackbone,
  kShared1Mlp,
  kShared2Mlp,
  kNoCrossAttention,
  kNoResidual,
};

std::string to_string(AblationVariant v);
AblationVariant variant_from_string(const std::string& name);
const std::vector<AblationVariant>& all_variants();

/// How a variant changes the inside of a FUSE step.
struct FuseOptions {
  bool shared_1mlp = false;  // Q, K and V all use the Q projection
  bool shared_2mlp = false;  // K and V share the K projection
  bool no_cross_attention = false;
  bool no_residual = false;
};

FuseOptions fuse_options(AblationVariant v);

struct FuseBlock {
  nn::LayerNorm ln_q, ln_k;
  nn::Linear q, k, v, o;
  int heads = 4;

  struct Cache {
    nn::Mat main;
    nn::Mat guidance;  // concatenated guidance tokens
    nn::LayerNorm::Cache ln_q, ln_k;
    nn::Mat q_in, k_in;
    nn::AttentionCache attn;
    nn::Mat attended;
  };

  FuseBlock() = default;
  FuseBlock(int dim, int heads);

  void collect(const std::string& prefix, nn::ParamList& out);
};

struct FuseParams {
  FusionRange range;
  std::vector<FuseBlock> blocks;  // blocks[j] serves backbone block range.n_down + j

  /// Q/K/V projections random, output projection zero.
  static FuseParams create(int dim, int heads, const FusionRange& range, std::uint64_t seed);

  FuseBlock& at(int i);
  const FuseBlock& at(int i) const;
  nn::ParamList params();
  std::vector<nn::NamedConstParam> params() const;
  std::uint64_t hash() const;
};

/// One FUSE step: mainstream tokens query the concatenation of every
/// guidance sequence, result projected and added residually.
nn::Mat fuse_step(const nn::Mat& main, const std::vector<const nn::Mat*>& guidance,
                  const FuseBlock& fb, const FuseOptions& opt, FuseBlock::Cache* cache = nullptr);
/// Accumulates FuseBlock gradients; returns dL/d(main). Guidance is frozen.
nn::Mat fuse_step_backward(FuseBlock& fb, const FuseBlock::Cache& cache, const FuseOptions& opt,
                           const nn::Mat& dout);
/// Checked form over feature sequences that must all come from block i.
FeatureSequence fuse_step(int i, const FeatureSequence& main, const FeatureSequence& g1,
                          const FeatureSequence& g2, const FuseParams& fp,
                          const FuseOptions& opt = {});

/// Per-branch guidance features; branches[b][i] is the output of block i
/// (index 0 unused when only fused blocks are kept).
struct Guidance {
  std::vector<std::vector<nn::Mat>> branches;
};

/// Runs every guidance canvas through the frozen auxiliary backbone,
/// keeping features for the blocks inside `range`.
Guidance guidance_features(const std::vector<Canvas>& canvases, const Backbone& aux,
                           const FusionRange& range);
/// Unit-Gaussian stand-in guidance, reproducible from (seed, sample_id).
Guidance random_guidance(int branches, const BackboneConfig& cfg, const FusionRange& range,
                         std::uint64_t seed, int sample_id);

struct GroupCanvases {
  Canvas g1, g2, gm;
};

/// Fused canvases for the high, low and holistic groups (frozen pg).
GroupCanvases build_group_canvases(const PromptGroups& groups, const Image& query,
                                   const PromptGenerator& pg, const CanvasConfig& cfg);

/// Main and guidance canvases for a variant, from the holistic canvas and
/// the guidance canvases (normally {g1, g2}).
struct ArrangedInputs {
  Canvas main;
  std::vector<Canvas> guidance;
};
ArrangedInputs arrange_inputs(AblationVariant v, const Canvas& gm,
                              const std::vector<Canvas>& guidance);

struct MultiModel {
  Backbone main;
  Backbone aux;  // frozen
  FuseParams fuse;
  AblationVariant variant = AblationVariant::kFull;
  std::uint64_t guidance_seed = 0;

  /// Mainstream and auxiliary start as copies of `pretrained`.
  static MultiModel create(const Backbone& pretrained, const FusionRange& range, int fuse_heads,
                           AblationVariant variant, std::uint64_t seed);

  /// Parameters updated by train_multi for this variant.
  nn::ParamList trainable();
};

struct MultiTape {
  nn::Mat patches;
  std::vector<TransformerBlock::Cache> blocks;
  std::vector<FuseBlock::Cache> fuses;  // indexed like FuseParams::blocks
  std::vector<nn::Mat> features;        // mainstream output after block (and FUSE) i
  nn::LayerNorm::Cache ln_f;
  nn::Mat normed;
};

/// Mainstream forward: BLOCK_i then FUSE_i inside the range.
TokenLogits multi_forward(const Canvas& main_canvas, const Guidance& guidance,
                          const MultiModel& model, MultiTape* tape = nullptr);
/// Accumulates gradients into model.main and model.fuse.
void multi_backward(MultiModel& model, const MultiTape& tape, const nn::Mat& dlogits);

/// Guidance for one query under the model's variant (random or from aux).
Guidance make_guidance(const MultiModel& model, const std::vector<Canvas>& guidance_canvases,
                       int sample_id);

/// Forward from the three group canvases, variant-aware.
TokenLogits multi_forward(const GroupCanvases& canvases, const MultiModel& model,
                          int sample_id = 0);

Image predict_label(const Canvas& main_canvas, const Guidance& guidance, const MultiModel& model,
                    const Codebook& cb);
Image predict_label(const GroupCanvases& canvases, const MultiModel& model, const Codebook& cb,
                    int sample_id = 0);

/// A training example with pre-built canvases and ground-truth tokens.
struct MultiSample {
  int id = 0;
  Canvas gm;
  std::vector<Canvas> guidance;  // normally {g1, g2}
  TokenGrid target;
};

struct MultiTrainConfig {
  double lr = 0.05;
  int epochs = 10;
  int batch = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double clip_norm = 0.0;
  int fuse_heads = 4;

  void validate() const;
  bool operator==(const MultiTrainConfig& other) const = default;
};

struct MultiTrainResult {
  MultiModel model;
  std::vector<double> loss_trace;
};

MultiTrainResult train_multi(const std::vector<MultiSample>& samples, const Backbone& pretrained,
                             const FusionRange& range, AblationVariant variant,
                             const MultiTrainConfig& cfg);

}  // namespace viclf
