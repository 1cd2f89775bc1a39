#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "viclf/core_types.hpp"
#include "viclf/nn.hpp"
#include "viclf/tokenizer.hpp"

namespace viclf {

struct BackboneConfig {
  int depth = 16;
  int embed_dim = 128;
  int heads = 4;
  double mlp_ratio = 2.0;
  int vocab = 64;
  CanvasConfig canvas;

  int hidden_dim() const { return static_cast<int>(embed_dim * mlp_ratio + 0.5); }
  void validate() const;
  bool operator==(const BackboneConfig& other) const = default;
};

/// Token features after `block_index` blocks (0 = patch embedding).
struct FeatureSequence {
  nn::Mat features;
  int block_index = 0;
};

struct TokenLogits {
  nn::Mat logits;  // (num_patches x vocab)
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then h + MLP(LN(h)).
struct TransformerBlock {
  nn::LayerNorm ln1;
  nn::Linear q, k, v, o;
  nn::LayerNorm ln2;
  nn::Linear fc1, fc2;
  int heads = 1;

  struct Cache {
    nn::LayerNorm::Cache ln1;
    nn::Mat a_in;
    nn::AttentionCache attn;
    nn::Mat attn_out;
    nn::LayerNorm::Cache ln2;
    nn::Mat m_in;
    nn::Mat pre_act;
    nn::Mat act;
  };

  TransformerBlock() = default;
  TransformerBlock(int dim, int hidden, int heads);

  nn::Mat forward(const nn::Mat& x, Cache* cache) const;
  /// Accumulates parameter gradients and returns dL/dx.
  nn::Mat backward(const Cache& cache, const nn::Mat& dy);
  void collect(const std::string& prefix, nn::ParamList& out);
};

/// Weights of the inpainting encoder + token head.
class Backbone {
 public:
  BackboneConfig config;
  nn::Linear embed;
  nn::Param pos;
  std::vector<TransformerBlock> blocks;
  nn::LayerNorm ln_f;
  nn::Linear head;

  static Backbone create(const BackboneConfig& cfg, std::uint64_t seed);

  nn::ParamList params();
  std::vector<nn::NamedConstParam> params() const;
  std::uint64_t hash() const;
};

FeatureSequence patch_embed(const Canvas& canvas, const Backbone& bb);
/// Applies block `i` (1-based). Throws ConfigError when x is not the output
/// of block i-1.
FeatureSequence run_block(int i, const FeatureSequence& x, const Backbone& bb);
TokenLogits predict_tokens(const FeatureSequence& x, const Backbone& bb);

/// Patch embedding followed by all blocks; element i is the output of block i.
std::vector<FeatureSequence> forward_features(const Canvas& canvas, const Backbone& bb);
TokenLogits forward_logits(const Canvas& canvas, const Backbone& bb);

/// Mean over `mask` positions of -log softmax(logits)[target]. When `dlogits`
/// is given it receives the gradient with respect to the logits.
double masked_ce_loss(const TokenLogits& logits, const TokenGrid& target,
                      const std::vector<int>& mask, nn::Mat* dlogits = nullptr);

/// Activations kept for a backward pass through the whole backbone.
struct BackboneTape {
  nn::Mat patches;
  std::vector<TransformerBlock::Cache> blocks;
  nn::Mat final_features;
  nn::LayerNorm::Cache ln_f;
  nn::Mat normed;
};

nn::Mat forward_train(const Backbone& bb, const Canvas& canvas, BackboneTape& tape);
/// Backpropagates dlogits, accumulating into bb's gradients. Returns the
/// gradient with respect to the canvas patch matrix.
nn::Mat backward_train(Backbone& bb, const BackboneTape& tape, const nn::Mat& dlogits);

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 10;
  int batch = 16;
  double lr = 0.05;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double clip_norm = 0.0;  // 0 disables clipping

  bool operator==(const TrainConfig& other) const = default;
};

/// SGD or Adam over a fixed parameter list. State is indexed by position.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}
  void step(const nn::ParamList& params);

 private:
  OptimizerKind kind_;
  double lr_;
  long step_count_ = 0;
  std::vector<nn::Mat> m_, v_;
};

/// Ground-truth canvases in, weights plus per-epoch mean loss out.
struct BackboneTrainResult {
  Backbone weights;
  std::vector<double> loss_trace;
};

/// Canvas with its bottom-right quadrant overwritten by the mask fill.
Canvas mask_bottom_right(const Canvas& canvas, const CanvasConfig& cfg);

BackboneTrainResult train_backbone(const std::vector<Canvas>& dataset, const Codebook& cb,
                                   const BackboneConfig& cfg, const TrainConfig& train);

/// Argmax tokens over a masked-quadrant of logits, as a quadrant token grid.
TokenGrid argmax_masked_tokens(const TokenLogits& logits, const CanvasConfig& cfg);

/// Forward, argmax at masked positions, decode; returns the predicted
/// bottom-right quadrant.
Image infer_inpaint(const Canvas& canvas, const Backbone& bb, const Codebook& cb);
/// Input canvas with its bottom-right quadrant replaced by the prediction.
Canvas inpaint_canvas(const Canvas& canvas, const Backbone& bb, const Codebook& cb);

}  // namespace viclf
