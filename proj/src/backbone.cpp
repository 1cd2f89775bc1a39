#include "viclf/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace viclf {

using nn::Mat;

void BackboneConfig::validate() const {
  canvas.validate();
  if (depth < 1) throw ConfigError("backbone depth must be >= 1");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be divisible by heads");
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
}

TransformerBlock::TransformerBlock(int dim, int hidden, int num_heads)
    : ln1(dim),
      q(dim, dim),
      k(dim, dim),
      v(dim, dim),
      o(dim, dim),
      ln2(dim),
      fc1(dim, hidden),
      fc2(hidden, dim),
      heads(num_heads) {}

Mat TransformerBlock::forward(const Mat& x, Cache* cache) const {
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  c.a_in = ln1.forward(x, &c.ln1);
  const Mat qm = q.forward(c.a_in);
  const Mat km = k.forward(c.a_in);
  const Mat vm = v.forward(c.a_in);
  c.attn_out = nn::scaled_dot_attention(qm, km, vm, heads, &c.attn);
  Mat h = x + o.forward(c.attn_out);
  c.m_in = ln2.forward(h, &c.ln2);
  c.pre_act = fc1.forward(c.m_in);
  c.act = nn::gelu(c.pre_act);
  h += fc2.forward(c.act);
  return h;
}

Mat TransformerBlock::backward(const Cache& c, const Mat& dy) {
  // MLP branch.
  Mat dact = fc2.backward(c.act, dy);
  Mat dpre = nn::gelu_backward(c.pre_act, dact);
  Mat dm_in = fc1.backward(c.m_in, dpre);
  Mat dh = dy + ln2.backward(c.ln2, dm_in);
  // Attention branch.
  Mat dattn = o.backward(c.attn_out, dh);
  Mat dq, dk, dv;
  nn::scaled_dot_attention_backward(c.attn, dattn, dq, dk, dv);
  Mat da_in = q.backward(c.a_in, dq);
  da_in += k.backward(c.a_in, dk);
  da_in += v.backward(c.a_in, dv);
  return dh + ln1.backward(c.ln1, da_in);
}

void TransformerBlock::collect(const std::string& prefix, nn::ParamList& out) {
  ln1.collect(prefix + ".ln1", out);
  q.collect(prefix + ".attn.q", out);
  k.collect(prefix + ".attn.k", out);
  v.collect(prefix + ".attn.v", out);
  o.collect(prefix + ".attn.o", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".mlp.fc1", out);
  fc2.collect(prefix + ".mlp.fc2", out);
}

namespace {

constexpr double kQueryKeyGain = 3.0;

// 2D sin-cos table over the patch position inside its quadrant; a patch and its
// counterparts in the other quadrants start with the same code. A quarter of
// the channels one-hot encode the quadrant, on top of small noise.
Mat init_positions(const CanvasConfig& canvas, int d, std::mt19937_64& rng) {
  Mat pos = nn::randn(canvas.num_patches(), d, 0.02, rng);
  const int qh = canvas.grid_h() / 2;
  const int qw = canvas.grid_w() / 2;
  const int quad_dims = d / 4;
  const int freqs = (d - quad_dims) / 4;
  for (int r = 0; r < canvas.grid_h(); ++r) {
    for (int c = 0; c < canvas.grid_w(); ++c) {
      const int idx = r * canvas.grid_w() + c;
      const double lr = r % qh;
      const double lc = c % qw;
      for (int f = 0; f < freqs; ++f) {
        const double w = std::pow(100.0, -static_cast<double>(f) / std::max(1, freqs));
        pos(idx, 4 * f + 0) += std::sin(lr * w);
        pos(idx, 4 * f + 1) += std::cos(lr * w);
        pos(idx, 4 * f + 2) += std::sin(lc * w);
        pos(idx, 4 * f + 3) += std::cos(lc * w);
      }
      const int quadrant = 2 * (r / qh) + (c / qw);
      for (int j = 4 * freqs; j < d; ++j) {
        pos(idx, j) += ((j - 4 * freqs) % 4 == quadrant) ? 1.0 : 0.0;
      }
    }
  }
  return pos;
}

}  // namespace

Backbone Backbone::create(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.embed_dim;
  const int p = cfg.canvas.patch_dim();
  const int hidden = cfg.hidden_dim();
  const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.depth);

  Backbone bb;
  bb.config = cfg;
  bb.embed = nn::Linear(p, d);
  bb.embed.w.value = nn::randn(p, d, 1.0 / std::sqrt(static_cast<double>(p)), rng);
  bb.pos = nn::Param(init_positions(cfg.canvas, d, rng));
  for (int i = 0; i < cfg.depth; ++i) {
    TransformerBlock blk(d, hidden, cfg.heads);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    blk.q.w.value = nn::randn(d, d, s, rng);
    blk.k.w.value = nn::randn(d, d, s, rng);
    // Query and key start at a scaled identity plus noise.
    blk.q.w.value += kQueryKeyGain * Mat::Identity(d, d);
    blk.k.w.value += kQueryKeyGain * Mat::Identity(d, d);
    blk.v.w.value = nn::randn(d, d, s, rng);
    blk.o.w.value = nn::randn(d, d, s * residual_scale, rng);
    blk.fc1.w.value = nn::randn(d, hidden, s, rng);
    blk.fc2.w.value =
        nn::randn(hidden, d, residual_scale / std::sqrt(static_cast<double>(hidden)), rng);
    bb.blocks.push_back(std::move(blk));
  }
  bb.ln_f = nn::LayerNorm(d);
  bb.head = nn::Linear(d, cfg.vocab);
  bb.head.w.value = nn::randn(d, cfg.vocab, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  return bb;
}

nn::ParamList Backbone::params() {
  nn::ParamList out;
  embed.collect("embed", out);
  out.push_back({"pos", &pos});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect("blocks." + std::to_string(i + 1), out);
  }
  ln_f.collect("ln_f", out);
  head.collect("head", out);
  return out;
}

std::vector<nn::NamedConstParam> Backbone::params() const {
  return nn::as_const(const_cast<Backbone*>(this)->params());
}

std::uint64_t Backbone::hash() const { return nn::hash_params(params()); }

namespace {

void check_canvas(const Canvas& canvas, const CanvasConfig& cfg) {
  if (canvas.pixels.height() != cfg.canvas_h() || canvas.pixels.width() != cfg.canvas_w()) {
    throw ShapeError("canvas geometry does not match the backbone configuration");
  }
}

}  // namespace

FeatureSequence patch_embed(const Canvas& canvas, const Backbone& bb) {
  check_canvas(canvas, bb.config.canvas);
  Mat x = bb.embed.forward(image_to_patches(canvas.pixels, bb.config.canvas.patch_size));
  x += bb.pos.value;
  return {std::move(x), 0};
}

FeatureSequence run_block(int i, const FeatureSequence& x, const Backbone& bb) {
  if (i < 1 || i > static_cast<int>(bb.blocks.size())) {
    throw ConfigError("block index out of range");
  }
  if (x.block_index != i - 1) {
    throw ConfigError("block " + std::to_string(i) + " applied to output of block " +
                      std::to_string(x.block_index));
  }
  return {bb.blocks[i - 1].forward(x.features, nullptr), i};
}

TokenLogits predict_tokens(const FeatureSequence& x, const Backbone& bb) {
  if (x.block_index != bb.config.depth) {
    throw ConfigError("token head expects the output of the final block");
  }
  return {bb.head.forward(bb.ln_f.forward(x.features, nullptr))};
}

std::vector<FeatureSequence> forward_features(const Canvas& canvas, const Backbone& bb) {
  std::vector<FeatureSequence> out;
  out.reserve(bb.blocks.size() + 1);
  out.push_back(patch_embed(canvas, bb));
  for (int i = 1; i <= bb.config.depth; ++i) out.push_back(run_block(i, out.back(), bb));
  return out;
}

TokenLogits forward_logits(const Canvas& canvas, const Backbone& bb) {
  FeatureSequence x = patch_embed(canvas, bb);
  for (int i = 1; i <= bb.config.depth; ++i) x = run_block(i, x, bb);
  return predict_tokens(x, bb);
}

double masked_ce_loss(const TokenLogits& logits, const TokenGrid& target,
                      const std::vector<int>& mask, Mat* dlogits) {
  if (mask.empty()) throw ConfigError("masked_ce_loss needs a nonempty mask");
  const Mat& z = logits.logits;
  if (static_cast<std::size_t>(z.rows()) != target.tokens.size()) {
    throw ShapeError("logits and target token grid differ in length");
  }
  if (dlogits != nullptr) dlogits->setZero(z.rows(), z.cols());
  const double inv = 1.0 / static_cast<double>(mask.size());
  double loss = 0.0;
  for (int pos : mask) {
    const int t = target.tokens[static_cast<std::size_t>(pos)];
    if (t < 0 || t >= z.cols()) throw ConfigError("target token outside the vocabulary");
    const double m = z.row(pos).maxCoeff();
    const double lse = m + std::log((z.row(pos).array() - m).exp().sum());
    loss += lse - z(pos, t);
    if (dlogits != nullptr) {
      dlogits->row(pos) = (z.row(pos).array() - lse).exp().matrix() * inv;
      (*dlogits)(pos, t) -= inv;
    }
  }
  return loss * inv;
}

Mat forward_train(const Backbone& bb, const Canvas& canvas, BackboneTape& tape) {
  check_canvas(canvas, bb.config.canvas);
  tape.patches = image_to_patches(canvas.pixels, bb.config.canvas.patch_size);
  Mat x = bb.embed.forward(tape.patches);
  x += bb.pos.value;
  tape.blocks.resize(bb.blocks.size());
  for (std::size_t i = 0; i < bb.blocks.size(); ++i) x = bb.blocks[i].forward(x, &tape.blocks[i]);
  tape.final_features = x;
  tape.normed = bb.ln_f.forward(x, &tape.ln_f);
  return bb.head.forward(tape.normed);
}

Mat backward_train(Backbone& bb, const BackboneTape& tape, const Mat& dlogits) {
  Mat dx = bb.ln_f.backward(tape.ln_f, bb.head.backward(tape.normed, dlogits));
  for (std::size_t i = bb.blocks.size(); i-- > 0;) dx = bb.blocks[i].backward(tape.blocks[i], dx);
  bb.pos.grad += dx;
  return bb.embed.backward(tape.patches, dx);
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer: " + name);
}

void Optimizer::step(const nn::ParamList& params) {
  if (kind_ == OptimizerKind::kSgd) {
    nn::sgd_step(params, lr_);
    return;
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Mat::Zero(p.param->value.rows(), p.param->value.cols()));
      v_.push_back(Mat::Zero(p.param->value.rows(), p.param->value.cols()));
    }
  }
  ++step_count_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = params[i].param->grad;
    m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
    v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseAbs2();
    params[i].param->value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + kEps);
  }
}

Canvas mask_bottom_right(const Canvas& canvas, const CanvasConfig& cfg) {
  Canvas out = canvas;
  out.pixels.paste(Image(cfg.quadrant_h, cfg.quadrant_w, cfg.mask_fill), cfg.quadrant_h,
                   cfg.quadrant_w);
  out.masked_region = Quadrant::kBottomRight;
  return out;
}

BackboneTrainResult train_backbone(const std::vector<Canvas>& dataset, const Codebook& cb,
                                   const BackboneConfig& cfg, const TrainConfig& train) {
  if (dataset.empty()) throw ConfigError("train_backbone needs a nonempty dataset");
  cfg.validate();
  if (cb.size() != cfg.vocab || cb.patch_size != cfg.canvas.patch_size) {
    throw ConfigError("codebook does not match the backbone vocabulary/patch size");
  }
  std::vector<Canvas> inputs;
  std::vector<TokenGrid> targets;
  inputs.reserve(dataset.size());
  for (const auto& c : dataset) {
    inputs.push_back(mask_bottom_right(c, cfg.canvas));
    targets.push_back(encode(c.pixels, cb));
  }
  const std::vector<int> mask = masked_patch_indices(cfg.canvas);

  BackboneTrainResult result{Backbone::create(cfg, train.seed), {}};
  Backbone& bb = result.weights;
  const nn::ParamList params = bb.params();
  Optimizer opt(train.optimizer, train.lr);
  std::mt19937_64 rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  BackboneTape tape;
  Mat dlogits;
  const std::size_t batch = static_cast<std::size_t>(std::max(1, train.batch));

  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::zero_grads(params);
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        TokenLogits logits{forward_train(bb, inputs[idx], tape)};
        epoch_loss += masked_ce_loss(logits, targets[idx], mask, &dlogits);
        backward_train(bb, tape, dlogits);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (const auto& p : params) p.param->grad *= scale;
      if (train.clip_norm > 0.0) nn::clip_grad_norm(params, train.clip_norm);
      opt.step(params);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

TokenGrid argmax_masked_tokens(const TokenLogits& logits, const CanvasConfig& cfg) {
  const std::vector<int> mask = masked_patch_indices(cfg);
  TokenGrid grid{cfg.quadrant_h / cfg.patch_size, cfg.quadrant_w / cfg.patch_size, {}};
  grid.tokens.reserve(mask.size());
  for (int pos : mask) {
    Eigen::Index best = 0;
    logits.logits.row(pos).maxCoeff(&best);
    grid.tokens.push_back(static_cast<int>(best));
  }
  return grid;
}

Image infer_inpaint(const Canvas& canvas, const Backbone& bb, const Codebook& cb) {
  return decode(argmax_masked_tokens(forward_logits(canvas, bb), bb.config.canvas), cb);
}

Canvas inpaint_canvas(const Canvas& canvas, const Backbone& bb, const Codebook& cb) {
  Canvas out = canvas;
  out.pixels.paste(infer_inpaint(canvas, bb, cb), bb.config.canvas.quadrant_h,
                   bb.config.canvas.quadrant_w);
  return out;
}

}  // namespace viclf
