#include "viclf/multi_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "viclf/hash.hpp"

namespace viclf {

using nn::Mat;

FusionRange FusionRange::from_center_width(int center, int width, int depth) {
  if (width < 0) throw ConfigError("fusion width must be non-negative");
  if (width == 0) return none();
  int lo = center - (width - 1) / 2;
  int hi = lo + width - 1;
  lo = std::max(lo, 1);
  hi = std::min(hi, depth);
  if (lo > hi) throw ConfigError("fusion range lies outside the backbone");
  return {lo, hi};
}

void FusionRange::validate(int depth) const {
  if (empty()) {
    if (n_up != 0) throw ConfigError("empty fusion range must have n_up == 0");
    return;
  }
  if (n_down < 1 || n_down > n_up || n_up > depth) {
    throw ConfigError("fusion range needs 1 <= N_down <= N_up <= depth (got [" +
                      std::to_string(n_down) + ", " + std::to_string(n_up) + "], depth " +
                      std::to_string(depth) + ")");
  }
}

namespace {

struct VariantName {
  AblationVariant v;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {AblationVariant::kFull, "full"},
    {AblationVariant::kOnlyG1, "only_g1"},
    {AblationVariant::kOnlyG2, "only_g2"},
    {AblationVariant::kG1AsMain, "g1_as_main"},
    {AblationVariant::kG2AsMain, "g2_as_main"},
    {AblationVariant::kRandomGuidance, "random_guidance"},
    {AblationVariant::kFreezeBackbone, "freeze_backbone"},
    {AblationVariant::kShared1Mlp, "shared_1mlp"},
    {AblationVariant::kShared2Mlp, "shared_2mlp"},
    {AblationVariant::kNoCrossAttention, "no_cross_attention"},
    {AblationVariant::kNoResidual, "no_residual"},
};

}  // namespace

std::string to_string(AblationVariant v) {
  for (const auto& e : kVariantNames) {
    if (e.v == v) return e.name;
  }
  return "unknown";
}

AblationVariant variant_from_string(const std::string& name) {
  for (const auto& e : kVariantNames) {
    if (name == e.name) return e.v;
  }
  throw ConfigError("unknown ablation variant: " + name);
}

const std::vector<AblationVariant>& all_variants() {
  static const std::vector<AblationVariant> all = [] {
    std::vector<AblationVariant> out;
    for (const auto& e : kVariantNames) out.push_back(e.v);
    return out;
  }();
  return all;
}

FuseOptions fuse_options(AblationVariant v) {
  FuseOptions o;
  o.shared_1mlp = v == AblationVariant::kShared1Mlp;
  o.shared_2mlp = v == AblationVariant::kShared2Mlp;
  o.no_cross_attention = v == AblationVariant::kNoCrossAttention;
  o.no_residual = v == AblationVariant::kNoResidual;
  return o;
}

FuseBlock::FuseBlock(int dim, int num_heads)
    : ln_q(dim), ln_k(dim), q(dim, dim), k(dim, dim), v(dim, dim), o(dim, dim), heads(num_heads) {}

void FuseBlock::collect(const std::string& prefix, nn::ParamList& out) {
  ln_q.collect(prefix + ".ln_q", out);
  ln_k.collect(prefix + ".ln_k", out);
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

FuseParams FuseParams::create(int dim, int heads, const FusionRange& range, std::uint64_t seed) {
  if (heads < 1 || dim % heads != 0) throw ConfigError("fuse heads must divide the feature width");
  FuseParams fp;
  fp.range = range;
  std::mt19937_64 rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int j = 0; j < range.size(); ++j) {
    FuseBlock fb(dim, heads);
    fb.q.w.value = nn::randn(dim, dim, s, rng);
    fb.k.w.value = nn::randn(dim, dim, s, rng);
    fb.v.w.value = nn::randn(dim, dim, s, rng);
    fp.blocks.push_back(std::move(fb));
  }
  return fp;
}

FuseBlock& FuseParams::at(int i) {
  if (!range.contains(i)) throw ConfigError("block " + std::to_string(i) + " is outside the fusion range");
  return blocks[static_cast<std::size_t>(i - range.n_down)];
}

const FuseBlock& FuseParams::at(int i) const { return const_cast<FuseParams*>(this)->at(i); }

nn::ParamList FuseParams::params() {
  nn::ParamList out;
  for (int j = 0; j < range.size(); ++j) {
    blocks[static_cast<std::size_t>(j)].collect("fuse." + std::to_string(range.n_down + j), out);
  }
  return out;
}

std::vector<nn::NamedConstParam> FuseParams::params() const {
  return nn::as_const(const_cast<FuseParams*>(this)->params());
}

std::uint64_t FuseParams::hash() const { return nn::hash_params(params()); }

namespace {

const nn::Linear& key_proj(const FuseBlock& fb, const FuseOptions& opt) {
  return opt.shared_1mlp ? fb.q : fb.k;
}

const nn::Linear& value_proj(const FuseBlock& fb, const FuseOptions& opt) {
  if (opt.shared_1mlp) return fb.q;
  if (opt.shared_2mlp) return fb.k;
  return fb.v;
}

nn::Linear& mut(const nn::Linear& l) { return const_cast<nn::Linear&>(l); }

}  // namespace

Mat fuse_step(const Mat& main, const std::vector<const Mat*>& guidance, const FuseBlock& fb,
              const FuseOptions& opt, FuseBlock::Cache* cache) {
  if (guidance.empty()) throw ShapeError("fuse_step needs at least one guidance sequence");
  Eigen::Index rows = 0;
  for (const Mat* g : guidance) {
    if (g->cols() != main.cols()) throw ShapeError("guidance and mainstream widths differ");
    rows += g->rows();
  }
  FuseBlock::Cache local;
  FuseBlock::Cache& c = cache != nullptr ? *cache : local;
  c.main = main;
  c.guidance.resize(rows, main.cols());
  Eigen::Index at = 0;
  for (const Mat* g : guidance) {
    c.guidance.middleRows(at, g->rows()) = *g;
    at += g->rows();
  }

  const Mat v = value_proj(fb, opt).forward(c.guidance);
  if (opt.no_cross_attention) {
    c.attended = Mat::Ones(main.rows(), 1) * v.colwise().mean();
  } else {
    c.q_in = fb.ln_q.forward(main, &c.ln_q);
    c.k_in = fb.ln_k.forward(c.guidance, &c.ln_k);
    const Mat q = fb.q.forward(c.q_in);
    const Mat k = key_proj(fb, opt).forward(c.k_in);
    c.attended = nn::scaled_dot_attention(q, k, v, fb.heads, &c.attn);
  }
  Mat out = fb.o.forward(c.attended);
  if (!opt.no_residual) out += main;
  return out;
}

Mat fuse_step_backward(FuseBlock& fb, const FuseBlock::Cache& c, const FuseOptions& opt,
                       const Mat& dout) {
  Mat dmain = opt.no_residual ? Mat::Zero(dout.rows(), dout.cols()) : dout;
  const Mat datt = fb.o.backward(c.attended, dout);
  nn::Linear& vp = mut(value_proj(fb, opt));
  if (opt.no_cross_attention) {
    const Mat dv = Mat::Ones(c.guidance.rows(), 1) *
                   (datt.colwise().sum() / static_cast<double>(c.guidance.rows()));
    vp.backward(c.guidance, dv);
    return dmain;
  }
  Mat dq, dk, dv;
  nn::scaled_dot_attention_backward(c.attn, datt, dq, dk, dv);
  vp.backward(c.guidance, dv);
  const Mat dk_in = mut(key_proj(fb, opt)).backward(c.k_in, dk);
  fb.ln_k.backward(c.ln_k, dk_in);
  const Mat dq_in = fb.q.backward(c.q_in, dq);
  dmain += fb.ln_q.backward(c.ln_q, dq_in);
  return dmain;
}

FeatureSequence fuse_step(int i, const FeatureSequence& main, const FeatureSequence& g1,
                          const FeatureSequence& g2, const FuseParams& fp, const FuseOptions& opt) {
  if (main.block_index != i || g1.block_index != i || g2.block_index != i) {
    throw ConfigError("fuse_step inputs must all come from block " + std::to_string(i));
  }
  if (main.features.rows() != g1.features.rows() || main.features.rows() != g2.features.rows()) {
    throw ShapeError("fuse_step token counts differ");
  }
  return {fuse_step(main.features, {&g1.features, &g2.features}, fp.at(i), opt), i};
}

Guidance guidance_features(const std::vector<Canvas>& canvases, const Backbone& aux,
                           const FusionRange& range) {
  Guidance g;
  for (const Canvas& c : canvases) {
    std::vector<Mat> feats(static_cast<std::size_t>(aux.config.depth) + 1);
    if (!range.empty()) {
      FeatureSequence x = patch_embed(c, aux);
      for (int i = 1; i <= range.n_up; ++i) {
        x = run_block(i, x, aux);
        if (range.contains(i)) feats[static_cast<std::size_t>(i)] = x.features;
      }
    }
    g.branches.push_back(std::move(feats));
  }
  return g;
}

Guidance random_guidance(int branches, const BackboneConfig& cfg, const FusionRange& range,
                         std::uint64_t seed, int sample_id) {
  Guidance g;
  for (int b = 0; b < branches; ++b) {
    std::vector<Mat> feats(static_cast<std::size_t>(cfg.depth) + 1);
    for (int i = range.n_down; !range.empty() && i <= range.n_up; ++i) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(sample_id),
                                   static_cast<std::uint64_t>(b * 4096 + i)));
      feats[static_cast<std::size_t>(i)] = nn::randn(cfg.canvas.num_patches(), cfg.embed_dim, 1.0, rng);
    }
    g.branches.push_back(std::move(feats));
  }
  return g;
}

GroupCanvases build_group_canvases(const PromptGroups& groups, const Image& query,
                                   const PromptGenerator& pg, const CanvasConfig& cfg) {
  return {build_fused_canvas(condense(groups.high, query, pg), query, cfg),
          build_fused_canvas(condense(groups.low, query, pg), query, cfg),
          build_fused_canvas(condense(groups.holistic, query, pg), query, cfg)};
}

ArrangedInputs arrange_inputs(AblationVariant v, const Canvas& gm,
                              const std::vector<Canvas>& guidance) {
  if (guidance.empty()) throw ConfigError("at least one guidance canvas is required");
  const bool two = guidance.size() == 2;
  switch (v) {
    case AblationVariant::kOnlyG1:
      return {gm, {guidance[0], guidance[0]}};
    case AblationVariant::kOnlyG2:
      if (!two) throw ConfigError("only_g2 needs two guidance canvases");
      return {gm, {guidance[1], guidance[1]}};
    case AblationVariant::kG1AsMain:
      if (!two) throw ConfigError("g1_as_main needs two guidance canvases");
      return {guidance[0], {gm, guidance[1]}};
    case AblationVariant::kG2AsMain:
      if (!two) throw ConfigError("g2_as_main needs two guidance canvases");
      return {guidance[1], {guidance[0], gm}};
    default:
      return {gm, guidance};
  }
}

MultiModel MultiModel::create(const Backbone& pretrained, const FusionRange& range, int fuse_heads,
                              AblationVariant variant, std::uint64_t seed) {
  range.validate(pretrained.config.depth);
  MultiModel m;
  m.main = pretrained;
  m.aux = pretrained;
  m.fuse = FuseParams::create(pretrained.config.embed_dim, fuse_heads, range, seed);
  m.variant = variant;
  m.guidance_seed = mix_seed(seed, 0x6D1D);
  return m;
}

nn::ParamList MultiModel::trainable() {
  nn::ParamList out;
  if (variant != AblationVariant::kFreezeBackbone) out = main.params();
  for (auto& p : fuse.params()) out.push_back(p);
  return out;
}

TokenLogits multi_forward(const Canvas& main_canvas, const Guidance& guidance,
                          const MultiModel& model, MultiTape* tape) {
  const Backbone& bb = model.main;
  const FusionRange& range = model.fuse.range;
  const FuseOptions opt = fuse_options(model.variant);
  if (main_canvas.pixels.height() != bb.config.canvas.canvas_h() ||
      main_canvas.pixels.width() != bb.config.canvas.canvas_w()) {
    throw ShapeError("canvas geometry does not match the backbone configuration");
  }
  MultiTape local;
  MultiTape& t = tape != nullptr ? *tape : local;
  const bool keep = tape != nullptr;
  t.patches = image_to_patches(main_canvas.pixels, bb.config.canvas.patch_size);
  Mat x = bb.embed.forward(t.patches);
  x += bb.pos.value;
  t.blocks.resize(keep ? bb.blocks.size() : 0);
  t.fuses.resize(keep ? static_cast<std::size_t>(range.size()) : 0);
  t.features.assign(bb.blocks.size() + 1, Mat());
  if (keep) t.features[0] = x;

  std::vector<const Mat*> g;
  for (int i = 1; i <= bb.config.depth; ++i) {
    x = bb.blocks[i - 1].forward(x, keep ? &t.blocks[i - 1] : nullptr);
    if (range.contains(i)) {
      g.clear();
      for (const auto& branch : guidance.branches) {
        const Mat& f = branch.at(static_cast<std::size_t>(i));
        if (f.rows() != x.rows() || f.cols() != x.cols()) {
          throw ShapeError("guidance features missing or misshapen at block " + std::to_string(i));
        }
        g.push_back(&f);
      }
      x = fuse_step(x, g, model.fuse.at(i), opt,
                    keep ? &t.fuses[static_cast<std::size_t>(i - range.n_down)] : nullptr);
    }
    if (keep) t.features[static_cast<std::size_t>(i)] = x;
  }
  if (!keep) return {bb.head.forward(bb.ln_f.forward(x, nullptr))};
  t.normed = bb.ln_f.forward(x, &t.ln_f);
  return {bb.head.forward(t.normed)};
}

void multi_backward(MultiModel& model, const MultiTape& t, const Mat& dlogits) {
  Backbone& bb = model.main;
  const FusionRange& range = model.fuse.range;
  const FuseOptions opt = fuse_options(model.variant);
  Mat dx = bb.ln_f.backward(t.ln_f, bb.head.backward(t.normed, dlogits));
  for (int i = bb.config.depth; i >= 1; --i) {
    if (range.contains(i)) {
      dx = fuse_step_backward(model.fuse.at(i), t.fuses[static_cast<std::size_t>(i - range.n_down)],
                              opt, dx);
    }
    dx = bb.blocks[static_cast<std::size_t>(i - 1)].backward(t.blocks[static_cast<std::size_t>(i - 1)], dx);
  }
  bb.pos.grad += dx;
  bb.embed.backward(t.patches, dx);
}

Guidance make_guidance(const MultiModel& model, const std::vector<Canvas>& guidance_canvases,
                       int sample_id) {
  if (model.variant == AblationVariant::kRandomGuidance) {
    return random_guidance(static_cast<int>(guidance_canvases.size()), model.aux.config,
                           model.fuse.range, model.guidance_seed, sample_id);
  }
  return guidance_features(guidance_canvases, model.aux, model.fuse.range);
}

TokenLogits multi_forward(const GroupCanvases& canvases, const MultiModel& model, int sample_id) {
  const ArrangedInputs in = arrange_inputs(model.variant, canvases.gm, {canvases.g1, canvases.g2});
  return multi_forward(in.main, make_guidance(model, in.guidance, sample_id), model);
}

Image predict_label(const Canvas& main_canvas, const Guidance& guidance, const MultiModel& model,
                    const Codebook& cb) {
  const TokenLogits logits = multi_forward(main_canvas, guidance, model);
  return decode(argmax_masked_tokens(logits, model.main.config.canvas), cb);
}

Image predict_label(const GroupCanvases& canvases, const MultiModel& model, const Codebook& cb,
                    int sample_id) {
  return decode(argmax_masked_tokens(multi_forward(canvases, model, sample_id),
                                     model.main.config.canvas),
                cb);
}

void MultiTrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("multi lr must be positive");
  if (epochs < 0 || batch < 1) throw ConfigError("multi epochs/batch invalid");
  if (fuse_heads < 1) throw ConfigError("fuse_heads must be positive");
}

MultiTrainResult train_multi(const std::vector<MultiSample>& samples, const Backbone& pretrained,
                             const FusionRange& range, AblationVariant variant,
                             const MultiTrainConfig& cfg) {
  if (samples.empty()) throw ConfigError("train_multi needs samples");
  cfg.validate();
  MultiTrainResult result{MultiModel::create(pretrained, range, cfg.fuse_heads, variant, cfg.seed), {}};
  MultiModel& model = result.model;

  // Auxiliary branches are frozen, so their features are computed once.
  std::vector<Canvas> mains;
  std::vector<Guidance> guidance;
  mains.reserve(samples.size());
  guidance.reserve(samples.size());
  for (const auto& s : samples) {
    ArrangedInputs in = arrange_inputs(variant, s.gm, s.guidance);
    guidance.push_back(make_guidance(model, in.guidance, s.id));
    mains.push_back(std::move(in.main));
  }
  const std::vector<int> mask = masked_patch_indices(pretrained.config.canvas);

  const nn::ParamList params = model.trainable();
  nn::ParamList all = model.main.params();
  for (auto& p : model.fuse.params()) all.push_back(p);
  Optimizer opt(cfg.optimizer, cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0xda942042e4dd58b5ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);
  MultiTape tape;
  Mat dlogits;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::zero_grads(all);
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        const TokenLogits logits = multi_forward(mains[idx], guidance[idx], model, &tape);
        epoch_loss += masked_ce_loss(logits, samples[idx].target, mask, &dlogits);
        multi_backward(model, tape, dlogits);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (const auto& p : params) p.param->grad *= scale;
      if (cfg.clip_norm > 0.0) nn::clip_grad_norm(params, cfg.clip_norm);
      opt.step(params);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace viclf
