#include "viclf/prompt_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace viclf {

using nn::Mat;

void PromptGeneratorConfig::validate() const {
  if (patch_size < 1) throw ConfigError("prompt generator patch_size must be positive");
  if (attn_dim < 1) throw ConfigError("prompt generator attn_dim must be positive");
  if (!(attn_init_std >= 0.0)) throw ConfigError("attn_init_std must be non-negative");
}

PromptGenerator PromptGenerator::create(const PromptGeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int p = cfg.patch_size * cfg.patch_size * Image::kChannels;
  PromptGenerator pg;
  pg.config = cfg;
  std::mt19937_64 rng(seed);
  pg.q = nn::Linear(p, cfg.attn_dim);
  pg.q.w.value = nn::randn(p, cfg.attn_dim, cfg.attn_init_std, rng);
  pg.k = pg.q;
  pg.img_w = nn::Param(Mat::Zero(p, p));
  pg.img_u = nn::Param(Mat::Zero(p, p));
  pg.img_c = nn::Param(Mat::Zero(1, p));
  pg.lbl_w = nn::Param(Mat::Zero(p, p));
  pg.lbl_u = nn::Param(Mat::Zero(p, p));
  pg.lbl_c = nn::Param(Mat::Zero(1, p));
  return pg;
}

nn::ParamList PromptGenerator::params() {
  nn::ParamList out;
  q.collect("q", out);
  k.collect("k", out);
  out.push_back({"img.w", &img_w});
  out.push_back({"img.u", &img_u});
  out.push_back({"img.c", &img_c});
  out.push_back({"lbl.w", &lbl_w});
  out.push_back({"lbl.u", &lbl_u});
  out.push_back({"lbl.c", &lbl_c});
  return out;
}

std::vector<nn::NamedConstParam> PromptGenerator::params() const {
  return nn::as_const(const_cast<PromptGenerator*>(this)->params());
}

std::uint64_t PromptGenerator::hash() const { return nn::hash_params(params()); }

std::vector<SupportPair> canonical_order(std::vector<SupportPair> group) {
  std::stable_sort(group.begin(), group.end(), [](const SupportPair& a, const SupportPair& b) {
    if (a.id != b.id) return a.id < b.id;
    if (a.image.data() != b.image.data()) return a.image.data() < b.image.data();
    return a.label.pixels.data() < b.label.pixels.data();
  });
  return group;
}

namespace {

Mat refine(const Mat& v, const Mat& t) { return v.array() + v.array() * (1.0 - v.array()) * t.array(); }

}  // namespace

FusedPair condense(const std::vector<SupportPair>& group, const Image& query,
                   const PromptGenerator& pg, CondenseCache* cache) {
  if (group.empty()) throw ConfigError("condense needs a nonempty group");
  const int ps = pg.config.patch_size;
  const int p = ps * ps * Image::kChannels;
  for (const auto& m : group) {
    if (m.image.height() != query.height() || m.image.width() != query.width() ||
        m.label.pixels.height() != query.height() || m.label.pixels.width() != query.width()) {
      throw ShapeError("condense: group member and query sizes differ");
    }
  }
  const std::vector<SupportPair> members = canonical_order(group);
  const Mat pq = image_to_patches(query, ps);
  const Eigen::Index t = pq.rows();
  Mat values(t * static_cast<Eigen::Index>(members.size()), 2 * p);
  for (std::size_t m = 0; m < members.size(); ++m) {
    values.block(static_cast<Eigen::Index>(m) * t, 0, t, p) = image_to_patches(members[m].image, ps);
    values.block(static_cast<Eigen::Index>(m) * t, p, t, p) =
        image_to_patches(members[m].label.pixels, ps);
  }

  CondenseCache local;
  CondenseCache& c = cache != nullptr ? *cache : local;
  c.query = pq;
  c.q = pg.q.forward(pq);
  c.k = pg.k.forward(values.leftCols(p));
  const Mat pooled = nn::scaled_dot_attention(c.q, c.k, values, 1, &c.attn);
  c.values = std::move(values);
  c.v_img = pooled.leftCols(p);
  c.v_lbl = pooled.rightCols(p);

  Mat z_img = c.v_img * pg.img_w.value + pq * pg.img_u.value;
  z_img.rowwise() += pg.img_c.value.row(0);
  Mat z_lbl = c.v_lbl * pg.lbl_w.value + c.v_img * pg.lbl_u.value;
  z_lbl.rowwise() += pg.lbl_c.value.row(0);
  c.t_img = z_img.array().tanh();
  c.t_lbl = z_lbl.array().tanh();

  const Mat out_img = refine(c.v_img, c.t_img).cwiseMax(0.0).cwiseMin(1.0);
  const Mat out_lbl = refine(c.v_lbl, c.t_lbl).cwiseMax(0.0).cwiseMin(1.0);
  return {patches_to_image(out_img, query.height(), query.width(), ps),
          patches_to_image(out_lbl, query.height(), query.width(), ps)};
}

void condense_backward(PromptGenerator& pg, const CondenseCache& c, const Mat& d_image,
                       const Mat& d_label) {
  const auto p = c.v_img.cols();
  auto head_grads = [](const Mat& v, const Mat& tz, const Mat& df, Mat& dz) -> Mat {
    const Mat one_minus_v = (1.0 - v.array()).matrix();
    dz = (df.array() * v.array() * one_minus_v.array() * (1.0 - tz.array().square())).matrix();
    return (df.array() * (1.0 + (1.0 - 2.0 * v.array()) * tz.array())).matrix();
  };
  Mat dz_lbl, dz_img;
  Mat dv_lbl = head_grads(c.v_lbl, c.t_lbl, d_label, dz_lbl);
  Mat dv_img = head_grads(c.v_img, c.t_img, d_image, dz_img);

  pg.lbl_w.grad.noalias() += c.v_lbl.transpose() * dz_lbl;
  pg.lbl_u.grad.noalias() += c.v_img.transpose() * dz_lbl;
  pg.lbl_c.grad.row(0) += dz_lbl.colwise().sum();
  dv_lbl.noalias() += dz_lbl * pg.lbl_w.value.transpose();
  dv_img.noalias() += dz_lbl * pg.lbl_u.value.transpose();

  pg.img_w.grad.noalias() += c.v_img.transpose() * dz_img;
  pg.img_u.grad.noalias() += c.query.transpose() * dz_img;
  pg.img_c.grad.row(0) += dz_img.colwise().sum();
  dv_img.noalias() += dz_img * pg.img_w.value.transpose();

  Mat dpooled(c.v_img.rows(), 2 * p);
  dpooled.leftCols(p) = dv_img;
  dpooled.rightCols(p) = dv_lbl;
  Mat dq, dk, dv;
  nn::scaled_dot_attention_backward(c.attn, dpooled, dq, dk, dv);
  pg.q.backward(c.query, dq);
  pg.k.backward(c.values.leftCols(p), dk);
}

Canvas build_fused_canvas(const FusedPair& fp, const Image& query, const CanvasConfig& cfg) {
  return compose_canvas(fp.image, fp.label, query, cfg);
}

double alignment_loss(const Image& fused_image, const Image& query) {
  if (fused_image.height() != query.height() || fused_image.width() != query.width()) {
    throw ShapeError("alignment_loss: size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < query.data().size(); ++i) {
    const double d = fused_image.data()[i] - query.data()[i];
    total += d * d;
  }
  return total / static_cast<double>(query.data().size());
}

double pg_loss(const FusedPair& fp, const Image& query, const TokenLogits& logits,
               const TokenGrid& target, const std::vector<int>& mask, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  return (1.0 - lambda) * alignment_loss(fp.image, query) +
         lambda * masked_ce_loss(logits, target, mask);
}

void PGTrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (!(lr > 0.0)) throw ConfigError("prompt generator lr must be positive");
  if (epochs < 0 || batch < 1) throw ConfigError("prompt generator epochs/batch invalid");
}

TokenGrid label_target(const Image& query, const Image& label, const Codebook& cb,
                       const CanvasConfig& cfg) {
  Canvas c = compose_canvas(query, label, query, cfg);
  c.pixels.paste(label, cfg.quadrant_h, cfg.quadrant_w);
  return encode(c.pixels, cb);
}

double pg_sample_loss(PromptGenerator& pg, Backbone& scratch, const PGSample& sample,
                      const TokenGrid& target, double lambda, bool backward) {
  const CanvasConfig& cfg = scratch.config.canvas;
  CondenseCache cc;
  const FusedPair fp = condense(sample.group, sample.query, pg, &cc);
  const Canvas canvas = build_fused_canvas(fp, sample.query, cfg);
  BackboneTape tape;
  const TokenLogits logits{forward_train(scratch, canvas, tape)};
  const std::vector<int> mask = masked_patch_indices(cfg);
  Mat dlogits;
  const double ce = masked_ce_loss(logits, target, mask, &dlogits);
  const double align = alignment_loss(fp.image, sample.query);
  if (backward) {
    const int ps = cfg.patch_size;
    const auto t = cc.query.rows();
    Mat d_img = Mat::Zero(t, cc.v_img.cols());
    Mat d_lbl = Mat::Zero(t, cc.v_img.cols());
    if (lambda > 0.0) {
      const Mat dpatches = backward_train(scratch, tape, lambda * dlogits);
      const auto tl = quadrant_patch_indices(cfg, Quadrant::kTopLeft);
      const auto tr = quadrant_patch_indices(cfg, Quadrant::kTopRight);
      for (Eigen::Index r = 0; r < t; ++r) {
        d_img.row(r) = dpatches.row(tl[r]);
        d_lbl.row(r) = dpatches.row(tr[r]);
      }
    }
    if (lambda < 1.0) {
      const Mat diff = image_to_patches(fp.image, ps) - cc.query;
      d_img += ((1.0 - lambda) * 2.0 / static_cast<double>(diff.size())) * diff;
    }
    condense_backward(pg, cc, d_img, d_lbl);
  }
  return (1.0 - lambda) * align + lambda * ce;
}

PGTrainResult train_prompt_generator(const std::vector<PGSample>& samples,
                                     const Backbone& backbone, const Codebook& cb,
                                     const PromptGeneratorConfig& pg_cfg,
                                     const PGTrainConfig& cfg) {
  if (samples.empty()) throw ConfigError("train_prompt_generator needs samples");
  cfg.validate();
  if (pg_cfg.patch_size != backbone.config.canvas.patch_size) {
    throw ConfigError("prompt generator and backbone patch sizes differ");
  }
  std::vector<TokenGrid> targets;
  targets.reserve(samples.size());
  for (const auto& s : samples) {
    targets.push_back(label_target(s.query, s.label, cb, backbone.config.canvas));
  }

  PGTrainResult result{PromptGenerator::create(pg_cfg, cfg.seed), {}};
  PromptGenerator& pg = result.weights;
  Backbone scratch = backbone;
  const nn::ParamList params = pg.params();
  const nn::ParamList scratch_params = scratch.params();
  Optimizer opt(cfg.optimizer, cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::zero_grads(params);
      nn::zero_grads(scratch_params);
      for (std::size_t j = start; j < end; ++j) {
        epoch_loss += pg_sample_loss(pg, scratch, samples[order[j]], targets[order[j]], cfg.lambda, true);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (const auto& p : params) p.param->grad *= scale;
      opt.step(params);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

}  // namespace viclf
