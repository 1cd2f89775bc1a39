#include "viclf/multi_fusion.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "grad_check.hpp"

namespace viclf {
namespace {

using nn::Mat;

BackboneConfig mini_config() {
  BackboneConfig cfg;
  cfg.depth = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.vocab = 5;
  cfg.canvas = CanvasConfig{2, 2, 2, 0.0};  // 4 patches
  return cfg;
}

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.depth = 4;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.vocab = 6;
  cfg.canvas = CanvasConfig{8, 8, 4, 0.0};
  return cfg;
}

Canvas random_canvas(const CanvasConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(cfg.canvas_h(), cfg.canvas_w());
  for (double& v : img.data()) v = u(rng);
  return mask_bottom_right(Canvas{img, Quadrant::kBottomRight}, cfg);
}

void randomize(const nn::ParamList& params, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& p : params) {
    p.param->value += nn::randn(static_cast<int>(p.param->value.rows()),
                                static_cast<int>(p.param->value.cols()), stddev, rng);
  }
}

TEST(FusionRange, CenterWidthAndValidation) {
  EXPECT_EQ(FusionRange::from_center_width(11, 7, 16), (FusionRange{8, 14}));
  EXPECT_EQ(FusionRange::from_center_width(4, 2, 8), (FusionRange{4, 5}));
  EXPECT_TRUE(FusionRange::from_center_width(4, 0, 8).empty());
  EXPECT_EQ(FusionRange::from_center_width(1, 5, 8), (FusionRange{1, 3}));
  EXPECT_THROW((FusionRange{5, 3}).validate(8), ConfigError);
  EXPECT_THROW((FusionRange{1, 9}).validate(8), ConfigError);
  EXPECT_NO_THROW(FusionRange::none().validate(8));
  EXPECT_EQ(FusionRange{}.n_down, 8);
  EXPECT_EQ(FusionRange{}.n_up, 14);
}

TEST(Variants, NamesRoundTrip) {
  EXPECT_EQ(all_variants().size(), 11u);
  for (AblationVariant v : all_variants()) EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_THROW(variant_from_string("three_mlp"), ConfigError);
}

TEST(Variants, ArrangeInputsSwapsRoles) {
  std::mt19937_64 rng(1);
  const CanvasConfig cfg{2, 2, 2, 0.0};
  const Canvas gm = random_canvas(cfg, rng), g1 = random_canvas(cfg, rng), g2 = random_canvas(cfg, rng);
  auto a = arrange_inputs(AblationVariant::kFull, gm, {g1, g2});
  EXPECT_EQ(a.main.pixels, gm.pixels);
  EXPECT_EQ(a.guidance[1].pixels, g2.pixels);
  a = arrange_inputs(AblationVariant::kOnlyG1, gm, {g1, g2});
  EXPECT_EQ(a.guidance[0].pixels, g1.pixels);
  EXPECT_EQ(a.guidance[1].pixels, g1.pixels);
  a = arrange_inputs(AblationVariant::kOnlyG2, gm, {g1, g2});
  EXPECT_EQ(a.guidance[0].pixels, g2.pixels);
  a = arrange_inputs(AblationVariant::kG1AsMain, gm, {g1, g2});
  EXPECT_EQ(a.main.pixels, g1.pixels);
  EXPECT_EQ(a.guidance[0].pixels, gm.pixels);
  a = arrange_inputs(AblationVariant::kG2AsMain, gm, {g1, g2});
  EXPECT_EQ(a.main.pixels, g2.pixels);
  EXPECT_EQ(a.guidance[1].pixels, gm.pixels);
}

TEST(FuseStep, ZeroOutputProjectionIsIdentity) {
  const FuseParams fp = FuseParams::create(16, 4, {1, 1}, 3);
  std::mt19937_64 rng(2);
  const Mat main = nn::randn(8, 16, 1.0, rng);
  const Mat g1 = nn::randn(8, 16, 1.0, rng);
  const Mat g2 = nn::randn(8, 16, 1.0, rng);
  for (AblationVariant v : all_variants()) {
    if (v == AblationVariant::kNoResidual) continue;
    EXPECT_EQ(fuse_step(main, {&g1, &g2}, fp.at(1), fuse_options(v)), main) << to_string(v);
  }
  const FeatureSequence out = fuse_step(1, {main, 1}, {g1, 1}, {g2, 1}, fp);
  EXPECT_EQ(out.features, main);
  EXPECT_EQ(out.block_index, 1);
  EXPECT_THROW(fuse_step(1, {main, 0}, {g1, 1}, {g2, 1}, fp), ConfigError);
  EXPECT_THROW(fuse_step(2, {main, 2}, {g1, 2}, {g2, 2}, fp), ConfigError);
}

TEST(FuseStep, NoResidualAtInitGivesZeros) {
  const FuseParams fp = FuseParams::create(16, 4, {1, 1}, 3);
  std::mt19937_64 rng(2);
  const Mat main = nn::randn(8, 16, 1.0, rng);
  const Mat g = nn::randn(8, 16, 1.0, rng);
  const Mat out = fuse_step(main, {&g, &g}, fp.at(1), fuse_options(AblationVariant::kNoResidual));
  EXPECT_EQ(out, Mat::Zero(8, 16));
}

TEST(FuseStep, GuidanceTokenPermutationInvariance) {
  FuseParams fp = FuseParams::create(16, 4, {1, 1}, 3);
  randomize(fp.params(), 0.3, 4);
  std::mt19937_64 rng(5);
  const Mat main = nn::randn(8, 16, 1.0, rng);
  const Mat g1 = nn::randn(8, 16, 1.0, rng);
  const Mat g2 = nn::randn(8, 16, 1.0, rng);
  Mat cat(16, 16);
  cat << g1, g2;
  const Mat ref = fuse_step(main, {&cat}, fp.at(1), {});
  EXPECT_EQ(fuse_step(main, {&g1, &g2}, fp.at(1), {}), ref);
  std::vector<int> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat shuffled(16, 16);
    for (int r = 0; r < 16; ++r) shuffled.row(r) = cat.row(perm[r]);
    EXPECT_LT((fuse_step(main, {&shuffled}, fp.at(1), {}) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

class FuseStepGrad : public ::testing::TestWithParam<AblationVariant> {};

TEST_P(FuseStepGrad, MatchesFiniteDifferences) {
  const FuseOptions opt = fuse_options(GetParam());
  FuseParams fp = FuseParams::create(8, 2, {1, 1}, 3);
  const nn::ParamList params = fp.params();
  randomize(params, 0.3, 6);
  std::mt19937_64 rng(7);
  Mat main = nn::randn(4, 8, 1.0, rng);
  const Mat g1 = nn::randn(4, 8, 1.0, rng);
  const Mat g2 = nn::randn(4, 8, 1.0, rng);
  const Mat probe = nn::randn(4, 8, 1.0, rng);
  auto loss = [&] { return fuse_step(main, {&g1, &g2}, fp.at(1), opt).cwiseProduct(probe).sum(); };
  Mat dmain;
  auto result = testing::check_params(params, loss, [&] {
    FuseBlock::Cache c;
    fuse_step(main, {&g1, &g2}, fp.at(1), opt, &c);
    dmain = fuse_step_backward(fp.at(1), c, opt, probe);
  });
  testing::check_matrix("main", main, dmain, loss, result);
  EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
}

INSTANTIATE_TEST_SUITE_P(Variants, FuseStepGrad,
                         ::testing::Values(AblationVariant::kFull, AblationVariant::kShared1Mlp,
                                           AblationVariant::kShared2Mlp,
                                           AblationVariant::kNoCrossAttention,
                                           AblationVariant::kNoResidual));

TEST(MultiForward, EmptyRangeAndZeroInitMatchPlainBackbone) {
  const Backbone bb = Backbone::create(small_config(), 1);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Canvas gm = random_canvas(bb.config.canvas, rng);
    const std::vector<Canvas> guide = {random_canvas(bb.config.canvas, rng),
                                       random_canvas(bb.config.canvas, rng)};
    const Mat plain = forward_logits(gm, bb).logits;
    const MultiModel none = MultiModel::create(bb, FusionRange::none(), 4, AblationVariant::kFull, 2);
    EXPECT_EQ(multi_forward(gm, make_guidance(none, guide, 0), none).logits, plain);
    const MultiModel init = MultiModel::create(bb, {2, 3}, 4, AblationVariant::kFull, 2);
    EXPECT_EQ(multi_forward(gm, make_guidance(init, guide, 0), init).logits, plain);
  }
}

TEST(MultiForward, RangeGatingOfGuidance) {
  const Backbone bb = Backbone::create(small_config(), 1);
  MultiModel m = MultiModel::create(bb, {3, 4}, 4, AblationVariant::kFull, 2);
  randomize(m.fuse.params(), 0.3, 9);
  std::mt19937_64 rng(10);
  const Canvas gm = random_canvas(bb.config.canvas, rng);
  const Canvas g2 = random_canvas(bb.config.canvas, rng);
  MultiTape a, b;
  multi_forward(gm, make_guidance(m, {random_canvas(bb.config.canvas, rng), g2}, 0), m, &a);
  multi_forward(gm, make_guidance(m, {random_canvas(bb.config.canvas, rng), g2}, 0), m, &b);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a.features[i], b.features[i]) << "block " << i;
  for (int i = 3; i <= 4; ++i) EXPECT_NE(a.features[i], b.features[i]) << "block " << i;
}

TEST(MultiForward, FullCompositionFiniteDifference) {
  const Backbone bb = Backbone::create(mini_config(), 1);
  MultiModel m = MultiModel::create(bb, {1, 2}, 2, AblationVariant::kFull, 2);
  randomize(m.fuse.params(), 0.3, 11);
  std::mt19937_64 rng(12);
  const Canvas gm = random_canvas(bb.config.canvas, rng);
  const Guidance g = make_guidance(
      m, {random_canvas(bb.config.canvas, rng), random_canvas(bb.config.canvas, rng)}, 0);
  const TokenGrid target{2, 2, {0, 1, 2, 3}};
  const std::vector<int> mask = masked_patch_indices(bb.config.canvas);
  auto loss = [&] { return masked_ce_loss(multi_forward(gm, g, m), target, mask); };
  const auto result = testing::check_params(m.trainable(), loss, [&] {
    MultiTape tape;
    Mat dl;
    masked_ce_loss(multi_forward(gm, g, m, &tape), target, mask, &dl);
    multi_backward(m, tape, dl);
  });
  EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
  EXPECT_GT(result.checked, 1000);
}

TEST(MultiForward, RandomGuidanceIsReproducible) {
  const Backbone bb = Backbone::create(small_config(), 1);
  MultiModel m = MultiModel::create(bb, {2, 4}, 4, AblationVariant::kRandomGuidance, 2);
  randomize(m.fuse.params(), 0.3, 13);
  std::mt19937_64 rng(14);
  const Canvas gm = random_canvas(bb.config.canvas, rng);
  const std::vector<Canvas> guide = {random_canvas(bb.config.canvas, rng), random_canvas(bb.config.canvas, rng)};
  const Mat a = multi_forward(gm, make_guidance(m, guide, 5), m).logits;
  EXPECT_EQ(multi_forward(gm, make_guidance(m, guide, 5), m).logits, a);
  EXPECT_NE(multi_forward(gm, make_guidance(m, guide, 6), m).logits, a);
  const Guidance r = make_guidance(m, guide, 5);
  EXPECT_NEAR(r.branches[0][3].mean(), 0.0, 0.25);
}

TEST(PredictLabel, ReducesToInpaintWithoutFusion) {
  const Backbone bb = Backbone::create(small_config(), 1);
  std::mt19937_64 rng(15);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_canvas(bb.config.canvas, rng).pixels);
  const Codebook cb = fit_codebook(imgs, 6, 4, 0);
  const MultiModel m = MultiModel::create(bb, FusionRange::none(), 4, AblationVariant::kFull, 2);
  const Canvas gm = random_canvas(bb.config.canvas, rng);
  const GroupCanvases gc{random_canvas(bb.config.canvas, rng), random_canvas(bb.config.canvas, rng), gm};
  const Image pred = predict_label(gc, m, cb);
  EXPECT_EQ(pred, infer_inpaint(gm, bb, cb));
  EXPECT_EQ(pred, predict_label(gc, m, cb));
  EXPECT_EQ(pred.height(), 8);
  EXPECT_EQ(decode(encode(pred, cb), cb), pred);
}

TEST(GroupCanvases, SharedQueryRowAndFrozenGenerator) {
  PromptGeneratorConfig pcfg;
  pcfg.patch_size = 4;
  const PromptGenerator pg = PromptGenerator::create(pcfg, 1);
  const std::uint64_t before = pg.hash();
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto img = [&] {
    Image x(8, 8);
    for (double& v : x.data()) v = u(rng);
    return x;
  };
  PromptGroups groups;
  for (int i = 0; i < 4; ++i) groups.holistic.push_back({img(), {img(), LabelKind::kSegMask}, i});
  groups.high = {groups.holistic[0], groups.holistic[1]};
  groups.low = {groups.holistic[2], groups.holistic[3]};
  const Image query = img();
  const CanvasConfig cfg{8, 8, 4, 0.0};
  const GroupCanvases c = build_group_canvases(groups, query, pg, cfg);
  for (const Canvas* x : {&c.g1, &c.g2}) {
    EXPECT_EQ(extract_quadrant(*x, Quadrant::kBottomLeft), extract_quadrant(c.gm, Quadrant::kBottomLeft));
    EXPECT_EQ(extract_quadrant(*x, Quadrant::kBottomRight), extract_quadrant(c.gm, Quadrant::kBottomRight));
  }
  EXPECT_EQ(pg.hash(), before);
  PromptGroups same{groups.high, groups.high, groups.high};
  const GroupCanvases s = build_group_canvases(same, query, pg, cfg);
  EXPECT_EQ(s.g1.pixels, s.g2.pixels);
  EXPECT_EQ(s.g1.pixels, s.gm.pixels);
}

std::vector<MultiSample> tiny_samples(const Backbone& bb, const Codebook& cb, int n, std::mt19937_64& rng) {
  std::vector<MultiSample> out;
  for (int i = 0; i < n; ++i) {
    MultiSample s;
    s.id = i;
    const Canvas full = random_canvas(bb.config.canvas, rng);
    Canvas truth = full;
    truth.pixels.paste(extract_quadrant(full, Quadrant::kTopRight), 8, 8);
    s.gm = mask_bottom_right(truth, bb.config.canvas);
    s.guidance = {s.gm, random_canvas(bb.config.canvas, rng)};
    s.target = encode(truth.pixels, cb);
    out.push_back(std::move(s));
  }
  return out;
}

TEST(TrainMulti, FreezeContractsAndImprovement) {
  const Backbone bb = Backbone::create(small_config(), 1);
  std::mt19937_64 rng(17);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_canvas(bb.config.canvas, rng).pixels);
  const Codebook cb = fit_codebook(imgs, 6, 4, 0);
  const auto samples = tiny_samples(bb, cb, 8, rng);
  MultiTrainConfig cfg;
  cfg.batch = 4;
  const MultiTrainResult r = train_multi(samples, bb, {2, 3}, AblationVariant::kFull, cfg);
  EXPECT_EQ(r.model.aux.hash(), bb.hash());
  EXPECT_NE(r.model.main.hash(), bb.hash());
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
  const MultiTrainResult again = train_multi(samples, bb, {2, 3}, AblationVariant::kFull, cfg);
  EXPECT_EQ(again.loss_trace, r.loss_trace);
  EXPECT_EQ(again.model.fuse.hash(), r.model.fuse.hash());

  const FuseParams init = FuseParams::create(16, 4, {2, 3}, cfg.seed);
  const MultiTrainResult frozen = train_multi(samples, bb, {2, 3}, AblationVariant::kFreezeBackbone, cfg);
  EXPECT_EQ(frozen.model.main.hash(), bb.hash());
  EXPECT_EQ(frozen.model.aux.hash(), bb.hash());
  EXPECT_NE(frozen.model.fuse.hash(), init.hash());
}

}  // namespace
}  // namespace viclf
