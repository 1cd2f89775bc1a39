#include "viclf/pipeline.hpp"

#include <chrono>
#include <functional>

namespace viclf {

Codebook fit_task_codebook(const Dataset& ds, const RunConfig& cfg) {
  std::vector<Image> labels;
  labels.reserve(ds.support.size());
  for (const auto& p : ds.support) labels.push_back(p.label.pixels);
  return fit_codebook(labels, cfg.backbone.vocab, cfg.canvas().patch_size, cfg.seed);
}

BackboneTrainResult pretrain_backbone(const Codebook& cb, const RunConfig& cfg) {
  const auto canvases =
      gen_episodic_canvases(cfg.task_for_seed(cfg.seed), cfg.pretrain.canvases, cfg.canvas());
  TrainConfig train = cfg.pretrain.train;
  train.seed = cfg.seed;
  return train_backbone(canvases, cb, cfg.backbone, train);
}

RetrievalCache build_retrieval(const Dataset& ds, const Backbone& bb, int k) {
  RetrievalCache rc;
  rc.index = build_support_index(ds.support, bb);
  const int n = static_cast<int>(ds.support.size());
  if (k + 1 > n) throw ConfigError("support set too small for K neighbours plus the pseudo-query");
  rc.support.reserve(ds.support.size());
  for (int i = 0; i < n; ++i) {
    const RankedSupport all = rank_top_k(rc.index.embeddings[i], rc.index, k + 1, ds.support[i].id);
    RankedSupport r;
    r.query_id = all.query_id;
    for (const auto& e : all.entries) {
      if (e.pair.id != ds.support[i].id && r.size() < k) r.entries.push_back(e);
    }
    rc.support.push_back(std::move(r));
  }
  rc.queries.reserve(ds.queries.size());
  for (const auto& q : ds.queries) {
    rc.queries.push_back(rank_top_k(embed_image(q.image, bb), rc.index, k, q.id));
  }
  return rc;
}

std::vector<PGSample> pg_samples(const Dataset& ds, const RetrievalCache& rc) {
  std::vector<PGSample> out;
  out.reserve(ds.support.size());
  for (std::size_t i = 0; i < ds.support.size(); ++i) {
    PGSample s;
    for (const auto& e : rc.support[i].entries) s.group.push_back(e.pair);
    s.query = ds.support[i].image;
    s.label = ds.support[i].label.pixels;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<SupportPair>> guidance_groups(const RankedSupport& ranked,
                                                      const RetrievalConfig& rcfg) {
  if (rcfg.group_count == 2) {
    PromptGroups g = mpgs_partition(ranked, rcfg.k_g1, rcfg.k_g2);
    return {std::move(g.high), std::move(g.low)};
  }
  return split_even(ranked, rcfg.group_count);
}

BranchCanvases branch_canvases(const RankedSupport& ranked, const Image& query,
                               const PromptGenerator& pg, const RunConfig& cfg) {
  std::vector<SupportPair> holistic;
  for (const auto& e : ranked.entries) holistic.push_back(e.pair);
  BranchCanvases bc;
  bc.gm = build_fused_canvas(condense(holistic, query, pg), query, cfg.canvas());
  for (const auto& group : guidance_groups(ranked, cfg.retrieval)) {
    bc.guidance.push_back(build_fused_canvas(condense(group, query, pg), query, cfg.canvas()));
  }
  return bc;
}

std::vector<MultiSample> multi_samples(const Dataset& ds, const RetrievalCache& rc,
                                       const PromptGenerator& pg, const Codebook& cb,
                                       const RunConfig& cfg) {
  std::vector<MultiSample> out;
  out.reserve(ds.support.size());
  for (std::size_t i = 0; i < ds.support.size(); ++i) {
    BranchCanvases bc = branch_canvases(rc.support[i], ds.support[i].image, pg, cfg);
    MultiSample s;
    s.id = ds.support[i].id;
    s.gm = std::move(bc.gm);
    s.guidance = std::move(bc.guidance);
    s.target = label_target(ds.support[i].image, ds.support[i].label.pixels, cb, cfg.canvas());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

Image predict_multi(const MultiModel& model, const SeedArtifacts& art, std::size_t qi,
                    const RunConfig& cfg) {
  const SupportPair& q = art.data.queries[qi];
  const BranchCanvases bc = branch_canvases(art.retrieval->queries[qi], q.image, *art.pg, cfg);
  const ArrangedInputs in = arrange_inputs(model.variant, bc.gm, bc.guidance);
  return predict_label(in.main, make_guidance(model, in.guidance, q.id), model, art.codebook);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("missing prerequisite: " + what);
}

double score_one(TaskKind task, const Image& pred, const Image& gt, double threshold) {
  if (task == TaskKind::kColor) return mse(pred, gt);
  return miou(binarize(pred, threshold), gt);
}

SeedScores score_with(const std::function<Image(std::size_t)>& pred, const SeedArtifacts& art,
                      const RunConfig& cfg) {
  SeedScores s;
  s.seed = art.seed;
  for (std::size_t qi = 0; qi < art.data.queries.size(); ++qi) {
    const SupportPair& q = art.data.queries[qi];
    s.scores.push_back({q.id, score_one(cfg.task.task, pred(qi), q.label.pixels, cfg.eval.threshold)});
  }
  return s;
}

}  // namespace

MultiModel train_multi_model(const SeedArtifacts& art, const RunConfig& cfg, AblationVariant v) {
  const auto samples = multi_samples(art.data, *art.retrieval, *art.pg, art.codebook, cfg);
  MultiTrainConfig mc = cfg.multi;
  mc.seed = art.seed;
  return train_multi(samples, *art.backbone, cfg.fusion, v, mc).model;
}

Image predict(const MethodId& m, const SeedArtifacts& art, std::size_t qi, const RunConfig& cfg) {
  require(art.backbone.has_value(), "backbone");
  require(art.retrieval.has_value(), "retrieval");
  const SupportPair& q = art.data.queries.at(qi);
  const RankedSupport& ranked = art.retrieval->queries.at(qi);
  switch (m.method) {
    case Method::kTop1:
      return infer_inpaint(compose_canvas(ranked.entries.at(0).pair, q.image, cfg.canvas()),
                           *art.backbone, art.codebook);
    case Method::kCondenserSingle: {
      require(art.pg.has_value(), "prompt generator");
      std::vector<SupportPair> holistic;
      for (const auto& e : ranked.entries) holistic.push_back(e.pair);
      const Canvas c = build_fused_canvas(condense(holistic, q.image, *art.pg), q.image, cfg.canvas());
      return infer_inpaint(c, *art.backbone, art.codebook);
    }
    case Method::kMultiFull:
    case Method::kMultiVariant: {
      require(art.pg.has_value(), "prompt generator");
      const AblationVariant v = m.method == Method::kMultiFull ? AblationVariant::kFull : m.variant;
      const auto it = art.multi.find(v);
      require(it != art.multi.end(), "multi model for variant " + to_string(v));
      return predict_multi(it->second, art, qi, cfg);
    }
  }
  throw ConfigError("unknown method");
}

SeedScores score_method(const MethodId& m, const SeedArtifacts& art, const RunConfig& cfg) {
  return score_with([&](std::size_t qi) { return predict(m, art, qi, cfg); }, art, cfg);
}

std::string metric_name(TaskKind task) { return task == TaskKind::kColor ? "mse" : "miou"; }

Experiment::Experiment(RunConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

SeedArtifacts& Experiment::prepare(std::uint64_t seed) {
  auto it = seeds_.find(seed);
  if (it != seeds_.end()) return it->second;
  const RunConfig cfg = cfg_.with_seed(seed);
  SeedArtifacts art;
  art.seed = seed;
  art.data = generate(cfg.task);
  art.codebook = fit_task_codebook(art.data, cfg);
  art.backbone = pretrain_backbone(art.codebook, cfg).weights;
  art.retrieval = build_retrieval(art.data, *art.backbone, cfg.retrieval.k);
  art.pg = train_prompt_generator(pg_samples(art.data, *art.retrieval), *art.backbone, art.codebook,
                                  cfg.pg, cfg.pg_train)
               .weights;
  return seeds_.emplace(seed, std::move(art)).first->second;
}

const MultiModel& Experiment::multi(std::uint64_t seed, AblationVariant v) {
  SeedArtifacts& art = prepare(seed);
  auto it = art.multi.find(v);
  if (it == art.multi.end()) {
    it = art.multi.emplace(v, train_multi_model(art, cfg_.with_seed(seed), v)).first;
  }
  return it->second;
}

MetricReport Experiment::run_method(const MethodId& m) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricReport r;
  r.method = m.name();
  r.metric = metric_name(cfg_.task.task);
  r.config_hash = hex64(config_hash(cfg_));
  for (std::uint64_t seed : cfg_.eval.seeds) {
    SeedArtifacts& art = prepare(seed);
    if (m.method == Method::kMultiFull) multi(seed, AblationVariant::kFull);
    if (m.method == Method::kMultiVariant) multi(seed, m.variant);
    r.seeds.push_back(score_method(m, art, cfg_.with_seed(seed)));
  }
  r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string to_string(SweepKnob k) {
  switch (k) {
    case SweepKnob::kKg1: return "K_g1";
    case SweepKnob::kKg2: return "K_g2";
    case SweepKnob::kFusionCenter: return "fusion_center";
    case SweepKnob::kFusionWidth: return "fusion_width";
    case SweepKnob::kGroupCount: return "group_count";
  }
  return "unknown";
}

SweepKnob knob_from_string(const std::string& name) {
  for (SweepKnob k : {SweepKnob::kKg1, SweepKnob::kKg2, SweepKnob::kFusionCenter,
                      SweepKnob::kFusionWidth, SweepKnob::kGroupCount}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown sweep knob: " + name);
}

RunConfig sweep_point(const RunConfig& base, SweepKnob knob, int value) {
  RunConfig c = base;
  const int depth = base.backbone.depth;
  const int width = base.fusion.size();
  const int center = base.fusion.empty() ? (depth + 1) / 2 : (base.fusion.n_down + base.fusion.n_up) / 2;
  switch (knob) {
    case SweepKnob::kKg1: c.retrieval.k_g1 = value; break;
    case SweepKnob::kKg2: c.retrieval.k_g2 = value; break;
    case SweepKnob::kFusionCenter:
      if (value < 1 || value > depth) throw ConfigError("fusion center outside [1, depth]");
      c.fusion = FusionRange::from_center_width(value, width, depth);
      break;
    case SweepKnob::kFusionWidth: c.fusion = FusionRange::from_center_width(center, value, depth); break;
    case SweepKnob::kGroupCount: c.retrieval.group_count = value; break;
  }
  validate(c);
  return c;
}

SweepResult run_sweep(const std::vector<const SeedArtifacts*>& seeds, const RunConfig& base,
                      SweepKnob knob, const std::vector<int>& values) {
  SweepResult out;
  for (int value : values) {
    RunConfig point;
    try {
      point = sweep_point(base, knob, value);
    } catch (const ConfigError& e) {
      out.invalid.emplace_back(value, e.what());
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    MetricReport r;
    r.method = MethodId{Method::kMultiFull}.name();
    r.metric = metric_name(point.task.task);
    r.config_hash = hex64(config_hash(point));
    r.label = to_string(knob) + "=" + std::to_string(value);
    for (const SeedArtifacts* art : seeds) {
      const RunConfig seeded = point.with_seed(art->seed);
      const MultiModel model = train_multi_model(*art, seeded, AblationVariant::kFull);
      r.seeds.push_back(
          score_with([&](std::size_t qi) { return predict_multi(model, *art, qi, seeded); }, *art, seeded));
    }
    r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.reports.push_back(std::move(r));
  }
  return out;
}

SweepResult run_sweep(Experiment& exp, SweepKnob knob, const std::vector<int>& values) {
  std::vector<const SeedArtifacts*> seeds;
  for (std::uint64_t s : exp.config().eval.seeds) seeds.push_back(&exp.prepare(s));
  return run_sweep(seeds, exp.config(), knob, values);
}

}  // namespace viclf
