#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "viclf/checkpoint.hpp"
#include "viclf/config.hpp"
#include "viclf/eval.hpp"
#include "viclf/pipeline.hpp"

namespace viclf::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool force = false;
  std::vector<std::string> variants;
  std::string knob;
  std::vector<int> values;
};

RunConfig load_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? parse_config(json::object()) : parse_config_file(o.config);
  if (o.seed) cfg = cfg.with_seed(*o.seed);
  cfg.eval.seeds = {cfg.seed};
  return cfg;
}

fs::path data_root(const RunConfig& cfg, const Options& o) {
  return resolve_data_dir(cfg, fs::path(o.out) / "data");
}

fs::path stage_path(const Options& o, Stage s, AblationVariant v = AblationVariant::kFull) {
  switch (s) {
    case Stage::kBackbone: return fs::path(o.out) / "backbone" / "backbone.ckpt";
    case Stage::kPromptGenerator: return fs::path(o.out) / "pg" / "pg.ckpt";
    case Stage::kMulti: return fs::path(o.out) / "multi" / ("multi_" + to_string(v) + ".ckpt");
  }
  return {};
}

void guard_output(const fs::path& p, const Options& o) {
  if (fs::exists(p) && !o.force) {
    throw OutputExistsError(p.string() + " already exists; pass --force to overwrite");
  }
}

void require_stage(const fs::path& p, const std::string& stage, const std::string& command) {
  if (!fs::exists(p)) {
    throw StageOrderError(command + " needs " + p.string() + "; run " + stage + " first");
  }
}

Dataset load_data(const RunConfig& cfg, const Options& o, const std::string& command) {
  const fs::path root = data_root(cfg, o);
  require_stage(root / to_string(cfg.task.task) / "manifest.json", "gen-data", command);
  Dataset ds = load_dataset(root, cfg.task.task);
  if (!(ds.spec == cfg.task_for_seed(cfg.seed))) {
    throw StageOrderError("dataset under " + root.string() +
                          " was generated for another task spec or seed; rerun gen-data --force");
  }
  return ds;
}

// Loads the data and every checkpoint up to and including `upto`.
SeedArtifacts load_artifacts(const RunConfig& cfg, const Options& o, Stage upto,
                             const std::string& command) {
  SeedArtifacts art;
  art.seed = cfg.seed;
  art.data = load_data(cfg, o, command);
  const fs::path bb_path = stage_path(o, Stage::kBackbone);
  require_stage(bb_path, "train-backbone", command);
  const Checkpoint bb_ck = load_checkpoint(bb_path, Stage::kBackbone, stage_hash(cfg, Stage::kBackbone));
  art.codebook = bb_ck.codebook;
  art.backbone = backbone_from(bb_ck, cfg.backbone);
  art.retrieval = build_retrieval(art.data, *art.backbone, cfg.retrieval.k);
  if (upto == Stage::kBackbone) return art;
  const fs::path pg_path = stage_path(o, Stage::kPromptGenerator);
  require_stage(pg_path, "train-pg", command);
  art.pg = prompt_generator_from(
      load_checkpoint(pg_path, Stage::kPromptGenerator, stage_hash(cfg, Stage::kPromptGenerator)), cfg.pg);
  return art;
}

MultiModel load_multi(const SeedArtifacts& art, const RunConfig& cfg, const Options& o,
                      AblationVariant v, const std::string& command) {
  const fs::path p = stage_path(o, Stage::kMulti, v);
  require_stage(p, "train-multi --variant " + to_string(v), command);
  MultiModel m = multi_from(load_checkpoint(p, Stage::kMulti, stage_hash(cfg, Stage::kMulti)),
                            *art.backbone, cfg.fusion, cfg.multi.fuse_heads);
  if (m.variant != v) throw CheckpointError(p.string() + " holds variant " + to_string(m.variant));
  return m;
}

json trace_meta(const std::vector<double>& trace) {
  return {{"loss_trace", trace}, {"final_loss", trace.empty() ? 0.0 : trace.back()}};
}

std::vector<AblationVariant> parse_variants(const std::vector<std::string>& names) {
  std::vector<AblationVariant> out;
  for (const auto& n : names) out.push_back(variant_from_string(n));
  return out;
}

MetricReport report_for(const MethodId& m, const SeedArtifacts& art, const RunConfig& cfg,
                        const std::string& label = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricReport r;
  r.method = m.name();
  r.metric = metric_name(cfg.task.task);
  r.config_hash = hex64(config_hash(cfg));
  r.label = label;
  r.seeds.push_back(score_method(m, art, cfg));
  r.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

json summary_of(const std::string& command, const std::vector<fs::path>& outputs) {
  json paths = json::array();
  for (const auto& p : outputs) paths.push_back(p.string());
  return {{"command", command}, {"outputs", paths}};
}

json cmd_gen_data(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path root = data_root(cfg, o);
  const fs::path manifest = root / to_string(cfg.task.task) / "manifest.json";
  guard_output(manifest, o);
  const Dataset ds = generate(cfg.task_for_seed(cfg.seed));
  save_dataset(ds, root);
  json j = summary_of("gen-data", {manifest});
  j["content_hash"] = hex64(content_hash(ds));
  return j;
}

json cmd_train_backbone(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path out = stage_path(o, Stage::kBackbone);
  guard_output(out, o);
  const Dataset ds = load_data(cfg, o, "train-backbone");
  const Codebook cb = fit_task_codebook(ds, cfg);
  const BackboneTrainResult r = pretrain_backbone(cb, cfg);
  Checkpoint ck = make_checkpoint(r.weights, cb, stage_hash(cfg, Stage::kBackbone));
  ck.meta.update(trace_meta(r.loss_trace));
  fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  return summary_of("train-backbone", {out});
}

json cmd_train_pg(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path out = stage_path(o, Stage::kPromptGenerator);
  guard_output(out, o);
  const SeedArtifacts art = load_artifacts(cfg, o, Stage::kBackbone, "train-pg");
  const PGTrainResult r = train_prompt_generator(pg_samples(art.data, *art.retrieval), *art.backbone,
                                                 art.codebook, cfg.pg, cfg.pg_train);
  Checkpoint ck = make_checkpoint(r.weights, art.codebook, stage_hash(cfg, Stage::kPromptGenerator));
  ck.meta.update(trace_meta(r.loss_trace));
  fs::create_directories(out.parent_path());
  save_checkpoint(out, ck);
  return summary_of("train-pg", {out});
}

json cmd_train_multi(const Options& o) {
  const RunConfig cfg = load_config(o);
  std::vector<AblationVariant> variants = parse_variants(o.variants);
  if (variants.empty()) variants.push_back(AblationVariant::kFull);
  for (AblationVariant v : variants) guard_output(stage_path(o, Stage::kMulti, v), o);
  const SeedArtifacts art = load_artifacts(cfg, o, Stage::kPromptGenerator, "train-multi");
  std::vector<fs::path> outputs;
  for (AblationVariant v : variants) {
    const fs::path out = stage_path(o, Stage::kMulti, v);
    const MultiModel m = train_multi_model(art, cfg, v);
    fs::create_directories(out.parent_path());
    save_checkpoint(out, make_checkpoint(m, art.codebook, stage_hash(cfg, Stage::kMulti)));
    outputs.push_back(out);
  }
  return summary_of("train-multi", outputs);
}

json cmd_eval(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir = fs::path(o.out) / "eval";
  guard_output(dir / "eval.jsonl", o);
  SeedArtifacts art = load_artifacts(cfg, o, Stage::kPromptGenerator, "eval");
  art.multi.emplace(AblationVariant::kFull, load_multi(art, cfg, o, AblationVariant::kFull, "eval"));
  std::vector<MethodId> methods{{Method::kTop1}, {Method::kCondenserSingle}, {Method::kMultiFull}};
  for (AblationVariant v : parse_variants(o.variants)) {
    if (v == AblationVariant::kFull) continue;
    art.multi.emplace(v, load_multi(art, cfg, o, v, "eval"));
    methods.push_back({Method::kMultiVariant, v});
  }
  std::vector<MetricReport> reports;
  for (const auto& m : methods) reports.push_back(report_for(m, art, cfg));
  write_report(dir, "eval", reports);
  return summary_of("eval", {dir / "eval.jsonl", dir / "eval.summary.json", dir / "eval.csv"});
}

json cmd_ablate(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir = fs::path(o.out) / "ablate";
  guard_output(dir / "ablate.jsonl", o);
  std::vector<AblationVariant> variants = parse_variants(o.variants);
  if (variants.empty()) variants = all_variants();
  if (std::find(variants.begin(), variants.end(), AblationVariant::kFull) == variants.end()) {
    variants.insert(variants.begin(), AblationVariant::kFull);
  }
  SeedArtifacts art = load_artifacts(cfg, o, Stage::kPromptGenerator, "ablate");
  std::vector<MetricReport> reports;
  for (AblationVariant v : variants) {
    const fs::path trained = stage_path(o, Stage::kMulti, v);
    MultiModel m = fs::exists(trained) ? load_multi(art, cfg, o, v, "ablate") : train_multi_model(art, cfg, v);
    fs::create_directories(dir);
    save_checkpoint(dir / ("multi_" + to_string(v) + ".ckpt"),
                    make_checkpoint(m, art.codebook, stage_hash(cfg, Stage::kMulti)));
    art.multi.insert_or_assign(v, std::move(m));
    const MethodId id = v == AblationVariant::kFull ? MethodId{Method::kMultiFull}
                                                    : MethodId{Method::kMultiVariant, v};
    reports.push_back(report_for(id, art, cfg, to_string(v)));
  }
  write_report(dir, "ablate", reports);
  return summary_of("ablate", {dir / "ablate.jsonl", dir / "ablate.summary.json", dir / "ablate.csv"});
}

json cmd_sweep(const Options& o) {
  const RunConfig cfg = load_config(o);
  const SweepKnob knob = knob_from_string(o.knob);
  if (o.values.empty()) throw ConfigError("sweep: --values must list at least one value");
  const fs::path dir = fs::path(o.out) / "sweep";
  const std::string stem = to_string(knob);
  guard_output(dir / (stem + ".jsonl"), o);
  const SeedArtifacts art = load_artifacts(cfg, o, Stage::kPromptGenerator, "sweep");
  const SweepResult r = run_sweep({&art}, cfg, knob, o.values);
  write_report(dir, stem, r.reports);
  json j = summary_of("sweep", {dir / (stem + ".jsonl"), dir / (stem + ".summary.json"),
                                dir / (stem + ".csv")});
  json invalid = json::array();
  for (const auto& [value, reason] : r.invalid) invalid.push_back({{"value", value}, {"reason", reason}});
  j["invalid"] = invalid;
  return j;
}

PlotSeries series_from_summary(const fs::path& summary, const std::string& title, bool line) {
  std::ifstream in(summary);
  const json arr = json::parse(in);
  PlotSeries s;
  s.title = title;
  s.line = line;
  for (const auto& e : arr) {
    s.labels.push_back(e.value("label", e.at("method").get<std::string>()));
    s.values.push_back(e.at("mean").get<double>());
    s.errors.push_back(e.at("std").get<double>());
  }
  return s;
}

json cmd_plot(const Options& o) {
  const fs::path root(o.out);
  const fs::path dir = root / "plot";
  struct Source {
    fs::path summary;
    std::string name;
    bool line;
  };
  std::vector<Source> sources;
  if (fs::exists(root / "eval" / "eval.summary.json")) {
    sources.push_back({root / "eval" / "eval.summary.json", "eval", false});
  }
  if (fs::exists(root / "ablate" / "ablate.summary.json")) {
    sources.push_back({root / "ablate" / "ablate.summary.json", "ablate", false});
  }
  if (fs::is_directory(root / "sweep")) {
    std::vector<fs::path> sweeps;
    for (const auto& e : fs::directory_iterator(root / "sweep")) {
      const std::string name = e.path().filename().string();
      if (name.size() > 13 && name.ends_with(".summary.json")) sweeps.push_back(e.path());
    }
    std::sort(sweeps.begin(), sweeps.end());
    for (const auto& p : sweeps) {
      const std::string name = p.filename().string();
      sources.push_back({p, "sweep_" + name.substr(0, name.size() - 13), true});
    }
  }
  if (sources.empty()) throw StageOrderError("plot needs eval, ablate or sweep results under " + root.string());
  std::vector<fs::path> outputs;
  for (const auto& s : sources) {
    const fs::path png = dir / (s.name + ".png");
    guard_output(png, o);
    outputs.push_back(png);
  }
  fs::create_directories(dir);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    render_plot(series_from_summary(sources[i].summary, sources[i].name, sources[i].line), outputs[i]);
  }
  return summary_of("plot", outputs);
}

void error_record(std::ostream& err, int code, const std::string& kind, const std::string& command,
                  const std::string& message) {
  err << json{{"error", {{"code", code}, {"kind", kind}, {"command", command}, {"message", message}}}}.dump()
      << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Multi-prompt visual in-context learning toolkit", "viclf"};
  app.require_subcommand(1, 1);

  const auto common = [&o](CLI::App* sub, bool training) {
    sub->add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_flag("--force", o.force, "Overwrite existing outputs");
    if (training) sub->add_option("--seed", o.seed, "Run seed (overrides the config)");
  };

  std::vector<std::pair<CLI::App*, json (*)(const Options&)>> commands;
  auto* gen = app.add_subcommand("gen-data", "Generate and store the synthetic dataset");
  common(gen, true);
  commands.emplace_back(gen, cmd_gen_data);
  auto* bb = app.add_subcommand("train-backbone", "Pretrain the inpainting backbone");
  common(bb, true);
  commands.emplace_back(bb, cmd_train_backbone);
  auto* pg = app.add_subcommand("train-pg", "Train the prompt generator");
  common(pg, true);
  commands.emplace_back(pg, cmd_train_pg);
  auto* mu = app.add_subcommand("train-multi", "Train multi-branch fusion models");
  common(mu, true);
  mu->add_option("--variant", o.variants, "Ablation variant(s), default full");
  commands.emplace_back(mu, cmd_train_multi);
  auto* ev = app.add_subcommand("eval", "Evaluate top-1, single condensed prompt and multi fusion");
  common(ev, true);
  ev->add_option("--variant", o.variants, "Additional trained variants to evaluate");
  commands.emplace_back(ev, cmd_eval);
  auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  common(ab, true);
  ab->add_option("--variant", o.variants, "Variants to run, default all");
  commands.emplace_back(ab, cmd_ablate);
  auto* sw = app.add_subcommand("sweep", "Sweep one hyper-parameter of multi fusion");
  common(sw, true);
  sw->add_option("--knob", o.knob, "K_g1, K_g2, fusion_center, fusion_width or group_count")->required();
  sw->add_option("--values", o.values, "Values to sweep")->required()->delimiter(',');
  commands.emplace_back(sw, cmd_sweep);
  auto* pl = app.add_subcommand("plot", "Render result charts to PNG");
  common(pl, false);
  commands.emplace_back(pl, cmd_plot);

  std::string command = "viclf";
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    error_record(err, kUsage, "usage", command, e.what());
    return kUsage;
  }

  for (const auto& [sub, fn] : commands) {
    if (!sub->parsed()) continue;
    command = sub->get_name();
    try {
      out << fn(o).dump() << "\n";
      return kOk;
    } catch (const StageOrderError& e) {
      error_record(err, kStageOrder, "stage_order", command, e.what());
      return kStageOrder;
    } catch (const OutputExistsError& e) {
      error_record(err, kOutputExists, "output_exists", command, e.what());
      return kOutputExists;
    } catch (const CheckpointError& e) {
      error_record(err, kCheckpoint, "checkpoint", command, e.what());
      return kCheckpoint;
    } catch (const ConfigError& e) {
      error_record(err, kConfig, "config", command, e.what());
      return kConfig;
    } catch (const std::exception& e) {
      error_record(err, kFailure, "failure", command, e.what());
      return kFailure;
    }
  }
  error_record(err, kUsage, "usage", command, "no command given");
  return kUsage;
}

}  // namespace viclf::cli
