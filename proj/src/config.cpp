#include "viclf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "viclf/hash.hpp"

namespace viclf {

using nlohmann::json;

TaskSpec RunConfig::task_for_seed(std::uint64_t run_seed) const {
  TaskSpec s = task;
  s.seed = run_seed;
  return s;
}

RunConfig RunConfig::with_seed(std::uint64_t run_seed) const {
  RunConfig c = *this;
  c.seed = run_seed;
  c.task.seed = run_seed;
  c.pretrain.train.seed = run_seed;
  c.pg_train.seed = run_seed;
  c.multi.seed = run_seed;
  return c;
}

namespace {

// Walks one JSON object, pulling known keys and remembering which were seen
// so the leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path, std::vector<std::string>& errors)
      : path_(std::move(path)), errors_(errors) {
    if (j.is_object()) {
      obj_ = &j;
    } else {
      errors_.push_back(path_ + ": expected an object");
    }
  }

  ~Section() {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) errors_.push_back(field(key) + ": unknown key");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    if (!type_ok<T>(v)) {
      errors_.push_back(field(key) + ": wrong type");
      return;
    }
    out = v.get<T>();
  }

  void get_optimizer(const std::string& key, OptimizerKind& out) {
    std::string name = to_string(out);
    get(key, name);
    try {
      out = optimizer_from_string(name);
    } catch (const ConfigError& e) {
      errors_.push_back(field(key) + ": " + e.what());
    }
  }

  /// Nested object; absent keys yield an empty object.
  const json& child(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    if (obj_ == nullptr || !obj_->contains(key)) return kEmpty;
    return obj_->at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <typename T>
  static bool type_ok(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_unsigned_v<T>) {
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_integral_v<T>) {
      return v.is_number_integer();
    } else {
      if (!v.is_array()) return false;
      for (const auto& e : v) {
        if (!type_ok<typename T::value_type>(e)) return false;
      }
      return true;
    }
  }

  const json* obj_ = nullptr;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void check(std::vector<std::string>& out, const std::string& path, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    out.push_back(path + ": " + e.what());
  }
}

}  // namespace

std::vector<std::string> config_problems(const RunConfig& cfg) {
  std::vector<std::string> out;
  const auto& r = cfg.retrieval;
  check(out, "task", [&] { cfg.task.validate(); });
  check(out, "canvas", [&] { cfg.canvas().validate(); });
  if (cfg.canvas().quadrant_h != cfg.task.image_size || cfg.canvas().quadrant_w != cfg.task.image_size) {
    out.push_back("canvas: quadrant size must equal task.image_size");
  }
  if (cfg.pg.patch_size != cfg.canvas().patch_size) {
    out.push_back("prompt_generator: patch size must equal canvas.patch_size");
  }
  check(out, "backbone", [&] { cfg.backbone.validate(); });
  if (cfg.pretrain.canvases < 1) out.push_back("pretrain.canvases: must be >= 1");
  if (!(cfg.pretrain.train.lr > 0.0)) out.push_back("pretrain.lr: must be positive");
  if (cfg.pretrain.train.epochs < 0) out.push_back("pretrain.epochs: must be >= 0");
  if (cfg.pretrain.train.batch < 1) out.push_back("pretrain.batch: must be >= 1");
  if (cfg.pretrain.train.clip_norm < 0.0) out.push_back("pretrain.clip_norm: must be >= 0");
  if (r.k < 1) out.push_back("retrieval.K: must be >= 1");
  if (r.k_g1 < 1) out.push_back("retrieval.K_g1: must be >= 1");
  if (r.k_g2 < 1) out.push_back("retrieval.K_g2: must be >= 1");
  if (r.k_g1 + r.k_g2 > r.k) out.push_back("retrieval: K_g1+K_g2 ≤ K violated");
  if (r.group_count < 1 || r.group_count > r.k) {
    out.push_back("retrieval.group_count: must lie in [1, K]");
  }
  // Support pseudo-queries retrieve K neighbours other than themselves.
  if (cfg.task.n_support < r.k + 1) out.push_back("task.n_support: must be at least K + 1");
  check(out, "prompt_generator", [&] {
    cfg.pg.validate();
    cfg.pg_train.validate();
  });
  check(out, "multi", [&] {
    cfg.fusion.validate(cfg.backbone.depth);
    cfg.multi.validate();
  });
  if (cfg.multi.fuse_heads >= 1 && cfg.backbone.embed_dim % cfg.multi.fuse_heads != 0) {
    out.push_back("multi.fuse_heads: must divide backbone.embed_dim");
  }
  if (cfg.multi.clip_norm < 0.0) out.push_back("multi.clip_norm: must be >= 0");
  if (!(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0)) {
    out.push_back("eval.threshold: must lie in (0, 1)");
  }
  if (cfg.eval.seeds.empty()) out.push_back("eval.seeds: must be nonempty");
  return out;
}

void validate(const RunConfig& cfg) {
  const auto problems = config_problems(cfg);
  if (problems.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  std::vector<std::string> errors;
  {
    Section root(j, "", errors);
    root.get("seed", cfg.seed);
    {
      Section t(root.child("task"), "task", errors);
      std::string kind = to_string(cfg.task.task);
      t.get("kind", kind);
      check(errors, "task.kind", [&] { cfg.task.task = task_from_string(kind); });
      t.get("n_support", cfg.task.n_support);
      t.get("n_query", cfg.task.n_query);
      t.get("image_size", cfg.task.image_size);
      t.get("num_classes", cfg.task.num_classes);
      t.get("max_shapes", cfg.task.max_shapes);
      t.get("min_radius", cfg.task.min_radius);
      t.get("max_radius", cfg.task.max_radius);
      t.get("texture_noise", cfg.task.texture_noise);
    }
    {
      Section c(root.child("canvas"), "canvas", errors);
      c.get("patch_size", cfg.backbone.canvas.patch_size);
      c.get("mask_fill", cfg.backbone.canvas.mask_fill);
    }
    {
      Section b(root.child("backbone"), "backbone", errors);
      b.get("depth", cfg.backbone.depth);
      b.get("embed_dim", cfg.backbone.embed_dim);
      b.get("heads", cfg.backbone.heads);
      b.get("mlp_ratio", cfg.backbone.mlp_ratio);
      b.get("vocab", cfg.backbone.vocab);
    }
    {
      Section p(root.child("pretrain"), "pretrain", errors);
      p.get("canvases", cfg.pretrain.canvases);
      p.get("epochs", cfg.pretrain.train.epochs);
      p.get("batch", cfg.pretrain.train.batch);
      p.get("lr", cfg.pretrain.train.lr);
      p.get_optimizer("optimizer", cfg.pretrain.train.optimizer);
      p.get("clip_norm", cfg.pretrain.train.clip_norm);
    }
    {
      Section r(root.child("retrieval"), "retrieval", errors);
      r.get("K", cfg.retrieval.k);
      r.get("K_g1", cfg.retrieval.k_g1);
      r.get("K_g2", cfg.retrieval.k_g2);
      r.get("group_count", cfg.retrieval.group_count);
    }
    {
      Section g(root.child("prompt_generator"), "prompt_generator", errors);
      g.get("attn_dim", cfg.pg.attn_dim);
      g.get("attn_init_std", cfg.pg.attn_init_std);
      g.get("lambda", cfg.pg_train.lambda);
      g.get("lr", cfg.pg_train.lr);
      g.get("epochs", cfg.pg_train.epochs);
      g.get("batch", cfg.pg_train.batch);
      g.get_optimizer("optimizer", cfg.pg_train.optimizer);
    }
    {
      Section m(root.child("multi"), "multi", errors);
      m.get("N_down", cfg.fusion.n_down);
      m.get("N_up", cfg.fusion.n_up);
      m.get("fuse_heads", cfg.multi.fuse_heads);
      m.get("lr", cfg.multi.lr);
      m.get("epochs", cfg.multi.epochs);
      m.get("batch", cfg.multi.batch);
      m.get_optimizer("optimizer", cfg.multi.optimizer);
      m.get("clip_norm", cfg.multi.clip_norm);
    }
    {
      Section e(root.child("eval"), "eval", errors);
      e.get("threshold", cfg.eval.threshold);
      e.get("seeds", cfg.eval.seeds);
    }
    {
      Section p(root.child("paths"), "paths", errors);
      p.get("data_dir", cfg.data_dir);
    }
  }
  cfg.backbone.canvas.quadrant_h = cfg.backbone.canvas.quadrant_w = cfg.task.image_size;
  cfg.pg.patch_size = cfg.backbone.canvas.patch_size;
  cfg = cfg.with_seed(cfg.seed);
  for (const auto& p : config_problems(cfg)) errors.push_back(p);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& cfg) {
  const auto& t = cfg.task;
  const auto& b = cfg.backbone;
  const auto& p = cfg.pretrain.train;
  return {
      {"seed", cfg.seed},
      {"task",
       {{"kind", to_string(t.task)},
        {"n_support", t.n_support},
        {"n_query", t.n_query},
        {"image_size", t.image_size},
        {"num_classes", t.num_classes},
        {"max_shapes", t.max_shapes},
        {"min_radius", t.min_radius},
        {"max_radius", t.max_radius},
        {"texture_noise", t.texture_noise}}},
      {"canvas", {{"patch_size", b.canvas.patch_size}, {"mask_fill", b.canvas.mask_fill}}},
      {"backbone",
       {{"depth", b.depth},
        {"embed_dim", b.embed_dim},
        {"heads", b.heads},
        {"mlp_ratio", b.mlp_ratio},
        {"vocab", b.vocab}}},
      {"pretrain",
       {{"canvases", cfg.pretrain.canvases},
        {"epochs", p.epochs},
        {"batch", p.batch},
        {"lr", p.lr},
        {"optimizer", to_string(p.optimizer)},
        {"clip_norm", p.clip_norm}}},
      {"retrieval",
       {{"K", cfg.retrieval.k},
        {"K_g1", cfg.retrieval.k_g1},
        {"K_g2", cfg.retrieval.k_g2},
        {"group_count", cfg.retrieval.group_count}}},
      {"prompt_generator",
       {{"attn_dim", cfg.pg.attn_dim},
        {"attn_init_std", cfg.pg.attn_init_std},
        {"lambda", cfg.pg_train.lambda},
        {"lr", cfg.pg_train.lr},
        {"epochs", cfg.pg_train.epochs},
        {"batch", cfg.pg_train.batch},
        {"optimizer", to_string(cfg.pg_train.optimizer)}}},
      {"multi",
       {{"N_down", cfg.fusion.n_down},
        {"N_up", cfg.fusion.n_up},
        {"fuse_heads", cfg.multi.fuse_heads},
        {"lr", cfg.multi.lr},
        {"epochs", cfg.multi.epochs},
        {"batch", cfg.multi.batch},
        {"optimizer", to_string(cfg.multi.optimizer)},
        {"clip_norm", cfg.multi.clip_norm}}},
      {"eval", {{"threshold", cfg.eval.threshold}, {"seeds", cfg.eval.seeds}}},
      {"paths", {{"data_dir", cfg.data_dir}}},
  };
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kBackbone: return "backbone";
    case Stage::kPromptGenerator: return "pg";
    case Stage::kMulti: return "multi";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  if (name == "backbone") return Stage::kBackbone;
  if (name == "pg") return Stage::kPromptGenerator;
  if (name == "multi") return Stage::kMulti;
  throw ConfigError("unknown stage: " + name);
}

namespace {

std::uint64_t hash_json(const json& j) {
  Fnv1a h;
  h.update(j.dump());
  return h.digest();
}

}  // namespace

std::uint64_t stage_hash(const RunConfig& cfg, Stage stage) {
  const json full = to_json(cfg);
  json part = {{"seed", full["seed"]},
               {"task", full["task"]},
               {"canvas", full["canvas"]},
               {"backbone", full["backbone"]},
               {"pretrain", full["pretrain"]}};
  if (stage == Stage::kPromptGenerator || stage == Stage::kMulti) {
    part["retrieval_k"] = full["retrieval"]["K"];
    part["prompt_generator"] = full["prompt_generator"];
  }
  if (stage == Stage::kMulti) {
    part["retrieval"] = full["retrieval"];
    part["multi"] = full["multi"];
  }
  part["stage"] = to_string(stage);
  return hash_json(part);
}

std::uint64_t config_hash(const RunConfig& cfg) { return hash_json(to_json(cfg)); }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

std::filesystem::path resolve_data_dir(const RunConfig& cfg, const std::filesystem::path& fallback) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("VICLFUSE_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

}  // namespace viclf
