#include "viclf/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "viclf/hash.hpp"
#include "viclf/png_io.hpp"

namespace viclf {

namespace fs = std::filesystem;

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kSeg:
      return "seg";
    case TaskKind::kDet:
      return "det";
    case TaskKind::kColor:
      return "color";
  }
  return "unknown";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "seg") return TaskKind::kSeg;
  if (name == "det") return TaskKind::kDet;
  if (name == "color") return TaskKind::kColor;
  throw ConfigError("unknown task: " + name);
}

std::string to_string(ShapeType shape) {
  switch (shape) {
    case ShapeType::kCircle:
      return "circle";
    case ShapeType::kSquare:
      return "square";
    case ShapeType::kTriangle:
      return "triangle";
  }
  return "unknown";
}

namespace {

ShapeType shape_from_string(const std::string& name) {
  if (name == "circle") return ShapeType::kCircle;
  if (name == "square") return ShapeType::kSquare;
  if (name == "triangle") return ShapeType::kTriangle;
  throw ConfigError("unknown shape: " + name);
}

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

double hue_distance(double a, double b) {
  const double d = std::abs(a - b) - std::floor(std::abs(a - b));
  return std::min(d, 1.0 - d);
}

constexpr double kSaturation = 0.8;
constexpr double kValue = 0.9;
constexpr double kColorJitter = 0.04;
constexpr double kMinDistractorHueGap = 0.15;
constexpr std::uint64_t kSupportSplit = 1;
constexpr std::uint64_t kQuerySplit = 2;
constexpr std::uint64_t kClassStream = 0xC1A55;
constexpr std::uint64_t kEpisodeStream = 0xE915;

struct ClassDraw {
  ClassInfo info;
  double hue = 0.0;
};

std::vector<ClassDraw> draw_classes(const TaskSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, kClassStream));
  const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::vector<ClassDraw> out;
  for (int c = 0; c < spec.num_classes; ++c) {
    const double hue = offset + static_cast<double>(c) / spec.num_classes;
    out.push_back({{static_cast<ShapeType>(c % 3), hsv_to_rgb(hue, kSaturation, kValue)},
                   hue - std::floor(hue)});
  }
  return out;
}

Rgb jitter(const Rgb& base, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-kColorJitter, kColorJitter);
  Rgb out = base;
  for (double& ch : out) ch = std::clamp(ch + u(rng), 0.0, 1.0);
  return out;
}

double bounding_radius(const ShapeParams& s) {
  return s.type == ShapeType::kCircle ? s.radius : s.radius * std::sqrt(2.0);
}

/// Places `shape` without overlapping `placed` when possible.
void place(ShapeParams& shape, const std::vector<ShapeParams>& placed, int size,
           std::mt19937_64& rng) {
  const double lo = shape.radius + 1.0;
  const double hi = size - shape.radius - 1.0;
  std::uniform_real_distribution<double> pos(lo, std::max(lo, hi));
  for (int attempt = 0; attempt < 200; ++attempt) {
    shape.cx = pos(rng);
    shape.cy = pos(rng);
    bool clear = true;
    for (const auto& other : placed) {
      const double gap = bounding_radius(shape) + bounding_radius(other) + 1.0;
      if (std::hypot(shape.cx - other.cx, shape.cy - other.cy) < gap) {
        clear = false;
        break;
      }
    }
    if (clear) return;
  }
}

SampleRecord make_record(const TaskSpec& spec, TaskKind task, const ClassDraw& cls,
                         int class_id, int id, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
  SampleRecord rec;
  rec.id = id;
  rec.class_id = class_id;
  rec.background = 0.3 + 0.3 * u(rng);
  rec.texture_seed = rng();
  rec.texture_noise = spec.texture_noise;

  int n_fg = 1;
  int n_distractor = 0;
  if (task != TaskKind::kDet) {
    n_fg = (u(rng) < 0.7 || spec.max_shapes < 2) ? 1 : 2;
    const int room = spec.max_shapes - n_fg;
    if (room > 0 && u(rng) >= 0.2) {
      n_distractor = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(room));
    }
  }

  std::vector<ShapeParams> placed;
  for (int i = 0; i < n_distractor; ++i) {
    double hue = u(rng);
    while (hue_distance(hue, cls.hue) < kMinDistractorHueGap) hue = u(rng);
    ShapeParams s;
    s.type = static_cast<ShapeType>(rng() % 3);
    s.radius = radius(rng);
    s.color = hsv_to_rgb(hue, kSaturation, kValue);
    s.foreground = false;
    place(s, placed, spec.image_size, rng);
    placed.push_back(s);
  }
  for (int i = 0; i < n_fg; ++i) {
    ShapeParams s;
    s.type = cls.info.shape;
    s.radius = radius(rng);
    s.color = jitter(cls.info.color, rng);
    s.foreground = true;
    place(s, placed, spec.image_size, rng);
    placed.push_back(s);
  }
  // Distractors were placed first, so foreground shapes are drawn on top.
  rec.shapes = std::move(placed);
  return rec;
}

SupportPair make_pair(const SampleRecord& rec, TaskKind task, int size) {
  SupportPair pair;
  pair.id = rec.id;
  switch (task) {
    case TaskKind::kSeg:
      pair.image = render_image(rec, size);
      pair.label = Label{render_mask(rec, size), LabelKind::kSegMask};
      break;
    case TaskKind::kDet:
      pair.image = render_image(rec, size);
      pair.label = Label{render_box_mask(rec, size), LabelKind::kDetBoxMask};
      break;
    case TaskKind::kColor: {
      Image color = render_image(rec, size);
      pair.image = to_grayscale(color);
      pair.label = Label{std::move(color), LabelKind::kColorTarget};
      break;
    }
  }
  return pair;
}

std::uint64_t image_hash(const Image& img) {
  Fnv1a h;
  h.update(img.data().data(), img.data().size() * sizeof(double));
  return h.digest();
}

Dataset generate_for(TaskSpec spec, TaskKind task) {
  spec.task = task;
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const std::vector<ClassDraw> classes = draw_classes(spec);
  for (const auto& c : classes) ds.classes.push_back(c.info);

  std::set<std::uint64_t> support_hashes;
  for (int i = 0; i < spec.n_support; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, kSupportSplit, static_cast<std::uint64_t>(i)));
    const int cls = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes));
    SampleRecord rec = make_record(spec, task, classes[cls], cls, i, rng);
    ds.support.push_back(make_pair(rec, task, spec.image_size));
    ds.support_records.push_back(std::move(rec));
    support_hashes.insert(image_hash(ds.support.back().image));
  }
  for (int i = 0; i < spec.n_query; ++i) {
    const int id = spec.n_support + i;
    for (std::uint64_t attempt = 0;; ++attempt) {
      std::mt19937_64 rng(
          mix_seed(spec.seed, kQuerySplit + 16 * attempt, static_cast<std::uint64_t>(i)));
      const int cls = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes));
      SampleRecord rec = make_record(spec, task, classes[cls], cls, id, rng);
      SupportPair pair = make_pair(rec, task, spec.image_size);
      if (support_hashes.count(image_hash(pair.image)) != 0) continue;
      ds.queries.push_back(std::move(pair));
      ds.query_records.push_back(std::move(rec));
      break;
    }
  }
  return ds;
}

}  // namespace

void TaskSpec::validate() const {
  if (n_support < 1 || n_query < 0) throw ConfigError("task needs n_support >= 1 and n_query >= 0");
  if (image_size < 8) throw ConfigError("image_size must be at least 8");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (max_shapes < 1) throw ConfigError("max_shapes must be positive");
  if (!(min_radius > 0.0 && min_radius <= max_radius)) throw ConfigError("bad radius range");
  if (2.0 * max_radius * std::sqrt(2.0) + 2.0 > image_size) {
    throw ConfigError("max_radius too large for image_size");
  }
  if (texture_noise < 0.0 || texture_noise > 0.3) throw ConfigError("texture_noise must be in [0, 0.3]");
}

double luminance(const Rgb& rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

Image to_grayscale(const Image& img) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double* px = img.ptr(y, x);
      const double l = luminance({px[0], px[1], px[2]});
      double* dst = out.ptr(y, x);
      dst[0] = dst[1] = dst[2] = l;
    }
  }
  return out;
}

bool shape_contains(const ShapeParams& s, double x, double y) {
  const double dx = x - s.cx;
  const double dy = y - s.cy;
  switch (s.type) {
    case ShapeType::kCircle:
      return dx * dx + dy * dy <= s.radius * s.radius;
    case ShapeType::kSquare:
      return std::abs(dx) <= s.radius && std::abs(dy) <= s.radius;
    case ShapeType::kTriangle: {
      // Upward isosceles triangle: apex (cx, cy - r), base at cy + r.
      if (dy < -s.radius || dy > s.radius) return false;
      const double half_width = 0.5 * (dy + s.radius);
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

Image render_image(const SampleRecord& rec, int size) {
  Image img(size, size);
  std::mt19937_64 rng(rec.texture_seed);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = std::clamp(rec.background + rec.texture_noise * noise(rng), 0.0, 1.0);
      double* px = img.ptr(y, x);
      px[0] = px[1] = px[2] = v;
    }
  }
  for (const auto& s : rec.shapes) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!shape_contains(s, x + 0.5, y + 0.5)) continue;
        double* px = img.ptr(y, x);
        for (int c = 0; c < 3; ++c) px[c] = s.color[static_cast<std::size_t>(c)];
      }
    }
  }
  return img;
}

Image render_mask(const SampleRecord& rec, int size) {
  Image mask(size, size, 0.0);
  for (const auto& s : rec.shapes) {
    if (!s.foreground) continue;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!shape_contains(s, x + 0.5, y + 0.5)) continue;
        double* px = mask.ptr(y, x);
        px[0] = px[1] = px[2] = 1.0;
      }
    }
  }
  return mask;
}

Image render_box_mask(const SampleRecord& rec, int size) {
  const Image mask = render_mask(rec, size);
  int y0 = size, y1 = -1, x0 = size, x1 = -1;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (mask.at(y, x, 0) == 0.0) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  Image box(size, size, 0.0);
  if (y1 < 0) return box;
  box.paste(Image(y1 - y0 + 1, x1 - x0 + 1, 1.0), y0, x0);
  return box;
}

Dataset gen_segmentation(const TaskSpec& spec) { return generate_for(spec, TaskKind::kSeg); }
Dataset gen_detection(const TaskSpec& spec) { return generate_for(spec, TaskKind::kDet); }
Dataset gen_colorization(const TaskSpec& spec) { return generate_for(spec, TaskKind::kColor); }

Dataset generate(const TaskSpec& spec) { return generate_for(spec, spec.task); }

std::vector<Canvas> gen_episodic_canvases(const TaskSpec& spec, int count, const CanvasConfig& cfg) {
  spec.validate();
  if (cfg.quadrant_h != spec.image_size || cfg.quadrant_w != spec.image_size) {
    throw ConfigError("episodic canvases need quadrant size == image_size");
  }
  std::vector<Canvas> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, kEpisodeStream, static_cast<std::uint64_t>(i)));
    const double hue = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const ClassDraw cls{{static_cast<ShapeType>(rng() % 3), hsv_to_rgb(hue, kSaturation, kValue)}, hue};
    const SampleRecord prompt_rec = make_record(spec, spec.task, cls, -1, 2 * i, rng);
    const SampleRecord query_rec = make_record(spec, spec.task, cls, -1, 2 * i + 1, rng);
    const SupportPair prompt = make_pair(prompt_rec, spec.task, spec.image_size);
    const SupportPair query = make_pair(query_rec, spec.task, spec.image_size);
    Canvas c = compose_canvas(prompt, query.image, cfg);
    c.pixels.paste(query.label.pixels, cfg.quadrant_h, cfg.quadrant_w);
    out.push_back(std::move(c));
  }
  return out;
}

std::uint64_t content_hash(const Dataset& ds) {
  Fnv1a h;
  auto add = [&h](const Image& img) {
    for (double v : img.data()) {
      const auto q = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
      h.update(&q, 1);
    }
  };
  for (const auto* split : {&ds.support, &ds.queries}) {
    for (const auto& p : *split) {
      h.update(&p.id, sizeof(p.id));
      add(p.image);
      add(p.label.pixels);
    }
  }
  return h.digest();
}

nlohmann::json to_json(const TaskSpec& spec) {
  return {{"task", to_string(spec.task)},
          {"n_support", spec.n_support},
          {"n_query", spec.n_query},
          {"seed", spec.seed},
          {"image_size", spec.image_size},
          {"num_classes", spec.num_classes},
          {"max_shapes", spec.max_shapes},
          {"min_radius", spec.min_radius},
          {"max_radius", spec.max_radius},
          {"texture_noise", spec.texture_noise}};
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec s;
  s.task = task_from_string(j.at("task").get<std::string>());
  s.n_support = j.at("n_support").get<int>();
  s.n_query = j.at("n_query").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.image_size = j.at("image_size").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.max_shapes = j.at("max_shapes").get<int>();
  s.min_radius = j.at("min_radius").get<double>();
  s.max_radius = j.at("max_radius").get<double>();
  s.texture_noise = j.at("texture_noise").get<double>();
  return s;
}

namespace {

nlohmann::json record_to_json(const SampleRecord& rec) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : rec.shapes) {
    shapes.push_back({{"type", to_string(s.type)},
                      {"cx", s.cx},
                      {"cy", s.cy},
                      {"radius", s.radius},
                      {"color", s.color},
                      {"foreground", s.foreground}});
  }
  return {{"id", rec.id},
          {"class_id", rec.class_id},
          {"background", rec.background},
          {"texture_seed", rec.texture_seed},
          {"texture_noise", rec.texture_noise},
          {"shapes", shapes}};
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord rec;
  rec.id = j.at("id").get<int>();
  rec.class_id = j.at("class_id").get<int>();
  rec.background = j.at("background").get<double>();
  rec.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  rec.texture_noise = j.at("texture_noise").get<double>();
  for (const auto& s : j.at("shapes")) {
    ShapeParams p;
    p.type = shape_from_string(s.at("type").get<std::string>());
    p.cx = s.at("cx").get<double>();
    p.cy = s.at("cy").get<double>();
    p.radius = s.at("radius").get<double>();
    p.color = s.at("color").get<Rgb>();
    p.foreground = s.at("foreground").get<bool>();
    rec.shapes.push_back(p);
  }
  return rec;
}

std::string pair_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%06d", index);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& root) {
  const fs::path task_dir = root / to_string(ds.spec.task);
  const std::pair<const char*, const std::vector<SupportPair>*> splits[] = {
      {"support", &ds.support}, {"query", &ds.queries}};
  for (const auto& [name, pairs] : splits) {
    const fs::path dir = task_dir / name;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < pairs->size(); ++i) {
      const std::string stem = pair_stem(static_cast<int>(i));
      write_png(dir / (stem + "_img.png"), (*pairs)[i].image);
      write_png(dir / (stem + "_lbl.png"), (*pairs)[i].label.pixels);
    }
  }
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : ds.classes) classes.push_back({{"shape", to_string(c.shape)}, {"color", c.color}});
  nlohmann::json support_records = nlohmann::json::array();
  for (const auto& r : ds.support_records) support_records.push_back(record_to_json(r));
  nlohmann::json query_records = nlohmann::json::array();
  for (const auto& r : ds.query_records) query_records.push_back(record_to_json(r));
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(content_hash(ds)));
  const nlohmann::json manifest = {{"spec", to_json(ds.spec)},
                                   {"seed", ds.spec.seed},
                                   {"content_hash", hash},
                                   {"label_kind", to_string(ds.support.front().label.kind)},
                                   {"classes", classes},
                                   {"support_records", support_records},
                                   {"query_records", query_records}};
  std::ofstream(task_dir / "manifest.json") << manifest.dump(2) << "\n";
}

Dataset load_dataset(const fs::path& root, TaskKind task) {
  const fs::path task_dir = root / to_string(task);
  std::ifstream in(task_dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest in " + task_dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  Dataset ds;
  ds.spec = task_spec_from_json(manifest.at("spec"));
  const LabelKind kind = label_kind_from_string(manifest.at("label_kind").get<std::string>());
  for (const auto& c : manifest.at("classes")) {
    ds.classes.push_back({shape_from_string(c.at("shape").get<std::string>()), c.at("color").get<Rgb>()});
  }
  for (const auto& r : manifest.at("support_records")) ds.support_records.push_back(record_from_json(r));
  for (const auto& r : manifest.at("query_records")) ds.query_records.push_back(record_from_json(r));
  auto load_split = [&](const char* name, const std::vector<SampleRecord>& records,
                        std::vector<SupportPair>& out) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::string stem = pair_stem(static_cast<int>(i));
      SupportPair p;
      p.id = records[i].id;
      p.image = read_png(task_dir / name / (stem + "_img.png"));
      p.label = Label{read_png(task_dir / name / (stem + "_lbl.png")), kind};
      out.push_back(std::move(p));
    }
  };
  load_split("support", ds.support_records, ds.support);
  load_split("query", ds.query_records, ds.queries);
  return ds;
}

}  // namespace viclf
