#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viclf/core_types.hpp"

namespace viclf {

enum class TaskKind { kSeg, kDet, kColor };
enum class ShapeType { kCircle, kSquare, kTriangle };

std::string to_string(TaskKind task);
TaskKind task_from_string(const std::string& name);
std::string to_string(ShapeType shape);

using Rgb = std::array<double, 3>;

/// Everything needed to re-render one shape.
struct ShapeParams {
  ShapeType type = ShapeType::kCircle;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 1.0;
  Rgb color{};
  bool foreground = false;
};

struct SampleRecord {
  int id = 0;
  int class_id = 0;
  double background = 0.5;
  std::uint64_t texture_seed = 0;
  double texture_noise = 0.06;
  std::vector<ShapeParams> shapes;
};

struct TaskSpec {
  TaskKind task = TaskKind::kSeg;
  int n_support = 256;
  int n_query = 64;
  std::uint64_t seed = 0;
  int image_size = 32;
  int num_classes = 3;
  int max_shapes = 3;       // foreground + distractors
  double min_radius = 6.0;  // pixels
  double max_radius = 9.0;
  double texture_noise = 0.06;

  void validate() const;
  bool operator==(const TaskSpec& other) const = default;
};

struct ClassInfo {
  ShapeType shape = ShapeType::kCircle;
  Rgb color{};
};

struct Dataset {
  TaskSpec spec;
  std::vector<ClassInfo> classes;
  std::vector<SupportPair> support;
  std::vector<SupportPair> queries;
  std::vector<SampleRecord> support_records;
  std::vector<SampleRecord> query_records;
};

/// Luminance 0.299 R + 0.587 G + 0.114 B.
double luminance(const Rgb& rgb);
Image to_grayscale(const Image& img);

/// Whether pixel centre (x + 0.5, y + 0.5) lies inside the shape.
bool shape_contains(const ShapeParams& shape, double x, double y);

/// Renders the image of a record (background texture, then shapes in order).
Image render_image(const SampleRecord& rec, int size);
/// Union mask of the record's foreground shapes.
Image render_mask(const SampleRecord& rec, int size);
/// Filled tight bounding rectangle of the foreground mask.
Image render_box_mask(const SampleRecord& rec, int size);

Dataset gen_segmentation(const TaskSpec& spec);
Dataset gen_detection(const TaskSpec& spec);
Dataset gen_colorization(const TaskSpec& spec);
Dataset generate(const TaskSpec& spec);

/// Canvases whose prompt and query share a freshly drawn class (shape and
/// hue) per canvas, for pretraining the inpainting backbone. Ground-truth
/// label in the bottom-right quadrant.
std::vector<Canvas> gen_episodic_canvases(const TaskSpec& spec, int count,
                                          const CanvasConfig& cfg);

/// Stable hash over the 8-bit quantized pixels of every pair.
std::uint64_t content_hash(const Dataset& ds);

nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

/// Writes `<root>/<task>/<split>/pair_%06d_{img,lbl}.png` plus
/// `<root>/<task>/manifest.json`.
void save_dataset(const Dataset& ds, const std::filesystem::path& root);
/// Loads the PNG pairs back (values quantized to multiples of 1/255).
Dataset load_dataset(const std::filesystem::path& root, TaskKind task);

}  // namespace viclf
