#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace viclf {

/// Thrown whenever two arrays that must agree in shape do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for precondition violations that are not shape related.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense H x W x 3 image with values in [0,1], stored row-major with
/// interleaved channels.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  double& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }
  /// Pointer to the first channel of pixel (y, x).
  double* ptr(int y, int x) { return &pixels_[index(y, x, 0)]; }
  const double* ptr(int y, int x) const { return &pixels_[index(y, x, 0)]; }

  std::vector<double>& data() { return pixels_; }
  const std::vector<double>& data() const { return pixels_; }

  /// Copies the h x w block whose top-left corner is (y0, x0).
  Image crop(int y0, int x0, int h, int w) const;
  /// Writes `src` with its top-left corner at (y0, x0).
  void paste(const Image& src, int y0, int x0);

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

enum class LabelKind { kSegMask, kDetBoxMask, kColorTarget };

std::string to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& name);

struct Label {
  Image pixels;
  LabelKind kind = LabelKind::kSegMask;

  bool operator==(const Label& other) const = default;
};

struct SupportPair {
  Image image;
  Label label;
  int id = 0;
};

/// Validates the pair invariant (image and label share dimensions).
void check_pair(const SupportPair& pair);

struct CanvasConfig {
  int quadrant_h = 32;
  int quadrant_w = 32;
  int patch_size = 8;
  double mask_fill = 0.0;

  int canvas_h() const { return 2 * quadrant_h; }
  int canvas_w() const { return 2 * quadrant_w; }
  int grid_h() const { return canvas_h() / patch_size; }
  int grid_w() const { return canvas_w() / patch_size; }
  int num_patches() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch_size * patch_size * Image::kChannels; }

  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  bool operator==(const CanvasConfig& other) const = default;
};

enum class Quadrant { kTopLeft, kTopRight, kBottomLeft, kBottomRight };

struct Canvas {
  Image pixels;
  Quadrant masked_region = Quadrant::kBottomRight;
};

/// Lays out [[prompt image, prompt label], [query, fill]].
Canvas compose_canvas(const SupportPair& pair, const Image& query,
                      const CanvasConfig& cfg);
/// Same layout with an explicit top row (used for fused prompts).
Canvas compose_canvas(const Image& prompt_image, const Image& prompt_label,
                      const Image& query, const CanvasConfig& cfg);

Image extract_quadrant(const Canvas& canvas, Quadrant which);

/// Row-major flattened patch indices over the canvas grid whose patches lie
/// inside `which`.
std::vector<int> quadrant_patch_indices(const CanvasConfig& cfg, Quadrant which);
std::vector<int> masked_patch_indices(const CanvasConfig& cfg);

/// Flattens an image into a (num_patches x patch*patch*3) matrix, patches in
/// row-major grid order, each patch flattened as (row, col, channel).
Eigen::MatrixXd image_to_patches(const Image& img, int patch_size);
/// Inverse of image_to_patches.
Image patches_to_image(const Eigen::MatrixXd& patches, int height, int width,
                       int patch_size);

}  // namespace viclf
