#include "viclf/core_types.hpp"

#include <cmath>
#include <sstream>

namespace viclf {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Image Image::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || y0 + h > height_ || x0 + w > width_) {
    throw ShapeError("crop window outside image");
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* src = &pixels_[index(y0 + y, x0, 0)];
    std::copy(src, src + static_cast<std::size_t>(w) * kChannels, out.ptr(y, 0));
  }
  return out;
}

void Image::paste(const Image& src, int y0, int x0) {
  if (y0 < 0 || x0 < 0 || y0 + src.height() > height_ || x0 + src.width() > width_) {
    throw ShapeError("paste window outside image");
  }
  for (int y = 0; y < src.height(); ++y) {
    const double* row = src.ptr(y, 0);
    std::copy(row, row + static_cast<std::size_t>(src.width()) * kChannels,
              &pixels_[index(y0 + y, x0, 0)]);
  }
}

std::string to_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::kSegMask:
      return "seg_mask";
    case LabelKind::kDetBoxMask:
      return "det_boxmask";
    case LabelKind::kColorTarget:
      return "color_target";
  }
  return "unknown";
}

LabelKind label_kind_from_string(const std::string& name) {
  if (name == "seg_mask") return LabelKind::kSegMask;
  if (name == "det_boxmask") return LabelKind::kDetBoxMask;
  if (name == "color_target") return LabelKind::kColorTarget;
  throw ConfigError("unknown label kind: " + name);
}

void check_pair(const SupportPair& pair) {
  if (pair.image.height() != pair.label.pixels.height() ||
      pair.image.width() != pair.label.pixels.width()) {
    throw ShapeError("support pair image and label differ in size");
  }
}

void CanvasConfig::validate() const {
  if (patch_size <= 0 || quadrant_h <= 0 || quadrant_w <= 0) {
    throw ConfigError("canvas geometry must be positive");
  }
  if (quadrant_h % patch_size != 0 || quadrant_w % patch_size != 0) {
    throw ConfigError("quadrant dimensions must be divisible by patch_size");
  }
  if (!(mask_fill >= 0.0 && mask_fill <= 1.0)) {
    throw ConfigError("mask_fill must lie in [0,1]");
  }
}

namespace {

void require_quadrant(const Image& img, const CanvasConfig& cfg, const char* what) {
  if (img.height() != cfg.quadrant_h || img.width() != cfg.quadrant_w) {
    std::ostringstream msg;
    msg << what << " is " << img.height() << "x" << img.width() << ", expected "
        << cfg.quadrant_h << "x" << cfg.quadrant_w;
    throw ShapeError(msg.str());
  }
}

}  // namespace

Canvas compose_canvas(const Image& prompt_image, const Image& prompt_label,
                      const Image& query, const CanvasConfig& cfg) {
  cfg.validate();
  require_quadrant(prompt_image, cfg, "prompt image");
  require_quadrant(prompt_label, cfg, "prompt label");
  require_quadrant(query, cfg, "query image");
  Canvas canvas{Image(cfg.canvas_h(), cfg.canvas_w(), cfg.mask_fill), Quadrant::kBottomRight};
  canvas.pixels.paste(prompt_image, 0, 0);
  canvas.pixels.paste(prompt_label, 0, cfg.quadrant_w);
  canvas.pixels.paste(query, cfg.quadrant_h, 0);
  return canvas;
}

Canvas compose_canvas(const SupportPair& pair, const Image& query, const CanvasConfig& cfg) {
  check_pair(pair);
  return compose_canvas(pair.image, pair.label.pixels, query, cfg);
}

Image extract_quadrant(const Canvas& canvas, Quadrant which) {
  const Image& px = canvas.pixels;
  if (px.height() % 2 != 0 || px.width() % 2 != 0) {
    throw ShapeError("canvas dimensions must be even");
  }
  const int h = px.height() / 2;
  const int w = px.width() / 2;
  switch (which) {
    case Quadrant::kTopLeft:
      return px.crop(0, 0, h, w);
    case Quadrant::kTopRight:
      return px.crop(0, w, h, w);
    case Quadrant::kBottomLeft:
      return px.crop(h, 0, h, w);
    case Quadrant::kBottomRight:
      return px.crop(h, w, h, w);
  }
  throw ShapeError("invalid quadrant");
}

std::vector<int> quadrant_patch_indices(const CanvasConfig& cfg, Quadrant which) {
  cfg.validate();
  const int qh = cfg.quadrant_h / cfg.patch_size;
  const int qw = cfg.quadrant_w / cfg.patch_size;
  const int row0 = (which == Quadrant::kBottomLeft || which == Quadrant::kBottomRight) ? qh : 0;
  const int col0 = (which == Quadrant::kTopRight || which == Quadrant::kBottomRight) ? qw : 0;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(qh) * qw);
  for (int r = row0; r < row0 + qh; ++r) {
    for (int c = col0; c < col0 + qw; ++c) {
      out.push_back(r * cfg.grid_w() + c);
    }
  }
  return out;
}

std::vector<int> masked_patch_indices(const CanvasConfig& cfg) {
  return quadrant_patch_indices(cfg, Quadrant::kBottomRight);
}

Eigen::MatrixXd image_to_patches(const Image& img, int patch_size) {
  if (patch_size <= 0 || img.height() % patch_size != 0 || img.width() % patch_size != 0) {
    throw ShapeError("image dimensions must be divisible by the patch size");
  }
  const int gh = img.height() / patch_size;
  const int gw = img.width() / patch_size;
  const int dim = patch_size * patch_size * Image::kChannels;
  Eigen::MatrixXd out(gh * gw, dim);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      const int row = r * gw + c;
      int k = 0;
      for (int y = 0; y < patch_size; ++y) {
        const double* src = img.ptr(r * patch_size + y, c * patch_size);
        for (int j = 0; j < patch_size * Image::kChannels; ++j) {
          out(row, k++) = src[j];
        }
      }
    }
  }
  return out;
}

Image patches_to_image(const Eigen::MatrixXd& patches, int height, int width, int patch_size) {
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("image dimensions must be divisible by the patch size");
  }
  const int gh = height / patch_size;
  const int gw = width / patch_size;
  if (patches.rows() != gh * gw ||
      patches.cols() != patch_size * patch_size * Image::kChannels) {
    throw ShapeError("patch matrix does not match the requested image size");
  }
  Image img(height, width);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      const int row = r * gw + c;
      int k = 0;
      for (int y = 0; y < patch_size; ++y) {
        double* dst = img.ptr(r * patch_size + y, c * patch_size);
        for (int j = 0; j < patch_size * Image::kChannels; ++j) {
          dst[j] = patches(row, k++);
        }
      }
    }
  }
  return img;
}

}  // namespace viclf
