#include "viclf/taskgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "viclf/png_io.hpp"

namespace viclf {
namespace {

TaskSpec small_spec(TaskKind task, std::uint64_t seed = 7) {
  TaskSpec s;
  s.task = task;
  s.n_support = 24;
  s.n_query = 8;
  s.seed = seed;
  return s;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("viclf_taskgen_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(TaskGen, SameSeedGivesIdenticalDatasets) {
  for (TaskKind task : {TaskKind::kSeg, TaskKind::kDet, TaskKind::kColor}) {
    const Dataset a = generate(small_spec(task));
    const Dataset b = generate(small_spec(task));
    ASSERT_EQ(a.support.size(), b.support.size());
    for (std::size_t i = 0; i < a.support.size(); ++i) {
      EXPECT_EQ(a.support[i].image, b.support[i].image);
      EXPECT_EQ(a.support[i].label.pixels, b.support[i].label.pixels);
    }
    EXPECT_EQ(content_hash(a), content_hash(b));
    EXPECT_NE(content_hash(a), content_hash(generate(small_spec(task, 8))));
  }
}

TEST(TaskGen, SavedFilesAreByteIdentical) {
  const Dataset ds = generate(small_spec(TaskKind::kSeg));
  const auto d1 = scratch_dir("bytes1");
  const auto d2 = scratch_dir("bytes2");
  save_dataset(ds, d1);
  save_dataset(generate(small_spec(TaskKind::kSeg)), d2);
  for (const char* rel : {"seg/manifest.json", "seg/support/pair_000003_img.png",
                          "seg/query/pair_000005_lbl.png"}) {
    EXPECT_EQ(slurp(d1 / rel), slurp(d2 / rel)) << rel;
  }
}

TEST(TaskGen, ZeroQueriesIsAllowed) {
  TaskSpec s = small_spec(TaskKind::kDet);
  s.n_query = 0;
  const Dataset ds = generate(s);
  EXPECT_EQ(ds.support.size(), 24u);
  EXPECT_TRUE(ds.queries.empty());
}

TEST(TaskGen, InvalidSpecsAreRejected) {
  TaskSpec s = small_spec(TaskKind::kSeg);
  s.n_support = 0;
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec(TaskKind::kSeg);
  s.min_radius = 10.0;
  EXPECT_THROW(generate(s), ConfigError);
  EXPECT_THROW(task_from_string("depth"), ConfigError);
}

TEST(TaskGen, SegMaskMatchesIndependentRasterization) {
  const Dataset ds = generate(small_spec(TaskKind::kSeg));
  for (std::size_t i = 0; i < ds.support.size(); ++i) {
    const SampleRecord& rec = ds.support_records[i];
    const Image& mask = ds.support[i].label.pixels;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        bool inside = false;
        for (const auto& s : rec.shapes) {
          if (!s.foreground) continue;
          const double px = x + 0.5 - s.cx;
          const double py = y + 0.5 - s.cy;
          if (s.type == ShapeType::kCircle) inside |= px * px + py * py <= s.radius * s.radius;
          if (s.type == ShapeType::kSquare) inside |= std::max(std::abs(px), std::abs(py)) <= s.radius;
          if (s.type == ShapeType::kTriangle) {
            inside |= py >= -s.radius && py <= s.radius && 2.0 * std::abs(px) <= py + s.radius;
          }
        }
        for (int c = 0; c < 3; ++c) ASSERT_EQ(mask.at(y, x, c), inside ? 1.0 : 0.0);
      }
    }
  }
}

TEST(TaskGen, SegImagesContainBetweenOneAndThreeShapesWithForeground) {
  const Dataset ds = generate(small_spec(TaskKind::kSeg));
  for (const auto& rec : ds.support_records) {
    EXPECT_GE(rec.shapes.size(), 1u);
    EXPECT_LE(rec.shapes.size(), 3u);
    EXPECT_TRUE(std::any_of(rec.shapes.begin(), rec.shapes.end(),
                            [](const ShapeParams& s) { return s.foreground; }));
  }
}

TEST(TaskGen, DetBoxIsTightRectangleAroundObject) {
  const Dataset ds = generate(small_spec(TaskKind::kDet));
  for (std::size_t i = 0; i < ds.support.size(); ++i) {
    const Image obj = render_mask(ds.support_records[i], 32);
    const Image& box = ds.support[i].label.pixels;
    int y0 = 99, y1 = -1, x0 = 99, x1 = -1;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (obj.at(y, x, 0) > 0.5) {
          y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
      }
    }
    ASSERT_GE(y1, 0);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const bool in_box = y >= y0 && y <= y1 && x >= x0 && x <= x1;
        ASSERT_EQ(box.at(y, x, 0), in_box ? 1.0 : 0.0);
        if (obj.at(y, x, 0) > 0.5) ASSERT_EQ(box.at(y, x, 0), 1.0);
      }
    }
    EXPECT_EQ(ds.support_records[i].shapes.size(), 1u);
  }
}

TEST(TaskGen, ColorInputIsGrayscaleOfTarget) {
  const Dataset ds = generate(small_spec(TaskKind::kColor));
  for (const auto& p : ds.support) {
    EXPECT_EQ(to_grayscale(p.label.pixels), p.image);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        ASSERT_EQ(p.image.at(y, x, 0), p.image.at(y, x, 1));
        ASSERT_EQ(p.image.at(y, x, 1), p.image.at(y, x, 2));
      }
    }
    const Image twice = to_grayscale(p.image);
    for (std::size_t k = 0; k < twice.data().size(); ++k) {
      ASSERT_NEAR(twice.data()[k], p.image.data()[k], 1e-12);
    }
  }
}

TEST(TaskGen, LuminanceWeights) {
  EXPECT_NEAR(luminance({1.0, 0.0, 0.0}), 0.299, 1e-15);
  EXPECT_NEAR(luminance({0.0, 1.0, 0.0}), 0.587, 1e-15);
  EXPECT_NEAR(luminance({0.0, 0.0, 1.0}), 0.114, 1e-15);
  EXPECT_NEAR(luminance({1.0, 1.0, 1.0}), 1.0, 1e-15);
}

TEST(TaskGen, QueriesAreDisjointFromSupport) {
  for (TaskKind task : {TaskKind::kSeg, TaskKind::kDet, TaskKind::kColor}) {
    const Dataset ds = generate(small_spec(task));
    std::set<int> ids;
    for (const auto& p : ds.support) ids.insert(p.id);
    for (const auto& q : ds.queries) {
      EXPECT_EQ(ids.count(q.id), 0u);
      for (const auto& p : ds.support) EXPECT_FALSE(p.image == q.image);
    }
    EXPECT_EQ(ds.queries.front().id, ds.spec.n_support);
  }
}

TEST(TaskGen, PixelsStayInUnitRange) {
  const Dataset ds = generate(small_spec(TaskKind::kColor));
  for (const auto& p : ds.support) {
    for (double v : p.image.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : p.label.pixels.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(TaskGen, SaveLoadRoundTripWithinQuantization) {
  const Dataset ds = generate(small_spec(TaskKind::kColor));
  const auto dir = scratch_dir("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir, TaskKind::kColor);
  EXPECT_EQ(back.spec, ds.spec);
  ASSERT_EQ(back.support.size(), ds.support.size());
  ASSERT_EQ(back.queries.size(), ds.queries.size());
  for (std::size_t i = 0; i < ds.support.size(); ++i) {
    EXPECT_EQ(back.support[i].id, ds.support[i].id);
    EXPECT_EQ(back.support[i].label.kind, LabelKind::kColorTarget);
    for (std::size_t k = 0; k < ds.support[i].image.data().size(); ++k) {
      ASSERT_NEAR(back.support[i].image.data()[k], ds.support[i].image.data()[k], 0.5 / 255.0 + 1e-12);
    }
  }
  EXPECT_EQ(content_hash(back), content_hash(ds));
  EXPECT_EQ(back.query_records.size(), ds.query_records.size());
  EXPECT_EQ(render_image(back.query_records[0], 32), render_image(ds.query_records[0], 32));
}

TEST(TaskGen, PngRoundTripExactOnQuantizedValues) {
  Image img(5, 7);
  for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = static_cast<double>(i % 256) / 255.0;
  const auto dir = scratch_dir("png");
  std::filesystem::create_directories(dir);
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_png(dir / "a.png"), img);
}

TEST(TaskGen, EpisodicCanvasesShareClassAcrossPromptAndQuery) {
  TaskSpec s = small_spec(TaskKind::kSeg);
  CanvasConfig cfg;
  const auto canvases = gen_episodic_canvases(s, 6, cfg);
  ASSERT_EQ(canvases.size(), 6u);
  EXPECT_EQ(canvases[0].pixels.height(), 64);
  // Bottom-right holds a binary mask.
  const Image br = extract_quadrant(canvases[0], Quadrant::kBottomRight);
  for (double v : br.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  const auto again = gen_episodic_canvases(s, 6, cfg);
  for (std::size_t i = 0; i < canvases.size(); ++i) EXPECT_EQ(canvases[i].pixels, again[i].pixels);
  CanvasConfig small = cfg;
  small.quadrant_h = small.quadrant_w = 16;
  EXPECT_THROW(gen_episodic_canvases(s, 1, small), ConfigError);
}

}  // namespace
}  // namespace viclf
