#include "viclf/config.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace viclf {
namespace {

using nlohmann::json;

std::string problems_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyObjectGivesDocumentedDefaults) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.retrieval.k, 16);
  EXPECT_EQ(c.retrieval.k_g1, 8);
  EXPECT_EQ(c.retrieval.k_g2, 8);
  EXPECT_EQ(c.fusion.n_down, 8);
  EXPECT_EQ(c.fusion.n_up, 14);
  EXPECT_EQ(c.multi.lr, 0.05);
  EXPECT_EQ(c.multi.epochs, 10);
  EXPECT_EQ(c.multi.batch, 16);
  EXPECT_EQ(c.pg_train.lr, 0.05);
  EXPECT_EQ(c.pg_train.lambda, 0.9);
  EXPECT_EQ(c.backbone.depth, 16);
  EXPECT_EQ(c.backbone.embed_dim, 128);
  EXPECT_EQ(c.backbone.vocab, 64);
  EXPECT_EQ(c.eval.threshold, 0.5);
  EXPECT_EQ(c.canvas().quadrant_h, c.task.image_size);
}

TEST(Config, GroupSizesBeyondKAreRejected) {
  const std::string msg = problems_of({{"retrieval", {{"K", 16}, {"K_g1", 10}, {"K_g2", 10}}}});
  EXPECT_NE(msg.find("K_g1+K_g2 ≤ K"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysAreFatalWithPaths) {
  const std::string msg = problems_of({{"multi", {{"N_dwn", 3}}}, {"colour", 1}});
  EXPECT_NE(msg.find("multi.N_dwn: unknown key"), std::string::npos) << msg;
  EXPECT_NE(msg.find("colour: unknown key"), std::string::npos) << msg;
}

TEST(Config, AllProblemsAreListedTogether) {
  const std::string msg = problems_of({{"backbone", {{"embed_dim", 30}, {"heads", 4}}},
                                       {"prompt_generator", {{"lambda", 1.5}}},
                                       {"eval", {{"threshold", "high"}}}});
  EXPECT_NE(msg.find("backbone"), std::string::npos) << msg;
  EXPECT_NE(msg.find("prompt_generator"), std::string::npos) << msg;
  EXPECT_NE(msg.find("eval.threshold: wrong type"), std::string::npos) << msg;
}

TEST(Config, FusionRangeMustFitTheBackbone) {
  const std::string msg = problems_of({{"backbone", {{"depth", 4}}}});
  EXPECT_NE(msg.find("multi"), std::string::npos) << msg;
  EXPECT_EQ(problems_of({{"backbone", {{"depth", 4}}}, {"multi", {{"N_down", 2}, {"N_up", 3}}}}), "");
  EXPECT_EQ(problems_of({{"backbone", {{"depth", 4}}}, {"multi", {{"N_down", 0}, {"N_up", 0}}}}), "");
}

TEST(Config, RoundTripThroughJson) {
  json j = {{"seed", 5},
            {"task", {{"kind", "det"}, {"n_support", 40}}},
            {"backbone", {{"depth", 4}, {"embed_dim", 32}, {"vocab", 32}}},
            {"multi", {{"N_down", 2}, {"N_up", 4}, {"optimizer", "adam"}, {"lr", 0.001}}},
            {"eval", {{"seeds", {3, 4}}}},
            {"paths", {{"data_dir", "/tmp/x"}}}};
  const RunConfig a = parse_config(j);
  const RunConfig b = parse_config(to_json(a));
  EXPECT_EQ(a, b);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(b.task.task, TaskKind::kDet);
  EXPECT_EQ(b.multi.optimizer, OptimizerKind::kAdam);
  EXPECT_EQ(b.multi.seed, 5u);
  EXPECT_EQ(b.eval.seeds, (std::vector<std::uint64_t>{3, 4}));
}

TEST(Config, StageHashesTrackOnlyRelevantSections) {
  const RunConfig base = parse_config({{"backbone", {{"depth", 4}}}, {"multi", {{"N_down", 2}, {"N_up", 3}}}});
  RunConfig other = base;
  other.multi.lr = 0.01;
  EXPECT_EQ(stage_hash(base, Stage::kBackbone), stage_hash(other, Stage::kBackbone));
  EXPECT_EQ(stage_hash(base, Stage::kPromptGenerator), stage_hash(other, Stage::kPromptGenerator));
  EXPECT_NE(stage_hash(base, Stage::kMulti), stage_hash(other, Stage::kMulti));
  other = base;
  other.pg_train.lambda = 0.5;
  EXPECT_EQ(stage_hash(base, Stage::kBackbone), stage_hash(other, Stage::kBackbone));
  EXPECT_NE(stage_hash(base, Stage::kPromptGenerator), stage_hash(other, Stage::kPromptGenerator));
  EXPECT_NE(stage_hash(base, Stage::kBackbone), stage_hash(base.with_seed(1), Stage::kBackbone));
  EXPECT_NE(stage_hash(base, Stage::kBackbone), stage_hash(base, Stage::kMulti));
}

TEST(Config, FileParsingAndDataDirFallback) {
  const auto path = std::filesystem::temp_directory_path() / "viclf_config_test.json";
  std::ofstream(path) << R"({"seed": 2, "task": {"n_query": 4}})";
  const RunConfig c = parse_config_file(path);
  EXPECT_EQ(c.seed, 2u);
  EXPECT_EQ(c.task.n_query, 4);
  std::ofstream(path) << "{not json";
  EXPECT_THROW(parse_config_file(path), ConfigError);
  EXPECT_THROW(parse_config_file(path.string() + ".missing"), ConfigError);

  RunConfig d;
  d.data_dir = "explicit";
  EXPECT_EQ(resolve_data_dir(d), "explicit");
  d.data_dir.clear();
  ::setenv("VICLFUSE_DATA_DIR", "/from/env", 1);
  EXPECT_EQ(resolve_data_dir(d), "/from/env");
  ::unsetenv("VICLFUSE_DATA_DIR");
  EXPECT_EQ(resolve_data_dir(d), "data");
}

}  // namespace
}  // namespace viclf
