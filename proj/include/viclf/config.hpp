#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viclf/backbone.hpp"
#include "viclf/multi_fusion.hpp"
#include "viclf/prompt_generator.hpp"
#include "viclf/taskgen.hpp"

namespace viclf {

struct PretrainConfig {
  int canvases = 1000;
  TrainConfig train{20, 16, 3e-3, 0, OptimizerKind::kAdam, 1.0};

  bool operator==(const PretrainConfig& other) const = default;
};

struct RetrievalConfig {
  int k = 16;
  int k_g1 = 8;
  int k_g2 = 8;
  /// Number of auxiliary branches. 2 uses the MPGS high/low groups; any
  /// other count splits the ranking into that many contiguous chunks.
  int group_count = 2;

  bool operator==(const RetrievalConfig& other) const = default;
};

struct EvalConfig {
  double threshold = 0.5;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  bool operator==(const EvalConfig& other) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  TaskSpec task;
  BackboneConfig backbone;  // backbone.canvas holds the geometry
  PretrainConfig pretrain;
  RetrievalConfig retrieval;
  PromptGeneratorConfig pg;
  PGTrainConfig pg_train;
  FusionRange fusion;
  MultiTrainConfig multi;
  EvalConfig eval;
  std::string data_dir;  // empty: $VICLFUSE_DATA_DIR, then "data"

  const CanvasConfig& canvas() const { return backbone.canvas; }
  /// Task spec with its seed replaced by `run_seed`.
  TaskSpec task_for_seed(std::uint64_t run_seed) const;
  /// Same configuration with every seed-bearing stage reseeded.
  RunConfig with_seed(std::uint64_t run_seed) const;

  bool operator==(const RunConfig& other) const = default;
};

/// Every constraint violation, each prefixed with its field path.
std::vector<std::string> config_problems(const RunConfig& cfg);
/// Throws ConfigError listing all problems, one per line.
void validate(const RunConfig& cfg);

/// Strict parse: unknown keys and type errors are collected together with
/// constraint violations and reported in a single ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_file(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

enum class Stage { kBackbone, kPromptGenerator, kMulti };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);

/// Hash over the configuration sections a stage (and its prerequisites)
/// depends on, plus the run seed.
std::uint64_t stage_hash(const RunConfig& cfg, Stage stage);
/// Hash over the whole configuration.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hex64(std::uint64_t v);

/// Data root: the configured path, then $VICLFUSE_DATA_DIR, then `fallback`.
std::filesystem::path resolve_data_dir(const RunConfig& cfg,
                                       const std::filesystem::path& fallback = "data");

}  // namespace viclf
