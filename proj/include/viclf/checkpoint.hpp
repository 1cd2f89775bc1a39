#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "viclf/config.hpp"
#include "viclf/multi_fusion.hpp"
#include "viclf/prompt_generator.hpp"
#include "viclf/tokenizer.hpp"

namespace viclf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-file weight container. Layout (little-endian):
///   "VICLF01\0" | stage tag | config hash | codebook | named tensors | metadata JSON
/// A pretty-printed copy of the metadata is written next to it as <file>.json.
struct Checkpoint {
  Stage stage = Stage::kBackbone;
  std::uint64_t config_hash = 0;
  Codebook codebook;
  std::vector<std::pair<std::string, nn::Mat>> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Reads and checks the stage tag and configuration hash.
Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected_stage,
                           std::uint64_t expected_hash);

void pack(const std::vector<nn::NamedConstParam>& params, const std::string& prefix,
          Checkpoint& ck);
/// Copies tensors named `prefix + param name` into the parameters; every
/// parameter must be present with a matching shape.
void unpack(const Checkpoint& ck, const std::string& prefix, const nn::ParamList& params);

Checkpoint make_checkpoint(const Backbone& bb, const Codebook& cb, std::uint64_t hash);
Checkpoint make_checkpoint(const PromptGenerator& pg, const Codebook& cb, std::uint64_t hash);
Checkpoint make_checkpoint(const MultiModel& m, const Codebook& cb, std::uint64_t hash);

Backbone backbone_from(const Checkpoint& ck, const BackboneConfig& cfg);
PromptGenerator prompt_generator_from(const Checkpoint& ck, const PromptGeneratorConfig& cfg);
/// `pretrained` provides the architecture; weights come from the checkpoint.
MultiModel multi_from(const Checkpoint& ck, const Backbone& pretrained, const FusionRange& range,
                      int fuse_heads);

}  // namespace viclf
