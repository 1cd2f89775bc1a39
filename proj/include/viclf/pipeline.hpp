#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "viclf/config.hpp"
#include "viclf/eval.hpp"
#include "viclf/multi_fusion.hpp"
#include "viclf/prompt_generator.hpp"
#include "viclf/retrieval.hpp"
#include "viclf/taskgen.hpp"

namespace viclf {

/// Codebook fitted on the support labels of the task.
Codebook fit_task_codebook(const Dataset& ds, const RunConfig& cfg);

/// Trains a fresh backbone on episodic canvases of the configured task.
BackboneTrainResult pretrain_backbone(const Codebook& cb, const RunConfig& cfg);

struct RetrievalCache {
  SupportIndex index;
  std::vector<RankedSupport> support;  // K neighbours of each support image, itself excluded
  std::vector<RankedSupport> queries;  // top-K of each query
};

RetrievalCache build_retrieval(const Dataset& ds, const Backbone& bb, int k);

/// Support pairs used as pseudo-queries, each with its holistic group.
std::vector<PGSample> pg_samples(const Dataset& ds, const RetrievalCache& rc);

/// Groups feeding the auxiliary branches: the MPGS high and low groups when
/// group_count is 2, otherwise `group_count` contiguous chunks.
std::vector<std::vector<SupportPair>> guidance_groups(const RankedSupport& ranked,
                                                      const RetrievalConfig& rcfg);

struct BranchCanvases {
  Canvas gm;
  std::vector<Canvas> guidance;
};

BranchCanvases branch_canvases(const RankedSupport& ranked, const Image& query,
                               const PromptGenerator& pg, const RunConfig& cfg);

std::vector<MultiSample> multi_samples(const Dataset& ds, const RetrievalCache& rc,
                                       const PromptGenerator& pg, const Codebook& cb,
                                       const RunConfig& cfg);

/// Everything trained for one seed. Optional members are filled by the
/// stages that produce them.
struct SeedArtifacts {
  std::uint64_t seed = 0;
  Dataset data;
  Codebook codebook;
  std::optional<Backbone> backbone;
  std::optional<RetrievalCache> retrieval;
  std::optional<PromptGenerator> pg;
  std::map<AblationVariant, MultiModel> multi;
};

/// Trains the multi model of a variant on the support pseudo-queries.
MultiModel train_multi_model(const SeedArtifacts& art, const RunConfig& cfg, AblationVariant v);

/// Predicted label for query `qi` under a method. Multi methods read the
/// model stored for their variant.
Image predict(const MethodId& m, const SeedArtifacts& art, std::size_t qi, const RunConfig& cfg);

/// Per-query scores (mIoU after binarization, or MSE for colorization).
SeedScores score_method(const MethodId& m, const SeedArtifacts& art, const RunConfig& cfg);

std::string metric_name(TaskKind task);

/// Trains stages on demand per seed and caches the results.
class Experiment {
 public:
  explicit Experiment(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  /// Data, codebook, backbone, retrieval and prompt generator for a seed.
  SeedArtifacts& prepare(std::uint64_t seed);
  /// Trains (once) the multi model of a variant for a seed.
  const MultiModel& multi(std::uint64_t seed, AblationVariant v);

  /// Evaluates a method across the configured eval seeds.
  MetricReport run_method(const MethodId& m);

 private:
  RunConfig cfg_;
  std::map<std::uint64_t, SeedArtifacts> seeds_;
};

enum class SweepKnob { kKg1, kKg2, kFusionCenter, kFusionWidth, kGroupCount };
std::string to_string(SweepKnob k);
SweepKnob knob_from_string(const std::string& name);

/// Configuration of one sweep point; throws ConfigError when invalid.
RunConfig sweep_point(const RunConfig& base, SweepKnob knob, int value);

struct SweepResult {
  std::vector<MetricReport> reports;                     // valid points, in order
  std::vector<std::pair<int, std::string>> invalid;      // value, reason
};

/// multi_full at each value over the given seeds; invalid points are
/// reported and skipped. Backbone and prompt generator are reused from the
/// artifacts since the swept knobs do not affect them.
SweepResult run_sweep(const std::vector<const SeedArtifacts*>& seeds, const RunConfig& base,
                      SweepKnob knob, const std::vector<int>& values);
/// Same, over the experiment's eval seeds.
SweepResult run_sweep(Experiment& exp, SweepKnob knob, const std::vector<int>& values);

}  // namespace viclf
