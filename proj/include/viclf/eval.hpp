#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "viclf/core_types.hpp"
#include "viclf/multi_fusion.hpp"

namespace viclf {

/// Pixels whose channel mean is >= threshold become 1 (all channels), the
/// rest 0.
Image binarize(const Image& pred, double threshold = 0.5);

/// Foreground IoU of two binary masks (foreground = channel mean >= 0.5).
/// Two empty masks score 1.
double miou(const Image& pred, const Image& gt);

/// Mean over pixels and channels of the squared difference.
double mse(const Image& pred, const Image& gt);

enum class Method { kTop1, kCondenserSingle, kMultiFull, kMultiVariant };

struct MethodId {
  Method method = Method::kTop1;
  AblationVariant variant = AblationVariant::kFull;  // for kMultiVariant

  std::string name() const;
  static MethodId parse(const std::string& name);
  bool operator==(const MethodId& other) const = default;
};

struct QueryScore {
  int query_id = 0;
  double score = 0.0;
};

struct SeedScores {
  std::uint64_t seed = 0;
  std::vector<QueryScore> scores;
  double mean() const;
};

struct MetricReport {
  std::string method;
  std::string metric;  // "miou" or "mse"
  std::string config_hash;
  std::string label;  // sweep point or variant annotation, may be empty
  std::vector<SeedScores> seeds;
  double wall_clock_s = 0.0;

  /// Mean of the per-seed means.
  double mean() const;
  /// Population standard deviation of the per-seed means.
  double std_over_seeds() const;
};

/// One JSON object per query, without timing fields.
std::string to_jsonl(const MetricReport& r);
nlohmann::json summary_json(const MetricReport& r);
std::string to_csv(const std::vector<MetricReport>& reports);

/// Writes <dir>/<stem>.jsonl, <stem>.summary.json and <stem>.csv.
void write_report(const std::filesystem::path& dir, const std::string& stem,
                  const std::vector<MetricReport>& reports);

}  // namespace viclf
