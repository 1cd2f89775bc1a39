#include "viclf/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace viclf {

namespace {

bool foreground(const Image& img, int y, int x, double threshold) {
  const double* p = img.ptr(y, x);
  return (p[0] + p[1] + p[2]) / 3.0 >= threshold;
}

void check_same_shape(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("metric inputs differ in shape");
  }
}

}  // namespace

Image binarize(const Image& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  Image out(pred.height(), pred.width());
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      const double v = foreground(pred, y, x, threshold) ? 1.0 : 0.0;
      double* dst = out.ptr(y, x);
      dst[0] = dst[1] = dst[2] = v;
    }
  }
  return out;
}

double miou(const Image& pred, const Image& gt) {
  check_same_shape(pred, gt);
  long inter = 0;
  long uni = 0;
  for (int y = 0; y < pred.height(); ++y) {
    for (int x = 0; x < pred.width(); ++x) {
      const bool p = foreground(pred, y, x, 0.5);
      const bool g = foreground(gt, y, x, 0.5);
      inter += p && g;
      uni += p || g;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mse(const Image& pred, const Image& gt) {
  check_same_shape(pred, gt);
  const auto& a = pred.data();
  const auto& b = gt.data();
  if (a.empty()) throw ShapeError("mse of empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::string MethodId::name() const {
  switch (method) {
    case Method::kTop1: return "top1";
    case Method::kCondenserSingle: return "condenser_single";
    case Method::kMultiFull: return "multi_full";
    case Method::kMultiVariant: return "multi_" + to_string(variant);
  }
  return "unknown";
}

MethodId MethodId::parse(const std::string& name) {
  if (name == "top1") return {Method::kTop1};
  if (name == "condenser_single") return {Method::kCondenserSingle};
  if (name == "multi_full") return {Method::kMultiFull};
  if (name.rfind("multi_", 0) == 0) return {Method::kMultiVariant, variant_from_string(name.substr(6))};
  throw ConfigError("unknown method: " + name);
}

double SeedScores::mean() const {
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : scores) s += q.score;
  return s / static_cast<double>(scores.size());
}

double MetricReport::mean() const {
  if (seeds.empty()) return 0.0;
  double s = 0.0;
  for (const auto& sd : seeds) s += sd.mean();
  return s / static_cast<double>(seeds.size());
}

double MetricReport::std_over_seeds() const {
  if (seeds.size() < 2) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (const auto& sd : seeds) s += (sd.mean() - m) * (sd.mean() - m);
  return std::sqrt(s / static_cast<double>(seeds.size()));
}

std::string to_jsonl(const MetricReport& r) {
  std::string out;
  for (const auto& sd : r.seeds) {
    for (const auto& q : sd.scores) {
      nlohmann::json j = {{"method", r.method},
                          {"metric", r.metric},
                          {"config_hash", r.config_hash},
                          {"seed", sd.seed},
                          {"query_id", q.query_id},
                          {"score", q.score}};
      if (!r.label.empty()) j["label"] = r.label;
      out += j.dump() + "\n";
    }
  }
  return out;
}

nlohmann::json summary_json(const MetricReport& r) {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& sd : r.seeds) {
    per_seed.push_back({{"seed", sd.seed}, {"mean", sd.mean()}, {"queries", sd.scores.size()}});
  }
  nlohmann::json j = {{"method", r.method},         {"metric", r.metric},
                      {"config_hash", r.config_hash}, {"mean", r.mean()},
                      {"std", r.std_over_seeds()},    {"per_seed", per_seed},
                      {"wall_clock_s", r.wall_clock_s}};
  if (!r.label.empty()) j["label"] = r.label;
  return j;
}

std::string to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "method,label,metric,mean,std,seeds\n";
  os << std::setprecision(6) << std::fixed;
  for (const auto& r : reports) {
    os << r.method << ',' << r.label << ',' << r.metric << ',' << r.mean() << ',' << r.std_over_seeds()
       << ',' << r.seeds.size() << '\n';
  }
  return os.str();
}

void write_report(const std::filesystem::path& dir, const std::string& stem,
                  const std::vector<MetricReport>& reports) {
  std::filesystem::create_directories(dir);
  std::ofstream jl(dir / (stem + ".jsonl"), std::ios::binary);
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : reports) {
    jl << to_jsonl(r);
    summary.push_back(summary_json(r));
  }
  std::ofstream(dir / (stem + ".summary.json"), std::ios::binary) << summary.dump(2) << "\n";
  std::ofstream(dir / (stem + ".csv"), std::ios::binary) << to_csv(reports);
  if (!jl) throw std::runtime_error("failed to write " + (dir / (stem + ".jsonl")).string());
}

}  // namespace viclf
