#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace viclf::cli {

/// Exit codes. Failures also print one JSON error record to the error stream.
enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kStageOrder = 4,
  kCheckpoint = 5,
  kOutputExists = 6,
};

/// A prerequisite stage has not been run.
class StageOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Output already present and --force not given.
class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct PlotSeries {
  std::string title;
  std::vector<std::string> labels;
  std::vector<double> values;
  std::vector<double> errors;  // std over seeds, may be empty
  bool line = false;           // line chart (sweeps) or bar chart
};

/// Renders a chart to PNG.
void render_plot(const PlotSeries& s, const std::filesystem::path& path);

}  // namespace viclf::cli
