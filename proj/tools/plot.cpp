#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cli.hpp"

namespace viclf::cli {
namespace {

constexpr int kWidth = 900;
constexpr int kHeight = 520;
constexpr int kLeft = 80;
constexpr int kRight = 30;
constexpr int kTop = 60;
constexpr int kBottom = 150;

const cv::Scalar kInk(40, 40, 40);
const cv::Scalar kGrid(225, 225, 225);
const cv::Scalar kBar(180, 119, 31);  // BGR

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, kInk, 1, cv::LINE_AA);
}

// Label drawn rotated by 90 degrees so long names fit under narrow bars.
void vertical_text(cv::Mat& img, const std::string& s, cv::Point top_center) {
  int baseline = 0;
  const cv::Size sz = cv::getTextSize(s, cv::FONT_HERSHEY_SIMPLEX, 0.4, 1, &baseline);
  cv::Mat patch(sz.height + baseline + 4, sz.width + 4, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::putText(patch, s, {2, sz.height + 1}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kInk, 1, cv::LINE_AA);
  cv::Mat rotated;
  cv::rotate(patch, rotated, cv::ROTATE_90_COUNTERCLOCKWISE);
  const int x = std::clamp(top_center.x - rotated.cols / 2, 0, img.cols - rotated.cols);
  const int h = std::min(rotated.rows, img.rows - top_center.y);
  rotated(cv::Rect(0, rotated.rows - h, rotated.cols, h))
      .copyTo(img(cv::Rect(x, top_center.y, rotated.cols, h)));
}

}  // namespace

void render_plot(const PlotSeries& s, const std::filesystem::path& path) {
  const std::size_t n = s.values.size();
  if (n == 0 || s.labels.size() != n || (!s.errors.empty() && s.errors.size() != n)) {
    throw std::invalid_argument("render_plot: inconsistent series");
  }
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));
  const int plot_w = kWidth - kLeft - kRight;
  const int plot_h = kHeight - kTop - kBottom;

  double hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    hi = std::max(hi, s.values[i] + (s.errors.empty() ? 0.0 : s.errors[i]));
  }
  hi = hi <= 0.0 ? 1.0 : hi * 1.1;
  const auto y_of = [&](double v) { return kTop + plot_h - static_cast<int>(std::lround(v / hi * plot_h)); };

  for (int t = 0; t <= 5; ++t) {
    const double v = hi * t / 5.0;
    const int y = y_of(v);
    cv::line(img, {kLeft, y}, {kLeft + plot_w, y}, kGrid, 1);
    text(img, fmt(v), {8, y + 4}, 0.4);
  }
  cv::line(img, {kLeft, kTop}, {kLeft, kTop + plot_h}, kInk, 1);
  cv::line(img, {kLeft, kTop + plot_h}, {kLeft + plot_w, kTop + plot_h}, kInk, 1);
  text(img, s.title, {kLeft, kTop - 25}, 0.7);

  const double slot = static_cast<double>(plot_w) / static_cast<double>(n);
  std::vector<cv::Point> points;
  for (std::size_t i = 0; i < n; ++i) {
    const int cx = kLeft + static_cast<int>(slot * (static_cast<double>(i) + 0.5));
    const int y = y_of(std::max(0.0, s.values[i]));
    if (s.line) {
      points.emplace_back(cx, y);
    } else {
      const int half = std::max(2, static_cast<int>(slot * 0.3));
      cv::rectangle(img, {cx - half, y}, {cx + half, kTop + plot_h}, kBar, cv::FILLED);
    }
    if (!s.errors.empty() && s.errors[i] > 0.0) {
      const int y0 = y_of(std::max(0.0, s.values[i] - s.errors[i]));
      const int y1 = y_of(s.values[i] + s.errors[i]);
      cv::line(img, {cx, y0}, {cx, y1}, kInk, 1);
      cv::line(img, {cx - 4, y0}, {cx + 4, y0}, kInk, 1);
      cv::line(img, {cx - 4, y1}, {cx + 4, y1}, kInk, 1);
    }
    text(img, fmt(s.values[i]), {cx - 18, y - 6}, 0.38);
    vertical_text(img, s.labels[i], {cx, kTop + plot_h + 6});
  }
  if (s.line) {
    cv::polylines(img, points, false, kBar, 2, cv::LINE_AA);
    for (const auto& p : points) cv::circle(img, p, 4, kBar, cv::FILLED, cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("failed to write " + path.string());
}

}  // namespace viclf::cli
