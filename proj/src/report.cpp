#include "kpn/report.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <stdexcept>

#include "kpn/data.hpp"

namespace kpn {
namespace fs = std::filesystem;
namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void put_value(std::ostream& out, double v) {
  if (std::isfinite(v)) out << v;
}

const char* status_name(FrameStatus s) {
  switch (s) {
    case FrameStatus::kBurnIn: return "burn_in";
    case FrameStatus::kEvaluated: return "evaluated";
    case FrameStatus::kFailure: return "failure";
    case FrameStatus::kSkipped: return "skipped";
  }
  return "";
}

// RGB float image <-> BGR 8-bit Mat.
cv::Mat to_mat(const Image& image) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = cv::saturate_cast<uchar>(image.at(c, y, x));
    }
  }
  return bgr;
}

Image from_mat(const cv::Mat& bgr) {
  Image img(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c];
    }
  }
  return img;
}

const std::array<cv::Scalar, 6> kPalette{cv::Scalar(200, 80, 30), cv::Scalar(40, 40, 220), cv::Scalar(40, 160, 40),
                                         cv::Scalar(160, 40, 160), cv::Scalar(20, 140, 220),
                                         cv::Scalar(90, 90, 90)};

}  // namespace

void write_trajectory(const fs::path& path, const Trajectory& traj) {
  std::ofstream out = open_out(path);
  for (const BoundingBox& b : traj) out << to_xywh_string(b) << '\n';
}

Trajectory read_trajectory(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::optional<BoundingBox> b;
    try {
      b = parse_box_line(line);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!b) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": missing box");
    traj.push_back(*b);
  }
  return traj;
}

void write_frame_csv(const fs::path& path, const OpeResult& ope) {
  std::ofstream out = open_out(path);
  out << std::setprecision(10) << "frame,iou,center_error\n";
  for (std::size_t f = 0; f < ope.ious.size(); ++f) {
    out << f + 1 << ',';
    put_value(out, ope.ious[f]);
    out << ',';
    put_value(out, ope.center_errors[f]);
    out << '\n';
  }
}

void write_frame_csv(const fs::path& path, const RestartResult& restart, const GroundTruth& gt,
                     const Trajectory& traj) {
  std::ofstream out = open_out(path);
  out << std::setprecision(10) << "frame,iou,center_error,status\n";
  for (std::size_t f = 0; f < restart.status.size(); ++f) {
    out << f + 1 << ',';
    put_value(out, restart.ious[f]);
    out << ',';
    if (f < traj.size() && f < gt.size() && gt[f] && restart.status[f] != FrameStatus::kSkipped) {
      put_value(out, center_error(traj[f], *gt[f]));
    }
    out << ',' << status_name(restart.status[f]) << '\n';
  }
}

void write_summary(const fs::path& path, const std::vector<SummaryValue>& values,
                   const std::vector<std::pair<std::string, std::string>>& labels) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : labels) j[k] = v;
  for (const auto& [k, v] : values) j[k] = v;
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

void plot_lines(const fs::path& path, const std::string& title, const std::string& x_label,
                const std::vector<double>& x, const std::vector<Series>& series) {
  constexpr int kW = 640, kH = 480, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  if (x.empty()) throw std::invalid_argument("plot_lines: empty x axis");
  double x0 = x.front(), x1 = x.back();
  if (x1 <= x0) x1 = x0 + 1;
  double y0 = 0, y1 = 1;
  bool first = true;
  for (const Series& s : series) {
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      if (first) {
        y0 = y1 = v;
        first = false;
      }
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * (kW - kLeft - kRight); };
  auto py = [&](double v) { return kH - kBottom - (v - y0) / (y1 - y0) * (kH - kTop - kBottom); };

  const cv::Scalar axis(0, 0, 0);
  cv::rectangle(canvas, cv::Point(kLeft, kTop), cv::Point(kW - kRight, kH - kBottom), axis, 1);
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    const double xv = x0 + (x1 - x0) * t / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    cv::putText(canvas, buf, cv::Point(4, static_cast<int>(py(yv)) + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1);
    std::snprintf(buf, sizeof buf, "%.3g", xv);
    cv::putText(canvas, buf, cv::Point(static_cast<int>(px(xv)) - 10, kH - kBottom + 16), cv::FONT_HERSHEY_SIMPLEX,
                0.4, axis, 1);
  }
  cv::putText(canvas, title, cv::Point(kLeft, 25), cv::FONT_HERSHEY_SIMPLEX, 0.6, axis, 1);
  cv::putText(canvas, x_label, cv::Point(kW / 2 - 40, kH - 12), cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1);

  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    const cv::Scalar color = kPalette[i % kPalette.size()];
    std::vector<cv::Point> pts;
    for (std::size_t k = 0; k < s.y.size() && k < x.size(); ++k) {
      if (std::isfinite(s.y[k])) pts.emplace_back(static_cast<int>(px(x[k])), static_cast<int>(py(s.y[k])));
    }
    if (pts.size() > 1) cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
    const int ly = kTop + 18 + 18 * static_cast<int>(i);
    cv::line(canvas, cv::Point(kW - kRight - 170, ly - 4), cv::Point(kW - kRight - 145, ly - 4), color, 2);
    cv::putText(canvas, s.name, cv::Point(kW - kRight - 140, ly), cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw std::runtime_error("cannot write image " + path.string());
}

void plot_ope_curves(const fs::path& dir, const std::vector<std::pair<std::string, OpeResult>>& runs) {
  std::vector<double> px(kPrecisionThresholds), sx(kSuccessThresholds);
  for (int t = 0; t < kPrecisionThresholds; ++t) px[static_cast<std::size_t>(t)] = t;
  for (int u = 0; u < kSuccessThresholds; ++u) sx[static_cast<std::size_t>(u)] = u / 20.0;
  std::vector<Series> prec, succ;
  for (const auto& [name, r] : runs) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s [%.3f]", name.c_str(), r.precision_at_20);
    prec.push_back({buf, r.precision_curve});
    std::snprintf(buf, sizeof buf, "%s [%.3f]", name.c_str(), r.auc);
    succ.push_back({buf, r.success_curve});
  }
  plot_lines(dir / "precision.png", "Precision plots of OPE", "location error threshold (px)", px, prec);
  plot_lines(dir / "success.png", "Success plots of OPE", "overlap threshold", sx, succ);
}

void draw_box(Image& image, const BoundingBox& box, const Color& color, int thickness) {
  cv::Mat m = to_mat(image);
  const Corners c = box.corners();
  cv::rectangle(m, cv::Point(static_cast<int>(std::lround(c.x1)), static_cast<int>(std::lround(c.y1))),
                cv::Point(static_cast<int>(std::lround(c.x2)), static_cast<int>(std::lround(c.y2))),
                cv::Scalar(color[2], color[1], color[0]), thickness);
  image = from_mat(m);
}

Image heatmap_image(const std::vector<double>& values, int map_size, int side) {
  if (values.size() != static_cast<std::size_t>(map_size) * map_size) {
    throw std::invalid_argument("heatmap_image: map size mismatch");
  }
  cv::Mat gray(map_size, map_size, CV_8UC1);
  for (int r = 0; r < map_size; ++r) {
    for (int c = 0; c < map_size; ++c) {
      gray.at<uchar>(r, c) =
          cv::saturate_cast<uchar>(255.0 * std::clamp(values[static_cast<std::size_t>(r) * map_size + c], 0.0, 1.0));
    }
  }
  cv::Mat big, color;
  cv::resize(gray, big, cv::Size(side, side), 0, 0, cv::INTER_NEAREST);
  cv::applyColorMap(big, color, cv::COLORMAP_JET);
  return from_mat(color);
}

Image heatmap_image(const PredictionMaps& maps, int side) {
  return heatmap_image(maps.center_probs(), maps.map_size, side);
}

Image hstack(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("hstack: no images");
  int w = 0, h = 0;
  for (const Image& im : images) {
    w += im.width();
    h = std::max(h, im.height());
  }
  Image out(3, h, w);
  int x0 = 0;
  for (const Image& im : images) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < im.height(); ++y) {
        for (int x = 0; x < im.width(); ++x) out.at(c, y, x0 + x) = im.at(c, y, x);
      }
    }
    x0 += im.width();
  }
  return out;
}

Image vstack(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("vstack: no images");
  int w = 0, h = 0;
  for (const Image& im : images) {
    h += im.height();
    w = std::max(w, im.width());
  }
  Image out(3, h, w);
  int y0 = 0;
  for (const Image& im : images) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < im.height(); ++y) {
        for (int x = 0; x < im.width(); ++x) out.at(c, y0 + y, x) = im.at(c, y, x);
      }
    }
    y0 += im.height();
  }
  return out;
}

}  // namespace kpn
