#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kpn/eval.hpp"
#include "kpn/image.hpp"
#include "kpn/prediction.hpp"

namespace kpn {

/// One "x,y,w,h" line per frame.
void write_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& path);

/// frame,iou,center_error[,status]; frames are 1-based and absent values empty.
void write_frame_csv(const std::filesystem::path& path, const OpeResult& ope);
void write_frame_csv(const std::filesystem::path& path, const RestartResult& restart, const GroundTruth& gt,
                     const Trajectory& traj);

using SummaryValue = std::pair<std::string, double>;

/// Flat JSON object; keys keep their order.
void write_summary(const std::filesystem::path& path, const std::vector<SummaryValue>& values,
                   const std::vector<std::pair<std::string, std::string>>& labels = {});

struct Series {
  std::string name;
  std::vector<double> y;
};

/// Line plot of every series against `x`.
void plot_lines(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::vector<double>& x, const std::vector<Series>& series);

/// precision.png and success.png in `dir`.
void plot_ope_curves(const std::filesystem::path& dir, const std::vector<std::pair<std::string, OpeResult>>& runs);

using Color = std::array<float, 3>;  // RGB
inline constexpr Color kPredColor{255, 40, 40};
inline constexpr Color kTruthColor{40, 220, 40};

void draw_box(Image& image, const BoundingBox& box, const Color& color, int thickness = 1);

/// Center-probability map as a `side` x `side` color image (nearest-neighbor upsampled).
Image heatmap_image(const PredictionMaps& maps, int side);
/// Any [H x W] map in [0, 1] rendered the same way.
Image heatmap_image(const std::vector<double>& values, int map_size, int side);

/// Images placed left to right on a black canvas, top-aligned.
Image hstack(const std::vector<Image>& images);
Image vstack(const std::vector<Image>& images);

}  // namespace kpn
