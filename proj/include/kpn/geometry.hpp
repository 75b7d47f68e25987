#pragma once

#include <string>
#include <vector>

namespace kpn {

/// Input side of the template crop fed to the network.
inline constexpr int kTemplateSize = 127;
/// Input side of the search crop fed to the network.
inline constexpr int kSearchSize = 255;
/// Image pixels per feature-grid cell.
inline constexpr int kStride = 8;
/// Search feature map side (31x31).
inline constexpr int kScoreSize = 31;
/// Template feature map side (15x15).
inline constexpr int kTemplateFeatSize = 15;
/// Spatial side of the correlation kernel cut from the template features.
inline constexpr int kKernelSize = 5;

struct Corners {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;
};

/// Axis-aligned box in center form, pixel units.
struct BoundingBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  static BoundingBox from_corners(const Corners& c) {
    return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
  }
  /// Top-left corner form as used in annotation files.
  static BoundingBox from_xywh(double x, double y, double w, double h) {
    return {x + w / 2.0, y + h / 2.0, w, h};
  }

  Corners corners() const { return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0}; }
  double left() const { return cx - w / 2.0; }
  double top() const { return cy - h / 2.0; }
  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0; }
  /// sqrt(w*h)
  double scale() const;
  /// w / h
  double ratio() const { return w / h; }

  bool operator==(const BoundingBox&) const = default;
};

/// Formats as "x,y,w,h" (top-left corner form).
std::string to_xywh_string(const BoundingBox& box);

/// Square image region resampled to `out_size` x `out_size` pixels.
struct CropWindow {
  double cx = 0;
  double cy = 0;
  double side = 0;
  int out_size = kTemplateSize;

  /// Crop pixels per image pixel.
  double scale() const { return out_size / side; }
  double origin_x() const { return cx - side / 2.0; }
  double origin_y() const { return cy - side / 2.0; }

  BoundingBox to_crop(const BoundingBox& image_box) const;
  BoundingBox to_image(const BoundingBox& crop_box) const;
};

/// Intersection over union; 0 for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Distance between box centers.
double center_error(const BoundingBox& a, const BoundingBox& b);

/// Exemplar window: context p = (w + h) / 2, side = sqrt((w + p)(h + p)).
CropWindow template_crop_window(const BoundingBox& box);

/// Search window: the template side scaled by 255/127, centered on `prev`.
CropWindow search_crop_window(const BoundingBox& prev);

/// Pixel position of each feature-grid index inside a crop of side `img_size`:
/// x_i = i * stride + (img_size - stride * (n - 1)) / 2.
std::vector<double> grid_centers(int n, double stride, double img_size);

}  // namespace kpn
