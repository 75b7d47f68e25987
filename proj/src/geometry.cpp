#include "kpn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace kpn {

double BoundingBox::scale() const { return std::sqrt(w * h); }

std::string to_xywh_string(const BoundingBox& box) {
  std::ostringstream os;
  os.precision(10);
  os << box.left() << ',' << box.top() << ',' << box.w << ',' << box.h;
  return os.str();
}

BoundingBox CropWindow::to_crop(const BoundingBox& b) const {
  const double s = scale();
  return {(b.cx - origin_x()) * s, (b.cy - origin_y()) * s, b.w * s, b.h * s};
}

BoundingBox CropWindow::to_image(const BoundingBox& b) const {
  const double s = scale();
  return {b.cx / s + origin_x(), b.cy / s + origin_y(), b.w / s, b.h / s};
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const Corners ca = a.corners();
  const Corners cb = b.corners();
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = (ca.x2 - ca.x1) * (ca.y2 - ca.y1) + (cb.x2 - cb.x1) * (cb.y2 - cb.y1) - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double center_error(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

CropWindow template_crop_window(const BoundingBox& box) {
  if (!box.valid()) throw std::invalid_argument("template_crop_window: degenerate box");
  const double p = (box.w + box.h) / 2.0;
  return {box.cx, box.cy, std::sqrt((box.w + p) * (box.h + p)), kTemplateSize};
}

CropWindow search_crop_window(const BoundingBox& prev) {
  const CropWindow t = template_crop_window(prev);
  return {prev.cx, prev.cy, t.side * kSearchSize / static_cast<double>(kTemplateSize), kSearchSize};
}

std::vector<double> grid_centers(int n, double stride, double img_size) {
  if (n < 1) throw std::invalid_argument("grid_centers: n must be >= 1");
  std::vector<double> xs(static_cast<std::size_t>(n));
  const double margin = (img_size - stride * (n - 1)) / 2.0;
  for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = i * stride + margin;
  return xs;
}

}  // namespace kpn
