#include "kpn/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace kpn {

Image load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  Image img(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(0, y, x) = row[x][2];
      img.at(1, y, x) = row[x][1];
      img.at(2, y, x) = row[x][0];
    }
  }
  return img;
}

void save_image(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3) throw std::invalid_argument("save_image: expected 3 channels");
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = cv::saturate_cast<uchar>(image.at(c, y, x));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image " + path.string());
}

Image gaussian_blur(const Image& image, double sigma) {
  Image out = image;
  if (!(sigma > 0)) return out;
  for (int c = 0; c < image.channels(); ++c) {
    const std::size_t offset = static_cast<std::size_t>(c) * image.height() * image.width();
    cv::Mat src(image.height(), image.width(), CV_32F, const_cast<float*>(image.data() + offset));
    cv::Mat dst(image.height(), image.width(), CV_32F, out.data() + offset);
    cv::GaussianBlur(src, dst, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  }
  return out;
}

}  // namespace kpn
