#include <gtest/gtest.h>

#include <cmath>

#include "kpn/geometry.hpp"
#include "kpn/image.hpp"
#include "test_util.hpp"

namespace kpn {
namespace {

TEST(Iou, IdenticalBoxesGiveOne) {
  const BoundingBox a{50, 50, 20, 30};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Iou, DisjointBoxesGiveZero) {
  EXPECT_DOUBLE_EQ(iou({10, 10, 5, 5}, {100, 100, 5, 5}), 0.0);
}

TEST(Iou, HalfShiftedSquaresGiveOneThird) {
  // intersection 10 x 20 = 200, union 400 + 400 - 200 = 600
  EXPECT_NEAR(iou({50, 50, 20, 20}, {60, 50, 20, 20}), 1.0 / 3.0, 1e-12);
}

TEST(Iou, SymmetricAndBoundedOnRandomPairs) {
  test::Gen g(11);
  for (int i = 0; i < 2000; ++i) {
    const BoundingBox a = test::random_box(g, 100, 60);
    const BoundingBox b = test::random_box(g, 100, 60);
    const double ab = iou(a, b);
    EXPECT_DOUBLE_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(BoundingBox, CornerRoundTrip) {
  test::Gen g(3);
  for (int i = 0; i < 500; ++i) {
    const BoundingBox b{static_cast<double>(test::uniform_int(g, -50, 300)),
                        static_cast<double>(test::uniform_int(g, -50, 300)),
                        static_cast<double>(test::uniform_int(g, 1, 100)),
                        static_cast<double>(test::uniform_int(g, 1, 100))};
    EXPECT_EQ(BoundingBox::from_corners(b.corners()), b);
  }
}

TEST(BoundingBox, XywhFormIsTopLeft) {
  const BoundingBox b = BoundingBox::from_xywh(10, 20, 30, 40);
  const Corners c = b.corners();
  EXPECT_DOUBLE_EQ(c.x1, 10);
  EXPECT_DOUBLE_EQ(c.y1, 20);
  EXPECT_DOUBLE_EQ(c.x2, 40);
  EXPECT_DOUBLE_EQ(c.y2, 60);
  EXPECT_EQ(to_xywh_string(b), "10,20,30,40");
}

TEST(CropWindows, TemplateSideFollowsContextRule) {
  EXPECT_NEAR(template_crop_window({0, 0, 64, 64}).side, 128.0, 1e-12);
  EXPECT_NEAR(template_crop_window({0, 0, 100, 50}).side, std::sqrt(175.0 * 125.0), 1e-12);
  EXPECT_NEAR(template_crop_window({0, 0, 100, 50}).side, 147.9, 0.05);
  const CropWindow w = template_crop_window({30, 40, 37, 37});
  EXPECT_NEAR(w.side, 74.0, 1e-12);
  EXPECT_EQ(w.out_size, 127);
  EXPECT_DOUBLE_EQ(w.cx, 30);
  EXPECT_DOUBLE_EQ(w.cy, 40);
}

TEST(CropWindows, SearchWindowScalesTemplateSide) {
  const CropWindow s = search_crop_window({70, 80, 64, 64});
  EXPECT_NEAR(s.side, 128.0 * 255.0 / 127.0, 1e-9);
  EXPECT_NEAR(s.side, 257.0, 0.01);
  EXPECT_EQ(s.out_size, 255);
  EXPECT_DOUBLE_EQ(s.cx, 70);
  EXPECT_DOUBLE_EQ(s.cy, 80);
}

TEST(CropWindows, ImageCropRoundTrip) {
  test::Gen g(5);
  for (int i = 0; i < 200; ++i) {
    const CropWindow w = search_crop_window(test::random_box(g));
    const BoundingBox b = test::random_box(g);
    const BoundingBox back = w.to_image(w.to_crop(b));
    EXPECT_NEAR(back.cx, b.cx, 1e-9);
    EXPECT_NEAR(back.cy, b.cy, 1e-9);
    EXPECT_NEAR(back.w, b.w, 1e-9);
    EXPECT_NEAR(back.h, b.h, 1e-9);
  }
}

TEST(GridCenters, SearchGridEndpoints) {
  const auto x = grid_centers(31, 8, 255);
  ASSERT_EQ(x.size(), 31u);
  EXPECT_DOUBLE_EQ(x[0], 7.5);
  EXPECT_DOUBLE_EQ(x[15], 127.5);
  EXPECT_DOUBLE_EQ(x[30], 247.5);
  EXPECT_DOUBLE_EQ(grid_centers(1, 8, 255)[0], 127.5);
}

TEST(GridCenters, ArithmeticWithCenteredMean) {
  test::Gen g(9);
  for (int i = 0; i < 100; ++i) {
    const int n = test::uniform_int(g, 1, 40);
    const double stride = test::uniform(g, 1, 10);
    const double size = stride * (n - 1) + test::uniform(g, 0, 50);
    const auto x = grid_centers(n, stride, size);
    double mean = 0;
    for (int k = 0; k < n; ++k) {
      mean += x[static_cast<std::size_t>(k)] / n;
      if (k > 0) {
        EXPECT_NEAR(x[static_cast<std::size_t>(k)] - x[static_cast<std::size_t>(k - 1)], stride, 1e-9);
      }
    }
    EXPECT_NEAR(mean, size / 2, 1e-9);
  }
}

// Per-pixel bilinear sampling written independently of the library's row/tap layout.
Image reference_crop(const Image& img, const CropWindow& w) {
  const auto mean = img.channel_mean();
  Image out(3, w.out_size, w.out_size);
  const double step = w.side / w.out_size;
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < w.out_size; ++v) {
      for (int u = 0; u < w.out_size; ++u) {
        const double sx = w.cx - w.side / 2 + (u + 0.5) * step - 0.5;
        const double sy = w.cy - w.side / 2 + (v + 0.5) * step - 0.5;
        double acc = 0;
        for (int dy = 0; dy <= 1; ++dy) {
          for (int dx = 0; dx <= 1; ++dx) {
            const int px = static_cast<int>(std::floor(sx)) + dx;
            const int py = static_cast<int>(std::floor(sy)) + dy;
            const double wx = dx ? sx - std::floor(sx) : 1 - (sx - std::floor(sx));
            const double wy = dy ? sy - std::floor(sy) : 1 - (sy - std::floor(sy));
            const bool inside = px >= 0 && py >= 0 && px < img.width() && py < img.height();
            acc += wx * wy * (inside ? img.at(c, py, px) : mean[static_cast<std::size_t>(c)]);
          }
        }
        out.at(c, v, u) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

TEST(CropAndResize, MatchesPixelLoopReference) {
  test::Gen g(21);
  for (int i = 0; i < 20; ++i) {
    const Image img = test::random_image(g, test::uniform_int(g, 10, 60), test::uniform_int(g, 10, 60));
    CropWindow w{test::uniform(g, -20, 80), test::uniform(g, -20, 80), test::uniform(g, 3, 90),
                 test::uniform_int(g, 5, 40)};
    const Image a = crop_and_resize(img, w);
    const Image b = reference_crop(img, w);
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a.values()[k], b.values()[k], 1e-3);
  }
}

TEST(CropAndResize, HalfOutsideWindowIsMeanPaddedOnTheLeft) {
  test::Gen g(2);
  const Image img = test::random_image(g, 20, 20);
  const auto mean = img.channel_mean();
  // Unit scale with an integer origin: every output pixel copies one source pixel.
  const CropWindow w{0.0, 10.0, 20.0, 20};
  const Image out = crop_and_resize(img, w);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        const float expect = x < 10 ? mean[static_cast<std::size_t>(c)] : img.at(c, y, x - 10);
        ASSERT_NEAR(out.at(c, y, x), expect, 1e-4);
      }
    }
  }
}

TEST(CropAndResize, InsideWindowNeedsNoPadding) {
  test::Gen g(4);
  const Image img = test::random_image(g, 30, 30);
  const Image out = crop_and_resize(img, CropWindow{15.0, 15.0, 10.0, 10}, {-1000.f, -1000.f, -1000.f});
  for (float v : out.values()) EXPECT_GE(v, 0.0f);
}

TEST(CropAndResize, OutsideWindowIsUniformMean) {
  test::Gen g(6);
  const Image img = test::random_image(g, 16, 16);
  const auto mean = img.channel_mean();
  const Image out = crop_and_resize(img, CropWindow{500.0, 500.0, 30.0, 12});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 12; ++x) EXPECT_NEAR(out.at(c, y, x), mean[static_cast<std::size_t>(c)], 1e-4);
    }
  }
}

TEST(CropAndResize, ZeroSizeWindowThrows) {
  const Image img(3, 8, 8);
  EXPECT_THROW(crop_and_resize(img, CropWindow{4.0, 4.0, 0.0, 8}), std::invalid_argument);
}

}  // namespace
}  // namespace kpn
