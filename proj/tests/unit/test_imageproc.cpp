#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "uwvo/error.hpp"
#include "uwvo/image.hpp"
#include "uwvo/synthetic.hpp"
#include "uwvo/tracking.hpp"

using namespace uwvo;

namespace {

// Anti-aliased checkerboard corner at `c`, fading into a flat background.
GrayImage corner_image(int w, int h, const Vec2& c) {
  GrayImage img(w, h);
  constexpr int kSub = 8;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x - 0.5 + (sx + 0.5) / kSub - c.x();
          const double py = y - 0.5 + (sy + 0.5) / kSub - c.y();
          const double sign = (px > 0) == (py > 0) ? 1.0 : -1.0;
          acc += sign * std::exp(-(px * px + py * py) / (2.0 * 10.0 * 10.0));
        }
      }
      img(x, y) = static_cast<std::uint8_t>(std::lround(128.0 + 100.0 * acc / (kSub * kSub)));
    }
  }
  return img;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const auto i = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())) - 1);
  return v[std::min(i, v.size() - 1)];
}

std::vector<Vec2> interior_corners(const GrayImage& img, int n, int margin) {
  std::vector<Vec2> out;
  for (const Vec2& p : detect_shi_tomasi(img, 500, {}, 500, 0.01)) {
    if (p.x() > margin && p.y() > margin && p.x() < img.width - 1 - margin &&
        p.y() < img.height - 1 - margin) {
      out.push_back(p);
    }
    if (static_cast<int>(out.size()) == n) break;
  }
  return out;
}

}  // namespace

TEST(Pyramid, HalvingSizes) {
  const Pyramid p = build_pyramid(GrayImage(640, 480, 7), 4);
  ASSERT_EQ(p.num_levels(), 4);
  const int expected[4][2] = {{640, 480}, {320, 240}, {160, 120}, {80, 60}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(p.levels[i].width, expected[i][0]);
    EXPECT_EQ(p.levels[i].height, expected[i][1]);
  }
}

TEST(Pyramid, FloorDivisionOnOddSizes) {
  const Pyramid p = build_pyramid(GrayImage(101, 67), 3);
  EXPECT_EQ(p.levels[1].width, 50);
  EXPECT_EQ(p.levels[1].height, 33);
  EXPECT_EQ(p.levels[2].width, 25);
  EXPECT_EQ(p.levels[2].height, 16);
}

TEST(Pyramid, ConstantImageStaysConstant) {
  const Pyramid p = build_pyramid(GrayImage(128, 96, 93), 3);
  for (const GrayImage& level : p.levels) {
    for (std::uint8_t v : level.data) EXPECT_EQ(v, 93);
  }
}

TEST(Pyramid, TooSmallForLevels) {
  try {
    build_pyramid(GrayImage(16, 16), 5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kImageTooSmall);
  }
}

TEST(Detect, ConstantImageHasNoCorners) {
  EXPECT_TRUE(detect_shi_tomasi(GrayImage(200, 120, 50), 500, {}, 250, 0.01).empty());
}

TEST(Detect, SingleCornerLocalizedSubPixel) {
  const GrayImage img = corner_image(200, 120, Vec2(100.0, 60.0));
  const auto corners = detect_shi_tomasi(img, 1, {}, 10, 0.01);
  ASSERT_EQ(corners.size(), 1u);
  EXPECT_LT((corners[0] - Vec2(100.0, 60.0)).norm(), 0.5);
}

TEST(Detect, FullyOccupiedGridGivesNothing) {
  const RenderedPair pair = render_textured_pair(1, Warp(), 320, 240);
  const CellGrid grid(320, 240, 100);
  std::vector<Vec2> occupied;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      occupied.emplace_back((c + 0.5) * grid.cell_w, (r + 0.5) * grid.cell_h);
    }
  }
  EXPECT_TRUE(detect_shi_tomasi(pair.first, 100, occupied, 100, 0.01).empty());
}

TEST(Detect, BudgetAndOnePerCell) {
  const RenderedPair pair = render_textured_pair(2, Warp(), 640, 480);
  const auto corners = detect_shi_tomasi(pair.first, 500, {}, 250, 0.01);
  EXPECT_LE(corners.size(), 250u);
  EXPECT_GT(corners.size(), 200u);
  const CellGrid grid(640, 480, 500);
  std::vector<int> count(grid.size(), 0);
  for (const Vec2& p : corners) EXPECT_EQ(++count[grid.cell_of(p)], 1);
}

TEST(Detect, TranslationEquivariance) {
  const RenderedPair pair = render_textured_pair(3, Warp(), 320, 240);
  const int dx = 7, dy = -4;
  GrayImage shifted(320, 240);
  for (int y = 0; y < 240; ++y) {
    for (int x = 0; x < 320; ++x) {
      shifted(x, y) = pair.first(std::clamp(x - dx, 0, 319), std::clamp(y - dy, 0, 239));
    }
  }
  // one cell over the whole image so bucketing does not depend on position
  const auto a = detect_shi_tomasi(pair.first, 1, {}, 1, 0.01);
  const auto b = detect_shi_tomasi(shifted, 1, {}, 1, 0.01);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_LT((b[0] - a[0] - Vec2(dx, dy)).norm(), 0.5);
}

TEST(Lk, ZeroMotion) {
  const RenderedPair pair = render_textured_pair(4, Warp(), 320, 240);
  const Pyramid p = build_pyramid(pair.first, 3);
  const auto pts = interior_corners(pair.first, 50, 20);
  const auto fwd = track_pyr_lk(p, p, pts, pts);
  const auto res = forward_backward_filter(p, p, pts, fwd, 2.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ASSERT_TRUE(res[i].tracked());
    EXPECT_LT((res[i].position - pts[i]).norm(), 1e-9);
    EXPECT_LT(res[i].fb_error, 1e-9);
  }
}

TEST(Lk, TenPixelShift) {
  const RenderedPair pair = render_textured_pair(5, Warp::translation(10.0, 0.0), 640, 480);
  const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(pair.second, 4);
  const auto pts = interior_corners(pair.first, 200, 30);
  const auto res = track_pyr_lk(a, b, pts, pts);
  std::vector<double> err;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (res[i].tracked()) err.push_back((res[i].position - pair.warp.apply(pts[i])).norm());
  }
  ASSERT_GT(err.size(), pts.size() * 9 / 10);
  EXPECT_LT(percentile(err, 0.5), 0.3);
}

TEST(Lk, TexturelessPointIsLost) {
  GrayImage img(200, 200, 120);
  const Pyramid p = build_pyramid(img, 3);
  const std::vector<Vec2> pts{Vec2(100, 100)};
  EXPECT_FALSE(track_pyr_lk(p, p, pts, pts)[0].tracked());
}

TEST(Lk, RecoversShiftsAcrossTheRange) {
  // known sub-pixel shifts up to window * 2^(levels-1) = 80 px
  const std::vector<Vec2> shifts{{0.37, -0.21}, {3.6, 2.2}, {-12.4, 7.9}, {25.3, -18.6},
                                 {-40.0, 0.0},  {55.5, 20.3}, {0.0, -80.0}};
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    const Vec2 s = shifts[k];
    const RenderedPair pair = render_textured_pair(10 + k, Warp::translation(s.x(), s.y()), 640, 480);
    const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(pair.second, 4);
    std::vector<Vec2> pts;
    for (const Vec2& p : interior_corners(pair.first, 500, 20)) {
      if (pair.second.width > 0 && (p + s).x() > 20 && (p + s).y() > 20 &&
          (p + s).x() < 619 && (p + s).y() < 459) {
        pts.push_back(p);
      }
    }
    const auto res = track_pyr_lk(a, b, pts, pts);
    std::vector<double> err;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (res[i].tracked()) err.push_back((res[i].position - (pts[i] + s)).norm());
    }
    ASSERT_GT(err.size(), pts.size() * 8 / 10) << "shift " << s.transpose();
    EXPECT_LT(percentile(err, 0.5), 0.3) << "shift " << s.transpose();
    EXPECT_LT(percentile(err, 0.95), 1.0) << "shift " << s.transpose();
  }
}

TEST(ForwardBackward, ZeroMotionAllSurvive) {
  const RenderedPair pair = render_textured_pair(20, Warp(), 320, 240);
  const Pyramid p = build_pyramid(pair.first, 3);
  const auto pts = interior_corners(pair.first, 80, 20);
  const auto res = forward_backward_filter(p, p, pts, track_pyr_lk(p, p, pts, pts), 2.0);
  for (const auto& r : res) {
    EXPECT_TRUE(r.tracked());
    EXPECT_LT(r.fb_error, 1e-9);
  }
}

TEST(ForwardBackward, PlantedOcclusionsRejected) {
  const RenderedPair pair = render_textured_pair(21, Warp::translation(6.0, -3.0), 640, 480);
  GrayImage second = pair.second;
  const auto pts = interior_corners(pair.first, 200, 40);
  std::vector<bool> occluded(pts.size(), false);
  for (std::size_t i = 0; i < pts.size(); i += 5) {
    occluded[i] = true;
    paint_noise_patch(second, pair.warp.apply(pts[i]), 12, 1000 + i);
  }
  const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(second, 4);
  const auto res = forward_backward_filter(a, b, pts, track_pyr_lk(a, b, pts, pts), 2.0);
  int survivors = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (occluded[i] && res[i].tracked()) ++survivors;
  }
  EXPECT_EQ(survivors, 0);
}

TEST(ForwardBackward, InfiniteThresholdKeepsStatuses) {
  const RenderedPair pair = render_textured_pair(22, Warp::translation(4.0, 1.0), 320, 240);
  const Pyramid a = build_pyramid(pair.first, 3), b = build_pyramid(pair.second, 3);
  auto pts = interior_corners(pair.first, 60, 20);
  pts.emplace_back(2.0, 2.0);  // likely to fail on its own
  const auto fwd = track_pyr_lk(a, b, pts, pts);
  const auto res =
      forward_backward_filter(a, b, pts, fwd, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(res[i].status, fwd[i].status);
}

TEST(ForwardBackward, SymmetricOnCleanWarps) {
  const RenderedPair pair = render_textured_pair(23, Warp::translation(7.3, -2.6), 640, 480);
  const Pyramid a = build_pyramid(pair.first, 4), b = build_pyramid(pair.second, 4);
  const auto pts = interior_corners(pair.first, 200, 30);
  const auto res = forward_backward_filter(a, b, pts, track_pyr_lk(a, b, pts, pts), 2.0);
  for (const auto& r : res) {
    if (r.tracked()) EXPECT_LT(r.fb_error, 0.1);
  }
}

TEST(ImageIo, PgmAndPngRoundTrip) {
  const auto dir = test::temp_dir("imageio");
  const RenderedPair pair = render_textured_pair(30, Warp(), 97, 61);
  save_pgm(pair.first, dir / "a.pgm");
  save_png(pair.first, dir / "a.png");
  EXPECT_EQ(load_pgm(dir / "a.pgm"), pair.first);
  EXPECT_EQ(load_png(dir / "a.png"), pair.first);
  EXPECT_EQ(load_image(dir / "a.png"), pair.first);
}

TEST(ImageIo, MissingFileIsIoError) {
  try {
    load_image("/nonexistent/frame.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}
