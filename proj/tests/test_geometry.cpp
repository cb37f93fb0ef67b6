#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "omnistereo/errors.hpp"
#include "omnistereo/geometry.hpp"

using namespace omnistereo;

namespace {

constexpr double kPi = std::numbers::pi;

// Law of sines in the triangle (bottom center, top center, point):
// r_b / sin(theta_b + d) = B / sin(d).
double depth_by_law_of_sines(double d_rad, double theta_b, double b) {
  return b * std::sin(theta_b + d_rad) / std::sin(d_rad);
}

Image ramp_image(int rows, int cols, int channels) {
  Image img(rows, cols, channels);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int ch = 0; ch < channels; ++ch) img.at(r, c, ch) = 0.01f * r + 0.001f * c + 0.3f * ch;
  return img;
}

}  // namespace

TEST(PolarAngleMap, PixelCenters) {
  CameraRig rig;
  rig.height_px = 2;
  auto m = polar_angle_map(rig);
  ASSERT_EQ(m.theta.size(), 2u);
  EXPECT_DOUBLE_EQ(m.theta[0], kPi / 4);
  EXPECT_DOUBLE_EQ(m.theta[1], 3 * kPi / 4);

  rig.height_px = 512;
  m = polar_angle_map(rig);
  EXPECT_DOUBLE_EQ(m.theta[0], kPi / 1024);
  for (int r = 1; r < 512; ++r) EXPECT_GT(m.theta[r], m.theta[r - 1]);
  EXPECT_NEAR(m.theta[511], kPi - m.theta[0], 1e-14);
}

TEST(CameraRig, RejectsInvalid) {
  CameraRig rig;
  rig.baseline_m = 0.0;
  EXPECT_THROW(rig.validate(), ConfigError);
  rig = {};
  rig.width_px = 0;
  EXPECT_THROW(rig.validate(), ConfigError);
  rig = {};
  rig.vertical_fov_rad = 4.0;
  EXPECT_THROW(rig.validate(), ConfigError);
}

TEST(DisparityToDepth, HandExamples) {
  EXPECT_NEAR(disparity_to_depth(kPi / 4, kPi / 2, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(disparity_to_depth(std::atan(0.5), kPi / 2, 1.0), 2.0, 1e-15);
  EXPECT_NEAR(depth_to_disparity(1.0, kPi / 2, 1.0), kPi / 4, 1e-15);
}

TEST(DisparityToDepth, MapMatchesScalarOracle) {
  std::mt19937_64 rng(7);
  CameraRig rig;
  rig.height_px = 40;
  rig.width_px = 25;
  const auto theta = polar_angle_map(rig);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    rig.baseline_m = 0.05 + 2.0 * u01(rng);
    DisparityMap disp(rig.height_px, rig.width_px);
    for (int r = 0; r < rig.height_px; ++r)
      for (int c = 0; c < rig.width_px; ++c) {
        const double hi = 0.5 * (kPi - theta.theta[r]);
        disp.values(r, c) = (1e-3 + (hi - 1e-3) * u01(rng)) * 180.0 / kPi;
        disp.valid(r, c) = 1;
      }
    const auto out = disparity_to_depth(disp, theta, rig);
    EXPECT_EQ(out.degenerate, 0u);
    for (int r = 0; r < rig.height_px; ++r)
      for (int c = 0; c < rig.width_px; ++c) {
        const double ref =
            depth_by_law_of_sines(disp.values(r, c) * kPi / 180.0, theta.theta[r], rig.baseline_m);
        ASSERT_TRUE(out.depth.valid(r, c));
        EXPECT_LT(std::abs(out.depth.values(r, c) - ref) / ref, 1e-12);
      }
  }
}

TEST(DisparityToDepth, StrictlyDecreasingInDisparity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double theta = 0.01 + (kPi - 0.02) * u01(rng);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 50; ++k) {
      const double d = theta * k / 50.0;
      const double r = disparity_to_depth(d, theta, 1.0);
      EXPECT_LT(r, prev);
      prev = r;
    }
  }
}

TEST(DisparityToDepth, InvalidAndDegenerate) {
  CameraRig rig;
  rig.height_px = 2;
  rig.width_px = 3;
  const auto theta = polar_angle_map(rig);
  DisparityMap disp(2, 3);
  disp.values(0, 0) = 1.0;
  disp.valid(0, 0) = 1;
  disp.values(0, 1) = 0.0;
  disp.valid(0, 1) = 1;
  disp.values(0, 2) = -1.0;
  disp.valid(0, 2) = 1;
  disp.values(1, 0) = 0.05;
  disp.valid(1, 0) = 1;
  const auto out = disparity_to_depth(disp, theta, rig, 0.1);
  EXPECT_TRUE(out.depth.valid(0, 0));
  EXPECT_FALSE(out.depth.valid(0, 1));
  EXPECT_FALSE(out.depth.valid(0, 2));
  EXPECT_FALSE(out.depth.valid(1, 0));
  EXPECT_FALSE(out.depth.valid(1, 1));
  EXPECT_EQ(out.degenerate, 3u);
}

TEST(DepthToDisparity, RoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  CameraRig rig;
  rig.height_px = 64;
  rig.width_px = 32;
  rig.baseline_m = 0.3;
  const auto theta = polar_angle_map(rig);
  DepthMap depth(rig.height_px, rig.width_px);
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    depth.values[i] = std::exp(std::log(0.5) + (std::log(200.0) - std::log(0.5)) * u01(rng));
    depth.valid[i] = (i % 7) != 0;
  }
  const auto disp = depth_to_disparity(depth, theta, rig);
  const auto back = disparity_to_depth(disp, theta, rig).depth;
  double worst = 0.0;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    ASSERT_EQ(back.valid[i], depth.valid[i]);
    if (!depth.valid[i]) continue;
    worst = std::max(worst, std::abs(back.values[i] - depth.values[i]) / depth.values[i]);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(DepthToDisparity, FarLimitAndZero) {
  const double d = depth_to_disparity(1e12, kPi / 3, 0.2);
  EXPECT_GT(d, 0.0);
  EXPECT_LT(d, 1e-12);
  CameraRig rig;
  rig.height_px = 1;
  rig.width_px = 1;
  DepthMap depth(1, 1);
  depth.valid(0, 0) = 1;
  EXPECT_FALSE(depth_to_disparity(depth, polar_angle_map(rig), rig).valid(0, 0));
}

TEST(PixelConversion, DegreesAndPixels) {
  CameraRig rig;
  rig.height_px = 512;
  EXPECT_NEAR(disparity_deg_to_px(1.0, rig), 512.0 / 180.0, 1e-12);
  EXPECT_EQ(disparity_deg_to_px(0.0, rig), 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int i = 0; i < 100; ++i) {
    const double d = u(rng);
    EXPECT_NEAR(disparity_px_to_deg(disparity_deg_to_px(d, rig), rig), d, 1e-12);
  }
  rig.vertical_fov_rad = kPi / 2;
  rig.height_px = 90;
  EXPECT_NEAR(px_per_degree(rig), 1.0, 1e-12);
}

TEST(VerticalWarp, ZeroShiftIsIdentity) {
  const Image img = ramp_image(9, 7, 3);
  const auto out = vertical_warp(img, Grid<double>(9, 7, 0.0));
  EXPECT_EQ(out.image, img);
  for (auto v : out.valid.data()) EXPECT_TRUE(v);
}

TEST(VerticalWarp, IntegerShiftTranslates) {
  const Image img = ramp_image(10, 4, 1);
  const int k = 3;
  const auto out = vertical_warp(img, Grid<double>(10, 4, k));
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 4; ++c) {
      if (r + k < 10) {
        EXPECT_TRUE(out.valid(r, c));
        EXPECT_FLOAT_EQ(out.image.at(r, c, 0), img.at(r + k, c, 0));
      } else {
        EXPECT_FALSE(out.valid(r, c));
      }
    }
  const auto down = vertical_warp(img, Grid<double>(10, 4, -k));
  for (int r = 0; r < k; ++r) EXPECT_FALSE(down.valid(r, 0));
  EXPECT_FLOAT_EQ(down.image.at(5, 1, 0), img.at(2, 1, 0));
}

TEST(VerticalWarp, FractionalShiftInterpolates) {
  const Image img = ramp_image(6, 1, 1);
  const auto out = vertical_warp(img, Grid<double>(6, 1, 0.25));
  EXPECT_NEAR(out.image.at(2, 0, 0), 0.75 * img.at(2, 0, 0) + 0.25 * img.at(3, 0, 0), 1e-6);
  EXPECT_FALSE(out.valid(5, 0));
}

TEST(CircularPad, InversePair) {
  const Image img = ramp_image(5, 12, 3);
  EXPECT_EQ(circular_pad(img, 0), img);
  for (int k : {1, 4, 11}) {
    const Image p = circular_pad(img, k);
    ASSERT_EQ(p.cols, 12 + 2 * k);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < k; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          EXPECT_EQ(p.at(r, c, ch), img.at(r, 12 - k + c, ch));
          EXPECT_EQ(p.at(r, k + 12 + c, ch), img.at(r, c, ch));
        }
    EXPECT_EQ(circular_crop(p, k), img);
  }
  EXPECT_THROW(circular_pad(img, 12), ConfigError);
  EXPECT_THROW(circular_pad(img, -1), ConfigError);
}

TEST(CircularPad, PaperWidth) {
  const Image img = ramp_image(4, 480, 3);
  EXPECT_EQ(circular_crop(circular_pad(img, 64), 64), img);
}
