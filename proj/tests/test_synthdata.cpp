#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "omnistereo/errors.hpp"
#include "omnistereo/geometry.hpp"
#include "omnistereo/synthdata.hpp"

using namespace omnistereo;

namespace {

constexpr double kPi = std::numbers::pi;

CameraRig small_rig() {
  CameraRig rig;
  rig.height_px = 32;
  rig.width_px = 120;
  return rig;
}

// Closed-form nearest positive root of |t v - c|^2 = rho^2 for unit v.
double sphere_hit(const Eigen::Vector3d& v, const Eigen::Vector3d& c, double rho) {
  const double b = v.dot(c);
  const double disc = b * b - c.squaredNorm() + rho * rho;
  if (disc < 0.0) return -1.0;
  const double t = b - std::sqrt(disc);
  return t > 0.0 ? t : -1.0;
}

double photometric_error(const RenderedPair& pair, const CameraRig& rig) {
  const auto shift = disparity_deg_to_px(pair.disparity.values, rig);
  const auto warped = vertical_warp(pair.image_top, shift);
  double sum = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < rig.height_px; ++r)
    for (int c = 0; c < rig.width_px; ++c) {
      if (!warped.valid(r, c) || pair.occlusion(r, c) || !pair.disparity.valid(r, c)) continue;
      for (int ch = 0; ch < 3; ++ch)
        sum += std::abs(warped.image.at(r, c, ch) - pair.image_bottom.at(r, c, ch));
      n += 3;
    }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST(Render, EmptySceneSeesBackground) {
  Scene scene;
  scene.background.radius = 6.5;
  const auto pair = render(scene, small_rig());
  for (std::size_t i = 0; i < pair.depth_bottom.values.size(); ++i) {
    ASSERT_TRUE(pair.depth_bottom.valid[i]);
    EXPECT_NEAR(pair.depth_bottom.values[i], 6.5, 1e-12);
  }
}

TEST(Render, SphereMatchesClosedForm) {
  const CameraRig rig = small_rig();
  Scene scene;
  scene.background.radius = 8.0;
  Sphere s;
  s.center = {3.0, 0.5, 0.0};
  s.radius = 1.2;
  scene.spheres.push_back(s);
  const auto pair = render(scene, rig);
  const auto theta = polar_angle_map(rig);
  int hits = 0;
  for (int r = 0; r < rig.height_px; ++r)
    for (int c = 0; c < rig.width_px; ++c) {
      const double phi = 2 * kPi * (c + 0.5) / rig.width_px;
      const Eigen::Vector3d v(std::sin(theta.theta[r]) * std::cos(phi),
                              std::sin(theta.theta[r]) * std::sin(phi), std::cos(theta.theta[r]));
      const double t = sphere_hit(v, s.center, s.radius);
      if (t < 0) {
        EXPECT_NEAR(pair.depth_bottom.values(r, c), 8.0, 1e-9);
        continue;
      }
      ++hits;
      EXPECT_NEAR(pair.depth_bottom.values(r, c), t, 1e-9);
    }
  EXPECT_GT(hits, 20);
}

TEST(Render, DisparityConsistentWithDepth) {
  const CameraRig rig = small_rig();
  const auto theta = polar_angle_map(rig);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = render(make_random_scene(seed, Difficulty::easy), rig);
    const auto from_depth = depth_to_disparity(pair.depth_bottom, theta, rig);
    for (std::size_t i = 0; i < from_depth.values.size(); ++i) {
      ASSERT_TRUE(pair.disparity.valid[i]);
      EXPECT_GT(pair.disparity.values[i], 0.0);
      if (pair.occlusion[i]) EXPECT_TRUE(pair.disparity.valid[i]);
      if (pair.occlusion[i]) continue;
      EXPECT_NEAR(pair.disparity.values[i], from_depth.values[i], 1e-9);
    }
  }
}

TEST(Render, RotationEquivariance) {
  const CameraRig rig = small_rig();
  const Scene scene = make_random_scene(4, Difficulty::indoor);
  const auto base = render(scene, rig);
  const int k = 7;
  Scene rotated = scene;
  rotated.azimuth_offset += 2 * kPi * k / rig.width_px;
  const auto rolled = render(rotated, rig);
  int mismatched = 0;
  for (int r = 0; r < rig.height_px; ++r)
    for (int c = 0; c < rig.width_px; ++c) {
      const int src = (c - k + rig.width_px) % rig.width_px;
      if (std::abs(rolled.depth_bottom.values(r, c) - base.depth_bottom.values(r, src)) > 1e-9) {
        ++mismatched;
        continue;
      }
      for (int ch = 0; ch < 3; ++ch) {
        EXPECT_NEAR(rolled.image_bottom.at(r, c, ch), base.image_bottom.at(r, src, ch), 1e-5);
        EXPECT_NEAR(rolled.image_top.at(r, c, ch), base.image_top.at(r, src, ch), 1e-5);
      }
      EXPECT_NEAR(rolled.disparity.values(r, c), base.disparity.values(r, src), 1e-9);
    }
  EXPECT_EQ(mismatched, 0);
}

TEST(Render, PhotometricConsistency) {
  CameraRig rig;  // 128 x 480
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto pair = render(make_random_scene(seed, Difficulty::easy), rig);
    EXPECT_LT(photometric_error(pair, rig), 2.0 / 255.0) << "seed " << seed;
  }
}

TEST(RandomScene, DeterministicPerSeed) {
  EXPECT_EQ(make_random_scene(42, Difficulty::indoor), make_random_scene(42, Difficulty::indoor));
  EXPECT_FALSE(make_random_scene(42, Difficulty::indoor) == make_random_scene(43, Difficulty::indoor));
  const CameraRig rig = small_rig();
  const auto a = render(make_random_scene(9, Difficulty::outdoor), rig);
  const auto b = render(make_random_scene(9, Difficulty::outdoor), rig);
  EXPECT_EQ(a.image_top, b.image_top);
  EXPECT_EQ(a.disparity, b.disparity);
}

TEST(RandomScene, ValidForRig) {
  const CameraRig rig = small_rig();
  for (auto diff : {Difficulty::easy, Difficulty::indoor, Difficulty::outdoor})
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      EXPECT_NO_THROW(validate_scene(make_random_scene(seed, diff), rig));
}

TEST(RandomScene, DepthRanges) {
  const CameraRig rig = small_rig();
  double outdoor_max = 0.0, indoor_max = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (double v : render(make_random_scene(seed, Difficulty::outdoor), rig).depth_bottom.values.data())
      outdoor_max = std::max(outdoor_max, v);
    for (double v : render(make_random_scene(seed, Difficulty::indoor), rig).depth_bottom.values.data())
      indoor_max = std::max(indoor_max, v);
  }
  EXPECT_GT(outdoor_max, 20.0);
  EXPECT_LE(indoor_max, 10.0 + 1e-9);
}

TEST(RandomScene, OcclusionsExistAndAreValid) {
  const CameraRig rig = small_rig();
  std::size_t occluded = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pair = render(make_random_scene(seed, Difficulty::indoor), rig);
    for (std::size_t i = 0; i < pair.occlusion.size(); ++i) {
      if (!pair.occlusion[i]) continue;
      ++occluded;
      EXPECT_TRUE(pair.disparity.valid[i]);
    }
  }
  EXPECT_GT(occluded, 0u);
}

TEST(Difficulty, ParseRoundTrip) {
  for (auto d : {Difficulty::easy, Difficulty::indoor, Difficulty::outdoor})
    EXPECT_EQ(parse_difficulty(to_string(d)), d);
  EXPECT_THROW(parse_difficulty("medium"), ConfigError);
}

TEST(Scene, ValidationRejectsBadScenes) {
  const CameraRig rig = small_rig();
  Scene s;
  Sphere sp;
  sp.center = {0, 0, 0.1};
  sp.radius = 0.5;
  s.spheres.push_back(sp);
  EXPECT_THROW(validate_scene(s, rig), ConfigError);
  s.spheres[0].center = {20, 0, 0};
  EXPECT_THROW(validate_scene(s, rig), ConfigError);
}

TEST(SceneFile, RoundTrip) {
  for (auto diff : {Difficulty::easy, Difficulty::indoor, Difficulty::outdoor}) {
    const Scene scene = make_random_scene(17, diff);
    EXPECT_EQ(parse_scene(serialize_scene(scene)), scene);
  }
  const auto path = std::filesystem::temp_directory_path() / "omnistereo_scene_test.txt";
  const Scene scene = make_random_scene(3, Difficulty::indoor);
  save_scene(scene, path.string());
  EXPECT_EQ(load_scene(path.string()), scene);
  std::filesystem::remove(path);
}

TEST(SceneFile, HandWritten) {
  const Scene s = parse_scene(
      "# a sphere in a small room\n"
      "background = radius=9 color=0.5,0.5,0.5 amplitude=0.2 wavelength=2 fade=0 seed=1\n"
      "sphere = center=3,0,0 radius=1 color=0.6,0.4,0.3 amplitude=0.2 wavelength=1 fade=0 seed=2\n"
      "plane = z=-1.5 color=0.4,0.4,0.4 amplitude=0.1 wavelength=0.5 fade=4 seed=3\n");
  ASSERT_EQ(s.spheres.size(), 1u);
  EXPECT_EQ(s.spheres[0].radius, 1.0);
  EXPECT_EQ(s.planes[0].height, -1.5);
  EXPECT_EQ(s.background.radius, 9.0);
  EXPECT_THROW(parse_scene("sphere = center=1,2 radius=1"), ConfigError);
  EXPECT_THROW(parse_scene("teapot = size=1"), ConfigError);
}

TEST(LidarMask, BandAndStride) {
  CameraRig rig;
  const auto m = lidar_sparse_mask(rig);
  const auto theta = polar_angle_map(rig);
  std::size_t n = 0;
  for (int r = 0; r < rig.height_px; ++r)
    for (int c = 0; c < rig.width_px; ++c) {
      if (!m(r, c)) continue;
      ++n;
      EXPECT_EQ(r % 4, 0);
      EXPECT_EQ(c % 2, 0);
      EXPECT_GE(theta.theta[r], 50 * kPi / 180);
      EXPECT_LE(theta.theta[r], 130 * kPi / 180);
    }
  EXPECT_GT(n, 0u);
}
