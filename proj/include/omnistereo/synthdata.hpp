#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "omnistereo/geometry.hpp"
#include "omnistereo/grid.hpp"

namespace omnistereo {

/// Smooth procedural albedo: a few random plane waves per color channel,
/// evaluated in the primitive's local frame. Waves are derived from `seed`.
struct Texture {
  Eigen::Vector3d base_color{0.5, 0.5, 0.5};
  double amplitude = 0.15;
  double wavelength_m = 1.0;
  /// Amplitude falls off as exp(-(rho / fade)^2) with horizontal distance rho
  /// from the rig axis; 0 disables. Keeps far grazing surfaces from aliasing.
  double fade_radius_m = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const Texture&) const = default;
};

struct Sphere {
  Eigen::Vector3d center{0, 0, 0};
  double radius = 1.0;
  Texture texture;
  bool operator==(const Sphere&) const = default;
};

/// Box rotated by `yaw` about the vertical axis through its center.
struct Box {
  Eigen::Vector3d center{0, 0, 0};
  Eigen::Vector3d half_extent{0.5, 0.5, 0.5};
  double yaw = 0.0;
  Texture texture;
  bool operator==(const Box&) const = default;
};

/// Infinite horizontal plane z = height (floor or ceiling).
struct Plane {
  double height = -1.2;
  Texture texture;
  bool operator==(const Plane&) const = default;
};

/// Far sphere centered on the bottom camera; every ray hits it.
struct Background {
  double radius = 8.0;
  Texture texture;
  bool operator==(const Background&) const = default;
};

struct Scene {
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  std::vector<Plane> planes;
  Background background;
  /// Rotation of the whole scene about the vertical axis, radians.
  double azimuth_offset = 0.0;

  bool operator==(const Scene&) const = default;
};

enum class Difficulty { easy, indoor, outdoor };

Difficulty parse_difficulty(const std::string& name);
std::string to_string(Difficulty d);

struct RenderedPair {
  Image image_top;
  Image image_bottom;
  DepthMap depth_bottom;
  DisparityMap disparity;
  /// Visible from the bottom camera, hidden from the top one.
  Mask occlusion;
};

/// Throws ConfigError if a primitive contains a camera center or leaves the
/// background sphere.
void validate_scene(const Scene& scene, const CameraRig& rig);

/// Ambient-only ray cast of both cameras. Depth is the Euclidean hit distance
/// from the bottom center; disparity is theta_t - theta_b of the hit point in
/// degrees.
RenderedPair render(const Scene& scene, const CameraRig& rig);

/// Deterministic per seed. `easy` and `indoor` span roughly 1-10 m, `outdoor`
/// reaches 100 m.
Scene make_random_scene(std::uint64_t seed, Difficulty difficulty, double baseline_m = 0.2);

/// Plain-text scene description, one primitive per line:
///
///   azimuth_offset = <rad>
///   background = radius=<m> <texture>
///   sphere = center=x,y,z radius=<m> <texture>
///   box = center=x,y,z half=hx,hy,hz yaw=<rad> <texture>
///   plane = z=<m> <texture>
///
/// where <texture> is `color=r,g,b amplitude=a wavelength=<m> fade=<m> seed=<n>`.
std::string serialize_scene(const Scene& scene);
Scene parse_scene(const std::string& text, const std::string& origin = "<scene>");
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

/// LiDAR-like subsampling of a dense mask: every fourth row inside the
/// 50..130 degree polar band, every second column.
Mask lidar_sparse_mask(const CameraRig& rig);

struct DatasetManifest;

/// Writes the pairs as one split of a dataset (see dataio.hpp for the layout)
/// and returns the manifest that was saved.
DatasetManifest write_dataset(const std::vector<RenderedPair>& pairs, const CameraRig& rig,
                              const std::string& root, const std::string& split,
                              double disparity_scale = 1000.0);

}  // namespace omnistereo
