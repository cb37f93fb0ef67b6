#pragma once

#include <numbers>
#include <vector>

#include "omnistereo/grid.hpp"

namespace omnistereo {

/// Vertically stacked pair of equirectangular cameras. The bottom camera sits
/// at the origin, the top camera at +baseline_m on the vertical axis. Polar
/// angles are measured from the zenith, so image row 0 looks up.
struct CameraRig {
  double baseline_m = 0.2;
  int height_px = 128;
  int width_px = 480;
  double vertical_fov_rad = std::numbers::pi;

  /// Throws ConfigError when any invariant is violated.
  void validate() const;
  bool operator==(const CameraRig&) const = default;
};

/// Per-row polar angle in radians.
struct AngleMap {
  std::vector<double> theta;
};

/// theta(row) = fov * (row + 0.5) / H. Shared by both cameras (each in its own
/// frame).
AngleMap polar_angle_map(const CameraRig& rig);

// Scalar forms. Angles in radians, lengths in meters.
double disparity_to_depth(double disparity_rad, double theta_b, double baseline_m);
double depth_to_disparity(double depth_m, double theta_b, double baseline_m);

struct DepthConversion {
  DepthMap depth;
  /// Valid input pixels whose disparity was at or below the minimum.
  std::size_t degenerate = 0;
};

/// Per-pixel r_b = B (sin(theta_b) / tan(d) + cos(theta_b)) with d in degrees.
/// Pixels with d <= min_disparity_deg (and d <= 0 always) come out invalid and
/// are counted as degenerate.
DepthConversion disparity_to_depth(const DisparityMap& disparity, const AngleMap& theta_b,
                                   const CameraRig& rig, double min_disparity_deg = 0.0);

/// Inverse of the above: d = atan2(B sin(theta_b), r_b - B cos(theta_b)).
/// Non-positive or non-finite depths come out invalid.
DisparityMap depth_to_disparity(const DepthMap& depth, const AngleMap& theta_b,
                                const CameraRig& rig);

/// Pixels per degree of polar angle for the rig. Single authority for the
/// degree/pixel conversion.
double px_per_degree(const CameraRig& rig);
double disparity_deg_to_px(double d_deg, const CameraRig& rig);
double disparity_px_to_deg(double d_px, const CameraRig& rig);
Grid<double> disparity_deg_to_px(const Grid<double>& d_deg, const CameraRig& rig);

struct WarpResult {
  Image image;
  Mask valid;
};

/// Aligns the top image with the bottom one: output(r, c) = input(r + shift(r, c), c)
/// with linear interpolation along the column. Positive shifts move content
/// upward. Samples outside [0, rows - 1] are marked invalid; there is no
/// vertical wraparound.
WarpResult vertical_warp(const Image& input, const Grid<double>& shift_px);

/// Horizontal wraparound padding: pad_cols columns from the opposite edge on
/// each side. Requires 0 <= pad_cols < width.
Image circular_pad(const Image& img, int pad_cols);
Image circular_crop(const Image& padded, int pad_cols);

}  // namespace omnistereo
