#include "omnistereo/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "omnistereo/errors.hpp"

namespace omnistereo {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

void CameraRig::validate() const {
  if (!(baseline_m > 0.0) || !std::isfinite(baseline_m))
    throw ConfigError("camera rig: baseline must be positive, got " + std::to_string(baseline_m));
  if (height_px <= 0 || width_px <= 0)
    throw ConfigError("camera rig: image dimensions must be positive");
  if (!(vertical_fov_rad > 0.0) || vertical_fov_rad > std::numbers::pi)
    throw ConfigError("camera rig: vertical fov must lie in (0, pi]");
}

AngleMap polar_angle_map(const CameraRig& rig) {
  rig.validate();
  AngleMap map;
  map.theta.resize(rig.height_px);
  for (int row = 0; row < rig.height_px; ++row)
    map.theta[row] = rig.vertical_fov_rad * (row + 0.5) / rig.height_px;
  return map;
}

double disparity_to_depth(double disparity_rad, double theta_b, double baseline_m) {
  return baseline_m * (std::sin(theta_b) / std::tan(disparity_rad) + std::cos(theta_b));
}

double depth_to_disparity(double depth_m, double theta_b, double baseline_m) {
  return std::atan2(baseline_m * std::sin(theta_b), depth_m - baseline_m * std::cos(theta_b));
}

DepthConversion disparity_to_depth(const DisparityMap& disparity, const AngleMap& theta_b,
                                   const CameraRig& rig, double min_disparity_deg) {
  if (static_cast<int>(theta_b.theta.size()) != disparity.rows())
    throw ConfigError("disparity_to_depth: angle map has " +
                      std::to_string(theta_b.theta.size()) + " rows, disparity has " +
                      std::to_string(disparity.rows()));
  DepthConversion out{DepthMap(disparity.rows(), disparity.cols()), 0};
  const double floor_deg = std::max(0.0, min_disparity_deg);
  for (int r = 0; r < disparity.rows(); ++r) {
    for (int c = 0; c < disparity.cols(); ++c) {
      if (!disparity.valid(r, c)) continue;
      const double d = disparity.values(r, c);
      if (!(d > floor_deg) || !std::isfinite(d)) {
        ++out.degenerate;
        continue;
      }
      const double depth = disparity_to_depth(d * kDegToRad, theta_b.theta[r], rig.baseline_m);
      if (!(depth > 0.0) || !std::isfinite(depth)) {
        ++out.degenerate;
        continue;
      }
      out.depth.values(r, c) = depth;
      out.depth.valid(r, c) = 1;
    }
  }
  return out;
}

DisparityMap depth_to_disparity(const DepthMap& depth, const AngleMap& theta_b,
                                const CameraRig& rig) {
  if (static_cast<int>(theta_b.theta.size()) != depth.rows())
    throw ConfigError("depth_to_disparity: angle map / depth row mismatch");
  DisparityMap out(depth.rows(), depth.cols());
  for (int r = 0; r < depth.rows(); ++r) {
    for (int c = 0; c < depth.cols(); ++c) {
      const double z = depth.values(r, c);
      if (!depth.valid(r, c) || !(z > 0.0) || !std::isfinite(z)) continue;
      out.values(r, c) = depth_to_disparity(z, theta_b.theta[r], rig.baseline_m) / kDegToRad;
      out.valid(r, c) = 1;
    }
  }
  return out;
}

double px_per_degree(const CameraRig& rig) {
  return kDegToRad * rig.height_px / rig.vertical_fov_rad;
}

double disparity_deg_to_px(double d_deg, const CameraRig& rig) {
  return d_deg * px_per_degree(rig);
}

double disparity_px_to_deg(double d_px, const CameraRig& rig) {
  return d_px / px_per_degree(rig);
}

Grid<double> disparity_deg_to_px(const Grid<double>& d_deg, const CameraRig& rig) {
  Grid<double> out(d_deg.rows(), d_deg.cols());
  const double k = px_per_degree(rig);
  for (std::size_t i = 0; i < d_deg.size(); ++i) out[i] = d_deg[i] * k;
  return out;
}

WarpResult vertical_warp(const Image& input, const Grid<double>& shift_px) {
  if (shift_px.rows() != input.rows || shift_px.cols() != input.cols)
    throw ConfigError("vertical_warp: shift map does not match image size");
  WarpResult out{Image(input.rows, input.cols, input.channels), Mask(input.rows, input.cols, 0)};
  const int last = input.rows - 1;
  for (int r = 0; r < input.rows; ++r) {
    for (int c = 0; c < input.cols; ++c) {
      const double src = r + shift_px(r, c);
      if (!(src >= 0.0) || src > last) continue;
      const int r0 = static_cast<int>(std::floor(src));
      const int r1 = std::min(r0 + 1, last);
      const float w = static_cast<float>(src - r0);
      for (int ch = 0; ch < input.channels; ++ch) {
        const float a = input.at(r0, c, ch);
        const float b = input.at(r1, c, ch);
        out.image.at(r, c, ch) = w == 0.f ? a : a + w * (b - a);
      }
      out.valid(r, c) = 1;
    }
  }
  return out;
}

Image circular_pad(const Image& img, int pad_cols) {
  if (pad_cols < 0 || pad_cols >= img.cols)
    throw ConfigError("circular_pad: pad must lie in [0, width), got " + std::to_string(pad_cols));
  const int w = img.cols;
  Image out(img.rows, w + 2 * pad_cols, img.channels);
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      const int src = ((c - pad_cols) % w + w) % w;
      for (int ch = 0; ch < img.channels; ++ch) out.at(r, c, ch) = img.at(r, src, ch);
    }
  }
  return out;
}

Image circular_crop(const Image& padded, int pad_cols) {
  const int w = padded.cols - 2 * pad_cols;
  if (pad_cols < 0 || w <= 0) throw ConfigError("circular_crop: pad larger than image");
  Image out(padded.rows, w, padded.channels);
  for (int r = 0; r < padded.rows; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < padded.channels; ++ch)
        out.at(r, c, ch) = padded.at(r, c + pad_cols, ch);
  return out;
}

}  // namespace omnistereo
