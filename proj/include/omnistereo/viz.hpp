#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "omnistereo/grid.hpp"

namespace omnistereo {

/// Jet palette: 0 -> dark blue, 0.5 -> green/yellow, 1 -> dark red. Piecewise
/// linear with knots at 1/8, 3/8, 5/8, 7/8, the classic MATLAB definition.
std::array<std::uint8_t, 3> jet(double t);

struct ColorizeOptions {
  bool log_scale = true;
  /// Range of the colormap; defaults to the min/max over valid pixels.
  std::optional<double> vmin;
  std::optional<double> vmax;
};

/// Red means high disparity (near), blue low disparity (far). Invalid pixels
/// are black.
Image colorize_disparity(const DisparityMap& disparity, const ColorizeOptions& opts = {});

}  // namespace omnistereo
