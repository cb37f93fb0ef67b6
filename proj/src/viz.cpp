#include "omnistereo/viz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "omnistereo/errors.hpp"

namespace omnistereo {

std::array<std::uint8_t, 3> jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(4.0 * x), 0.0, 1.0); };
  const double r = ramp(t - 0.75), g = ramp(t - 0.5), b = ramp(t - 0.25);
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  return {q(r), q(g), q(b)};
}

Image colorize_disparity(const DisparityMap& disparity, const ColorizeOptions& opts) {
  const bool log_scale = opts.log_scale;
  auto usable = [&](std::size_t i) {
    return disparity.valid[i] && std::isfinite(disparity.values[i]) && (!log_scale || disparity.values[i] > 0.0);
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < disparity.values.size(); ++i) {
    if (!usable(i)) continue;
    lo = std::min(lo, disparity.values[i]);
    hi = std::max(hi, disparity.values[i]);
  }
  lo = opts.vmin.value_or(lo);
  hi = opts.vmax.value_or(hi);
  if (log_scale && opts.vmin && !(*opts.vmin > 0.0))
    throw ConfigError("colorize_disparity: log scale needs a positive lower bound");

  auto transform = [&](double v) { return log_scale ? std::log(v) : v; };
  const double a = std::isfinite(lo) ? transform(lo) : 0.0;
  const double b = std::isfinite(hi) ? transform(hi) : 1.0;
  const double span = b > a ? b - a : 1.0;

  Image out(disparity.rows(), disparity.cols(), 3, 0.f);
  for (int r = 0; r < disparity.rows(); ++r) {
    for (int c = 0; c < disparity.cols(); ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * disparity.cols() + c;
      if (!usable(i)) continue;
      const auto rgb = jet((transform(disparity.values[i]) - a) / span);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = rgb[ch] / 255.0f;
    }
  }
  return out;
}

}  // namespace omnistereo
