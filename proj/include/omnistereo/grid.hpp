#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace omnistereo {

/// Dense row-major 2D array with value semantics.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Grid: negative dimensions");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using Mask = Grid<std::uint8_t>;

/// Per-pixel scalar field with an explicit validity mask. The tag keeps
/// disparity (degrees) and depth (meters) maps from being mixed up.
template <typename Tag>
struct MaskedMap {
  Grid<double> values;
  Mask valid;

  MaskedMap() = default;
  MaskedMap(int rows, int cols) : values(rows, cols, 0.0), valid(rows, cols, 0) {}

  int rows() const { return values.rows(); }
  int cols() const { return values.cols(); }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid.data()) n += v ? 1 : 0;
    return n;
  }

  bool operator==(const MaskedMap&) const = default;
};

struct DisparityTag {};
struct DepthTag {};

/// Angular disparity in degrees.
using DisparityMap = MaskedMap<DisparityTag>;
/// Metric depth in meters, measured from the bottom camera center.
using DepthMap = MaskedMap<DepthTag>;

/// Interleaved HxWxC float image, values nominally in [0, 1].
struct Image {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int r, int c, int ch, float fill = 0.f)
      : rows(r), cols(c), channels(ch), data(static_cast<std::size_t>(r) * c * ch, fill) {}

  float& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
  }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * cols + c) * channels + ch];
  }

  bool operator==(const Image&) const = default;
};

}  // namespace omnistereo
