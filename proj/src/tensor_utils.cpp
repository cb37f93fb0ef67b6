#include "omnistereo/tensor_utils.hpp"

#include "omnistereo/errors.hpp"

namespace omnistereo {

namespace F = torch::nn::functional;

torch::Tensor image_to_tensor(const Image& img) {
  auto t = torch::from_blob(const_cast<float*>(img.data.data()), {img.rows, img.cols, img.channels},
                            torch::kFloat)
               .clone();
  return t.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

Image tensor_to_image(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat);
  if (t.dim() == 4) t = t.squeeze(0);
  TORCH_CHECK(t.dim() == 3, "tensor_to_image: expected [C, H, W]");
  t = t.permute({1, 2, 0}).contiguous();
  Image img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  std::memcpy(img.data.data(), t.data_ptr<float>(), img.data.size() * sizeof(float));
  return img;
}

torch::Tensor grid_to_tensor(const Grid<double>& g, torch::Dtype dtype) {
  auto t = torch::from_blob(const_cast<double*>(g.data().data()), {1, 1, g.rows(), g.cols()},
                            torch::kDouble)
               .clone();
  return t.to(dtype);
}

torch::Tensor mask_to_tensor(const Mask& m) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(m.data().data()), {1, 1, m.rows(), m.cols()},
                            torch::kUInt8)
               .clone();
  return t.to(torch::kBool);
}

Grid<double> tensor_to_grid(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
  while (d.dim() > 2) {
    TORCH_CHECK(d.size(0) == 1, "tensor_to_grid: leading dimensions must be 1");
    d = d.squeeze(0);
  }
  TORCH_CHECK(d.dim() == 2, "tensor_to_grid: expected a 2D map");
  Grid<double> g(static_cast<int>(d.size(0)), static_cast<int>(d.size(1)));
  std::memcpy(g.data().data(), d.data_ptr<double>(), g.size() * sizeof(double));
  return g;
}

torch::Tensor circular_pad_w(const torch::Tensor& x, int pad) {
  if (pad == 0) return x;
  if (pad < 0 || pad >= x.size(-1))
    throw ConfigError("circular padding must lie in [0, width), got " + std::to_string(pad));
  const int64_t w = x.size(-1);
  return torch::cat({x.narrow(-1, w - pad, pad), x, x.narrow(-1, 0, pad)}, -1);
}

torch::Tensor circular_crop_w(const torch::Tensor& x, int pad) {
  if (pad == 0) return x;
  return x.narrow(-1, pad, x.size(-1) - 2 * pad);
}

torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple) {
  const int64_t rows = x.size(-2), cols = x.size(-1);
  const int64_t pr = (multiple - rows % multiple) % multiple;
  const int64_t pc = (multiple - cols % multiple) % multiple;
  torch::Tensor y = x;
  if (pc > 0) {
    std::vector<torch::Tensor> parts{y};
    for (int64_t left = pc; left > 0; left -= std::min(left, cols))
      parts.push_back(y.narrow(-1, 0, std::min(left, cols)));
    y = torch::cat(parts, -1);
  }
  if (pr > 0) {
    auto sizes = y.sizes().vec();
    sizes[sizes.size() - 2] = pr;
    y = torch::cat({y, y.narrow(-2, rows - 1, 1).expand(sizes)}, -2);
  }
  return y;
}

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t rows, int64_t cols) {
  if (x.size(-2) == rows && x.size(-1) == cols) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{rows, cols})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace omnistereo
