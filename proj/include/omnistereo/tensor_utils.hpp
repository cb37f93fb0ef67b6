#pragma once

#include <torch/torch.h>

#include "omnistereo/grid.hpp"

namespace omnistereo {

/// HxWxC image -> [1, C, H, W] float tensor.
torch::Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const torch::Tensor& chw);

/// Grid -> [1, 1, H, W] tensor of the given dtype.
torch::Tensor grid_to_tensor(const Grid<double>& g, torch::Dtype dtype = torch::kFloat);
torch::Tensor mask_to_tensor(const Mask& m);
/// Accepts [H, W], [1, H, W] or [1, 1, H, W].
Grid<double> tensor_to_grid(const torch::Tensor& t);

/// Horizontal wraparound padding of an NCHW tensor by `pad` columns per side.
torch::Tensor circular_pad_w(const torch::Tensor& x, int pad);
torch::Tensor circular_crop_w(const torch::Tensor& x, int pad);

/// Grows rows (edge replication at the bottom) and columns (wraparound on
/// the right) of an NCHW tensor up to the next multiple. Crop with narrow().
torch::Tensor pad_to_multiple(const torch::Tensor& x, int multiple);

/// Bilinear resize (align_corners = false); identity when the size matches.
torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t rows, int64_t cols);

}  // namespace omnistereo
