#pragma once

#include <torch/torch.h>

#include "omnistereo/metrics.hpp"
#include "omnistereo/model.hpp"
#include "omnistereo/trainer.hpp"

namespace omnistereo {

struct EvalOptions {
  /// Horizontal wraparound padding per side at inference.
  int pad_px = 0;
  /// 0 uses the model's evaluation iteration count.
  int iters = 0;
};

/// Final disparity in degrees, [1, 1, H, W]. Runs in eval mode without
/// gradients and restores the previous training flag.
torch::Tensor predict_disparity(OmniStereoModel& model, const torch::Tensor& top, const torch::Tensor& bottom,
                                const CameraRig& rig, const EvalOptions& opts = {});

/// Dataset-level report against the sparse (and for LRCE the completed)
/// ground truth of every sample.
MetricReport evaluate(OmniStereoModel& model, const PairDataset& data, const EvalOptions& opts = {});

/// Mean absolute disparity error over the completed ground truth, pooled
/// over pixels.
double completed_mae(OmniStereoModel& model, const PairDataset& data, const EvalOptions& opts = {});

}  // namespace omnistereo
