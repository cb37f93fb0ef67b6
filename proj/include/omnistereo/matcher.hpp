#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "omnistereo/backbone.hpp"

namespace omnistereo {

struct MatcherConfig {
  int max_disp_px = 128;
  int groups = 8;
  int match_channels = 48;
  int corr_levels = 2;
  int corr_radius = 2;
  int hidden_dim = 32;
  int gru_levels = 3;
  int train_iters = 8;
  int eval_iters = 16;
  /// Clamp range of every emitted disparity, degrees.
  double clamp_min_deg = 0.0;
  double clamp_max_deg = 60.0;
  /// Must equal the adapter's output channels.
  std::array<int, 4> feature_channels{32, 48, 64, 96};
  int depth_channels = 16;

  void validate() const;
  /// Number of shifts at 1/4 resolution.
  int coarse_disparities() const { return max_disp_px / 4; }
};

/// Group-wise correlation over vertical shifts:
///   volume[b, g, s, y, x] = mean_{c in g} f_b[b, c, y, x] * f_t[b, c, y + s, x]
/// and zero where y + s falls outside the map (valid = false there).
struct CostVolume4D {
  torch::Tensor volume;  // [B, G, D, h, w]
  torch::Tensor valid;   // [1, 1, D, h, 1], bool
};

CostVolume4D build_gwc_volume(const torch::Tensor& f_bottom, const torch::Tensor& f_top, int disparities,
                              int groups);

/// Multi-level shift pyramid of a [B, D, h, w] volume; level l averages pairs
/// of shifts of level l-1.
struct CorrelationPyramid {
  std::vector<torch::Tensor> levels;  // level l: [B, D_l, h, w]
};

CorrelationPyramid build_pyramid(const torch::Tensor& volume, int levels);

/// Samples each pyramid level at (d / 2^l + k), k in [-radius, radius], with
/// linear interpolation along the shift axis and zeros outside. `disp_px` is
/// [B, 1, h, w] in coarse-grid pixels and is treated as a constant.
/// Returns [B, levels * (2 radius + 1), h, w].
torch::Tensor lookup_pyramid(const CorrelationPyramid& pyramid, const torch::Tensor& disp_px, int radius);

/// Expected shift index under a softmax over dim 1: [B, D, h, w] -> [B, 1, h, w].
torch::Tensor soft_argmax(const torch::Tensor& volume);

/// Convex upsampling by `factor`: every fine pixel is a softmax-weighted
/// combination of its 3x3 coarse neighborhood. Values are not rescaled.
/// Neighborhoods wrap horizontally and replicate vertically at the borders.
/// `mask_logits` is [B, 9 * factor^2, h, w].
torch::Tensor convex_upsample(const torch::Tensor& coarse, const torch::Tensor& mask_logits, int factor);
/// The normalized weights used above, [B, 9, factor, factor, h, w].
torch::Tensor convex_weights(const torch::Tensor& mask_logits, int factor);

/// Lightweight 3D hourglass over (D, h, w) with excitation from the bottom
/// image's adapted features at every scale. Output [B, D, h, w].
class RegularizerImpl : public torch::nn::Module {
 public:
  RegularizerImpl(int groups, std::array<int, 4> feature_channels);
  torch::Tensor forward(const torch::Tensor& volume, const MatcherFeatures& bottom);

 private:
  torch::nn::Sequential stem_{nullptr}, down1_{nullptr}, down2_{nullptr}, down3_{nullptr};
  torch::nn::Sequential up2_{nullptr}, up1_{nullptr}, up0_{nullptr};
  torch::nn::Sequential agg2_{nullptr}, agg1_{nullptr}, agg0_{nullptr}, out_{nullptr};
  /// Excitation at 1/4, 1/8, 1/16, 1/32 on the way down, 1/16 and 1/8 up.
  torch::nn::ModuleList excite_{nullptr};
};
TORCH_MODULE(Regularizer);

/// Multi-scale context from the bottom image.
struct ContextFeatures {
  /// Initial hidden states at 1/4, 1/8, 1/16 (first gru_levels entries).
  std::vector<torch::Tensor> hidden;
  /// Per-level (z, r, q) context biases of the GRU gates.
  std::vector<std::array<torch::Tensor, 3>> gates;
};

class ContextNetImpl : public torch::nn::Module {
 public:
  ContextNetImpl(int hidden_dim, int levels);
  ContextFeatures forward(const torch::Tensor& image);

 private:
  int levels_;
  torch::nn::Sequential stem4_{nullptr}, down8_{nullptr}, down16_{nullptr};
  torch::nn::ModuleList heads_{nullptr}, gates_{nullptr};
  int hidden_dim_;
};
TORCH_MODULE(ContextNet);

class ConvGruImpl : public torch::nn::Module {
 public:
  ConvGruImpl(int hidden_dim, int input_dim);
  torch::Tensor forward(const torch::Tensor& h, const std::array<torch::Tensor, 3>& gates,
                        const std::vector<torch::Tensor>& inputs);

 private:
  torch::nn::Conv2d convz_{nullptr}, convr_{nullptr}, convq_{nullptr};
};
TORCH_MODULE(ConvGru);

/// Per-iteration state of the recurrent refinement.
struct RefineState {
  std::vector<torch::Tensor> hidden;  // per GRU level, fine to coarse
  torch::Tensor disparity;            // [B, 1, h, w], degrees
  torch::Tensor mask_features;        // from the finest hidden state
};

struct MatcherOutput {
  /// Soft-argmax estimate at 1/4 resolution, degrees.
  torch::Tensor initial_coarse;
  /// Refined estimates at 1/4 resolution, one per iteration.
  std::vector<torch::Tensor> coarse;
  /// Full-resolution sequence: [0] is the bilinearly upsampled initial
  /// estimate, [i] the guided upsampling of iteration i. With
  /// `all_iterates == false` only [0] and the final iterate are kept.
  std::vector<torch::Tensor> predictions;
};

class MatcherImpl : public torch::nn::Module {
 public:
  explicit MatcherImpl(MatcherConfig cfg);

  MatcherOutput forward(const MatcherFeatures& bottom, const MatcherFeatures& top, const torch::Tensor& bottom_image,
                        double px_per_deg, int iters, bool all_iterates = true);

  /// Matching descriptors at 1/4 from the adapted map and the depth encoding.
  torch::Tensor matching_features(const MatcherFeatures& f);
  torch::Tensor regularize(const CostVolume4D& volume, const MatcherFeatures& bottom);
  /// Soft-argmax of the regularized volume, converted to degrees and clamped.
  torch::Tensor initial_disparity(const torch::Tensor& regularized, double px_per_deg);
  ContextFeatures context_features(const torch::Tensor& bottom_image);
  RefineState init_state(const ContextFeatures& ctx, const torch::Tensor& initial);
  /// One recurrent update. `injected_delta` (degrees) is added to the
  /// predicted delta before clamping.
  void refine(RefineState& state, const CorrelationPyramid& geometry, const CorrelationPyramid& correlation,
              const ContextFeatures& ctx, double px_per_deg, const torch::Tensor& injected_delta = {});
  torch::Tensor upsample_guided(const torch::Tensor& coarse, const torch::Tensor& mask_features,
                                const torch::Tensor& depth_encoding);

  const MatcherConfig& config() const { return cfg_; }
  void set_clamp_range(double min_deg, double max_deg);
  /// Clamps to the configured range; the gradient passes through unchanged.
  torch::Tensor clamp(const torch::Tensor& d) const;

 private:
  MatcherConfig cfg_;
  torch::nn::Sequential match_{nullptr};
  Regularizer regularizer_{nullptr};
  ContextNet context_{nullptr};
  torch::nn::Sequential motion_corr_{nullptr}, motion_disp_{nullptr}, motion_out_{nullptr};
  ConvGru gru04_{nullptr}, gru08_{nullptr}, gru16_{nullptr};
  torch::nn::Sequential delta_head_{nullptr}, mask_feat_head_{nullptr}, mask_head_{nullptr};
};
TORCH_MODULE(Matcher);

}  // namespace omnistereo
