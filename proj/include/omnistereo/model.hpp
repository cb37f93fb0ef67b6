#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "omnistereo/backbone.hpp"
#include "omnistereo/geometry.hpp"
#include "omnistereo/matcher.hpp"

namespace omnistereo {

/// Trainable parameter sets. Short names FE, FD, AD, OS.
enum class ParamGroup { backbone_encoder, backbone_decoder, adapters, matcher };

std::string to_string(ParamGroup g);
/// Accepts "backbone-encoder"/"FE", "backbone-decoder"/"FD", "adapters"/"AD",
/// "matcher"/"OS".
ParamGroup parse_param_group(const std::string& s);
/// "FD+OS" -> {backbone_decoder, matcher}. "OS" implies the adapters, which
/// are part of the matching head as far as ablations are concerned.
std::set<ParamGroup> parse_param_groups(const std::string& spec);
std::string format_param_groups(const std::set<ParamGroup>& groups);

struct ModelConfig {
  BackboneSpec backbone;
  AdapterConfig adapter;
  MatcherConfig matcher;

  /// Throws ConfigError when the adapter output does not feed the matcher.
  void validate() const;
  /// Everything that determines parameter shapes.
  std::string architecture_signature() const;
};

/// Desk-scale defaults: 32 px disparity range, standin backbone.
ModelConfig desk_model_config();

struct DisparitySequence {
  /// N + 1 full-resolution maps in degrees; [0] is the upsampled initial
  /// estimate.
  std::vector<torch::Tensor> predictions;
  /// Initial estimate on the padded 1/4 grid.
  torch::Tensor initial_coarse;

  int iterations() const { return static_cast<int>(predictions.size()) - 1; }
  const torch::Tensor& final() const { return predictions.back(); }
};

struct ForwardOptions {
  /// 0 selects train_iters in training mode and eval_iters otherwise.
  int iters = 0;
  /// Horizontal wraparound padding applied before and removed after.
  int circular_pad_px = 0;
  bool all_iterates = true;
};

class OmniStereoModelImpl : public torch::nn::Module {
 public:
  explicit OmniStereoModelImpl(ModelConfig cfg);

  /// Images are [B, 3, H, W] RGB in [0, 1] and must match the rig.
  DisparitySequence forward(const torch::Tensor& top, const torch::Tensor& bottom, const CameraRig& rig,
                            const ForwardOptions& opts = {});

  std::vector<torch::Tensor> parameters_of(ParamGroup g);
  /// requires_grad is set on exactly the listed groups.
  void set_trainable(const std::set<ParamGroup>& groups);
  void set_clamp_range(double min_deg, double max_deg);

  /// Every parameter including weights held outside the module tree.
  std::vector<std::pair<std::string, torch::Tensor>> named_state();

  FeatureExtractor& backbone() { return *backbone_; }
  Adapter& adapter() { return adapter_; }
  Matcher& matcher() { return matcher_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  std::shared_ptr<FeatureExtractor> backbone_;
  Adapter adapter_{nullptr};
  Matcher matcher_{nullptr};
};
TORCH_MODULE(OmniStereoModel);

}  // namespace omnistereo
