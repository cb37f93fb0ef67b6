#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace omnistereo {

/// Output of the depth backbone for a batch of images.
struct FeatureBundle {
  /// [B, 1, H, W], strictly positive, unitless.
  torch::Tensor relative_depth;
  /// Four decoder maps ordered fine to coarse, each [B, C_k, H/s_k, W/s_k].
  std::array<torch::Tensor, 4> decoder;
  std::array<int, 4> strides{4, 8, 16, 32};

  /// Throws ConfigError when the shapes break the bundle contract for an
  /// input of size rows x cols.
  void validate(int64_t rows, int64_t cols) const;
  /// Splits a bundle computed on a concatenated batch.
  std::pair<FeatureBundle, FeatureBundle> split(int64_t first) const;
};

enum class BackboneKind { standin, external };

std::string to_string(BackboneKind k);
BackboneKind parse_backbone_kind(const std::string& s);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::standin;
  bool encoder_trainable = false;
  bool decoder_trainable = false;
  /// Standin widths.
  int embed_dim = 96;
  int encoder_blocks = 4;
  int decoder_channels = 32;
  /// TorchScript file for the external kind.
  std::string external_path;
  /// Declared decoder channels of an external model (fine to coarse).
  std::array<int, 4> external_channels{256, 256, 256, 256};

  void validate() const;
};

/// Depth backbone with an encoder/decoder parameter split. Images enter as
/// [B, 3, H, W] RGB in [0, 1].
class FeatureExtractor : public torch::nn::Module {
 public:
  virtual FeatureBundle extract(const torch::Tensor& image) = 0;
  virtual std::vector<torch::Tensor> encoder_parameters() = 0;
  virtual std::vector<torch::Tensor> decoder_parameters() = 0;
  virtual std::array<int, 4> decoder_channels() const = 0;
  /// Input sizes must be multiples of this; extract pads otherwise.
  virtual int granularity() const { return 32; }
  /// Parameters that live outside the nn::Module tree (TorchScript weights).
  virtual std::vector<std::pair<std::string, torch::Tensor>> external_named_parameters() { return {}; }

  void set_trainable(bool encoder, bool decoder);
};

/// Small convolutional stand-in for a ViT + DPT depth model: a stride-8 patch
/// embedding with residual blocks (encoder, four taps) and a multi-scale
/// fusion decoder with a relative-depth head.
class StandinBackbone : public FeatureExtractor {
 public:
  explicit StandinBackbone(const BackboneSpec& spec);

  FeatureBundle extract(const torch::Tensor& image) override;
  std::vector<torch::Tensor> encoder_parameters() override;
  std::vector<torch::Tensor> decoder_parameters() override;
  std::array<int, 4> decoder_channels() const override;

 private:
  class Encoder;
  class Decoder;

  BackboneSpec spec_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<Decoder> decoder_;
};

/// Loads a TorchScript depth model. Contract: forward(image [B,3,H,W] in
/// [0,1]) returns a tuple (relative_depth [B,1,H,W], f1, f2, f3, f4) with the
/// four decoder maps at strides 4, 8, 16, 32. Parameters whose names start
/// with "pretrained." or "encoder." form the encoder group; all others the
/// decoder group.
class ExternalBackbone : public FeatureExtractor {
 public:
  explicit ExternalBackbone(const BackboneSpec& spec);

  FeatureBundle extract(const torch::Tensor& image) override;
  std::vector<torch::Tensor> encoder_parameters() override;
  std::vector<torch::Tensor> decoder_parameters() override;
  std::array<int, 4> decoder_channels() const override { return spec_.external_channels; }
  std::vector<std::pair<std::string, torch::Tensor>> external_named_parameters() override;

 private:
  struct Impl;
  BackboneSpec spec_;
  std::shared_ptr<Impl> impl_;
};

std::shared_ptr<FeatureExtractor> make_backbone(const BackboneSpec& spec);

/// Matcher-side view of one image.
struct MatcherFeatures {
  /// Strides 4, 8, 16, 32; channels as configured.
  std::array<torch::Tensor, 4> maps;
  /// [B, C_d, H/4, W/4].
  torch::Tensor depth_encoding;

  std::pair<MatcherFeatures, MatcherFeatures> split(int64_t first) const;
};

struct AdapterConfig {
  std::array<int, 4> out_channels{32, 48, 64, 96};
  int depth_channels = 16;
};

/// Conv stack from a relative-depth map to a 1/4-scale encoding.
class DepthEncoderImpl : public torch::nn::Module {
 public:
  explicit DepthEncoderImpl(int out_channels);
  torch::Tensor forward(const torch::Tensor& relative_depth);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(DepthEncoder);

/// Bilinear resize to strides 4/8/16/32 followed by a per-pixel linear
/// projection to the matcher's channel counts, plus the depth encoder.
class AdapterImpl : public torch::nn::Module {
 public:
  /// Throws ConfigError when `in_channels` cannot feed the configuration.
  AdapterImpl(std::array<int, 4> in_channels, AdapterConfig cfg);

  MatcherFeatures forward(const FeatureBundle& bundle, int64_t rows, int64_t cols);
  torch::Tensor encode_relative_depth(const torch::Tensor& relative_depth);

  /// Identity projections; requires in == out channels per scale.
  void set_identity_projection();
  const AdapterConfig& config() const { return cfg_; }

 private:
  std::array<int, 4> in_channels_;
  AdapterConfig cfg_;
  torch::nn::ModuleList projections_{nullptr};
  DepthEncoder depth_encoder_{nullptr};
};
TORCH_MODULE(Adapter);

}  // namespace omnistereo
