#include "omnistereo/backbone.hpp"

#include <filesystem>
#include <optional>

#include <torch/script.h>

#include "omnistereo/errors.hpp"
#include "omnistereo/tensor_utils.hpp"

namespace omnistereo {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2dOptions conv(int in, int out, int k, int stride = 1) {
  return nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2);
}

bool any_requires_grad(const std::vector<torch::Tensor>& params) {
  for (const auto& p : params)
    if (p.requires_grad()) return true;
  return false;
}

torch::Tensor normalize_rgb(const torch::Tensor& x) {
  static const auto mean = torch::tensor({0.485f, 0.456f, 0.406f}).view({1, 3, 1, 1});
  static const auto std = torch::tensor({0.229f, 0.224f, 0.225f}).view({1, 3, 1, 1});
  return (x - mean.to(x.options())) / std.to(x.options());
}

void check_image(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3)
    throw ConfigError("backbone: expected images shaped [B, 3, H, W]");
}

FeatureBundle crop_bundle(FeatureBundle b, int64_t rows, int64_t cols) {
  b.relative_depth = b.relative_depth.narrow(2, 0, rows).narrow(3, 0, cols);
  for (int k = 0; k < 4; ++k) {
    const int s = b.strides[k];
    b.decoder[k] = b.decoder[k].narrow(2, 0, (rows + s - 1) / s).narrow(3, 0, (cols + s - 1) / s);
  }
  return b;
}

// x + conv(act(conv(act(x))))
class ResidualUnitImpl : public nn::Module {
 public:
  ResidualUnitImpl(int channels, bool gelu) : gelu_(gelu) {
    conv1_ = register_module("conv1", nn::Conv2d(conv(channels, channels, 3)));
    conv2_ = register_module("conv2", nn::Conv2d(conv(channels, channels, 3)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto act = [&](const torch::Tensor& t) { return gelu_ ? F::gelu(t) : torch::relu(t); };
    return x + conv2_(act(conv1_(act(x))));
  }

 private:
  bool gelu_;
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualUnit);

class FusionBlockImpl : public nn::Module {
 public:
  explicit FusionBlockImpl(int channels) {
    skip_ = register_module("skip", ResidualUnit(channels, false));
    out_ = register_module("out", ResidualUnit(channels, false));
    project_ = register_module("project", nn::Conv2d(conv(channels, channels, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& coarser) {
    auto y = skip_(x);
    if (coarser.defined()) y = y + resize_bilinear(coarser, x.size(2), x.size(3));
    return project_(out_(y));
  }

 private:
  ResidualUnit skip_{nullptr}, out_{nullptr};
  nn::Conv2d project_{nullptr};
};
TORCH_MODULE(FusionBlock);

}  // namespace

// --------------------------------------------------------------- bundle

void FeatureBundle::validate(int64_t rows, int64_t cols) const {
  if (!relative_depth.defined() || relative_depth.dim() != 4 || relative_depth.size(1) != 1 ||
      relative_depth.size(2) != rows || relative_depth.size(3) != cols)
    throw ConfigError("feature bundle: relative depth must be [B, 1, H, W]");
  if (!(relative_depth.min().item<double>() > 0.0))
    throw ConfigError("feature bundle: relative depth must be strictly positive");
  for (int k = 0; k < 4; ++k) {
    const auto& m = decoder[k];
    const int s = strides[k];
    if (!m.defined() || m.dim() != 4 || m.size(0) != relative_depth.size(0))
      throw ConfigError("feature bundle: decoder map " + std::to_string(k) + " is malformed");
    if (m.size(2) != (rows + s - 1) / s || m.size(3) != (cols + s - 1) / s)
      throw ConfigError("feature bundle: decoder map " + std::to_string(k) + " does not tile the image at stride " +
                        std::to_string(s));
  }
}

std::pair<FeatureBundle, FeatureBundle> FeatureBundle::split(int64_t first) const {
  FeatureBundle a, b;
  const int64_t rest = relative_depth.size(0) - first;
  a.relative_depth = relative_depth.narrow(0, 0, first);
  b.relative_depth = relative_depth.narrow(0, first, rest);
  for (int k = 0; k < 4; ++k) {
    a.decoder[k] = decoder[k].narrow(0, 0, first);
    b.decoder[k] = decoder[k].narrow(0, first, rest);
  }
  a.strides = b.strides = strides;
  return {a, b};
}

std::string to_string(BackboneKind k) { return k == BackboneKind::standin ? "standin" : "external"; }

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "standin") return BackboneKind::standin;
  if (s == "external") return BackboneKind::external;
  throw ConfigError("unknown backbone kind '" + s + "' (expected standin or external)");
}

void BackboneSpec::validate() const {
  if (kind == BackboneKind::standin) {
    if (embed_dim <= 0 || encoder_blocks <= 0 || decoder_channels < 2)
      throw ConfigError("backbone: standin widths must be positive");
  } else {
    if (external_path.empty()) throw ConfigError("backbone: external kind needs a TorchScript path");
    for (int c : external_channels)
      if (c <= 0) throw ConfigError("backbone: external channels must be positive");
  }
}

void FeatureExtractor::set_trainable(bool encoder, bool decoder) {
  for (auto& p : encoder_parameters()) p.set_requires_grad(encoder);
  for (auto& p : decoder_parameters()) p.set_requires_grad(decoder);
}

// --------------------------------------------------------------- standin

class StandinBackbone::Encoder : public nn::Module {
 public:
  explicit Encoder(const BackboneSpec& spec) {
    patch_embed_ = register_module("patch_embed", nn::Conv2d(nn::Conv2dOptions(3, spec.embed_dim, 8).stride(8)));
    blocks_ = register_module("blocks", nn::ModuleList());
    for (int i = 0; i < spec.encoder_blocks; ++i) blocks_->push_back(ResidualUnit(spec.embed_dim, true));
    const int n = spec.encoder_blocks;
    for (int k = 0; k < 4; ++k) tap_after_[k] = std::max(0, (k + 1) * n / 4 - 1);
  }

  std::vector<torch::Tensor> forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    auto h = patch_embed_(x);
    for (std::size_t i = 0; i < blocks_->size(); ++i) {
      h = blocks_[i]->as<ResidualUnitImpl>()->forward(h);
      outs.push_back(h);
    }
    return {outs[tap_after_[0]], outs[tap_after_[1]], outs[tap_after_[2]], outs[tap_after_[3]]};
  }

 private:
  nn::Conv2d patch_embed_{nullptr};
  nn::ModuleList blocks_{nullptr};
  std::array<int, 4> tap_after_{};
};

class StandinBackbone::Decoder : public nn::Module {
 public:
  explicit Decoder(const BackboneSpec& spec) {
    const int e = spec.embed_dim, f = spec.decoder_channels;
    r4_ = register_module("reassemble4", nn::Sequential(nn::Conv2d(conv(e, f, 1)),
                                                         nn::ConvTranspose2d(nn::ConvTranspose2dOptions(f, f, 2).stride(2))));
    r8_ = register_module("reassemble8", nn::Sequential(nn::Conv2d(conv(e, f, 1))));
    r16_ = register_module("reassemble16", nn::Sequential(nn::Conv2d(conv(e, f, 3, 2))));
    r32_ = register_module("reassemble32", nn::Sequential(nn::Conv2d(conv(e, f, 3, 2)), nn::ReLU(),
                                                           nn::Conv2d(conv(f, f, 3, 2))));
    for (int k = 0; k < 4; ++k) fuse_[k] = register_module("fuse" + std::to_string(k), FusionBlock(f));
    head_in_ = register_module("head_in", nn::Conv2d(conv(f, f / 2, 3)));
    head_out_ = register_module("head_out", nn::Sequential(nn::Conv2d(conv(f / 2, 8, 3)), nn::ReLU(),
                                                           nn::Conv2d(conv(8, 1, 1))));
  }

  FeatureBundle forward(const std::vector<torch::Tensor>& taps, int64_t rows, int64_t cols) {
    const auto l4 = r4_->forward(taps[0]);
    const auto l8 = r8_->forward(taps[1]);
    const auto l16 = r16_->forward(taps[2]);
    const auto l32 = r32_->forward(taps[3]);
    const auto p32 = fuse_[3]->forward(l32, torch::Tensor());
    const auto p16 = fuse_[2]->forward(l16, p32);
    const auto p8 = fuse_[1]->forward(l8, p16);
    const auto p4 = fuse_[0]->forward(l4, p8);
    FeatureBundle b;
    b.decoder = {p4, p8, p16, p32};
    const auto up = resize_bilinear(head_in_(p4), rows, cols);
    b.relative_depth = F::softplus(head_out_->forward(up)) + 1e-4;
    return b;
  }

 private:
  nn::Sequential r4_{nullptr}, r8_{nullptr}, r16_{nullptr}, r32_{nullptr};
  std::array<FusionBlock, 4> fuse_{FusionBlock(nullptr), FusionBlock(nullptr), FusionBlock(nullptr),
                                   FusionBlock(nullptr)};
  nn::Conv2d head_in_{nullptr};
  nn::Sequential head_out_{nullptr};
};

StandinBackbone::StandinBackbone(const BackboneSpec& spec) : spec_(spec) {
  spec_.validate();
  encoder_ = register_module("encoder", std::make_shared<Encoder>(spec_));
  decoder_ = register_module("decoder", std::make_shared<Decoder>(spec_));
  set_trainable(spec_.encoder_trainable, spec_.decoder_trainable);
}

std::vector<torch::Tensor> StandinBackbone::encoder_parameters() { return encoder_->parameters(); }
std::vector<torch::Tensor> StandinBackbone::decoder_parameters() { return decoder_->parameters(); }

std::array<int, 4> StandinBackbone::decoder_channels() const {
  const int f = spec_.decoder_channels;
  return {f, f, f, f};
}

FeatureBundle StandinBackbone::extract(const torch::Tensor& image) {
  check_image(image);
  const int64_t rows = image.size(2), cols = image.size(3);
  const auto x = normalize_rgb(pad_to_multiple(image, granularity()));

  const bool encoder_grad = any_requires_grad(encoder_parameters());
  const bool decoder_grad = encoder_grad || any_requires_grad(decoder_parameters());
  std::vector<torch::Tensor> taps;
  {
    std::optional<torch::NoGradGuard> guard;
    if (!encoder_grad) guard.emplace();
    taps = encoder_->forward(x);
  }
  FeatureBundle b;
  {
    std::optional<torch::NoGradGuard> guard;
    if (!decoder_grad) guard.emplace();
    b = decoder_->forward(taps, x.size(2), x.size(3));
  }
  if (x.size(2) != rows || x.size(3) != cols) b = crop_bundle(std::move(b), rows, cols);
  return b;
}

// -------------------------------------------------------------- external

struct ExternalBackbone::Impl {
  torch::jit::Module module;
};

namespace {
bool is_encoder_name(const std::string& name) {
  return name.rfind("pretrained.", 0) == 0 || name.rfind("encoder.", 0) == 0;
}
}  // namespace

ExternalBackbone::ExternalBackbone(const BackboneSpec& spec) : spec_(spec), impl_(std::make_shared<Impl>()) {
  spec_.validate();
  if (!std::filesystem::exists(spec_.external_path))
    throw DataError("external backbone: TorchScript file '" + spec_.external_path +
                    "' not found; export the depth model with torch.jit.script/trace or use backbone = standin");
  try {
    impl_->module = torch::jit::load(spec_.external_path);
  } catch (const c10::Error& e) {
    throw DataError("external backbone: cannot load '" + spec_.external_path + "': " + e.what_without_backtrace());
  }
  set_trainable(spec_.encoder_trainable, spec_.decoder_trainable);
}

std::vector<torch::Tensor> ExternalBackbone::encoder_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& p : impl_->module.named_parameters(true))
    if (is_encoder_name(p.name)) out.push_back(p.value);
  return out;
}

std::vector<torch::Tensor> ExternalBackbone::decoder_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& p : impl_->module.named_parameters(true))
    if (!is_encoder_name(p.name)) out.push_back(p.value);
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> ExternalBackbone::external_named_parameters() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : impl_->module.named_parameters(true)) out.emplace_back("external." + p.name, p.value);
  return out;
}

FeatureBundle ExternalBackbone::extract(const torch::Tensor& image) {
  check_image(image);
  const int64_t rows = image.size(2), cols = image.size(3);
  const auto x = pad_to_multiple(image, granularity());
  const bool any_grad = any_requires_grad(encoder_parameters()) || any_requires_grad(decoder_parameters());
  std::optional<torch::NoGradGuard> guard;
  if (!any_grad) guard.emplace();
  const auto out = impl_->module.forward({x});
  if (!out.isTuple() || out.toTupleRef().elements().size() != 5)
    throw ConfigError("external backbone: forward must return (relative_depth, f1, f2, f3, f4)");
  const auto& el = out.toTupleRef().elements();
  FeatureBundle b;
  b.relative_depth = el[0].toTensor();
  for (int k = 0; k < 4; ++k) b.decoder[k] = el[k + 1].toTensor();
  for (int k = 0; k < 4; ++k)
    if (b.decoder[k].size(1) != spec_.external_channels[k])
      throw ConfigError("external backbone: map " + std::to_string(k) + " has " +
                        std::to_string(b.decoder[k].size(1)) + " channels, configuration declares " +
                        std::to_string(spec_.external_channels[k]));
  b.validate(x.size(2), x.size(3));
  if (x.size(2) != rows || x.size(3) != cols) b = crop_bundle(std::move(b), rows, cols);
  return b;
}

std::shared_ptr<FeatureExtractor> make_backbone(const BackboneSpec& spec) {
  if (spec.kind == BackboneKind::standin) return std::make_shared<StandinBackbone>(spec);
  return std::make_shared<ExternalBackbone>(spec);
}

// --------------------------------------------------------------- adapter

std::pair<MatcherFeatures, MatcherFeatures> MatcherFeatures::split(int64_t first) const {
  MatcherFeatures a, b;
  const int64_t rest = depth_encoding.size(0) - first;
  for (int k = 0; k < 4; ++k) {
    a.maps[k] = maps[k].narrow(0, 0, first);
    b.maps[k] = maps[k].narrow(0, first, rest);
  }
  a.depth_encoding = depth_encoding.narrow(0, 0, first);
  b.depth_encoding = depth_encoding.narrow(0, first, rest);
  return {a, b};
}

DepthEncoderImpl::DepthEncoderImpl(int out_channels) {
  if (out_channels <= 0) throw ConfigError("depth encoder: channel count must be positive");
  net_ = register_module("net", nn::Sequential(nn::Conv2d(conv(1, 16, 3, 2)), nn::ReLU(),
                                                nn::Conv2d(conv(16, 16, 3, 2)), nn::ReLU(),
                                                nn::Conv2d(conv(16, out_channels, 3))));
}

torch::Tensor DepthEncoderImpl::forward(const torch::Tensor& relative_depth) { return net_->forward(relative_depth); }

AdapterImpl::AdapterImpl(std::array<int, 4> in_channels, AdapterConfig cfg) : in_channels_(in_channels), cfg_(cfg) {
  for (int k = 0; k < 4; ++k)
    if (in_channels_[k] <= 0 || cfg_.out_channels[k] <= 0)
      throw ConfigError("adapter: channel counts must be positive at scale " + std::to_string(k));
  projections_ = register_module("projections", nn::ModuleList());
  for (int k = 0; k < 4; ++k) projections_->push_back(nn::Conv2d(conv(in_channels_[k], cfg_.out_channels[k], 1)));
  depth_encoder_ = register_module("depth_encoder", DepthEncoder(cfg_.depth_channels));
}

MatcherFeatures AdapterImpl::forward(const FeatureBundle& bundle, int64_t rows, int64_t cols) {
  static constexpr std::array<int, 4> kTargetStride{4, 8, 16, 32};
  MatcherFeatures out;
  for (int k = 0; k < 4; ++k) {
    const auto& m = bundle.decoder[k];
    if (m.size(1) != in_channels_[k])
      throw ConfigError("adapter: decoder map " + std::to_string(k) + " has " + std::to_string(m.size(1)) +
                        " channels, adapter was built for " + std::to_string(in_channels_[k]));
    const int s = kTargetStride[k];
    const auto resized = resize_bilinear(m, (rows + s - 1) / s, (cols + s - 1) / s);
    out.maps[k] = projections_[k]->as<nn::Conv2dImpl>()->forward(resized);
  }
  out.depth_encoding = encode_relative_depth(bundle.relative_depth);
  return out;
}

torch::Tensor AdapterImpl::encode_relative_depth(const torch::Tensor& relative_depth) {
  return depth_encoder_(relative_depth);
}

void AdapterImpl::set_identity_projection() {
  torch::NoGradGuard guard;
  for (int k = 0; k < 4; ++k) {
    if (in_channels_[k] != cfg_.out_channels[k])
      throw ConfigError("adapter: identity projection needs equal channel counts");
    auto* c = projections_[k]->as<nn::Conv2dImpl>();
    c->weight.copy_(torch::eye(in_channels_[k]).view({in_channels_[k], in_channels_[k], 1, 1}));
    c->bias.zero_();
  }
}

}  // namespace omnistereo
