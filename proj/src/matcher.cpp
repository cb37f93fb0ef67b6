#include "omnistereo/matcher.hpp"

#include <cmath>

#include "omnistereo/errors.hpp"
#include "omnistereo/tensor_utils.hpp"

namespace omnistereo {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv2d(int in, int out, int k, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

nn::Conv3d conv3d(int in, int out, int k, int stride = 1) {
  return nn::Conv3d(nn::Conv3dOptions(in, out, k).stride(stride).padding(k / 2));
}

nn::ConvTranspose3d up3d(int in, int out) {
  return nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in, out, 4).stride(2).padding(1));
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

nn::Sequential excitation(int feature_channels, int cost_channels) {
  const int mid = std::max(8, feature_channels / 2);
  return nn::Sequential(conv2d(feature_channels, mid, 1), nn::ReLU(), conv2d(mid, cost_channels, 1));
}

torch::Tensor excite(nn::ModuleList& list, std::size_t i, const torch::Tensor& cost, const torch::Tensor& feat) {
  const auto att = list[i]->as<nn::SequentialImpl>()->forward(feat);
  return cost * torch::sigmoid(att).unsqueeze(2);
}

torch::Tensor pool2x(const torch::Tensor& x) {
  return F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(2).padding(1));
}

torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return resize_bilinear(x, ref.size(2), ref.size(3));
}

}  // namespace

void MatcherConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("matcher: " + m); };
  if (max_disp_px <= 0 || max_disp_px % 4 != 0) fail("max_disp_px must be a positive multiple of 4");
  if (groups <= 0 || match_channels <= 0 || match_channels % groups != 0)
    fail("match_channels must be a positive multiple of groups");
  if (corr_levels < 1 || (coarse_disparities() >> (corr_levels - 1)) < 1)
    fail("too many correlation levels for the disparity range");
  if (corr_radius < 0) fail("corr_radius must be non-negative");
  if (hidden_dim <= 0) fail("hidden_dim must be positive");
  if (gru_levels < 1 || gru_levels > 3) fail("gru_levels must be 1, 2 or 3");
  if (train_iters < 1 || eval_iters < 1) fail("iteration counts must be at least 1");
  if (!(clamp_min_deg >= 0.0) || !(clamp_max_deg > clamp_min_deg))
    fail("clamp range must satisfy 0 <= min < max");
  for (int c : feature_channels)
    if (c <= 0) fail("feature channels must be positive");
  if (depth_channels <= 0) fail("depth_channels must be positive");
}

// ------------------------------------------------------------- volumes

CostVolume4D build_gwc_volume(const torch::Tensor& fb, const torch::Tensor& ft, int disparities, int groups) {
  if (fb.dim() != 4 || fb.sizes() != ft.sizes())
    throw ConfigError("cost volume: feature maps must be [B, C, h, w] with equal shapes");
  const int64_t b = fb.size(0), c = fb.size(1), h = fb.size(2), w = fb.size(3);
  if (groups <= 0 || c % groups != 0) throw ConfigError("cost volume: channels not divisible into groups");
  if (disparities <= 0) throw ConfigError("cost volume: need at least one shift");
  std::vector<torch::Tensor> shifts;
  shifts.reserve(disparities);
  for (int s = 0; s < disparities; ++s) {
    if (s >= h) {
      shifts.push_back(fb.new_zeros({b, groups, h, w}));
      continue;
    }
    auto prod = fb.narrow(2, 0, h - s) * ft.narrow(2, s, h - s);
    auto corr = prod.view({b, groups, c / groups, h - s, w}).mean(2);
    if (s > 0) corr = torch::cat({corr, fb.new_zeros({b, groups, s, w})}, 2);
    shifts.push_back(corr);
  }
  CostVolume4D out;
  out.volume = torch::stack(shifts, 2);
  const auto rows = torch::arange(h, torch::kLong).view({1, h});
  const auto s = torch::arange(disparities, torch::kLong).view({disparities, 1});
  out.valid = (rows + s < h).view({1, 1, disparities, h, 1});
  return out;
}

CorrelationPyramid build_pyramid(const torch::Tensor& volume, int levels) {
  CorrelationPyramid p;
  p.levels.push_back(volume);
  for (int l = 1; l < levels; ++l) {
    const auto& prev = p.levels.back();
    const int64_t b = prev.size(0), d = prev.size(1), h = prev.size(2), w = prev.size(3);
    if (d < 2) throw ConfigError("pyramid: too few shifts for level " + std::to_string(l));
    auto x = prev.permute({0, 2, 3, 1}).reshape({b * h * w, 1, d});
    x = F::avg_pool1d(x, F::AvgPool1dFuncOptions(2).stride(2));
    p.levels.push_back(x.reshape({b, h, w, d / 2}).permute({0, 3, 1, 2}).contiguous());
  }
  return p;
}

torch::Tensor lookup_pyramid(const CorrelationPyramid& pyramid, const torch::Tensor& disp_px, int radius) {
  const auto d = disp_px.detach();
  const auto offsets = torch::arange(-radius, radius + 1, d.options()).view({1, 2 * radius + 1, 1, 1});
  std::vector<torch::Tensor> out;
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
    const auto& vol = pyramid.levels[l];
    const int64_t n = vol.size(1);
    const auto pos = d / static_cast<double>(1 << l) + offsets;
    const auto i0 = torch::floor(pos);
    const auto frac = pos - i0;
    auto sample = [&](const torch::Tensor& idx) {
      const auto inside = (idx >= 0) & (idx <= n - 1);
      const auto safe = torch::nan_to_num(idx, 0.0, 0.0, 0.0).clamp(0, n - 1).to(torch::kLong);
      const auto g = vol.gather(1, safe);
      return g * inside.to(vol.dtype());
    };
    out.push_back(sample(i0) * (1 - frac) + sample(i0 + 1) * frac);
  }
  return torch::cat(out, 1);
}

torch::Tensor soft_argmax(const torch::Tensor& volume) {
  const auto p = torch::softmax(volume, 1);
  // Per-pixel accumulation; exact under column rolls.
  auto acc = torch::zeros_like(p.narrow(1, 0, 1));
  for (int64_t d = 1; d < volume.size(1); ++d) acc = acc + p.narrow(1, d, 1) * static_cast<double>(d);
  return acc;
}

torch::Tensor convex_weights(const torch::Tensor& mask_logits, int factor) {
  const int64_t b = mask_logits.size(0), h = mask_logits.size(2), w = mask_logits.size(3);
  if (mask_logits.size(1) != 9 * factor * factor) throw ConfigError("convex upsampling: mask has wrong channel count");
  return torch::softmax(mask_logits.view({b, 9, factor, factor, h, w}), 1);
}

torch::Tensor convex_upsample(const torch::Tensor& coarse, const torch::Tensor& mask_logits, int factor) {
  const int64_t b = coarse.size(0), c = coarse.size(1), h = coarse.size(2), w = coarse.size(3);
  auto padded = torch::cat({coarse.narrow(3, w - 1, 1), coarse, coarse.narrow(3, 0, 1)}, 3);
  padded = torch::cat({padded.narrow(2, 0, 1), padded, padded.narrow(2, h - 1, 1)}, 2);
  const auto patches = F::unfold(padded, F::UnfoldFuncOptions({3, 3})).view({b, c, 9, 1, 1, h, w});
  const auto weights = convex_weights(mask_logits, factor).unsqueeze(1);
  const auto up = (weights * patches).sum(2);  // [B, C, f, f, h, w]
  return up.permute({0, 1, 4, 2, 5, 3}).reshape({b, c, h * factor, w * factor});
}

// ---------------------------------------------------------- regularizer

RegularizerImpl::RegularizerImpl(int groups, std::array<int, 4> fc) {
  stem_ = register_module("stem", nn::Sequential(conv3d(groups, 8, 3), lrelu(), conv3d(8, 8, 3), lrelu()));
  down1_ = register_module("down1", nn::Sequential(conv3d(8, 16, 3, 2), lrelu(), conv3d(16, 16, 3), lrelu()));
  down2_ = register_module("down2", nn::Sequential(conv3d(16, 32, 3, 2), lrelu(), conv3d(32, 32, 3), lrelu()));
  down3_ = register_module("down3", nn::Sequential(conv3d(32, 48, 3, 2), lrelu(), conv3d(48, 48, 3), lrelu()));
  up2_ = register_module("up2", nn::Sequential(up3d(48, 32), lrelu()));
  up1_ = register_module("up1", nn::Sequential(up3d(32, 16), lrelu()));
  up0_ = register_module("up0", nn::Sequential(up3d(16, 8), lrelu()));
  agg2_ = register_module("agg2", nn::Sequential(conv3d(64, 32, 1), lrelu(), conv3d(32, 32, 3), lrelu()));
  agg1_ = register_module("agg1", nn::Sequential(conv3d(32, 16, 1), lrelu(), conv3d(16, 16, 3), lrelu()));
  agg0_ = register_module("agg0", nn::Sequential(conv3d(16, 8, 1), lrelu(), conv3d(8, 8, 3), lrelu()));
  out_ = register_module("out", nn::Sequential(conv3d(8, 1, 3)));
  excite_ = register_module("excite", nn::ModuleList());
  excite_->push_back(excitation(fc[0], 8));
  excite_->push_back(excitation(fc[1], 16));
  excite_->push_back(excitation(fc[2], 32));
  excite_->push_back(excitation(fc[3], 48));
  excite_->push_back(excitation(fc[2], 32));
  excite_->push_back(excitation(fc[1], 16));
}

torch::Tensor RegularizerImpl::forward(const torch::Tensor& volume, const MatcherFeatures& bottom) {
  const int64_t d = volume.size(2);
  const int64_t dp = (d + 7) / 8 * 8;
  auto v = volume;
  if (dp != d) {
    auto sizes = v.sizes().vec();
    sizes[2] = dp - d;
    v = torch::cat({v, v.new_zeros(sizes)}, 2);
  }
  const auto& f = bottom.maps;
  const auto c0 = excite(excite_, 0, stem_->forward(v), f[0]);
  const auto c1 = excite(excite_, 1, down1_->forward(c0), f[1]);
  const auto c2 = excite(excite_, 2, down2_->forward(c1), f[2]);
  const auto c3 = excite(excite_, 3, down3_->forward(c2), f[3]);
  auto u2 = excite(excite_, 4, agg2_->forward(torch::cat({up2_->forward(c3), c2}, 1)), f[2]);
  auto u1 = excite(excite_, 5, agg1_->forward(torch::cat({up1_->forward(u2), c1}, 1)), f[1]);
  auto u0 = agg0_->forward(torch::cat({up0_->forward(u1), c0}, 1));
  return out_->forward(u0).squeeze(1).narrow(1, 0, d);
}

// -------------------------------------------------------------- context

ContextNetImpl::ContextNetImpl(int hidden_dim, int levels) : levels_(levels), hidden_dim_(hidden_dim) {
  stem4_ = register_module("stem4", nn::Sequential(conv2d(3, 32, 3, 2), nn::ReLU(), conv2d(32, 32, 3, 2), nn::ReLU(),
                                                    conv2d(32, 32, 3), nn::ReLU()));
  down8_ = register_module("down8", nn::Sequential(conv2d(32, 48, 3, 2), nn::ReLU(), conv2d(48, 48, 3), nn::ReLU()));
  down16_ = register_module("down16", nn::Sequential(conv2d(48, 64, 3, 2), nn::ReLU(), conv2d(64, 64, 3), nn::ReLU()));
  heads_ = register_module("heads", nn::ModuleList());
  gates_ = register_module("gates", nn::ModuleList());
  const std::array<int, 3> widths{32, 48, 64};
  for (int l = 0; l < levels_; ++l) {
    heads_->push_back(conv2d(widths[l], 2 * hidden_dim, 3));
    gates_->push_back(conv2d(hidden_dim, 3 * hidden_dim, 3));
  }
}

ContextFeatures ContextNetImpl::forward(const torch::Tensor& image) {
  std::vector<torch::Tensor> feats;
  feats.push_back(stem4_->forward(2.0 * image - 1.0));
  if (levels_ > 1) feats.push_back(down8_->forward(feats.back()));
  if (levels_ > 2) feats.push_back(down16_->forward(feats.back()));
  ContextFeatures ctx;
  for (int l = 0; l < levels_; ++l) {
    const auto out = heads_[l]->as<nn::Conv2dImpl>()->forward(feats[l]);
    ctx.hidden.push_back(torch::tanh(out.narrow(1, 0, hidden_dim_)));
    const auto inp = torch::relu(out.narrow(1, hidden_dim_, hidden_dim_));
    const auto g = gates_[l]->as<nn::Conv2dImpl>()->forward(inp).chunk(3, 1);
    ctx.gates.push_back({g[0], g[1], g[2]});
  }
  return ctx;
}

ConvGruImpl::ConvGruImpl(int hidden_dim, int input_dim) {
  convz_ = register_module("convz", conv2d(hidden_dim + input_dim, hidden_dim, 3));
  convr_ = register_module("convr", conv2d(hidden_dim + input_dim, hidden_dim, 3));
  convq_ = register_module("convq", conv2d(hidden_dim + input_dim, hidden_dim, 3));
}

torch::Tensor ConvGruImpl::forward(const torch::Tensor& h, const std::array<torch::Tensor, 3>& gates,
                                   const std::vector<torch::Tensor>& inputs) {
  const auto x = torch::cat(inputs, 1);
  const auto hx = torch::cat({h, x}, 1);
  const auto z = torch::sigmoid(convz_(hx) + gates[0]);
  const auto r = torch::sigmoid(convr_(hx) + gates[1]);
  const auto q = torch::tanh(convq_(torch::cat({r * h, x}, 1)) + gates[2]);
  return (1 - z) * h + z * q;
}

// -------------------------------------------------------------- matcher

MatcherImpl::MatcherImpl(MatcherConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int hid = cfg_.hidden_dim, cd = cfg_.depth_channels;
  match_ = register_module("match", nn::Sequential(conv2d(cfg_.feature_channels[0] + cd, 64, 3), nn::ReLU(),
                                                    conv2d(64, cfg_.match_channels, 3), nn::ReLU(),
                                                    conv2d(cfg_.match_channels, cfg_.match_channels, 1)));
  regularizer_ = register_module("regularizer", Regularizer(cfg_.groups, cfg_.feature_channels));
  context_ = register_module("context", ContextNet(hid, cfg_.gru_levels));
  const int planes = 2 * cfg_.corr_levels * (2 * cfg_.corr_radius + 1);
  motion_corr_ = register_module("motion_corr",
                                 nn::Sequential(conv2d(planes, 64, 1), nn::ReLU(), conv2d(64, 48, 3), nn::ReLU()));
  motion_disp_ = register_module("motion_disp",
                                 nn::Sequential(conv2d(1, 16, 7), nn::ReLU(), conv2d(16, 16, 3), nn::ReLU()));
  motion_out_ = register_module("motion_out", nn::Sequential(conv2d(64, 31, 3), nn::ReLU()));
  gru04_ = register_module("gru04", ConvGru(hid, 32 + (cfg_.gru_levels > 1 ? hid : 0)));
  if (cfg_.gru_levels > 1) gru08_ = register_module("gru08", ConvGru(hid, hid + (cfg_.gru_levels > 2 ? hid : 0)));
  if (cfg_.gru_levels > 2) gru16_ = register_module("gru16", ConvGru(hid, hid));
  delta_head_ = register_module("delta_head", nn::Sequential(conv2d(hid, 64, 3), nn::ReLU(), conv2d(64, 1, 3)));
  mask_feat_head_ = register_module("mask_feat_head", nn::Sequential(conv2d(hid, 32, 3), nn::ReLU()));
  mask_head_ = register_module("mask_head",
                               nn::Sequential(conv2d(32 + cd, 64, 3), nn::ReLU(), conv2d(64, 9 * 16, 1)));
}

void MatcherImpl::set_clamp_range(double min_deg, double max_deg) {
  MatcherConfig c = cfg_;
  c.clamp_min_deg = min_deg;
  c.clamp_max_deg = max_deg;
  c.validate();
  cfg_ = c;
}

torch::Tensor MatcherImpl::clamp(const torch::Tensor& d) const {
  // Straight-through: clamped values, identity gradient.
  const auto c = torch::clamp(d, cfg_.clamp_min_deg, cfg_.clamp_max_deg);
  return d + (c - d).detach();
}

torch::Tensor MatcherImpl::matching_features(const MatcherFeatures& f) {
  return match_->forward(torch::cat({f.maps[0], f.depth_encoding}, 1));
}

torch::Tensor MatcherImpl::regularize(const CostVolume4D& volume, const MatcherFeatures& bottom) {
  return regularizer_->forward(volume.volume, bottom);
}

torch::Tensor MatcherImpl::initial_disparity(const torch::Tensor& regularized, double px_per_deg) {
  return clamp(soft_argmax(regularized) * (4.0 / px_per_deg));
}

ContextFeatures MatcherImpl::context_features(const torch::Tensor& bottom_image) {
  return context_->forward(bottom_image);
}

RefineState MatcherImpl::init_state(const ContextFeatures& ctx, const torch::Tensor& initial) {
  RefineState s;
  s.hidden = ctx.hidden;
  s.disparity = initial;
  return s;
}

void MatcherImpl::refine(RefineState& state, const CorrelationPyramid& geometry,
                         const CorrelationPyramid& correlation, const ContextFeatures& ctx, double px_per_deg,
                         const torch::Tensor& injected_delta) {
  const auto d = state.disparity.detach();
  const auto d_px = d * (px_per_deg / 4.0);
  const auto corr = torch::cat({lookup_pyramid(geometry, d_px, cfg_.corr_radius),
                                lookup_pyramid(correlation, d_px, cfg_.corr_radius)},
                               1);
  auto& h = state.hidden;
  if (cfg_.gru_levels > 2) h[2] = gru16_->forward(h[2], ctx.gates[2], std::vector<torch::Tensor>{pool2x(h[1])});
  if (cfg_.gru_levels > 1) {
    std::vector<torch::Tensor> in{pool2x(h[0])};
    if (cfg_.gru_levels > 2) in.push_back(resize_like(h[2], h[1]));
    h[1] = gru08_->forward(h[1], ctx.gates[1], in);
  }
  auto motion = motion_out_->forward(torch::cat({motion_corr_->forward(corr), motion_disp_->forward(d)}, 1));
  motion = torch::cat({motion, d}, 1);
  std::vector<torch::Tensor> in{motion};
  if (cfg_.gru_levels > 1) in.push_back(resize_like(h[1], h[0]));
  h[0] = gru04_->forward(h[0], ctx.gates[0], in);

  auto delta = delta_head_->forward(h[0]);
  if (injected_delta.defined()) delta = delta + injected_delta;
  state.disparity = clamp(d + delta);
  state.mask_features = mask_feat_head_->forward(h[0]);
}

torch::Tensor MatcherImpl::upsample_guided(const torch::Tensor& coarse, const torch::Tensor& mask_features,
                                           const torch::Tensor& depth_encoding) {
  const auto logits = 0.25 * mask_head_->forward(torch::cat({mask_features, depth_encoding}, 1));
  return convex_upsample(coarse, logits, 4);
}

MatcherOutput MatcherImpl::forward(const MatcherFeatures& bottom, const MatcherFeatures& top,
                                   const torch::Tensor& bottom_image, double px_per_deg, int iters,
                                   bool all_iterates) {
  if (iters < 1) throw ConfigError("matcher: need at least one iteration");
  if (!(px_per_deg > 0.0)) throw ConfigError("matcher: pixels per degree must be positive");
  for (int k = 0; k < 4; ++k)
    if (bottom.maps[k].size(1) != cfg_.feature_channels[k] || top.maps[k].sizes() != bottom.maps[k].sizes())
      throw ConfigError("matcher: feature map " + std::to_string(k) + " does not match the configuration");
  const int64_t h = bottom.maps[0].size(2), w = bottom.maps[0].size(3);
  if (h % 8 != 0 || w % 8 != 0) throw ConfigError("matcher: 1/4-scale maps must be multiples of 8");
  if (bottom_image.size(2) != 4 * h || bottom_image.size(3) != 4 * w)
    throw ConfigError("matcher: bottom image does not match the feature maps");

  const auto mb = matching_features(bottom);
  const auto mt = matching_features(top);
  const int d = cfg_.coarse_disparities();
  const auto gwc = build_gwc_volume(mb, mt, d, cfg_.groups);
  const auto corr = build_gwc_volume(mb, mt, d, 1).volume.squeeze(1);
  const auto reg = regularize(gwc, bottom);

  MatcherOutput out;
  out.initial_coarse = initial_disparity(reg, px_per_deg);
  out.predictions.push_back(resize_bilinear(out.initial_coarse, 4 * h, 4 * w));

  const auto geometry = build_pyramid(reg, cfg_.corr_levels);
  const auto correlation = build_pyramid(corr, cfg_.corr_levels);
  const auto ctx = context_features(bottom_image);
  auto state = init_state(ctx, out.initial_coarse);
  for (int i = 0; i < iters; ++i) {
    refine(state, geometry, correlation, ctx, px_per_deg);
    out.coarse.push_back(state.disparity);
    if (all_iterates || i + 1 == iters)
      out.predictions.push_back(upsample_guided(state.disparity, state.mask_features, bottom.depth_encoding));
  }
  return out;
}

}  // namespace omnistereo
