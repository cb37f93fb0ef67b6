#include "omnistereo/model.hpp"

#include <sstream>

#include "omnistereo/errors.hpp"
#include "omnistereo/tensor_utils.hpp"

namespace omnistereo {

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone_encoder: return "backbone-encoder";
    case ParamGroup::backbone_decoder: return "backbone-decoder";
    case ParamGroup::adapters: return "adapters";
    case ParamGroup::matcher: return "matcher";
  }
  return "?";
}

ParamGroup parse_param_group(const std::string& s) {
  if (s == "backbone-encoder" || s == "FE") return ParamGroup::backbone_encoder;
  if (s == "backbone-decoder" || s == "FD") return ParamGroup::backbone_decoder;
  if (s == "adapters" || s == "AD") return ParamGroup::adapters;
  if (s == "matcher" || s == "OS") return ParamGroup::matcher;
  throw ConfigError("unknown component '" + s + "' (expected FE, FD, AD, OS or their long names)");
}

std::set<ParamGroup> parse_param_groups(const std::string& spec) {
  std::set<ParamGroup> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    const auto a = tok.find_first_not_of(" \t"), b = tok.find_last_not_of(" \t");
    if (a == std::string::npos) throw ConfigError("empty component in '" + spec + "'");
    const auto g = parse_param_group(tok.substr(a, b - a + 1));
    out.insert(g);
    if (g == ParamGroup::matcher) out.insert(ParamGroup::adapters);
  }
  if (out.empty()) throw ConfigError("no components in '" + spec + "'");
  return out;
}

std::string format_param_groups(const std::set<ParamGroup>& groups) {
  std::string s;
  for (auto g : groups) s += (s.empty() ? "" : "+") + to_string(g);
  return s;
}

void ModelConfig::validate() const {
  backbone.validate();
  matcher.validate();
  if (adapter.out_channels != matcher.feature_channels)
    throw ConfigError("model: adapter output channels do not match the matcher's feature channels");
  if (adapter.depth_channels != matcher.depth_channels)
    throw ConfigError("model: adapter depth channels do not match the matcher");
}

std::string ModelConfig::architecture_signature() const {
  std::ostringstream o;
  o << "backbone=" << to_string(backbone.kind);
  if (backbone.kind == BackboneKind::standin)
    o << ":" << backbone.embed_dim << "x" << backbone.encoder_blocks << ":" << backbone.decoder_channels;
  else
    o << ":" << backbone.external_channels[0] << "," << backbone.external_channels[1] << ","
      << backbone.external_channels[2] << "," << backbone.external_channels[3];
  o << " adapter=" << adapter.out_channels[0] << "," << adapter.out_channels[1] << "," << adapter.out_channels[2]
    << "," << adapter.out_channels[3] << ":" << adapter.depth_channels;
  o << " matcher=D" << matcher.max_disp_px << ":G" << matcher.groups << ":C" << matcher.match_channels << ":L"
    << matcher.corr_levels << ":R" << matcher.corr_radius << ":H" << matcher.hidden_dim << ":U"
    << matcher.gru_levels;
  return o.str();
}

ModelConfig desk_model_config() {
  ModelConfig cfg;
  cfg.matcher.max_disp_px = 32;
  return cfg;
}

OmniStereoModelImpl::OmniStereoModelImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  backbone_ = register_module("backbone", make_backbone(cfg_.backbone));
  adapter_ = register_module("adapter", Adapter(backbone_->decoder_channels(), cfg_.adapter));
  matcher_ = register_module("matcher", Matcher(cfg_.matcher));
  std::set<ParamGroup> groups{ParamGroup::adapters, ParamGroup::matcher};
  if (cfg_.backbone.encoder_trainable) groups.insert(ParamGroup::backbone_encoder);
  if (cfg_.backbone.decoder_trainable) groups.insert(ParamGroup::backbone_decoder);
  set_trainable(groups);
}

std::vector<torch::Tensor> OmniStereoModelImpl::parameters_of(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone_encoder: return backbone_->encoder_parameters();
    case ParamGroup::backbone_decoder: return backbone_->decoder_parameters();
    case ParamGroup::adapters: return adapter_->parameters();
    case ParamGroup::matcher: return matcher_->parameters();
  }
  return {};
}

void OmniStereoModelImpl::set_trainable(const std::set<ParamGroup>& groups) {
  for (auto g : {ParamGroup::backbone_encoder, ParamGroup::backbone_decoder, ParamGroup::adapters,
                 ParamGroup::matcher})
    for (auto& p : parameters_of(g)) p.set_requires_grad(groups.count(g) > 0);
  cfg_.backbone.encoder_trainable = groups.count(ParamGroup::backbone_encoder) > 0;
  cfg_.backbone.decoder_trainable = groups.count(ParamGroup::backbone_decoder) > 0;
}

void OmniStereoModelImpl::set_clamp_range(double min_deg, double max_deg) {
  MatcherConfig m = cfg_.matcher;
  m.clamp_min_deg = min_deg;
  m.clamp_max_deg = max_deg;
  m.validate();
  cfg_.matcher = m;
  matcher_->set_clamp_range(min_deg, max_deg);
}

std::vector<std::pair<std::string, torch::Tensor>> OmniStereoModelImpl::named_state() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (auto& p : backbone_->external_named_parameters()) out.emplace_back("backbone." + p.first, p.second);
  return out;
}

DisparitySequence OmniStereoModelImpl::forward(const torch::Tensor& top, const torch::Tensor& bottom,
                                               const CameraRig& rig, const ForwardOptions& opts) {
  rig.validate();
  if (top.dim() != 4 || top.size(1) != 3 || top.sizes() != bottom.sizes())
    throw ConfigError("model: expected top and bottom images shaped [B, 3, H, W] with equal sizes");
  if (top.size(2) != rig.height_px || top.size(3) != rig.width_px)
    throw ConfigError("model: images are " + std::to_string(top.size(2)) + "x" + std::to_string(top.size(3)) +
                      ", rig expects " + std::to_string(rig.height_px) + "x" + std::to_string(rig.width_px));
  const int iters = opts.iters > 0 ? opts.iters : (is_training() ? cfg_.matcher.train_iters : cfg_.matcher.eval_iters);
  const double ppd = px_per_degree(rig);

  auto xt = circular_pad_w(top, opts.circular_pad_px);
  auto xb = circular_pad_w(bottom, opts.circular_pad_px);
  const int64_t rows = xt.size(2), cols = xt.size(3);
  const int g = backbone_->granularity();
  xt = pad_to_multiple(xt, g);
  xb = pad_to_multiple(xb, g);

  const int64_t batch = top.size(0);
  const auto bundle = backbone_->extract(torch::cat({xb, xt}, 0));
  const auto feats = adapter_->forward(bundle, xb.size(2), xb.size(3));
  const auto [fb, ft] = feats.split(batch);
  auto out = matcher_->forward(fb, ft, xb, ppd, iters, opts.all_iterates);

  DisparitySequence seq;
  seq.initial_coarse = out.initial_coarse;
  for (auto& p : out.predictions)
    seq.predictions.push_back(circular_crop_w(p.narrow(2, 0, rows).narrow(3, 0, cols), opts.circular_pad_px));
  return seq;
}

}  // namespace omnistereo
