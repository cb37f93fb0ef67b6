#include "omnistereo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "omnistereo/errors.hpp"
#include "omnistereo/evaluate.hpp"
#include "omnistereo/tensor_utils.hpp"

namespace omnistereo {

std::string to_string(Stage s) { return s == Stage::A ? "A" : "B"; }

Stage parse_stage(const std::string& s) {
  if (s == "A" || s == "a") return Stage::A;
  if (s == "B" || s == "b") return Stage::B;
  throw ConfigError("unknown stage '" + s + "' (expected A or B)");
}

// ------------------------------------------------------------------ data

namespace {

Sample to_sample(const Image& top, const Image& bottom, DisparityMap sparse, DisparityMap completed, SceneTag tag) {
  Sample s;
  s.top = image_to_tensor(top);
  s.bottom = image_to_tensor(bottom);
  s.disparity = grid_to_tensor(completed.values);
  s.valid = mask_to_tensor(completed.valid);
  s.sparse = std::move(sparse);
  s.completed = std::move(completed);
  s.tag = tag;
  return s;
}

}  // namespace

DisparityStats PairDataset::stats() const {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : samples)
    for (std::size_t k = 0; k < s.completed.valid.size(); ++k)
      if (s.completed.valid[k]) {
        lo = std::min(lo, s.completed.values[k]);
        hi = std::max(hi, s.completed.values[k]);
      }
  if (!(lo <= hi)) throw DataError("dataset has no valid ground truth pixel");
  return {lo, hi};
}

PairDataset PairDataset::subset(const std::vector<std::size_t>& indices) const {
  PairDataset out;
  out.rig = rig;
  out.fingerprint = fingerprint;
  for (auto i : indices) {
    if (i >= samples.size()) throw ConfigError("subset index out of range");
    out.samples.push_back(samples[i]);
  }
  return out;
}

PairDataset load_dataset(const DatasetManifest& manifest) {
  PairDataset d;
  d.rig = manifest.rig;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto p = load_pair(manifest, i);
    d.samples.push_back(to_sample(p.top, p.bottom, std::move(p.sparse), std::move(p.completed), p.tag));
  }
  d.fingerprint = fingerprint(manifest);
  return d;
}

PairDataset make_dataset(const std::vector<RenderedPair>& pairs, const CameraRig& rig) {
  PairDataset d;
  d.rig = rig;
  const Mask pattern = lidar_sparse_mask(rig);
  for (const auto& p : pairs) {
    DisparityMap sparse = p.disparity;
    for (std::size_t k = 0; k < sparse.valid.size(); ++k) sparse.valid[k] = sparse.valid[k] && pattern[k];
    d.samples.push_back(to_sample(p.image_top, p.image_bottom, std::move(sparse), p.disparity, SceneTag::synthetic));
  }
  return d;
}

// ---------------------------------------------------------- augmentation

void AugmentConfig::validate() const {
  if (!(brightness >= 0 && brightness < 1)) throw ConfigError("augment: brightness must lie in [0, 1)");
  if (!(contrast >= 0 && contrast < 1)) throw ConfigError("augment: contrast must lie in [0, 1)");
  if (!(gamma >= 0 && gamma < 1)) throw ConfigError("augment: gamma must lie in [0, 1)");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E5ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  cfg.validate();
  Sample out = sample;
  if (!cfg.enabled) return out;
  std::mt19937_64 rng(mix(seed, index));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double db = cfg.brightness * u(rng);
  const double fc = 1.0 + cfg.contrast * u(rng);
  const double g = 1.0 + cfg.gamma * u(rng);

  torch::NoGradGuard guard;
  auto top = sample.top, bottom = sample.bottom;
  if (cfg.contrast > 0) {
    const auto m = bottom.mean();
    top = (top - m) * fc + m;
    bottom = (bottom - m) * fc + m;
  }
  if (cfg.brightness > 0) {
    top = top + db;
    bottom = bottom + db;
  }
  if (cfg.contrast > 0 || cfg.brightness > 0 || cfg.gamma > 0) {
    top = top.clamp(0.0, 1.0);
    bottom = bottom.clamp(0.0, 1.0);
  }
  if (cfg.gamma > 0) {
    top = top.pow(g);
    bottom = bottom.pow(g);
  }
  out.top = top;
  out.bottom = bottom;
  return out;
}

std::vector<std::size_t> subset_sample(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("subset ratio must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
  std::mt19937_64 rng(mix(seed, 0x5ab5e7));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PairDataset subset_sample(const PairDataset& data, double ratio, std::uint64_t seed) {
  return data.subset(subset_sample(data.size(), ratio, seed));
}

// ------------------------------------------------------------- schedule

void OptimConfig::validate() const {
  if (!(weight_decay >= 0)) throw ConfigError("optim: weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optim: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("optim: eps must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("optim: warmup_fraction must lie in [0, 1)");
  if (!(div_factor >= 1 && final_div_factor >= 1)) throw ConfigError("optim: div factors must be >= 1");
  if (!(clip_grad_norm >= 0)) throw ConfigError("optim: clip_grad_norm must be non-negative");
}

double one_cycle_lr(double max_lr, int step, int total_steps, const OptimConfig& cfg) {
  const double start = max_lr / cfg.div_factor;
  const double end = start / cfg.final_div_factor;
  const double total = std::max(1, total_steps);
  const double warm = cfg.warmup_fraction * total;
  const double t = std::clamp<double>(step, 0.0, total);
  if (t < warm) return start + (max_lr - start) * t / warm;
  const double p = total > warm ? (t - warm) / (total - warm) : 1.0;
  return end + (max_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

// --------------------------------------------------------- stage config

StageConfig StageConfig::defaults(Stage s) {
  StageConfig c;
  c.stage = s;
  if (s == Stage::A) {
    c.trainable = {ParamGroup::adapters, ParamGroup::matcher};
    c.loss = LossKind::l1_based;
    c.lr_head = 2e-4;
    c.batch_size = 2;
    c.epochs = 20;
  } else {
    c.trainable = {ParamGroup::backbone_decoder, ParamGroup::adapters, ParamGroup::matcher};
    c.loss = LossKind::silog;
    c.lr_head = 2e-5;
    c.batch_size = 1;
    c.epochs = 12;
  }
  return c;
}

void StageConfig::validate() const {
  if (trainable.empty()) throw ConfigError("stage " + to_string(stage) + ": nothing to train");
  if (!(lr_head > 0)) throw ConfigError("stage: lr must be positive");
  if (!(lr_backbone_decoder_divisor > 0)) throw ConfigError("stage: backbone lr divisor must be positive");
  if (batch_size < 1) throw ConfigError("stage: batch_size must be >= 1");
  if (epochs < 1 && max_steps < 1) throw ConfigError("stage: need epochs >= 1 or max_steps >= 1");
  if (max_steps < 0) throw ConfigError("stage: max_steps must be non-negative");
  optim.validate();
  augment.validate();
  loss_cfg.validate();
}

int StageConfig::steps_per_epoch(std::size_t n) const {
  return static_cast<int>((n + batch_size - 1) / batch_size);
}

int StageConfig::total_steps(std::size_t n) const {
  return max_steps > 0 ? max_steps : epochs * steps_per_epoch(n);
}

// -------------------------------------------------------------- ablation

TrainingPlan ablate(const std::string& delta, const TrainingPlan& base) {
  TrainingPlan plan = base;
  std::string text = delta;
  std::replace(text.begin(), text.end(), ';', ' ');
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream ss(text);
  std::string item;
  while (ss >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw ConfigError("ablation item '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "stageA") {
      plan.a.trainable = parse_param_groups(value);
    } else if (key == "stageB") {
      if (value == "none") {
        plan.run_b = false;
      } else {
        plan.b.trainable = parse_param_groups(value);
        plan.run_b = true;
      }
    } else if (key == "stageA_loss") {
      plan.a.loss = parse_loss_kind(value);
    } else if (key == "stageB_loss") {
      plan.b.loss = parse_loss_kind(value);
    } else if (key == "stageA_lr") {
      plan.a.lr_head = parse_double(value, key);
    } else if (key == "stageB_lr") {
      plan.b.lr_head = parse_double(value, key);
    } else {
      throw ConfigError("unknown ablation key '" + key + "'");
    }
  }
  plan.a.validate();
  if (plan.run_b) plan.b.validate();
  return plan;
}

// ------------------------------------------------------- config files

namespace {

const std::vector<std::string> kStageFields = {
    "trainable", "loss", "lr", "lr_backbone_divisor", "batch_size", "epochs", "max_steps", "seed",
    "deterministic", "weight_decay", "warmup_fraction", "div_factor", "final_div_factor", "clip_grad_norm",
    "augment", "augment.brightness", "augment.contrast", "augment.gamma", "gamma", "lambda", "eps_log"};

const std::vector<std::string> kModelFields = {
    "backbone", "backbone.embed_dim", "backbone.encoder_blocks", "backbone.decoder_channels",
    "backbone.path", "backbone.channels", "adapter.channels", "adapter.depth_channels",
    "matcher.max_disp_px", "matcher.groups", "matcher.match_channels", "matcher.corr_levels",
    "matcher.corr_radius", "matcher.hidden_dim", "matcher.gru_levels", "matcher.train_iters",
    "matcher.eval_iters", "matcher.clamp_min_deg", "matcher.clamp_max_deg"};

std::string join_ints(const std::array<int, 4>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + "," + std::to_string(v[3]);
}

std::array<int, 4> parse_int4(const std::string& text, const std::string& what) {
  const auto v = parse_double_list(text, what);
  if (v.size() != 4) throw ConfigError(what + ": expected four integers");
  std::array<int, 4> out{};
  for (int i = 0; i < 4; ++i) {
    if (v[i] != std::floor(v[i]) || v[i] < 1) throw ConfigError(what + ": expected positive integers");
    out[i] = static_cast<int>(v[i]);
  }
  return out;
}

void check_prefixed(const KeyValueDoc& doc, const std::string& prefix, const std::vector<std::string>& fields) {
  const std::string p = prefix + ".";
  for (const auto& [k, v] : doc.entries()) {
    if (k.rfind(p, 0) != 0) continue;
    if (std::find(fields.begin(), fields.end(), k.substr(p.size())) == fields.end())
      throw ConfigError("unknown config key '" + k + "'");
  }
}

}  // namespace

void write_stage_config(KeyValueDoc& doc, const std::string& p, const StageConfig& c) {
  doc.set(p + ".trainable", [&] {
    std::string s;
    for (auto g : c.trainable) {
      static const char* abbrev[] = {"FE", "FD", "AD", "OS"};
      s += (s.empty() ? "" : "+") + std::string(abbrev[static_cast<int>(g)]);
    }
    return s;
  }());
  doc.set(p + ".loss", to_string(c.loss));
  doc.set(p + ".lr", format_double(c.lr_head));
  doc.set(p + ".lr_backbone_divisor", format_double(c.lr_backbone_decoder_divisor));
  doc.set(p + ".batch_size", std::to_string(c.batch_size));
  doc.set(p + ".epochs", std::to_string(c.epochs));
  doc.set(p + ".max_steps", std::to_string(c.max_steps));
  doc.set(p + ".seed", std::to_string(c.seed));
  doc.set(p + ".deterministic", c.deterministic ? "true" : "false");
  doc.set(p + ".weight_decay", format_double(c.optim.weight_decay));
  doc.set(p + ".warmup_fraction", format_double(c.optim.warmup_fraction));
  doc.set(p + ".div_factor", format_double(c.optim.div_factor));
  doc.set(p + ".final_div_factor", format_double(c.optim.final_div_factor));
  doc.set(p + ".clip_grad_norm", format_double(c.optim.clip_grad_norm));
  doc.set(p + ".augment", c.augment.enabled ? "true" : "false");
  doc.set(p + ".augment.brightness", format_double(c.augment.brightness));
  doc.set(p + ".augment.contrast", format_double(c.augment.contrast));
  doc.set(p + ".augment.gamma", format_double(c.augment.gamma));
  doc.set(p + ".gamma", format_double(c.loss_cfg.gamma));
  doc.set(p + ".lambda", format_double(c.loss_cfg.lambda_silog));
  doc.set(p + ".eps_log", format_double(c.loss_cfg.eps_log));
}

StageConfig read_stage_config(const KeyValueDoc& doc, const std::string& p, const StageConfig& fb) {
  check_prefixed(doc, p, kStageFields);
  StageConfig c = fb;
  if (auto v = doc.get(p + ".trainable")) c.trainable = parse_param_groups(*v);
  if (auto v = doc.get(p + ".loss")) c.loss = parse_loss_kind(*v);
  c.lr_head = doc.get_double(p + ".lr", c.lr_head);
  c.lr_backbone_decoder_divisor = doc.get_double(p + ".lr_backbone_divisor", c.lr_backbone_decoder_divisor);
  c.batch_size = static_cast<int>(doc.get_int(p + ".batch_size", c.batch_size));
  c.epochs = static_cast<int>(doc.get_int(p + ".epochs", c.epochs));
  c.max_steps = static_cast<int>(doc.get_int(p + ".max_steps", c.max_steps));
  c.seed = static_cast<std::uint64_t>(doc.get_int(p + ".seed", static_cast<long long>(c.seed)));
  c.deterministic = doc.get_bool(p + ".deterministic", c.deterministic);
  c.optim.weight_decay = doc.get_double(p + ".weight_decay", c.optim.weight_decay);
  c.optim.warmup_fraction = doc.get_double(p + ".warmup_fraction", c.optim.warmup_fraction);
  c.optim.div_factor = doc.get_double(p + ".div_factor", c.optim.div_factor);
  c.optim.final_div_factor = doc.get_double(p + ".final_div_factor", c.optim.final_div_factor);
  c.optim.clip_grad_norm = doc.get_double(p + ".clip_grad_norm", c.optim.clip_grad_norm);
  c.augment.enabled = doc.get_bool(p + ".augment", c.augment.enabled);
  c.augment.brightness = doc.get_double(p + ".augment.brightness", c.augment.brightness);
  c.augment.contrast = doc.get_double(p + ".augment.contrast", c.augment.contrast);
  c.augment.gamma = doc.get_double(p + ".augment.gamma", c.augment.gamma);
  c.loss_cfg.gamma = doc.get_double(p + ".gamma", c.loss_cfg.gamma);
  c.loss_cfg.lambda_silog = doc.get_double(p + ".lambda", c.loss_cfg.lambda_silog);
  c.loss_cfg.eps_log = doc.get_double(p + ".eps_log", c.loss_cfg.eps_log);
  c.validate();
  return c;
}

void write_model_config(KeyValueDoc& doc, const ModelConfig& m) {
  doc.set("model.backbone", to_string(m.backbone.kind));
  doc.set("model.backbone.embed_dim", std::to_string(m.backbone.embed_dim));
  doc.set("model.backbone.encoder_blocks", std::to_string(m.backbone.encoder_blocks));
  doc.set("model.backbone.decoder_channels", std::to_string(m.backbone.decoder_channels));
  doc.set("model.backbone.path", m.backbone.external_path);
  doc.set("model.backbone.channels", join_ints(m.backbone.external_channels));
  doc.set("model.adapter.channels", join_ints(m.adapter.out_channels));
  doc.set("model.adapter.depth_channels", std::to_string(m.adapter.depth_channels));
  const auto& c = m.matcher;
  doc.set("model.matcher.max_disp_px", std::to_string(c.max_disp_px));
  doc.set("model.matcher.groups", std::to_string(c.groups));
  doc.set("model.matcher.match_channels", std::to_string(c.match_channels));
  doc.set("model.matcher.corr_levels", std::to_string(c.corr_levels));
  doc.set("model.matcher.corr_radius", std::to_string(c.corr_radius));
  doc.set("model.matcher.hidden_dim", std::to_string(c.hidden_dim));
  doc.set("model.matcher.gru_levels", std::to_string(c.gru_levels));
  doc.set("model.matcher.train_iters", std::to_string(c.train_iters));
  doc.set("model.matcher.eval_iters", std::to_string(c.eval_iters));
  doc.set("model.matcher.clamp_min_deg", format_double(c.clamp_min_deg));
  doc.set("model.matcher.clamp_max_deg", format_double(c.clamp_max_deg));
}

ModelConfig read_model_config(const KeyValueDoc& doc, const ModelConfig& fb) {
  check_prefixed(doc, "model", kModelFields);
  ModelConfig m = fb;
  auto geti = [&](const std::string& k, int v) { return static_cast<int>(doc.get_int(k, v)); };
  if (auto v = doc.get("model.backbone")) m.backbone.kind = parse_backbone_kind(*v);
  m.backbone.embed_dim = geti("model.backbone.embed_dim", m.backbone.embed_dim);
  m.backbone.encoder_blocks = geti("model.backbone.encoder_blocks", m.backbone.encoder_blocks);
  m.backbone.decoder_channels = geti("model.backbone.decoder_channels", m.backbone.decoder_channels);
  m.backbone.external_path = doc.get_string("model.backbone.path", m.backbone.external_path);
  if (auto v = doc.get("model.backbone.channels")) m.backbone.external_channels = parse_int4(*v, "model.backbone.channels");
  if (auto v = doc.get("model.adapter.channels")) m.adapter.out_channels = parse_int4(*v, "model.adapter.channels");
  m.adapter.depth_channels = geti("model.adapter.depth_channels", m.adapter.depth_channels);
  auto& c = m.matcher;
  c.max_disp_px = geti("model.matcher.max_disp_px", c.max_disp_px);
  c.groups = geti("model.matcher.groups", c.groups);
  c.match_channels = geti("model.matcher.match_channels", c.match_channels);
  c.corr_levels = geti("model.matcher.corr_levels", c.corr_levels);
  c.corr_radius = geti("model.matcher.corr_radius", c.corr_radius);
  c.hidden_dim = geti("model.matcher.hidden_dim", c.hidden_dim);
  c.gru_levels = geti("model.matcher.gru_levels", c.gru_levels);
  c.train_iters = geti("model.matcher.train_iters", c.train_iters);
  c.eval_iters = geti("model.matcher.eval_iters", c.eval_iters);
  c.clamp_min_deg = doc.get_double("model.matcher.clamp_min_deg", c.clamp_min_deg);
  c.clamp_max_deg = doc.get_double("model.matcher.clamp_max_deg", c.clamp_max_deg);
  c.feature_channels = m.adapter.out_channels;
  c.depth_channels = m.adapter.depth_channels;
  m.validate();
  return m;
}

RunConfig RunConfig::from_doc(const KeyValueDoc& doc) {
  for (const auto& [k, v] : doc.entries()) {
    const bool known = k.rfind("model.", 0) == 0 || k.rfind("stageA.", 0) == 0 || k.rfind("stageB.", 0) == 0 ||
                       k == "model" || k == "run_b" || k == "ablate";
    if (!known) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig rc;
  rc.model = read_model_config(doc, rc.model);
  rc.plan.a = read_stage_config(doc, "stageA", rc.plan.a);
  rc.plan.b = read_stage_config(doc, "stageB", rc.plan.b);
  rc.plan.run_b = doc.get_bool("run_b", rc.plan.run_b);
  rc.ablation = doc.get_string("ablate", "");
  rc.effective_plan();
  return rc;
}

RunConfig RunConfig::load(const std::string& path) { return from_doc(KeyValueDoc::load(path)); }

KeyValueDoc RunConfig::to_doc() const {
  KeyValueDoc doc;
  write_model_config(doc, model);
  write_stage_config(doc, "stageA", plan.a);
  write_stage_config(doc, "stageB", plan.b);
  doc.set("run_b", plan.run_b ? "true" : "false");
  if (!ablation.empty()) doc.set("ablate", ablation);
  return doc;
}

TrainingPlan RunConfig::effective_plan() const { return ablate(ablation, plan); }

// ----------------------------------------------------------- checkpoints

namespace {

std::string model_config_text(const ModelConfig& cfg) {
  KeyValueDoc doc;
  write_model_config(doc, cfg);
  return doc.serialize();
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key, const std::string& path) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isString()) throw DataError("checkpoint " + path + ": missing '" + key + "'");
  return v.toStringRef();
}

int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key, const std::string& path) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isInt()) throw DataError("checkpoint " + path + ": missing '" + key + "'");
  return v.toInt();
}

void open_archive(torch::serialize::InputArchive& ar, const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("checkpoint not found: " + path);
  try {
    ar.load_from(path);
  } catch (const std::exception& e) {
    throw DataError("checkpoint " + path + " is corrupt or unreadable");
  }
}

}  // namespace

void save_checkpoint(const std::string& path, OmniStereoModel& model, torch::optim::Optimizer* optimizer,
                     const TrainState& state) {
  torch::serialize::OutputArchive ar;
  ar.write("version", c10::IValue(static_cast<int64_t>(kCheckpointVersion)));
  ar.write("signature", c10::IValue(model->config().architecture_signature()));
  ar.write("model_config", c10::IValue(model_config_text(model->config())));
  ar.write("stage", c10::IValue(std::string(to_string(state.stage))));
  ar.write("epoch", c10::IValue(static_cast<int64_t>(state.epoch)));
  ar.write("step", c10::IValue(static_cast<int64_t>(state.step)));
  const auto named = model->named_state();
  std::string names;
  torch::serialize::OutputArchive params;
  for (std::size_t i = 0; i < named.size(); ++i) {
    names += named[i].first + "\n";
    params.write("p" + std::to_string(i), named[i].second.detach());
  }
  ar.write("param_names", c10::IValue(names));
  ar.write("params", params);
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    ar.write("optimizer", opt);
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  try {
    ar.save_to(tmp);
  } catch (const std::exception& e) {
    throw DataError("cannot write checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

ModelConfig checkpoint_model_config(const std::string& path) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  if (read_int(ar, "version", path) != kCheckpointVersion)
    throw DataError("checkpoint " + path + ": unsupported format version");
  return read_model_config(KeyValueDoc::parse(read_string(ar, "model_config", path), path), desk_model_config());
}

TrainState restore_checkpoint(const std::string& path, OmniStereoModel& model, torch::optim::Optimizer* optimizer) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  const auto version = read_int(ar, "version", path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + ": format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const auto signature = read_string(ar, "signature", path);
  if (signature != model->config().architecture_signature())
    throw ConfigError("checkpoint " + path + " holds a different architecture (" + signature + ")");
  const auto saved_cfg =
      read_model_config(KeyValueDoc::parse(read_string(ar, "model_config", path), path), model->config());

  std::vector<std::string> names;
  {
    std::istringstream ss(read_string(ar, "param_names", path));
    std::string line;
    while (std::getline(ss, line))
      if (!line.empty()) names.push_back(line);
  }
  auto named = model->named_state();
  if (names.size() != named.size()) throw ConfigError("checkpoint " + path + ": parameter count differs");
  torch::serialize::InputArchive params;
  if (!ar.try_read("params", params)) throw DataError("checkpoint " + path + ": missing parameters");
  {
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (names[i] != named[i].first) throw ConfigError("checkpoint " + path + ": parameter '" + names[i] + "' differs");
      torch::Tensor t;
      if (!params.try_read("p" + std::to_string(i), t)) throw DataError("checkpoint " + path + ": missing " + names[i]);
      if (t.sizes() != named[i].second.sizes())
        throw ConfigError("checkpoint " + path + ": shape of '" + names[i] + "' differs");
      named[i].second.copy_(t);
    }
  }
  model->set_clamp_range(saved_cfg.matcher.clamp_min_deg, saved_cfg.matcher.clamp_max_deg);
  if (optimizer) {
    torch::serialize::InputArchive opt;
    if (!ar.try_read("optimizer", opt)) throw DataError("checkpoint " + path + ": no optimizer state");
    try {
      optimizer->load(opt);
    } catch (const c10::Error& e) {
      throw ConfigError("checkpoint " + path + ": optimizer state does not fit this stage");
    }
  }
  TrainState st;
  st.stage = parse_stage(read_string(ar, "stage", path));
  st.epoch = static_cast<int>(read_int(ar, "epoch", path));
  st.step = static_cast<int>(read_int(ar, "step", path));
  return st;
}

OmniStereoModel load_model(const std::string& path) {
  OmniStereoModel model(checkpoint_model_config(path));
  restore_checkpoint(path, model);
  return model;
}

// --------------------------------------------------------------- trainer

StageTrainer::StageTrainer(OmniStereoModel model, StageConfig cfg, CameraRig rig, int total_steps)
    : model_(std::move(model)), cfg_(std::move(cfg)), rig_(rig), total_steps_(total_steps) {
  cfg_.validate();
  if (total_steps_ < 1) throw ConfigError("trainer: need at least one step");
  model_->set_trainable(cfg_.trainable);

  std::vector<torch::Tensor> head, backbone;
  for (auto g : {ParamGroup::adapters, ParamGroup::matcher})
    if (cfg_.trainable.count(g))
      for (auto& p : model_->parameters_of(g)) head.push_back(p);
  for (auto g : {ParamGroup::backbone_encoder, ParamGroup::backbone_decoder})
    if (cfg_.trainable.count(g))
      for (auto& p : model_->parameters_of(g)) backbone.push_back(p);
  if (head.empty() && backbone.empty()) throw ConfigError("trainer: no trainable parameters");
  has_backbone_group_ = !backbone.empty();
  trainable_ = head;
  trainable_.insert(trainable_.end(), backbone.begin(), backbone.end());

  auto options = torch::optim::AdamWOptions(cfg_.lr_head)
                     .betas({cfg_.optim.beta1, cfg_.optim.beta2})
                     .eps(cfg_.optim.eps)
                     .weight_decay(cfg_.optim.weight_decay);
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(head, std::make_unique<torch::optim::AdamWOptions>(options));
  if (has_backbone_group_) groups.emplace_back(backbone, std::make_unique<torch::optim::AdamWOptions>(options));
  opt_ = std::make_unique<torch::optim::AdamW>(std::move(groups), options);
  apply_schedule();
}

void StageTrainer::apply_schedule() {
  const double lr = one_cycle_lr(cfg_.lr_head, step_, total_steps_, cfg_.optim);
  auto& groups = opt_->param_groups();
  static_cast<torch::optim::AdamWOptions&>(groups[0].options()).lr(lr);
  if (has_backbone_group_)
    static_cast<torch::optim::AdamWOptions&>(groups[1].options()).lr(lr / cfg_.lr_backbone_decoder_divisor);
}

double StageTrainer::head_lr() const {
  return static_cast<const torch::optim::AdamWOptions&>(opt_->param_groups()[0].options()).lr();
}

std::optional<double> StageTrainer::backbone_lr() const {
  if (!has_backbone_group_) return std::nullopt;
  return static_cast<const torch::optim::AdamWOptions&>(opt_->param_groups()[1].options()).lr();
}

double StageTrainer::step(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ConfigError("trainer: empty batch");
  apply_schedule();
  std::vector<torch::Tensor> top, bottom, gt, valid;
  for (const auto* s : batch) {
    top.push_back(s->top);
    bottom.push_back(s->bottom);
    gt.push_back(s->disparity);
    valid.push_back(s->valid);
  }
  model_->train();
  ForwardOptions fo;
  fo.iters = model_->config().matcher.train_iters;
  const auto seq = model_->forward(torch::cat(top), torch::cat(bottom), rig_, fo);
  const auto loss = sequence_loss(cfg_.loss, seq.predictions, torch::cat(gt), torch::cat(valid), cfg_.loss_cfg);
  const double value = loss.item<double>();
  if (!std::isfinite(value))
    throw DivergenceError("non-finite loss at step " + std::to_string(step_ + 1) + " of stage " + to_string(cfg_.stage));
  opt_->zero_grad();
  loss.backward();
  if (cfg_.optim.clip_grad_norm > 0) {
    const double norm = torch::nn::utils::clip_grad_norm_(trainable_, cfg_.optim.clip_grad_norm);
    if (!std::isfinite(norm))
      throw DivergenceError("non-finite gradient at step " + std::to_string(step_ + 1) + " of stage " +
                            to_string(cfg_.stage));
  }
  opt_->step();
  ++step_;
  return value;
}

// ------------------------------------------------------------ manifests

namespace {

nlohmann::json quantity_json(const QuantityMetrics& q) {
  return {{"mae", q.mae}, {"rmse", q.rmse}, {"mare", q.mare}, {"lrce", q.lrce}, {"n_valid", q.n_valid}};
}

nlohmann::json report_json(const MetricReport& r) {
  nlohmann::json j;
  j["disparity"] = quantity_json(r.disparity);
  j["depth"] = quantity_json(r.depth);
  j["images"] = r.images;
  return j;
}

}  // namespace

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["stage"] = to_string(stage);
  j["config"] = config;
  j["dataset_fingerprint"] = dataset_fingerprint;
  j["step_losses"] = step_losses;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"seconds", e.seconds}};
    if (e.validation) je["validation"] = report_json(*e.validation);
    j["epochs"].push_back(je);
  }
  j["checkpoints"] = checkpoints;
  j["best_checkpoint"] = best_checkpoint;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

void RunManifest::save(const std::string& path) const {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << to_json() << "\n";
}

void set_deterministic(bool on) {
  at::globalContext().setDeterministicAlgorithms(on, false);
  if (on) at::set_num_threads(1);
}

RunManifest train_stage(OmniStereoModel& model, const PairDataset& data, const StageConfig& cfg,
                        const TrainContext& ctx) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (data.size() == 0) throw DataError("training set is empty");
  const auto t_start = std::chrono::steady_clock::now();
  if (cfg.deterministic) set_deterministic(true);
  torch::manual_seed(cfg.seed);

  const auto stats = data.stats();
  model->set_clamp_range(stats.d_deg_min, stats.d_deg_max);

  const int per_epoch = cfg.steps_per_epoch(data.size());
  const int total = cfg.total_steps(data.size());
  StageTrainer trainer(model, cfg, data.rig, total);

  RunManifest run;
  run.stage = cfg.stage;
  run.dataset_fingerprint = data.fingerprint;
  {
    KeyValueDoc doc;
    write_model_config(doc, model->config());
    write_stage_config(doc, "stage" + to_string(cfg.stage), cfg);
    run.config = doc.serialize();
  }

  int first_epoch = 0;
  if (!ctx.resume.empty()) {
    const auto st = restore_checkpoint(ctx.resume, model, &trainer.optimizer());
    if (st.stage != cfg.stage) throw ConfigError("resume: checkpoint belongs to stage " + to_string(st.stage));
    first_epoch = st.epoch;
    trainer.set_steps_taken(st.step);
    model->set_clamp_range(stats.d_deg_min, stats.d_deg_max);
  }

  auto ckpt_path = [&](const std::string& tag) {
    return (fs::path(ctx.run_dir) / ("stage" + to_string(cfg.stage) + "_" + tag + ".pt")).string();
  };
  double best = std::numeric_limits<double>::infinity();
  std::string last_good = ctx.resume;

  const int epochs = (total + per_epoch - 1) / per_epoch;
  for (int epoch = first_epoch; epoch < epochs && trainer.steps_taken() < total; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix(cfg.seed, 1000003ULL + epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0.0;
    int count = 0;
    for (int b = 0; b < per_epoch && trainer.steps_taken() < total; ++b) {
      std::vector<Sample> augmented;
      for (int k = 0; k < cfg.batch_size; ++k) {
        const std::size_t pos = static_cast<std::size_t>(b) * cfg.batch_size + k;
        if (pos >= order.size()) break;
        const std::size_t i = order[pos];
        augmented.push_back(augment(data.samples[i], cfg.augment, cfg.seed,
                                    static_cast<std::uint64_t>(epoch) * data.size() + i));
      }
      std::vector<const Sample*> batch;
      for (const auto& s : augmented) batch.push_back(&s);
      double loss;
      try {
        loss = trainer.step(batch);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) +
                              (last_good.empty() ? "; no checkpoint was written" : "; last good checkpoint: " + last_good));
      }
      run.step_losses.push_back(loss);
      sum += loss;
      ++count;
      if (ctx.on_step) ctx.on_step(trainer.steps_taken(), loss);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = count > 0 ? sum / count : 0.0;
    if (ctx.validation) rec.validation = evaluate(model, *ctx.validation, EvalOptions{ctx.eval_pad_px, 0});
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!ctx.run_dir.empty()) {
      const auto path = ckpt_path("epoch" + [&] {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%03d", epoch + 1);
        return std::string(buf);
      }());
      save_checkpoint(path, model, &trainer.optimizer(), TrainState{cfg.stage, epoch + 1, trainer.steps_taken()});
      run.checkpoints.push_back(path);
      last_good = path;
      const double score = rec.validation ? rec.validation->disparity.mae : -static_cast<double>(epoch);
      if (score <= best) {
        best = score;
        const auto best_path = ckpt_path("best");
        fs::copy_file(path, best_path, fs::copy_options::overwrite_existing);
        run.best_checkpoint = best_path;
      }
    }
    run.epochs.push_back(std::move(rec));
  }
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!ctx.run_dir.empty()) run.save((fs::path(ctx.run_dir) / ("stage" + to_string(cfg.stage) + "_run.json")).string());
  return run;
}

}  // namespace omnistereo
