#include <cmath>

#include <torch/torch.h>

#include "checks.hpp"
#include "omnistereo/geometry.hpp"
#include "omnistereo/synthdata.hpp"
#include "omnistereo/trainer.hpp"

namespace omnistereo::acceptance {

namespace {

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& ps) {
  std::vector<torch::Tensor> out;
  for (const auto& p : ps) out.push_back(p.detach().clone());
  return out;
}

int count_changed(const std::vector<torch::Tensor>& before, const std::vector<torch::Tensor>& now) {
  int changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += torch::equal(before[i], now[i]) ? 0 : 1;
  return changed;
}

PairDataset easy_pairs(const CameraRig& rig, std::uint64_t first_seed, int n) {
  std::vector<RenderedPair> pairs;
  for (int i = 0; i < n; ++i) pairs.push_back(render(make_random_scene(first_seed + i, Difficulty::easy), rig));
  return make_dataset(pairs, rig);
}

}  // namespace

Outcome photometric_consistency(const Env&) {
  Verdict v;
  CameraRig rig;  // 128 x 480
  const Difficulty kinds[] = {Difficulty::easy, Difficulty::indoor, Difficulty::outdoor};
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto pair = render(make_random_scene(700 + i, kinds[i % 3]), rig);
    const auto warped = vertical_warp(pair.image_top, disparity_deg_to_px(pair.disparity.values, rig));
    double sum = 0.0;
    std::size_t n = 0;
    for (int r = 0; r < rig.height_px; ++r)
      for (int c = 0; c < rig.width_px; ++c) {
        if (!warped.valid(r, c) || pair.occlusion(r, c) || !pair.disparity.valid(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch) sum += std::abs(warped.image.at(r, c, ch) - pair.image_bottom.at(r, c, ch));
        n += 3;
      }
    const double err = sum / static_cast<double>(n);
    worst = std::max(worst, err);
    v.require(err < 2.0 / 255.0, "pair " + std::to_string(i) + " error " + fmt(err * 255.0) + "/255");
  }
  v.note("worst mean abs error " + fmt(worst * 255.0) + "/255 over 10 pairs (easy, indoor, outdoor)");
  return v.finish();
}

Outcome freeze_contracts(const Env&) {
  Verdict v;
  CameraRig rig;
  rig.height_px = 64;
  rig.width_px = 128;
  const auto data = easy_pairs(rig, 300, 2);
  const auto stats = data.stats();
  torch::manual_seed(0);
  OmniStereoModel model(desk_model_config());
  model->set_clamp_range(stats.d_deg_min, stats.d_deg_max);
  const auto enc = model->parameters_of(ParamGroup::backbone_encoder);
  const auto dec = model->parameters_of(ParamGroup::backbone_decoder);
  const auto head = model->parameters_of(ParamGroup::matcher);
  const std::vector<const Sample*> batch = {&data.samples[0], &data.samples[1]};

  auto a = StageConfig::defaults(Stage::A);
  a.max_steps = 3;
  auto enc0 = snapshot(enc), dec0 = snapshot(dec), head0 = snapshot(head);
  {
    StageTrainer t(model, a, rig, a.max_steps);
    for (int i = 0; i < a.max_steps; ++i) t.step(batch);
    v.require(!t.backbone_lr().has_value(), "stage A optimizer has a backbone group");
  }
  v.require(count_changed(enc0, enc) == 0 && count_changed(dec0, dec) == 0, "stage A changed backbone parameters");
  v.require(count_changed(head0, head) > 0, "stage A did not update the matcher");
  v.note("stage A: " + std::to_string(enc.size() + dec.size()) + " backbone tensors unchanged");

  auto b = StageConfig::defaults(Stage::B);
  b.max_steps = 4;
  enc0 = snapshot(enc), dec0 = snapshot(dec);
  double worst_ratio = 0.0;
  {
    StageTrainer t(model, b, rig, 100);
    for (int i = 0; i < b.max_steps; ++i) {
      t.step(batch);
      const auto& groups = t.optimizer().param_groups();
      if (groups.size() != 2) {
        v.require(false, "stage B optimizer lacks a backbone group");
        break;
      }
      const double head_lr = static_cast<const torch::optim::AdamWOptions&>(groups[0].options()).lr();
      const double bb_lr = static_cast<const torch::optim::AdamWOptions&>(groups[1].options()).lr();
      worst_ratio = std::max(worst_ratio, std::abs(head_lr / bb_lr - 50.0));
    }
  }
  const int enc_changed = count_changed(enc0, enc), dec_changed = count_changed(dec0, dec);
  v.require(enc_changed == 0, "stage B changed the backbone encoder");
  v.require(dec_changed > 0, "stage B left the backbone decoder untouched");
  v.require(worst_ratio < 1e-9, "backbone rate is not head rate / 50");
  v.note("stage B: encoder unchanged, " + std::to_string(dec_changed) + "/" + std::to_string(dec.size()) +
         " decoder tensors changed, head/backbone lr ratio 50 (dev " + fmt(worst_ratio) + ")");
  return v.finish();
}

Outcome determinism(const Env&) {
  Verdict v;
  CameraRig rig;
  const auto data = easy_pairs(rig, 500, 4);
  auto cfg = StageConfig::defaults(Stage::A);
  cfg.max_steps = 50;
  cfg.batch_size = 1;
  cfg.seed = 17;
  cfg.deterministic = true;

  auto run = [&] {
    torch::manual_seed(cfg.seed);
    OmniStereoModel model(desk_model_config());
    auto manifest = train_stage(model, data, cfg);
    return std::make_pair(manifest.step_losses, snapshot(model->parameters()));
  };
  const auto [loss1, params1] = run();
  const auto [loss2, params2] = run();
  v.require(loss1.size() == 50 && loss1 == loss2, "loss curves differ");
  v.require(count_changed(params1, params2) == 0, "final parameters differ");
  if (!loss1.empty())
    v.note("50 steps, identical loss curves (first " + fmt(loss1.front(), 6) + ", last " + fmt(loss1.back(), 6) +
           ") and parameters");
  return v.finish();
}

}  // namespace omnistereo::acceptance
