#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "omnistereo/errors.hpp"
#include "omnistereo/evaluate.hpp"
#include "omnistereo/trainer.hpp"

using namespace omnistereo;
namespace fs = std::filesystem;

namespace {

CameraRig small_rig() {
  CameraRig r;
  r.height_px = 64;
  r.width_px = 128;
  return r;
}

const PairDataset& small_data() {
  static const PairDataset data = [] {
    std::vector<RenderedPair> pairs;
    for (int i = 0; i < 3; ++i) pairs.push_back(render(make_random_scene(100 + i, Difficulty::easy), small_rig()));
    return make_dataset(pairs, small_rig());
  }();
  return data;
}

ModelConfig small_model() {
  auto c = desk_model_config();
  c.matcher.train_iters = 2;
  c.matcher.eval_iters = 2;
  return c;
}

StageConfig quick(Stage s, int steps) {
  auto c = StageConfig::defaults(s);
  c.max_steps = steps;
  c.batch_size = 1;
  c.augment.enabled = false;
  return c;
}

std::vector<torch::Tensor> snapshot(OmniStereoModel& m, ParamGroup g) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m->parameters_of(g)) out.push_back(p.detach().clone());
  return out;
}

bool identical(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("omnistereo_trainer_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& n) const { return (path / n).string(); }
};

}  // namespace

TEST(StageConfig, DefaultsFollowTheTrainingProtocol) {
  const auto a = StageConfig::defaults(Stage::A);
  EXPECT_EQ(a.trainable, (std::set<ParamGroup>{ParamGroup::adapters, ParamGroup::matcher}));
  EXPECT_EQ(a.loss, LossKind::l1_based);
  EXPECT_DOUBLE_EQ(a.lr_head, 2e-4);
  EXPECT_EQ(a.batch_size, 2);
  EXPECT_EQ(a.epochs, 20);
  const auto b = StageConfig::defaults(Stage::B);
  EXPECT_EQ(b.trainable,
            (std::set<ParamGroup>{ParamGroup::backbone_decoder, ParamGroup::adapters, ParamGroup::matcher}));
  EXPECT_EQ(b.loss, LossKind::silog);
  EXPECT_DOUBLE_EQ(b.lr_head, 2e-5);
  EXPECT_EQ(b.batch_size, 1);
  EXPECT_EQ(b.epochs, 12);
  EXPECT_DOUBLE_EQ(b.lr_backbone_decoder_divisor, 50.0);
  EXPECT_EQ(a.total_steps(5), 60);
  auto bad = a;
  bad.lr_backbone_decoder_divisor = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Ablate, ProducesTheTableVariants) {
  const TrainingPlan base;
  const auto same = ablate("");
  EXPECT_EQ(same.a.trainable, base.a.trainable);
  EXPECT_EQ(same.b.loss, base.b.loss);
  EXPECT_TRUE(same.run_b);

  EXPECT_TRUE(ablate("stageA=FD+OS").a.trainable.count(ParamGroup::backbone_decoder));
  EXPECT_EQ(ablate("stageB_loss=L1").b.loss, LossKind::l1_based);
  EXPECT_EQ(ablate("stageA_loss=SILog").a.loss, LossKind::silog);
  EXPECT_FALSE(ablate("stageB=none").run_b);
  const auto full = ablate("stageB=FE+FD+OS; stageA_lr=1e-5");
  EXPECT_TRUE(full.b.trainable.count(ParamGroup::backbone_encoder));
  EXPECT_DOUBLE_EQ(full.a.lr_head, 1e-5);
  EXPECT_THROW(ablate("stageA=FD+XX"), ConfigError);
  EXPECT_THROW(ablate("stageC=OS"), ConfigError);
  EXPECT_THROW(ablate("stageA"), ConfigError);
}

TEST(Augment, ZeroStrengthIsIdentity) {
  const auto& s = small_data().samples[0];
  AugmentConfig cfg;
  cfg.brightness = cfg.contrast = cfg.gamma = 0;
  const auto out = augment(s, cfg, 7, 3);
  EXPECT_TRUE(torch::equal(out.top, s.top));
  EXPECT_TRUE(torch::equal(out.bottom, s.bottom));
  cfg = {};
  cfg.enabled = false;
  EXPECT_TRUE(torch::equal(augment(s, cfg, 7, 3).top, s.top));
}

TEST(Augment, DeterministicPhotometricOnly) {
  const auto& s = small_data().samples[1];
  AugmentConfig cfg;
  cfg.brightness = 0.3;
  const auto a = augment(s, cfg, 11, 5), b = augment(s, cfg, 11, 5), c = augment(s, cfg, 11, 6);
  EXPECT_TRUE(torch::equal(a.top, b.top));
  EXPECT_TRUE(torch::equal(a.bottom, b.bottom));
  EXPECT_FALSE(torch::equal(a.top, c.top));
  EXPECT_FALSE(torch::equal(a.top, s.top));
  EXPECT_TRUE(torch::equal(a.disparity, s.disparity));
  EXPECT_TRUE(torch::equal(a.valid, s.valid));
  EXPECT_EQ(a.completed, s.completed);
  EXPECT_EQ(a.sparse, s.sparse);
  // Same transform on both views: identical inputs stay identical.
  Sample twin = s;
  twin.top = s.bottom.clone();
  const auto t = augment(twin, cfg, 11, 5);
  EXPECT_TRUE(torch::equal(t.top, t.bottom));
  EXPECT_GE(a.top.min().item<float>(), 0.0f);
  EXPECT_LE(a.top.max().item<float>(), 1.0f);
}

TEST(SubsetSample, SizesAndDeterminism) {
  EXPECT_EQ(subset_sample(100, 1.0, 0).size(), 100u);
  const auto a = subset_sample(100, 0.05, 42), b = subset_sample(100, 0.05, 42);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, subset_sample(100, 0.05, 43));
  for (double r : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0})
    EXPECT_EQ(subset_sample(37, r, 1).size(), static_cast<std::size_t>(std::ceil(r * 37 - 1e-9)));
  const auto full = subset_sample(20, 1.0, 9);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i], i);
  auto c = subset_sample(50, 0.3, 2);
  EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
  EXPECT_EQ(std::adjacent_find(c.begin(), c.end()), c.end());
  EXPECT_THROW(subset_sample(10, 0.0, 0), ConfigError);
  EXPECT_THROW(subset_sample(10, 1.5, 0), ConfigError);
  EXPECT_EQ(subset_sample(small_data(), 0.5, 0).size(), 2u);
}

TEST(Schedule, OneCycleShape) {
  OptimConfig o;
  o.warmup_fraction = 0.1;
  const double lr = 1e-3;
  EXPECT_DOUBLE_EQ(one_cycle_lr(lr, 0, 100, o), lr / 25);
  EXPECT_NEAR(one_cycle_lr(lr, 10, 100, o), lr, 1e-15);
  EXPECT_NEAR(one_cycle_lr(lr, 100, 100, o), lr / 25 / 1e4, 1e-15);
  for (int s = 11; s <= 100; ++s) EXPECT_LE(one_cycle_lr(lr, s, 100, o), one_cycle_lr(lr, s - 1, 100, o));
  for (int s = 1; s <= 10; ++s) EXPECT_GE(one_cycle_lr(lr, s, 100, o), one_cycle_lr(lr, s - 1, 100, o));
}

TEST(StageTrainer, BackboneRateIsHeadRateOverDivisor) {
  torch::manual_seed(0);
  OmniStereoModel m(small_model());
  StageTrainer tr(m, quick(Stage::B, 4), small_rig(), 4);
  for (int i = 0; i < 3; ++i) {
    tr.step({&small_data().samples[i]});
    ASSERT_TRUE(tr.backbone_lr().has_value());
    EXPECT_DOUBLE_EQ(*tr.backbone_lr(), tr.head_lr() / 50.0);
    const auto& groups = tr.optimizer().param_groups();
    ASSERT_EQ(groups.size(), 2u);
    const double read_back = static_cast<const torch::optim::AdamWOptions&>(groups[1].options()).lr();
    EXPECT_DOUBLE_EQ(read_back, static_cast<const torch::optim::AdamWOptions&>(groups[0].options()).lr() / 50.0);
  }
  OmniStereoModel m2(small_model());
  StageTrainer a(m2, quick(Stage::A, 4), small_rig(), 4);
  EXPECT_FALSE(a.backbone_lr().has_value());
}

TEST(FreezeContract, StageAKeepsBackboneAndStageBKeepsEncoder) {
  torch::manual_seed(1);
  OmniStereoModel m(small_model());
  const auto enc0 = snapshot(m, ParamGroup::backbone_encoder), dec0 = snapshot(m, ParamGroup::backbone_decoder);
  const auto head0 = snapshot(m, ParamGroup::matcher), ad0 = snapshot(m, ParamGroup::adapters);
  auto a = quick(Stage::A, 0);
  a.max_steps = 0;
  a.epochs = 2;
  a.batch_size = 2;
  const auto run = train_stage(m, small_data(), a);
  EXPECT_EQ(run.step_losses.size(), 4u);
  EXPECT_EQ(run.epochs.size(), 2u);
  EXPECT_TRUE(identical(enc0, snapshot(m, ParamGroup::backbone_encoder)));
  EXPECT_TRUE(identical(dec0, snapshot(m, ParamGroup::backbone_decoder)));
  EXPECT_FALSE(identical(head0, snapshot(m, ParamGroup::matcher)));
  EXPECT_FALSE(identical(ad0, snapshot(m, ParamGroup::adapters)));

  const auto enc1 = snapshot(m, ParamGroup::backbone_encoder), dec1 = snapshot(m, ParamGroup::backbone_decoder);
  train_stage(m, small_data(), quick(Stage::B, 3));
  EXPECT_TRUE(identical(enc1, snapshot(m, ParamGroup::backbone_encoder)));
  EXPECT_FALSE(identical(dec1, snapshot(m, ParamGroup::backbone_decoder)));
}

TEST(Training, ClampRangeComesFromDataStats) {
  OmniStereoModel m(small_model());
  train_stage(m, small_data(), quick(Stage::A, 1));
  const auto st = small_data().stats();
  EXPECT_EQ(m->config().matcher.clamp_min_deg, st.d_deg_min);
  EXPECT_EQ(m->config().matcher.clamp_max_deg, st.d_deg_max);
}

TEST(Training, DeterministicLossCurves) {
  auto run = [] {
    torch::manual_seed(5);
    OmniStereoModel m(small_model());
    auto c = quick(Stage::A, 4);
    c.deterministic = true;
    c.augment.enabled = true;
    c.seed = 3;
    return train_stage(m, small_data(), c).step_losses;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
}

TEST(Training, DivergenceAbortsAndKeepsLastCheckpoint) {
  TempDir dir;
  torch::manual_seed(2);
  OmniStereoModel m(small_model());
  auto c = quick(Stage::A, 0);
  c.epochs = 3;
  TrainContext ctx;
  ctx.run_dir = dir.path.string();
  ctx.on_step = [&](int step, double) {
    if (step == 4) {
      torch::NoGradGuard g;
      m->parameters_of(ParamGroup::matcher)[0].fill_(std::numeric_limits<float>::quiet_NaN());
    }
  };
  try {
    train_stage(m, small_data(), c, ctx);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("stageA_epoch001.pt"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(fs::exists(dir / "stageA_epoch001.pt"));
  EXPECT_FALSE(fs::exists(dir / "stageA_epoch002.pt"));

  OmniStereoModel fresh(small_model());
  StageTrainer tr(fresh, quick(Stage::A, 2), small_rig(), 2);
  {
    torch::NoGradGuard g;
    fresh->parameters_of(ParamGroup::matcher)[0].fill_(std::numeric_limits<float>::quiet_NaN());
  }
  const auto before = snapshot(fresh, ParamGroup::adapters);
  EXPECT_THROW(tr.step({&small_data().samples[0]}), DivergenceError);
  EXPECT_TRUE(identical(before, snapshot(fresh, ParamGroup::adapters)));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  torch::manual_seed(3);
  OmniStereoModel m(small_model());
  StageTrainer tr(m, quick(Stage::B, 5), small_rig(), 5);
  tr.step({&small_data().samples[0]});
  tr.step({&small_data().samples[1]});
  m->set_clamp_range(0.5, 7.0);
  const std::string path = dir / "ck.pt";
  save_checkpoint(path, m, &tr.optimizer(), TrainState{Stage::B, 4, 2});

  torch::manual_seed(99);
  OmniStereoModel other(small_model());
  StageTrainer tr2(other, quick(Stage::B, 5), small_rig(), 5);
  const auto st = restore_checkpoint(path, other, &tr2.optimizer());
  EXPECT_EQ(st.stage, Stage::B);
  EXPECT_EQ(st.epoch, 4);
  EXPECT_EQ(st.step, 2);
  const auto a = m->named_state(), b = other->named_state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i].second, b[i].second)) << a[i].first;
  EXPECT_EQ(other->config().matcher.clamp_max_deg, 7.0);

  // Optimizer moments: one more identical step keeps both models identical.
  tr2.set_steps_taken(2);
  tr.step({&small_data().samples[2]});
  tr2.step({&small_data().samples[2]});
  const auto a2 = m->named_state(), b2 = other->named_state();
  for (std::size_t i = 0; i < a2.size(); ++i) EXPECT_TRUE(torch::equal(a2[i].second, b2[i].second)) << a2[i].first;

  const auto loaded = load_model(path);
  EXPECT_EQ(loaded->config().architecture_signature(), m->config().architecture_signature());
}

TEST(Checkpoint, RejectsWrongArchitectureCorruptionAndVersion) {
  TempDir dir;
  OmniStereoModel m(small_model());
  const std::string path = dir / "ck.pt";
  save_checkpoint(path, m, nullptr, {});
  auto cfg = small_model();
  cfg.matcher.hidden_dim = 24;
  OmniStereoModel other(cfg);
  EXPECT_THROW(restore_checkpoint(path, other), ConfigError);

  {
    std::ofstream f(dir / "bad.pt", std::ios::binary);
    f << "not a checkpoint";
  }
  EXPECT_THROW(restore_checkpoint(dir / "bad.pt", m), DataError);
  EXPECT_THROW(restore_checkpoint(dir / "missing.pt", m), DataError);

  torch::serialize::OutputArchive ar;
  ar.write("version", c10::IValue(static_cast<int64_t>(kCheckpointVersion + 1)));
  ar.save_to(dir / "future.pt");
  EXPECT_THROW(restore_checkpoint(dir / "future.pt", m), DataError);

  EXPECT_NO_THROW(restore_checkpoint(path, m, nullptr));
}

TEST(Checkpoint, ResumeContinuesTheEpochCounter) {
  TempDir dir;
  torch::manual_seed(4);
  OmniStereoModel m(small_model());
  auto c = quick(Stage::A, 0);
  c.epochs = 3;
  c.batch_size = 3;
  TrainContext ctx;
  ctx.run_dir = dir.path.string();
  const auto first = train_stage(m, small_data(), c, ctx);
  ASSERT_EQ(first.checkpoints.size(), 3u);

  OmniStereoModel resumed(small_model());
  TrainContext rc;
  rc.run_dir = (dir.path / "resumed").string();
  rc.resume = first.checkpoints[1];
  const auto second = train_stage(resumed, small_data(), c, rc);
  ASSERT_EQ(second.epochs.size(), 1u);
  EXPECT_EQ(second.epochs[0].epoch, 3);
  EXPECT_EQ(second.step_losses.size(), 1u);
  EXPECT_FALSE(second.best_checkpoint.empty());
}

TEST(RunManifest, JsonCarriesTheRecord) {
  TempDir dir;
  OmniStereoModel m(small_model());
  auto c = quick(Stage::A, 2);
  TrainContext ctx;
  ctx.run_dir = dir.path.string();
  ctx.validation = &small_data();
  const auto run = train_stage(m, small_data(), c, ctx);
  ASSERT_EQ(run.epochs.size(), 1u);
  ASSERT_TRUE(run.epochs[0].validation.has_value());
  EXPECT_EQ(run.epochs[0].validation->images, 3u);
  const auto j = run.to_json();
  for (const char* key : {"step_losses", "dataset_fingerprint", "validation", "checkpoints", "wall_seconds", "config"})
    EXPECT_NE(j.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(dir / "stageA_run.json"));
  EXPECT_TRUE(fs::exists(dir / "stageA_best.pt"));
}

TEST(RunConfig, RoundTripAndUnknownKeys) {
  RunConfig rc;
  rc.plan.a.lr_head = 3e-4;
  rc.plan.b.trainable = parse_param_groups("FE+FD+OS");
  rc.model.matcher.hidden_dim = 24;
  rc.ablation = "stageB_loss=L1";
  const auto back = RunConfig::from_doc(KeyValueDoc::parse(rc.to_doc().serialize()));
  EXPECT_DOUBLE_EQ(back.plan.a.lr_head, 3e-4);
  EXPECT_EQ(back.plan.b.trainable, rc.plan.b.trainable);
  EXPECT_EQ(back.model.architecture_signature(), rc.model.architecture_signature());
  EXPECT_EQ(back.effective_plan().b.loss, LossKind::l1_based);
  EXPECT_THROW(RunConfig::from_doc(KeyValueDoc::parse("stageA.lrate = 1\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_doc(KeyValueDoc::parse("epochs = 1\n")), ConfigError);
  EXPECT_THROW(RunConfig::from_doc(KeyValueDoc::parse("model.matcher.groups = 5\n")), ConfigError);
}

TEST(Evaluate, PredictionRestoresTrainingFlag) {
  OmniStereoModel m(small_model());
  m->train();
  const auto& s = small_data().samples[0];
  const auto d = predict_disparity(m, s.top, s.bottom, small_rig(), EvalOptions{8, 0});
  EXPECT_TRUE(m->is_training());
  EXPECT_EQ(d.sizes(), (std::vector<int64_t>{1, 1, 64, 128}));
  EXPECT_FALSE(d.requires_grad());
  const auto r = evaluate(m, small_data(), EvalOptions{});
  EXPECT_EQ(r.images, 3u);
  EXPECT_GT(completed_mae(m, small_data()), 0.0);
}
