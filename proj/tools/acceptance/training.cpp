#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <torch/torch.h>

#include "checks.hpp"
#include "omnistereo/evaluate.hpp"
#include "omnistereo/synthdata.hpp"
#include "omnistereo/trainer.hpp"

namespace omnistereo::acceptance {

namespace fs = std::filesystem;

namespace {

PairDataset render_set(std::uint64_t first_seed, int n, bool mixed) {
  CameraRig rig;  // 128 x 480
  const Difficulty kinds[] = {Difficulty::easy, Difficulty::indoor, Difficulty::outdoor};
  std::vector<RenderedPair> pairs;
  for (int i = 0; i < n; ++i)
    pairs.push_back(render(make_random_scene(first_seed + i, mixed ? kinds[i % 3] : Difficulty::easy), rig));
  return make_dataset(pairs, rig);
}

OmniStereoModel fresh_model(std::uint64_t seed) {
  torch::manual_seed(seed);
  return OmniStereoModel(desk_model_config());
}

TrainContext progress(const std::string& label, int every = 50) {
  TrainContext ctx;
  ctx.on_step = [label, every](int step, double loss) {
    if (step % every == 0) std::cerr << "  [" << label << "] step " << step << " loss " << loss << std::endl;
  };
  return ctx;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

}  // namespace

Outcome overfit(const Env& env) {
  Verdict v;
  const auto data = render_set(1000, 10, false);
  auto model = fresh_model(0);

  auto a = StageConfig::defaults(Stage::A);
  a.max_steps = 500;
  a.seed = 1;
  a.deterministic = true;
  std::ostringstream curve;
  curve << "stage,step,train_mae_deg\n";
  double best_a = std::numeric_limits<double>::infinity();
  int reached_at = -1;
  auto ctx = progress("overfit A");
  auto log_step = ctx.on_step;
  ctx.on_step = [&](int step, double loss) {
    log_step(step, loss);
    if (step % 50 != 0) return;
    const double m = completed_mae(model, data);
    curve << "A," << step << "," << m << "\n";
    std::cerr << "  [overfit A] step " << step << " train MAE " << m << " deg" << std::endl;
    best_a = std::min(best_a, m);
    if (m < 0.5 && reached_at < 0) reached_at = step;
  };
  train_stage(model, data, a, ctx);
  const double end_a = completed_mae(model, data);

  auto b = StageConfig::defaults(Stage::B);
  b.max_steps = 100;
  b.seed = 2;
  b.deterministic = true;
  train_stage(model, data, b, progress("overfit B", 25));
  const double end_b = completed_mae(model, data);
  curve << "B,100," << end_b << "\n";
  write_file(fs::path(env.out_dir) / "overfit_curve.csv", curve.str());

  v.note("stage A train MAE " + fmt(end_a) + " deg after 500 steps (best " + fmt(best_a) + ")");
  v.require(reached_at > 0, "stage A never reached 0.5 deg within 500 steps");
  if (reached_at > 0) v.note("below 0.5 deg at step " + std::to_string(reached_at));
  v.note("after 100 stage B steps " + fmt(end_b) + " deg (" + fmt(100.0 * (end_b / end_a - 1.0), 3) + "%)");
  v.require(end_b <= 1.1 * end_a, "stage B degraded train MAE by more than 10%");
  return v.finish();
}

Outcome stage_ordering(const Env& env) {
  Verdict v;
  const auto train = render_set(2000, 50, true);
  const auto val = render_set(3000, 10, true);
  constexpr int kStepsA = 600, kStepsB = 300;

  TrainingPlan two_stage;
  two_stage.a.max_steps = kStepsA;
  two_stage.a.batch_size = 1;
  two_stage.b.max_steps = kStepsB;
  two_stage.a.deterministic = two_stage.b.deterministic = true;
  auto model1 = fresh_model(0);
  train_stage(model1, train, two_stage.a, progress("L1 then SILog, A"));
  const auto r_a = evaluate(model1, val);
  train_stage(model1, train, two_stage.b, progress("L1 then SILog, B"));
  const auto r1 = evaluate(model1, val);

  auto silog_only = ablate("stageA_loss=SILog; stageB=none", two_stage);
  silog_only.a.max_steps = kStepsA + kStepsB;
  auto model2 = fresh_model(0);
  train_stage(model2, train, silog_only.a, progress("SILog only"));
  const auto r2 = evaluate(model2, val);

  std::ostringstream rep;
  rep << "schedule,steps,val_disparity_mae_deg,val_depth_mae_m\n"
      << "A(L1)," << kStepsA << "," << r_a.disparity.mae << "," << r_a.depth.mae << "\n"
      << "A(L1)->B(SILog)," << kStepsA + kStepsB << "," << r1.disparity.mae << "," << r1.depth.mae << "\n"
      << "A(SILog)," << kStepsA + kStepsB << "," << r2.disparity.mae << "," << r2.depth.mae << "\n";
  write_file(fs::path(env.out_dir) / "stage_ordering.csv", rep.str());

  v.note("validation MAE A(L1)->B(SILog) " + fmt(r1.disparity.mae, 4) + " deg vs A(SILog) " +
         fmt(r2.disparity.mae, 4) + " deg over " + std::to_string(kStepsA + kStepsB) + " steps (" +
         fmt(r_a.disparity.mae, 4) + " deg after the L1 stage alone)");
  v.require(r1.disparity.mae <= r2.disparity.mae, "two-stage schedule is worse than SILog-only");
  return v.finish();
}

Outcome ratio_sweep(const Env& env) {
  Verdict v;
  const auto pool = render_set(4000, 100, true);
  const auto val = render_set(5000, 10, true);
  constexpr int kStepsA = 150, kStepsB = 50;

  std::ostringstream csv;
  csv << "ratio,pairs,val_disparity_mae_deg,val_depth_mae_m\n";
  std::vector<double> maes;
  for (double ratio : {0.01, 0.05, 0.2, 1.0}) {
    const auto subset = subset_sample(pool, ratio, 3);
    TrainingPlan plan;
    plan.a.max_steps = kStepsA;
    plan.a.batch_size = 1;
    plan.b.max_steps = kStepsB;
    plan.a.deterministic = plan.b.deterministic = true;
    auto model = fresh_model(0);
    const std::string label = "ratio " + fmt(100 * ratio) + "%";
    train_stage(model, subset, plan.a, progress(label + " A"));
    train_stage(model, subset, plan.b, progress(label + " B"));
    const auto r = evaluate(model, val);
    csv << ratio << "," << subset.size() << "," << r.disparity.mae << "," << r.depth.mae << "\n";
    maes.push_back(r.disparity.mae);
    v.require(std::isfinite(r.disparity.mae), label + " produced a non-finite MAE");
  }

  std::ostringstream mono;
  mono << "Validation disparity MAE by training ratio (" << kStepsA << " stage A + " << kStepsB
       << " stage B steps each)\n";
  int violations = 0;
  for (std::size_t i = 1; i < maes.size(); ++i) {
    const bool down = maes[i] <= maes[i - 1];
    violations += down ? 0 : 1;
    mono << "step " << i << ": " << maes[i - 1] << " -> " << maes[i] << (down ? " (non-increasing)" : " (increase)")
         << "\n";
  }
  mono << "monotone non-increasing: " << (violations == 0 ? "yes" : "no") << "\n";
  write_file(fs::path(env.out_dir) / "ratio_sweep.csv", csv.str());
  write_file(fs::path(env.out_dir) / "ratio_sweep_monotonicity.txt", mono.str());

  std::string curve;
  for (double m : maes) curve += (curve.empty() ? "" : ", ") + fmt(m);
  v.note("MAE at 1/5/20/100%: " + curve + " deg; monotone " + (violations == 0 ? "yes" : "no") + " (" +
         std::to_string(violations) + " increases)");
  v.require(maes.size() == 4, "sweep did not finish");
  return v.finish();
}

}  // namespace omnistereo::acceptance
