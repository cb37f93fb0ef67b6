#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "omnistereo/dataio.hpp"
#include "omnistereo/errors.hpp"
#include "omnistereo/evaluate.hpp"
#include "omnistereo/synthdata.hpp"
#include "omnistereo/tensor_utils.hpp"
#include "omnistereo/trainer.hpp"
#include "omnistereo/viz.hpp"

using namespace omnistereo;
namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::uint64_t seed = 0;
  int pairs = 0;
  std::string difficulty = "indoor";
  std::string out;
  std::string split = "train";
  int height = 128;
  int width = 480;
  double baseline = 0.2;
  double scale = 1000.0;
};

struct TrainArgs {
  std::string config;
  std::string stage = "AB";
  std::string data;
  std::string val;
  double ratio = 1.0;
  std::string resume;
  std::string init;
  std::string out;
  std::string ablate;
  int pad = 0;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  int pad = 64;
  int iters = 0;
  std::string report;
};

struct PredictArgs {
  std::string checkpoint;
  std::string top;
  std::string bottom;
  std::string out;
  std::string depth_out;
  double baseline = 0.0;
  int pad = 64;
  int iters = 0;
  double scale = 1000.0;
};

struct VizArgs {
  std::string disparity;
  std::string out;
  bool linear = false;
  double scale = 1000.0;
  double vmin = 0.0;
  double vmax = 0.0;
};

void write_text(const std::string& path, const std::string& text) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

int run_synth(const SynthArgs& a) {
  if (a.pairs < 1) throw ConfigError("--pairs must be at least 1");
  CameraRig rig;
  rig.height_px = a.height;
  rig.width_px = a.width;
  rig.baseline_m = a.baseline;
  rig.validate();
  const auto difficulty = parse_difficulty(a.difficulty);
  std::vector<RenderedPair> pairs;
  for (int i = 0; i < a.pairs; ++i)
    pairs.push_back(render(make_random_scene(a.seed + static_cast<std::uint64_t>(i), difficulty, a.baseline), rig));
  const auto m = write_dataset(pairs, rig, a.out, a.split, a.scale);
  std::cout << "wrote " << m.size() << " pairs to " << m.base_dir << "\n";
  return exit_code::kOk;
}

void log_progress(Stage s, int total, int step, double loss) {
  if (step == 1 || step % 25 == 0 || step == total)
    std::cout << "stage " << to_string(s) << " step " << step << "/" << total << " loss " << loss << std::endl;
}

RunManifest run_one_stage(OmniStereoModel& model, const PairDataset& train, const PairDataset* val,
                          const StageConfig& cfg, const std::string& out, const std::string& resume, int pad) {
  TrainContext ctx;
  ctx.run_dir = out;
  ctx.validation = val;
  ctx.resume = resume;
  ctx.eval_pad_px = pad;
  const int total = cfg.total_steps(train.size());
  ctx.on_step = [&](int step, double loss) { log_progress(cfg.stage, total, step, loss); };
  auto run = train_stage(model, train, cfg, ctx);
  std::cout << "stage " << to_string(cfg.stage) << " done, best checkpoint " << run.best_checkpoint << "\n";
  return run;
}

int run_train(const TrainArgs& a) {
  if (a.stage != "A" && a.stage != "B" && a.stage != "AB") throw ConfigError("--stage must be A, B or AB");
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.ablate.empty()) rc.ablation = rc.ablation.empty() ? a.ablate : rc.ablation + ";" + a.ablate;
  const TrainingPlan plan = rc.effective_plan();
  if (!a.resume.empty() && a.stage == "AB") throw ConfigError("--resume needs a single --stage (A or B)");
  if (a.stage == "B" && a.init.empty() && a.resume.empty())
    throw ConfigError("--stage B needs a Stage A checkpoint via --init (or --resume)");

  const auto full = load_dataset(load_manifest(a.data));
  const auto train = a.ratio < 1.0 ? subset_sample(full, a.ratio, plan.a.seed) : full;
  std::optional<PairDataset> val;
  if (!a.val.empty()) val = load_dataset(load_manifest(a.val));
  fs::create_directories(a.out);
  {
    auto doc = rc.to_doc();
    doc.set("train.stage", a.stage);
    doc.set("train.data", a.data);
    doc.set("train.ratio", format_double(a.ratio));
    doc.set("train.subset_size", std::to_string(train.size()));
    doc.set("train.dataset_fingerprint", full.fingerprint);
    write_text((fs::path(a.out) / "run_config.txt").string(), doc.serialize());
  }
  const PairDataset* vp = val ? &*val : nullptr;

  if (a.stage == "A" || a.stage == "AB") {
    OmniStereoModel model = a.resume.empty() ? OmniStereoModel(rc.model) : load_model(a.resume);
    const auto run = run_one_stage(model, train, vp, plan.a, a.out, a.resume, a.pad);
    if (a.stage == "A" || !plan.run_b) return exit_code::kOk;
    OmniStereoModel b = load_model(run.best_checkpoint);
    run_one_stage(b, train, vp, plan.b, a.out, "", a.pad);
    return exit_code::kOk;
  }
  OmniStereoModel model = load_model(a.resume.empty() ? a.init : a.resume);
  run_one_stage(model, train, vp, plan.b, a.out, a.resume, a.pad);
  return exit_code::kOk;
}

int run_eval(const EvalArgs& a) {
  auto model = load_model(a.checkpoint);
  const auto data = load_dataset(load_manifest(a.data));
  const auto report = evaluate(model, data, EvalOptions{a.pad, a.iters});
  const std::string kv = "pad = " + std::to_string(a.pad) + "\n" + report.to_key_value();
  std::cout << kv;
  if (!a.report.empty()) {
    write_text(a.report, kv);
    write_text(fs::path(a.report).replace_extension(".csv").string(), report.to_csv());
  }
  return exit_code::kOk;
}

int run_predict(const PredictArgs& a) {
  const Image top = read_image(a.top), bottom = read_image(a.bottom);
  if (top.rows != bottom.rows || top.cols != bottom.cols)
    throw DataError("top image is " + std::to_string(top.rows) + "x" + std::to_string(top.cols) +
                    " but bottom image is " + std::to_string(bottom.rows) + "x" + std::to_string(bottom.cols));
  CameraRig rig;
  rig.height_px = top.rows;
  rig.width_px = top.cols;
  if (a.baseline > 0) rig.baseline_m = a.baseline;
  rig.validate();
  auto model = load_model(a.checkpoint);
  const auto pred = predict_disparity(model, image_to_tensor(top), image_to_tensor(bottom), rig,
                                      EvalOptions{a.pad, a.iters});
  DisparityMap disp(rig.height_px, rig.width_px);
  disp.values = tensor_to_grid(pred);
  for (auto& v : disp.valid.data()) v = 1;
  DisparityEncoding enc;
  enc.scale = a.scale;
  write_disparity(disp, a.out, enc);
  std::cout << "wrote disparity " << a.out << "\n";
  if (!a.depth_out.empty()) {
    if (!(a.baseline > 0)) throw ConfigError("--depth-out needs --baseline (meters)");
    const auto depth = disparity_to_depth(disp, polar_angle_map(rig), rig);
    write_depth(depth.depth, a.depth_out);
    std::cout << "wrote depth " << a.depth_out << " (" << depth.degenerate << " degenerate pixels)\n";
  }
  return exit_code::kOk;
}

int run_viz(const VizArgs& a) {
  DisparityEncoding enc;
  enc.scale = a.scale;
  const auto disp = read_disparity(a.disparity, enc);
  ColorizeOptions opts;
  opts.log_scale = !a.linear;
  if (a.vmin > 0) opts.vmin = a.vmin;
  if (a.vmax > 0) opts.vmax = a.vmax;
  write_image(colorize_disparity(disp, opts), a.out);
  std::cout << "wrote " << a.out << "\n";
  return exit_code::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Omnidirectional top-bottom stereo: synthesis, training, evaluation, prediction and visualization"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset split");
  synth->add_option("--seed", sa.seed, "Seed of the first scene; pair i uses seed + i");
  synth->add_option("--pairs", sa.pairs, "Number of pairs")->required();
  synth->add_option("--difficulty", sa.difficulty, "easy, indoor or outdoor");
  synth->add_option("--out", sa.out, "Dataset root")->required();
  synth->add_option("--split", sa.split, "train, val or test");
  synth->add_option("--height", sa.height, "Image rows");
  synth->add_option("--width", sa.width, "Image columns");
  synth->add_option("--baseline", sa.baseline, "Camera baseline in meters");
  synth->add_option("--scale", sa.scale, "Disparity fixed-point scale");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Two-stage training");
  train->add_option("--config", ta.config, "Run configuration file (key = value)");
  train->add_option("--stage", ta.stage, "A, B or AB");
  train->add_option("--data", ta.data, "Training split directory or manifest")->required();
  train->add_option("--val", ta.val, "Validation split evaluated after every epoch");
  train->add_option("--ratio", ta.ratio, "Fraction of the training set to sample");
  train->add_option("--resume", ta.resume, "Checkpoint of the same stage to continue");
  train->add_option("--init", ta.init, "Stage A checkpoint to start Stage B from");
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--ablate", ta.ablate, "Ablation delta, e.g. \"stageA=FD+OS; stageB_loss=L1\"");
  train->add_option("--pad", ta.pad, "Circular padding used for validation");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", ea.data, "Split directory or manifest")->required();
  eval->add_option("--pad", ea.pad, "Circular padding in pixels per side");
  eval->add_option("--iters", ea.iters, "Refinement iterations (0 = model default)");
  eval->add_option("--report", ea.report, "Key-value report path; a CSV is written next to it");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Predict disparity for one image pair");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  predict->add_option("--top", pa.top, "Top image")->required();
  predict->add_option("--bottom", pa.bottom, "Bottom image")->required();
  predict->add_option("--out", pa.out, "Disparity PNG (16-bit fixed point)")->required();
  predict->add_option("--depth-out", pa.depth_out, "Depth PNG (16-bit, meters * 256)");
  predict->add_option("--baseline", pa.baseline, "Camera baseline in meters");
  predict->add_option("--pad", pa.pad, "Circular padding in pixels per side");
  predict->add_option("--iters", pa.iters, "Refinement iterations (0 = model default)");
  predict->add_option("--scale", pa.scale, "Disparity fixed-point scale");

  VizArgs va;
  auto* viz = app.add_subcommand("viz", "Color-map a disparity file");
  viz->add_option("--disparity", va.disparity, "Disparity PNG")->required();
  viz->add_option("--out", va.out, "Color PNG")->required();
  viz->add_flag("--linear", va.linear, "Linear instead of logarithmic scale");
  viz->add_option("--scale", va.scale, "Disparity fixed-point scale");
  viz->add_option("--vmin", va.vmin, "Lower end of the color range (degrees)");
  viz->add_option("--vmax", va.vmax, "Upper end of the color range (degrees)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_code::kOk : exit_code::kConfig;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*predict) return run_predict(pa);
    if (*viz) return run_viz(va);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return exit_code::kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code::kOk;
}
