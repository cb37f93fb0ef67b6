#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "omnistereo/dataio.hpp"
#include "omnistereo/kvconfig.hpp"
#include "omnistereo/losses.hpp"
#include "omnistereo/metrics.hpp"
#include "omnistereo/model.hpp"
#include "omnistereo/synthdata.hpp"

namespace omnistereo {

enum class Stage { A, B };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

/// One training pair held in memory. Tensors are [1, C, H, W].
struct Sample {
  torch::Tensor top;
  torch::Tensor bottom;
  torch::Tensor disparity;  // completed ground truth, degrees
  torch::Tensor valid;      // bool
  DisparityMap sparse;
  DisparityMap completed;
  SceneTag tag = SceneTag::synthetic;
};

struct PairDataset {
  CameraRig rig;
  std::vector<Sample> samples;
  /// Content hash of the source, empty for in-memory data.
  std::string fingerprint;

  std::size_t size() const { return samples.size(); }
  /// Min/max of the completed ground truth. Throws DataError when no pixel is valid.
  DisparityStats stats() const;
  PairDataset subset(const std::vector<std::size_t>& indices) const;
};

PairDataset load_dataset(const DatasetManifest& manifest);
/// Rendered pairs; the sparse map is the dense one restricted to the LiDAR pattern.
PairDataset make_dataset(const std::vector<RenderedPair>& pairs, const CameraRig& rig);

struct AugmentConfig {
  /// Additive brightness offset drawn from [-b, b].
  double brightness = 0.1;
  /// Contrast factor drawn from [1 - c, 1 + c] around the image mean.
  double contrast = 0.1;
  /// Gamma drawn from [1 - g, 1 + g].
  double gamma = 0.1;
  bool enabled = true;

  void validate() const;
};

/// Photometric jitter applied identically to both images; ground truth is
/// untouched. Deterministic per (seed, index).
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed, std::uint64_t index);

/// ceil(ratio * n) distinct indices in ascending order, uniform without
/// replacement and deterministic per seed. Throws ConfigError unless 0 < ratio <= 1.
std::vector<std::size_t> subset_sample(std::size_t n, double ratio, std::uint64_t seed);
PairDataset subset_sample(const PairDataset& data, double ratio, std::uint64_t seed);

struct OptimConfig {
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Fraction of the steps spent warming up from lr / div_factor.
  double warmup_fraction = 0.01;
  double div_factor = 25.0;
  /// Final rate is lr / (div_factor * final_div_factor).
  double final_div_factor = 1e4;
  /// 0 disables clipping.
  double clip_grad_norm = 1.0;

  void validate() const;
};

/// One-cycle schedule: linear warmup then cosine annealing.
double one_cycle_lr(double max_lr, int step, int total_steps, const OptimConfig& cfg);

struct StageConfig {
  Stage stage = Stage::A;
  std::set<ParamGroup> trainable;
  LossKind loss = LossKind::l1_based;
  double lr_head = 2e-4;
  /// Rate of the backbone groups = lr_head / divisor.
  double lr_backbone_decoder_divisor = 50.0;
  int batch_size = 2;
  int epochs = 20;
  /// Positive values override the epoch budget with a step budget.
  int max_steps = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  OptimConfig optim;
  AugmentConfig augment;
  LossConfig loss_cfg;

  static StageConfig defaults(Stage s);
  void validate() const;
  int steps_per_epoch(std::size_t dataset_size) const;
  int total_steps(std::size_t dataset_size) const;
};

/// Both stages of a run. `run_b == false` is the single-stage "OS only" variant.
struct TrainingPlan {
  StageConfig a = StageConfig::defaults(Stage::A);
  StageConfig b = StageConfig::defaults(Stage::B);
  bool run_b = true;
};

/// Applies a delta such as "stageA=FD+OS; stageB_loss=L1" to `base`.
/// Keys: stageA, stageB (component sets, or "none" for stage B), stageA_loss,
/// stageB_loss, stageA_lr, stageB_lr. Empty delta returns `base`.
TrainingPlan ablate(const std::string& delta, const TrainingPlan& base = {});

/// Stage settings as "<prefix>.<field> = value" lines and back. Unknown
/// "<prefix>." keys throw ConfigError.
void write_stage_config(KeyValueDoc& doc, const std::string& prefix, const StageConfig& cfg);
StageConfig read_stage_config(const KeyValueDoc& doc, const std::string& prefix, const StageConfig& fallback);

void write_model_config(KeyValueDoc& doc, const ModelConfig& cfg);
ModelConfig read_model_config(const KeyValueDoc& doc, const ModelConfig& fallback);

/// Full run configuration file: "model.*", "stageA.*", "stageB.*", "run_b",
/// "ablate" (applied last). Rejects unknown keys.
struct RunConfig {
  ModelConfig model = desk_model_config();
  TrainingPlan plan;
  std::string ablation;

  static RunConfig from_doc(const KeyValueDoc& doc);
  static RunConfig load(const std::string& path);
  KeyValueDoc to_doc() const;
  /// Plan with the ablation delta applied.
  TrainingPlan effective_plan() const;
};

struct TrainState {
  Stage stage = Stage::A;
  /// Epochs completed.
  int epoch = 0;
  /// Optimizer steps taken.
  int step = 0;
};

inline constexpr int kCheckpointVersion = 1;

/// Writes parameters, model configuration, clamp range, optional optimizer
/// state and the training counters.
void save_checkpoint(const std::string& path, OmniStereoModel& model, torch::optim::Optimizer* optimizer,
                     const TrainState& state);
/// Restores into an existing model. Throws DataError for unreadable files or
/// a version mismatch and ConfigError when the architecture differs.
TrainState restore_checkpoint(const std::string& path, OmniStereoModel& model,
                              torch::optim::Optimizer* optimizer = nullptr);
/// Builds the model recorded in the checkpoint and loads its parameters.
OmniStereoModel load_model(const std::string& path);
ModelConfig checkpoint_model_config(const std::string& path);

/// Owns the optimizer of one stage: parameter group 0 holds adapters and
/// matcher, group 1 the trainable backbone parameters.
class StageTrainer {
 public:
  StageTrainer(OmniStereoModel model, StageConfig cfg, CameraRig rig, int total_steps);

  /// One optimizer step on a batch of samples. Returns the loss value.
  /// Throws DivergenceError on a non-finite loss without touching the weights.
  double step(const std::vector<const Sample*>& batch);

  /// Current rate of the head and backbone groups as stored in the optimizer.
  double head_lr() const;
  std::optional<double> backbone_lr() const;

  torch::optim::AdamW& optimizer() { return *opt_; }
  int steps_taken() const { return step_; }
  void set_steps_taken(int s) { step_ = s; }
  const StageConfig& config() const { return cfg_; }

 private:
  void apply_schedule();

  OmniStereoModel model_;
  StageConfig cfg_;
  CameraRig rig_;
  int total_steps_;
  int step_ = 0;
  bool has_backbone_group_ = false;
  std::vector<torch::Tensor> trainable_;
  std::unique_ptr<torch::optim::AdamW> opt_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<MetricReport> validation;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config;
  std::string dataset_fingerprint;
  Stage stage = Stage::A;
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> checkpoints;
  /// Best validation checkpoint (or the last one without validation data).
  std::string best_checkpoint;
  double wall_seconds = 0.0;

  std::string to_json() const;
  void save(const std::string& path) const;
};

struct TrainContext {
  /// Checkpoints go here as stage<S>_epoch<NNN>.pt and stage<S>_best.pt;
  /// empty disables checkpointing.
  std::string run_dir;
  const PairDataset* validation = nullptr;
  /// Checkpoint to resume from (same stage): restores weights, optimizer
  /// and counters.
  std::string resume;
  /// Called after every step with (step, loss).
  std::function<void(int, double)> on_step;
  int eval_pad_px = 0;
};

/// Trains one stage. The clamp range is taken from the training data stats.
/// On divergence the last epoch checkpoint stays on disk and DivergenceError
/// is rethrown with its path.
RunManifest train_stage(OmniStereoModel& model, const PairDataset& data, const StageConfig& cfg,
                        const TrainContext& ctx = {});

/// Enables deterministic kernels and a single intra-op thread.
void set_deterministic(bool on);

}  // namespace omnistereo
