#include "omnistereo/evaluate.hpp"

#include "omnistereo/errors.hpp"
#include "omnistereo/tensor_utils.hpp"

namespace omnistereo {

torch::Tensor predict_disparity(OmniStereoModel& model, const torch::Tensor& top, const torch::Tensor& bottom,
                                const CameraRig& rig, const EvalOptions& opts) {
  if (opts.pad_px < 0) throw ConfigError("eval: padding must be non-negative");
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard guard;
  ForwardOptions fo;
  fo.iters = opts.iters > 0 ? opts.iters : model->config().matcher.eval_iters;
  fo.circular_pad_px = opts.pad_px;
  fo.all_iterates = false;
  auto out = model->forward(top, bottom, rig, fo).final();
  model->train(was_training);
  return out;
}

MetricReport evaluate(OmniStereoModel& model, const PairDataset& data, const EvalOptions& opts) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  MetricAccumulator acc(data.rig);
  for (const auto& s : data.samples) {
    const auto pred = predict_disparity(model, s.top, s.bottom, data.rig, opts);
    acc.add(tensor_to_grid(pred), s.sparse, s.completed, s.tag);
  }
  return acc.report();
}

double completed_mae(OmniStereoModel& model, const PairDataset& data, const EvalOptions& opts) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& s : data.samples) {
    const auto pred = predict_disparity(model, s.top, s.bottom, data.rig, opts);
    const auto err = (pred.to(torch::kDouble) - s.disparity.to(torch::kDouble)).abs().masked_select(s.valid);
    sum += err.sum().item<double>();
    n += err.numel();
  }
  if (n == 0) throw DataError("evaluation set has no valid pixel");
  return sum / static_cast<double>(n);
}

}  // namespace omnistereo
