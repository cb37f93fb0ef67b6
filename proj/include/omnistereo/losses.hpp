#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace omnistereo {

struct LossConfig {
  /// Attenuation of earlier iterations.
  double gamma = 0.9;
  /// Weight of the squared-mean term in SILog.
  double lambda_silog = 0.15;
  /// Floor applied before taking logarithms, degrees.
  double eps_log = 1e-6;

  void validate() const;
};

enum class LossKind { l1_based, silog };

std::string to_string(LossKind k);
/// "L1", "l1", "l1_based" or "SILog", "silog".
LossKind parse_loss_kind(const std::string& s);

// All losses reduce over the pixels where `mask` (bool, broadcastable to
// pred) is set and throw std::invalid_argument on an empty mask. They are
// dtype-generic and differentiable through autograd.

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);
/// Mean of 0.5 e^2 for |e| < 1 and |e| - 0.5 otherwise.
torch::Tensor smooth_l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);
/// (1/n) sum(delta^2) - (lambda/n^2) (sum delta)^2 with
/// delta = log max(pred, eps) - log max(gt, eps).
torch::Tensor silog_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         double lambda, double eps_log = 1e-6);

/// smooth_l1(seq[0]) + sum_{i=1..N} gamma^(N-i) l1(seq[i]).
torch::Tensor loss_stage_a(const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                           const torch::Tensor& mask, const LossConfig& cfg);
/// silog(seq[0]) + sum_{i=1..N} gamma^(N-i) silog(seq[i]).
torch::Tensor loss_stage_b(const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                           const torch::Tensor& mask, const LossConfig& cfg);
torch::Tensor sequence_loss(LossKind kind, const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                            const torch::Tensor& mask, const LossConfig& cfg);

}  // namespace omnistereo
