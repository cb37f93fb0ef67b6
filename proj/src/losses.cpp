#include "omnistereo/losses.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "omnistereo/errors.hpp"

namespace omnistereo {

void LossConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("loss: gamma must lie in (0, 1]");
  if (!(lambda_silog >= 0.0 && lambda_silog <= 1.0)) throw ConfigError("loss: lambda must lie in [0, 1]");
  if (!(eps_log > 0.0)) throw ConfigError("loss: eps_log must be positive");
}

std::string to_string(LossKind k) { return k == LossKind::l1_based ? "L1" : "SILog"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "L1" || s == "l1" || s == "l1_based" || s == "L1-based") return LossKind::l1_based;
  if (s == "SILog" || s == "silog") return LossKind::silog;
  throw ConfigError("unknown loss '" + s + "' (expected L1 or SILog)");
}

namespace {

// Masked error values as a flat tensor.
torch::Tensor masked_error(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                           const char* who) {
  const auto m = mask.to(torch::kBool).expand_as(pred);
  const auto n = m.sum().item<int64_t>();
  if (n == 0) throw std::invalid_argument(std::string(who) + ": empty mask");
  return torch::masked_select(pred, m) - torch::masked_select(gt.expand_as(pred), m);
}

}  // namespace

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  return masked_error(pred, gt, mask, "l1_loss").abs().mean();
}

torch::Tensor smooth_l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  const auto e = masked_error(pred, gt, mask, "smooth_l1_loss");
  const auto a = e.abs();
  return torch::where(a < 1.0, 0.5 * e * e, a - 0.5).mean();
}

torch::Tensor silog_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask,
                         double lambda, double eps_log) {
  const auto m = mask.to(torch::kBool).expand_as(pred);
  if (m.sum().item<int64_t>() == 0) throw std::invalid_argument("silog_loss: empty mask");
  const auto p = torch::masked_select(pred, m).clamp_min(eps_log);
  const auto g = torch::masked_select(gt.expand_as(pred), m).clamp_min(eps_log);
  const auto delta = torch::log(p) - torch::log(g);
  const auto mean = delta.mean();
  return (delta * delta).mean() - lambda * mean * mean;
}

namespace {

template <typename Term>
torch::Tensor iterative(const std::vector<torch::Tensor>& seq, const LossConfig& cfg, Term first, Term rest) {
  cfg.validate();
  if (seq.size() < 2) throw std::invalid_argument("sequence loss: need the initial estimate and at least one iterate");
  const int n = static_cast<int>(seq.size()) - 1;
  auto total = first(seq[0]);
  for (int i = 1; i <= n; ++i) total = total + std::pow(cfg.gamma, n - i) * rest(seq[i]);
  return total;
}

}  // namespace

torch::Tensor loss_stage_a(const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                           const torch::Tensor& mask, const LossConfig& cfg) {
  using Fn = std::function<torch::Tensor(const torch::Tensor&)>;
  return iterative<Fn>(
      seq, cfg, [&](const torch::Tensor& p) { return smooth_l1_loss(p, gt, mask); },
      [&](const torch::Tensor& p) { return l1_loss(p, gt, mask); });
}

torch::Tensor loss_stage_b(const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                           const torch::Tensor& mask, const LossConfig& cfg) {
  using Fn = std::function<torch::Tensor(const torch::Tensor&)>;
  const Fn term = [&](const torch::Tensor& p) { return silog_loss(p, gt, mask, cfg.lambda_silog, cfg.eps_log); };
  return iterative<Fn>(seq, cfg, term, term);
}

torch::Tensor sequence_loss(LossKind kind, const std::vector<torch::Tensor>& seq, const torch::Tensor& gt,
                            const torch::Tensor& mask, const LossConfig& cfg) {
  return kind == LossKind::l1_based ? loss_stage_a(seq, gt, mask, cfg) : loss_stage_b(seq, gt, mask, cfg);
}

}  // namespace omnistereo
