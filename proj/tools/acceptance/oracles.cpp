#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include <torch/torch.h>

#include "checks.hpp"
#include "omnistereo/geometry.hpp"
#include "omnistereo/losses.hpp"
#include "omnistereo/matcher.hpp"
#include "omnistereo/metrics.hpp"

namespace omnistereo::acceptance {

namespace {

constexpr double kPi = std::numbers::pi;

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

std::vector<double> flat(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kDouble);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

torch::Tensor as_map(const std::vector<double>& v, int rows, int cols) {
  return torch::tensor(v, torch::kDouble).reshape({1, 1, rows, cols});
}

}  // namespace

Outcome geometry_oracles(const Env&) {
  Verdict v;
  std::mt19937_64 rng(11);
  CameraRig rig;
  rig.baseline_m = 0.27;
  const auto theta = polar_angle_map(rig);

  // Disparities of points at random positive depths, so every pixel is physical.
  DisparityMap disp(rig.height_px, rig.width_px);
  std::uniform_real_distribution<double> u(0.3, 80.0);
  for (int r = 0; r < rig.height_px; ++r) {
    const double th = kPi * (r + 0.5) / rig.height_px;
    for (int c = 0; c < rig.width_px; ++c) {
      const double depth = u(rng);
      disp.values(r, c) = std::atan2(rig.baseline_m * std::sin(th), depth - rig.baseline_m * std::cos(th)) * 180.0 / kPi;
      disp.valid(r, c) = 1;
    }
  }
  const auto conv = disparity_to_depth(disp, theta, rig);
  double worst_map = 0.0, worst_scalar = 0.0;
  for (int r = 0; r < rig.height_px; ++r) {
    const double th = kPi * (r + 0.5) / rig.height_px;
    for (int c = 0; c < rig.width_px; ++c) {
      const double d = disp.values(r, c) * kPi / 180.0;
      const double ref = rig.baseline_m * (std::sin(th) / std::tan(d) + std::cos(th));
      worst_map = std::max(worst_map, rel_err(conv.depth.values(r, c), ref));
      worst_scalar = std::max(worst_scalar, rel_err(disparity_to_depth(d, th, rig.baseline_m), ref));
    }
  }
  v.note("depth map vs scalar reference " + fmt(worst_map));
  v.require(worst_map < 1e-12 && worst_scalar < 1e-12, "disparity->depth relative error >= 1e-12");

  const auto back = depth_to_disparity(conv.depth, theta, rig);
  const auto again = disparity_to_depth(back, theta, rig);
  double worst_rt = 0.0;
  for (std::size_t i = 0; i < disp.values.size(); ++i) {
    worst_rt = std::max(worst_rt, rel_err(back.values[i], disp.values[i]));
    worst_rt = std::max(worst_rt, rel_err(again.depth.values[i], conv.depth.values[i]));
  }
  v.note("round trip " + fmt(worst_rt));
  v.require(worst_rt < 1e-9, "depth<->disparity round trip >= 1e-9");

  Image img(rig.height_px, rig.width_px, 3);
  std::uniform_real_distribution<float> uf(0.f, 1.f);
  for (auto& x : img.data) x = uf(rng);
  bool exact = true;
  for (int pad : {1, 16, 64, rig.width_px - 1}) {
    const auto padded = circular_pad(img, pad);
    exact = exact && padded.cols == rig.width_px + 2 * pad;
    for (int r = 0; r < img.rows && exact; r += 17)
      for (int k = 0; k < pad && exact; ++k)
        exact = padded.at(r, k, 0) == img.at(r, rig.width_px - pad + k, 0) &&
                padded.at(r, pad + rig.width_px + k, 1) == img.at(r, k, 1);
    exact = exact && circular_crop(padded, pad).data == img.data;
  }
  v.require(exact, "circular pad/crop is not a bit-exact inverse");
  return v.finish();
}

Outcome loss_oracles(const Env&) {
  Verdict v;
  std::mt19937_64 rng(5);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int rows = 8, cols = 8, n = rows * cols;

  std::vector<double> gv(n), pv(n);
  std::vector<int> mv(n);
  for (int i = 0; i < n; ++i) {
    gv[i] = uni(3.0, 8.0);
    double e = uni(0.1, 0.9) * (uni(0, 1) < 0.5 ? -1 : 1);
    if (i % 3 == 0) e += e > 0 ? 1.2 : -1.2;
    pv[i] = gv[i] + e;
    mv[i] = i == 0 || uni(0, 1) < 0.8;
  }
  const auto g = as_map(gv, rows, cols);
  const auto m = torch::tensor(std::vector<double>(mv.begin(), mv.end()), torch::kDouble)
                     .reshape({1, 1, rows, cols})
                     .to(torch::kBool);

  auto loop_l1 = [&](const std::vector<double>& p) {
    double s = 0;
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (mv[i]) s += std::abs(p[i] - gv[i]), ++k;
    return s / k;
  };
  auto loop_sl1 = [&](const std::vector<double>& p) {
    double s = 0;
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (mv[i]) {
        const double e = std::abs(p[i] - gv[i]);
        s += e < 1 ? 0.5 * e * e : e - 0.5;
        ++k;
      }
    return s / k;
  };
  auto loop_silog = [&](const std::vector<double>& p, double lambda) {
    double s = 0, s2 = 0;
    int k = 0;
    for (int i = 0; i < n; ++i)
      if (mv[i]) {
        const double d = std::log(std::max(p[i], 1e-6)) - std::log(std::max(gv[i], 1e-6));
        s += d, s2 += d * d, ++k;
      }
    return s2 / k - lambda * s * s / (double(k) * k);
  };

  // A sequence of four predictions: initial estimate plus three iterates.
  std::vector<std::vector<double>> seqv(4, pv);
  for (int j = 1; j < 4; ++j)
    for (int i = 0; i < n; ++i) seqv[j][i] = pv[i] * (1.0 - 0.1 * j) + 0.2 * j;
  std::vector<torch::Tensor> seq;
  for (const auto& s : seqv) seq.push_back(as_map(s, rows, cols));
  LossConfig cfg;
  double ref_a = loop_sl1(seqv[0]), ref_b = loop_silog(seqv[0], cfg.lambda_silog);
  for (int i = 1; i <= 3; ++i) {
    ref_a += std::pow(cfg.gamma, 3 - i) * loop_l1(seqv[i]);
    ref_b += std::pow(cfg.gamma, 3 - i) * loop_silog(seqv[i], cfg.lambda_silog);
  }

  const std::vector<std::pair<double, double>> pairs = {
      {l1_loss(seq[0], g, m).item<double>(), loop_l1(pv)},
      {smooth_l1_loss(seq[0], g, m).item<double>(), loop_sl1(pv)},
      {silog_loss(seq[0], g, m, 0.15).item<double>(), loop_silog(pv, 0.15)},
      {silog_loss(seq[0], g, m, 0.5).item<double>(), loop_silog(pv, 0.5)},
      {loss_stage_a(seq, g, m, cfg).item<double>(), ref_a},
      {loss_stage_b(seq, g, m, cfg).item<double>(), ref_b},
  };
  double worst = 0.0;
  for (const auto& [lib, ref] : pairs) worst = std::max(worst, std::abs(lib - ref));
  v.note("loop oracles " + fmt(worst));
  v.require(worst < 1e-12, "loss value differs from its loop oracle by >= 1e-12");

  using Fn = std::function<torch::Tensor(const torch::Tensor&)>;
  const std::vector<Fn> fns = {
      [&](const torch::Tensor& p) { return l1_loss(p, g, m); },
      [&](const torch::Tensor& p) { return smooth_l1_loss(p, g, m); },
      [&](const torch::Tensor& p) { return silog_loss(p, g, m, 0.15); },
      [&](const torch::Tensor& p) { return loss_stage_a({p, p * 0.9 + 0.1, p * 1.1}, g, m, cfg); },
      [&](const torch::Tensor& p) { return loss_stage_b({p, p * 0.9 + 0.1, p * 1.1}, g, m, cfg); },
  };
  double worst_grad = 0.0;
  for (const auto& f : fns) {
    auto p = as_map(pv, rows, cols).requires_grad_(true);
    f(p).backward();
    const auto analytic = flat(p.grad());
    const double h = 1e-6;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
      auto plus = pv, minus = pv;
      plus[i] += h;
      minus[i] -= h;
      const double fd =
          (f(as_map(plus, rows, cols)).item<double>() - f(as_map(minus, rows, cols)).item<double>()) / (2 * h);
      num += (fd - analytic[i]) * (fd - analytic[i]);
      den += fd * fd;
    }
    worst_grad = std::max(worst_grad, std::sqrt(num / den));
  }
  v.note("gradients vs central differences " + fmt(worst_grad));
  v.require(worst_grad < 1e-5, "analytic gradient differs from finite differences by >= 1e-5");

  double worst_inv = 0.0;
  const double base = silog_loss(seq[0], g, m, 1.0).item<double>();
  for (double k : {0.01, 0.5, 3.0, 250.0})
    worst_inv = std::max(worst_inv, std::abs(silog_loss(seq[0] * k, g, m, 1.0).item<double>() - base));
  v.note("lambda=1 scale invariance " + fmt(worst_inv));
  v.require(worst_inv < 1e-9, "SILog with lambda 1 is not scale invariant");

  const auto ratio = silog_loss(g * std::exp(1.0), g, m, 0.15).item<double>();
  v.note("constant ratio value " + fmt(ratio, 17));
  v.require(std::abs(ratio - 0.85) < 1e-12, "SILog of a constant unit log ratio is not 0.85");
  return v.finish();
}

Outcome metric_oracles(const Env&) {
  Verdict v;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.05, 20.0);
  std::bernoulli_distribution keep(0.7);
  auto random_grid = [&](int rows, int cols) {
    Grid<double> g(rows, cols);
    for (auto& x : g.data()) x = u(rng);
    return g;
  };
  auto random_mask = [&](int rows, int cols) {
    Mask m(rows, cols);
    for (auto& x : m.data()) x = keep(rng);
    m[0] = 1;
    return m;
  };

  double worst = 0.0;
  bool bounded = true;
  std::vector<LrceSample> samples;
  double lrce_sum = 0.0;
  int lrce_images = 0;
  for (int t = 0; t < 100; ++t) {
    const int rows = 5 + t % 7, cols = 6 + t % 11;
    const auto pred = random_grid(rows, cols), gt = random_grid(rows, cols);
    const auto mask = random_mask(rows, cols);
    double sa = 0, ss = 0, sr = 0;
    int k = 0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (mask(r, c)) {
          const double e = pred(r, c) - gt(r, c);
          sa += std::abs(e), ss += e * e, sr += std::abs(e) / gt(r, c), ++k;
        }
    const double lib_mae = mae(pred, gt, mask), lib_rmse = rmse(pred, gt, mask);
    worst = std::max({worst, std::abs(lib_mae - sa / k), std::abs(lib_rmse - std::sqrt(ss / k)),
                      std::abs(mare(pred, gt, mask).value - sr / k)});
    bounded = bounded && lib_mae <= lib_rmse;

    if (t < 20) {
      samples.push_back({pred, gt, mask});
      double inner = 0;
      int used = 0;
      for (int r = 0; r < rows; ++r)
        if (mask(r, 0) && mask(r, cols - 1)) {
          inner += std::abs((pred(r, 0) - pred(r, cols - 1)) - (gt(r, 0) - gt(r, cols - 1)));
          ++used;
        }
      if (used > 0) lrce_sum += inner / used, ++lrce_images;
    }
  }
  worst = std::max(worst, std::abs(lrce(samples).value - lrce_sum / lrce_images));
  v.note("loop oracles " + fmt(worst));
  v.require(worst < 1e-12, "metric differs from its loop oracle by >= 1e-12");
  v.require(bounded, "MAE > RMSE on a random instance");

  // Sampled periodic maps: the border columns are neighbours on the circle.
  const int rows = 16, cols = 96;
  Grid<double> gt(rows, cols), pred(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double phi = 2 * kPi * (c + 0.5) / cols;
      gt(r, c) = 4.0 + std::sin(phi) + 0.5 * std::cos(3 * phi) + 0.1 * r;
      pred(r, c) = gt(r, c) + 0.3 + 0.05 * r;
    }
  const double circ = lrce({{pred, gt, Mask(rows, cols, 1)}}).value;
  v.note("LRCE on circular maps " + fmt(circ));
  v.require(circ < 1e-12, "LRCE is not zero on circular maps");

  const auto pg = random_grid(40, 60), gg = random_grid(40, 60);
  const auto mask = random_mask(40, 60);
  Grid<double> depth(40, 60);
  std::uniform_real_distribution<double> ud(0.5, 40.0);
  for (auto& x : depth.data()) x = ud(rng);
  const auto buckets = bucketed_mae(pg, gg, depth, mask, default_depth_buckets());
  double weighted = 0.0;
  std::size_t count = 0, expected = 0;
  double total = 0.0;
  for (const auto& b : buckets) {
    count += b.count;
    if (b.mae) weighted += *b.mae * static_cast<double>(b.count);
  }
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && depth[i] >= 0.0 && depth[i] < 230.0) total += std::abs(pg[i] - gg[i]), ++expected;
  v.require(count == expected && std::abs(weighted - total) < 1e-9 * total,
            "bucketed MAE counts and sums do not partition the pixels");
  v.note("bucket partition " + std::to_string(count) + " px");
  return v.finish();
}

Outcome cost_volume_oracles(const Env&) {
  Verdict v;
  torch::manual_seed(4);
  const auto fb = torch::randint(-8, 9, {1, 4, 4, 4}, torch::kDouble);
  const auto ft = torch::randint(-8, 9, {1, 4, 4, 4}, torch::kDouble);
  const auto vol = build_gwc_volume(fb, ft, 2, 1).volume;
  auto ref = torch::zeros({1, 1, 2, 4, 4}, torch::kDouble);
  auto a = fb.accessor<double, 4>(), b = ft.accessor<double, 4>();
  auto o = ref.accessor<double, 5>();
  for (int s = 0; s < 2; ++s)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        if (y + s >= 4) continue;
        double sum = 0;
        for (int c = 0; c < 4; ++c) sum += a[0][c][y][x] * b[0][c][y + s][x];
        o[0][0][s][y][x] = sum / 4;
      }
  v.require(vol.sizes() == ref.sizes() && torch::equal(vol, ref), "group-wise correlation differs from the loop");

  const auto logits = torch::randn({2, 9, 5, 7}, torch::kDouble) * 3.0;
  const auto sa = soft_argmax(logits);
  double worst = 0.0;
  auto l = logits.accessor<double, 4>();
  auto s = sa.accessor<double, 4>();
  for (int bi = 0; bi < 2; ++bi)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) {
        double mx = -1e300, z = 0, e = 0;
        for (int d = 0; d < 9; ++d) mx = std::max(mx, l[bi][d][y][x]);
        for (int d = 0; d < 9; ++d) {
          const double w = std::exp(l[bi][d][y][x] - mx);
          z += w, e += d * w;
        }
        worst = std::max(worst, std::abs(s[bi][0][y][x] - e / z));
      }
  v.note("soft-argmax vs expectation " + fmt(worst));
  v.require(worst < 1e-6, "soft-argmax differs from the expectation oracle");

  const auto gb = torch::randn({1, 16, 12, 20}), gt = torch::randn({1, 16, 12, 20});
  const auto base = build_gwc_volume(gb, gt, 6, 4).volume;
  const auto base_sa = soft_argmax(base.mean(1));
  bool vol_eq = true, sa_eq = true;
  for (int k : {1, 5, 13, -3}) {
    const auto rolled = build_gwc_volume(gb.roll(k, 3), gt.roll(k, 3), 6, 4).volume;
    vol_eq = vol_eq && torch::equal(rolled, base.roll(k, 4));
    sa_eq = sa_eq && torch::equal(soft_argmax(rolled.mean(1)), base_sa.roll(k, 3));
  }
  v.require(vol_eq, "column roll does not commute with the cost volume");
  v.require(sa_eq, "column roll does not commute with soft-argmax");
  return v.finish();
}

}  // namespace omnistereo::acceptance
