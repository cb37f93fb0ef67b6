#include "omnistereo/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace omnistereo {

namespace {

void check_shapes(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || mask.rows() != gt.rows() ||
      mask.cols() != gt.cols())
    throw std::invalid_argument("metric: prediction, ground truth and mask sizes differ");
}

std::size_t count(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v ? 1 : 0;
  return n;
}

}  // namespace

double mae(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask) {
  check_shapes(pred, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    sum += std::abs(pred[i] - gt[i]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mae: empty mask");
  return sum / static_cast<double>(n);
}

double rmse(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask) {
  check_shapes(pred, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    const double e = pred[i] - gt[i];
    sum += e * e;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(n));
}

MareResult mare(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask) {
  check_shapes(pred, gt, mask);
  if (count(mask) == 0) throw std::invalid_argument("mare: empty mask");
  MareResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    if (gt[i] == 0.0) {
      ++r.excluded;
      continue;
    }
    sum += std::abs(pred[i] - gt[i]) / std::abs(gt[i]);
    ++r.used;
  }
  if (r.used == 0) throw std::invalid_argument("mare: every masked ground-truth value is zero");
  r.value = sum / static_cast<double>(r.used);
  return r;
}

LrceResult lrce(const std::vector<LrceSample>& samples) {
  LrceResult r;
  double sum = 0.0;
  for (const auto& s : samples) {
    check_shapes(s.pred, s.gt, s.gt_valid);
    const int last = s.gt.cols() - 1;
    double image_sum = 0.0;
    std::size_t rows = 0;
    for (int row = 0; row < s.gt.rows(); ++row) {
      if (!s.gt_valid(row, 0) || !s.gt_valid(row, last)) continue;
      const double dp = s.pred(row, 0) - s.pred(row, last);
      const double dg = s.gt(row, 0) - s.gt(row, last);
      image_sum += std::abs(dp - dg);
      ++rows;
    }
    if (rows == 0) {
      ++r.images_excluded;
      continue;
    }
    sum += image_sum / static_cast<double>(rows);
    ++r.images_used;
  }
  r.value = r.images_used ? sum / static_cast<double>(r.images_used) : 0.0;
  return r;
}

std::vector<DepthBucket> default_depth_buckets() { return {{0.0, 4.0}, {4.0, 9.0}, {9.0, 230.0}}; }

std::vector<BucketMae> bucketed_mae(const Grid<double>& pred_disp, const Grid<double>& gt_disp,
                                    const Grid<double>& gt_depth, const Mask& mask,
                                    const std::vector<DepthBucket>& buckets) {
  check_shapes(pred_disp, gt_disp, mask);
  check_shapes(gt_depth, gt_disp, mask);
  std::vector<BucketMae> out;
  std::vector<double> sums(buckets.size(), 0.0);
  for (const auto& b : buckets) out.push_back({b, 0, std::nullopt});
  for (std::size_t i = 0; i < gt_disp.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t k = 0; k < buckets.size(); ++k) {
      if (gt_depth[i] >= buckets[k].lo_m && gt_depth[i] < buckets[k].hi_m) {
        sums[k] += std::abs(pred_disp[i] - gt_disp[i]);
        ++out[k].count;
        break;
      }
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k)
    if (out[k].count) out[k].mae = sums[k] / static_cast<double>(out[k].count);
  return out;
}

// ------------------------------------------------------------ accumulator

void MetricAccumulator::Sums::add(double pred, double gt) {
  const double e = pred - gt;
  abs += std::abs(e);
  sq += e * e;
  ++n;
  if (gt == 0.0) {
    ++rel_excluded;
  } else {
    rel += std::abs(e) / std::abs(gt);
    ++rel_n;
  }
}

QuantityMetrics MetricAccumulator::Sums::finish() const {
  QuantityMetrics q;
  q.n_valid = n;
  if (n) {
    q.mae = abs / static_cast<double>(n);
    q.rmse = std::sqrt(sq / static_cast<double>(n));
  }
  if (rel_n) q.mare = rel / static_cast<double>(rel_n);
  return q;
}

MetricAccumulator::MetricAccumulator(CameraRig rig, std::vector<DepthBucket> buckets)
    : rig_(rig), theta_(polar_angle_map(rig)), buckets_(std::move(buckets)),
      bucket_abs_(buckets_.size(), 0.0), bucket_n_(buckets_.size(), 0) {}

void MetricAccumulator::add(const Grid<double>& pred_disp_deg, const DisparityMap& sparse_gt,
                            const DisparityMap& completed_gt, SceneTag tag) {
  if (pred_disp_deg.rows() != rig_.height_px || pred_disp_deg.cols() != rig_.width_px)
    throw std::invalid_argument("MetricAccumulator: prediction does not match the rig");
  ++images_;

  DisparityMap pred;
  pred.values = pred_disp_deg;
  pred.valid = Mask(pred_disp_deg.rows(), pred_disp_deg.cols(), 1);
  const DepthMap pred_depth = disparity_to_depth(pred, theta_, rig_).depth;
  const DepthMap sparse_depth = disparity_to_depth(sparse_gt, theta_, rig_).depth;
  const DepthMap completed_depth = disparity_to_depth(completed_gt, theta_, rig_).depth;

  Sums& tag_sums = tags_[to_string(tag)];
  for (std::size_t i = 0; i < sparse_gt.values.size(); ++i) {
    if (!sparse_gt.valid[i]) continue;
    disp_.add(pred_disp_deg[i], sparse_gt.values[i]);
    tag_sums.add(pred_disp_deg[i], sparse_gt.values[i]);
    if (!sparse_depth.valid[i]) continue;
    const double gt_depth = sparse_depth.values[i];
    for (std::size_t k = 0; k < buckets_.size(); ++k) {
      if (gt_depth >= buckets_[k].lo_m && gt_depth < buckets_[k].hi_m) {
        bucket_abs_[k] += std::abs(pred_disp_deg[i] - sparse_gt.values[i]);
        ++bucket_n_[k];
        break;
      }
    }
    if (pred_depth.valid[i]) depth_.add(pred_depth.values[i], gt_depth);
  }

  const LrceResult ld = lrce({{pred_disp_deg, completed_gt.values, completed_gt.valid}});
  Mask depth_valid = completed_depth.valid;
  for (std::size_t i = 0; i < depth_valid.size(); ++i) depth_valid[i] &= pred_depth.valid[i];
  const LrceResult lz = lrce({{pred_depth.values, completed_depth.values, depth_valid}});
  if (ld.images_used) {
    lrce_disp_sum_ += ld.value;
    ++lrce_disp_used_;
  } else {
    ++lrce_excluded_;
  }
  if (lz.images_used) {
    lrce_depth_sum_ += lz.value;
    ++lrce_depth_used_;
  }
}

MetricReport MetricAccumulator::report() const {
  MetricReport r;
  r.images = images_;
  r.disparity = disp_.finish();
  r.depth = depth_.finish();
  r.disparity.lrce = lrce_disp_used_ ? lrce_disp_sum_ / static_cast<double>(lrce_disp_used_) : 0.0;
  r.depth.lrce = lrce_depth_used_ ? lrce_depth_sum_ / static_cast<double>(lrce_depth_used_) : 0.0;
  r.lrce_excluded = lrce_excluded_;
  r.mare_excluded = disp_.rel_excluded;
  for (std::size_t k = 0; k < buckets_.size(); ++k) {
    BucketMae b{buckets_[k], bucket_n_[k], std::nullopt};
    if (bucket_n_[k]) b.mae = bucket_abs_[k] / static_cast<double>(bucket_n_[k]);
    r.bucketed.push_back(b);
  }
  for (const auto& [tag, sums] : tags_) r.by_tag[tag] = sums.finish();
  return r;
}

namespace {

std::vector<std::pair<std::string, std::string>> flatten(const MetricReport& r) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(9);
    o << v;
    return o.str();
  };
  auto quantity = [&](const std::string& prefix, const QuantityMetrics& q) {
    kv.emplace_back(prefix + ".mae", num(q.mae));
    kv.emplace_back(prefix + ".rmse", num(q.rmse));
    kv.emplace_back(prefix + ".mare", num(q.mare));
    kv.emplace_back(prefix + ".lrce", num(q.lrce));
    kv.emplace_back(prefix + ".n_valid", std::to_string(q.n_valid));
  };
  quantity("disparity", r.disparity);
  quantity("depth", r.depth);
  for (const auto& b : r.bucketed) {
    std::ostringstream name;
    name << "bucket_mae." << b.bucket.lo_m << "-" << b.bucket.hi_m << "m";
    kv.emplace_back(name.str(), b.mae ? num(*b.mae) : "absent");
    kv.emplace_back(name.str() + ".count", std::to_string(b.count));
  }
  for (const auto& [tag, q] : r.by_tag) {
    kv.emplace_back("tag." + tag + ".disparity.mae", num(q.mae));
    kv.emplace_back("tag." + tag + ".n_valid", std::to_string(q.n_valid));
  }
  kv.emplace_back("images", std::to_string(r.images));
  kv.emplace_back("lrce_excluded_images", std::to_string(r.lrce_excluded));
  kv.emplace_back("mare_excluded_pixels", std::to_string(r.mare_excluded));
  return kv;
}

}  // namespace

std::string MetricReport::to_key_value() const {
  std::string out;
  for (const auto& [k, v] : flatten(*this)) out += k + " = " + v + "\n";
  return out;
}

std::string MetricReport::to_csv() const {
  std::string header, values;
  for (const auto& [k, v] : flatten(*this)) {
    header += (header.empty() ? "" : ",") + k;
    values += (values.empty() ? "" : ",") + v;
  }
  return header + "\n" + values + "\n";
}

}  // namespace omnistereo
