#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "omnistereo/dataio.hpp"
#include "omnistereo/geometry.hpp"
#include "omnistereo/grid.hpp"

namespace omnistereo {

// Per-map error metrics over the pixels where `mask` is set. All throw
// std::invalid_argument on an empty mask or mismatched sizes.
double mae(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask);
double rmse(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask);

struct MareResult {
  double value = 0.0;
  std::size_t used = 0;
  /// Masked pixels skipped because their ground truth is zero.
  std::size_t excluded = 0;
};
MareResult mare(const Grid<double>& pred, const Grid<double>& gt, const Mask& mask);

/// One image's contribution to the left-right consistency error.
struct LrceSample {
  Grid<double> pred;
  Grid<double> gt;
  Mask gt_valid;
};

struct LrceResult {
  double value = 0.0;
  std::size_t images_used = 0;
  /// Images without a single row that is valid on both borders.
  std::size_t images_excluded = 0;
};

/// Mean over images of the mean over valid rows of |dPred - dGt|, where d is
/// column 0 minus column W-1. A row is valid when the ground truth is valid
/// at both border pixels.
LrceResult lrce(const std::vector<LrceSample>& samples);

struct DepthBucket {
  double lo_m = 0.0;
  double hi_m = 0.0;  // half-open [lo, hi)
};

std::vector<DepthBucket> default_depth_buckets();  // 0-4, 4-9, 9-230 m

struct BucketMae {
  DepthBucket bucket;
  std::size_t count = 0;
  /// Absent when no pixel fell in the bucket.
  std::optional<double> mae;
};

std::vector<BucketMae> bucketed_mae(const Grid<double>& pred_disp, const Grid<double>& gt_disp,
                                    const Grid<double>& gt_depth, const Mask& mask,
                                    const std::vector<DepthBucket>& buckets);

struct QuantityMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mare = 0.0;
  double lrce = 0.0;
  std::size_t n_valid = 0;
};

struct MetricReport {
  QuantityMetrics disparity;  // degrees
  QuantityMetrics depth;      // meters
  std::vector<BucketMae> bucketed;
  std::size_t images = 0;
  std::size_t lrce_excluded = 0;
  std::size_t mare_excluded = 0;
  std::map<std::string, QuantityMetrics> by_tag;  // disparity metrics per scene tag

  /// Flat "key = value" text; keys are documented in the README.
  std::string to_key_value() const;
  /// Two-line CSV (header, values) with the same keys.
  std::string to_csv() const;
};

/// Accumulates dataset-level metrics. MAE/RMSE/MARE pool pixels over all
/// images (sparse ground truth); LRCE averages per image (completed ground
/// truth), both for disparity and for depth derived through the rig.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(CameraRig rig, std::vector<DepthBucket> buckets = default_depth_buckets());

  void add(const Grid<double>& pred_disp_deg, const DisparityMap& sparse_gt,
           const DisparityMap& completed_gt, SceneTag tag = SceneTag::synthetic);

  MetricReport report() const;

 private:
  struct Sums {
    double abs = 0.0, sq = 0.0, rel = 0.0;
    std::size_t n = 0, rel_n = 0, rel_excluded = 0;
    void add(double pred, double gt);
    QuantityMetrics finish() const;
  };

  CameraRig rig_;
  AngleMap theta_;
  std::vector<DepthBucket> buckets_;
  Sums disp_, depth_;
  std::map<std::string, Sums> tags_;
  std::vector<double> bucket_abs_;
  std::vector<std::size_t> bucket_n_;
  double lrce_disp_sum_ = 0.0, lrce_depth_sum_ = 0.0;
  std::size_t lrce_disp_used_ = 0, lrce_depth_used_ = 0, lrce_excluded_ = 0;
  std::size_t images_ = 0;
};

}  // namespace omnistereo
