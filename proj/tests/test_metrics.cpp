#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "omnistereo/metrics.hpp"

using namespace omnistereo;

namespace {

struct Case {
  Grid<double> pred, gt;
  Mask mask;
};

Case random_case(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.05, 20.0);
  std::bernoulli_distribution keep(0.7);
  Case c{Grid<double>(rows, cols), Grid<double>(rows, cols), Mask(rows, cols)};
  for (std::size_t i = 0; i < c.gt.size(); ++i) {
    c.pred[i] = u(rng);
    c.gt[i] = u(rng);
    c.mask[i] = keep(rng);
  }
  c.mask[0] = 1;
  return c;
}

// Reference loops, written independently of the library.
double ref_mae(const Case& c) {
  double s = 0;
  int n = 0;
  for (int r = 0; r < c.gt.rows(); ++r)
    for (int k = 0; k < c.gt.cols(); ++k)
      if (c.mask(r, k)) {
        s += std::fabs(c.pred(r, k) - c.gt(r, k));
        ++n;
      }
  return s / n;
}

double ref_rmse(const Case& c) {
  double s = 0;
  int n = 0;
  for (int r = 0; r < c.gt.rows(); ++r)
    for (int k = 0; k < c.gt.cols(); ++k)
      if (c.mask(r, k)) {
        s += std::pow(c.pred(r, k) - c.gt(r, k), 2);
        ++n;
      }
  return std::sqrt(s / n);
}

double ref_mare(const Case& c) {
  double s = 0;
  int n = 0;
  for (int r = 0; r < c.gt.rows(); ++r)
    for (int k = 0; k < c.gt.cols(); ++k)
      if (c.mask(r, k) && c.gt(r, k) != 0) {
        s += std::fabs(c.pred(r, k) - c.gt(r, k)) / c.gt(r, k);
        ++n;
      }
  return s / n;
}

double ref_lrce(const std::vector<Case>& cases) {
  double outer = 0;
  int images = 0;
  for (const auto& c : cases) {
    const int w = c.gt.cols();
    double inner = 0;
    int rows = 0;
    for (int r = 0; r < c.gt.rows(); ++r) {
      if (!(c.mask(r, 0) && c.mask(r, w - 1))) continue;
      inner += std::fabs((c.pred(r, 0) - c.pred(r, w - 1)) - (c.gt(r, 0) - c.gt(r, w - 1)));
      ++rows;
    }
    if (rows == 0) continue;
    outer += inner / rows;
    ++images;
  }
  return outer / images;
}

Grid<double> grid(int rows, int cols, std::initializer_list<double> v) {
  Grid<double> g(rows, cols);
  std::copy(v.begin(), v.end(), g.data().begin());
  return g;
}

}  // namespace

TEST(PixelMetrics, Zero) {
  std::mt19937_64 rng(0);
  auto c = random_case(rng, 5, 6);
  EXPECT_EQ(mae(c.gt, c.gt, c.mask), 0.0);
  EXPECT_EQ(rmse(c.gt, c.gt, c.mask), 0.0);
  EXPECT_EQ(mare(c.gt, c.gt, c.mask).value, 0.0);
}

TEST(PixelMetrics, HandAlgebra) {
  const auto gt = grid(1, 2, {1.0, 2.0});
  const auto pred = grid(1, 2, {4.0, 6.0});
  const Mask m(1, 2, 1);
  EXPECT_DOUBLE_EQ(mae(pred, gt, m), 3.5);
  EXPECT_DOUBLE_EQ(rmse(pred, gt, m), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(mare(pred, gt, m).value, 2.5);
}

TEST(PixelMetrics, MatchLoopOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_case(rng, 17, 23);
    EXPECT_NEAR(mae(c.pred, c.gt, c.mask), ref_mae(c), 1e-12);
    EXPECT_NEAR(rmse(c.pred, c.gt, c.mask), ref_rmse(c), 1e-12);
    EXPECT_NEAR(mare(c.pred, c.gt, c.mask).value, ref_mare(c), 1e-12);
  }
}

TEST(PixelMetrics, MaeBoundedByRmse) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto c = random_case(rng, 8, 9);
    EXPECT_LE(mae(c.pred, c.gt, c.mask), rmse(c.pred, c.gt, c.mask) + 1e-15);
  }
}

TEST(PixelMetrics, MareExcludesZeroGroundTruth) {
  const auto gt = grid(1, 3, {0.0, 2.0, 4.0});
  const auto pred = grid(1, 3, {1.0, 3.0, 4.0});
  const auto r = mare(pred, gt, Mask(1, 3, 1));
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.used, 2u);
  EXPECT_DOUBLE_EQ(r.value, 0.25);
}

TEST(PixelMetrics, EmptyMaskRejected) {
  const Grid<double> g(2, 2, 1.0);
  const Mask none(2, 2, 0);
  EXPECT_THROW(mae(g, g, none), std::invalid_argument);
  EXPECT_THROW(rmse(g, g, none), std::invalid_argument);
  EXPECT_THROW(mare(g, g, none), std::invalid_argument);
  EXPECT_THROW(mae(g, Grid<double>(2, 3), Mask(2, 2, 1)), std::invalid_argument);
}

TEST(Lrce, HandExample) {
  // Two valid rows with dPred - dGt = 0.2 and -0.4; third row invalid.
  const auto gt = grid(3, 3, {1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 5.0, 0.0, 0.0});
  const auto pred = grid(3, 3, {1.2, 0.0, 1.0, 1.6, 0.0, 1.0, 9.0, 0.0, 0.0});
  Mask m(3, 3, 1);
  m(2, 2) = 0;
  const auto r = lrce({{pred, gt, m}});
  EXPECT_NEAR(r.value, 0.3, 1e-12);
  EXPECT_EQ(r.images_used, 1u);
}

TEST(Lrce, ConsistentBordersGiveZero) {
  const auto g = grid(2, 3, {1.0, 5.0, 1.0, 2.0, 7.0, 2.0});
  EXPECT_EQ(lrce({{g, g, Mask(2, 3, 1)}}).value, 0.0);
}

TEST(Lrce, CircularMapsGiveZero) {
  // Sampled periodic functions: the two border columns are neighbors on the
  // circle, so both maps have the same border differences.
  const int rows = 6, cols = 40;
  Grid<double> gt(rows, cols), pred(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double phi = 2 * M_PI * (c + 0.5) / cols;
      gt(r, c) = 3.0 + std::sin(phi) + 0.1 * r;
      pred(r, c) = gt(r, c) + 0.7;
    }
  EXPECT_NEAR(lrce({{pred, gt, Mask(rows, cols, 1)}}).value, 0.0, 1e-12);
}

TEST(Lrce, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  std::vector<Case> cases;
  std::vector<LrceSample> samples;
  for (int t = 0; t < 12; ++t) {
    cases.push_back(random_case(rng, 10, 15));
    samples.push_back({cases.back().pred, cases.back().gt, cases.back().mask});
  }
  EXPECT_NEAR(lrce(samples).value, ref_lrce(cases), 1e-12);
}

TEST(Lrce, ImagesWithoutValidRowsExcluded) {
  const auto g = grid(2, 2, {1.0, 2.0, 3.0, 4.0});
  Mask none(2, 2, 1);
  none(0, 0) = 0;
  none(1, 1) = 0;
  const auto r = lrce({{g, g, none}, {grid(1, 2, {1.0, 1.5}), grid(1, 2, {1.0, 1.0}), Mask(1, 2, 1)}});
  EXPECT_EQ(r.images_excluded, 1u);
  EXPECT_EQ(r.images_used, 1u);
  EXPECT_NEAR(r.value, 0.5, 1e-15);
}

TEST(BucketedMae, SingleBucketPresent) {
  const Grid<double> depth(3, 3, 5.0);
  const Grid<double> gt(3, 3, 1.0), pred(3, 3, 1.5);
  const auto b = bucketed_mae(pred, gt, depth, Mask(3, 3, 1), default_depth_buckets());
  ASSERT_EQ(b.size(), 3u);
  EXPECT_FALSE(b[0].mae.has_value());
  ASSERT_TRUE(b[1].mae.has_value());
  EXPECT_DOUBLE_EQ(*b[1].mae, 0.5);
  EXPECT_FALSE(b[2].mae.has_value());
}

TEST(BucketedMae, DefaultEdges) {
  const auto b = default_depth_buckets();
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].lo_m, 0.0);
  EXPECT_EQ(b[0].hi_m, 4.0);
  EXPECT_EQ(b[1].hi_m, 9.0);
  EXPECT_EQ(b[2].hi_m, 230.0);
}

TEST(BucketedMae, PartitionIdentity) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> depth_u(0.1, 200.0);
  for (int t = 0; t < 10; ++t) {
    const auto c = random_case(rng, 12, 12);
    Grid<double> depth(12, 12);
    for (auto& v : depth.data()) v = depth_u(rng);
    depth[1] = 4.0;  // lands in the middle bucket, not the first
    const auto b = bucketed_mae(c.pred, c.gt, depth, c.mask, default_depth_buckets());
    double weighted = 0;
    std::size_t n = 0;
    for (const auto& x : b) {
      if (x.mae) weighted += *x.mae * x.count;
      n += x.count;
    }
    std::size_t masked = 0;
    for (auto v : c.mask.data()) masked += v;
    EXPECT_EQ(n, masked);
    EXPECT_NEAR(weighted / n, ref_mae(c), 1e-12);
  }
}

TEST(MetricAccumulator, PerfectPredictionIsAllZero) {
  CameraRig rig;
  rig.height_px = 16;
  rig.width_px = 32;
  DisparityMap completed(16, 32), sparse(16, 32);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 32; ++c) {
      completed.values(r, c) = 1.0 + 0.1 * r + 0.01 * c;
      completed.valid(r, c) = 1;
    }
  sparse = completed;
  for (std::size_t i = 0; i < sparse.valid.size(); i += 3) sparse.valid[i] = 0;
  MetricAccumulator acc(rig);
  acc.add(completed.values, sparse, completed, SceneTag::indoor);
  acc.add(completed.values, sparse, completed, SceneTag::synthetic);
  const auto rep = acc.report();
  EXPECT_EQ(rep.images, 2u);
  EXPECT_EQ(rep.disparity.mae, 0.0);
  EXPECT_EQ(rep.disparity.rmse, 0.0);
  EXPECT_EQ(rep.disparity.mare, 0.0);
  EXPECT_EQ(rep.disparity.lrce, 0.0);
  EXPECT_EQ(rep.depth.mae, 0.0);
  EXPECT_EQ(rep.depth.lrce, 0.0);
  EXPECT_EQ(rep.disparity.n_valid, 2 * sparse.valid_count());
  EXPECT_EQ(rep.by_tag.size(), 2u);
  const std::string kv = rep.to_key_value();
  for (const char* key : {"disparity.mae", "disparity.rmse", "disparity.mare", "disparity.lrce",
                          "depth.mae", "depth.rmse", "depth.mare", "depth.lrce", "bucket_mae.0-4m"})
    EXPECT_NE(kv.find(key), std::string::npos) << key;
  const std::string csv = rep.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(MetricAccumulator, PoolsPixelsAcrossImages) {
  CameraRig rig;
  rig.height_px = 4;
  rig.width_px = 4;
  DisparityMap gt(4, 4);
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    gt.values[i] = 2.0;
    gt.valid[i] = 1;
  }
  DisparityMap sparse_a = gt, sparse_b = gt;
  for (std::size_t i = 1; i < 16; ++i) sparse_a.valid[i] = 0;  // one pixel
  MetricAccumulator acc(rig);
  acc.add(Grid<double>(4, 4, 3.0), sparse_a, gt);  // |e| = 1 on 1 pixel
  acc.add(Grid<double>(4, 4, 2.5), sparse_b, gt);  // |e| = 0.5 on 16 pixels
  EXPECT_NEAR(acc.report().disparity.mae, (1.0 + 16 * 0.5) / 17, 1e-15);
}
