#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "actrack/metrics.hpp"

using namespace actrack;

namespace {

BinaryMask mask(const Index3& dims, double spacing = 1.0) {
  BinaryMask m(dims, AffineTransform::isotropic(spacing), 1, 0);
  m.set_disk_type(DataType::uint8);
  return m;
}

struct Brute {
  double hd95;
  double assd;
};

// Surface voxels by 6-neighbourhood, all-pairs distances between voxel centres.
Brute brute_force(const BinaryMask& a, const BinaryMask& b) {
  const auto& g = a.geometry();
  const auto surf = [&](const BinaryMask& m) {
    std::vector<Eigen::Vector3d> out;
    for (std::int64_t v = 0; v < g.voxel_count(); ++v) {
      if (!m.data()[static_cast<std::size_t>(v)]) continue;
      const Index3 i = g.unravel(v);
      bool edge = false;
      for (int ax = 0; ax < 3; ++ax)
        for (int s : {-1, 1}) {
          Index3 n = i;
          n[ax] += s;
          edge = edge || !g.contains(n) || m.at(n) == 0;
        }
      if (edge) out.push_back(g.voxel_center(i));
    }
    return out;
  };
  const auto sa = surf(a), sb = surf(b);
  const auto directed = [](const auto& from, const auto& to) {
    std::vector<double> d;
    for (const auto& p : from) {
      double best = 1e300;
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      d.push_back(best);
    }
    return d;
  };
  const auto p95 = [](std::vector<double> d) {
    std::sort(d.begin(), d.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(d.size()) - 1e-9));
    return d[std::max<std::size_t>(rank, 1) - 1];
  };
  const auto ab = directed(sa, sb), ba = directed(sb, sa);
  double sum = 0.0;
  for (double x : ab) sum += x;
  for (double x : ba) sum += x;
  return {std::max(p95(ab), p95(ba)), sum / double(ab.size() + ba.size())};
}

Streamline line(std::initializer_list<Eigen::Vector3d> pts) {
  Streamline s;
  s.points.assign(pts.begin(), pts.end());
  return s;
}

}  // namespace

TEST(Density, CentredStraightLine) {
  const GridGeometry g{{12, 3, 3}, AffineTransform::isotropic(1.0)};
  Tractogram t;
  t.streamlines.push_back(line({{0, 1, 1}, {9, 1, 1}}));
  const auto d = density_map(t, g);
  for (int x = 0; x < 12; ++x) EXPECT_EQ(d.at(x, 1, 1), x < 10 ? 1 : 0);
  EXPECT_EQ(std::count(d.data().begin(), d.data().end(), 1), 10);
}

TEST(Density, RevisitsCountOnce) {
  const GridGeometry g{{5, 5, 5}, AffineTransform::isotropic(1.0)};
  Tractogram t;
  t.streamlines.push_back(line({{1, 1, 1}, {3, 1, 1}, {1, 1, 1}, {1.1, 1, 1}}));
  t.streamlines.push_back(line({{1, 1, 1}, {1, 3, 1}}));
  const auto d = density_map(t, g);
  EXPECT_EQ(d.at(1, 1, 1), 2);
  EXPECT_EQ(d.at(2, 1, 1), 1);
  EXPECT_EQ(d.at(1, 2, 1), 1);
}

TEST(Density, MatchesFineSamplingAndIsReversible) {
  const GridGeometry g{{10, 10, 10}, AffineTransform::isotropic(1.5)};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 15.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 6; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    const auto got = visited_voxels(pts, g);
    std::vector<Eigen::Vector3d> rev(pts.rbegin(), pts.rend());
    EXPECT_EQ(visited_voxels(rev, g), got);
    // Very fine sampling can only add voxels clipped at a corner by less than a quarter voxel.
    std::vector<std::int64_t> fine;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      for (int j = 0; j <= 4000; ++j) {
        if (auto v = g.nearest_voxel(pts[i - 1] + (pts[i] - pts[i - 1]) * (j / 4000.0))) {
          fine.push_back(g.linear_index(*v));
        }
      }
    }
    std::sort(fine.begin(), fine.end());
    fine.erase(std::unique(fine.begin(), fine.end()), fine.end());
    EXPECT_TRUE(std::includes(fine.begin(), fine.end(), got.begin(), got.end()));
  }
}

TEST(Binarize, NearestRankPercentile) {
  DensityMap d({10, 10, 1}, AffineTransform{}, 1, 0);
  for (int i = 0; i < 100; ++i) d.data()[static_cast<std::size_t>(i)] = i + 1;
  auto m = binarize_percentile(d, 0.01);
  EXPECT_EQ(std::count(m.data().begin(), m.data().end(), 1), 100);
  m = binarize_percentile(d, 0.5);
  EXPECT_EQ(std::count(m.data().begin(), m.data().end(), 1), 51);
  EXPECT_EQ(m.data()[49], 1);  // density 50 is the 50th percentile itself
  EXPECT_EQ(m.data()[48], 0);
}

TEST(Binarize, ZerosExcludedAndEmptyRejected) {
  DensityMap d({4, 1, 1}, AffineTransform{}, 1, 0);
  d.storage() = {0, 3, 0, 5};
  const auto m = binarize_percentile(d);
  EXPECT_EQ(m.storage(), (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_THROW(binarize_percentile(DensityMap({3, 3, 3}, AffineTransform{}, 1, 0)), ParameterError);
  EXPECT_THROW(binarize_percentile(d, 1.5), ParameterError);
}

TEST(Metrics, Dice) {
  auto a = mask({4, 4, 4}), b = mask({4, 4, 4});
  EXPECT_DOUBLE_EQ(dsc(a, b), 1.0);
  a.at(0, 0, 0) = a.at(1, 0, 0) = 1;
  b.at(1, 0, 0) = b.at(2, 0, 0) = b.at(3, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(dsc(a, b), 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
  EXPECT_THROW(dsc(a, mask({4, 4, 5})), GridMismatchError);
}

TEST(Metrics, SingleVoxelsThreeMillimetresApart) {
  auto a = mask({6, 3, 3}), b = mask({6, 3, 3});
  a.at(1, 1, 1) = 1;
  b.at(4, 1, 1) = 1;
  EXPECT_DOUBLE_EQ(hd95(a, b), 3.0);
  EXPECT_DOUBLE_EQ(assd(a, b), 3.0);
  EXPECT_DOUBLE_EQ(dsc(a, b), 0.0);
  EXPECT_DOUBLE_EQ(hd95(a, a), 0.0);
  EXPECT_THROW(hd95(a, mask({6, 3, 3})), ParameterError);
}

TEST(Metrics, SurfaceDistancesMatchBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const Index3 dims{3 + std::int64_t(rng() % 9), 3 + std::int64_t(rng() % 9), 3 + std::int64_t(rng() % 9)};
    auto a = mask(dims, 1.2), b = mask(dims, 1.2);
    const auto fill = [&](BinaryMask& m, unsigned pct) {
      for (auto& x : m.data()) x = (rng() % 100) < pct ? 1 : 0;
      m.data()[rng() % m.data().size()] = 1;
    };
    fill(a, 10 + unsigned(rng() % 50));
    fill(b, 10 + unsigned(rng() % 50));
    const auto want = brute_force(a, b);
    EXPECT_NEAR(hd95(a, b), want.hd95, 1e-9);
    EXPECT_NEAR(assd(a, b), want.assd, 1e-9);
  }
}

TEST(Metrics, ObliqueAffineUsesExactDistances) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) << 1.0, 0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0;
  BinaryMask a({5, 5, 5}, AffineTransform(m), 1, 0), b({5, 5, 5}, AffineTransform(m), 1, 0);
  a.at(0, 0, 0) = 1;
  b.at(0, 3, 1) = 1;
  const double want = (Eigen::Vector3d(0.9, 3.0, 2.0)).norm();
  EXPECT_NEAR(hd95(a, b), want, 1e-12);
}

TEST(Metrics, VolumeDifference) {
  auto a = mask({4, 4, 4}, 2.0), b = mask({4, 4, 4}, 2.0);
  a.at(0, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(mask_volume(a), 8.0);
  b.at(1, 1, 1) = 1;
  EXPECT_DOUBLE_EQ(voldiff(a, b), 0.0);
  a.at(1, 1, 1) = 1;  // 16 vs 8 mm^3
  EXPECT_NEAR(voldiff(a, b), 8.0 / 12.0, 1e-15);
  auto c = mask({4, 4, 4}, 2.0), e = mask({4, 4, 4}, 2.0);
  c.at(0, 0, 0) = 1;
  e.at(0, 0, 0) = e.at(1, 0, 0) = e.at(2, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(voldiff(c, e), 1.0);  // 8 vs 24 mm^3
  EXPECT_THROW(voldiff(mask({4, 4, 4}), mask({4, 4, 4})), ParameterError);
}

TEST(Filter, IncludeAndExclude) {
  auto left = mask({10, 3, 3}), right = mask({10, 3, 3}), middle = mask({10, 3, 3});
  left.at(0, 1, 1) = 1;
  right.at(9, 1, 1) = 1;
  middle.at(5, 0, 0) = 1;
  Tractogram t;
  t.properties["algorithm"] = "fact";
  t.streamlines.push_back(line({{0, 1, 1}, {9, 1, 1}}));
  t.streamlines.push_back(line({{0, 1, 1}, {5, 1, 1}}));
  t.streamlines.push_back(line({{0, 0, 0}, {9, 0, 0}}));
  const std::vector<BinaryMask> both{left, right};
  auto out = filter_by_rois(t, both, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.streamlines[0].points.back().x(), 9.0);
  EXPECT_EQ(out.properties.at("algorithm"), "fact");
  const std::vector<BinaryMask> excl{middle};
  out = filter_by_rois(t, {}, excl);
  EXPECT_EQ(out.size(), 2u);
  EXPECT_EQ(filter_by_rois(t, {}, {}).size(), 3u);
}
