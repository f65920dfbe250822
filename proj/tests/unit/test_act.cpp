#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "actrack/act.hpp"
#include "test_util.hpp"

using namespace actrack;

namespace {

LabelGrid labels(const Index3& dims, std::uint8_t fill, double spacing = 1.0) {
  LabelGrid g(dims, AffineTransform::isotropic(spacing), 1, fill);
  g.set_disk_type(DataType::uint8);
  return g;
}

constexpr auto kCgm = static_cast<std::uint8_t>(Tissue::cortical_gm);
constexpr auto kWm = static_cast<std::uint8_t>(Tissue::wm);
constexpr auto kCsf = static_cast<std::uint8_t>(Tissue::csf);

// 12 x 3 x 3 bar at 1 mm: x = 0 and 11 cortical GM, WM between.
FiveTissueTypeMap bar() {
  auto g = labels({12, 3, 3}, kWm);
  for (int y = 0; y < 3; ++y) {
    for (int z = 0; z < 3; ++z) {
      g.at(0, y, z) = kCgm;
      g.at(11, y, z) = kCgm;
    }
  }
  return FiveTissueTypeMap(std::move(g));
}

std::vector<Eigen::Vector3d> line_x(double from, double to, double step) {
  std::vector<Eigen::Vector3d> pts;
  for (double x = from; x <= to + 1e-9; x += step) pts.emplace_back(x, 1.0, 1.0);
  return pts;
}

}  // namespace

TEST(FiveTT, BrainVolumeCountsLabels) {
  const FiveTissueTypeMap tt(labels({10, 10, 10}, kWm));
  EXPECT_DOUBLE_EQ(tt.brain_volume(), 1000.0);
  auto g = labels({10, 10, 10}, kCsf, 1.2);
  g.at(0, 0, 0) = 0;
  const FiveTissueTypeMap all(g);
  EXPECT_NEAR(all.brain_volume(), 999 * 1.728, 1e-9);
  const FiveTissueTypeMap gmwm(g, BrainVolumeMode::gm_wm_only);
  EXPECT_DOUBLE_EQ(gmwm.brain_volume(), 0.0);
}

TEST(FiveTT, RejectsBadLabels) {
  EXPECT_THROW(FiveTissueTypeMap(labels({2, 2, 2}, 6)), FormatError);
  VoxelGrid frac({2, 2, 2}, AffineTransform{}, 1, 2.5);
  EXPECT_THROW(five_tt_from_volume(frac), FormatError);
  VoxelGrid three({2, 2, 2}, AffineTransform{}, 3, 0.0);
  EXPECT_THROW(five_tt_from_volume(three), FormatError);
}

TEST(FiveTT, OneHotMatchesIntegerLabels) {
  std::mt19937_64 rng(7);
  auto hard = labels({5, 4, 3}, 0);
  VoxelGrid onehot({5, 4, 3}, AffineTransform{}, 5, 0.0);
  for (std::int64_t v = 0; v < hard.voxel_count(); ++v) {
    const auto l = static_cast<std::uint8_t>(rng() % 6);
    hard.data()[static_cast<std::size_t>(v)] = l;
    if (l > 0) onehot.voxel(v)[l - 1] = 1.0;
  }
  const auto a = five_tt_from_volume(onehot);
  EXPECT_EQ(a.labels().storage(), hard.storage());
}

TEST(FiveTT, PartialVolumeArgmax) {
  VoxelGrid pv({1, 1, 1}, AffineTransform{}, 5, 0.0);
  pv.voxel(0)[0] = 0.4;  // cortical GM
  pv.voxel(0)[2] = 0.6;  // WM
  EXPECT_EQ(five_tt_from_volume(pv).at(Index3{0, 0, 0}), Tissue::wm);
}

TEST(FiveTT, LoadFromFile) {
  auto g = labels({3, 3, 3}, kWm);
  g.at(1, 1, 1) = kCsf;
  const auto path = test_util::temp_path("tt.nii.gz");
  save_volume(g, path);
  const auto tt = load_5tt(path);
  EXPECT_EQ(tt.at(Index3{1, 1, 1}), Tissue::csf);
  EXPECT_EQ(tt.at(Index3{0, 1, 1}), Tissue::wm);
}

TEST(Gmwmi, PlanarBoundary) {
  auto g = labels({6, 4, 4}, kWm);
  for (int x = 3; x < 6; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z) g.at(x, y, z) = kCgm;
  const auto mask = gmwmi_extract(FiveTissueTypeMap(g));
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z) EXPECT_EQ(mask.at(x, y, z), x == 2 ? 1 : 0);
}

TEST(Gmwmi, AllWhiteMatterIsEmpty) {
  EXPECT_TRUE(mask_voxels(gmwmi_extract(FiveTissueTypeMap(labels({4, 4, 4}, kWm)))).empty());
}

TEST(Gmwmi, MatchesBruteForce) {
  std::mt19937_64 rng(21);
  auto g = labels({9, 8, 7}, 0);
  for (auto& l : g.storage()) l = static_cast<std::uint8_t>(rng() % 6);
  const FiveTissueTypeMap tt(g);
  const auto mask = gmwmi_extract(tt);
  for (int z = 0; z < 7; ++z) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 9; ++x) {
        bool want = false;
        if (g.at(x, y, z) == kWm) {
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
                const int nx = x + dx, ny = y + dy, nz = z + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= 9 || ny >= 8 || nz >= 7) continue;
                const auto l = g.at(nx, ny, nz);
                want = want || l == 1 || l == 2;
              }
        }
        EXPECT_EQ(mask.at(x, y, z) != 0, want);
      }
    }
  }
}

TEST(LengthBounds, Formula) {
  auto b = length_bounds(262144.0);
  EXPECT_NEAR(b.min_mm, 40.0, 1e-12);
  EXPECT_NEAR(b.max_mm, 116.36363636363636, 1e-9);
  b = length_bounds(1.0);
  EXPECT_NEAR(b.min_mm, 0.625, 1e-15);
  EXPECT_NEAR(b.max_mm, 1.8181818181818181, 1e-12);
  b = length_bounds(125000.0);
  EXPECT_NEAR(b.min_mm, 31.25, 1e-12);
  EXPECT_NEAR(b.max_mm, 90.909090909090907, 1e-9);
  EXPECT_THROW(length_bounds(0.0), ParameterError);
}

TEST(Classify, LookupAndTieBreak) {
  auto g = labels({4, 4, 4}, kWm, 2.0);
  g.at(2, 1, 1) = kCsf;
  const FiveTissueTypeMap tt(g);
  EXPECT_EQ(tt.classify(Eigen::Vector3d(2, 2, 2)), Tissue::wm);
  EXPECT_EQ(tt.classify(Eigen::Vector3d(1e6, 0, 0)), Tissue::background);
  // x = 3 mm is the face between voxel 1 (WM) and voxel 2 (CSF): belongs to voxel 1.
  EXPECT_EQ(tt.classify(Eigen::Vector3d(3.0, 2.0, 2.0)), Tissue::wm);
  EXPECT_EQ(tt.classify(Eigen::Vector3d(3.0 + 1e-9, 2.0, 2.0)), Tissue::csf);
}

TEST(Judge, AcceptsValidPath) {
  const auto tt = bar();  // volume 108: bounds [2.98, 8.66]
  const auto r = judge_streamline(line_x(0.0, 8.0, 0.5), tt, length_bounds(tt));
  EXPECT_FALSE(r.accepted);
  EXPECT_EQ(r.reason, RejectReason::endpoint_not_gm);
  LengthBounds wide{1.0, 20.0};
  EXPECT_TRUE(judge_streamline(line_x(0.0, 11.0, 1.0), tt, wide).accepted);
  // Interior points must not sit in cortical GM: x = 0.5 rounds down into voxel 0.
  EXPECT_EQ(judge_streamline(line_x(0.0, 11.0, 0.5), tt, wide).reason, RejectReason::invalid_interior);
}

TEST(Judge, ReasonsInOrder) {
  auto g = labels({12, 3, 3}, kWm);
  for (int y = 0; y < 3; ++y)
    for (int z = 0; z < 3; ++z) {
      g.at(0, y, z) = kCgm;
      g.at(11, y, z) = kCgm;
    }
  g.at(5, 1, 1) = kCsf;
  g.at(7, 1, 1) = static_cast<std::uint8_t>(Tissue::pathological);
  const FiveTissueTypeMap tt(g);
  const LengthBounds wide{1.0, 20.0};
  EXPECT_EQ(judge_streamline(line_x(0, 11, 1.0), tt, wide).reason, RejectReason::entered_csf);
  EXPECT_EQ(judge_streamline(line_x(6, 11, 0.5), tt, wide).reason, RejectReason::endpoint_not_gm);

  auto out = line_x(0, 4, 0.5);
  out.emplace_back(4.0, -5.0, 1.0);
  out.emplace_back(0.0, 1.0, 1.0);
  EXPECT_EQ(judge_streamline(out, tt, wide).reason, RejectReason::exited_brain);

  auto path = line_x(8, 11, 0.5);
  path.insert(path.begin(), Eigen::Vector3d(7, 1, 1));
  path.insert(path.begin(), Eigen::Vector3d(0, 1, 1));
  EXPECT_EQ(judge_streamline(path, tt, wide).reason, RejectReason::invalid_interior);

  const FiveTissueTypeMap clean = bar();
  EXPECT_EQ(judge_streamline(line_x(0, 11, 1.0), clean, LengthBounds{12.0, 20.0}).reason, RejectReason::too_short);
  EXPECT_EQ(judge_streamline(line_x(0, 11, 1.0), clean, LengthBounds{1.0, 10.0}).reason, RejectReason::too_long);
  EXPECT_EQ(judge_streamline(line_x(0, 0, 0.5), clean, wide).reason, RejectReason::too_short);
}

TEST(Judge, SubcorticalInteriorAllowed) {
  auto g = labels({12, 3, 3}, kWm);
  for (int y = 0; y < 3; ++y)
    for (int z = 0; z < 3; ++z) {
      g.at(0, y, z) = kCgm;
      g.at(11, y, z) = static_cast<std::uint8_t>(Tissue::subcortical_gm);
      g.at(6, y, z) = static_cast<std::uint8_t>(Tissue::subcortical_gm);
    }
  EXPECT_TRUE(judge_streamline(line_x(0, 11, 1.0), FiveTissueTypeMap(g), LengthBounds{1.0, 20.0}).accepted);
}
