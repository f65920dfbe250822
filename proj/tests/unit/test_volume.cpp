#include <filesystem>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "actrack/nifti.hpp"
#include "actrack/volume.hpp"
#include "test_util.hpp"

using namespace actrack;

TEST(Volume, ZeroVolumeIdentityAffine) {
  VoxelGrid g({4, 4, 4}, AffineTransform{}, 1, 0.0);
  g.set_disk_type(DataType::float32);
  const auto path = test_util::temp_path("zeros.nii");
  save_volume(g, path);
  const auto back = load_volume(path);
  EXPECT_EQ(back.voxel_count(), 64);
  for (double v : back.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(back.affine().matrix().isApprox(Eigen::Matrix4d::Identity()));
}

TEST(Volume, RoundTripRandomGrid) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix() * 1.2;
  m.topRightCorner<3, 1>() << -10.5, 4.25, 7.0;
  VoxelGrid g({8, 8, 8}, AffineTransform(m), 1);
  g.set_disk_type(DataType::float32);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-100.0f, 100.0f);
  for (double& v : g.storage()) v = u(rng);  // float32-representable
  for (const char* name : {"rand.nii", "rand.nii.gz"}) {
    const auto path = test_util::temp_path(name);
    save_volume(g, path);
    const auto back = load_volume(path);
    ASSERT_EQ(back.dims(), g.dims());
    EXPECT_EQ(back.storage(), g.storage()) << name;
    EXPECT_LE((back.affine().matrix() - m).cwiseAbs().maxCoeff(), 1e-6) << name;
  }
}

TEST(Volume, RoundTripAt1p2mm) {
  VoxelGrid g({3, 3, 3}, AffineTransform::isotropic(1.2), 1);
  const auto path = test_util::temp_path("spacing.nii");
  save_volume(g, path);
  const auto s = load_volume(path).spacing();
  EXPECT_NEAR(s[0], 1.2, 1e-6);
  EXPECT_NEAR(s[1], 1.2, 1e-6);
  EXPECT_NEAR(s[2], 1.2, 1e-6);
}

TEST(Volume, IntegerLabelsKeepDatatype) {
  LabelGrid g({5, 4, 3}, AffineTransform{}, 1, 0);
  g.set_disk_type(DataType::uint8);
  for (std::size_t i = 0; i < g.storage().size(); ++i) g.storage()[i] = static_cast<std::uint8_t>(i % 6);
  const auto path = test_util::temp_path("labels.nii.gz");
  save_volume(g, path);
  const auto back = load_volume(path);
  EXPECT_EQ(back.disk_type(), DataType::uint8);
  for (std::size_t i = 0; i < g.storage().size(); ++i) EXPECT_EQ(back.storage()[i], double(g.storage()[i]));
}

TEST(Volume, SixChannelRoundTrip) {
  VoxelGrid g({3, 2, 2}, AffineTransform::isotropic(2.0), 6);
  g.set_disk_type(DataType::float64);
  for (std::size_t i = 0; i < g.storage().size(); ++i) g.storage()[i] = 0.001 * double(i) + 1e-9;
  const auto path = test_util::temp_path("tensor.nii");
  save_volume(g, path);
  const auto back = load_volume(path);
  EXPECT_EQ(back.channels(), 6);
  EXPECT_EQ(back.storage(), g.storage());
  EXPECT_DOUBLE_EQ(back.at(2, 1, 1, 5), g.at(2, 1, 1, 5));
}

TEST(Volume, LoadErrors) {
  EXPECT_THROW(load_volume(test_util::temp_path("missing.nii")), IoError);
  const auto path = test_util::temp_path("junk.nii");
  test_util::write_text(path, std::string(400, 'x'));
  EXPECT_THROW(load_volume(path), FormatError);
}

TEST(Trilinear, ConstantGrid) {
  VoxelGrid g({4, 5, 6}, AffineTransform::isotropic(1.5), 1, 3.25);
  const auto v = sample_trilinear(g, Eigen::Vector3d(2.2, 3.1, 4.9));
  ASSERT_TRUE(v);
  EXPECT_DOUBLE_EQ((*v)[0], 3.25);
}

TEST(Trilinear, MidpointIsHalf) {
  VoxelGrid g({2, 1, 1}, AffineTransform{}, 1, 0.0);
  g.at(1, 0, 0) = 1.0;
  const auto v = sample_trilinear(g, Eigen::Vector3d(0.5, 0.0, 0.0));
  ASSERT_TRUE(v);
  EXPECT_DOUBLE_EQ((*v)[0], 0.5);
}

TEST(Trilinear, MatchesEightTermSum) {
  VoxelGrid g({6, 7, 5}, AffineTransform::scaling(1.2, 0.8, 2.0, Eigen::Vector3d(3, -2, 1)), 2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : g.storage()) v = u(rng);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector3d vox(5.0 * (u(rng) + 1) / 2, 6.0 * (u(rng) + 1) / 2, 4.0 * (u(rng) + 1) / 2);
    const auto got = sample_trilinear(g, g.affine().voxel_to_world(vox));
    ASSERT_TRUE(got);
    for (int c = 0; c < 2; ++c) {
      double want = 0.0;
      const int x0 = std::min(4, int(std::floor(vox[0]))), y0 = std::min(5, int(std::floor(vox[1]))),
                z0 = std::min(3, int(std::floor(vox[2])));
      const double fx = vox[0] - x0, fy = vox[1] - y0, fz = vox[2] - z0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            want += (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz) * g.at(x0 + dx, y0 + dy, z0 + dz, c);
      EXPECT_NEAR((*got)[c], want, 1e-12);
    }
  }
}

TEST(Trilinear, OutsideIsBoundary) {
  VoxelGrid g({3, 3, 3}, AffineTransform{}, 1, 1.0);
  EXPECT_FALSE(sample_trilinear(g, Eigen::Vector3d(-0.01, 1, 1)));
  EXPECT_FALSE(sample_trilinear(g, Eigen::Vector3d(1, 2.01, 1)));
  EXPECT_TRUE(sample_trilinear(g, Eigen::Vector3d(2, 2, 2)));
}

TEST(Geometry, NearestIndexRoundsHalfDown) {
  GridGeometry g{{4, 4, 4}, AffineTransform::isotropic(2.0)};
  // World 3.0 is voxel coordinate 1.5: the face between voxels 1 and 2 belongs to voxel 1.
  EXPECT_EQ(g.nearest_index(Eigen::Vector3d(3.0, 3.0, 3.0)), (Index3{1, 1, 1}));
  EXPECT_EQ(g.nearest_index(Eigen::Vector3d(3.0001, 2.9999, 1.0)), (Index3{2, 1, 0}));
  EXPECT_FALSE(g.nearest_voxel(Eigen::Vector3d(-1.0, 0, 0)));  // voxel -0.5 -> index -1
  EXPECT_TRUE(g.nearest_voxel(Eigen::Vector3d(-0.999, 0, 0)));
}

TEST(Geometry, AffineRejectsSingular) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(2, 2) = 0.0;
  EXPECT_THROW(AffineTransform{m}, ParameterError);
}
