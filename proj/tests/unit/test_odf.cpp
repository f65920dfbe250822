#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "actrack/odf.hpp"

using namespace actrack;

namespace {

const Eigen::Matrix3d kProlate = Eigen::Vector3d(1.5e-3, 0.3e-3, 0.3e-3).asDiagonal();

}  // namespace

TEST(Sphere, CountWeightsSymmetry) {
  const auto& s = default_sphere();
  ASSERT_EQ(s.size(), 724);
  EXPECT_NEAR(s.weight * s.size(), 4.0 * std::numbers::pi, 1e-12);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& u : s.directions) {
    EXPECT_NEAR(u.norm(), 1.0, 1e-14);
    mean += u;
  }
  mean /= s.size();
  const Eigen::Vector3d a(0.3, -1.2, 2.0);
  EXPECT_LT(std::abs(a.dot(mean)), 1e-2 * a.norm());
  for (int i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.directions[static_cast<std::size_t>(s.antipode(i))], -s.directions[static_cast<std::size_t>(i)]);
  }
}

TEST(Sphere, NearlyUniformCoverage) {
  // Every unit vector lies within 6 degrees of some grid point.
  const auto& s = default_sphere();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int t = 0; t < 2000; ++t) {
    const Eigen::Vector3d u = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
    EXPECT_GT(s.directions[static_cast<std::size_t>(s.nearest(u))].dot(u), std::cos(6.0 * std::numbers::pi / 180));
  }
}

TEST(Dodf, IsotropicIsUniform) {
  const auto v = dodf_eval(0.8e-3 * Eigen::Matrix3d::Identity(), default_sphere());
  for (double x : v) EXPECT_NEAR(x, 0.07957747154594767, 1e-12);
}

TEST(Dodf, ProlateClosedForm) {
  const DodfModel m(kProlate);
  EXPECT_NEAR(m.value(Eigen::Vector3d::UnitX()) / m.value(Eigen::Vector3d::UnitY()), 11.180339887498949, 1e-9);
  EXPECT_NEAR(m.value(Eigen::Vector3d::UnitX()), 0.3978873577297384, 1e-12);
  EXPECT_NEAR(m.value(Eigen::Vector3d::UnitX()), 0.3979, 1e-4);
  EXPECT_LT((m.peak_direction().cwiseAbs() - Eigen::Vector3d::UnitX()).norm(), 1e-12);
}

TEST(Dodf, LiteralConventionPeaksAcross) {
  const DodfModel m(kProlate, DodfConvention::literal);
  EXPECT_NEAR(m.value(Eigen::Vector3d::UnitY()) / m.value(Eigen::Vector3d::UnitX()), 11.180339887498949, 1e-9);
}

TEST(Dodf, DegenerateTensors) {
  EXPECT_THROW(DodfModel(Eigen::Matrix3d::Zero()), DegenerateTensorError);
  Eigen::Matrix3d nan = kProlate;
  nan(0, 0) = std::nan("");
  EXPECT_THROW(DodfModel{nan}, DegenerateTensorError);
  // Planar tensor: the zero eigenvalue is lifted to the floor.
  const Eigen::Matrix3d planar = Eigen::Vector3d(1e-3, 1e-3, 0.0).asDiagonal();
  const DodfModel m(planar);
  EXPECT_TRUE(std::isfinite(m.value(Eigen::Vector3d::UnitZ())));
  EXPECT_THROW(DodfModel(planar, DodfConvention::inverse, false), DegenerateTensorError);
}

TEST(Dodf, SharpenedRatioIsBoundedByOne) {
  const DodfModel m(kProlate);
  const auto& s = default_sphere();
  double top = 0.0;
  for (const auto& u : s.directions) {
    const double r = m.sharpened_ratio(u, 4.0);
    EXPECT_LE(r, 1.0 + 1e-12);
    top = std::max(top, r);
  }
  EXPECT_NEAR(m.sharpened_ratio(Eigen::Vector3d::UnitX(), 4.0), 1.0, 1e-12);
  EXPECT_GT(top, 0.5);
}

TEST(Sharpen, IsotropicStaysUniform) {
  for (double k : {1.0, 2.0, 4.0, 8.0}) {
    const auto p = pmf_from_tensor(1e-3 * Eigen::Matrix3d::Identity(), default_sphere(), k);
    for (double x : p.p) EXPECT_NEAR(x, 1.0 / 724, 1e-15);
  }
}

TEST(Sharpen, RatioExponentiation) {
  EXPECT_THROW(build_sphere(7), ParameterError);
  SphereGrid s;
  s.directions = {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), -Eigen::Vector3d::UnitX(),
                  -Eigen::Vector3d::UnitY()};
  s.weight = std::numbers::pi;
  const auto p = pmf_from_tensor(kProlate, s, 2.0);
  EXPECT_NEAR(p.p[0] / p.p[1], 125.0, 1e-9);
  double sum = 0.0;
  for (double x : p.p) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-15);
}

TEST(Sharpen, UnitExponentIsNormalisedDodf) {
  const auto& s = default_sphere();
  const auto d = dodf_eval(kProlate, s);
  double sum = 0.0;
  for (double x : d) sum += x;
  const auto p = sharpen_normalize(d, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(p.p[i], d[i] / sum, 1e-15);
}

TEST(Sharpen, Errors) {
  const std::vector<double> d{1.0, 2.0};
  EXPECT_THROW(sharpen_normalize(d, 0.0), ParameterError);
  const std::vector<double> bad{1.0, 0.0};
  EXPECT_THROW(sharpen_normalize(bad, 1.0), ParameterError);
}

TEST(Sample, UniformChiSquare) {
  const auto& s = default_sphere();
  PropagationPMF pmf{std::vector<double>(724, 1.0 / 724), 1.0};
  std::mt19937_64 rng(12345);
  std::vector<int> counts(362, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto idx = sample_direction(pmf, s, std::nullopt, 90.0, rng);
    ASSERT_TRUE(idx);
    ASSERT_LT(*idx, 362);
    ++counts[static_cast<std::size_t>(*idx)];
  }
  const double expected = double(draws) / 362;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 426.4336435140837);  // 99th percentile of chi-square with 361 dof
}

TEST(Sample, PointMass) {
  const auto& s = default_sphere();
  PropagationPMF pmf{std::vector<double>(724, 0.0), 1.0};
  pmf.p[100] = 1.0;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto idx = sample_direction(pmf, s, s.directions[100], 20.0, rng);
    ASSERT_TRUE(idx);
    EXPECT_EQ(*idx, 100);
  }
}

TEST(Sample, EmptyConeTerminates) {
  const auto& s = default_sphere();
  PropagationPMF pmf{std::vector<double>(724, 0.0), 1.0};
  const int i = s.nearest(Eigen::Vector3d::UnitZ());
  pmf.p[static_cast<std::size_t>(i)] = 0.5;
  pmf.p[static_cast<std::size_t>(s.antipode(i))] = 0.5;
  std::mt19937_64 rng(1);
  EXPECT_FALSE(sample_direction(pmf, s, Eigen::Vector3d::UnitX(), 20.0, rng));
}

TEST(Sample, ConeRestriction) {
  const auto& s = default_sphere();
  const auto pmf = pmf_from_tensor(1e-3 * Eigen::Matrix3d::Identity(), s, 1.0);
  std::mt19937_64 rng(4);
  const Eigen::Vector3d prev = Eigen::Vector3d(1, 1, 0).normalized();
  for (int i = 0; i < 1000; ++i) {
    const auto idx = sample_direction(pmf, s, prev, 20.0, rng);
    ASSERT_TRUE(idx);
    EXPECT_GE(s.directions[static_cast<std::size_t>(*idx)].dot(prev), std::cos(20.0 * std::numbers::pi / 180) - 1e-12);
  }
}
