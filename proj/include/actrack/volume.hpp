#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "actrack/errors.hpp"

namespace actrack {

using Index3 = std::array<std::int64_t, 3>;

// Maps continuous voxel indices to world millimetres.
class AffineTransform {
 public:
  AffineTransform() : matrix_(Eigen::Matrix4d::Identity()), inverse_(Eigen::Matrix4d::Identity()) {}

  explicit AffineTransform(const Eigen::Matrix4d& matrix) : matrix_(matrix) {
    const Eigen::Matrix3d linear = matrix.topLeftCorner<3, 3>();
    const double det = linear.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-12) {
      throw ParameterError("affine: upper-left 3x3 block is singular");
    }
    matrix_.row(3) << 0.0, 0.0, 0.0, 1.0;
    inverse_ = matrix_.inverse();
  }

  static AffineTransform scaling(double sx, double sy, double sz,
                                 const Eigen::Vector3d& origin = Eigen::Vector3d::Zero()) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 0) = sx;
    m(1, 1) = sy;
    m(2, 2) = sz;
    m.topRightCorner<3, 1>() = origin;
    return AffineTransform(m);
  }

  static AffineTransform isotropic(double s, const Eigen::Vector3d& origin = Eigen::Vector3d::Zero()) {
    return scaling(s, s, s, origin);
  }

  const Eigen::Matrix4d& matrix() const { return matrix_; }
  const Eigen::Matrix4d& inverse() const { return inverse_; }
  Eigen::Matrix3d linear() const { return matrix_.topLeftCorner<3, 3>(); }

  Eigen::Vector3d voxel_to_world(const Eigen::Vector3d& v) const {
    return matrix_.topLeftCorner<3, 3>() * v + matrix_.topRightCorner<3, 1>();
  }
  Eigen::Vector3d world_to_voxel(const Eigen::Vector3d& p) const {
    return inverse_.topLeftCorner<3, 3>() * p + inverse_.topRightCorner<3, 1>();
  }

  // mm per voxel along each index axis (column norms of the linear part).
  Eigen::Vector3d spacing() const { return matrix_.topLeftCorner<3, 3>().colwise().norm().transpose(); }

  // True when the linear part is diagonal, i.e. index axes align with world axes.
  bool axis_aligned(double tol = 1e-12) const {
    const Eigen::Matrix3d l = linear();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r != c && std::abs(l(r, c)) > tol) return false;
      }
    }
    return true;
  }

  bool operator==(const AffineTransform& o) const { return matrix_ == o.matrix_; }

 private:
  Eigen::Matrix4d matrix_;
  Eigen::Matrix4d inverse_;
};

// On-disk sample type; the in-memory representation is always the Grid's T.
enum class DataType { uint8, int16, int32, float32, float64 };

inline const char* to_string(DataType t) {
  switch (t) {
    case DataType::uint8: return "uint8";
    case DataType::int16: return "int16";
    case DataType::int32: return "int32";
    case DataType::float32: return "float32";
    case DataType::float64: return "float64";
  }
  return "unknown";
}

inline bool is_integer(DataType t) {
  return t == DataType::uint8 || t == DataType::int16 || t == DataType::int32;
}

// Lattice shape plus voxel-to-world mapping.
struct GridGeometry {
  Index3 dims{1, 1, 1};
  AffineTransform affine;

  std::int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  Eigen::Vector3d spacing() const { return affine.spacing(); }
  double voxel_volume() const { return std::abs(affine.linear().determinant()); }

  bool contains(const Index3& i) const {
    return i[0] >= 0 && i[1] >= 0 && i[2] >= 0 && i[0] < dims[0] && i[1] < dims[1] && i[2] < dims[2];
  }
  std::int64_t linear_index(const Index3& i) const { return (i[2] * dims[1] + i[1]) * dims[0] + i[0]; }
  std::int64_t linear_index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (z * dims[1] + y) * dims[0] + x;
  }
  Index3 unravel(std::int64_t lin) const {
    const std::int64_t x = lin % dims[0];
    const std::int64_t y = (lin / dims[0]) % dims[1];
    return {x, y, lin / (dims[0] * dims[1])};
  }

  Eigen::Vector3d voxel_center(const Index3& i) const {
    return affine.voxel_to_world(Eigen::Vector3d(double(i[0]), double(i[1]), double(i[2])));
  }

  // Nearest voxel with round-half-down per axis: voxel i covers (i - 0.5, i + 0.5].
  Index3 nearest_index(const Eigen::Vector3d& world) const {
    const Eigen::Vector3d v = affine.world_to_voxel(world);
    Index3 out{};
    for (int a = 0; a < 3; ++a) {
      const double c = std::ceil(v[a] - 0.5);
      out[a] = std::isfinite(c) && std::abs(c) < 4e18 ? static_cast<std::int64_t>(c)
                                                      : std::numeric_limits<std::int64_t>::min() / 2;
    }
    return out;
  }

  std::optional<Index3> nearest_voxel(const Eigen::Vector3d& world) const {
    const Index3 i = nearest_index(world);
    if (!contains(i)) return std::nullopt;
    return i;
  }

  bool same_lattice(const GridGeometry& o, double tol = 1e-6) const {
    return dims == o.dims && (affine.matrix() - o.affine.matrix()).cwiseAbs().maxCoeff() <= tol;
  }
};

// Voxel lattice with channel-minor storage: data[(voxel * channels) + c].
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(const GridGeometry& geom, int channels = 1, T fill = T{})
      : geom_(geom), channels_(channels) {
    if (channels < 1) throw ParameterError("grid: channel count must be positive");
    for (auto d : geom.dims) {
      if (d < 1) throw ParameterError("grid: dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(geom.voxel_count() * channels), fill);
  }
  Grid(const Index3& dims, const AffineTransform& affine, int channels = 1, T fill = T{})
      : Grid(GridGeometry{dims, affine}, channels, fill) {}

  const GridGeometry& geometry() const { return geom_; }
  const Index3& dims() const { return geom_.dims; }
  const AffineTransform& affine() const { return geom_.affine; }
  int channels() const { return channels_; }
  std::int64_t voxel_count() const { return geom_.voxel_count(); }
  Eigen::Vector3d spacing() const { return geom_.spacing(); }

  DataType disk_type() const { return disk_type_; }
  void set_disk_type(DataType t) { disk_type_ = t; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) {
    return data_[static_cast<std::size_t>(geom_.linear_index(x, y, z) * channels_ + c)];
  }
  const T& at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) const {
    return data_[static_cast<std::size_t>(geom_.linear_index(x, y, z) * channels_ + c)];
  }
  T& at(const Index3& i, int c = 0) { return at(i[0], i[1], i[2], c); }
  const T& at(const Index3& i, int c = 0) const { return at(i[0], i[1], i[2], c); }

  std::span<T> voxel(std::int64_t lin) {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(lin * channels_), static_cast<std::size_t>(channels_));
  }
  std::span<const T> voxel(std::int64_t lin) const {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(lin * channels_),
                                             static_cast<std::size_t>(channels_));
  }

 private:
  GridGeometry geom_;
  int channels_ = 1;
  DataType disk_type_ = std::is_integral_v<T> ? DataType::int32 : DataType::float32;
  std::vector<T> data_;
};

using VoxelGrid = Grid<double>;
using LabelGrid = Grid<std::uint8_t>;

// Trilinear interpolation at continuous voxel coordinates. Returns false when the
// point lies outside [0, n-1] on any axis; `out` must hold channels() values.
template <typename T>
bool sample_trilinear_voxel(const Grid<T>& g, const Eigen::Vector3d& v, std::span<double> out) {
  const auto& d = g.dims();
  std::int64_t i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double hi = double(d[a] - 1);
    if (!(v[a] >= 0.0 && v[a] <= hi)) return false;
    const double fl = std::floor(v[a]);
    i0[a] = static_cast<std::int64_t>(fl);
    f[a] = v[a] - fl;
    if (i0[a] >= d[a] - 1) {
      i0[a] = d[a] - 1;
      f[a] = 0.0;
    }
  }
  const int nc = g.channels();
  for (int c = 0; c < nc; ++c) out[static_cast<std::size_t>(c)] = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
    const double w = (bx ? f[0] : 1.0 - f[0]) * (by ? f[1] : 1.0 - f[1]) * (bz ? f[2] : 1.0 - f[2]);
    if (w == 0.0) continue;
    const auto vox = g.voxel(g.geometry().linear_index(i0[0] + bx, i0[1] + by, i0[2] + bz));
    for (int c = 0; c < nc; ++c) out[static_cast<std::size_t>(c)] += w * static_cast<double>(vox[static_cast<std::size_t>(c)]);
  }
  return true;
}

// World-space trilinear sample; nullopt signals a boundary crossing.
template <typename T>
std::optional<Eigen::VectorXd> sample_trilinear(const Grid<T>& g, const Eigen::Vector3d& world) {
  Eigen::VectorXd out(g.channels());
  if (!sample_trilinear_voxel(g, g.affine().world_to_voxel(world), std::span<double>(out.data(), out.size()))) {
    return std::nullopt;
  }
  return out;
}

}  // namespace actrack
