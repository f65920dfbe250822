#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <zlib.h>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "actrack/errors.hpp"
#include "actrack/volume.hpp"

namespace actrack {

namespace nifti_detail {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum Code : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

inline int bytes_per_sample(DataType t) {
  switch (t) {
    case DataType::uint8: return 1;
    case DataType::int16: return 2;
    case DataType::int32: return 4;
    case DataType::float32: return 4;
    case DataType::float64: return 8;
  }
  return 0;
}

inline std::int16_t code_of(DataType t) {
  switch (t) {
    case DataType::uint8: return kUint8;
    case DataType::int16: return kInt16;
    case DataType::int32: return kInt32;
    case DataType::float32: return kFloat32;
    case DataType::float64: return kFloat64;
  }
  return 0;
}

inline DataType type_of(std::int16_t code) {
  switch (code) {
    case kUint8: return DataType::uint8;
    case kInt16: return DataType::int16;
    case kInt32: return DataType::int32;
    case kFloat32: return DataType::float32;
    case kFloat64: return DataType::float64;
    default: throw UnsupportedError("nifti: unsupported datatype code " + std::to_string(code));
  }
}

struct GzFile {
  gzFile f = nullptr;
  GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
  explicit operator bool() const { return f != nullptr; }

  // Reads exactly n bytes; returns the count actually read.
  std::size_t read(void* dst, std::size_t n) {
    auto* p = static_cast<unsigned char*>(dst);
    std::size_t done = 0;
    while (done < n) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(f, p + done, chunk);
      if (got <= 0) break;
      done += static_cast<std::size_t>(got);
    }
    return done;
  }
  bool write(const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    std::size_t done = 0;
    while (done < n) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int put = gzwrite(f, p + done, chunk);
      if (put <= 0) return false;
      done += static_cast<std::size_t>(put);
    }
    return true;
  }
};

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
T load_field(const unsigned char* hdr, int offset, bool swap) {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  if (swap) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void store_field(unsigned char* hdr, int offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

inline void swap_bytes(unsigned char* p, std::size_t count, int width) {
  for (std::size_t i = 0; i < count; ++i) std::reverse(p + i * width, p + (i + 1) * width);
}

inline Eigen::Matrix4d quatern_to_affine(double qb, double qc, double qd, double qx, double qy, double qz,
                                         double dx, double dy, double dz, double qfac) {
  double a = 1.0 - (qb * qb + qc * qc + qd * qd);
  if (a < 1e-7) {
    const double n = 1.0 / std::sqrt(qb * qb + qc * qc + qd * qd);
    qb *= n;
    qc *= n;
    qd *= n;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  if (dx <= 0) dx = 1;
  if (dy <= 0) dy = 1;
  if (dz <= 0) dz = 1;
  if (qfac < 0) dz = -dz;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(0, 0) = (a * a + qb * qb - qc * qc - qd * qd) * dx;
  m(0, 1) = 2 * (qb * qc - a * qd) * dy;
  m(0, 2) = 2 * (qb * qd + a * qc) * dz;
  m(1, 0) = 2 * (qb * qc + a * qd) * dx;
  m(1, 1) = (a * a + qc * qc - qb * qb - qd * qd) * dy;
  m(1, 2) = 2 * (qc * qd - a * qb) * dz;
  m(2, 0) = 2 * (qb * qd - a * qc) * dx;
  m(2, 1) = 2 * (qc * qd + a * qb) * dy;
  m(2, 2) = (a * a + qd * qd - qc * qc - qb * qb) * dz;
  m(0, 3) = qx;
  m(1, 3) = qy;
  m(2, 3) = qz;
  return m;
}

struct Quatern {
  bool valid = false;
  double b = 0, c = 0, d = 0, qfac = 1;
};

// Quaternion for the rotation part when the linear block is a scaled rotation.
inline Quatern affine_to_quatern(const Eigen::Matrix3d& linear) {
  Quatern q;
  Eigen::Matrix3d r = linear;
  const Eigen::Vector3d norms = r.colwise().norm();
  for (int c = 0; c < 3; ++c) r.col(c) /= norms[c];
  if (r.determinant() < 0) {
    r.col(2) = -r.col(2);
    q.qfac = -1;
  }
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-5) return q;
  Eigen::Quaterniond quat(r);
  quat.normalize();
  if (quat.w() < 0) quat.coeffs() = -quat.coeffs();
  q.b = quat.x();
  q.c = quat.y();
  q.d = quat.z();
  q.valid = true;
  return q;
}

}  // namespace nifti_detail

// Reads a NIfTI-1 volume into working (64-bit) precision.
inline VoxelGrid load_volume(const std::string& path) {
  using namespace nifti_detail;
  GzFile in(path, "rb");
  if (!in) throw IoError("nifti: cannot open " + path);
  std::array<unsigned char, kHeaderSize> hdr{};
  if (in.read(hdr.data(), hdr.size()) != hdr.size()) throw FormatError("nifti: truncated header in " + path);

  bool swap = false;
  std::int32_t sizeof_hdr = load_field<std::int32_t>(hdr.data(), 0, false);
  if (sizeof_hdr != kHeaderSize) {
    if (load_field<std::int32_t>(hdr.data(), 0, true) != kHeaderSize) {
      throw FormatError("nifti: bad sizeof_hdr in " + path);
    }
    swap = true;
  }
  if (!(hdr[344] == 'n' && (hdr[345] == '+' || hdr[345] == 'i') && hdr[346] == '1')) {
    throw FormatError("nifti: bad magic in " + path);
  }
  if (hdr[345] == 'i') throw UnsupportedError("nifti: two-file (.hdr/.img) storage is not supported");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load_field<std::int16_t>(hdr.data(), 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("nifti: bad dim[0]");
  Index3 dims{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (a < dim[0]) {
      if (dim[a + 1] < 1) throw FormatError("nifti: non-positive dimension");
      dims[a] = dim[a + 1];
    }
  }
  std::int64_t channels = 1;
  for (int a = 4; a <= dim[0]; ++a) {
    if (dim[a] < 1) throw FormatError("nifti: non-positive dimension");
    channels *= dim[a];
  }
  if (channels > std::numeric_limits<int>::max()) throw FormatError("nifti: too many channels");

  const DataType dtype = type_of(load_field<std::int16_t>(hdr.data(), 70, swap));
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = load_field<float>(hdr.data(), 76 + 4 * i, swap);
  const float vox_offset = load_field<float>(hdr.data(), 108, swap);
  double slope = load_field<float>(hdr.data(), 112, swap);
  double inter = load_field<float>(hdr.data(), 116, swap);
  if (!std::isfinite(slope) || slope == 0.0) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  const std::int16_t qform_code = load_field<std::int16_t>(hdr.data(), 252, swap);
  const std::int16_t sform_code = load_field<std::int16_t>(hdr.data(), 254, swap);

  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) m(r, c) = load_field<float>(hdr.data(), 280 + 16 * r + 4 * c, swap);
    }
  } else if (qform_code > 0) {
    auto f = [&](int off) { return double(load_field<float>(hdr.data(), off, swap)); };
    m = quatern_to_affine(f(256), f(260), f(264), f(268), f(272), f(276), pixdim[1], pixdim[2], pixdim[3],
                          pixdim[0] < 0 ? -1.0 : 1.0);
  } else {
    for (int a = 0; a < 3; ++a) m(a, a) = pixdim[a + 1] > 0 ? pixdim[a + 1] : 1.0;
  }

  VoxelGrid grid(dims, AffineTransform(m), static_cast<int>(channels));
  grid.set_disk_type(dtype);

  const std::int64_t offset = static_cast<std::int64_t>(vox_offset);
  if (offset < kHeaderSize) throw FormatError("nifti: vox_offset inside header");
  std::vector<unsigned char> skip(static_cast<std::size_t>(offset - kHeaderSize));
  if (!skip.empty() && in.read(skip.data(), skip.size()) != skip.size()) throw FormatError("nifti: truncated file");

  const int width = bytes_per_sample(dtype);
  const std::int64_t nvox = grid.voxel_count();
  const std::size_t total = static_cast<std::size_t>(nvox * channels);
  std::vector<unsigned char> raw(total * static_cast<std::size_t>(width));
  if (in.read(raw.data(), raw.size()) != raw.size()) throw FormatError("nifti: truncated data in " + path);
  if (swap && width > 1) swap_bytes(raw.data(), total, width);

  auto sample = [&](std::size_t k) -> double {
    const unsigned char* p = raw.data() + k * static_cast<std::size_t>(width);
    switch (dtype) {
      case DataType::uint8: return *p;
      case DataType::int16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
      case DataType::int32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
      case DataType::float32: { float v; std::memcpy(&v, p, 4); return v; }
      case DataType::float64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
  };
  auto& data = grid.storage();
  const bool scaled = slope != 1.0 || inter != 0.0;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t v = 0; v < nvox; ++v) {
      const double raw_value = sample(static_cast<std::size_t>(c * nvox + v));
      data[static_cast<std::size_t>(v * channels + c)] = scaled ? raw_value * slope + inter : raw_value;
    }
  }
  if (scaled && is_integer(dtype)) grid.set_disk_type(DataType::float32);
  return grid;
}

// Writes a NIfTI-1 file using grid.disk_type() for samples; gzip when the path ends in ".gz".
template <typename T>
void save_volume(const Grid<T>& grid, const std::string& path) {
  using namespace nifti_detail;
  std::array<unsigned char, kVoxOffset> hdr{};
  const int channels = grid.channels();
  const DataType dtype = grid.disk_type();
  const auto& dims = grid.dims();
  for (auto d : dims) {
    if (d > std::numeric_limits<std::int16_t>::max()) throw UnsupportedError("nifti: dimension exceeds 32767");
  }
  if (channels > std::numeric_limits<std::int16_t>::max()) throw UnsupportedError("nifti: too many channels");

  store_field<std::int32_t>(hdr.data(), 0, kHeaderSize);
  hdr[39] = 0;
  std::array<std::int16_t, 8> dim{static_cast<std::int16_t>(channels > 1 ? 4 : 3),
                                  static_cast<std::int16_t>(dims[0]),
                                  static_cast<std::int16_t>(dims[1]),
                                  static_cast<std::int16_t>(dims[2]),
                                  static_cast<std::int16_t>(channels),
                                  1,
                                  1,
                                  1};
  for (int i = 0; i < 8; ++i) store_field<std::int16_t>(hdr.data(), 40 + 2 * i, dim[i]);
  store_field<std::int16_t>(hdr.data(), 70, code_of(dtype));
  store_field<std::int16_t>(hdr.data(), 72, static_cast<std::int16_t>(8 * bytes_per_sample(dtype)));

  const Eigen::Matrix4d& m = grid.affine().matrix();
  const Eigen::Vector3d spacing = grid.spacing();
  const Quatern q = affine_to_quatern(m.topLeftCorner<3, 3>());
  std::array<float, 8> pixdim{static_cast<float>(q.qfac), static_cast<float>(spacing[0]),
                              static_cast<float>(spacing[1]), static_cast<float>(spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store_field<float>(hdr.data(), 76 + 4 * i, pixdim[i]);
  store_field<float>(hdr.data(), 108, static_cast<float>(kVoxOffset));
  store_field<float>(hdr.data(), 112, 1.0f);
  store_field<float>(hdr.data(), 116, 0.0f);
  hdr[123] = 2 | 8;  // mm, seconds
  store_field<std::int16_t>(hdr.data(), 252, static_cast<std::int16_t>(q.valid ? 1 : 0));
  store_field<std::int16_t>(hdr.data(), 254, 1);
  if (q.valid) {
    store_field<float>(hdr.data(), 256, static_cast<float>(q.b));
    store_field<float>(hdr.data(), 260, static_cast<float>(q.c));
    store_field<float>(hdr.data(), 264, static_cast<float>(q.d));
    store_field<float>(hdr.data(), 268, static_cast<float>(m(0, 3)));
    store_field<float>(hdr.data(), 272, static_cast<float>(m(1, 3)));
    store_field<float>(hdr.data(), 276, static_cast<float>(m(2, 3)));
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) store_field<float>(hdr.data(), 280 + 16 * r + 4 * c, static_cast<float>(m(r, c)));
  }
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  const int width = bytes_per_sample(dtype);
  const std::int64_t nvox = grid.voxel_count();
  const std::size_t total = static_cast<std::size_t>(nvox * channels);
  std::vector<unsigned char> raw(total * static_cast<std::size_t>(width));
  const auto& data = grid.storage();

  auto put_integer = [&](unsigned char* dst, double v, double lo, double hi, auto tag) {
    using I = decltype(tag);
    if (!std::isfinite(v)) throw ParameterError("nifti: non-finite value in integer volume");
    const double r = std::nearbyint(v);
    if (r < lo || r > hi) throw ParameterError("nifti: value out of range for integer datatype");
    const I iv = static_cast<I>(r);
    std::memcpy(dst, &iv, sizeof(I));
  };
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t v = 0; v < nvox; ++v) {
      const double value = static_cast<double>(data[static_cast<std::size_t>(v * channels + c)]);
      unsigned char* dst = raw.data() + static_cast<std::size_t>(c * nvox + v) * static_cast<std::size_t>(width);
      switch (dtype) {
        case DataType::uint8: put_integer(dst, value, 0, 255, std::uint8_t{}); break;
        case DataType::int16: put_integer(dst, value, -32768, 32767, std::int16_t{}); break;
        case DataType::int32: put_integer(dst, value, -2147483648.0, 2147483647.0, std::int32_t{}); break;
        case DataType::float32: { const float f = static_cast<float>(value); std::memcpy(dst, &f, 4); break; }
        case DataType::float64: std::memcpy(dst, &value, 8); break;
      }
    }
  }
  if constexpr (std::endian::native == std::endian::big) {
    throw UnsupportedError("nifti: writing on big-endian hosts is not supported");
  }

  GzFile out(path, ends_with(path, ".gz") ? "wb6" : "wbT");
  if (!out) throw IoError("nifti: cannot create " + path);
  if (!out.write(hdr.data(), hdr.size()) || (!raw.empty() && !out.write(raw.data(), raw.size()))) {
    throw IoError("nifti: write failed for " + path);
  }
}

}  // namespace actrack
