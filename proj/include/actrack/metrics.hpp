#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "actrack/errors.hpp"
#include "actrack/tck.hpp"
#include "actrack/volume.hpp"

namespace actrack {

using DensityMap = Grid<std::int32_t>;
using BinaryMask = LabelGrid;

// Voxels (linear indices, sorted, unique) visited by a polyline. Every segment is sampled at
// spacing no larger than a quarter of the finest voxel size; points off the grid are skipped.
inline std::vector<std::int64_t> visited_voxels(std::span<const Eigen::Vector3d> points, const GridGeometry& geom) {
  std::vector<std::int64_t> out;
  const double fine = geom.spacing().minCoeff() / 4.0;
  const auto visit = [&](const Eigen::Vector3d& p) {
    if (auto i = geom.nearest_voxel(p)) out.push_back(geom.linear_index(*i));
  };
  if (!points.empty()) visit(points[0]);
  for (std::size_t i = 1; i < points.size(); ++i) {
    const Eigen::Vector3d d = points[i] - points[i - 1];
    const int n = std::max(4, static_cast<int>(std::ceil(d.norm() / fine)));
    for (int j = 1; j <= n; ++j) visit(points[i - 1] + d * (double(j) / n));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline DensityMap density_map(const Tractogram& t, const GridGeometry& geom) {
  DensityMap d(geom, 1, 0);
  for (const auto& s : t.streamlines) {
    for (auto v : visited_voxels(s.points, geom)) ++d.data()[static_cast<std::size_t>(v)];
  }
  return d;
}

// Nearest-rank threshold over the non-zero densities (pct is a fraction, 0.01 = 1%); keeps
// voxels at or above it.
inline BinaryMask binarize_percentile(const DensityMap& density, double pct = 0.01) {
  if (!(pct >= 0.0 && pct <= 1.0)) throw ParameterError("binarize: percentile must lie in [0, 1]");
  std::vector<std::int32_t> nz;
  for (auto v : density.data()) {
    if (v > 0) nz.push_back(v);
  }
  if (nz.empty()) throw ParameterError("binarize: density map has no non-zero voxels");
  std::sort(nz.begin(), nz.end());
  const double n = double(nz.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, nz.size());
  const std::int32_t threshold = nz[rank - 1];
  BinaryMask mask(density.geometry(), 1, 0);
  mask.set_disk_type(DataType::uint8);
  for (std::size_t i = 0; i < mask.data().size(); ++i) {
    const auto v = density.data()[i];
    mask.data()[i] = v > 0 && v >= threshold ? 1 : 0;
  }
  return mask;
}

namespace metrics_detail {

inline void require_same_grid(const BinaryMask& a, const BinaryMask& b) {
  if (!a.geometry().same_lattice(b.geometry())) throw GridMismatchError("metrics: masks are on different grids");
}

inline std::int64_t count(const BinaryMask& m) {
  return std::count_if(m.data().begin(), m.data().end(), [](auto v) { return v != 0; });
}

// Mask voxels with a 6-connected neighbour outside the mask; off-grid counts as outside.
inline std::vector<std::int64_t> surface(const BinaryMask& m) {
  const auto& g = m.geometry();
  std::vector<std::int64_t> out;
  for (std::int64_t v = 0; v < g.voxel_count(); ++v) {
    if (m.data()[static_cast<std::size_t>(v)] == 0) continue;
    const Index3 i = g.unravel(v);
    static constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& o : off) {
      const Index3 n{i[0] + o[0], i[1] + o[1], i[2] + o[2]};
      if (!g.contains(n) || m.at(n) == 0) {
        out.push_back(v);
        break;
      }
    }
  }
  return out;
}

inline bool axis_aligned(const AffineTransform& a) {
  const Eigen::Matrix3d l = a.linear();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (r != c && l(r, c) != 0.0) return false;
    }
  }
  return true;
}

// 1-D squared distance transform (lower envelope of parabolas) with sample spacing h.
inline void edt_1d(std::vector<double>& f, double h, std::vector<double>& scratch_d, std::vector<int>& v,
                   std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  scratch_d.assign(static_cast<std::size_t>(n), inf);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[static_cast<std::size_t>(q)])) continue;
    const double fq = f[static_cast<std::size_t>(q)] + (q * h) * (q * h);
    for (;;) {
      if (k < 0) {
        v[0] = q;
        z[0] = -inf;
        z[1] = inf;
        k = 0;
        break;
      }
      const int p = v[static_cast<std::size_t>(k)];
      const double fp = f[static_cast<std::size_t>(p)] + (p * h) * (p * h);
      const double s = (fq - fp) / (2.0 * h * (q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        continue;
      }
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
      z[static_cast<std::size_t>(k) + 1] = inf;
      break;
    }
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q * h) ++j;
    const int p = v[static_cast<std::size_t>(j)];
    const double dq = (q - p) * h;
    scratch_d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(p)];
  }
  f.swap(scratch_d);
}

// Squared world distance from every voxel centre to the nearest seed voxel centre.
inline std::vector<double> squared_edt(const GridGeometry& g, std::span<const std::int64_t> seeds) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(g.voxel_count()), inf);
  for (auto s : seeds) dist[static_cast<std::size_t>(s)] = 0.0;
  const Eigen::Matrix3d l = g.affine.linear();
  std::vector<double> line, scratch, z;
  std::vector<int> v;
  for (int axis = 0; axis < 3; ++axis) {
    const double h = std::abs(l(axis, axis));
    const std::int64_t n = g.dims[static_cast<std::size_t>(axis)];
    const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? g.dims[0] : g.dims[0] * g.dims[1]);
    const std::int64_t lines = g.voxel_count() / n;
    for (std::int64_t li = 0; li < lines; ++li) {
      // Base index of this line: enumerate the other two axes.
      std::int64_t base;
      if (axis == 0) {
        base = li * g.dims[0];
      } else if (axis == 1) {
        base = (li / g.dims[0]) * g.dims[0] * g.dims[1] + li % g.dims[0];
      } else {
        base = li;
      }
      line.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(base + i * stride)];
      edt_1d(line, h, scratch, v, z);
      for (std::int64_t i = 0; i < n; ++i) dist[static_cast<std::size_t>(base + i * stride)] = line[static_cast<std::size_t>(i)];
    }
  }
  return dist;
}

// Distance from each surface voxel of `from` to the nearest surface voxel of `to`.
inline std::vector<double> directed_distances(const GridGeometry& g, std::span<const std::int64_t> from,
                                              std::span<const std::int64_t> to) {
  std::vector<double> out;
  out.reserve(from.size());
  if (axis_aligned(g.affine)) {
    const auto d2 = squared_edt(g, to);
    for (auto v : from) out.push_back(std::sqrt(d2[static_cast<std::size_t>(v)]));
    return out;
  }
  std::vector<Eigen::Vector3d> targets;
  targets.reserve(to.size());
  for (auto v : to) targets.push_back(g.voxel_center(g.unravel(v)));
  for (auto v : from) {
    const Eigen::Vector3d p = g.voxel_center(g.unravel(v));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : targets) best = std::min(best, (p - t).squaredNorm());
    out.push_back(std::sqrt(best));
  }
  return out;
}

inline double nearest_rank(std::vector<double> d, int percent) {
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const std::size_t rank = std::max<std::size_t>(1, (static_cast<std::size_t>(percent) * n + 99) / 100);
  return d[rank - 1];
}

struct SurfacePair {
  std::vector<double> ab;
  std::vector<double> ba;
};

inline SurfacePair surface_distances(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  const auto sa = surface(a);
  const auto sb = surface(b);
  if (sa.empty() || sb.empty()) throw ParameterError("metrics: surface distance needs two non-empty masks");
  return {directed_distances(a.geometry(), sa, sb), directed_distances(a.geometry(), sb, sa)};
}

}  // namespace metrics_detail

// 2|A and B| / (|A| + |B|); 1 when both are empty.
inline double dsc(const BinaryMask& a, const BinaryMask& b) {
  metrics_detail::require_same_grid(a, b);
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

// Larger of the two directed 95th nearest-rank percentiles of surface distances (mm).
inline double hd95(const BinaryMask& a, const BinaryMask& b) {
  const auto d = metrics_detail::surface_distances(a, b);
  return std::max(metrics_detail::nearest_rank(d.ab, 95), metrics_detail::nearest_rank(d.ba, 95));
}

// Mean of surface distances pooled over both directions (mm).
inline double assd(const BinaryMask& a, const BinaryMask& b) {
  const auto d = metrics_detail::surface_distances(a, b);
  double sum = 0.0;
  for (double x : d.ab) sum += x;
  for (double x : d.ba) sum += x;
  return sum / double(d.ab.size() + d.ba.size());
}

inline double mask_volume(const BinaryMask& m) {
  return double(metrics_detail::count(m)) * m.geometry().voxel_volume();
}

// |vol(A) - vol(B)| / mean volume.
inline double voldiff(const BinaryMask& a, const BinaryMask& b) {
  metrics_detail::require_same_grid(a, b);
  const double va = mask_volume(a), vb = mask_volume(b);
  if (va + vb == 0.0) throw ParameterError("voldiff: both masks are empty");
  return std::abs(va - vb) / ((va + vb) / 2.0);
}

// Keeps streamlines that visit every include mask and none of the exclude masks.
inline Tractogram filter_by_rois(const Tractogram& t, std::span<const BinaryMask> include,
                                 std::span<const BinaryMask> exclude) {
  Tractogram out;
  out.properties = t.properties;
  for (const auto& s : t.streamlines) {
    bool keep = true;
    const auto hits = [&](const BinaryMask& m) {
      for (auto v : visited_voxels(s.points, m.geometry())) {
        if (m.data()[static_cast<std::size_t>(v)] != 0) return true;
      }
      return false;
    };
    for (const auto& m : include) keep = keep && hits(m);
    for (const auto& m : exclude) keep = keep && !hits(m);
    if (keep) out.streamlines.push_back(s);
  }
  return out;
}

}  // namespace actrack
