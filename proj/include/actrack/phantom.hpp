#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "actrack/act.hpp"
#include "actrack/dti.hpp"
#include "actrack/errors.hpp"
#include "actrack/parallel.hpp"
#include "actrack/random.hpp"
#include "actrack/volume.hpp"

namespace actrack {

enum class PhantomKind { straight, curved_torus, crossing };

inline std::string_view to_string(PhantomKind k) {
  switch (k) {
    case PhantomKind::straight: return "straight";
    case PhantomKind::curved_torus: return "curved_torus";
    case PhantomKind::crossing: return "crossing";
  }
  return "unknown";
}

inline PhantomKind parse_phantom_kind(std::string_view s) {
  if (s == "straight") return PhantomKind::straight;
  if (s == "curved_torus" || s == "curved") return PhantomKind::curved_torus;
  if (s == "crossing") return PhantomKind::crossing;
  throw ParameterError("unknown phantom kind '" + std::string(s) + "'");
}

struct PhantomSpec {
  PhantomKind kind = PhantomKind::straight;
  Index3 dims{0, 0, 0};  // zeros: smallest grid that fits the bundle
  double spacing_mm = 1.2;
  double bundle_radius_mm = 3.0;
  double lambda_par = 1.7e-3;
  double lambda_perp = 0.3e-3;
  double length_mm = 30.0;  // straight / crossing bundle length when dims are automatic
  double torus_radius_mm = 12.0;
  double crossing_angle_deg = 90.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;

  double lambda_iso() const { return (lambda_par + 2.0 * lambda_perp) / 3.0; }

  void validate() const {
    if (!(spacing_mm > 0.0)) throw PhantomError("phantom: spacing must be positive");
    if (!(bundle_radius_mm > 0.0)) throw PhantomError("phantom: bundle radius must be positive");
    if (!(lambda_par > lambda_perp && lambda_perp > 0.0)) {
      throw PhantomError("phantom: eigenvalues must satisfy lambda_par > lambda_perp > 0");
    }
    if (noise_sigma < 0.0) throw PhantomError("phantom: noise sigma must be non-negative");
    if (kind == PhantomKind::curved_torus && !(torus_radius_mm > bundle_radius_mm)) {
      throw PhantomError("phantom: torus radius must exceed the bundle radius");
    }
    if (kind == PhantomKind::crossing && !(crossing_angle_deg > 0.0 && crossing_angle_deg <= 90.0)) {
      throw PhantomError("phantom: crossing angle must lie in (0, 90]");
    }
    for (auto d : dims) {
      if (d < 0) throw PhantomError("phantom: negative dimension");
    }
  }

  // Grid used when dims are left at zero.
  Index3 resolved_dims() const {
    if (dims[0] > 0 && dims[1] > 0 && dims[2] > 0) return dims;
    const double sp = spacing_mm;
    const auto cells = [&](double extent_mm) { return static_cast<std::int64_t>(std::ceil(extent_mm / sp - 1e-9)); };
    const std::int64_t lateral = 2 * cells(bundle_radius_mm) + 5;
    switch (kind) {
      case PhantomKind::straight:
        return {cells(length_mm) + 4, lateral, lateral};
      case PhantomKind::curved_torus: {
        const std::int64_t n = cells(1.5 * sp + torus_radius_mm + bundle_radius_mm) + 3;
        return {n, n, lateral};
      }
      case PhantomKind::crossing: {
        const std::int64_t n = cells(length_mm) + 4;
        return {n, n, lateral};
      }
    }
    return dims;
  }

  std::string manifest() const {
    std::ostringstream ss;
    ss.precision(17);
    const Index3 d = resolved_dims();
    ss << "kind=" << to_string(kind) << "\n"
       << "dims=" << d[0] << ',' << d[1] << ',' << d[2] << "\n"
       << "spacing_mm=" << spacing_mm << "\n"
       << "bundle_radius_mm=" << bundle_radius_mm << "\n"
       << "lambda_par=" << lambda_par << "\n"
       << "lambda_perp=" << lambda_perp << "\n"
       << "length_mm=" << length_mm << "\n"
       << "torus_radius_mm=" << torus_radius_mm << "\n"
       << "crossing_angle_deg=" << crossing_angle_deg << "\n"
       << "noise_sigma=" << noise_sigma << "\n"
       << "seed=" << seed << "\n";
    return ss.str();
  }
};

struct Phantom {
  TensorField tensors;
  FiveTissueTypeMap tt;
  LabelGrid truth_mask;
  std::vector<LabelGrid> end_caps;  // GM cap at the start then the end of each bundle
};

namespace phantom_detail {

// Position of a point relative to a bundle centreline; s is arc length from the start, and
// points beyond either end are measured against the straight extension of the end tangent.
struct AxisLocation {
  double distance = 0.0;
  double s = 0.0;
  Eigen::Vector3d tangent = Eigen::Vector3d::UnitX();
};

struct StraightAxis {
  Eigen::Vector3d start;
  Eigen::Vector3d dir;
  double length;

  AxisLocation locate(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = p - start;
    const double s = q.dot(dir);
    return {(q - s * dir).norm(), s, dir};
  }
};

// Quarter circle in the z = centre.z plane from angle 0 to pi/2.
struct QuarterArcAxis {
  Eigen::Vector3d centre;
  double radius;

  double length() const { return radius * std::numbers::pi / 2.0; }

  AxisLocation locate(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = p - centre;
    const double phi = std::atan2(q.y(), q.x());
    if (phi >= 0.0 && phi <= std::numbers::pi / 2.0) {
      const double rho = std::hypot(q.x(), q.y());
      return {std::hypot(rho - radius, q.z()), radius * phi, Eigen::Vector3d(-std::sin(phi), std::cos(phi), 0.0)};
    }
    const StraightAxis before{centre + Eigen::Vector3d(radius, 0, 0), Eigen::Vector3d::UnitY(), 0.0};
    const StraightAxis after{centre + Eigen::Vector3d(0, radius, 0), -Eigen::Vector3d::UnitX(), 0.0};
    AxisLocation a = before.locate(p);
    AxisLocation b = after.locate(p);
    b.s += length();
    const bool use_a = a.s <= 0.0 && (b.s < length() || a.distance <= b.distance);
    return use_a ? a : b;
  }
};

struct Bundle {
  bool curved = false;
  StraightAxis line{};
  QuarterArcAxis arc{};

  double length() const { return curved ? arc.length() : line.length; }
  AxisLocation locate(const Eigen::Vector3d& p) const { return curved ? arc.locate(p) : line.locate(p); }
};

}  // namespace phantom_detail

inline Phantom make_phantom(const PhantomSpec& spec) {
  using namespace phantom_detail;
  spec.validate();
  const Index3 dims = spec.resolved_dims();
  for (auto d : dims) {
    if (d < 5) throw PhantomError("phantom: grid too small");
  }
  const double sp = spec.spacing_mm;
  const double r = spec.bundle_radius_mm;
  const GridGeometry geom{dims, AffineTransform::isotropic(sp)};
  const Eigen::Vector3d extent((dims[0] - 1) * sp, (dims[1] - 1) * sp, (dims[2] - 1) * sp);
  const Eigen::Vector3d centre = 0.5 * extent;

  std::vector<Bundle> bundles;
  switch (spec.kind) {
    case PhantomKind::straight: {
      Bundle b;
      b.line = {Eigen::Vector3d(1.5 * sp, centre.y(), centre.z()), Eigen::Vector3d::UnitX(), extent.x() - 3.0 * sp};
      bundles.push_back(b);
      break;
    }
    case PhantomKind::curved_torus: {
      Bundle b;
      b.curved = true;
      b.arc = {Eigen::Vector3d(1.5 * sp, 1.5 * sp, centre.z()), spec.torus_radius_mm};
      bundles.push_back(b);
      break;
    }
    case PhantomKind::crossing: {
      Bundle first;
      first.line = {Eigen::Vector3d(1.5 * sp, centre.y(), centre.z()), Eigen::Vector3d::UnitX(), extent.x() - 3.0 * sp};
      bundles.push_back(first);
      const double a = spec.crossing_angle_deg * std::numbers::pi / 180.0;
      const Eigen::Vector3d u(std::cos(a), std::sin(a), 0.0);
      double half = std::numeric_limits<double>::infinity();
      for (int axis = 0; axis < 2; ++axis) {
        const double c = std::abs(u[axis]);
        if (c < 1e-9) continue;
        const double room = 0.5 * extent[axis] - 1.5 * sp - r * std::sqrt(std::max(0.0, 1.0 - c * c));
        half = std::min(half, room / c);
      }
      if (!(half > 0.0)) throw PhantomError("phantom: crossing bundle does not fit in the grid");
      Bundle second;
      second.line = {centre - half * u, u, 2.0 * half};
      bundles.push_back(second);
      break;
    }
  }

  LabelGrid labels(geom, 1, 0);
  labels.set_disk_type(DataType::uint8);
  std::vector<int> owner(static_cast<std::size_t>(geom.voxel_count()), -1);
  std::vector<Eigen::Vector3d> tangent(static_cast<std::size_t>(geom.voxel_count()), Eigen::Vector3d::Zero());
  const auto wm = static_cast<std::uint8_t>(Tissue::wm);
  const auto cgm = static_cast<std::uint8_t>(Tissue::cortical_gm);
  const auto csf = static_cast<std::uint8_t>(Tissue::csf);

  // Bundle cores; earlier bundles own overlapping voxels.
  for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
    const Eigen::Vector3d p = geom.voxel_center(geom.unravel(v));
    for (std::size_t b = 0; b < bundles.size(); ++b) {
      const AxisLocation loc = bundles[b].locate(p);
      if (loc.distance <= r && loc.s >= 0.0 && loc.s <= bundles[b].length()) {
        labels.data()[static_cast<std::size_t>(v)] = wm;
        owner[static_cast<std::size_t>(v)] = static_cast<int>(b);
        tangent[static_cast<std::size_t>(v)] = loc.tangent;
        break;
      }
    }
  }
  // One-voxel cortical GM caps just beyond both ends of every bundle.
  struct Cap {
    std::int64_t voxel;
    std::size_t end;
  };
  std::vector<Cap> caps;
  for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
    if (labels.data()[static_cast<std::size_t>(v)] != 0) continue;
    const Index3 i = geom.unravel(v);
    const Eigen::Vector3d p = geom.voxel_center(i);
    for (std::size_t b = 0; b < bundles.size() && labels.data()[static_cast<std::size_t>(v)] == 0; ++b) {
      const AxisLocation loc = bundles[b].locate(p);
      if (loc.distance > r || (loc.s >= 0.0 && loc.s <= bundles[b].length())) continue;
      for (const auto& o : kFaceNeighbours) {
        const Index3 n{i[0] + o[0], i[1] + o[1], i[2] + o[2]};
        if (geom.contains(n) && owner[static_cast<std::size_t>(geom.linear_index(n))] == static_cast<int>(b)) {
          caps.push_back({v, 2 * b + (loc.s > 0.0 ? 1 : 0)});
          break;
        }
      }
    }
  }
  std::vector<LabelGrid> end_caps(2 * bundles.size(), LabelGrid(geom, 1, 0));
  for (auto& m : end_caps) m.set_disk_type(DataType::uint8);
  for (const auto& c : caps) {
    labels.data()[static_cast<std::size_t>(c.voxel)] = cgm;
    end_caps[c.end].data()[static_cast<std::size_t>(c.voxel)] = 1;
  }
  // CSF rim: 26-neighbourhood of bundle and caps.
  std::vector<std::int64_t> rim;
  for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
    if (labels.data()[static_cast<std::size_t>(v)] != 0) continue;
    const Index3 i = geom.unravel(v);
    bool near = false;
    for (int dz = -1; dz <= 1 && !near; ++dz) {
      for (int dy = -1; dy <= 1 && !near; ++dy) {
        for (int dx = -1; dx <= 1 && !near; ++dx) {
          const Index3 n{i[0] + dx, i[1] + dy, i[2] + dz};
          if (!geom.contains(n)) continue;
          const auto l = labels.data()[static_cast<std::size_t>(geom.linear_index(n))];
          near = l == wm || l == cgm;
        }
      }
    }
    if (near) rim.push_back(v);
  }
  for (auto v : rim) labels.data()[static_cast<std::size_t>(v)] = csf;

  for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
    const auto l = labels.data()[static_cast<std::size_t>(v)];
    if (l != wm && l != cgm) continue;
    const Index3 i = geom.unravel(v);
    for (int a = 0; a < 3; ++a) {
      const std::int64_t lo = l == wm ? 2 : 1;
      if (i[static_cast<std::size_t>(a)] < lo || i[static_cast<std::size_t>(a)] > dims[static_cast<std::size_t>(a)] - 1 - lo) {
        throw PhantomError("phantom: bundle exceeds the grid (needs a 2-voxel margin for GM caps and CSF rim)");
      }
    }
  }

  TensorField tf{VoxelGrid(geom, 6, 0.0), LabelGrid(geom, 1, 1)};
  tf.fit_mask.set_disk_type(DataType::uint8);
  const Eigen::Matrix3d iso = spec.lambda_iso() * Eigen::Matrix3d::Identity();
  LabelGrid truth(geom, 1, 0);
  truth.set_disk_type(DataType::uint8);
  for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
    const bool in_bundle = labels.data()[static_cast<std::size_t>(v)] == wm;
    const Eigen::Matrix3d d =
        in_bundle ? cylinder_tensor(tangent[static_cast<std::size_t>(v)], spec.lambda_par, spec.lambda_perp) : iso;
    const auto c = tensor_coeffs(d);
    std::copy(c.begin(), c.end(), tf.tensors.voxel(v).begin());
    truth.data()[static_cast<std::size_t>(v)] = in_bundle ? 1 : 0;
  }
  return Phantom{std::move(tf), FiveTissueTypeMap(std::move(labels)), std::move(truth), std::move(end_caps)};
}

// n_b0 b=0 volumes followed by n_dirs directions at one b-value, spread over a hemisphere.
inline DiffusionProtocol make_protocol(int n_b0, int n_dirs, double bval) {
  DiffusionProtocol p;
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < n_b0; ++i) {
    p.bvals.push_back(0.0);
    p.bvecs.emplace_back(0.0, 0.0, 0.0);
  }
  for (int i = 0; i < n_dirs; ++i) {
    const double z = 1.0 - (i + 0.5) / n_dirs;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * std::numbers::pi * (i / golden - std::floor(i / golden));
    p.bvals.push_back(bval);
    p.bvecs.push_back(Eigen::Vector3d(rho * std::cos(phi), rho * std::sin(phi), z).normalized());
  }
  return p;
}

// S = S0 exp(-b g^T D g); with sigma > 0 the magnitude of signal plus complex Gaussian noise.
// Voxel v draws from random stream (seed XOR v), so output is independent of thread count.
inline VoxelGrid synth_signal(const TensorField& tensors, const DiffusionProtocol& protocol, double s0, double sigma,
                              std::uint64_t seed, unsigned threads = 1) {
  protocol.validate();
  if (sigma < 0.0) throw ParameterError("synth: sigma must be non-negative");
  const auto& geom = tensors.tensors.geometry();
  VoxelGrid out(geom, static_cast<int>(protocol.size()), 0.0);
  parallel_for(geom.voxel_count(), threads, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t v = begin; v < end; ++v) {
      if (tensors.fit_mask.data()[static_cast<std::size_t>(v)] == 0) continue;
      const Eigen::Matrix3d d = tensor_matrix(tensors.tensors.voxel(v));
      auto s = out.voxel(v);
      Rng rng = stream_rng(seed, static_cast<std::uint64_t>(v));
      for (std::size_t i = 0; i < protocol.size(); ++i) {
        const Eigen::Vector3d& g = protocol.bvecs[i];
        const double clean = protocol.is_b0(i) ? s0 : s0 * std::exp(-protocol.bvals[i] * g.dot(d * g));
        if (sigma > 0.0) {
          const double re = clean + sigma * standard_normal(rng);
          const double im = sigma * standard_normal(rng);
          s[i] = std::hypot(re, im);
        } else {
          s[i] = clean;
        }
      }
    }
  });
  return out;
}

}  // namespace actrack
