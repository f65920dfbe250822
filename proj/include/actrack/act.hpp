#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "actrack/errors.hpp"
#include "actrack/nifti.hpp"
#include "actrack/volume.hpp"

namespace actrack {

enum class Tissue : std::uint8_t {
  background = 0,
  cortical_gm = 1,
  subcortical_gm = 2,
  wm = 3,
  csf = 4,
  pathological = 5,
};

inline bool is_gm(Tissue t) { return t == Tissue::cortical_gm || t == Tissue::subcortical_gm; }

// Which labels count towards the brain volume that drives the length bounds.
enum class BrainVolumeMode {
  all_tissue,  // labels 1-5
  gm_wm_only,  // labels 1-3
};

class FiveTissueTypeMap {
 public:
  FiveTissueTypeMap() = default;
  explicit FiveTissueTypeMap(LabelGrid labels, BrainVolumeMode mode = BrainVolumeMode::all_tissue)
      : labels_(std::move(labels)), mode_(mode) {
    if (labels_.channels() != 1) throw FormatError("5tt: label grid must have one channel");
    labels_.set_disk_type(DataType::uint8);
    std::int64_t count = 0;
    for (auto l : labels_.data()) {
      if (l > 5) throw FormatError("5tt: label " + std::to_string(int(l)) + " outside 0-5");
      if (mode == BrainVolumeMode::all_tissue ? l >= 1 : (l >= 1 && l <= 3)) ++count;
    }
    brain_volume_ = double(count) * labels_.geometry().voxel_volume();
  }

  const LabelGrid& labels() const { return labels_; }
  const GridGeometry& geometry() const { return labels_.geometry(); }
  double brain_volume() const { return brain_volume_; }
  BrainVolumeMode volume_mode() const { return mode_; }

  Tissue at(const Index3& i) const { return static_cast<Tissue>(labels_.at(i)); }
  Tissue at(std::int64_t lin) const { return static_cast<Tissue>(labels_.data()[static_cast<std::size_t>(lin)]); }

  // Nearest-voxel lookup (round-half-down per axis); background outside the grid.
  Tissue classify(const Eigen::Vector3d& world) const {
    const Index3 i = labels_.geometry().nearest_index(world);
    if (!labels_.geometry().contains(i)) return Tissue::background;
    return at(i);
  }

 private:
  LabelGrid labels_;
  BrainVolumeMode mode_ = BrainVolumeMode::all_tissue;
  double brain_volume_ = 0.0;
};

// Integer labels (1 channel) or 5-channel partial volumes in the order cGM, sGM, WM, CSF,
// pathological, collapsed by per-voxel argmax (all-zero voxels are background).
inline FiveTissueTypeMap five_tt_from_volume(const VoxelGrid& vol, BrainVolumeMode mode = BrainVolumeMode::all_tissue) {
  LabelGrid labels(vol.geometry(), 1, 0);
  labels.set_disk_type(DataType::uint8);
  if (vol.channels() == 1) {
    for (std::int64_t v = 0; v < vol.voxel_count(); ++v) {
      const double x = vol.data()[static_cast<std::size_t>(v)];
      if (!(x >= 0.0 && x <= 5.0) || x != std::floor(x)) {
        throw FormatError("5tt: label value " + std::to_string(x) + " is not an integer in 0-5");
      }
      labels.data()[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(x);
    }
  } else if (vol.channels() == 5) {
    for (std::int64_t v = 0; v < vol.voxel_count(); ++v) {
      const auto pv = vol.voxel(v);
      int best = -1;
      double best_value = 0.0;
      for (int c = 0; c < 5; ++c) {
        const double x = pv[static_cast<std::size_t>(c)];
        if (!std::isfinite(x) || x < 0.0) throw FormatError("5tt: invalid partial volume fraction");
        if (x > best_value) {
          best_value = x;
          best = c;
        }
      }
      labels.data()[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(best + 1);
    }
  } else {
    throw FormatError("5tt: expected 1 or 5 channels, got " + std::to_string(vol.channels()));
  }
  return FiveTissueTypeMap(std::move(labels), mode);
}

inline FiveTissueTypeMap load_5tt(const std::string& path, BrainVolumeMode mode = BrainVolumeMode::all_tissue) {
  return five_tt_from_volume(load_volume(path), mode);
}

// 6-connected neighbour offsets.
inline constexpr std::array<std::array<int, 3>, 6> kFaceNeighbours{
    {{{1, 0, 0}}, {{-1, 0, 0}}, {{0, 1, 0}}, {{0, -1, 0}}, {{0, 0, 1}}, {{0, 0, -1}}}};

// WM voxels with at least one 6-connected cortical or sub-cortical GM neighbour.
inline LabelGrid gmwmi_extract(const FiveTissueTypeMap& tt) {
  const auto& g = tt.geometry();
  LabelGrid mask(g, 1, 0);
  mask.set_disk_type(DataType::uint8);
  for (std::int64_t z = 0; z < g.dims[2]; ++z) {
    for (std::int64_t y = 0; y < g.dims[1]; ++y) {
      for (std::int64_t x = 0; x < g.dims[0]; ++x) {
        if (tt.at(Index3{x, y, z}) != Tissue::wm) continue;
        for (const auto& o : kFaceNeighbours) {
          const Index3 n{x + o[0], y + o[1], z + o[2]};
          if (g.contains(n) && is_gm(tt.at(n))) {
            mask.at(x, y, z) = 1;
            break;
          }
        }
      }
    }
  }
  return mask;
}

inline std::vector<std::int64_t> mask_voxels(const LabelGrid& mask) {
  std::vector<std::int64_t> out;
  for (std::int64_t v = 0; v < mask.voxel_count(); ++v) {
    if (mask.data()[static_cast<std::size_t>(v)] != 0) out.push_back(v);
  }
  return out;
}

struct LengthBounds {
  double min_mm = 0.0;
  double max_mm = 0.0;
};

// min = cbrt(V) / 1.6, max = cbrt(V) / 0.55 with V the brain volume in mm^3.
inline LengthBounds length_bounds(double brain_volume_mm3) {
  if (!(brain_volume_mm3 > 0.0) || !std::isfinite(brain_volume_mm3)) {
    throw ParameterError("length bounds: brain volume must be positive");
  }
  const double c = std::cbrt(brain_volume_mm3);
  return {c / 1.6, c / 0.55};
}

inline LengthBounds length_bounds(const FiveTissueTypeMap& tt) { return length_bounds(tt.brain_volume()); }

enum class RejectReason {
  none,
  too_short,
  too_long,
  endpoint_not_gm,
  entered_csf,
  exited_brain,
  invalid_interior,
};

inline constexpr std::array<RejectReason, 6> kRejectReasons{RejectReason::too_short,      RejectReason::too_long,
                                                            RejectReason::endpoint_not_gm, RejectReason::entered_csf,
                                                            RejectReason::exited_brain,    RejectReason::invalid_interior};

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "none";
    case RejectReason::too_short: return "too_short";
    case RejectReason::too_long: return "too_long";
    case RejectReason::endpoint_not_gm: return "endpoint_not_gm";
    case RejectReason::entered_csf: return "entered_csf";
    case RejectReason::exited_brain: return "exited_brain";
    case RejectReason::invalid_interior: return "invalid_interior";
  }
  return "unknown";
}

struct Verdict {
  bool accepted = false;
  RejectReason reason = RejectReason::none;

  static Verdict accept() { return {true, RejectReason::none}; }
  static Verdict reject(RejectReason r) { return {false, r}; }
};

inline double arc_length(std::span<const Eigen::Vector3d> points) {
  double len = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
  return len;
}

// Anatomical checks first (CSF, brain exit, endpoints, interior), then the length window.
inline Verdict judge_streamline(std::span<const Eigen::Vector3d> points, const FiveTissueTypeMap& tt,
                                const LengthBounds& bounds) {
  if (points.size() < 2) return Verdict::reject(RejectReason::too_short);
  bool endpoint_ok = true;
  bool interior_ok = true;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Tissue t = tt.classify(points[i]);
    if (t == Tissue::csf) return Verdict::reject(RejectReason::entered_csf);
    if (t == Tissue::background) return Verdict::reject(RejectReason::exited_brain);
    const bool endpoint = i == 0 || i + 1 == points.size();
    if (endpoint) {
      endpoint_ok = endpoint_ok && is_gm(t);
    } else {
      interior_ok = interior_ok && (t == Tissue::wm || t == Tissue::subcortical_gm);
    }
  }
  if (!endpoint_ok) return Verdict::reject(RejectReason::endpoint_not_gm);
  if (!interior_ok) return Verdict::reject(RejectReason::invalid_interior);
  const double len = arc_length(points);
  if (len < bounds.min_mm) return Verdict::reject(RejectReason::too_short);
  if (len > bounds.max_mm) return Verdict::reject(RejectReason::too_long);
  return Verdict::accept();
}

}  // namespace actrack
