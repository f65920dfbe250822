#pragma once

#include <span>
#include <string>
#include <vector>

#include "actrack/metrics.hpp"
#include "actrack/tracker.hpp"

namespace actrack {

inline std::vector<double> default_robustness_angles(Algorithm a) {
  return a == Algorithm::act_prob ? std::vector<double>{15.0, 20.0, 25.0} : std::vector<double>{25.0, 30.0, 35.0};
}

struct PairMetrics {
  double angle_a = 0.0;
  double angle_b = 0.0;
  double dsc = 0.0;
  double hd95 = 0.0;
  double assd = 0.0;
  double voldiff = 0.0;
};

struct RobustnessReport {
  std::vector<double> angles;
  std::vector<BinaryMask> masks;      // binarized tract per angle
  std::vector<std::size_t> retained;  // streamlines left after ROI filtering
  std::vector<PairMetrics> pairs;
  PairMetrics mean;                   // angle fields unused
};

// Tracks once per angle with otherwise identical settings, optionally keeps streamlines that
// visit every include ROI, binarizes the density maps and compares every pair of masks.
inline RobustnessReport run_robustness(const TensorField& tensors, const FiveTissueTypeMap& tt, TrackerConfig cfg,
                                       std::span<const double> angles, std::span<const BinaryMask> include = {},
                                       double pct = 0.01) {
  if (angles.size() < 2) throw ParameterError("robustness: need at least two angles");
  RobustnessReport r;
  r.angles.assign(angles.begin(), angles.end());
  for (double a : angles) {
    cfg.angle_deg = a;
    auto tracks = track_whole_brain(tensors, tt, cfg).tractogram;
    if (!include.empty()) tracks = filter_by_rois(tracks, include, {});
    r.retained.push_back(tracks.size());
    if (tracks.size() == 0) {
      throw TrackingError("robustness: no streamlines left at angle " + std::to_string(a), TrackingStats{});
    }
    r.masks.push_back(binarize_percentile(density_map(tracks, tt.geometry()), pct));
  }
  for (std::size_t i = 0; i < angles.size(); ++i) {
    for (std::size_t j = i + 1; j < angles.size(); ++j) {
      const auto& a = r.masks[i];
      const auto& b = r.masks[j];
      r.pairs.push_back({angles[i], angles[j], dsc(a, b), hd95(a, b), assd(a, b), voldiff(a, b)});
    }
  }
  for (const auto& p : r.pairs) {
    r.mean.dsc += p.dsc;
    r.mean.hd95 += p.hd95;
    r.mean.assd += p.assd;
    r.mean.voldiff += p.voldiff;
  }
  const double n = double(r.pairs.size());
  r.mean.dsc /= n;
  r.mean.hd95 /= n;
  r.mean.assd /= n;
  r.mean.voldiff /= n;
  return r;
}

}  // namespace actrack
