#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "actrack/act.hpp"
#include "actrack/dti.hpp"
#include "actrack/errors.hpp"
#include "actrack/odf.hpp"
#include "actrack/parallel.hpp"
#include "actrack/random.hpp"
#include "actrack/tck.hpp"
#include "actrack/volume.hpp"

namespace actrack {

enum class Algorithm { act_prob, fact };
enum class Interpolation { trilinear, nearest };

inline std::string_view to_string(Algorithm a) { return a == Algorithm::act_prob ? "act_prob" : "fact"; }

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "act_prob") return Algorithm::act_prob;
  if (s == "fact") return Algorithm::fact;
  throw ParameterError("unknown algorithm '" + std::string(s) + "'");
}

struct TrackerConfig {
  double step_mm = 0.6;
  double angle_deg = 20.0;
  double k = 4.0;
  std::size_t target_count = 1000;
  std::uint64_t rng_seed = 1;
  Algorithm algorithm = Algorithm::act_prob;
  double fact_fa_stop = 0.0;
  Interpolation fact_interpolation = Interpolation::trilinear;
  DodfConvention convention = DodfConvention::inverse;
  int trials = 50;
  std::size_t attempts_per_target = 1000;
  unsigned threads = 1;

  static double default_angle(Algorithm a) { return a == Algorithm::fact ? 30.0 : 20.0; }

  void validate() const {
    if (!(step_mm > 0.0) || !std::isfinite(step_mm)) throw ParameterError("tracker: step must be positive");
    if (!(angle_deg > 0.0 && angle_deg < 90.0)) throw ParameterError("tracker: angle must lie in (0, 90) degrees");
    if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("tracker: sharpening exponent must be positive");
    if (target_count < 1) throw ParameterError("tracker: target count must be at least 1");
    if (trials < 1) throw ParameterError("tracker: trial count must be at least 1");
    if (fact_fa_stop < 0.0 || fact_fa_stop >= 1.0) throw ParameterError("tracker: FA stop must lie in [0, 1)");
    if (attempts_per_target < 1) throw ParameterError("tracker: attempt factor must be at least 1");
  }

  std::map<std::string, std::string> snapshot() const {
    auto num = [](double v) {
      std::ostringstream ss;
      ss.precision(17);
      ss << v;
      return ss.str();
    };
    return {{"algorithm", std::string(to_string(algorithm))},
            {"step_size", num(step_mm)},
            {"angle", num(angle_deg)},
            {"sharpening_k", num(k)},
            {"target_count", std::to_string(target_count)},
            {"seed", std::to_string(rng_seed)},
            {"trials", std::to_string(trials)},
            {"fact_fa_stop", num(fact_fa_stop)},
            {"fact_interpolation", fact_interpolation == Interpolation::trilinear ? "trilinear" : "nearest"},
            {"dodf_convention", convention == DodfConvention::inverse ? "inverse" : "literal"}};
  }
};

// Tensor lookups at world positions.
class TensorSampler {
 public:
  TensorSampler(const VoxelGrid& tensors, Interpolation mode = Interpolation::trilinear)
      : tensors_(&tensors), mode_(mode) {
    if (tensors.channels() != 6) throw ParameterError("tracker: tensor volume must have 6 channels");
  }

  std::optional<Eigen::Matrix3d> at(const Eigen::Vector3d& world) const {
    std::array<double, 6> c{};
    if (mode_ == Interpolation::trilinear) {
      if (!sample_trilinear_voxel(*tensors_, tensors_->affine().world_to_voxel(world), std::span<double>(c))) {
        return std::nullopt;
      }
    } else {
      const auto idx = tensors_->geometry().nearest_voxel(world);
      if (!idx) return std::nullopt;
      const auto v = tensors_->voxel(tensors_->geometry().linear_index(*idx));
      std::copy(v.begin(), v.end(), c.begin());
    }
    return tensor_matrix(c);
  }

  std::optional<DodfModel> dodf(const Eigen::Vector3d& world, DodfConvention convention) const {
    const auto d = at(world);
    if (!d) return std::nullopt;
    try {
      return DodfModel(*d, convention);
    } catch (const DegenerateTensorError&) {
      return std::nullopt;
    }
  }

 private:
  const VoxelGrid* tensors_;
  Interpolation mode_;
};

struct ArcStep {
  Eigen::Vector3d mid;
  Eigen::Vector3d mid_tangent;
  Eigen::Vector3d end;
};

// Circular arc leaving x with unit tangent d and arriving with unit tangent t, scaled so the
// chord from x to the end point has length `chord`.
inline ArcStep circular_arc(const Eigen::Vector3d& x, const Eigen::Vector3d& d, const Eigen::Vector3d& t,
                            double chord) {
  const double c = std::clamp(d.dot(t), -1.0, 1.0);
  const double theta = std::acos(c);
  if (theta < 1e-9) return {x + 0.5 * chord * d, d, x + chord * d};
  const Eigen::Vector3d b = (t - c * d).normalized();
  const double r = chord / (2.0 * std::sin(0.5 * theta));
  const double h = 0.5 * theta;
  return {x + r * (std::sin(h) * d + (1.0 - std::cos(h)) * b), std::cos(h) * d + std::sin(h) * b,
          x + r * (std::sin(theta) * d + (1.0 - std::cos(theta)) * b)};
}

enum class Termination {
  entered_gm,     // reached cortical GM: a valid endpoint
  entered_csf,    // last step landed in CSF and was dropped
  exited_brain,   // last step landed in background / outside the grid and was dropped
  invalid_tissue, // last step landed in pathological tissue and was dropped
  no_direction,   // empty cone, degenerate tensor, or no candidate accepted in T trials
  max_length,
};

struct HalfTrack {
  std::vector<Eigen::Vector3d> points;  // starts at the seed
  Termination termination = Termination::no_direction;
};

// Cumulative weight table over the cone around one tangent; built once per step.
class ConeTable {
 public:
  template <typename WeightFn>
  void build(const SphereGrid& sphere, const Eigen::Vector3d& prev, double cos_max, WeightFn&& weight) {
    cumulative_.clear();
    members_.clear();
    double total = 0.0;
    for (int i = 0; i < sphere.size(); ++i) {
      if (sphere.directions[static_cast<std::size_t>(i)].dot(prev) < cos_max - 1e-12) continue;
      const double w = weight(i);
      if (!(w > 0.0)) continue;
      total += w;
      cumulative_.push_back(total);
      members_.push_back(i);
    }
    total_ = total;
  }

  bool empty() const { return members_.empty() || !(total_ > 0.0) || !std::isfinite(total_); }

  template <typename G>
  int draw(G& rng) const {
    const double target = uniform01(rng) * total_;
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    const auto pick = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), members_.size() - 1);
    return members_[pick];
  }

 private:
  std::vector<double> cumulative_;
  std::vector<int> members_;
  double total_ = 0.0;
};

struct PropagationContext {
  const TensorSampler& tensors;
  const FiveTissueTypeMap& tt;
  const SphereGrid& sphere;
  const TrackerConfig& cfg;
  double max_length_mm;
};

// Unrestricted (antipodally folded) initial direction from the PMF at `at`.
template <typename G>
std::optional<Eigen::Vector3d> initial_direction(const PropagationContext& ctx, const Eigen::Vector3d& at, G& rng) {
  const auto model = ctx.tensors.dodf(at, ctx.cfg.convention);
  if (!model) return std::nullopt;
  const double k = ctx.cfg.k;
  const auto idx = sample_cone(ctx.sphere, std::nullopt, -1.0,
                               [&](int i) { return model->sharpened_ratio(ctx.sphere.directions[static_cast<std::size_t>(i)], k); },
                               rng);
  if (!idx) return std::nullopt;
  return ctx.sphere.directions[static_cast<std::size_t>(*idx)];
}

// One half-track of second-order probabilistic propagation. Each step proposes end tangents
// from the PMF at the first-order midpoint x + d h/2 (restricted to the angle cone), builds
// the circular arc, and accepts it with probability ratio(mid tangent at arc midpoint) *
// ratio(end tangent at arc end), where ratio is the sharpened dODF over its maximum.
template <typename G>
HalfTrack propagate_prob(const Eigen::Vector3d& start, const std::optional<Eigen::Vector3d>& init_dir,
                         const PropagationContext& ctx, G& rng) {
  HalfTrack out;
  out.points.push_back(start);
  const double h = ctx.cfg.step_mm;
  const double k = ctx.cfg.k;
  const double cos_max = std::cos(ctx.cfg.angle_deg * std::numbers::pi / 180.0);
  std::optional<Eigen::Vector3d> first = init_dir ? std::optional<Eigen::Vector3d>(init_dir->normalized())
                                                  : initial_direction(ctx, start, rng);
  if (!first) {
    out.termination = Termination::no_direction;
    return out;
  }
  Eigen::Vector3d x = start;
  Eigen::Vector3d d = *first;
  double length = 0.0;
  thread_local ConeTable cone;
  for (;;) {
    if (length + h > ctx.max_length_mm) {
      out.termination = Termination::max_length;
      return out;
    }
    const auto proposal = ctx.tensors.dodf(x + 0.5 * h * d, ctx.cfg.convention);
    if (!proposal) {
      out.termination = Termination::no_direction;
      return out;
    }
    cone.build(ctx.sphere, d, cos_max,
               [&](int i) { return proposal->sharpened_ratio(ctx.sphere.directions[static_cast<std::size_t>(i)], k); });
    if (cone.empty()) {
      out.termination = Termination::no_direction;
      return out;
    }
    bool accepted = false;
    ArcStep arc{};
    Eigen::Vector3d tangent;
    for (int trial = 0; trial < ctx.cfg.trials; ++trial) {
      tangent = ctx.sphere.directions[static_cast<std::size_t>(cone.draw(rng))];
      arc = circular_arc(x, d, tangent, h);
      const auto mid = ctx.tensors.dodf(arc.mid, ctx.cfg.convention);
      if (!mid) continue;
      const auto end = ctx.tensors.dodf(arc.end, ctx.cfg.convention);
      if (!end) continue;
      const double w = mid->sharpened_ratio(arc.mid_tangent, k) * end->sharpened_ratio(tangent, k);
      if (uniform01(rng) < w) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.termination = Termination::no_direction;
      return out;
    }
    const Tissue tissue = ctx.tt.classify(arc.end);
    switch (tissue) {
      case Tissue::wm:
      case Tissue::subcortical_gm:
        break;
      case Tissue::cortical_gm:
        out.points.push_back(arc.end);
        out.termination = Termination::entered_gm;
        return out;
      case Tissue::csf:
        out.termination = Termination::entered_csf;
        return out;
      case Tissue::background:
        out.termination = Termination::exited_brain;
        return out;
      case Tissue::pathological:
        out.termination = Termination::invalid_tissue;
        return out;
    }
    out.points.push_back(arc.end);
    x = arc.end;
    d = tangent;
    length += h;
  }
}

// Principal direction for FACT at `at`; nullopt when the tensor is unavailable or below the FA stop.
inline std::optional<Eigen::Vector3d> fact_direction(const TensorSampler& tensors, const Eigen::Vector3d& at,
                                                     double fa_stop) {
  const auto d = tensors.at(at);
  if (!d || !d->allFinite()) return std::nullopt;
  const Eigensystem es = eigendecompose(*d);
  if (!(es.values[0] > 0.0)) return std::nullopt;
  if (fa_stop > 0.0 && fractional_anisotropy(es.values) < fa_stop) return std::nullopt;
  return Eigen::Vector3d(es.vectors.col(0));
}

// Deterministic bidirectional principal-eigenvector tracking inside `brain` (non-zero voxels).
// A half stops when the turning angle exceeds cfg.angle_deg or the next point leaves the mask.
inline std::vector<Eigen::Vector3d> propagate_fact(const Eigen::Vector3d& start, const TensorSampler& tensors,
                                                   const LabelGrid& brain, const TrackerConfig& cfg,
                                                   double max_length_mm) {
  auto inside = [&](const Eigen::Vector3d& p) {
    const auto idx = brain.geometry().nearest_voxel(p);
    return idx && brain.at(*idx) != 0;
  };
  if (!inside(start)) return {};
  const auto v0 = fact_direction(tensors, start, cfg.fact_fa_stop);
  if (!v0) return {start};
  const double cos_max = std::cos(cfg.angle_deg * std::numbers::pi / 180.0);
  const double h = cfg.step_mm;
  const auto max_steps = static_cast<std::size_t>(std::floor(max_length_mm / h));

  auto half = [&](const Eigen::Vector3d& dir0) {
    std::vector<Eigen::Vector3d> pts;
    Eigen::Vector3d x = start;
    Eigen::Vector3d d = dir0;
    for (std::size_t step = 0; step < max_steps; ++step) {
      if (step > 0) {
        const auto v = fact_direction(tensors, x, cfg.fact_fa_stop);
        if (!v) break;
        Eigen::Vector3d oriented = v->dot(d) < 0.0 ? Eigen::Vector3d(-*v) : *v;
        if (oriented.dot(d) < cos_max - 1e-12) break;
        d = oriented;
      }
      const Eigen::Vector3d next = x + h * d;
      if (!inside(next)) break;
      pts.push_back(next);
      x = next;
    }
    return pts;
  };
  const auto fwd = half(*v0);
  const auto bwd = half(-*v0);
  std::vector<Eigen::Vector3d> out(bwd.rbegin(), bwd.rend());
  out.push_back(start);
  out.insert(out.end(), fwd.begin(), fwd.end());
  return out;
}

struct TrackingStats {
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  std::map<RejectReason, std::size_t> rejected;

  std::size_t rejected_total() const {
    std::size_t n = 0;
    for (const auto& [r, c] : rejected) n += c;
    return n;
  }

  std::string summary() const {
    std::ostringstream ss;
    ss << "attempts=" << attempts << " accepted=" << accepted;
    for (auto r : kRejectReasons) {
      const auto it = rejected.find(r);
      ss << ' ' << to_string(r) << '=' << (it == rejected.end() ? 0 : it->second);
    }
    return ss.str();
  }
};

class TrackingError : public Error {
 public:
  TrackingError(const std::string& what, TrackingStats stats) : Error(what), stats_(std::move(stats)) {}
  const TrackingStats& stats() const { return stats_; }

 private:
  TrackingStats stats_;
};

struct TrackResult {
  Tractogram tractogram;
  TrackingStats stats;
};

namespace tracker_detail {

struct AttemptOutcome {
  Verdict verdict;
  Streamline streamline;
};

inline Eigen::Vector3d random_point_in_voxel(const GridGeometry& g, std::int64_t lin, Rng& rng) {
  const Index3 i = g.unravel(lin);
  Eigen::Vector3d v(static_cast<double>(i[0]), static_cast<double>(i[1]), static_cast<double>(i[2]));
  // Offsets in (-0.5, 0.5] so the point's nearest voxel (round-half-down) is the chosen one.
  for (int a = 0; a < 3; ++a) v[a] += 0.5 - uniform01(rng);
  return g.affine.voxel_to_world(v);
}

inline RejectReason reason_for(Termination t) {
  switch (t) {
    case Termination::entered_csf: return RejectReason::entered_csf;
    case Termination::exited_brain: return RejectReason::exited_brain;
    case Termination::invalid_tissue: return RejectReason::invalid_interior;
    case Termination::max_length: return RejectReason::too_long;
    default: return RejectReason::none;
  }
}

}  // namespace tracker_detail

// Whole-brain tracking. Attempt i uses random stream (seed XOR i); outcomes are merged in
// attempt order, so the result does not depend on cfg.threads.
inline TrackResult track_whole_brain(const TensorField& tensors, const FiveTissueTypeMap& tt,
                                     const TrackerConfig& cfg) {
  cfg.validate();
  if (!tensors.tensors.geometry().same_lattice(tt.geometry(), 1e-4)) {
    throw GridMismatchError("tracker: tensor and 5TT grids differ");
  }
  const SphereGrid& sphere = default_sphere();
  const TensorSampler sampler(tensors.tensors,
                              cfg.algorithm == Algorithm::fact ? cfg.fact_interpolation : Interpolation::trilinear);
  const auto& geom = tt.geometry();

  std::vector<std::int64_t> seeds;
  LabelGrid brain;
  LengthBounds bounds;
  double max_len = 0.0;
  if (cfg.algorithm == Algorithm::act_prob) {
    seeds = mask_voxels(gmwmi_extract(tt));
    if (seeds.empty()) throw SeedingError("tracker: empty gray/white matter interface");
    bounds = length_bounds(tt);
    max_len = bounds.max_mm;
  } else {
    brain = LabelGrid(geom, 1, 0);
    for (std::int64_t v = 0; v < geom.voxel_count(); ++v) {
      brain.data()[static_cast<std::size_t>(v)] = tt.at(v) != Tissue::background ? 1 : 0;
    }
    seeds = mask_voxels(brain);
    if (seeds.empty()) throw SeedingError("tracker: empty brain mask");
    const Eigen::Vector3d extent = geom.spacing().cwiseProduct(
        Eigen::Vector3d(double(geom.dims[0]), double(geom.dims[1]), double(geom.dims[2])));
    max_len = 10.0 * extent.norm();
  }
  const PropagationContext ctx{sampler, tt, sphere, cfg, max_len};

  auto run_attempt = [&](std::uint64_t index) {
    tracker_detail::AttemptOutcome o;
    const std::uint64_t stream = cfg.rng_seed ^ index;
    Rng rng = stream_rng(cfg.rng_seed, index);
    o.streamline.seed_index = index;
    o.streamline.stream_id = stream;
    const std::int64_t voxel = seeds[static_cast<std::size_t>(uniform01(rng) * double(seeds.size()))];
    const Eigen::Vector3d seed = tracker_detail::random_point_in_voxel(geom, voxel, rng);
    if (cfg.algorithm == Algorithm::fact) {
      o.streamline.points = propagate_fact(seed, sampler, brain, cfg, max_len);
      o.verdict = o.streamline.points.size() >= 2 ? Verdict::accept() : Verdict::reject(RejectReason::too_short);
      return o;
    }
    const auto d0 = initial_direction(ctx, seed, rng);
    if (!d0) {
      o.streamline.points = {seed};
      o.verdict = Verdict::reject(RejectReason::endpoint_not_gm);
      return o;
    }
    const HalfTrack a = propagate_prob(seed, *d0, ctx, rng);
    const HalfTrack b = propagate_prob(seed, Eigen::Vector3d(-*d0), ctx, rng);
    auto& pts = o.streamline.points;
    pts.assign(b.points.rbegin(), b.points.rend());
    pts.insert(pts.end(), a.points.begin() + 1, a.points.end());
    for (const auto t : {a.termination, b.termination}) {
      const RejectReason r = tracker_detail::reason_for(t);
      if (r != RejectReason::none) {
        o.verdict = Verdict::reject(r);
        return o;
      }
    }
    o.verdict = judge_streamline(pts, tt, bounds);
    return o;
  };

  TrackResult result;
  result.tractogram.properties = cfg.snapshot();
  if (cfg.algorithm == Algorithm::act_prob) {
    std::ostringstream ss;
    ss.precision(17);
    ss << bounds.min_mm << ',' << bounds.max_mm;
    result.tractogram.properties["length_bounds"] = ss.str();
  }
  auto& stats = result.stats;
  const std::size_t cap = cfg.target_count * cfg.attempts_per_target;
  const unsigned threads = resolve_threads(cfg.threads);
  const std::size_t batch = std::max<std::size_t>(64, 16 * threads);
  std::vector<tracker_detail::AttemptOutcome> outcomes;
  std::uint64_t next = 0;
  while (stats.accepted < cfg.target_count) {
    if (next >= cap) {
      throw TrackingError("tracker: attempt cap of " + std::to_string(cap) + " reached with " +
                              std::to_string(stats.accepted) + " accepted streamlines (" + stats.summary() + ")",
                          stats);
    }
    const std::size_t n = std::min<std::size_t>(batch, cap - next);
    outcomes.assign(n, {});
    parallel_for(static_cast<std::int64_t>(n), threads, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t i = b; i < e; ++i) outcomes[static_cast<std::size_t>(i)] = run_attempt(next + static_cast<std::uint64_t>(i));
    });
    for (auto& o : outcomes) {
      ++stats.attempts;
      if (o.verdict.accepted) {
        ++stats.accepted;
        result.tractogram.streamlines.push_back(std::move(o.streamline));
        if (stats.accepted == cfg.target_count) break;
      } else {
        ++stats.rejected[o.verdict.reason];
      }
    }
    next += n;
  }
  return result;
}

}  // namespace actrack
