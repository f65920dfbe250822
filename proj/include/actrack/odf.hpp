#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "actrack/errors.hpp"
#include "actrack/random.hpp"

namespace actrack {

constexpr int kSphereSize = 724;
constexpr double kTensorEigenFloor = 1e-6;  // mm^2/s

// Antipodally symmetric direction set: the upper half of a spherical Fibonacci lattice of
// n points, followed by the negation of each of those points (direction i + n/2 = -direction i).
struct SphereGrid {
  std::vector<Eigen::Vector3d> directions;
  double weight = 0.0;  // uniform quadrature weight, 4 pi / n

  int size() const { return static_cast<int>(directions.size()); }
  int half() const { return size() / 2; }
  int antipode(int i) const { return i < half() ? i + half() : i - half(); }

  int nearest(const Eigen::Vector3d& u) const {
    int best = 0;
    double best_dot = -2.0;
    for (int i = 0; i < size(); ++i) {
      const double d = directions[static_cast<std::size_t>(i)].dot(u);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return best;
  }
};

inline SphereGrid build_sphere(int n = kSphereSize) {
  if (n < 2 || n % 2 != 0) throw ParameterError("sphere: point count must be even and positive");
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  SphereGrid s;
  s.directions.resize(static_cast<std::size_t>(n));
  const int h = n / 2;
  for (int i = 0; i < h; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double frac = i / golden - std::floor(i / golden);
    const double phi = 2.0 * std::numbers::pi * frac;
    const Eigen::Vector3d u = Eigen::Vector3d(r * std::cos(phi), r * std::sin(phi), z).normalized();
    s.directions[static_cast<std::size_t>(i)] = u;
    s.directions[static_cast<std::size_t>(i + h)] = -u;
  }
  s.weight = 4.0 * std::numbers::pi / n;
  return s;
}

inline const SphereGrid& default_sphere() {
  static const SphereGrid sphere = build_sphere(kSphereSize);
  return sphere;
}

enum class DodfConvention {
  inverse,  // 1 / (4 pi |D|^1/2 (u^T D^-1 u)^3/2), integrates to one
  literal,  // 1 / (4 pi |D|^1/2 (u^T D u)^3/2)
};

// Per-tensor dODF with the quadratic form and normaliser precomputed.
class DodfModel {
 public:
  DodfModel(const Eigen::Matrix3d& d, DodfConvention convention = DodfConvention::inverse,
            bool regularize = true) {
    if (!d.allFinite()) throw DegenerateTensorError("dodf: non-finite tensor");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(0.5 * (d + d.transpose()));
    Eigen::Vector3d lambda = es.eigenvalues();  // ascending
    if (!lambda.allFinite() || lambda[2] <= 0.0) throw DegenerateTensorError("dodf: tensor has no positive eigenvalue");
    if (regularize) {
      lambda = lambda.cwiseMax(kTensorEigenFloor);
    } else if (lambda[0] <= kTensorEigenFloor) {
      throw DegenerateTensorError("dodf: tensor is not positive definite");
    }
    const Eigen::Matrix3d& v = es.eigenvectors();
    const Eigen::Vector3d q = convention == DodfConvention::inverse ? lambda.cwiseInverse() : lambda;
    quad_ = v * q.asDiagonal() * v.transpose();
    log_norm_ = -std::log(4.0 * std::numbers::pi) - 0.5 * (std::log(lambda[0]) + std::log(lambda[1]) + std::log(lambda[2]));
    q_min_ = q.minCoeff();
    peak_ = convention == DodfConvention::inverse ? Eigen::Vector3d(v.col(2)) : Eigen::Vector3d(v.col(0));
  }

  double quadratic(const Eigen::Vector3d& u) const { return u.dot(quad_ * u); }
  double log_value(const Eigen::Vector3d& u) const { return log_norm_ - 1.5 * std::log(quadratic(u)); }
  double value(const Eigen::Vector3d& u) const { return std::exp(log_value(u)); }

  // dODF(u)^k / max_v dODF(v)^k over the continuous sphere; in (0, 1].
  double sharpened_ratio(const Eigen::Vector3d& u, double k) const {
    return std::pow(q_min_ / quadratic(u), 1.5 * k);
  }

  // Continuous maximiser of the dODF (up to sign).
  const Eigen::Vector3d& peak_direction() const { return peak_; }

 private:
  Eigen::Matrix3d quad_;
  double log_norm_ = 0.0;
  double q_min_ = 1.0;
  Eigen::Vector3d peak_;
};

inline std::vector<double> dodf_eval(const Eigen::Matrix3d& d, const SphereGrid& sphere,
                                     DodfConvention convention = DodfConvention::inverse) {
  const DodfModel model(d, convention);
  std::vector<double> out(static_cast<std::size_t>(sphere.size()));
  for (int i = 0; i < sphere.size(); ++i) out[static_cast<std::size_t>(i)] = model.value(sphere.directions[static_cast<std::size_t>(i)]);
  return out;
}

struct PropagationPMF {
  std::vector<double> p;
  double k = 1.0;
};

namespace odf_detail {

inline PropagationPMF normalise_log(std::vector<double> logv, double k) {
  const double top = *std::max_element(logv.begin(), logv.end());
  double sum = 0.0;
  for (auto& v : logv) {
    v = std::exp(k * (v - top));
    sum += v;
  }
  for (auto& v : logv) v /= sum;
  return PropagationPMF{std::move(logv), k};
}

}  // namespace odf_detail

// p ∝ dodf^k, renormalised over the grid. Computed in log space so large k stays finite.
inline PropagationPMF sharpen_normalize(std::span<const double> dodf, double k) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("sharpen: exponent k must be positive");
  if (dodf.empty()) throw ParameterError("sharpen: empty dODF");
  std::vector<double> logv(dodf.size());
  for (std::size_t i = 0; i < dodf.size(); ++i) {
    if (!(dodf[i] > 0.0) || !std::isfinite(dodf[i])) throw ParameterError("sharpen: dODF values must be positive");
    logv[i] = std::log(dodf[i]);
  }
  return odf_detail::normalise_log(std::move(logv), k);
}

inline PropagationPMF pmf_from_tensor(const Eigen::Matrix3d& d, const SphereGrid& sphere, double k,
                                      DodfConvention convention = DodfConvention::inverse) {
  if (!(k > 0.0) || !std::isfinite(k)) throw ParameterError("sharpen: exponent k must be positive");
  const DodfModel model(d, convention);
  std::vector<double> logv(static_cast<std::size_t>(sphere.size()));
  for (int i = 0; i < sphere.size(); ++i) logv[static_cast<std::size_t>(i)] = model.log_value(sphere.directions[static_cast<std::size_t>(i)]);
  return odf_detail::normalise_log(std::move(logv), k);
}

// Draws a grid index from weights restricted to the cone {u : u.prev >= cos_max}. Without a
// previous direction, antipodal pairs are folded and the upper-half representative returned.
// `weight(i)` must be non-negative. Returns nullopt when the cone carries no mass.
template <typename WeightFn, typename Rng>
std::optional<int> sample_cone(const SphereGrid& sphere, const std::optional<Eigen::Vector3d>& prev, double cos_max,
                               WeightFn&& weight, Rng& rng) {
  thread_local std::vector<double> cumulative;
  thread_local std::vector<int> members;
  cumulative.clear();
  members.clear();
  double total = 0.0;
  if (prev) {
    const Eigen::Vector3d& d = *prev;
    for (int i = 0; i < sphere.size(); ++i) {
      if (sphere.directions[static_cast<std::size_t>(i)].dot(d) < cos_max - 1e-12) continue;
      const double w = weight(i);
      if (!(w > 0.0)) continue;
      total += w;
      cumulative.push_back(total);
      members.push_back(i);
    }
  } else {
    for (int i = 0; i < sphere.half(); ++i) {
      const double w = weight(i) + weight(sphere.antipode(i));
      if (!(w > 0.0)) continue;
      total += w;
      cumulative.push_back(total);
      members.push_back(i);
    }
  }
  if (members.empty() || !(total > 0.0) || !std::isfinite(total)) return std::nullopt;
  const double target = uniform01(rng) * total;
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
  const std::size_t pick = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), members.size() - 1);
  return members[pick];
}

// Direction index drawn from the PMF, restricted to a cone of half-angle max_angle_deg
// around prev_dir when one is given.
template <typename Rng>
std::optional<int> sample_direction(const PropagationPMF& pmf, const SphereGrid& sphere,
                                    const std::optional<Eigen::Vector3d>& prev_dir, double max_angle_deg, Rng& rng) {
  if (static_cast<int>(pmf.p.size()) != sphere.size()) throw ParameterError("sample: PMF and sphere sizes differ");
  const double cos_max = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  return sample_cone(sphere, prev_dir, cos_max, [&](int i) { return pmf.p[static_cast<std::size_t>(i)]; }, rng);
}

}  // namespace actrack
