#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "actrack/errors.hpp"
#include "actrack/parallel.hpp"
#include "actrack/volume.hpp"

namespace actrack {

// Tensor coefficient order used everywhere on disk and in memory.
enum TensorCoeff { kDxx = 0, kDxy, kDxz, kDyy, kDyz, kDzz };

inline Eigen::Matrix3d tensor_matrix(std::span<const double> c) {
  Eigen::Matrix3d d;
  d << c[kDxx], c[kDxy], c[kDxz],
       c[kDxy], c[kDyy], c[kDyz],
       c[kDxz], c[kDyz], c[kDzz];
  return d;
}

inline std::array<double, 6> tensor_coeffs(const Eigen::Matrix3d& d) {
  return {d(0, 0), d(0, 1), d(0, 2), d(1, 1), d(1, 2), d(2, 2)};
}

// D = lambda_perp * I + (lambda_par - lambda_perp) * t t^T for unit t.
inline Eigen::Matrix3d cylinder_tensor(const Eigen::Vector3d& axis, double lambda_par, double lambda_perp) {
  const Eigen::Vector3d t = axis.normalized();
  return lambda_perp * Eigen::Matrix3d::Identity() + (lambda_par - lambda_perp) * (t * t.transpose());
}

constexpr double kB0Threshold = 1.0;  // s/mm^2

struct DiffusionProtocol {
  std::vector<double> bvals;
  std::vector<Eigen::Vector3d> bvecs;

  std::size_t size() const { return bvals.size(); }
  bool is_b0(std::size_t i) const { return bvals[i] < kB0Threshold; }

  void validate() const {
    if (bvals.size() != bvecs.size()) throw ProtocolError("protocol: b-value and b-vector counts differ");
    std::size_t b0 = 0;
    std::vector<Eigen::Vector3d> dirs;
    for (std::size_t i = 0; i < bvals.size(); ++i) {
      if (!std::isfinite(bvals[i]) || bvals[i] < 0) throw ProtocolError("protocol: invalid b-value");
      if (is_b0(i)) {
        ++b0;
        continue;
      }
      if (std::abs(bvecs[i].norm() - 1.0) > 1e-6) {
        throw ProtocolError("protocol: b-vector " + std::to_string(i) + " is not unit-norm");
      }
      dirs.push_back(bvecs[i]);
    }
    if (b0 == 0) throw ProtocolError("protocol: no b=0 measurement");
    if (dirs.size() < 6) throw ProtocolError("protocol: fewer than 6 diffusion-weighted directions");
    Eigen::MatrixXd q(static_cast<Eigen::Index>(dirs.size()), 6);
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      const auto& g = dirs[i];
      q.row(static_cast<Eigen::Index>(i)) << g.x() * g.x(), 2 * g.x() * g.y(), 2 * g.x() * g.z(), g.y() * g.y(),
          2 * g.y() * g.z(), g.z() * g.z();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(q);
    qr.setThreshold(1e-10);
    if (qr.rank() < 6) throw ProtocolError("protocol: diffusion directions do not determine a tensor");
  }

  // Rows [1, -b gx^2, -2b gxgy, -2b gxgz, -b gy^2, -2b gygz, -b gz^2] against (ln S0, D coefficients).
  Eigen::MatrixXd design_matrix() const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(size()), 7);
    for (std::size_t i = 0; i < size(); ++i) {
      const double b = bvals[i];
      const Eigen::Vector3d g = is_b0(i) ? Eigen::Vector3d::Zero() : bvecs[i];
      x.row(static_cast<Eigen::Index>(i)) << 1.0, -b * g.x() * g.x(), -2 * b * g.x() * g.y(), -2 * b * g.x() * g.z(),
          -b * g.y() * g.y(), -2 * b * g.y() * g.z(), -b * g.z() * g.z();
    }
    return x;
  }
};

namespace dti_detail {

inline std::vector<std::vector<double>> read_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("protocol: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (auto& ch : line) {
      if (ch == ',' || ch == '\t') ch = ' ';
    }
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      if (tok[0] == '#') break;
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw FormatError("protocol: bad number '" + tok + "' in " + path);
      } catch (const std::logic_error&) {
        throw FormatError("protocol: bad number '" + tok + "' in " + path);
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dti_detail

// Reads b-values (one per line, or FSL single row) and b-vectors (three per line, or FSL
// three rows of N).
inline DiffusionProtocol load_protocol(const std::string& bvals_path, const std::string& bvecs_path) {
  DiffusionProtocol p;
  for (const auto& row : dti_detail::read_rows(bvals_path)) p.bvals.insert(p.bvals.end(), row.begin(), row.end());
  const auto rows = dti_detail::read_rows(bvecs_path);
  const std::size_t n = p.bvals.size();
  const bool fsl = rows.size() == 3 && n != 3 && rows[0].size() == n && rows[1].size() == n && rows[2].size() == n;
  if (fsl) {
    for (std::size_t i = 0; i < n; ++i) p.bvecs.emplace_back(rows[0][i], rows[1][i], rows[2][i]);
  } else {
    for (const auto& r : rows) {
      if (r.size() != 3) throw FormatError("protocol: b-vector rows must have 3 entries");
      p.bvecs.emplace_back(r[0], r[1], r[2]);
    }
  }
  for (std::size_t i = 0; i < p.bvecs.size() && i < n; ++i) {
    const double norm = p.bvecs[i].norm();
    if (!p.is_b0(i) && norm > 0 && std::abs(norm - 1.0) < 1e-3) p.bvecs[i] /= norm;
  }
  p.validate();
  return p;
}

inline void save_protocol(const DiffusionProtocol& p, const std::string& bvals_path, const std::string& bvecs_path) {
  std::ofstream bv(bvals_path), bg(bvecs_path);
  if (!bv || !bg) throw IoError("protocol: cannot write protocol files");
  bv.precision(17);
  bg.precision(17);
  for (std::size_t i = 0; i < p.size(); ++i) {
    bv << p.bvals[i] << '\n';
    bg << p.bvecs[i].x() << ' ' << p.bvecs[i].y() << ' ' << p.bvecs[i].z() << '\n';
  }
}

struct TensorField {
  VoxelGrid tensors;   // 6 channels, mm^2/s
  LabelGrid fit_mask;  // 1 where a tensor was fitted
  std::size_t masked = 0;
  std::size_t nonfinite = 0;
};

// Two-pass weighted linear least squares on the log signal: OLS, then one reweighting by
// squared predicted signals. `mask` (optional) restricts which voxels are attempted.
inline TensorField fit_wlls(const VoxelGrid& dmri, const DiffusionProtocol& protocol, const LabelGrid* mask = nullptr,
                            unsigned threads = 1) {
  protocol.validate();
  if (static_cast<std::size_t>(dmri.channels()) != protocol.size()) {
    throw ProtocolError("fit: dMRI has " + std::to_string(dmri.channels()) + " volumes but protocol lists " +
                        std::to_string(protocol.size()));
  }
  if (mask && !mask->geometry().same_lattice(dmri.geometry())) throw GridMismatchError("fit: mask grid differs");

  const Eigen::MatrixXd x = protocol.design_matrix();
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < 7) throw ProtocolError("fit: design matrix is rank deficient");
  }
  const Eigen::MatrixXd ols = (x.transpose() * x).ldlt().solve(x.transpose());
  const Eigen::Index n = x.rows();
  std::vector<Eigen::Index> b0_rows;
  for (std::size_t i = 0; i < protocol.size(); ++i) {
    if (protocol.is_b0(i)) b0_rows.push_back(static_cast<Eigen::Index>(i));
  }

  TensorField out{VoxelGrid(dmri.geometry(), 6, 0.0), LabelGrid(dmri.geometry(), 1, 0)};
  out.fit_mask.set_disk_type(DataType::uint8);
  std::atomic<std::size_t> masked{0}, nonfinite{0};

  parallel_for(dmri.voxel_count(), threads, [&](std::int64_t begin, std::int64_t end) {
    Eigen::VectorXd y(n), w(n);
    Eigen::Matrix<double, 7, 1> beta;
    for (std::int64_t v = begin; v < end; ++v) {
      if (mask && mask->data()[static_cast<std::size_t>(v)] == 0) continue;
      const auto s = dmri.voxel(v);
      bool finite = true;
      double s0 = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) finite = finite && std::isfinite(s[static_cast<std::size_t>(i)]);
      if (!finite) {
        ++nonfinite;
        ++masked;
        continue;
      }
      for (auto r : b0_rows) s0 += s[static_cast<std::size_t>(r)];
      s0 /= double(b0_rows.size());
      if (!(s0 > 0.0)) {
        ++masked;
        continue;
      }
      const double floor = s0 * 1e-8;
      for (Eigen::Index i = 0; i < n; ++i) y[i] = std::log(std::max(s[static_cast<std::size_t>(i)], floor));
      beta = ols * y;
      w = (2.0 * (x * beta)).array().exp();
      const Eigen::Matrix<double, 7, 7> a = x.transpose() * w.asDiagonal() * x;
      const Eigen::Matrix<double, 7, 1> rhs = x.transpose() * (w.array() * y.array()).matrix();
      const Eigen::Matrix<double, 7, 1> wbeta = a.ldlt().solve(rhs);
      if (wbeta.allFinite()) beta = wbeta;
      if (!beta.allFinite()) {
        ++nonfinite;
        ++masked;
        continue;
      }
      auto t = out.tensors.voxel(v);
      for (int k = 0; k < 6; ++k) t[static_cast<std::size_t>(k)] = beta[k + 1];
      out.fit_mask.data()[static_cast<std::size_t>(v)] = 1;
    }
  });
  out.masked = masked;
  out.nonfinite = nonfinite;
  return out;
}

struct Eigensystem {
  Eigen::Vector3d values;   // descending
  Eigen::Matrix3d vectors;  // column k pairs with values[k]
};

// Symmetric 3x3 eigendecomposition with descending eigenvalues and a deterministic sign:
// the first component of magnitude > 1e-12 of every eigenvector is positive.
inline Eigensystem eigendecompose(const Eigen::Matrix3d& d) {
  const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ContractViolation("eigendecompose: tensor is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(d);
  Eigensystem out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = es.eigenvalues()[2 - k];
    Eigen::Vector3d v = es.eigenvectors().col(2 - k);
    for (int c = 0; c < 3; ++c) {
      if (std::abs(v[c]) > 1e-12) {
        if (v[c] < 0) v = -v;
        break;
      }
    }
    out.vectors.col(k) = v;
  }
  return out;
}

// FA with negative eigenvalues clamped to zero; 0 for an all-zero spectrum.
inline double fractional_anisotropy(const Eigen::Vector3d& eigenvalues) {
  const Eigen::Vector3d l = eigenvalues.cwiseMax(0.0);
  const double denom = l.squaredNorm();
  if (denom <= 0.0) return 0.0;
  const double num = (l[0] - l[1]) * (l[0] - l[1]) + (l[1] - l[2]) * (l[1] - l[2]) + (l[2] - l[0]) * (l[2] - l[0]);
  return std::clamp(std::sqrt(0.5 * num / denom), 0.0, 1.0);
}

struct ScalarMaps {
  VoxelGrid fa;
  VoxelGrid md;
  VoxelGrid v1;      // 3 channels
  VoxelGrid dirmap;  // 3 channels, v1 * FA
  std::size_t clamped = 0;
};

inline ScalarMaps derive_scalars(const TensorField& t, unsigned threads = 1) {
  const auto& geom = t.tensors.geometry();
  ScalarMaps m{VoxelGrid(geom, 1), VoxelGrid(geom, 1), VoxelGrid(geom, 3), VoxelGrid(geom, 3)};
  std::atomic<std::size_t> clamped{0};
  parallel_for(t.tensors.voxel_count(), threads, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t v = begin; v < end; ++v) {
      if (t.fit_mask.data()[static_cast<std::size_t>(v)] == 0) continue;
      const Eigensystem es = eigendecompose(tensor_matrix(t.tensors.voxel(v)));
      if (es.values.minCoeff() < 0) ++clamped;
      const double fa = fractional_anisotropy(es.values);
      m.fa.data()[static_cast<std::size_t>(v)] = fa;
      m.md.data()[static_cast<std::size_t>(v)] = es.values.sum() / 3.0;
      auto v1 = m.v1.voxel(v);
      auto dm = m.dirmap.voxel(v);
      for (int c = 0; c < 3; ++c) {
        v1[static_cast<std::size_t>(c)] = es.vectors(c, 0);
        dm[static_cast<std::size_t>(c)] = es.vectors(c, 0) * fa;
      }
    }
  });
  m.clamped = clamped;
  return m;
}

}  // namespace actrack
