// Copyright 2026 The GazeBot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "gazebot/dataset.hpp"
#include "gazebot/geometry.hpp"

namespace gazebot::predictors {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Voxel features of a gaze cloud.

struct VoxelFeature {
  int resolution = 8;
  std::vector<double> grid;  // x-major: index = (ix * R + iy) * R + iz
  std::size_t total = 0;

  VectorXd vector() const { return Eigen::Map<const VectorXd>(grid.data(), grid.size()); }
};

/// Bin index along one axis: closed lower bound, open upper, last cell closed.
inline int voxel_bin(double coord, double side, int resolution) {
  const double u = (coord / side + 0.5) * resolution;
  int i = static_cast<int>(std::floor(u));
  return std::clamp(i, 0, resolution - 1);
}

/// Normalized point-count histogram over the gaze cube.
inline VoxelFeature featurize(const GazeCloud& g, int resolution = 8) {
  if (resolution < 1) throw Error("voxel resolution must be >= 1");
  VoxelFeature f;
  f.resolution = resolution;
  f.grid.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0.0);
  const double half = 0.5 * g.side;
  for (const Vec3& p : g.points) {
    if (p.cwiseAbs().maxCoeff() > half) continue;
    const int ix = voxel_bin(p.x(), g.side, resolution);
    const int iy = voxel_bin(p.y(), g.side, resolution);
    const int iz = voxel_bin(p.z(), g.side, resolution);
    f.grid[static_cast<std::size_t>((ix * resolution + iy) * resolution + iz)] += 1.0;
    ++f.total;
  }
  if (f.total > 0)
    for (double& v : f.grid) v /= static_cast<double>(f.total);
  return f;
}

/// Axis-aligned world box used for the coarse scene occupancy grid.
struct WorkspaceBox {
  Vec3 lo = Vec3(-0.40, -0.30, -0.02);
  Vec3 hi = Vec3(0.40, 0.30, 0.30);
};

/// World-frame occupancy over the workspace (nx * ny * nz), normalized by the
/// number of points that fell inside. Absolute by construction.
inline VectorXd world_grid(const std::vector<Vec3>& points, const WorkspaceBox& box, int nx = 16,
                           int ny = 16, int nz = 4) {
  VectorXd grid = VectorXd::Zero(nx * ny * nz);
  const Vec3 ext = box.hi - box.lo;
  double n = 0.0;
  for (const Vec3& p : points) {
    const Vec3 u = (p - box.lo).cwiseQuotient(ext);
    if ((u.array() < 0.0).any() || (u.array() > 1.0).any()) continue;
    const int ix = std::min(nx - 1, static_cast<int>(u.x() * nx));
    const int iy = std::min(ny - 1, static_cast<int>(u.y() * ny));
    const int iz = std::min(nz - 1, static_cast<int>(u.z() * nz));
    grid[(ix * ny + iy) * nz + iz] += 1.0;
    n += 1.0;
  }
  if (n > 0.0) grid /= n;
  return grid;
}

// ---------------------------------------------------------------------------
// Model container: versioned text header followed by binary float64 blocks.

inline constexpr int kModelFormatVersion = 1;
inline constexpr std::string_view kModelMagic = "GAZEBOT-MODEL";

namespace detail {

inline void put_block(std::string& out, const MatrixXd& m) {
  out += "block " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double v = m(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  out += "\n";
}

inline MatrixXd get_block(dataset::detail::Reader& rd) {
  dataset::detail::Tokens tk(rd.line("block"));
  tk.expect("block");
  const auto rows = tk.integer<Eigen::Index>("rows");
  const auto cols = tk.integer<Eigen::Index>("cols");
  tk.finish("block");
  const auto* p = rd.bytes(static_cast<std::size_t>(rows * cols * 8), "block data");
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
      p += 8;
      double v;
      std::memcpy(&v, &bits, 8);
      m(i, j) = v;
    }
  if (*rd.bytes(1, "block terminator") != '\n') throw Error("invalid field 'block terminator'");
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regressors.

/// Shared contract of every learned head: fit on (features, targets), then
/// deterministic predict. Samples are rows of X and Y.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual void fit(const MatrixXd& x, const MatrixXd& y) = 0;
  virtual VectorXd predict(const VectorXd& x) const = 0;
  virtual bool fitted() const = 0;
  virtual std::string kind() const = 0;
  virtual void write(std::string& out) const = 0;
  virtual std::unique_ptr<Regressor> clone() const = 0;

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

 protected:
  void check_fit_input(const MatrixXd& x, const MatrixXd& y) {
    if (x.rows() == 0) throw Error("empty training set");
    if (x.rows() != y.rows()) throw Error("feature/target row count mismatch");
    if (!x.allFinite() || !y.allFinite()) throw Error("training data must be finite");
    input_dim_ = static_cast<int>(x.cols());
    output_dim_ = static_cast<int>(y.cols());
  }
  void check_predict_input(const VectorXd& x) const {
    if (!fitted()) throw Error("predict called before fit");
    if (x.size() != input_dim_)
      throw Error("feature dimension " + std::to_string(x.size()) + " != trained dimension " +
                  std::to_string(input_dim_));
  }

  int input_dim_ = 0;
  int output_dim_ = 0;
};

/// Mean of the k nearest training targets (Euclidean); ties go to the lower
/// training index.
class KnnRegressor final : public Regressor {
 public:
  explicit KnnRegressor(int k = 5) : k_(k) {
    if (k < 1) throw Error("k must be >= 1");
  }

  void fit(const MatrixXd& x, const MatrixXd& y) override {
    check_fit_input(x, y);
    if (k_ > x.rows()) throw Error("k exceeds training-set size");
    train_x_ = x.transpose();  // one sample per column
    train_y_ = y.transpose();
    fitted_ = true;
  }

  /// Training indices of the k nearest samples, nearest first.
  std::vector<int> neighbors(const VectorXd& x) const {
    check_predict_input(x);
    const VectorXd d = (train_x_.colwise() - x).colwise().squaredNorm().transpose();
    std::vector<int> idx(static_cast<std::size_t>(d.size()));
    std::iota(idx.begin(), idx.end(), 0);
    auto closer = [&](int a, int b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + k_, idx.end(), closer);
    idx.resize(static_cast<std::size_t>(k_));
    return idx;
  }

  VectorXd predict(const VectorXd& x) const override {
    const auto idx = neighbors(x);
    VectorXd out = VectorXd::Zero(train_y_.rows());
    for (int i : idx) out += train_y_.col(i);
    return out / static_cast<double>(k_);
  }

  bool fitted() const override { return fitted_; }
  std::string kind() const override { return "knn"; }
  int k() const { return k_; }
  Eigen::Index size() const { return train_x_.cols(); }

  void write(std::string& out) const override {
    out += "kind knn\nk " + std::to_string(k_) + "\n";
    detail::put_block(out, train_x_);
    detail::put_block(out, train_y_);
  }

  static std::unique_ptr<KnnRegressor> read(dataset::detail::Reader& rd) {
    dataset::detail::Tokens tk(rd.line("k"));
    tk.expect("k");
    auto r = std::make_unique<KnnRegressor>(tk.integer<int>("k"));
    const MatrixXd x = detail::get_block(rd);
    const MatrixXd y = detail::get_block(rd);
    r->fit(x.transpose(), y.transpose());
    return r;
  }

  std::unique_ptr<Regressor> clone() const override {
    return std::make_unique<KnnRegressor>(*this);
  }

 private:
  int k_;
  bool fitted_ = false;
  MatrixXd train_x_;
  MatrixXd train_y_;
};

/// argmin ||X W + 1 b^T - Y||^2 + lambda ||W||^2; the bias is unregularized.
class RidgeRegressor final : public Regressor {
 public:
  explicit RidgeRegressor(double lambda = 1e-3) : lambda_(lambda) {
    if (!(lambda >= 0.0)) throw Error("ridge lambda must be >= 0");
  }

  void fit(const MatrixXd& x, const MatrixXd& y) override {
    check_fit_input(x, y);
    const Eigen::RowVectorXd mx = x.colwise().mean();
    const Eigen::RowVectorXd my = y.colwise().mean();
    const MatrixXd xc = x.rowwise() - mx;
    const MatrixXd yc = y.rowwise() - my;
    const Eigen::Index n = x.rows(), d = x.cols();
    if (lambda_ == 0.0) {
      Eigen::ColPivHouseholderQR<MatrixXd> qr(xc);
      if (qr.rank() < d) throw Error("singular system at lambda = 0; use lambda > 0");
      weights_ = qr.solve(yc);
    } else if (n < d) {
      // Dual form: W = Xc^T (Xc Xc^T + lambda I)^-1 Yc.
      MatrixXd gram = xc * xc.transpose();
      gram.diagonal().array() += lambda_;
      weights_ = xc.transpose() * gram.ldlt().solve(yc);
    } else {
      MatrixXd normal = xc.transpose() * xc;
      normal.diagonal().array() += lambda_;
      weights_ = normal.ldlt().solve(xc.transpose() * yc);
    }
    bias_ = (my - mx * weights_).transpose();
    fitted_ = true;
  }

  VectorXd predict(const VectorXd& x) const override {
    check_predict_input(x);
    return weights_.transpose() * x + bias_;
  }

  bool fitted() const override { return fitted_; }
  std::string kind() const override { return "ridge"; }
  double lambda() const { return lambda_; }
  const MatrixXd& weights() const { return weights_; }
  const VectorXd& bias() const { return bias_; }

  void write(std::string& out) const override {
    out += "kind ridge\nlambda " + dataset::detail::fmt_double(lambda_) + "\n";
    detail::put_block(out, weights_);
    detail::put_block(out, bias_);
  }

  static std::unique_ptr<RidgeRegressor> read(dataset::detail::Reader& rd) {
    dataset::detail::Tokens tk(rd.line("lambda"));
    tk.expect("lambda");
    auto r = std::make_unique<RidgeRegressor>(tk.number("lambda"));
    r->weights_ = detail::get_block(rd);
    r->bias_ = detail::get_block(rd);
    r->input_dim_ = static_cast<int>(r->weights_.rows());
    r->output_dim_ = static_cast<int>(r->weights_.cols());
    r->fitted_ = true;
    return r;
  }

  std::unique_ptr<Regressor> clone() const override {
    return std::make_unique<RidgeRegressor>(*this);
  }

 private:
  double lambda_;
  bool fitted_ = false;
  MatrixXd weights_;
  VectorXd bias_;
};

/// Unfitted placeholder so model files can encode absent heads.
inline void write_regressor(std::string& out, const Regressor* r) {
  if (r == nullptr || !r->fitted()) {
    out += "kind none\n";
    return;
  }
  r->write(out);
}

inline std::unique_ptr<Regressor> read_regressor(dataset::detail::Reader& rd) {
  dataset::detail::Tokens tk(rd.line("kind"));
  tk.expect("kind");
  const auto kind = tk.word("kind");
  if (kind == "none") return nullptr;
  if (kind == "knn") return KnnRegressor::read(rd);
  if (kind == "ridge") return RidgeRegressor::read(rd);
  throw Error("invalid field 'kind': '" + std::string(kind) + "'");
}

struct RegressorSpec {
  std::string kind = "knn";  // knn | ridge
  int k = 5;
  double lambda = 1e-3;

  std::unique_ptr<Regressor> make() const {
    if (kind == "knn") return std::make_unique<KnnRegressor>(k);
    if (kind == "ridge") return std::make_unique<RidgeRegressor>(lambda);
    throw Error("unknown regressor kind '" + kind + "'");
  }
};

/// Row-stacks feature vectors.
inline MatrixXd stack_rows(const std::vector<VectorXd>& rows) {
  if (rows.empty()) return MatrixXd();
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

// ---------------------------------------------------------------------------
// Bottleneck offset (gaze-anchored, canonical world-aligned frame).

/// Offset target for a bottleneck pose relative to a gaze point.
inline PoseDelta7 offset_label(const Pose7& bottleneck, const Vec3& gaze) {
  return {bottleneck.position - gaze, quat_log(bottleneck.orientation), bottleneck.gripper};
}

inline Pose7 bottleneck_pose(const Vec3& gaze_3d, const PoseDelta7& offset) {
  return {gaze_3d + offset.dpos, quat_exp(offset.drot), offset.dgrip};
}

/// f(g): the offset head sees only gaze-cloud features.
inline PoseDelta7 predict_offset(const Regressor& f, const GazeCloud& g, int resolution = 8) {
  if (!f.fitted()) throw Error("offset head not fitted");
  return PoseDelta7::from_vector(f.predict(featurize(g, resolution).vector()));
}

// ---------------------------------------------------------------------------
// Progress and sub-task advance.

struct ProgressParams {
  double threshold = 0.9;
  int window = 3;
};

/// Increments the sub-task index after `window` consecutive progress values
/// at or above `threshold`. Never decrements; saturates at n_seg - 1, where
/// a further trigger marks the task complete.
class ProgressTracker {
 public:
  ProgressTracker(int n_seg, ProgressParams params = {}) : n_seg_(n_seg), params_(params) {
    if (n_seg < 1) throw Error("need at least one sub-task");
  }

  int advance(int i_seg, double c) {
    run_ = (c >= params_.threshold) ? run_ + 1 : 0;
    if (run_ >= params_.window) {
      run_ = 0;
      if (i_seg + 1 < n_seg_) return i_seg + 1;
      complete_ = true;
    }
    return i_seg;
  }

  void reset_run() { run_ = 0; }
  bool complete() const { return complete_; }
  int run() const { return run_; }

 private:
  int n_seg_;
  ProgressParams params_;
  int run_ = 0;
  bool complete_ = false;
};

inline double predict_progress(const Regressor& c_head, const GazeCloud& g, int resolution = 8) {
  if (!c_head.fitted()) throw Error("progress head not fitted");
  return c_head.predict(featurize(g, resolution).vector())[0];
}

// ---------------------------------------------------------------------------
// Gaze prediction.
//
// The scene is split into object clusters above the table plane. Each
// sub-task owns a scorer that rates clusters from translation-invariant shape
// descriptors; the gaze is the best cluster's anchor plus a correction
// regressed from the same descriptor. Scoring candidates independently keeps the prediction
// equivariant to object translation.

struct SceneCluster {
  std::vector<int> members;  // indices into the scene cloud
  Vec3 lo = Vec3::Constant(1e300);
  Vec3 hi = Vec3::Constant(-1e300);

  /// Footprint center at the cluster's lowest point.
  Vec3 anchor() const { return {0.5 * (lo.x() + hi.x()), 0.5 * (lo.y() + hi.y()), lo.z()}; }
};

struct ClusterParams {
  double above_table = 0.01;  // points below table + this are ground
  double link_radius = 0.02;
  int min_points = 5;
};

/// Table height as the median point height; the table dominates every view.
inline double estimate_table_height(const PointCloud& scene) {
  if (scene.empty()) throw Error("empty scene");
  std::vector<double> z;
  z.reserve(scene.size());
  for (const auto& p : scene.points) z.push_back(p.z());
  auto mid = z.begin() + static_cast<std::ptrdiff_t>(z.size() / 2);
  std::nth_element(z.begin(), mid, z.end());
  return *mid;
}

/// Single-linkage clustering of above-table points (radius test; the hash
/// grid only accelerates lookups). Clusters are ordered by first member.
inline std::vector<SceneCluster> cluster_scene(const PointCloud& scene, double table_z,
                                               const ClusterParams& params = {}) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (scene.points[i].z() > table_z + params.above_table) ids.push_back(static_cast<int>(i));

  const double r = params.link_radius;
  auto cell_of = [&](const Vec3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x() / r)),
                                       static_cast<std::int64_t>(std::floor(p.y() / r)),
                                       static_cast<std::int64_t>(std::floor(p.z() / r))};
  };
  auto key = [](const std::array<std::int64_t, 3>& c) {
    return (static_cast<std::uint64_t>(c[0] + (1 << 20)) << 42) ^
           (static_cast<std::uint64_t>(c[1] + (1 << 20)) << 21) ^
           static_cast<std::uint64_t>(c[2] + (1 << 20));
  };
  std::unordered_map<std::uint64_t, std::vector<int>> cells;
  for (int n = 0; n < static_cast<int>(ids.size()); ++n)
    cells[key(cell_of(scene.points[ids[n]]))].push_back(n);

  std::vector<int> parent(ids.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  const double r2 = r * r;
  for (int n = 0; n < static_cast<int>(ids.size()); ++n) {
    const Vec3& p = scene.points[ids[n]];
    const auto c = cell_of(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells.end()) continue;
          for (int m : it->second) {
            if (m <= n) continue;
            if ((scene.points[ids[m]] - p).squaredNorm() <= r2) {
              const int a = find(n), b = find(m);
              if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
          }
        }
  }

  std::unordered_map<int, std::size_t> slot;
  std::vector<SceneCluster> clusters;
  for (int n = 0; n < static_cast<int>(ids.size()); ++n) {
    const int root = find(n);
    auto [it, inserted] = slot.emplace(root, clusters.size());
    if (inserted) clusters.emplace_back();
    SceneCluster& c = clusters[it->second];
    const Vec3& p = scene.points[ids[n]];
    c.members.push_back(ids[n]);
    c.lo = c.lo.cwiseMin(p);
    c.hi = c.hi.cwiseMax(p);
  }
  std::erase_if(clusters, [&](const SceneCluster& c) {
    return static_cast<int>(c.members.size()) < params.min_points;
  });
  return clusters;
}

/// Shape descriptor: footprint extents, height extent, base height above the
/// table.
inline VectorXd cluster_descriptor(const SceneCluster& c, double table_z) {
  VectorXd d(4);
  d << c.hi.x() - c.lo.x(), c.hi.y() - c.lo.y(), c.hi.z() - c.lo.z(), c.lo.z() - table_z;
  return d;
}

class GazePredictor {
 public:
  GazePredictor() = default;
  explicit GazePredictor(int n_seg, int k = 5, ClusterParams params = {})
      : params_(params), k_(k), scorers_(static_cast<std::size_t>(n_seg)),
        correctors_(static_cast<std::size_t>(n_seg)) {}

  int n_seg() const { return static_cast<int>(scorers_.size()); }
  bool fitted() const {
    return !scorers_.empty() &&
           std::all_of(scorers_.begin(), scorers_.end(), [](const auto& s) { return s.fitted(); });
  }

  /// Training pairs: (scene, recorded 3-D gaze) per sub-task.
  struct Example {
    const PointCloud* scene;
    Vec3 gaze;
  };

  /// Cluster descriptors of one training scene and the index of the cluster
  /// nearest the recorded gaze.
  struct Observation {
    std::vector<VectorXd> descriptors;
    std::size_t target = 0;
    Vec3 correction = Vec3::Zero();  // gaze - target anchor
  };

  /// Returns false when the scene has no object clusters.
  bool observe(const PointCloud& scene, const Vec3& gaze, Observation& out) const {
    const double table_z = estimate_table_height(scene);
    const auto clusters = cluster_scene(scene, table_z, params_);
    if (clusters.empty()) return false;
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < clusters.size(); ++c)
      for (int m : clusters[c].members) {
        const double d = (scene.points[static_cast<std::size_t>(m)] - gaze).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
    out.descriptors.clear();
    for (const auto& c : clusters) out.descriptors.push_back(cluster_descriptor(c, table_z));
    out.target = best;
    out.correction = gaze - clusters[best].anchor();
    return true;
  }

  void fit(int i_seg, const std::vector<Example>& examples) {
    std::vector<Observation> obs;
    for (const auto& ex : examples) {
      Observation o;
      if (observe(*ex.scene, ex.gaze, o)) obs.push_back(std::move(o));
    }
    fit_observations(i_seg, obs);
  }

  void fit_observations(int i_seg, const std::vector<Observation>& obs) {
    check_index(i_seg);
    std::vector<VectorXd> xs;
    std::vector<VectorXd> ys;
    std::vector<VectorXd> target_xs;
    std::vector<VectorXd> target_corr;
    for (const auto& o : obs) {
      for (std::size_t c = 0; c < o.descriptors.size(); ++c) {
        xs.push_back(o.descriptors[c]);
        VectorXd y(1);
        y[0] = (c == o.target) ? 1.0 : 0.0;
        ys.push_back(y);
      }
      target_xs.push_back(o.descriptors[o.target]);
      target_corr.push_back(o.correction);
    }
    if (target_xs.size() < static_cast<std::size_t>(k_))
      throw Error("too few gaze training examples");
    const auto i = static_cast<std::size_t>(i_seg);
    scorers_[i] = KnnRegressor(k_);
    scorers_[i].fit(stack_rows(xs), stack_rows(ys));
    correctors_[i] = KnnRegressor(k_);
    correctors_[i].fit(stack_rows(target_xs), stack_rows(target_corr));
  }

  /// Predicted 3-D gaze for sub-task i_seg. A scene without object clusters
  /// falls back to the table point straight below the workspace origin.
  Vec3 predict(const PointCloud& scene, int i_seg) const {
    check_index(i_seg);
    const auto& scorer = scorers_[static_cast<std::size_t>(i_seg)];
    if (!scorer.fitted()) throw Error("gaze predictor not fitted for sub-task " +
                                      std::to_string(i_seg));
    const double table_z = estimate_table_height(scene);
    const auto clusters = cluster_scene(scene, table_z, params_);
    if (clusters.empty()) return {0.0, 0.0, table_z};
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const double s = scorer.predict(cluster_descriptor(clusters[c], table_z))[0];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    const VectorXd d = cluster_descriptor(clusters[best], table_z);
    const VectorXd corr = correctors_[static_cast<std::size_t>(i_seg)].predict(d);
    return clusters[best].anchor() + Vec3(corr[0], corr[1], corr[2]);
  }

  void write(std::string& out) const {
    out += "gaze_predictor " + std::to_string(n_seg()) + " k " + std::to_string(k_) + " link " +
           dataset::detail::fmt_double(params_.link_radius) + " above " +
           dataset::detail::fmt_double(params_.above_table) + " min " +
           std::to_string(params_.min_points) + "\n";
    for (std::size_t i = 0; i < scorers_.size(); ++i) {
      write_regressor(out, &scorers_[i]);
      write_regressor(out, &correctors_[i]);
    }
  }

  static GazePredictor read(dataset::detail::Reader& rd) {
    dataset::detail::Tokens tk(rd.line("gaze_predictor"));
    tk.expect("gaze_predictor");
    const int n = tk.integer<int>("gaze_predictor");
    tk.expect("k");
    const int k = tk.integer<int>("k");
    ClusterParams params;
    tk.expect("link");
    params.link_radius = tk.number("link");
    tk.expect("above");
    params.above_table = tk.number("above");
    tk.expect("min");
    params.min_points = tk.integer<int>("min");
    GazePredictor gp(n, k, params);
    auto read_knn = [&](const char* what) {
      auto r = read_regressor(rd);
      auto* knn = dynamic_cast<KnnRegressor*>(r.get());
      if (knn == nullptr) throw Error(std::string("invalid field '") + what + "': expected knn");
      return *knn;
    };
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
      gp.scorers_[i] = read_knn("gaze scorer");
      gp.correctors_[i] = read_knn("gaze corrector");
    }
    return gp;
  }

 private:
  void check_index(int i_seg) const {
    if (i_seg < 0 || i_seg >= n_seg())
      throw Error("sub-task index " + std::to_string(i_seg) + " out of range");
  }

  ClusterParams params_;
  int k_ = 5;
  std::vector<KnnRegressor> scorers_;     // cluster descriptor -> target score
  std::vector<KnnRegressor> correctors_;  // target descriptor -> gaze - anchor
};

inline Vec3 predict_gaze(const GazePredictor& gp, const PointCloud& scene, int i_seg) {
  return gp.predict(scene, i_seg);
}

}  // namespace gazebot::predictors
