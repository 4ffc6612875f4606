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
#include <memory>
#include <utility>
#include <vector>

#include "gazebot/dataset.hpp"
#include "gazebot/geometry.hpp"
#include "gazebot/predictors.hpp"

// Gaze-fixation sub-task segmentation and predictivity-based bottleneck
// detection.
namespace gazebot::segmentation {

using predictors::MatrixXd;
using predictors::VectorXd;

struct FixationParams {
  double radius = 0.05;  // r_fix
  int min_dwell = 5;     // d_min

  void validate() const {
    if (!(radius > 0.0)) throw Error("fixation radius must be positive");
    if (min_dwell < 1) throw Error("min dwell must be >= 1");
  }
};

/// Sub-task [s, e] spans from a gaze trace. A cluster grows while each new
/// sample stays within `radius` of its running centroid. A departing run
/// opens a new segment only once it dwells for `min_dwell` steps; shorter
/// excursions are absorbed into the current cluster.
inline std::vector<std::pair<int, int>> segment_gaze(const std::vector<Vec3>& gaze,
                                                      const FixationParams& params = {}) {
  params.validate();
  const int n = static_cast<int>(gaze.size());
  if (n == 0) throw Error("no stable gaze");

  // Greedy scan producing raw runs of running-centroid clusters.
  struct Run {
    int start;
    int length;
    Vec3 centroid;
  };
  std::vector<Run> runs;
  runs.push_back({0, 1, gaze[0]});
  for (int t = 1; t < n; ++t) {
    const Vec3& g = gaze[static_cast<std::size_t>(t)];
    Run& r = runs.back();
    if ((g - r.centroid).norm() <= params.radius) {
      ++r.length;
      r.centroid += (g - r.centroid) / r.length;
    } else {
      runs.push_back({t, 1, g});
    }
  }

  // Stable runs are fixations. A stable run that returns to the previous
  // fixation continues it; unstable runs are absorbed.
  std::vector<std::size_t> fixations;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].length < params.min_dwell) continue;
    if (!fixations.empty() &&
        (runs[i].centroid - runs[fixations.back()].centroid).norm() <= params.radius)
      continue;
    fixations.push_back(i);
  }
  if (fixations.empty()) throw Error("no stable gaze");

  // Each new fixation's boundary sits at the onset of the departure: the
  // earliest of the unstable runs directly preceding it.
  std::vector<int> bounds{0};
  for (std::size_t f = 1; f < fixations.size(); ++f) {
    std::size_t i = fixations[f];
    while (i > 0 && runs[i - 1].length < params.min_dwell) --i;
    const int onset = runs[i].start;
    if (onset > bounds.back()) bounds.push_back(onset);
  }
  std::vector<std::pair<int, int>> segments;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const int e = (i + 1 < bounds.size()) ? bounds[i + 1] - 1 : n - 1;
    segments.emplace_back(bounds[i], e);
  }
  return segments;
}

inline std::vector<std::pair<int, int>> segment_subtasks(const dataset::Demonstration& demo,
                                                         const FixationParams& params = {}) {
  std::vector<Vec3> gaze;
  gaze.reserve(demo.frames.size());
  for (const auto& f : demo.frames) gaze.push_back(f.gaze_3d);
  return segment_gaze(gaze, params);
}

// ---------------------------------------------------------------------------
// Probe h and predictivity.

struct ProbeConfig {
  predictors::RegressorSpec spec{"knn", 2, 1e-3};
  int resolution = 8;
  double crop_side = kDefaultCropSide;
};

/// 14-D bimanual action (left, right).
inline VectorXd action_vector(const BimanualDelta& a) {
  VectorXd v(2 * kPoseDim);
  v << a.left.to_vector(), a.right.to_vector();
  return v;
}

/// Per-frame probe features: gaze-cloud occupancy at the recorded gaze.
inline MatrixXd probe_features(const dataset::Demonstration& demo, const ProbeConfig& cfg = {}) {
  std::vector<VectorXd> rows;
  rows.reserve(demo.frames.size());
  for (const auto& f : demo.frames)
    rows.push_back(
        predictors::featurize(crop_gaze_cube(f.cloud, f.gaze_3d, cfg.crop_side), cfg.resolution)
            .vector());
  return predictors::stack_rows(rows);
}

inline MatrixXd demo_actions(const dataset::Demonstration& demo) {
  std::vector<VectorXd> rows;
  rows.reserve(demo.frames.size());
  for (const auto& f : demo.frames) rows.push_back(action_vector(f.expert_action));
  return predictors::stack_rows(rows);
}

/// Features and action targets of one demo, precomputed so the probe can be
/// trained without keeping point clouds in memory.
struct ProbeData {
  MatrixXd features;
  MatrixXd actions;
};

inline ProbeData probe_data(const dataset::Demonstration& demo, const ProbeConfig& cfg = {}) {
  return {probe_features(demo, cfg), demo_actions(demo)};
}

/// Fits h on every frame of every demo.
inline std::unique_ptr<predictors::Regressor> train_bottleneck_probe(
    const std::vector<ProbeData>& data, const ProbeConfig& cfg = {}) {
  Eigen::Index rows = 0;
  for (const auto& d : data) rows += d.features.rows();
  if (data.empty() || rows == 0) throw Error("empty training set");
  const Eigen::Index fx = data.front().features.cols();
  const Eigen::Index fy = data.front().actions.cols();
  MatrixXd x(rows, fx), y(rows, fy);
  Eigen::Index r = 0;
  for (const auto& d : data) {
    x.middleRows(r, d.features.rows()) = d.features;
    y.middleRows(r, d.actions.rows()) = d.actions;
    r += d.features.rows();
  }
  auto h = cfg.spec.make();
  h->fit(x, y);
  return h;
}

/// loss_t = |a_t - h(x_t)|^2.
inline std::vector<double> predictivity(const ProbeData& d, const predictors::Regressor& h) {
  if (!h.fitted()) throw Error("predict called before fit");
  std::vector<double> loss(static_cast<std::size_t>(d.features.rows()));
  for (Eigen::Index t = 0; t < d.features.rows(); ++t)
    loss[static_cast<std::size_t>(t)] =
        (d.actions.row(t).transpose() - h.predict(d.features.row(t).transpose())).squaredNorm();
  return loss;
}

struct BottleneckResult {
  int b = 0;              // offset within the segment
  double median = 0.0;
  bool fallback = false;  // no sustained sub-median run existed
  std::vector<double> smoothed;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty sequence");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Centered moving average of width w, truncated at the ends.
inline std::vector<double> moving_average(const std::vector<double>& x, int w) {
  const int n = static_cast<int>(x.size());
  const int lo = (w - 1) / 2;
  const int hi = w - 1 - lo;
  std::vector<double> out(x.size());
  for (int t = 0; t < n; ++t) {
    const int a = std::max(0, t - lo);
    const int b = std::min(n - 1, t + hi);
    double s = 0.0;
    for (int u = a; u <= b; ++u) s += x[static_cast<std::size_t>(u)];
    out[static_cast<std::size_t>(t)] = s / (b - a + 1);
  }
  return out;
}

/// Earliest step starting `w` consecutive smoothed losses below the segment
/// median; falls back to the smoothed argmin.
inline BottleneckResult detect_bottleneck(const std::vector<double>& segment_loss, int w = 3) {
  if (w < 1) throw Error("smoothing window must be >= 1");
  if (static_cast<int>(segment_loss.size()) < 2 * w)
    throw Error("segment below minimum length");
  BottleneckResult r;
  r.median = median_of(segment_loss);
  r.smoothed = moving_average(segment_loss, w);
  const int n = static_cast<int>(r.smoothed.size());
  for (int t = 0; t + w <= n; ++t) {
    bool below = true;
    for (int u = t; u < t + w && below; ++u) below = r.smoothed[static_cast<std::size_t>(u)] < r.median;
    if (below) {
      r.b = t;
      return r;
    }
  }
  r.fallback = true;
  r.b = static_cast<int>(std::min_element(r.smoothed.begin(), r.smoothed.end()) -
                         r.smoothed.begin());
  return r;
}

struct SegmentParams {
  FixationParams fixation;
  int window = 3;
};

/// Segments one demo and places a bottleneck in each sub-task.
inline dataset::SegmentAnnotation annotate(const dataset::Demonstration& demo,
                                           const std::vector<double>& loss,
                                           const SegmentParams& params = {},
                                           std::vector<BottleneckResult>* details = nullptr) {
  if (loss.size() != demo.frames.size()) throw Error("loss trace length mismatch");
  dataset::SegmentAnnotation ann;
  for (const auto& [s, e] : segment_subtasks(demo, params.fixation)) {
    const std::vector<double> part(loss.begin() + s, loss.begin() + e + 1);
    BottleneckResult r = detect_bottleneck(part, params.window);
    ann.segments.push_back({s, e, s + r.b});
    if (details != nullptr) details->push_back(std::move(r));
  }
  ann.validate(demo.last_step());
  return ann;
}

}  // namespace gazebot::segmentation
