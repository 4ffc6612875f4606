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

#include <cmath>
#include <utility>
#include <vector>

#include "gazebot/geometry.hpp"

// Reaching curves with two endpoints and a single control point
// (B(s) = (1-s)^2 P0 + 2s(1-s) C + s^2 P1), evaluated in the 7-D pose chart
// anchored at the start pose.
namespace gazebot::bezier {

struct BezierReach {
  Pose7 start;
  Pose7 end;  // bottleneck pose
  // Displacement from the start/end mean pose to the control pose.
  PoseDelta7 bezier_vector;
};

/// Componentwise mean of two poses; the orientation is the geodesic midpoint.
inline Pose7 mean_pose(const Pose7& a, const Pose7& b) {
  const Vec3 half_rot = 0.5 * quat_log(a.orientation.conjugate() * b.orientation);
  Quat q = a.orientation * quat_exp(half_rot);
  q.normalize();
  return {0.5 * (a.position + b.position), q, 0.5 * (a.gripper + b.gripper)};
}

inline Pose7 control_pose(const BezierReach& reach) {
  return offset_pose(mean_pose(reach.start, reach.end), reach.bezier_vector);
}

inline Pose7 eval(const BezierReach& reach, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw Error("parameter out of range");
  if (s == 0.0) return reach.start;
  const Vec7 x0 = to_chart(reach.start, reach.start);
  const Vec7 xc = to_chart(reach.start, control_pose(reach));
  const Vec7 x1 = to_chart(reach.start, reach.end);
  const double u = 1.0 - s;
  const Vec7 x = u * u * x0 + 2.0 * s * u * xc + s * s * x1;
  return from_chart(reach.start, x);
}

/// s_i = (t_i - t_0) / (t_N - t_0).
inline std::vector<double> parameterize(const std::vector<double>& timestamps) {
  if (timestamps.size() < 2) throw Error("at least two timestamps required");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      throw Error("timestamps must be strictly increasing (duplicate or reversed at index " +
                  std::to_string(i) + ")");
  const double t0 = timestamps.front();
  const double span = timestamps.back() - t0;
  std::vector<double> s(timestamps.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = (timestamps[i] - t0) / span;
  s.front() = 0.0;
  s.back() = 1.0;
  return s;
}

using Sample = std::pair<double, Pose7>;

struct FitResult {
  PoseDelta7 bezier_vector;
  double rms = 0.0;  // residual RMS over all samples, chart units
};

/// Least-squares control point for samples (s_i, x_i); the endpoints are the
/// first and last samples. B is linear in the control point, so each chart
/// coordinate has the closed form
///   C = sum w_i (x_i - (1-s_i)^2 P0 - s_i^2 P1) / sum w_i^2,  w_i = 2 s_i (1-s_i).
inline FitResult fit(const std::vector<Sample>& trajectory) {
  if (trajectory.size() < 3) throw Error("fit requires at least 3 samples");
  if (trajectory.front().first != 0.0 || trajectory.back().first != 1.0)
    throw Error("fit requires s_0 = 0 and s_last = 1");
  const Pose7& start = trajectory.front().second;
  const Pose7& end = trajectory.back().second;
  const Vec7 x0 = to_chart(start, start);
  const Vec7 x1 = to_chart(start, end);

  Vec7 num = Vec7::Zero();
  double den = 0.0;
  for (const auto& [s, pose] : trajectory) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error("parameter out of range");
    const double u = 1.0 - s;
    const double w = 2.0 * s * u;
    num += w * (to_chart(start, pose) - u * u * x0 - s * s * x1);
    den += w * w;
  }
  if (den == 0.0) throw Error("underdetermined fit");
  const Vec7 xc = num / den;

  double sq = 0.0;
  for (const auto& [s, pose] : trajectory) {
    const double u = 1.0 - s;
    sq += (u * u * x0 + 2.0 * s * u * xc + s * s * x1 - to_chart(start, pose)).squaredNorm();
  }

  FitResult out;
  out.bezier_vector = delta_between(mean_pose(start, end), from_chart(start, xc));
  out.rms = std::sqrt(sq / static_cast<double>(trajectory.size()));
  return out;
}

/// Number of executor steps for a reach at `speed` (m/s) and `dt` (s).
inline int steps_for_chord(double chord, double speed, double dt) {
  const double step = speed * dt;
  return std::max(1, static_cast<int>(std::ceil(chord / step - 1e-9)));
}

}  // namespace gazebot::bezier
