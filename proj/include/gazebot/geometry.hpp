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
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gazebot/error.hpp"

namespace gazebot {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

// Vector-space dimension of one arm's pose chart: 3 position, 3 rotation
// vector, 1 gripper.
inline constexpr int kPoseDim = 7;
using Vec7 = Eigen::Matrix<double, kPoseDim, 1>;

struct GripperLimits {
  double max = 1.0;  // radians, fully open
};

/// One end-effector configuration. Orientation is (w,x,y,z); the identity
/// orientation is the canonical top-down grasp.
struct Pose7 {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double gripper = 0.0;

  Pose7() = default;
  Pose7(const Vec3& p, const Quat& q, double g) : position(p), orientation(q), gripper(g) {}

  bool operator==(const Pose7& o) const {
    return position == o.position && orientation.coeffs() == o.orientation.coeffs() &&
           gripper == o.gripper;
  }
};

/// Relative pose: world-axis translation, rotation vector applied on the
/// right of the base orientation, and a gripper increment.
struct PoseDelta7 {
  Vec3 dpos = Vec3::Zero();
  Vec3 drot = Vec3::Zero();
  double dgrip = 0.0;

  PoseDelta7() = default;
  PoseDelta7(const Vec3& p, const Vec3& r, double g) : dpos(p), drot(r), dgrip(g) {}

  static PoseDelta7 from_vector(const Vec7& v) {
    return {v.head<3>(), v.segment<3>(3), v[6]};
  }
  Vec7 to_vector() const {
    Vec7 v;
    v << dpos, drot, dgrip;
    return v;
  }
  bool operator==(const PoseDelta7& o) const {
    return dpos == o.dpos && drot == o.drot && dgrip == o.dgrip;
  }
};

/// Actions for the (left, right) arms.
struct BimanualDelta {
  PoseDelta7 left;
  PoseDelta7 right;
  bool operator==(const BimanualDelta& o) const { return left == o.left && right == o.right; }
};

enum class Arm { kLeft = 0, kRight = 1 };

inline const char* arm_name(Arm a) { return a == Arm::kLeft ? "left" : "right"; }

// ---------------------------------------------------------------------------
// SO(3) helpers on unit quaternions.

/// Quaternion exponential of a rotation vector. exp(0) is the exact identity.
inline Quat quat_exp(const Vec3& rotvec) {
  const double theta = rotvec.norm();
  if (theta == 0.0) return Quat::Identity();
  if (theta < 1e-8) {
    // Second-order series keeps the result accurate near zero.
    const double w = 1.0 - theta * theta / 8.0;
    const Vec3 xyz = rotvec * (0.5 - theta * theta / 48.0);
    Quat q(w, xyz.x(), xyz.y(), xyz.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * theta;
  const Vec3 xyz = rotvec * (std::sin(half) / theta);
  return Quat(std::cos(half), xyz.x(), xyz.y(), xyz.z());
}

/// Rotation vector of q on the principal chart (angle in [0, pi]).
inline Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 xyz = q.vec();
  const double n = xyz.norm();
  if (n == 0.0) return Vec3::Zero();
  const double theta = 2.0 * std::atan2(n, q.w());
  return xyz * (theta / n);
}

/// Geodesic angle between two orientations, in [0, pi].
inline double rotation_distance(const Quat& a, const Quat& b) {
  return quat_log(a.conjugate() * b).norm();
}

// ---------------------------------------------------------------------------
// Pose algebra.

/// base ⊕ delta without gripper clamping; used for chart points (control
/// poses) that are not physical configurations.
inline Pose7 offset_pose(const Pose7& base, const PoseDelta7& delta) {
  Quat q = base.orientation * quat_exp(delta.drot);
  q.normalize();
  return {base.position + delta.dpos, q, base.gripper + delta.dgrip};
}

/// Applies a relative action. Position deltas are in world axes anchored at
/// the current end-effector; the gripper is clamped to [0, limits.max].
/// `clamped` is set when clamping changed the gripper value.
inline Pose7 compose(const Pose7& base, const PoseDelta7& delta, const GripperLimits& limits = {},
                     bool* clamped = nullptr) {
  Pose7 out = offset_pose(base, delta);
  const double g = std::clamp(out.gripper, 0.0, limits.max);
  if (clamped != nullptr) *clamped = (g != out.gripper);
  out.gripper = g;
  return out;
}

/// Inverse of compose: the delta taking `from` to `to`.
inline PoseDelta7 delta_between(const Pose7& from, const Pose7& to) {
  Quat rel = from.orientation.conjugate() * to.orientation;
  rel.normalize();
  if (std::abs(rel.w()) < 1e-12) throw Error("antipodal rotation");
  return {to.position - from.position, quat_log(rel), to.gripper - from.gripper};
}

/// Pose as a 7-vector in the chart anchored at `anchor`: absolute position,
/// rotation vector relative to the anchor orientation, absolute gripper.
inline Vec7 to_chart(const Pose7& anchor, const Pose7& p) {
  Vec7 v;
  v << p.position, quat_log(anchor.orientation.conjugate() * p.orientation), p.gripper;
  return v;
}

inline Pose7 from_chart(const Pose7& anchor, const Vec7& v) {
  Quat q = anchor.orientation * quat_exp(v.segment<3>(3));
  q.normalize();
  return {v.head<3>(), q, v[6]};
}

/// Flat 7-vector of an absolute pose (position, rotation vector, gripper),
/// used as regression input.
inline Vec7 pose_features(const Pose7& p) {
  Vec7 v;
  v << p.position, quat_log(p.orientation), p.gripper;
  return v;
}

// ---------------------------------------------------------------------------
// Point clouds.

struct PointCloud {
  std::vector<Vec3> points;
  // Object id per point (simulator metadata). Empty, or one per point.
  std::vector<int> labels;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_labels() const { return !labels.empty(); }

  bool operator==(const PointCloud& o) const { return points == o.points && labels == o.labels; }
};

inline PointCloud translated(const PointCloud& c, const Vec3& v) {
  PointCloud out = c;
  for (auto& p : out.points) p += v;
  return out;
}

/// Points inside the gaze cube, expressed relative to the gaze point with
/// world-parallel axes.
struct GazeCloud {
  std::vector<Vec3> points;
  Vec3 source_gaze = Vec3::Zero();
  double side = 0.20;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

inline constexpr double kDefaultCropSide = 0.20;

/// Closed max-norm cube of edge `side` around `gaze`; input order is kept.
inline GazeCloud crop_gaze_cube(const PointCloud& cloud, const Vec3& gaze,
                                double side = kDefaultCropSide) {
  if (!(side > 0.0)) throw Error("crop side must be positive");
  const double half = 0.5 * side;
  GazeCloud out;
  out.source_gaze = gaze;
  out.side = side;
  for (const Vec3& p : cloud.points) {
    const Vec3 d = p - gaze;
    if (d.cwiseAbs().maxCoeff() <= half) out.points.push_back(d);
  }
  return out;
}

/// Re-crops an already gaze-centered cloud (same gaze, possibly smaller side).
inline GazeCloud recrop(const GazeCloud& g, double side) {
  if (!(side > 0.0)) throw Error("crop side must be positive");
  GazeCloud out;
  out.source_gaze = g.source_gaze;
  out.side = side;
  for (const Vec3& d : g.points)
    if (d.cwiseAbs().maxCoeff() <= 0.5 * side) out.points.push_back(d);
  return out;
}

// ---------------------------------------------------------------------------
// Pinhole camera. Camera frame: z forward, x right, y down.

struct CameraModel {
  double fx = 320.0;
  double fy = 320.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();  // camera-to-world

  /// Camera at `eye` looking at `target`, with image "up" roughly along +z.
  static CameraModel look_at(const Vec3& eye, const Vec3& target) {
    CameraModel cam;
    const Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(Vec3::UnitZ());
    if (x.norm() < 1e-9) x = Vec3::UnitX();
    x.normalize();
    const Vec3 y = z.cross(x);
    Eigen::Matrix3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    cam.pose = Eigen::Isometry3d::Identity();
    cam.pose.linear() = r;
    cam.pose.translation() = eye;
    return cam;
  }
};

inline Vec3 backproject(const Vec2& pixel, double depth, const CameraModel& cam) {
  if (!(depth > 0.0)) throw Error("invalid depth");
  const Vec3 pc((pixel.x() - cam.cx) * depth / cam.fx, (pixel.y() - cam.cy) * depth / cam.fy,
                depth);
  return cam.pose * pc;
}

struct Projection {
  Vec2 pixel;
  double depth;
};

/// World point to (pixel, depth). Points behind the camera get depth <= 0.
inline Projection project(const Vec3& world, const CameraModel& cam) {
  const Vec3 pc = cam.pose.inverse() * world;
  if (pc.z() <= 0.0) return {Vec2::Zero(), pc.z()};
  return {Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy), pc.z()};
}

}  // namespace gazebot
