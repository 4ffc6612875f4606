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
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gazebot/bezier.hpp"
#include "gazebot/dataset.hpp"
#include "gazebot/geometry.hpp"

// Deterministic kinematic tabletop: two free-flying grippers, rigid boxes,
// grasp/settle rules, and a point-cloud renderer.
namespace gazebot::sim {

inline constexpr double kDt = 0.1;  // 10 Hz

/// Stateless seed mixing (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Rect {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;

  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  bool valid() const { return x1 > x0 && y1 > y0; }
  Rect shifted(const Vec3& v) const { return {x0 + v.x(), x1 + v.x(), y0 + v.y(), y1 + v.y()}; }
  Rect inflated(double m) const { return {x0 - m, x1 + m, y0 - m, y1 + m}; }
  /// L-infinity distance from (x, y) to the rectangle (0 inside).
  double linf_distance(double x, double y) const {
    const double dx = std::max({x0 - x, 0.0, x - x1});
    const double dy = std::max({y0 - y, 0.0, y - y1});
    return std::max(dx, dy);
  }
};

struct BoxObject {
  int id = 0;
  std::string color;
  Vec3 size = Vec3::Constant(0.04);
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;
  int supported_by = -1;  // object id, or -1 for the table

  double top() const { return center.z() + 0.5 * size.z(); }
  double bottom() const { return center.z() - 0.5 * size.z(); }
  Vec3 grasp_point() const { return {center.x(), center.y(), top()}; }
};

/// Rigid link from a gripper to the object it holds, in the gripper frame.
struct Attachment {
  int object = -1;
  Vec3 offset = Vec3::Zero();
  double yaw_offset = 0.0;
};

inline constexpr int kTableLabel = 0;
inline constexpr int kRedId = 1;
inline constexpr int kGreenId = 2;
inline constexpr int kLeftGripperLabel = 3;
inline constexpr int kRightGripperLabel = 4;

struct GraspParams {
  double radius = 0.03;    // r_g
  double close_below = 0.5;
  double open_above = 0.6;
  GripperLimits limits{1.0};
};

struct World {
  Rect table;
  double table_height = 0.0;
  Vec3 workspace_lo = Vec3::Zero();
  Vec3 workspace_hi = Vec3::Zero();
  std::vector<BoxObject> objects;
  std::array<Pose7, 2> arms;
  std::array<Attachment, 2> attached;
  bool red_lifted = false;  // episode history for the Lifted flag
  int steps = 0;
  int clamp_events = 0;
  std::uint64_t seed = 0;

  const Pose7& arm(Arm a) const { return arms[static_cast<std::size_t>(a)]; }
  Pose7& arm(Arm a) { return arms[static_cast<std::size_t>(a)]; }

  const BoxObject* object(int id) const {
    for (const auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }
  BoxObject* object(int id) {
    for (auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }
  int holder_of(int id) const {
    for (int a = 0; a < 2; ++a)
      if (attached[static_cast<std::size_t>(a)].object == id) return a;
    return -1;
  }
};

inline double yaw_of(const Quat& q) {
  const Vec3 x = q * Vec3::UnitX();
  return std::atan2(x.y(), x.x());
}

inline Quat yaw_quat(double yaw) { return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())); }

// ---------------------------------------------------------------------------
// Scenario specification.

enum class Condition { kID, kOODObject, kOODArm, kOODBoth };

inline const char* condition_name(Condition c) {
  switch (c) {
    case Condition::kID: return "ID";
    case Condition::kOODObject: return "OOD-object";
    case Condition::kOODArm: return "OOD-arm";
    case Condition::kOODBoth: return "OOD-both";
  }
  return "?";
}

inline Condition parse_condition(const std::string& s) {
  if (s == "ID") return Condition::kID;
  if (s == "OOD-object") return Condition::kOODObject;
  if (s == "OOD-arm") return Condition::kOODArm;
  if (s == "OOD-both") return Condition::kOODBoth;
  throw Error("unknown condition '" + s + "'");
}

/// Initial pose range of one arm: box of positions, yaw band, open gripper.
struct ArmRange {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Constant(0.04);
  double yaw_center = 0.0;
  double yaw_half = 0.2;
};

struct ScenarioSpec {
  std::string id = "pilebox-default";
  Vec3 origin = Vec3::Zero();  // translates every region, the table, and the camera
  Rect table{-0.45, 0.45, -0.30, 0.30};
  double table_height = 0.0;
  double workspace_top = 0.50;

  Vec3 red_size{0.04, 0.04, 0.04};
  Vec3 green_size{0.08, 0.08, 0.04};
  Rect red_id{-0.25, -0.15, -0.10, 0.10};  // 10 x 20 cm
  Rect green_id{0.10, 0.20, -0.05, 0.05};  // 10 cm square
  // OOD object positions lie in a band [min, max] (L-inf) outside the ID rect.
  double ood_object_min = 0.05;
  double ood_object_max = 0.12;
  double yaw_half = 0.10;

  ArmRange left_arm{Vec3(-0.32, -0.20, 0.26), Vec3(0.04, 0.04, 0.03), 0.0, 0.2};
  ArmRange right_arm{Vec3(0.32, -0.20, 0.26), Vec3(0.04, 0.04, 0.03), 0.0, 0.2};
  double ood_arm_min = 0.10;
  double ood_arm_max = 0.20;
  double ood_arm_min_height = 0.18;
  double gripper_open = 0.8;

  Vec3 camera_eye{0.0, -0.75, 0.65};
  Vec3 camera_target{0.0, 0.0, 0.0};
  GraspParams grasp;

  CameraModel camera() const {
    CameraModel cam = CameraModel::look_at(camera_eye + origin, camera_target + origin);
    cam.fx = cam.fy = 500.0;
    cam.cx = 320.0;
    cam.cy = 240.0;
    cam.width = 640;
    cam.height = 480;
    return cam;
  }

  /// Same scenario shifted by v (regions, table, arms, camera).
  ScenarioSpec translated(const Vec3& v) const {
    ScenarioSpec s = *this;
    s.origin += v;
    return s;
  }

  void validate() const {
    if (!table.valid() || !red_id.valid() || !green_id.valid())
      throw Error("scenario: invalid region");
    if (!(ood_object_min > 0.0 && ood_object_max > ood_object_min))
      throw Error("scenario: OOD object band must be positive and ordered");
    if (!(ood_arm_min > 0.0 && ood_arm_max > ood_arm_min))
      throw Error("scenario: OOD arm band must be positive and ordered");
  }
};

// ---------------------------------------------------------------------------

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline bool footprints_overlap(const BoxObject& a, const Vec3& c, const Vec3& size, double gap) {
  const double rx = 0.5 * (a.size.x() + size.x()) * std::sqrt(2.0) + gap;
  const double ry = 0.5 * (a.size.y() + size.y()) * std::sqrt(2.0) + gap;
  return std::abs(a.center.x() - c.x()) < rx && std::abs(a.center.y() - c.y()) < ry;
}

/// Uniform sample in the rectangle (ID) or in the L-inf band around it (OOD).
inline Vec3 sample_position(std::mt19937_64& rng, const Rect& id, bool ood, double band_min,
                            double band_max, const Rect& table, const Vec3& size) {
  const double margin = 0.5 * std::max(size.x(), size.y()) * std::sqrt(2.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    if (!ood) return {uniform(rng, id.x0, id.x1), uniform(rng, id.y0, id.y1), 0.0};
    const Rect outer = id.inflated(band_max);
    const double x = uniform(rng, outer.x0, outer.x1);
    const double y = uniform(rng, outer.y0, outer.y1);
    if (id.linf_distance(x, y) < band_min) continue;
    if (!table.inflated(-margin).contains(x, y)) continue;
    return {x, y, 0.0};
  }
  throw Error("cannot sample a position in the OOD band");
}

}  // namespace detail

/// Samples objects and arm poses for one episode.
inline World spawn(const ScenarioSpec& spec, Condition condition, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x5EED));
  const Vec3& o = spec.origin;
  World w;
  w.seed = seed;
  w.table = spec.table.shifted(o);
  w.table_height = spec.table_height + o.z();
  w.workspace_lo = Vec3(w.table.x0 - 0.05, w.table.y0 - 0.10, w.table_height - 0.01);
  w.workspace_hi = Vec3(w.table.x1 + 0.05, w.table.y1 + 0.10, w.table_height + spec.workspace_top);

  const bool ood_obj = condition == Condition::kOODObject || condition == Condition::kOODBoth;
  const bool ood_arm = condition == Condition::kOODArm || condition == Condition::kOODBoth;

  struct Item {
    int id;
    const char* color;
    Vec3 size;
    Rect region;
  };
  const Item items[2] = {{kRedId, "red", spec.red_size, spec.red_id.shifted(o)},
                         {kGreenId, "green", spec.green_size, spec.green_id.shifted(o)}};
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    w.objects.clear();
    placed = true;
    for (const Item& it : items) {
      Vec3 c = detail::sample_position(rng, it.region, ood_obj, spec.ood_object_min,
                                       spec.ood_object_max, w.table, it.size);
      c.z() = w.table_height + 0.5 * it.size.z();
      const double yaw = detail::uniform(rng, -spec.yaw_half, spec.yaw_half);
      for (const auto& other : w.objects)
        if (detail::footprints_overlap(other, c, it.size, 0.02)) placed = false;
      w.objects.push_back({it.id, it.color, it.size, c, yaw, -1});
    }
  }
  if (!placed) throw Error("overlapping object placements after 100 rejection samples");

  const ArmRange* ranges[2] = {&spec.left_arm, &spec.right_arm};
  for (int a = 0; a < 2; ++a) {
    const ArmRange& r = *ranges[a];
    const Vec3 c = r.center + o;
    Vec3 p;
    if (!ood_arm) {
      for (int i = 0; i < 3; ++i) p[i] = detail::uniform(rng, c[i] - r.half[i], c[i] + r.half[i]);
    } else {
      bool ok = false;
      for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
        for (int i = 0; i < 3; ++i)
          p[i] = detail::uniform(rng, c[i] - r.half[i] - spec.ood_arm_max,
                                 c[i] + r.half[i] + spec.ood_arm_max);
        const Vec3 excess = ((p - c).cwiseAbs() - r.half).cwiseMax(0.0);
        const double dist = excess.maxCoeff();
        ok = dist >= spec.ood_arm_min && dist <= spec.ood_arm_max &&
             p.z() >= w.table_height + spec.ood_arm_min_height &&
             p.z() <= w.workspace_hi.z() - 0.02 && p.x() >= w.workspace_lo.x() &&
             p.x() <= w.workspace_hi.x() && p.y() >= w.workspace_lo.y() &&
             p.y() <= w.workspace_hi.y();
        for (const auto& obj : w.objects)
          if ((p.head<2>() - obj.center.head<2>()).norm() < 0.12) ok = false;
      }
      if (!ok) throw Error("cannot sample an OOD arm pose");
    }
    const double yaw = detail::uniform(rng, r.yaw_center - r.yaw_half, r.yaw_center + r.yaw_half);
    w.arms[static_cast<std::size_t>(a)] = Pose7(p, yaw_quat(yaw), spec.gripper_open);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Stepping.

struct StepLog {
  bool attached = false;
  bool released = false;
  bool clamped = false;
};

namespace detail {

inline void carry(World& w, int arm_index) {
  const Attachment& at = w.attached[static_cast<std::size_t>(arm_index)];
  if (at.object < 0) return;
  BoxObject* obj = w.object(at.object);
  const Pose7& ee = w.arms[static_cast<std::size_t>(arm_index)];
  const double ee_yaw = yaw_of(ee.orientation);
  obj->center = ee.position + yaw_quat(ee_yaw) * at.offset;
  obj->yaw = ee_yaw + at.yaw_offset;
  obj->supported_by = -1;
}

/// Drops an object straight down onto the highest support whose top
/// (axis-aligned footprint) covers at least half of the object's footprint.
inline void settle(World& w, BoxObject& obj) {
  double rest = w.table_height;
  int support = -1;
  const double area = obj.size.x() * obj.size.y();
  for (const auto& other : w.objects) {
    if (other.id == obj.id || w.holder_of(other.id) >= 0) continue;
    if (other.top() > obj.center.z()) continue;
    const double ox = std::max(0.0, std::min(obj.center.x() + 0.5 * obj.size.x(),
                                             other.center.x() + 0.5 * other.size.x()) -
                                        std::max(obj.center.x() - 0.5 * obj.size.x(),
                                                 other.center.x() - 0.5 * other.size.x()));
    const double oy = std::max(0.0, std::min(obj.center.y() + 0.5 * obj.size.y(),
                                             other.center.y() + 0.5 * other.size.y()) -
                                        std::max(obj.center.y() - 0.5 * obj.size.y(),
                                                 other.center.y() - 0.5 * other.size.y()));
    if (ox * oy >= 0.5 * area && other.top() > rest) {
      rest = other.top();
      support = other.id;
    }
  }
  obj.center.z() = rest + 0.5 * obj.size.z();
  obj.supported_by = support;
}

}  // namespace detail

/// Applies one bimanual action: arms move by compose, then grasp/release
/// rules run and held objects follow their grippers.
inline World step(const World& in, const BimanualDelta& action, const GraspParams& grasp = {},
                  StepLog* log = nullptr) {
  World w = in;
  StepLog local;
  const PoseDelta7* deltas[2] = {&action.left, &action.right};
  for (int a = 0; a < 2; ++a) {
    Pose7& ee = w.arms[static_cast<std::size_t>(a)];
    const double g_before = ee.gripper;
    bool clamped = false;
    ee = compose(ee, *deltas[a], grasp.limits, &clamped);
    const Vec3 p = ee.position.cwiseMax(w.workspace_lo).cwiseMin(w.workspace_hi);
    if (p != ee.position || clamped) {
      ee.position = p;
      local.clamped = true;
      ++w.clamp_events;
    }
    Attachment& at = w.attached[static_cast<std::size_t>(a)];
    if (at.object < 0 && g_before >= grasp.close_below && ee.gripper < grasp.close_below) {
      // Closing: grab the nearest free object within the grasp radius.
      double best = grasp.radius;
      int best_id = -1;
      for (const auto& obj : w.objects) {
        if (w.holder_of(obj.id) >= 0) continue;
        const double d = (obj.grasp_point() - ee.position).norm();
        if (d <= best) {
          best = d;
          best_id = obj.id;
        }
      }
      if (best_id >= 0) {
        const BoxObject* obj = w.object(best_id);
        const double ee_yaw = yaw_of(ee.orientation);
        at.object = best_id;
        at.offset = yaw_quat(-ee_yaw) * (obj->center - ee.position);
        at.yaw_offset = obj->yaw - ee_yaw;
        local.attached = true;
      }
    } else if (at.object >= 0 && ee.gripper > grasp.open_above) {
      const int id = at.object;
      at = Attachment{};
      detail::settle(w, *w.object(id));
      local.released = true;
    }
    detail::carry(w, a);
  }
  if (const BoxObject* red = w.object(kRedId); red != nullptr) {
    if (w.holder_of(kRedId) >= 0 && red->bottom() >= w.table_height + 0.05) w.red_lifted = true;
  }
  ++w.steps;
  if (log != nullptr) *log = local;
  return w;
}

struct SuccessFlags {
  bool lifted = false;
  bool pile = false;
};

/// Lifted: the red box was held at least 5 cm above the table at some step.
/// Pile: the red box rests on the green box within 25% of its width.
inline SuccessFlags success(const World& w) {
  SuccessFlags f;
  f.lifted = w.red_lifted;
  const BoxObject* red = w.object(kRedId);
  const BoxObject* green = w.object(kGreenId);
  if (red != nullptr && green != nullptr && w.holder_of(kRedId) < 0 &&
      red->supported_by == kGreenId) {
    const double off = (red->center.head<2>() - green->center.head<2>()).norm();
    f.pile = off <= 0.25 * green->size.x();
  }
  return f;
}

// ---------------------------------------------------------------------------
// Rendering.

struct RenderParams {
  int n_points = 8000;
  double noise_sigma = 0.0;
  int zbuffer_bin = 6;        // image pixels per depth-buffer cell
  double zbuffer_tol = 0.015;  // meters behind the nearest surface still kept
  bool labels = true;
};

namespace detail {

/// Oriented rectangle patch: origin corner, two edge vectors, outward normal.
struct Patch {
  Vec3 origin;
  Vec3 eu;
  Vec3 ev;
  Vec3 normal;
  int label;
};

/// Five faces (no bottom) of a box with yaw about z.
inline void box_patches(std::vector<Patch>& out, const Vec3& center, const Vec3& size,
                        const Eigen::Matrix3d& rot, int label, bool with_bottom = false) {
  const Vec3 h = 0.5 * size;
  const Vec3 ax = rot.col(0) * size.x(), ay = rot.col(1) * size.y(), az = rot.col(2) * size.z();
  const Vec3 corner = center - rot * h;
  // +z / -z
  out.push_back({corner + az, ax, ay, rot.col(2), label});
  if (with_bottom) out.push_back({corner, ay, ax, -rot.col(2), label});
  // -y / +y
  out.push_back({corner, ax, az, -rot.col(1), label});
  out.push_back({corner + ay, az, ax, rot.col(1), label});
  // -x / +x
  out.push_back({corner, az, ay, -rot.col(0), label});
  out.push_back({corner + ax, ay, az, rot.col(0), label});
}

/// Gripper geometry in the end-effector frame (identity = pointing down):
/// two fingers below a palm and a wrist column above it.
inline void gripper_patches(std::vector<Patch>& out, const Pose7& ee, int label) {
  const Eigen::Matrix3d r = ee.orientation.toRotationMatrix();
  const double half_open = 0.08 * std::clamp(ee.gripper, 0.0, 1.0) + 0.005;
  const Vec3 finger(0.01, 0.02, 0.04);
  for (double side : {-1.0, 1.0})
    box_patches(out, ee.position + r * Vec3(side * half_open, 0.0, 0.02), finger, r, label, true);
  box_patches(out, ee.position + r * Vec3(0.0, 0.0, 0.0475), Vec3(0.16, 0.03, 0.015), r, label,
              true);
  box_patches(out, ee.position + r * Vec3(0.0, 0.0, 0.105), Vec3(0.03, 0.03, 0.10), r, label);
}

}  // namespace detail

/// Samples camera-facing surfaces on a stratified jittered lattice (anchored
/// to each surface), adds noise, then removes points hidden behind nearer
/// surfaces with a coarse depth buffer.
inline PointCloud render(const World& w, const CameraModel& cam, const RenderParams& params,
                         std::uint64_t seed) {
  if (params.n_points <= 0) throw Error("n_points must be positive");
  std::vector<detail::Patch> patches;
  {
    const Vec3 c(w.table.x0, w.table.y0, w.table_height);
    patches.push_back({c, Vec3(w.table.x1 - w.table.x0, 0, 0), Vec3(0, w.table.y1 - w.table.y0, 0),
                       Vec3::UnitZ(), kTableLabel});
  }
  for (const auto& obj : w.objects)
    detail::box_patches(patches, obj.center, obj.size,
                        Eigen::AngleAxisd(obj.yaw, Vec3::UnitZ()).toRotationMatrix(), obj.id);
  detail::gripper_patches(patches, w.arms[0], kLeftGripperLabel);
  detail::gripper_patches(patches, w.arms[1], kRightGripperLabel);

  const Vec3 eye = cam.pose.translation();
  double area = 0.0;
  std::vector<char> facing(patches.size(), 0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& pt = patches[i];
    const Vec3 mid = pt.origin + 0.5 * (pt.eu + pt.ev);
    if (pt.normal.dot(eye - mid) > 0.0) {
      facing[i] = 1;
      area += pt.eu.cross(pt.ev).norm();
    }
  }
  const double spacing = std::sqrt(area / params.n_points);

  std::vector<Vec3> cand;
  std::vector<int> cand_label;
  cand.reserve(static_cast<std::size_t>(params.n_points) * 11 / 10);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (!facing[i]) continue;
    const auto& pt = patches[i];
    std::mt19937_64 rng(mix_seed(seed, i));
    const int nu = std::max(1, static_cast<int>(std::lround(pt.eu.norm() / spacing)));
    const int nv = std::max(1, static_cast<int>(std::lround(pt.ev.norm() / spacing)));
    for (int a = 0; a < nu; ++a)
      for (int b = 0; b < nv; ++b) {
        const double u = (a + unit(rng)) / nu;
        const double v = (b + unit(rng)) / nv;
        Vec3 p = pt.origin + u * pt.eu + v * pt.ev;
        if (params.noise_sigma > 0.0)
          p += params.noise_sigma * Vec3(noise(rng), noise(rng), noise(rng));
        cand.push_back(p);
        cand_label.push_back(pt.label);
      }
  }

  // Depth buffer over coarse image cells.
  const int bw = (cam.width + params.zbuffer_bin - 1) / params.zbuffer_bin;
  const int bh = (cam.height + params.zbuffer_bin - 1) / params.zbuffer_bin;
  std::vector<double> zbuf(static_cast<std::size_t>(bw) * bh, 1e300);
  std::vector<int> cell(cand.size(), -1);
  std::vector<double> depth(cand.size(), 0.0);
  const Eigen::Isometry3d world_to_cam = cam.pose.inverse();
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const Vec3 pc = world_to_cam * cand[i];
    if (pc.z() <= 0.0) continue;
    const double u = cam.fx * pc.x() / pc.z() + cam.cx;
    const double v = cam.fy * pc.y() / pc.z() + cam.cy;
    if (u < 0.0 || v < 0.0 || u >= cam.width || v >= cam.height) continue;
    const int c = static_cast<int>(v / params.zbuffer_bin) * bw +
                  static_cast<int>(u / params.zbuffer_bin);
    cell[i] = c;
    depth[i] = pc.z();
    zbuf[static_cast<std::size_t>(c)] = std::min(zbuf[static_cast<std::size_t>(c)], pc.z());
  }
  PointCloud out;
  out.points.reserve(cand.size());
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cell[i] < 0) continue;
    if (depth[i] > zbuf[static_cast<std::size_t>(cell[i])] + params.zbuffer_tol) continue;
    out.points.push_back(cand[i]);
    if (params.labels) out.labels.push_back(cand_label[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted expert.

struct ExpertParams {
  double gaze_noise = 0.003;       // per-axis sigma, meters
  double waypoint_jitter = 0.04;   // sigma of the planted control-point jitter
  double speed = 0.35;             // nominal reach speed, m/s
  double speed_jitter = 0.30;      // relative
  double reach_tremor = 0.012;     // per-axis sigma on intermediate reach waypoints
  double arc = 0.15;               // control-point lift per meter of chord
  double pregrasp_height = 0.05;   // pick bottleneck above the red box top
  double preplace_height = 0.071;  // place bottleneck: red bottom above green top
  double closed_gripper = 0.4;
  int pick_descend_steps = 3;
  int place_descend_steps = 4;
  int gripper_steps = 3;
  int prelift_steps = 3;
  int retreat_steps = 3;
  int saccade_frames = 1;
  RenderParams render;
};

/// Canonical bottleneck poses of the PileBox script.
inline Pose7 pick_bottleneck(const World& w, const ExpertParams& ep, double gripper_open) {
  const BoxObject* red = w.object(kRedId);
  return Pose7(red->grasp_point() + Vec3(0, 0, ep.pregrasp_height), Quat::Identity(),
               gripper_open);
}

inline Pose7 place_bottleneck(const World& w, const ExpertParams& ep, double gripper) {
  const BoxObject* red = w.object(kRedId);
  const BoxObject* green = w.object(kGreenId);
  return Pose7(Vec3(green->center.x(), green->center.y(),
                    green->top() + red->size.z() + ep.preplace_height),
               Quat::Identity(), gripper);
}

/// Generates a two-sub-task PileBox demonstration with the left arm: reach
/// along a planted curve to the pre-grasp bottleneck, descend, close,
/// pre-lift; then saccade to the green box, carry to the pre-place bottleneck,
/// descend, open, retreat. Gaze follows the current sub-task's target box.
inline dataset::Demonstration scripted_expert(const World& start, const ScenarioSpec& spec,
                                              const ExpertParams& ep, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xE7BE27));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const CameraModel cam = spec.camera();
  const double g_open = spec.gripper_open;

  std::vector<Pose7> left_targets;  // left_targets[t]: pose after action t
  std::vector<int> gaze_target;     // object fixated at frame t (-1: saccade midpoint)
  dataset::DemoMeta meta;
  meta.seed = seed;
  meta.scenario = spec.id;

  World w = start;
  Pose7 cur = w.arm(Arm::kLeft);
  auto push = [&](const Pose7& p, int gaze) {
    left_targets.push_back(p);
    gaze_target.push_back(gaze);
    cur = p;
  };
  auto frame_count = [&] { return static_cast<int>(left_targets.size()); };
  auto planted_reach = [&](const Pose7& to, dataset::SubtaskTruth& truth, int gaze_id,
                           int saccade_frames) {
    const Pose7 from = cur;
    const double chord = (to.position - from.position).norm();
    PoseDelta7 v;
    v.dpos = Vec3(ep.waypoint_jitter * gauss(rng), ep.waypoint_jitter * gauss(rng),
                  ep.arc * chord + ep.waypoint_jitter * gauss(rng));
    truth.bezier_vector = v;
    const double speed =
        ep.speed * (1.0 + ep.speed_jitter * (2.0 * detail::uniform(rng, 0, 1) - 1.0));
    const int n = std::max(3, bezier::steps_for_chord(chord * (1.0 + ep.arc), speed, kDt));
    const bezier::BezierReach reach{from, to, v};
    for (int i = 1; i <= n; ++i) {
      Pose7 p = to;
      if (i < n) {
        p = bezier::eval(reach, static_cast<double>(i) / n);
        p.position += ep.reach_tremor * Vec3(gauss(rng), gauss(rng), gauss(rng));
      }
      push(p, i <= saccade_frames ? -1 : gaze_id);
    }
    return n;
  };
  auto linear = [&](const Vec3& dpos, double dgrip, int n, int gaze_id) {
    for (int i = 0; i < n; ++i) {
      Pose7 p = cur;
      p.position += dpos;
      p.gripper += dgrip;
      push(p, gaze_id);
    }
  };

  dataset::SubtaskTruth pick;
  pick.arm = Arm::kLeft;
  pick.s = 0;
  pick.b = planted_reach(pick_bottleneck(w, ep, g_open), pick, kRedId, 0);
  linear(Vec3(0, 0, -ep.pregrasp_height / ep.pick_descend_steps), 0.0, ep.pick_descend_steps,
         kRedId);
  linear(Vec3::Zero(), (ep.closed_gripper - g_open) / ep.gripper_steps, ep.gripper_steps, kRedId);
  linear(Vec3(0, 0, 0.01), 0.0, ep.prelift_steps, kRedId);
  pick.e = frame_count() - 1;

  // The red box geometry is fixed by the spec, so the place bottleneck can be
  // computed from the spawn world.
  dataset::SubtaskTruth place;
  place.arm = Arm::kLeft;
  place.s = frame_count();
  place.b = place.s + planted_reach(place_bottleneck(w, ep, ep.closed_gripper), place, kGreenId,
                                    ep.saccade_frames);
  linear(Vec3(0, 0, -0.07 / ep.place_descend_steps), 0.0, ep.place_descend_steps, kGreenId);
  linear(Vec3::Zero(), (g_open - ep.closed_gripper) / ep.gripper_steps, ep.gripper_steps,
         kGreenId);
  linear(Vec3(0, 0, 0.02), 0.0, ep.retreat_steps, kGreenId);
  place.e = frame_count();
  meta.truth = {pick, place};

  dataset::Demonstration demo;
  demo.meta = meta;
  const int n_frames = frame_count() + 1;
  demo.frames.reserve(static_cast<std::size_t>(n_frames));
  for (int t = 0; t < n_frames; ++t) {
    dataset::Frame f;
    f.t = t;
    f.left = w.arm(Arm::kLeft);
    f.right = w.arm(Arm::kRight);
    const int target = gaze_target[static_cast<std::size_t>(std::min(t, n_frames - 2))];
    Vec3 g = target < 0 ? 0.5 * (w.object(kRedId)->center + w.object(kGreenId)->center)
                        : w.object(target)->center;
    g += ep.gaze_noise * Vec3(gauss(rng), gauss(rng), gauss(rng));
    f.gaze_3d = g;
    f.gaze_pixel = project(g, cam).pixel;
    f.cloud = render(w, cam, ep.render, mix_seed(seed, 1000 + static_cast<std::uint64_t>(t)));
    if (t + 1 < n_frames) {
      f.expert_action.left = delta_between(f.left, left_targets[static_cast<std::size_t>(t)]);
      w = step(w, f.expert_action, spec.grasp);
    }
    demo.frames.push_back(std::move(f));
  }
  if (!success(w).pile) throw Error("unreachable configuration: expert failed to stack");
  dataset::quantize_clouds(demo);
  return demo;
}

}  // namespace gazebot::sim
