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
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gazebot/bezier.hpp"
#include "gazebot/dataset.hpp"
#include "gazebot/geometry.hpp"
#include "gazebot/predictors.hpp"
#include "gazebot/segmentation.hpp"

// Online executor: gaze -> crop -> Bezier reach to the predicted bottleneck,
// then gaze-centered relative actions with progress-driven sub-task advance.
namespace gazebot::policy {

using predictors::MatrixXd;
using predictors::Regressor;
using predictors::RegressorSpec;
using predictors::VectorXd;

struct PolicyVariant {
  std::string name = "gazebot";
  bool use_3d_crop = true;
  bool state_in_features = false;
  bool direct_bottleneck = false;
  bool parametric_reach = false;

  static PolicyVariant preset(const std::string& name) {
    PolicyVariant v;
    v.name = name;
    if (name == "gazebot") return v;
    if (name == "ablation1") {
      v.use_3d_crop = false;
      return v;
    }
    if (name == "ablation3") {
      v.state_in_features = true;
      return v;
    }
    if (name == "ablation4") {
      v.direct_bottleneck = true;
      return v;
    }
    if (name == "daa") {
      v.parametric_reach = true;
      return v;
    }
    throw Error("unknown policy preset '" + name + "'");
  }

  bool same_flags(const PolicyVariant& o) const {
    return use_3d_crop == o.use_3d_crop && state_in_features == o.state_in_features &&
           direct_bottleneck == o.direct_bottleneck && parametric_reach == o.parametric_reach;
  }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"gazebot", "ablation1", "ablation3", "ablation4",
                                              "daa"};
  return names;
}

/// Image-window crop used by the planar variant.
struct PlanarCrop {
  double half_window = 80.0;  // pixels
  int grid = 8;
};

struct PolicyConfig {
  int resolution = 8;
  double crop_side = kDefaultCropSide;
  double reach_speed = 0.10;  // m/s
  double dt = 0.1;
  double eps_pos = 0.01;
  double eps_rot = 0.1;
  /// Cap on the bezier-vector translation as a fraction of the remaining
  /// chord; below 0.5 every replanned first step approaches the target.
  double max_bend = 0.45;
  int chunk = 1;  // H
  predictors::ProgressParams progress;
  RegressorSpec action_head{"knn", 5, 1e-3};
  RegressorSpec progress_head{"knn", 5, 1e-3};
  RegressorSpec offset_head{"ridge", 5, 1e-2};
  RegressorSpec bezier_head{"ridge", 5, 1e-2};
  RegressorSpec direct_head{"ridge", 5, 1e-2};
  RegressorSpec global_head{"knn", 5, 1e-3};
  int gaze_k = 5;
  predictors::ClusterParams clusters;
  predictors::WorkspaceBox grid_box;  // absolute-frame grid for ablation4 / daa
  PlanarCrop planar;
  CameraModel camera;  // used only by the planar crop
};

enum class Phase { kReaching, kGazeCentered };

inline const char* phase_name(Phase p) {
  return p == Phase::kReaching ? "reaching" : "gaze-centered";
}

/// Heads of one sub-task. Which ones are populated depends on the variant.
struct SubtaskHeads {
  Arm arm = Arm::kLeft;
  std::unique_ptr<Regressor> action;    // h: local features -> 14*H
  std::unique_ptr<Regressor> progress;  // c: local features -> 1
  std::unique_ptr<Regressor> offset;    // f: local features -> 7 (gaze-anchored)
  std::unique_ptr<Regressor> bezier;    // local features + arm pose -> 7
  std::unique_ptr<Regressor> direct;    // absolute crop grid -> 7 (absolute pose)
  std::unique_ptr<Regressor> global_action;  // scene grid + arm pose -> 7
  std::unique_ptr<Regressor> global_phase;   // scene grid + arm pose -> 1
};

// ---------------------------------------------------------------------------
// Features.

/// Planar crop: points whose projection falls in a pixel window around the
/// projected gaze, summarized per grid cell by mean camera depth and count.
inline VectorXd planar_features(const PointCloud& scene, const Vec3& gaze, const CameraModel& cam,
                                const PlanarCrop& pc) {
  const int n = pc.grid;
  VectorXd depth_sum = VectorXd::Zero(n * n);
  VectorXd count = VectorXd::Zero(n * n);
  const Projection center = project(gaze, cam);
  double total = 0.0;
  if (center.depth > 0.0) {
    for (const Vec3& p : scene.points) {
      const Projection q = project(p, cam);
      if (q.depth <= 0.0) continue;
      const Vec2 d = q.pixel - center.pixel;
      if (std::abs(d.x()) > pc.half_window || std::abs(d.y()) > pc.half_window) continue;
      const int cx = std::min(n - 1, static_cast<int>((d.x() + pc.half_window) /
                                                      (2.0 * pc.half_window) * n));
      const int cy = std::min(n - 1, static_cast<int>((d.y() + pc.half_window) /
                                                      (2.0 * pc.half_window) * n));
      depth_sum[cy * n + cx] += q.depth;
      count[cy * n + cx] += 1.0;
      total += 1.0;
    }
  }
  VectorXd out(2 * n * n);
  for (int i = 0; i < n * n; ++i) {
    out[i] = count[i] > 0.0 ? depth_sum[i] / count[i] : 0.0;
    out[n * n + i] = total > 0.0 ? count[i] / total : 0.0;
  }
  return out;
}

inline VectorXd concat(const VectorXd& a, const VectorXd& b) {
  VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

inline VectorXd arm_state(const Pose7& left, const Pose7& right) {
  return concat(pose_features(left), pose_features(right));
}

/// Policy parameters plus fitted heads.
class PolicyModel {
 public:
  PolicyVariant variant;
  PolicyConfig config;
  predictors::GazePredictor gaze;
  std::vector<SubtaskHeads> heads;

  int n_seg() const { return static_cast<int>(heads.size()); }

  /// Input of h, c, and f: the gaze-centered crop (or the planar crop), plus
  /// both arm poses for the state variant.
  VectorXd local_features(const PointCloud& scene, const Vec3& g, const Pose7& left,
                          const Pose7& right) const {
    VectorXd x = variant.use_3d_crop
                     ? predictors::featurize(crop_gaze_cube(scene, g, config.crop_side),
                                             config.resolution)
                           .vector()
                     : planar_features(scene, g, config.camera, config.planar);
    if (variant.state_in_features) x = concat(x, arm_state(left, right));
    return x;
  }

  /// Bezier-head input: local features plus the acting arm pose relative to
  /// the gaze point.
  static VectorXd bezier_features(const VectorXd& local, const Vec3& g, const Pose7& acting) {
    VectorXd p(kPoseDim);
    p << acting.position - g, quat_log(acting.orientation), acting.gripper;
    return concat(local, p);
  }

  /// Direct-bottleneck input: crop points binned on the absolute workspace
  /// grid.
  VectorXd direct_features(const PointCloud& scene, const Vec3& g, const Pose7& left,
                           const Pose7& right) const {
    GazeCloud crop = crop_gaze_cube(scene, g, config.crop_side);
    for (Vec3& p : crop.points) p += g;
    VectorXd x = predictors::world_grid(crop.points, config.grid_box);
    if (variant.state_in_features) x = concat(x, arm_state(left, right));
    return x;
  }

  VectorXd global_features(const PointCloud& scene, const Pose7& acting) const {
    return concat(predictors::world_grid(scene.points, config.grid_box), pose_features(acting));
  }

  const SubtaskHeads& subtask(int i) const {
    if (i < 0 || i >= n_seg()) throw Error("sub-task index " + std::to_string(i) + " out of range");
    return heads[static_cast<std::size_t>(i)];
  }

  /// Predicted bottleneck for sub-task i. With the default wiring this
  /// depends only on the gaze point and the gaze-centered crop.
  Pose7 predict_bottleneck(const PointCloud& scene, const Vec3& g, const Pose7& left,
                           const Pose7& right, int i) const {
    const SubtaskHeads& h = subtask(i);
    if (variant.direct_bottleneck) {
      require(h.direct, "direct bottleneck head");
      const VectorXd y = h.direct->predict(direct_features(scene, g, left, right));
      return Pose7(y.head<3>(), quat_exp(y.segment<3>(3)), y[6]);
    }
    require(h.offset, "offset head");
    const VectorXd y = h.offset->predict(local_features(scene, g, left, right));
    return predictors::bottleneck_pose(g, PoseDelta7::from_vector(y));
  }

  static void require(const std::unique_ptr<Regressor>& r, const char* what) {
    if (!r || !r->fitted()) throw Error(std::string(what) + " not fitted");
  }

  // Serialization.
  std::string serialize() const;
  static PolicyModel deserialize(std::string bytes);
  void save(const std::filesystem::path& path) const {
    dataset::detail::write_file_atomic(path, serialize());
  }
  static PolicyModel load(const std::filesystem::path& path) {
    return deserialize(dataset::detail::read_file(path));
  }
};

namespace detail {

inline void put_spec(std::string& s, const char* key, const RegressorSpec& r) {
  s += std::string(key) + " " + r.kind + " " + std::to_string(r.k) + " " +
       dataset::detail::fmt_double(r.lambda) + "\n";
}

inline RegressorSpec get_spec(dataset::detail::Reader& rd, const char* key) {
  dataset::detail::Tokens tk(rd.line(key));
  tk.expect(key);
  RegressorSpec r;
  r.kind = std::string(tk.word(key));
  r.k = tk.integer<int>(key);
  r.lambda = tk.number(key);
  tk.finish(key);
  return r;
}

inline void put_camera(std::string& s, const CameraModel& c) {
  using dataset::detail::fmt_double;
  s += "camera " + fmt_double(c.fx) + " " + fmt_double(c.fy) + " " + fmt_double(c.cx) + " " +
       fmt_double(c.cy) + " " + std::to_string(c.width) + " " + std::to_string(c.height);
  const Eigen::Matrix4d m = c.pose.matrix();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 4; ++k) s += " " + fmt_double(m(r, k));
  s += "\n";
}

inline CameraModel get_camera(dataset::detail::Reader& rd) {
  dataset::detail::Tokens tk(rd.line("camera"));
  tk.expect("camera");
  CameraModel c;
  c.fx = tk.number("camera");
  c.fy = tk.number("camera");
  c.cx = tk.number("camera");
  c.cy = tk.number("camera");
  c.width = tk.integer<int>("camera");
  c.height = tk.integer<int>("camera");
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 4; ++k) m(r, k) = tk.number("camera");
  c.pose.matrix() = m;
  tk.finish("camera");
  return c;
}

}  // namespace detail

inline std::string PolicyModel::serialize() const {
  using dataset::detail::fmt_double;
  std::string s;
  s += std::string(predictors::kModelMagic) + " " + std::to_string(predictors::kModelFormatVersion) +
       "\n";
  s += "variant " + variant.name + " " + std::to_string(variant.use_3d_crop) + " " +
       std::to_string(variant.state_in_features) + " " + std::to_string(variant.direct_bottleneck) +
       " " + std::to_string(variant.parametric_reach) + "\n";
  const PolicyConfig& c = config;
  s += "config " + std::to_string(c.resolution) + " " + fmt_double(c.crop_side) + " " +
       fmt_double(c.reach_speed) + " " + fmt_double(c.dt) + " " + fmt_double(c.eps_pos) + " " +
       fmt_double(c.eps_rot) + " " + fmt_double(c.max_bend) + " " + std::to_string(c.chunk) + " " +
       fmt_double(c.progress.threshold) + " " + std::to_string(c.progress.window) + " " +
       std::to_string(c.gaze_k) + "\n";
  s += "grid_box " + fmt_double(c.grid_box.lo.x()) + " " + fmt_double(c.grid_box.lo.y()) + " " +
       fmt_double(c.grid_box.lo.z()) + " " + fmt_double(c.grid_box.hi.x()) + " " +
       fmt_double(c.grid_box.hi.y()) + " " + fmt_double(c.grid_box.hi.z()) + "\n";
  s += "planar " + fmt_double(c.planar.half_window) + " " + std::to_string(c.planar.grid) + "\n";
  detail::put_camera(s, c.camera);
  detail::put_spec(s, "action_head", c.action_head);
  detail::put_spec(s, "progress_head", c.progress_head);
  detail::put_spec(s, "offset_head", c.offset_head);
  detail::put_spec(s, "bezier_head", c.bezier_head);
  detail::put_spec(s, "direct_head", c.direct_head);
  detail::put_spec(s, "global_head", c.global_head);
  gaze.write(s);
  s += "subtasks " + std::to_string(heads.size()) + "\n";
  for (const auto& h : heads) {
    s += std::string("subtask ") + arm_name(h.arm) + "\n";
    for (const auto* r : {&h.action, &h.progress, &h.offset, &h.bezier, &h.direct,
                          &h.global_action, &h.global_phase})
      predictors::write_regressor(s, r->get());
  }
  s += "end\n";
  return s;
}

inline PolicyModel PolicyModel::deserialize(std::string bytes) {
  using dataset::detail::Tokens;
  dataset::detail::Reader rd(std::move(bytes));
  PolicyModel m;
  {
    Tokens tk(rd.line("magic"));
    dataset::detail::check_version(tk, predictors::kModelMagic, predictors::kModelFormatVersion);
    tk.finish("magic");
  }
  {
    Tokens tk(rd.line("variant"));
    tk.expect("variant");
    m.variant.name = std::string(tk.word("variant"));
    m.variant.use_3d_crop = tk.integer<int>("variant") != 0;
    m.variant.state_in_features = tk.integer<int>("variant") != 0;
    m.variant.direct_bottleneck = tk.integer<int>("variant") != 0;
    m.variant.parametric_reach = tk.integer<int>("variant") != 0;
    tk.finish("variant");
  }
  PolicyConfig& c = m.config;
  {
    Tokens tk(rd.line("config"));
    tk.expect("config");
    c.resolution = tk.integer<int>("config");
    c.crop_side = tk.number("config");
    c.reach_speed = tk.number("config");
    c.dt = tk.number("config");
    c.eps_pos = tk.number("config");
    c.eps_rot = tk.number("config");
    c.max_bend = tk.number("config");
    c.chunk = tk.integer<int>("config");
    c.progress.threshold = tk.number("config");
    c.progress.window = tk.integer<int>("config");
    c.gaze_k = tk.integer<int>("config");
    tk.finish("config");
  }
  {
    Tokens tk(rd.line("grid_box"));
    tk.expect("grid_box");
    for (int i = 0; i < 3; ++i) c.grid_box.lo[i] = tk.number("grid_box");
    for (int i = 0; i < 3; ++i) c.grid_box.hi[i] = tk.number("grid_box");
    tk.finish("grid_box");
  }
  {
    Tokens tk(rd.line("planar"));
    tk.expect("planar");
    c.planar.half_window = tk.number("planar");
    c.planar.grid = tk.integer<int>("planar");
    tk.finish("planar");
  }
  c.camera = detail::get_camera(rd);
  c.action_head = detail::get_spec(rd, "action_head");
  c.progress_head = detail::get_spec(rd, "progress_head");
  c.offset_head = detail::get_spec(rd, "offset_head");
  c.bezier_head = detail::get_spec(rd, "bezier_head");
  c.direct_head = detail::get_spec(rd, "direct_head");
  c.global_head = detail::get_spec(rd, "global_head");
  m.gaze = predictors::GazePredictor::read(rd);
  std::size_t n = 0;
  {
    Tokens tk(rd.line("subtasks"));
    tk.expect("subtasks");
    n = tk.integer<std::size_t>("subtasks");
    tk.finish("subtasks");
  }
  for (std::size_t i = 0; i < n; ++i) {
    Tokens tk(rd.line("subtask"));
    tk.expect("subtask");
    SubtaskHeads h;
    h.arm = dataset::detail::parse_arm(tk.word("subtask"));
    tk.finish("subtask");
    for (auto* r : {&h.action, &h.progress, &h.offset, &h.bezier, &h.direct, &h.global_action,
                    &h.global_phase})
      *r = predictors::read_regressor(rd);
    m.heads.push_back(std::move(h));
  }
  {
    Tokens tk(rd.line("end"));
    tk.expect("end");
    tk.finish("end");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training.

/// Accumulates gaze observations per sub-task and fits the gaze predictor.
class GazeTrainer {
 public:
  GazeTrainer(int n_seg, int k, predictors::ClusterParams params)
      : proto_(n_seg, k, params), obs_(static_cast<std::size_t>(n_seg)) {}

  void add_demo(const dataset::Demonstration& demo, const dataset::SegmentAnnotation& ann) {
    const int n = std::min(static_cast<int>(ann.segments.size()), proto_.n_seg());
    for (int k = 0; k < n; ++k) {
      const auto& seg = ann.segments[static_cast<std::size_t>(k)];
      for (int t = seg.s; t <= seg.e; ++t) {
        const auto& f = demo.frames[static_cast<std::size_t>(t)];
        predictors::GazePredictor::Observation o;
        if (proto_.observe(f.cloud, f.gaze_3d, o)) obs_[static_cast<std::size_t>(k)].push_back(o);
      }
    }
  }

  predictors::GazePredictor finish() const {
    predictors::GazePredictor gp = proto_;
    for (int k = 0; k < gp.n_seg(); ++k) gp.fit_observations(k, obs_[static_cast<std::size_t>(k)]);
    return gp;
  }

 private:
  predictors::GazePredictor proto_;
  std::vector<std::vector<predictors::GazePredictor::Observation>> obs_;
};

/// Predicted gaze for every frame, using the predictor of the frame's
/// sub-task.
inline std::vector<Vec3> predicted_gaze_trace(const predictors::GazePredictor& gp,
                                              const dataset::Demonstration& demo,
                                              const dataset::SegmentAnnotation& ann) {
  std::vector<Vec3> out(demo.frames.size(), Vec3::Zero());
  const int n = std::min(static_cast<int>(ann.segments.size()), gp.n_seg());
  for (int k = 0; k < n; ++k) {
    const auto& seg = ann.segments[static_cast<std::size_t>(k)];
    for (int t = seg.s; t <= seg.e; ++t)
      out[static_cast<std::size_t>(t)] = gp.predict(demo.frames[static_cast<std::size_t>(t)].cloud, k);
  }
  return out;
}

/// Collects per-sub-task training rows from annotated demos (features at the
/// predicted gaze) and fits the variant's heads.
class PolicyTrainer {
 public:
  PolicyTrainer(PolicyVariant variant, PolicyConfig config, predictors::GazePredictor gaze,
                std::vector<Arm> arms) {
    model_.variant = std::move(variant);
    model_.config = std::move(config);
    model_.gaze = std::move(gaze);
    if (arms.empty()) throw Error("need at least one sub-task");
    if (model_.config.chunk < 1) throw Error("chunk length must be >= 1");
    rows_.resize(arms.size());
    for (Arm a : arms) {
      SubtaskHeads h;
      h.arm = a;
      model_.heads.push_back(std::move(h));
    }
  }

  /// `gaze`, when given, holds the predicted gaze of every frame under its
  /// own sub-task index (see predicted_gaze_trace).
  void add_demo(const dataset::Demonstration& demo, const dataset::SegmentAnnotation& ann,
                const std::vector<Vec3>* gaze = nullptr) {
    ann.validate(demo.last_step());
    if (gaze != nullptr && gaze->size() != demo.frames.size())
      throw Error("gaze trace length mismatch");
    const PolicyVariant& v = model_.variant;
    const int n = std::min(static_cast<int>(ann.segments.size()), model_.n_seg());
    const int H = model_.config.chunk;
    for (int k = 0; k < n; ++k) {
      const auto& seg = ann.segments[static_cast<std::size_t>(k)];
      const Arm arm = model_.heads[static_cast<std::size_t>(k)].arm;
      Rows& r = rows_[static_cast<std::size_t>(k)];
      const Pose7 bottleneck = demo.frames[static_cast<std::size_t>(seg.b)].pose(arm);
      for (int t = seg.s; t <= seg.e; ++t) {
        const auto& f = demo.frames[static_cast<std::size_t>(t)];
        const Vec3 g = gaze != nullptr ? (*gaze)[static_cast<std::size_t>(t)]
                                       : model_.gaze.predict(f.cloud, k);
        const Pose7& acting = f.pose(arm);
        const bool reach = t < seg.b;

        if (v.parametric_reach) {
          const VectorXd gx = model_.global_features(f.cloud, acting);
          if (reach) {
            r.global_x.push_back(gx);
            r.global_y.push_back(f.action(arm).to_vector());
          }
          r.phase_x.push_back(gx);
          r.phase_y.push_back(VectorXd::Constant(1, reach ? 0.0 : 1.0));
        }

        const VectorXd local = model_.local_features(f.cloud, g, f.left, f.right);
        if (!v.parametric_reach && t <= seg.b) {
          if (v.direct_bottleneck) {
            r.direct_x.push_back(model_.direct_features(f.cloud, g, f.left, f.right));
            r.direct_y.push_back(pose_features(bottleneck));
          } else {
            r.offset_x.push_back(local);
            r.offset_y.push_back(predictors::offset_label(bottleneck, g).to_vector());
          }
          if (t <= seg.b - 2) {
            std::vector<double> ts;
            for (int u = t; u <= seg.b; ++u) ts.push_back(static_cast<double>(u));
            const auto s = bezier::parameterize(ts);
            std::vector<bezier::Sample> samples;
            for (std::size_t i = 0; i < ts.size(); ++i)
              samples.emplace_back(
                  s[i], demo.frames[static_cast<std::size_t>(t) + i].pose(arm));
            r.bezier_x.push_back(PolicyModel::bezier_features(local, g, acting));
            r.bezier_y.push_back(bezier::fit(samples).bezier_vector.to_vector());
          }
        }
        if (!reach) {
          VectorXd y = VectorXd::Zero(2 * kPoseDim * H);
          for (int h = 0; h < H; ++h) {
            const int u = t + h;
            if (u > demo.last_step()) break;
            y.segment(2 * kPoseDim * h, 2 * kPoseDim) =
                segmentation::action_vector(demo.frames[static_cast<std::size_t>(u)].expert_action);
          }
          r.action_x.push_back(local);
          r.action_y.push_back(y);
          r.progress_x.push_back(local);
          r.progress_y.push_back(VectorXd::Constant(
              1, seg.e > seg.s ? static_cast<double>(t - seg.s) / (seg.e - seg.s) : 1.0));
        }
      }
    }
  }

  PolicyModel finish() {
    const PolicyConfig& c = model_.config;
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      Rows& r = rows_[k];
      SubtaskHeads& h = model_.heads[k];
      auto fit = [](const RegressorSpec& spec, const std::vector<VectorXd>& x,
                    const std::vector<VectorXd>& y, const char* what) {
        if (x.empty()) throw Error(std::string("empty training set for ") + what);
        auto reg = spec.make();
        reg->fit(predictors::stack_rows(x), predictors::stack_rows(y));
        return reg;
      };
      h.action = fit(c.action_head, r.action_x, r.action_y, "action head");
      h.progress = fit(c.progress_head, r.progress_x, r.progress_y, "progress head");
      if (model_.variant.parametric_reach) {
        h.global_action = fit(c.global_head, r.global_x, r.global_y, "global action head");
        h.global_phase = fit(c.global_head, r.phase_x, r.phase_y, "global phase head");
        continue;
      }
      if (model_.variant.direct_bottleneck)
        h.direct = fit(c.direct_head, r.direct_x, r.direct_y, "direct head");
      else
        h.offset = fit(c.offset_head, r.offset_x, r.offset_y, "offset head");
      h.bezier = fit(c.bezier_head, r.bezier_x, r.bezier_y, "bezier head");
    }
    rows_.clear();
    return std::move(model_);
  }

 private:
  struct Rows {
    std::vector<VectorXd> action_x, action_y, progress_x, progress_y;
    std::vector<VectorXd> offset_x, offset_y, bezier_x, bezier_y, direct_x, direct_y;
    std::vector<VectorXd> global_x, global_y, phase_x, phase_y;
  };
  PolicyModel model_;
  std::vector<Rows> rows_;
};

// ---------------------------------------------------------------------------
// Executor.

struct ExecutorState {
  int i_seg = 0;
  Phase phase = Phase::kReaching;
  std::optional<bezier::BezierReach> plan;
  int run = 0;  // consecutive progress values above threshold
  bool complete = false;
  int steps = 0;
  int gaze_clamps = 0;
  std::deque<VectorXd> pending;  // queued chunk actions (14-D)
};

struct StepInfo {
  Vec3 gaze = Vec3::Zero();
  bool gaze_clamped = false;
  int i_seg = 0;
  Phase phase = Phase::kReaching;
  std::optional<Pose7> bottleneck;
  double progress = -1.0;
};

class Executor {
 public:
  /// `workspace` bounds the predicted gaze.
  Executor(const PolicyModel& model, predictors::WorkspaceBox workspace)
      : model_(&model), workspace_(workspace),
        tracker_(model.n_seg(), model.config.progress) {
    if (model.n_seg() < 1) throw Error("policy has no sub-tasks");
  }

  const ExecutorState& state() const { return state_; }

  BimanualDelta act(const PointCloud& scene, const Pose7& left, const Pose7& right,
                    StepInfo* info = nullptr) {
    const PolicyModel& m = *model_;
    const PolicyConfig& c = m.config;
    const int k = state_.i_seg;
    const SubtaskHeads& heads = m.subtask(k);
    const Arm arm = heads.arm;
    const Pose7& acting = arm == Arm::kLeft ? left : right;
    StepInfo local;
    StepInfo& out = info != nullptr ? *info : local;
    out = StepInfo{};
    out.i_seg = k;

    Vec3 g = m.gaze.predict(scene, k);
    const Vec3 clamped = g.cwiseMax(workspace_.lo).cwiseMin(workspace_.hi);
    if (clamped != g) {
      out.gaze_clamped = true;
      ++state_.gaze_clamps;
      g = clamped;
    }
    out.gaze = g;
    ++state_.steps;

    BimanualDelta action;
    PoseDelta7& acting_delta = arm == Arm::kLeft ? action.left : action.right;

    if (state_.phase == Phase::kReaching) {
      if (m.variant.parametric_reach) {
        PolicyModel::require(heads.global_phase, "global phase head");
        PolicyModel::require(heads.global_action, "global action head");
        const VectorXd gx = m.global_features(scene, acting);
        if (heads.global_phase->predict(gx)[0] >= 0.5) {
          state_.phase = Phase::kGazeCentered;
        } else {
          acting_delta = PoseDelta7::from_vector(heads.global_action->predict(gx));
          out.phase = state_.phase;
          return action;
        }
      } else {
        const Pose7 b = m.predict_bottleneck(scene, g, left, right, k);
        out.bottleneck = b;
        const double dpos = (b.position - acting.position).norm();
        const double drot = rotation_distance(b.orientation, acting.orientation);
        if (dpos <= c.eps_pos && drot <= c.eps_rot) {
          state_.phase = Phase::kGazeCentered;
          state_.plan.reset();
        } else {
          PolicyModel::require(heads.bezier, "bezier head");
          const VectorXd lx = m.local_features(scene, g, left, right);
          PoseDelta7 v = PoseDelta7::from_vector(
              heads.bezier->predict(PolicyModel::bezier_features(lx, g, acting)));
          const double bend = v.dpos.norm();
          if (bend > c.max_bend * dpos) v.dpos *= c.max_bend * dpos / bend;
          state_.plan = bezier::BezierReach{acting, b, v};
          const Pose7 next = bezier::eval(*state_.plan, reach_parameter(*state_.plan, dpos, c));
          acting_delta = delta_between(acting, next);
          out.phase = state_.phase;
          return action;
        }
      }
    }

    // Gaze-centered phase.
    PolicyModel::require(heads.action, "action head");
    PolicyModel::require(heads.progress, "progress head");
    const VectorXd lx = m.local_features(scene, g, left, right);
    if (state_.pending.empty()) {
      const VectorXd chunk = heads.action->predict(lx);
      const int H = static_cast<int>(chunk.size() / (2 * kPoseDim));
      const int keep = std::max(1, H - 1);
      for (int h = 0; h < keep; ++h)
        state_.pending.push_back(chunk.segment(2 * kPoseDim * h, 2 * kPoseDim));
    }
    const VectorXd a = state_.pending.front();
    state_.pending.pop_front();
    acting_delta = PoseDelta7::from_vector(a.segment(arm == Arm::kLeft ? 0 : kPoseDim, kPoseDim));

    const double progress = heads.progress->predict(lx)[0];
    out.progress = progress;
    const int next = tracker_.advance(k, progress);
    state_.run = tracker_.run();
    if (tracker_.complete()) state_.complete = true;
    if (next != k) {
      state_.i_seg = next;
      state_.phase = Phase::kReaching;
      state_.pending.clear();
    }
    out.phase = Phase::kGazeCentered;
    return action;
  }

  /// Curve parameter of the next reach sample: the first point along the
  /// plan whose distance to the bottleneck is one nominal step (speed * dt)
  /// shorter than the current distance `dpos`.
  static double reach_parameter(const bezier::BezierReach& plan, double dpos,
                                const PolicyConfig& c) {
    const double goal = dpos - c.reach_speed * c.dt;
    if (goal <= 0.0) return 1.0;
    auto remaining = [&](double s) {
      return (plan.end.position - bezier::eval(plan, s).position).norm();
    };
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 50; ++i) {
      const double mid = 0.5 * (lo + hi);
      (remaining(mid) <= goal ? hi : lo) = mid;
    }
    return hi;
  }

 private:
  const PolicyModel* model_;
  predictors::WorkspaceBox workspace_;
  predictors::ProgressTracker tracker_;
  ExecutorState state_;
};

}  // namespace gazebot::policy
