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
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gazebot/dataset.hpp"
#include "gazebot/policy.hpp"
#include "gazebot/predictors.hpp"
#include "gazebot/segmentation.hpp"
#include "gazebot/simenv.hpp"

// Demo generation, segmentation, training, and evaluation drivers shared by
// the CLI and the acceptance suite.
namespace gazebot::pipeline {

namespace fs = std::filesystem;

/// Error tagged with the pipeline stage (and seed, when known).
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Parsing helpers.

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end)
    throw Error("invalid value '" + v + "' for key '" + key + "'");
  return out;
}

inline Vec3 parse_vec3(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 3) throw Error("key '" + key + "' expects x,y,z");
  return {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1]),
          parse_number<double>(key, parts[2])};
}

inline sim::Rect parse_rect(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 4) throw Error("key '" + key + "' expects x0,x1,y0,y1");
  return {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1]),
          parse_number<double>(key, parts[2]), parse_number<double>(key, parts[3])};
}

inline std::string fmt(double v) { return dataset::detail::fmt_double(v); }

inline std::string fmt_vec3(const Vec3& v) {
  return fmt(v.x()) + "," + fmt(v.y()) + "," + fmt(v.z());
}

inline std::string fmt_rect(const sim::Rect& r) {
  return fmt(r.x0) + "," + fmt(r.x1) + "," + fmt(r.y0) + "," + fmt(r.y1);
}

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + v[i];
  return out;
}

/// Key-value body of a versioned config file: the first non-comment line
/// must be "<magic> <version>".
inline std::vector<std::pair<std::string, std::string>> read_key_values(
    const std::string& text, std::string_view magic, int version) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string l = trim(line);
    if (l.empty() || l[0] == '#') continue;
    if (!header) {
      const auto parts = split(l, ' ');
      if (parts.size() != 2 || parts[0] != magic)
        throw Error("config: expected header '" + std::string(magic) + " " +
                    std::to_string(version) + "'");
      if (parts[1] != std::to_string(version))
        throw Error("config: unsupported schema version " + parts[1]);
      header = true;
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(l.substr(0, eq)), trim(l.substr(eq + 1)));
  }
  if (!header) throw Error("config: missing header");
  return out;
}

inline std::string read_text(const fs::path& p) { return dataset::detail::read_file(p); }

inline void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  dataset::detail::write_file_atomic(p, s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario files.

inline constexpr std::string_view kScenarioMagic = "gazebot-scenario";
inline constexpr int kScenarioVersion = 1;

inline sim::ScenarioSpec parse_scenario(const std::string& text) {
  using namespace detail;
  sim::ScenarioSpec s;
  for (const auto& [k, v] : read_key_values(text, kScenarioMagic, kScenarioVersion)) {
    if (k == "id") s.id = v;
    else if (k == "origin") s.origin = parse_vec3(k, v);
    else if (k == "table") s.table = parse_rect(k, v);
    else if (k == "red_id") s.red_id = parse_rect(k, v);
    else if (k == "green_id") s.green_id = parse_rect(k, v);
    else if (k == "ood_object_min") s.ood_object_min = parse_number<double>(k, v);
    else if (k == "ood_object_max") s.ood_object_max = parse_number<double>(k, v);
    else if (k == "yaw_half") s.yaw_half = parse_number<double>(k, v);
    else if (k == "left_arm_center") s.left_arm.center = parse_vec3(k, v);
    else if (k == "right_arm_center") s.right_arm.center = parse_vec3(k, v);
    else if (k == "arm_half") s.left_arm.half = s.right_arm.half = parse_vec3(k, v);
    else if (k == "ood_arm_min") s.ood_arm_min = parse_number<double>(k, v);
    else if (k == "ood_arm_max") s.ood_arm_max = parse_number<double>(k, v);
    else if (k == "gripper_open") s.gripper_open = parse_number<double>(k, v);
    else if (k == "camera_eye") s.camera_eye = parse_vec3(k, v);
    else if (k == "camera_target") s.camera_target = parse_vec3(k, v);
    else throw Error("scenario: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

inline std::string format_scenario(const sim::ScenarioSpec& s) {
  using namespace detail;
  std::string o = std::string(kScenarioMagic) + " " + std::to_string(kScenarioVersion) + "\n";
  o += "id = " + s.id + "\n";
  o += "origin = " + fmt_vec3(s.origin) + "\n";
  o += "table = " + fmt_rect(s.table) + "\n";
  o += "red_id = " + fmt_rect(s.red_id) + "\n";
  o += "green_id = " + fmt_rect(s.green_id) + "\n";
  o += "ood_object_min = " + fmt(s.ood_object_min) + "\n";
  o += "ood_object_max = " + fmt(s.ood_object_max) + "\n";
  o += "yaw_half = " + fmt(s.yaw_half) + "\n";
  o += "left_arm_center = " + fmt_vec3(s.left_arm.center) + "\n";
  o += "right_arm_center = " + fmt_vec3(s.right_arm.center) + "\n";
  o += "arm_half = " + fmt_vec3(s.left_arm.half) + "\n";
  o += "ood_arm_min = " + fmt(s.ood_arm_min) + "\n";
  o += "ood_arm_max = " + fmt(s.ood_arm_max) + "\n";
  o += "gripper_open = " + fmt(s.gripper_open) + "\n";
  o += "camera_eye = " + fmt_vec3(s.camera_eye) + "\n";
  o += "camera_target = " + fmt_vec3(s.camera_target) + "\n";
  return o;
}

// ---------------------------------------------------------------------------
// Run configuration.

inline constexpr std::string_view kConfigMagic = "gazebot-config";
inline constexpr int kConfigVersion = 1;

struct RunConfig {
  std::string task = "pilebox";
  std::string scenario;  // scenario file; empty selects the built-in PileBox layout
  std::vector<std::string> variants = policy::preset_names();
  std::vector<std::string> conditions{"ID", "OOD-object", "OOD-arm", "OOD-both"};

  // Demonstrations.
  int demos = 100;
  std::uint64_t demo_seed = 1;
  std::string demo_dir;  // load demos from here instead of generating them
  double gaze_noise = 0.003;
  double waypoint_jitter = 0.04;

  // Segmentation.
  double fix_radius = 0.05;
  int min_dwell = 5;
  int bottleneck_window = 3;
  int probe_k = 2;
  bool truth_segments = false;  // train on generator annotations

  // Policy heads.
  int resolution = 8;
  double crop_side = kDefaultCropSide;
  double reach_speed = 0.10;
  double eps_pos = 0.01;
  double eps_rot = 0.1;
  double max_bend = 0.45;
  int chunk = 1;
  double progress_threshold = 0.9;
  int progress_window = 3;
  int gaze_k = 5;
  int action_k = 5;
  int progress_k = 5;
  double offset_lambda = 1e-2;
  double bezier_lambda = 1e-2;
  double direct_lambda = 1e-2;
  int global_k = 5;

  // Evaluation.
  int trials = 50;
  std::uint64_t seed = 0;
  int max_steps = 300;
  double eval_noise = 0.001;
  int eval_points = 8000;
  int workers = 1;
  std::string model_dir;  // load trained models instead of training
  std::string output = "gazebot-out";

  void validate() const {
    if (task != "pilebox") throw Error("config: unsupported task '" + task + "'");
    if (trials < 1) throw Error("config: trials must be >= 1");
    if (demos < 1) throw Error("config: demos must be >= 1");
    if (variants.empty()) throw Error("config: no variants selected");
    for (const auto& v : variants) (void)policy::PolicyVariant::preset(v);
    if (conditions.empty()) throw Error("config: no conditions selected");
    for (const auto& c : conditions) (void)sim::parse_condition(c);
    if (max_steps < 1) throw Error("config: max_steps must be >= 1");
    if (eval_points < 1) throw Error("config: eval_points must be >= 1");
    if (workers < 1) throw Error("config: workers must be >= 1");
    if (chunk < 1) throw Error("config: chunk must be >= 1");
    if (!scenario.empty() && !fs::exists(scenario))
      throw Error("config: scenario file '" + scenario + "' does not exist");
    if (!demo_dir.empty() && !fs::is_directory(demo_dir))
      throw Error("config: demo_dir '" + demo_dir + "' does not exist");
    if (!model_dir.empty() && !fs::is_directory(model_dir))
      throw Error("config: model_dir '" + model_dir + "' does not exist");
  }

  sim::ScenarioSpec scenario_spec() const {
    return scenario.empty() ? sim::ScenarioSpec{} : parse_scenario(detail::read_text(scenario));
  }

  sim::ExpertParams expert() const {
    sim::ExpertParams ep;
    ep.gaze_noise = gaze_noise;
    ep.waypoint_jitter = waypoint_jitter;
    return ep;
  }

  segmentation::SegmentParams segment_params() const {
    segmentation::SegmentParams p;
    p.fixation.radius = fix_radius;
    p.fixation.min_dwell = min_dwell;
    p.window = bottleneck_window;
    return p;
  }

  segmentation::ProbeConfig probe_config() const {
    segmentation::ProbeConfig p;
    p.spec.k = probe_k;
    p.resolution = resolution;
    p.crop_side = crop_side;
    return p;
  }

  policy::PolicyConfig policy_config(const sim::ScenarioSpec& spec) const {
    policy::PolicyConfig c;
    c.resolution = resolution;
    c.crop_side = crop_side;
    c.reach_speed = reach_speed;
    c.dt = sim::kDt;
    c.eps_pos = eps_pos;
    c.eps_rot = eps_rot;
    c.max_bend = max_bend;
    c.chunk = chunk;
    c.progress.threshold = progress_threshold;
    c.progress.window = progress_window;
    c.gaze_k = gaze_k;
    c.action_head = {"knn", action_k, 1e-3};
    c.progress_head = {"knn", progress_k, 1e-3};
    c.offset_head = {"ridge", 5, offset_lambda};
    c.bezier_head = {"ridge", 5, bezier_lambda};
    c.direct_head = {"ridge", 5, direct_lambda};
    c.global_head = {"knn", global_k, 1e-3};
    c.grid_box.lo = Vec3(spec.table.x0, spec.table.y0, spec.table_height - 0.02) + spec.origin;
    c.grid_box.hi = Vec3(spec.table.x1, spec.table.y1, spec.table_height + 0.30) + spec.origin;
    c.camera = spec.camera();
    return c;
  }
};

/// One configurable key: name, help text, setter, getter.
struct ConfigField {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigField>& config_fields() {
  using namespace detail;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto str = [&](const char* name, const char* help, std::string RunConfig::*m) {
      f.push_back({name, help, [m](RunConfig& c, const std::string& v) { c.*m = v; },
                   [m](const RunConfig& c) { return c.*m; }});
    };
    auto list = [&](const char* name, const char* help, std::vector<std::string> RunConfig::*m) {
      f.push_back({name, help,
                   [m](RunConfig& c, const std::string& v) {
                     auto parts = split(v, ',');
                     std::erase_if(parts, [](const std::string& s) { return s.empty(); });
                     c.*m = parts;
                   },
                   [m](const RunConfig& c) { return join(c.*m); }});
    };
    auto integer = [&](const char* name, const char* help, int RunConfig::*m) {
      f.push_back({name, help,
                   [m, name](RunConfig& c, const std::string& v) { c.*m = parse_number<int>(name, v); },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto u64 = [&](const char* name, const char* help, std::uint64_t RunConfig::*m) {
      f.push_back({name, help,
                   [m, name](RunConfig& c, const std::string& v) {
                     c.*m = parse_number<std::uint64_t>(name, v);
                   },
                   [m](const RunConfig& c) { return std::to_string(c.*m); }});
    };
    auto real = [&](const char* name, const char* help, double RunConfig::*m) {
      f.push_back({name, help,
                   [m, name](RunConfig& c, const std::string& v) {
                     c.*m = parse_number<double>(name, v);
                   },
                   [m](const RunConfig& c) { return fmt(c.*m); }});
    };
    auto boolean = [&](const char* name, const char* help, bool RunConfig::*m) {
      f.push_back({name, help,
                   [m, name](RunConfig& c, const std::string& v) {
                     if (v == "true" || v == "1") c.*m = true;
                     else if (v == "false" || v == "0") c.*m = false;
                     else throw Error("invalid value '" + v + "' for key '" + name + "'");
                   },
                   [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }});
    };
    str("task", "task name (pilebox)", &RunConfig::task);
    str("scenario", "scenario file path", &RunConfig::scenario);
    list("variants", "comma-separated policy presets", &RunConfig::variants);
    list("conditions", "comma-separated evaluation conditions", &RunConfig::conditions);
    integer("demos", "number of demonstrations", &RunConfig::demos);
    u64("demo_seed", "demonstration seed", &RunConfig::demo_seed);
    str("demo_dir", "load demonstrations from this directory", &RunConfig::demo_dir);
    real("gaze_noise", "expert gaze noise sigma (m)", &RunConfig::gaze_noise);
    real("waypoint_jitter", "expert control-point jitter sigma (m)", &RunConfig::waypoint_jitter);
    real("fix_radius", "fixation radius (m)", &RunConfig::fix_radius);
    integer("min_dwell", "minimum fixation dwell (steps)", &RunConfig::min_dwell);
    integer("bottleneck_window", "loss smoothing window", &RunConfig::bottleneck_window);
    integer("probe_k", "k of the predictivity probe", &RunConfig::probe_k);
    boolean("truth_segments", "train on generator annotations", &RunConfig::truth_segments);
    integer("resolution", "voxel grid resolution R", &RunConfig::resolution);
    real("crop_side", "gaze cube side (m)", &RunConfig::crop_side);
    real("reach_speed", "executor reach speed (m/s)", &RunConfig::reach_speed);
    real("eps_pos", "bottleneck position tolerance (m)", &RunConfig::eps_pos);
    real("eps_rot", "bottleneck rotation tolerance (rad)", &RunConfig::eps_rot);
    real("max_bend", "bezier vector cap relative to the remaining chord", &RunConfig::max_bend);
    integer("chunk", "action chunk length H", &RunConfig::chunk);
    real("progress_threshold", "progress advance threshold", &RunConfig::progress_threshold);
    integer("progress_window", "consecutive progress steps to advance",
            &RunConfig::progress_window);
    integer("gaze_k", "k of the gaze predictor", &RunConfig::gaze_k);
    integer("action_k", "k of the action head", &RunConfig::action_k);
    integer("progress_k", "k of the progress head", &RunConfig::progress_k);
    real("offset_lambda", "ridge lambda of the offset head", &RunConfig::offset_lambda);
    real("bezier_lambda", "ridge lambda of the bezier head", &RunConfig::bezier_lambda);
    real("direct_lambda", "ridge lambda of the direct bottleneck head",
         &RunConfig::direct_lambda);
    integer("global_k", "k of the global reach head", &RunConfig::global_k);
    integer("trials", "trials per condition", &RunConfig::trials);
    u64("seed", "evaluation seed", &RunConfig::seed);
    integer("max_steps", "episode step limit", &RunConfig::max_steps);
    real("eval_noise", "render noise during evaluation (m)", &RunConfig::eval_noise);
    integer("eval_points", "rendered points per frame during evaluation",
            &RunConfig::eval_points);
    integer("workers", "parallel trial workers", &RunConfig::workers);
    str("model_dir", "load trained models from this directory", &RunConfig::model_dir);
    str("output", "output directory", &RunConfig::output);
    return f;
  }();
  return fields;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields())
    if (f.name == key) {
      f.set(c, value);
      return;
    }
  throw Error("config: unknown key '" + key + "'");
}

inline void apply_config_text(RunConfig& c, const std::string& text) {
  for (const auto& [k, v] : detail::read_key_values(text, kConfigMagic, kConfigVersion))
    set_config_value(c, k, v);
}

inline RunConfig load_config(const fs::path& path) {
  RunConfig c;
  apply_config_text(c, detail::read_text(path));
  return c;
}

inline std::string format_config(const RunConfig& c) {
  std::string o = std::string(kConfigMagic) + " " + std::to_string(kConfigVersion) + "\n";
  for (const auto& f : config_fields()) o += f.name + " = " + f.get(c) + "\n";
  return o;
}

// ---------------------------------------------------------------------------
// Parallel map over indices with a deterministic result order.

template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Demonstrations.

inline std::uint64_t demo_seed(std::uint64_t base, int i) {
  return sim::mix_seed(base, static_cast<std::uint64_t>(i));
}

inline dataset::Demonstration generate_demo(const sim::ScenarioSpec& spec,
                                            const sim::ExpertParams& ep, std::uint64_t seed) {
  try {
    return sim::scripted_expert(sim::spawn(spec, sim::Condition::kID, seed), spec, ep, seed);
  } catch (const Error& e) {
    throw StageError("gen-demos", "seed " + std::to_string(seed) + ": " + e.what());
  }
}

inline std::string demo_filename(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "demo_%04d.demo", i);
  return buf;
}

/// Demonstrations either regenerated on demand from seeds or read from a
/// directory of .demo files.
class DemoSource {
 public:
  static DemoSource generated(sim::ScenarioSpec spec, sim::ExpertParams ep, int count,
                              std::uint64_t seed) {
    DemoSource s;
    s.spec_ = std::move(spec);
    s.ep_ = std::move(ep);
    s.count_ = count;
    s.seed_ = seed;
    return s;
  }

  static DemoSource directory(const fs::path& dir) {
    DemoSource s;
    if (!fs::is_directory(dir)) throw Error("demo directory '" + dir.string() + "' not found");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".demo") s.files_.push_back(e.path());
    std::sort(s.files_.begin(), s.files_.end());
    s.count_ = static_cast<int>(s.files_.size());
    if (s.count_ == 0) throw Error("no .demo files in '" + dir.string() + "'");
    return s;
  }

  static DemoSource from_config(const RunConfig& c) {
    return c.demo_dir.empty() ? generated(c.scenario_spec(), c.expert(), c.demos, c.demo_seed)
                              : directory(c.demo_dir);
  }

  int size() const { return count_; }

  dataset::Demonstration get(int i) const {
    if (i < 0 || i >= count_) throw Error("demo index out of range");
    if (!files_.empty()) return dataset::load(files_[static_cast<std::size_t>(i)]);
    return generate_demo(spec_, ep_, demo_seed(seed_, i));
  }

  std::string name(int i) const {
    return files_.empty() ? demo_filename(i).substr(0, 9)
                          : files_[static_cast<std::size_t>(i)].stem().string();
  }

 private:
  sim::ScenarioSpec spec_;
  sim::ExpertParams ep_;
  int count_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<fs::path> files_;
};

/// Writes `count` generated demos to `dir`.
inline void write_demos(const RunConfig& c, const fs::path& dir) {
  const auto spec = c.scenario_spec();
  const auto ep = c.expert();
  fs::create_directories(dir);
  parallel_for(c.demos, c.workers, [&](int i) {
    dataset::save(generate_demo(spec, ep, demo_seed(c.demo_seed, i)), dir / demo_filename(i));
  });
}

// ---------------------------------------------------------------------------
// Segmentation.

/// Acting arm of a segment: the arm with the larger summed translation.
inline Arm infer_acting_arm(const dataset::Demonstration& d, const dataset::Segment& seg) {
  double l = 0.0, r = 0.0;
  for (int t = seg.s; t <= seg.e; ++t) {
    const auto& a = d.frames[static_cast<std::size_t>(t)].expert_action;
    l += a.left.dpos.norm();
    r += a.right.dpos.norm();
  }
  return r > l ? Arm::kRight : Arm::kLeft;
}

struct Segmentation {
  std::vector<dataset::SegmentAnnotation> annotations;  // one per demo
  std::vector<std::vector<dataset::SubtaskTruth>> truth;
  std::vector<std::string> names;
  std::vector<int> last_step;
};

/// Segments every demo: gaze fixations, then predictivity bottlenecks from a
/// probe fitted on the whole dataset. `losses`, when given, receives each
/// demo's per-frame probe loss.
inline Segmentation segment_dataset(const DemoSource& src, const RunConfig& c,
                                    std::vector<std::vector<double>>* losses = nullptr) {
  const auto pc = c.probe_config();
  const auto sp = c.segment_params();
  Segmentation out;
  std::vector<segmentation::ProbeData> data(static_cast<std::size_t>(src.size()));
  std::vector<dataset::Demonstration> stripped(static_cast<std::size_t>(src.size()));
  parallel_for(src.size(), c.workers, [&](int i) {
    auto d = src.get(i);
    data[static_cast<std::size_t>(i)] = segmentation::probe_data(d, pc);
    for (auto& f : d.frames) f.cloud = {};
    stripped[static_cast<std::size_t>(i)] = std::move(d);
  });
  std::unique_ptr<predictors::Regressor> h;
  try {
    h = segmentation::train_bottleneck_probe(data, pc);
  } catch (const Error& e) {
    throw StageError("segment", e.what());
  }
  out.annotations.resize(stripped.size());
  if (losses != nullptr) losses->assign(stripped.size(), {});
  parallel_for(src.size(), c.workers, [&](int i) {
    const auto& d = stripped[static_cast<std::size_t>(i)];
    try {
      std::vector<double> loss = segmentation::predictivity(data[static_cast<std::size_t>(i)], *h);
      out.annotations[static_cast<std::size_t>(i)] =
          c.truth_segments ? dataset::truth_annotation(d) : segmentation::annotate(d, loss, sp);
      if (losses != nullptr) (*losses)[static_cast<std::size_t>(i)] = std::move(loss);
    } catch (const Error& e) {
      throw StageError("segment", "demo " + std::to_string(i) + " (seed " +
                                      std::to_string(d.meta.seed) + "): " + e.what());
    }
  });
  for (int i = 0; i < src.size(); ++i) {
    out.truth.push_back(stripped[static_cast<std::size_t>(i)].meta.truth);
    out.names.push_back(src.name(i));
    out.last_step.push_back(stripped[static_cast<std::size_t>(i)].last_step());
  }
  return out;
}

struct SegmentReport {
  std::string csv;
  std::vector<int> abs_db;  // |b - ground-truth b| per row with ground truth
  int demos = 0;
  int demos_with_expected_count = 0;  // segment count equals ground-truth count

  double quantile(double q) const {
    if (abs_db.empty()) return 0.0;
    std::vector<int> v = abs_db;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  }

  std::string summary() const {
    std::string s = "demos " + std::to_string(demos) + "\n";
    s += "demos_with_expected_segment_count " + std::to_string(demos_with_expected_count) + "\n";
    s += "rows_with_truth " + std::to_string(abs_db.size()) + "\n";
    for (double q : {0.5, 0.9, 0.99, 1.0})
      s += "abs_db_q" + std::to_string(static_cast<int>(q * 100)) + " " + detail::fmt(quantile(q)) +
           "\n";
    return s;
  }
};

/// Per-segment comparison rows (demo, k, s, e, b, gt_b, abs_db); the last two
/// are blank when the demo lacks generator ground truth.
inline SegmentReport report_segments(const Segmentation& seg) {
  SegmentReport r;
  r.csv = "demo,k,s,e,b,gt_b,abs_db\n";
  for (std::size_t i = 0; i < seg.annotations.size(); ++i) {
    ++r.demos;
    const auto& ann = seg.annotations[i];
    const auto& truth = seg.truth[i];
    if (!truth.empty() && truth.size() == ann.segments.size()) ++r.demos_with_expected_count;
    for (std::size_t k = 0; k < ann.segments.size(); ++k) {
      const auto& g = ann.segments[k];
      r.csv += seg.names[i] + "," + std::to_string(k) + "," + std::to_string(g.s) + "," +
               std::to_string(g.e) + "," + std::to_string(g.b) + ",";
      if (k < truth.size()) {
        const int d = std::abs(g.b - truth[k].b);
        r.abs_db.push_back(d);
        r.csv += std::to_string(truth[k].b) + "," + std::to_string(d) + "\n";
      } else {
        r.csv += ",\n";
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainedModels {
  std::vector<policy::PolicyModel> models;  // in config variant order
  Segmentation segmentation;
  int skipped_demos = 0;  // segment count differed from the majority

  const policy::PolicyModel& get(const std::string& variant) const {
    for (const auto& m : models)
      if (m.variant.name == variant) return m;
    throw Error("no trained model for variant '" + variant + "'");
  }
};

inline int majority_segment_count(const Segmentation& seg) {
  std::map<std::size_t, int> counts;
  for (const auto& a : seg.annotations) ++counts[a.segments.size()];
  int best = 0;
  std::size_t n = 0;
  for (const auto& [k, v] : counts)
    if (v > best) {
      best = v;
      n = k;
    }
  return static_cast<int>(n);
}

/// Segments the demos, fits the gaze predictor, then every requested
/// variant's heads in a single pass over the data.
inline TrainedModels train_models(const DemoSource& src, const RunConfig& c) {
  TrainedModels out;
  out.segmentation = segment_dataset(src, c);
  const auto& seg = out.segmentation;
  const int n_seg = majority_segment_count(seg);
  const auto spec = c.scenario_spec();
  const auto pcfg = c.policy_config(spec);

  std::vector<int> used;
  for (int i = 0; i < src.size(); ++i)
    if (static_cast<int>(seg.annotations[static_cast<std::size_t>(i)].segments.size()) == n_seg)
      used.push_back(i);
  out.skipped_demos = src.size() - static_cast<int>(used.size());

  predictors::GazePredictor gaze;
  std::vector<Arm> arms(static_cast<std::size_t>(n_seg), Arm::kLeft);
  try {
    policy::GazeTrainer gt(n_seg, c.gaze_k, pcfg.clusters);
    std::vector<std::vector<int>> arm_votes(static_cast<std::size_t>(n_seg), std::vector<int>(2, 0));
    for (int i : used) {
      const auto d = src.get(i);
      const auto& ann = seg.annotations[static_cast<std::size_t>(i)];
      gt.add_demo(d, ann);
      for (int k = 0; k < n_seg; ++k)
        ++arm_votes[static_cast<std::size_t>(k)][static_cast<std::size_t>(
            infer_acting_arm(d, ann.segments[static_cast<std::size_t>(k)]))];
    }
    gaze = gt.finish();
    for (int k = 0; k < n_seg; ++k)
      arms[static_cast<std::size_t>(k)] =
          arm_votes[static_cast<std::size_t>(k)][1] > arm_votes[static_cast<std::size_t>(k)][0]
              ? Arm::kRight
              : Arm::kLeft;
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("train", std::string("gaze predictor: ") + e.what());
  }

  std::vector<policy::PolicyTrainer> trainers;
  for (const auto& v : c.variants)
    trainers.emplace_back(policy::PolicyVariant::preset(v), pcfg, gaze, arms);
  try {
    for (int i : used) {
      const auto d = src.get(i);
      const auto& ann = seg.annotations[static_cast<std::size_t>(i)];
      const auto trace = policy::predicted_gaze_trace(gaze, d, ann);
      parallel_for(static_cast<int>(trainers.size()), c.workers,
                   [&](int v) { trainers[static_cast<std::size_t>(v)].add_demo(d, ann, &trace); });
    }
    for (auto& t : trainers) out.models.push_back(t.finish());
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("train", e.what());
  }
  return out;
}

inline fs::path model_path(const fs::path& dir, const std::string& variant) {
  return dir / (variant + ".model");
}

inline void save_models(const TrainedModels& t, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& m : t.models) m.save(model_path(dir, m.variant.name));
}

inline TrainedModels load_models(const fs::path& dir, const std::vector<std::string>& variants) {
  TrainedModels t;
  for (const auto& v : variants) {
    auto m = policy::PolicyModel::load(model_path(dir, v));
    if (m.variant.name != v || !m.variant.same_flags(policy::PolicyVariant::preset(v)))
      throw Error("model file for '" + v + "' holds a different variant");
    t.models.push_back(std::move(m));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EpisodeParams {
  int max_steps = 300;
  double noise = 0.001;
  int points = 8000;
  /// Steps run after the task-complete signal so a released box settles.
  int settle_steps = 2;
};

struct TrialLog {
  std::string variant;
  std::string condition;
  int index = 0;
  std::uint64_t seed = 0;
  bool lifted = false;
  bool pile = false;
  bool complete = false;
  int steps = 0;
  int gaze_clamps = 0;
  int workspace_clamps = 0;
  std::vector<double> bottleneck_error;  // first prediction per sub-task, NaN if none

  std::string line() const {
    std::string s = "trial variant=" + variant + " condition=" + condition +
                    " index=" + std::to_string(index) + " seed=" + std::to_string(seed) +
                    " lifted=" + std::to_string(lifted) + " pile=" + std::to_string(pile) +
                    " complete=" + std::to_string(complete) + " steps=" + std::to_string(steps) +
                    " gaze_clamps=" + std::to_string(gaze_clamps) +
                    " workspace_clamps=" + std::to_string(workspace_clamps) + " bottleneck_error=";
    for (std::size_t k = 0; k < bottleneck_error.size(); ++k) {
      if (k) s += ",";
      char buf[32];
      if (std::isnan(bottleneck_error[k])) std::snprintf(buf, sizeof buf, "na");
      else std::snprintf(buf, sizeof buf, "%.4f", bottleneck_error[k]);
      s += buf;
    }
    return s + "\n";
  }
};

/// Reference bottleneck of sub-task k in the scripted PileBox task.
inline Pose7 reference_bottleneck(const sim::World& w, const sim::ScenarioSpec& spec, int k) {
  const sim::ExpertParams ep;
  return k == 0 ? sim::pick_bottleneck(w, ep, spec.gripper_open)
                : sim::place_bottleneck(w, ep, ep.closed_gripper);
}

inline std::uint64_t trial_seed(std::uint64_t base, sim::Condition cond, int i) {
  return sim::mix_seed(sim::mix_seed(base, 0xC0DE + static_cast<std::uint64_t>(cond)),
                       static_cast<std::uint64_t>(i));
}

/// One closed-loop episode from a spawned world.
inline TrialLog run_episode(const policy::PolicyModel& model, const sim::ScenarioSpec& spec,
                            const sim::World& start, const EpisodeParams& p,
                            std::uint64_t render_seed) {
  TrialLog log;
  log.variant = model.variant.name;
  log.bottleneck_error.assign(static_cast<std::size_t>(model.n_seg()),
                              std::numeric_limits<double>::quiet_NaN());
  predictors::WorkspaceBox box;
  box.lo = start.workspace_lo;
  box.hi = start.workspace_hi;
  policy::Executor exec(model, box);
  const CameraModel cam = spec.camera();
  sim::RenderParams rp;
  rp.n_points = p.points;
  rp.noise_sigma = p.noise;
  sim::World w = start;
  int after_complete = 0;
  for (int t = 0; t < p.max_steps; ++t) {
    const PointCloud scene = sim::render(w, cam, rp, sim::mix_seed(render_seed, t));
    policy::StepInfo info;
    const BimanualDelta a = exec.act(scene, w.arm(Arm::kLeft), w.arm(Arm::kRight), &info);
    if (info.bottleneck && std::isnan(log.bottleneck_error[static_cast<std::size_t>(info.i_seg)]))
      log.bottleneck_error[static_cast<std::size_t>(info.i_seg)] =
          (info.bottleneck->position - reference_bottleneck(w, spec, info.i_seg).position).norm();
    w = sim::step(w, a, spec.grasp);
    log.steps = t + 1;
    if (exec.state().complete && ++after_complete > p.settle_steps) break;
  }
  const auto flags = sim::success(w);
  log.lifted = flags.lifted;
  log.pile = flags.pile;
  log.complete = exec.state().complete;
  log.gaze_clamps = exec.state().gaze_clamps;
  log.workspace_clamps = w.clamp_events;
  return log;
}

struct ResultRow {
  std::string variant;
  std::string condition;
  std::string subgoal;  // Lifted | Pile
  int successes = 0;
  int trials = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  std::string csv() const {
    std::string s = "variant,condition,subgoal,successes,trials\n";
    for (const auto& r : rows)
      s += r.variant + "," + r.condition + "," + r.subgoal + "," + std::to_string(r.successes) +
           "," + std::to_string(r.trials) + "\n";
    return s;
  }

  const ResultRow& find(const std::string& variant, const std::string& condition,
                        const std::string& subgoal) const {
    for (const auto& r : rows)
      if (r.variant == variant && r.condition == condition && r.subgoal == subgoal) return r;
    throw Error("no result row for " + variant + "/" + condition + "/" + subgoal);
  }

  double rate(const std::string& variant, const std::string& condition,
              const std::string& subgoal) const {
    const auto& r = find(variant, condition, subgoal);
    return r.trials > 0 ? static_cast<double>(r.successes) / r.trials : 0.0;
  }

  static ResultTable parse_csv(const std::string& text) {
    ResultTable t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "variant,condition,subgoal,successes,trials")
      throw Error("results: bad header");
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      const auto p = detail::split(line, ',');
      if (p.size() != 5) throw Error("results: bad row '" + line + "'");
      t.rows.push_back({p[0], p[1], p[2], detail::parse_number<int>("successes", p[3]),
                        detail::parse_number<int>("trials", p[4])});
    }
    return t;
  }
};

/// Counts per (variant, condition) in the given order.
inline ResultTable aggregate(const std::vector<TrialLog>& logs,
                             const std::vector<std::string>& variants,
                             const std::vector<std::string>& conditions) {
  ResultTable t;
  for (const auto& v : variants)
    for (const auto& c : conditions) {
      ResultRow lifted{v, c, "Lifted", 0, 0};
      ResultRow pile{v, c, "Pile", 0, 0};
      for (const auto& l : logs)
        if (l.variant == v && l.condition == c) {
          ++lifted.trials;
          ++pile.trials;
          lifted.successes += l.lifted;
          pile.successes += l.pile;
        }
      t.rows.push_back(lifted);
      t.rows.push_back(pile);
    }
  return t;
}

struct EvalResult {
  ResultTable table;
  std::vector<TrialLog> logs;  // ordered by variant, condition, trial index
};

/// Runs every (variant, condition, trial). Trial i of a condition uses the
/// same spawned world for every variant.
inline EvalResult evaluate(const TrainedModels& trained, const RunConfig& c) {
  const auto spec = c.scenario_spec();
  EpisodeParams ep;
  ep.max_steps = c.max_steps;
  ep.noise = c.eval_noise;
  ep.points = c.eval_points;

  struct Job {
    const policy::PolicyModel* model;
    sim::Condition cond;
    int index;
  };
  std::vector<Job> jobs;
  for (const auto& v : c.variants)
    for (const auto& cn : c.conditions)
      for (int i = 0; i < c.trials; ++i) jobs.push_back({&trained.get(v), sim::parse_condition(cn), i});

  EvalResult out;
  out.logs.resize(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), c.workers, [&](int j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    const std::uint64_t seed = trial_seed(c.seed, job.cond, job.index);
    try {
      const sim::World start = sim::spawn(spec, job.cond, seed);
      TrialLog log = run_episode(*job.model, spec, start, ep, sim::mix_seed(seed, 0x5EED));
      log.condition = sim::condition_name(job.cond);
      log.index = job.index;
      log.seed = seed;
      out.logs[static_cast<std::size_t>(j)] = std::move(log);
    } catch (const Error& e) {
      throw StageError("eval", "variant " + job.model->variant.name + ", condition " +
                                   sim::condition_name(job.cond) + ", seed " +
                                   std::to_string(seed) + ": " + e.what());
    }
  });
  out.table = aggregate(out.logs, c.variants, c.conditions);
  return out;
}

inline std::string format_logs(const std::vector<TrialLog>& logs) {
  std::string s;
  for (const auto& l : logs) s += l.line();
  return s;
}

/// Writes results.csv, trials.log, and config.txt to the output directory.
inline void write_eval_outputs(const EvalResult& r, const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  detail::write_text(dir / "results.csv", r.table.csv());
  detail::write_text(dir / "trials.log", format_logs(r.logs));
  detail::write_text(dir / "config.txt", format_config(c));
}

/// Training (or loading) plus evaluation.
inline EvalResult run_pipeline(const RunConfig& c) {
  c.validate();
  const TrainedModels trained = c.model_dir.empty() ? train_models(DemoSource::from_config(c), c)
                                                    : load_models(c.model_dir, c.variants);
  EvalResult r = evaluate(trained, c);
  write_eval_outputs(r, c, c.output);
  return r;
}

// ---------------------------------------------------------------------------
// Report linter.

/// Parses "key=value" tokens of one trial log line.
inline std::map<std::string, std::string> parse_log_line(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string tok;
  in >> tok;
  if (tok != "trial") throw Error("trials.log: expected 'trial' record");
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw Error("trials.log: malformed token '" + tok + "'");
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

/// Problems found when recounting trials.log against results.csv.
inline std::vector<std::string> lint_report(const fs::path& dir) {
  std::vector<std::string> problems;
  const ResultTable table = ResultTable::parse_csv(detail::read_text(dir / "results.csv"));
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<int, int>> counts;
  std::istringstream in(detail::read_text(dir / "trials.log"));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::map<std::string, std::string> kv;
    try {
      kv = parse_log_line(line);
    } catch (const Error& e) {
      problems.push_back("line " + std::to_string(lineno) + ": " + e.what());
      continue;
    }
    for (const char* key : {"variant", "condition", "lifted", "pile"})
      if (!kv.count(key)) problems.push_back("line " + std::to_string(lineno) + ": missing " + key);
    if (!kv.count("variant") || !kv.count("condition")) continue;
    for (const char* goal : {"lifted", "pile"}) {
      auto& [s, n] = counts[{kv["variant"], kv["condition"], goal == std::string("lifted") ? "Lifted" : "Pile"}];
      ++n;
      s += kv[goal] == "1";
    }
  }
  for (const auto& r : table.rows) {
    if (r.successes > r.trials || r.successes < 0)
      problems.push_back("row " + r.variant + "/" + r.condition + "/" + r.subgoal +
                         ": successes exceed trials");
    const auto it = counts.find({r.variant, r.condition, r.subgoal});
    const std::pair<int, int> got = it == counts.end() ? std::pair<int, int>{0, 0} : it->second;
    if (got.first != r.successes || got.second != r.trials)
      problems.push_back("row " + r.variant + "/" + r.condition + "/" + r.subgoal + ": table " +
                         std::to_string(r.successes) + "/" + std::to_string(r.trials) +
                         " but log recount " + std::to_string(got.first) + "/" +
                         std::to_string(got.second));
    if (it != counts.end()) counts.erase(it);
  }
  for (const auto& [key, v] : counts)
    problems.push_back("log has trials for " + std::get<0>(key) + "/" + std::get<1>(key) + "/" +
                       std::get<2>(key) + " missing from the table");
  return problems;
}

/// Human-readable success-rate table.
inline std::string format_table(const ResultTable& t) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-11s %-7s %9s %7s\n", "variant", "condition", "subgoal",
                "successes", "rate");
  s += buf;
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-11s %-7s %4d/%-4d %6.1f%%\n", r.variant.c_str(),
                  r.condition.c_str(), r.subgoal.c_str(), r.successes, r.trials,
                  r.trials ? 100.0 * r.successes / r.trials : 0.0);
    s += buf;
  }
  return s;
}

}  // namespace gazebot::pipeline
