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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gazebot/bezier.hpp"
#include "gazebot/geometry.hpp"

namespace gazebot::dataset {

/// One 10 Hz step of a demonstration.
struct Frame {
  int t = 0;
  PointCloud cloud;
  Pose7 left;
  Pose7 right;
  Vec2 gaze_pixel = Vec2::Zero();
  Vec3 gaze_3d = Vec3::Zero();
  BimanualDelta expert_action;  // zero on the last frame

  const Pose7& pose(Arm a) const { return a == Arm::kLeft ? left : right; }
  const PoseDelta7& action(Arm a) const {
    return a == Arm::kLeft ? expert_action.left : expert_action.right;
  }

  bool operator==(const Frame& o) const {
    return t == o.t && cloud == o.cloud && left == o.left && right == o.right &&
           gaze_pixel == o.gaze_pixel && gaze_3d == o.gaze_3d && expert_action == o.expert_action;
  }
};

/// Generator ground truth for one sub-task.
struct SubtaskTruth {
  int s = 0;
  int e = 0;
  int b = 0;
  Arm arm = Arm::kLeft;
  PoseDelta7 bezier_vector;  // planted reach shape

  bool operator==(const SubtaskTruth& o) const {
    return s == o.s && e == o.e && b == o.b && arm == o.arm && bezier_vector == o.bezier_vector;
  }
};

struct DemoMeta {
  std::string task = "pilebox";
  std::uint64_t seed = 0;
  std::string scenario = "pilebox-default";
  std::vector<SubtaskTruth> truth;  // empty when unknown

  bool operator==(const DemoMeta& o) const {
    return task == o.task && seed == o.seed && scenario == o.scenario && truth == o.truth;
  }
};

struct Demonstration {
  std::vector<Frame> frames;
  DemoMeta meta;

  int last_step() const { return static_cast<int>(frames.size()) - 1; }
  bool operator==(const Demonstration& o) const { return frames == o.frames && meta == o.meta; }
};

struct Segment {
  int s = 0;
  int e = 0;
  int b = 0;
  bool operator==(const Segment& o) const { return s == o.s && e == o.e && b == o.b; }
};

/// (s_k, e_k, b_k) per sub-task; partitions [0, T].
struct SegmentAnnotation {
  std::vector<Segment> segments;

  bool operator==(const SegmentAnnotation& o) const { return segments == o.segments; }

  /// Throws on the first violated partition invariant.
  void validate(int last_step) const {
    if (segments.empty()) throw Error("annotation has no segments");
    if (segments.front().s != 0) throw Error("annotation: s_0 must be 0");
    if (segments.back().e != last_step) throw Error("annotation: e_K must equal T");
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const Segment& g = segments[k];
      if (!(g.s <= g.b && g.b <= g.e))
        throw Error("annotation: segment " + std::to_string(k) + " violates s <= b <= e");
      if (k + 1 < segments.size() && segments[k + 1].s != g.e + 1)
        throw Error("annotation: segment " + std::to_string(k + 1) + " does not start at e+1");
    }
  }
};

inline SegmentAnnotation truth_annotation(const Demonstration& d) {
  SegmentAnnotation a;
  for (const auto& t : d.meta.truth) a.segments.push_back({t.s, t.e, t.b});
  return a;
}

inline Arm acting_arm(const Demonstration& d, std::size_t k) {
  return k < d.meta.truth.size() ? d.meta.truth[k].arm : Arm::kLeft;
}

// ---------------------------------------------------------------------------
// Serialization.
//
// Text header, one text line per frame followed by a length-prefixed binary
// block of little-endian float32 point triplets (and int32 labels when
// present). Scalars in text use the shortest round-trip decimal form.

inline constexpr int kDemoFormatVersion = 1;
inline constexpr std::string_view kDemoMagic = "GAZEBOT-DEMO";
inline constexpr std::string_view kAnnotationMagic = "GAZEBOT-ANNOTATION";

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, ptr);
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

/// Cursor over an in-memory file. Every accessor names the field it expects
/// so malformed input is reported precisely.
class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  bool at_end() const { return pos_ >= data_.size(); }

  std::string_view line(const char* field) {
    if (at_end()) throw Error("unexpected end of input (reading " + std::string(field) + ")");
    const auto nl = data_.find('\n', pos_);
    if (nl == std::string::npos)
      throw Error("unexpected end of input (reading " + std::string(field) + ")");
    std::string_view l(data_.data() + pos_, nl - pos_);
    pos_ = nl + 1;
    return l;
  }

  const unsigned char* bytes(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n)
      throw Error("unexpected end of input (reading " + std::string(field) + ")");
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
    pos_ += n;
    return p;
  }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

/// Whitespace tokenizer over one text line.
class Tokens {
 public:
  explicit Tokens(std::string_view l) {
    std::size_t i = 0;
    while (i < l.size()) {
      while (i < l.size() && l[i] == ' ') ++i;
      std::size_t j = i;
      while (j < l.size() && l[j] != ' ') ++j;
      if (j > i) toks_.push_back(l.substr(i, j - i));
      i = j;
    }
  }

  std::string_view word(const char* field) {
    if (idx_ >= toks_.size()) throw Error("invalid field '" + std::string(field) + "': missing");
    return toks_[idx_++];
  }

  void expect(std::string_view key) {
    const auto w = word(std::string(key).c_str());
    if (w != key)
      throw Error("invalid field '" + std::string(key) + "': found '" + std::string(w) + "'");
  }

  double number(const char* field) {
    const auto w = word(field);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || ptr != w.data() + w.size() || !std::isfinite(v))
      throw Error("invalid field '" + std::string(field) + "': '" + std::string(w) + "'");
    return v;
  }

  template <typename Int>
  Int integer(const char* field) {
    const auto w = word(field);
    Int v{};
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || ptr != w.data() + w.size())
      throw Error("invalid field '" + std::string(field) + "': '" + std::string(w) + "'");
    return v;
  }

  void finish(const char* context) const {
    if (idx_ != toks_.size())
      throw Error("invalid field '" + std::string(context) + "': trailing tokens");
  }

 private:
  std::vector<std::string_view> toks_;
  std::size_t idx_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary sibling file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void put_pose(std::string& s, const char* key, const Pose7& p) {
  s += ' ';
  s += key;
  for (double v : {p.position.x(), p.position.y(), p.position.z(), p.orientation.w(),
                   p.orientation.x(), p.orientation.y(), p.orientation.z(), p.gripper}) {
    s += ' ';
    s += fmt_double(v);
  }
}

inline void put_delta(std::string& s, const char* key, const PoseDelta7& d) {
  s += ' ';
  s += key;
  const Vec7 v = d.to_vector();
  for (int i = 0; i < kPoseDim; ++i) {
    s += ' ';
    s += fmt_double(v[i]);
  }
}

inline Pose7 get_pose(Tokens& tk, const char* key) {
  tk.expect(key);
  Pose7 p;
  p.position.x() = tk.number(key);
  p.position.y() = tk.number(key);
  p.position.z() = tk.number(key);
  const double w = tk.number(key), x = tk.number(key), y = tk.number(key), z = tk.number(key);
  p.orientation = Quat(w, x, y, z);
  p.gripper = tk.number(key);
  return p;
}

inline PoseDelta7 get_delta(Tokens& tk, const char* key) {
  tk.expect(key);
  Vec7 v;
  for (int i = 0; i < kPoseDim; ++i) v[i] = tk.number(key);
  return PoseDelta7::from_vector(v);
}

inline Arm parse_arm(std::string_view w) {
  if (w == "left") return Arm::kLeft;
  if (w == "right") return Arm::kRight;
  throw Error("invalid field 'arm': '" + std::string(w) + "'");
}

inline void check_version(Tokens& tk, std::string_view magic, int expected) {
  const auto m = tk.word("magic");
  if (m != magic) throw Error("invalid field 'magic': '" + std::string(m) + "'");
  const int version = tk.integer<int>("version");
  if (version != expected)
    throw Error("version mismatch: file has " + std::to_string(version) + ", expected " +
                std::to_string(expected));
}

}  // namespace detail

inline std::string serialize(const Demonstration& demo) {
  using detail::fmt_double;
  std::string s;
  s += std::string(kDemoMagic) + " " + std::to_string(kDemoFormatVersion) + "\n";
  s += "task " + demo.meta.task + "\n";
  s += "seed " + std::to_string(demo.meta.seed) + "\n";
  s += "scenario " + demo.meta.scenario + "\n";
  s += "frames " + std::to_string(demo.frames.size()) + "\n";
  s += "subtasks " + std::to_string(demo.meta.truth.size()) + "\n";
  for (std::size_t k = 0; k < demo.meta.truth.size(); ++k) {
    const auto& t = demo.meta.truth[k];
    s += "subtask " + std::to_string(k) + " arm " + arm_name(t.arm) + " s " +
         std::to_string(t.s) + " e " + std::to_string(t.e) + " b " + std::to_string(t.b);
    detail::put_delta(s, "bezier", t.bezier_vector);
    s += "\n";
  }
  s += "end_header\n";
  for (const Frame& f : demo.frames) {
    if (f.cloud.has_labels() && f.cloud.labels.size() != f.cloud.points.size())
      throw Error("label count does not match point count at frame " + std::to_string(f.t));
    s += "frame " + std::to_string(f.t);
    detail::put_pose(s, "left", f.left);
    detail::put_pose(s, "right", f.right);
    s += " gaze_pixel " + fmt_double(f.gaze_pixel.x()) + " " + fmt_double(f.gaze_pixel.y());
    s += " gaze_3d " + fmt_double(f.gaze_3d.x()) + " " + fmt_double(f.gaze_3d.y()) + " " +
         fmt_double(f.gaze_3d.z());
    detail::put_delta(s, "act_left", f.expert_action.left);
    detail::put_delta(s, "act_right", f.expert_action.right);
    s += " points " + std::to_string(f.cloud.size());
    s += " labels " + std::string(f.cloud.has_labels() ? "1" : "0") + "\n";
    // Coordinates are stored at float32 precision.
    for (const Vec3& p : f.cloud.points)
      for (int i = 0; i < 3; ++i) {
        const float v = static_cast<float>(p[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::put_u32(s, bits);
      }
    for (int l : f.cloud.labels) detail::put_u32(s, static_cast<std::uint32_t>(l));
    s += "\n";
  }
  s += "end\n";
  return s;
}

inline Demonstration deserialize(std::string bytes) {
  detail::Reader rd(std::move(bytes));
  Demonstration d;
  {
    detail::Tokens tk(rd.line("magic"));
    detail::check_version(tk, kDemoMagic, kDemoFormatVersion);
  }
  auto keyed = [&](const char* key) {
    detail::Tokens tk(rd.line(key));
    tk.expect(key);
    return tk;
  };
  {
    auto tk = keyed("task");
    d.meta.task = std::string(tk.word("task"));
  }
  {
    auto tk = keyed("seed");
    d.meta.seed = tk.integer<std::uint64_t>("seed");
  }
  {
    auto tk = keyed("scenario");
    d.meta.scenario = std::string(tk.word("scenario"));
  }
  std::size_t n_frames = 0, n_subtasks = 0;
  {
    auto tk = keyed("frames");
    n_frames = tk.integer<std::size_t>("frames");
  }
  {
    auto tk = keyed("subtasks");
    n_subtasks = tk.integer<std::size_t>("subtasks");
  }
  for (std::size_t k = 0; k < n_subtasks; ++k) {
    auto tk = keyed("subtask");
    if (tk.integer<std::size_t>("subtask") != k) throw Error("invalid field 'subtask': index");
    SubtaskTruth t;
    tk.expect("arm");
    t.arm = detail::parse_arm(tk.word("arm"));
    tk.expect("s");
    t.s = tk.integer<int>("s");
    tk.expect("e");
    t.e = tk.integer<int>("e");
    tk.expect("b");
    t.b = tk.integer<int>("b");
    t.bezier_vector = detail::get_delta(tk, "bezier");
    tk.finish("subtask");
    d.meta.truth.push_back(t);
  }
  {
    detail::Tokens tk(rd.line("end_header"));
    tk.expect("end_header");
  }
  d.frames.reserve(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    detail::Tokens tk(rd.line("frame"));
    Frame f;
    tk.expect("frame");
    f.t = tk.integer<int>("frame");
    f.left = detail::get_pose(tk, "left");
    f.right = detail::get_pose(tk, "right");
    tk.expect("gaze_pixel");
    f.gaze_pixel.x() = tk.number("gaze_pixel");
    f.gaze_pixel.y() = tk.number("gaze_pixel");
    tk.expect("gaze_3d");
    for (int j = 0; j < 3; ++j) f.gaze_3d[j] = tk.number("gaze_3d");
    f.expert_action.left = detail::get_delta(tk, "act_left");
    f.expert_action.right = detail::get_delta(tk, "act_right");
    tk.expect("points");
    const auto n = tk.integer<std::size_t>("points");
    tk.expect("labels");
    const int has_labels = tk.integer<int>("labels");
    if (has_labels != 0 && has_labels != 1) throw Error("invalid field 'labels'");
    tk.finish("frame");
    const unsigned char* p = rd.bytes(n * 12, "points");
    f.cloud.points.resize(n);
    for (std::size_t j = 0; j < n; ++j)
      for (int c = 0; c < 3; ++c) {
        const std::uint32_t bits = detail::get_u32(p + 12 * j + 4 * c);
        float v;
        std::memcpy(&v, &bits, 4);
        if (!std::isfinite(v)) throw Error("invalid field 'points': non-finite coordinate");
        f.cloud.points[j][c] = static_cast<double>(v);
      }
    if (has_labels == 1) {
      const unsigned char* lp = rd.bytes(n * 4, "labels");
      f.cloud.labels.resize(n);
      for (std::size_t j = 0; j < n; ++j)
        f.cloud.labels[j] = static_cast<int>(detail::get_u32(lp + 4 * j));
    }
    if (*rd.bytes(1, "frame terminator") != '\n')
      throw Error("invalid field 'frame terminator' at frame " + std::to_string(i));
    d.frames.push_back(std::move(f));
  }
  {
    detail::Tokens tk(rd.line("end"));
    tk.expect("end");
  }
  if (d.frames.size() < 2) throw Error("invalid field 'frames': a demonstration needs >= 2");
  for (std::size_t i = 0; i < d.frames.size(); ++i)
    if (d.frames[i].t != static_cast<int>(i))
      throw Error("invalid field 'frame': step indices must be contiguous from 0");
  if (!d.meta.truth.empty()) truth_annotation(d).validate(d.last_step());
  return d;
}

inline void save(const Demonstration& demo, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize(demo));
}

inline Demonstration load(const std::filesystem::path& path) {
  return deserialize(detail::read_file(path));
}

/// Rounds every cloud coordinate to float32 so the demonstration survives a
/// save/load cycle bit-exactly.
inline void quantize_clouds(Demonstration& demo) {
  for (Frame& f : demo.frames) {
    double* x = f.cloud.points.empty() ? nullptr : f.cloud.points.front().data();
    const std::size_t n = 3 * f.cloud.points.size();
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(static_cast<float>(x[i]));
  }
}

// ---------------------------------------------------------------------------
// Annotation files.

inline std::string serialize(const SegmentAnnotation& ann, int last_step) {
  std::string s = std::string(kAnnotationMagic) + " " + std::to_string(kDemoFormatVersion) + "\n";
  s += "frames " + std::to_string(last_step + 1) + "\n";
  s += "segments " + std::to_string(ann.segments.size()) + "\n";
  for (std::size_t k = 0; k < ann.segments.size(); ++k) {
    const auto& g = ann.segments[k];
    s += "segment " + std::to_string(k) + " s " + std::to_string(g.s) + " e " +
         std::to_string(g.e) + " b " + std::to_string(g.b) + "\n";
  }
  return s;
}

inline void save_annotation(const SegmentAnnotation& ann, int last_step,
                            const std::filesystem::path& path) {
  ann.validate(last_step);
  detail::write_file_atomic(path, serialize(ann, last_step));
}

inline SegmentAnnotation load_annotation(const std::filesystem::path& path) {
  detail::Reader rd(detail::read_file(path));
  {
    detail::Tokens tk(rd.line("magic"));
    detail::check_version(tk, kAnnotationMagic, kDemoFormatVersion);
  }
  int frames = 0;
  std::size_t n = 0;
  {
    detail::Tokens tk(rd.line("frames"));
    tk.expect("frames");
    frames = tk.integer<int>("frames");
  }
  {
    detail::Tokens tk(rd.line("segments"));
    tk.expect("segments");
    n = tk.integer<std::size_t>("segments");
  }
  SegmentAnnotation ann;
  for (std::size_t k = 0; k < n; ++k) {
    detail::Tokens tk(rd.line("segment"));
    tk.expect("segment");
    if (tk.integer<std::size_t>("segment") != k) throw Error("invalid field 'segment': index");
    Segment g;
    tk.expect("s");
    g.s = tk.integer<int>("s");
    tk.expect("e");
    g.e = tk.integer<int>("e");
    tk.expect("b");
    g.b = tk.integer<int>("b");
    tk.finish("segment");
    ann.segments.push_back(g);
  }
  ann.validate(frames - 1);
  return ann;
}

// ---------------------------------------------------------------------------

/// Acting-arm poses over the reaching phase [s_k, b_k - 1], with uniform-in-time
/// parameters.
inline std::vector<bezier::Sample> extract_reaching_segment(const Demonstration& demo,
                                                            const SegmentAnnotation& ann,
                                                            std::size_t k) {
  ann.validate(demo.last_step());
  if (k >= ann.segments.size()) throw Error("sub-task index out of range");
  const Segment& g = ann.segments[k];
  if (g.b == g.s) throw Error("degenerate reaching phase");
  const Arm arm = acting_arm(demo, k);
  std::vector<double> ts;
  for (int t = g.s; t <= g.b - 1; ++t) ts.push_back(static_cast<double>(t));
  std::vector<bezier::Sample> out;
  if (ts.size() == 1) {
    out.emplace_back(0.0, demo.frames[g.s].pose(arm));
    return out;
  }
  const auto s = bezier::parameterize(ts);
  for (std::size_t i = 0; i < ts.size(); ++i)
    out.emplace_back(s[i], demo.frames[g.s + static_cast<int>(i)].pose(arm));
  return out;
}

/// Invariant checks over a loaded demonstration; one message per violation.
inline std::vector<std::string> lint(const Demonstration& demo, double tol = 1e-9) {
  std::vector<std::string> issues;
  if (demo.frames.size() < 2) issues.push_back("fewer than 2 frames");
  for (std::size_t i = 0; i < demo.frames.size(); ++i) {
    const Frame& f = demo.frames[i];
    const std::string at = "frame " + std::to_string(i) + ": ";
    if (f.t != static_cast<int>(i)) issues.push_back(at + "non-contiguous step index");
    for (const Vec3& p : f.cloud.points)
      if (!p.allFinite()) {
        issues.push_back(at + "non-finite point");
        break;
      }
    if (f.cloud.has_labels() && f.cloud.labels.size() != f.cloud.points.size())
      issues.push_back(at + "label count mismatch");
    for (Arm arm : {Arm::kLeft, Arm::kRight}) {
      const Pose7& p = f.pose(arm);
      if (std::abs(p.orientation.norm() - 1.0) > 1e-6)
        issues.push_back(at + arm_name(arm) + " orientation not unit");
      const PoseDelta7& a = f.action(arm);
      if (i + 1 == demo.frames.size()) {
        if (a.to_vector().cwiseAbs().maxCoeff() != 0.0)
          issues.push_back(at + arm_name(arm) + " last action must be zero");
        continue;
      }
      const Pose7& next = demo.frames[i + 1].pose(arm);
      try {
        const Pose7 reached = compose(p, a, GripperLimits{1e300});
        const double dp = (reached.position - next.position).norm();
        const double dr = rotation_distance(reached.orientation, next.orientation);
        const double dg = std::abs(reached.gripper - next.gripper);
        if (dp > tol || dr > tol || dg > tol)
          issues.push_back(at + arm_name(arm) + " expert action inconsistent with next pose");
      } catch (const Error& e) {
        issues.push_back(at + e.what());
      }
    }
  }
  if (!demo.meta.truth.empty()) {
    try {
      truth_annotation(demo).validate(demo.last_step());
    } catch (const Error& e) {
      issues.push_back(std::string("ground truth: ") + e.what());
    }
  }
  return issues;
}

}  // namespace gazebot::dataset
