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
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Arguments select a subset, e.g.
// `gazebot_acceptance 1 2 4`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include "gazebot/pipeline.hpp"
#include "test_util.hpp"

namespace gazebot {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using testing::aa_quat;
using testing::quat_angle_between;
using testing::random_pose;
using testing::random_vec;

// Tolerances.
constexpr double kCropEquivarianceTol = 1e-12;
constexpr double kRoundTripTol = 1e-9;
constexpr double kProjectionTol = 1e-9;
constexpr double kGeometrySeconds = 5.0;
constexpr int kGeometryCases = 1000;

constexpr double kEndpointTol = 1e-9;
constexpr double kPlantedTol = 1e-6;
constexpr double kNoisyTol = 0.002;
constexpr double kNoiseSigma = 0.001;
constexpr int kNoisySamples = 50;
constexpr double kFitTranslationTol = 1e-9;
constexpr double kBezierSeconds = 5.0;

constexpr int kSegmentationDemos = 100;
constexpr double kTwoSegmentFraction = 0.99;
constexpr double kBottleneckP90 = 2.0;
constexpr double kSegmentationSeconds = 120.0;

constexpr double kShiftTol = 1e-12;

constexpr int kTrials = 50;
constexpr double kIdLifted = 0.90;
constexpr double kIdPile = 0.85;
constexpr double kIdSeconds = 600.0;
constexpr double kOverDirect = 0.20;
constexpr double kOverDaa = 0.30;
constexpr double kOodPile = 0.60;
constexpr double kOodSeconds = 900.0;
constexpr double kOverPlanar = 0.15;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pct(double r) { return fmt("%.0f%%", 100.0 * r); }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome geometry_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2026);
  double crop_err = 0.0, trip_err = 0.0, proj_err = 0.0;
  int cases = 0;
  for (int i = 0; i < kGeometryCases; ++i) {
    PointCloud c;
    for (int j = 0; j < 200; ++j) c.points.push_back(random_vec(rng, 0.2));
    const Vec3 gaze = random_vec(rng, 0.05);
    const Vec3 v = random_vec(rng, 0.5);
    PointCloud moved = c;
    for (Vec3& p : moved.points) p += v;
    const GazeCloud a = crop_gaze_cube(c, gaze);
    const GazeCloud b = crop_gaze_cube(moved, gaze + v);
    std::vector<Vec3> ia, ib;
    for (const Vec3& p : a.points)
      if (p.cwiseAbs().maxCoeff() < 0.1 - 1e-9) ia.push_back(p);
    for (const Vec3& p : b.points)
      if (p.cwiseAbs().maxCoeff() < 0.1 - 1e-9) ib.push_back(p);
    if (ia.size() != ib.size()) return {false, "crop membership differs under translation"};
    for (std::size_t k = 0; k < ia.size(); ++k) crop_err = std::max(crop_err, (ia[k] - ib[k]).norm());

    const Pose7 p = random_pose(rng), q = random_pose(rng);
    if (quat_angle_between(p.orientation, q.orientation) < std::numbers::pi - 1e-3) {
      const Pose7 r = compose(p, delta_between(p, q), GripperLimits{1e9});
      trip_err = std::max({trip_err, (r.position - q.position).norm(),
                           quat_angle_between(r.orientation, q.orientation),
                           std::abs(r.gripper - q.gripper)});
    }

    const CameraModel cam = CameraModel::look_at(Vec3(0.0, -0.75, 0.65) + random_vec(rng, 0.1), Vec3::Zero());
    const Vec3 w = random_vec(rng, 0.4);
    const Projection pr = project(w, cam);
    proj_err = std::max(proj_err, (backproject(pr.pixel, pr.depth, cam) - w).norm());
    ++cases;
  }
  const double secs = seconds_since(t0);
  const bool pass = crop_err <= kCropEquivarianceTol && trip_err <= kRoundTripTol &&
                    proj_err <= kProjectionTol && secs < kGeometrySeconds;
  return {pass, std::to_string(cases) + " cases; crop " + fmt("%.1e", crop_err) + " round-trip " +
                    fmt("%.1e", trip_err) + " projection " + fmt("%.1e", proj_err) + "; " +
                    fmt("%.2fs", secs)};
}

// ---------------------------------------------------------------------------

Pose7 reach_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> g(0.0, 1.0);
  return {random_vec(rng, 0.4), aa_quat(testing::random_rotvec(rng, 1.0)), g(rng)};
}

PoseDelta7 reach_vector(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> g(-0.2, 0.2);
  return {random_vec(rng, 0.1), testing::random_rotvec(rng, 0.3), g(rng)};
}

std::vector<bezier::Sample> sample_reach(const bezier::BezierReach& r, int n) {
  std::vector<bezier::Sample> out;
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    out.emplace_back(s, bezier::eval(r, s));
  }
  return out;
}

Outcome bezier_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  double end_err = 0.0, planted_err = 0.0, shift_err = 0.0;
  bool start_exact = true;
  for (int i = 0; i < 1000; ++i) {
    const bezier::BezierReach r{reach_pose(rng), reach_pose(rng), reach_vector(rng)};
    start_exact = start_exact && bezier::eval(r, 0.0) == r.start;
    const Pose7 e = bezier::eval(r, 1.0);
    end_err = std::max({end_err, (e.position - r.end.position).norm(),
                        quat_angle_between(e.orientation, r.end.orientation),
                        std::abs(e.gripper - r.end.gripper)});
    if (i < 200) {
      auto samples = sample_reach(r, 20);
      const auto a = bezier::fit(samples).bezier_vector;
      planted_err = std::max(planted_err, (a.to_vector() - r.bezier_vector.to_vector()).norm());
      const Vec3 v = random_vec(rng, 1.0);
      for (auto& s : samples) s.second.position += v;
      shift_err = std::max(shift_err, (bezier::fit(samples).bezier_vector.to_vector() - a.to_vector()).norm());
    }
  }
  std::mt19937_64 noisy_rng(8);
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  const bezier::BezierReach r{reach_pose(noisy_rng), reach_pose(noisy_rng), reach_vector(noisy_rng)};
  auto samples = sample_reach(r, kNoisySamples);
  for (std::size_t i = 1; i + 1 < samples.size(); ++i)
    samples[i].second.position += Vec3(noise(noisy_rng), noise(noisy_rng), noise(noisy_rng));
  const double noisy_err = (bezier::fit(samples).bezier_vector.dpos - r.bezier_vector.dpos).norm();
  const double secs = seconds_since(t0);
  const bool pass = start_exact && end_err <= kEndpointTol && planted_err <= kPlantedTol &&
                    noisy_err <= kNoisyTol && shift_err <= kFitTranslationTol &&
                    secs < kBezierSeconds;
  return {pass, std::string("start ") + (start_exact ? "exact" : "inexact") + ", end " +
                    fmt("%.1e", end_err) + ", planted " + fmt("%.1e", planted_err) + ", noisy " +
                    fmt("%.2f mm", 1000.0 * noisy_err) + ", translation " + fmt("%.1e", shift_err) +
                    "; " + fmt("%.2fs", secs)};
}

// ---------------------------------------------------------------------------

Outcome segmentation_suite() {
  const auto t0 = Clock::now();
  pipeline::RunConfig c;
  c.demos = kSegmentationDemos;
  const auto seg = pipeline::segment_dataset(pipeline::DemoSource::from_config(c), c);
  int two = 0;
  for (const auto& a : seg.annotations) two += a.segments.size() == 2;
  const auto report = pipeline::report_segments(seg);
  const double frac = static_cast<double>(two) / kSegmentationDemos;
  const double p90 = report.quantile(0.9);
  const double secs = seconds_since(t0);
  const bool pass = frac >= kTwoSegmentFraction && p90 <= kBottleneckP90 && secs < kSegmentationSeconds;
  return {pass, std::to_string(two) + "/" + std::to_string(kSegmentationDemos) +
                    " demos with 2 sub-tasks, P90 |db| = " + fmt("%.2f", p90) + " steps; " +
                    fmt("%.1fs", secs)};
}

// ---------------------------------------------------------------------------

/// Trained once for criteria 4 to 8.
struct Shared {
  pipeline::RunConfig config;
  pipeline::TrainedModels trained;
  double train_seconds = 0.0;
};

Shared& shared() {
  static Shared s = [] {
    Shared out;
    out.config.trials = kTrials;
    out.config.seed = 0;
    const auto t0 = Clock::now();
    out.trained = pipeline::train_models(pipeline::DemoSource::from_config(out.config), out.config);
    out.train_seconds = seconds_since(t0);
    std::printf("# trained %zu variants on %d demos in %.1fs (%d skipped)\n",
                out.trained.models.size(), out.config.demos, out.train_seconds,
                out.trained.skipped_demos);
    std::fflush(stdout);
    return out;
  }();
  return s;
}

Vec3 snap(const Vec3& p, double q) { return (p / q).array().round().matrix() * q; }

Outcome bottleneck_invariance() {
  const auto& m = shared().trained.get("gazebot");
  const sim::ScenarioSpec spec;
  const double q = std::ldexp(1.0, -16);
  std::mt19937_64 rng(44);
  int perm_cases = 0, shift_cases = 0;
  bool perm_identical = true, offset_identical = true;
  double shift_err = 0.0;
  for (int i = 0; i < 40; ++i) {
    const auto cond = i % 2 == 0 ? sim::Condition::kID : sim::Condition::kOODBoth;
    const auto w = sim::spawn(spec, cond, 9000 + static_cast<std::uint64_t>(i));
    auto scene = sim::render(w, spec.camera(), {}, static_cast<std::uint64_t>(i));
    for (Vec3& p : scene.points) p = snap(p, q);
    for (int k = 0; k < m.n_seg(); ++k) {
      const Vec3 g = snap(m.gaze.predict(scene, k), q);
      const Pose7 ref = m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], k);
      for (int j = 0; j < 5; ++j) {
        const Pose7 l = random_pose(rng), r = random_pose(rng);
        for (const auto& [a, b] : {std::pair{l, r}, std::pair{r, l}, std::pair{w.arms[1], w.arms[0]}}) {
          const Pose7 p = m.predict_bottleneck(scene, g, a, b, k);
          perm_identical = perm_identical && p.position == ref.position &&
                           p.orientation.coeffs() == ref.orientation.coeffs() && p.gripper == ref.gripper;
          ++perm_cases;
        }
      }
      const Vec3 v = snap(random_vec(rng, 0.3), q);
      PointCloud moved = scene;
      for (Vec3& p : moved.points) p += v;
      const auto& head = *m.subtask(k).offset;
      const predictors::VectorXd o1 = head.predict(m.local_features(scene, g, w.arms[0], w.arms[1]));
      const predictors::VectorXd o2 = head.predict(m.local_features(moved, g + v, w.arms[0], w.arms[1]));
      offset_identical = offset_identical && o1 == o2;
      const Pose7 shifted = m.predict_bottleneck(moved, g + v, w.arms[0], w.arms[1], k);
      shift_err = std::max(shift_err, (shifted.position - ref.position - v).norm());
      offset_identical = offset_identical && shifted.orientation.coeffs() == ref.orientation.coeffs();
      ++shift_cases;
    }
  }
  const bool pass = perm_identical && offset_identical && shift_err <= kShiftTol;
  return {pass, std::to_string(perm_cases) + " arm-pose permutations " +
                    (perm_identical ? "bit-identical" : "DIFFER") + "; " +
                    std::to_string(shift_cases) + " translations: offset " +
                    (offset_identical ? "bit-identical" : "DIFFERS") + ", |shift - v| max " +
                    fmt("%.1e", shift_err)};
}

pipeline::ResultTable run_trials(const std::vector<std::string>& variants,
                                 const std::vector<std::string>& conditions) {
  pipeline::RunConfig c = shared().config;
  c.variants = variants;
  c.conditions = conditions;
  return pipeline::evaluate(shared().trained, c).table;
}

Outcome id_performance() {
  const auto t0 = Clock::now();
  shared();
  const auto t = run_trials({"gazebot"}, {"ID"});
  const double lifted = t.rate("gazebot", "ID", "Lifted");
  const double pile = t.rate("gazebot", "ID", "Pile");
  const double secs = seconds_since(t0);
  const bool pass = lifted >= kIdLifted && pile >= kIdPile && secs < kIdSeconds;
  return {pass, "gazebot ID Lifted " + pct(lifted) + ", Pile " + pct(pile) + " over " +
                    std::to_string(kTrials) + " seeds; " + fmt("%.0fs", secs) + " incl. training"};
}

Outcome ood_ordering() {
  const auto t0 = Clock::now();
  const auto t = run_trials({"gazebot", "ablation4", "daa"}, {"OOD-both"});
  const double g = t.rate("gazebot", "OOD-both", "Pile");
  const double a4 = t.rate("ablation4", "OOD-both", "Pile");
  const double daa = t.rate("daa", "OOD-both", "Pile");
  const double secs = seconds_since(t0);
  const bool pass = g > a4 && g > daa && g - a4 >= kOverDirect - 1e-12 &&
                    g - daa >= kOverDaa - 1e-12 && g >= kOodPile && secs < kOodSeconds;
  return {pass, "OOD-both Pile: gazebot " + pct(g) + ", ablation4 " + pct(a4) + ", daa " +
                    pct(daa) + "; " + fmt("%.0fs", secs)};
}

Outcome planar_ablation() {
  const auto t = run_trials({"gazebot", "ablation1"}, {"OOD-object"});
  const double g = t.rate("gazebot", "OOD-object", "Pile");
  const double a1 = t.rate("ablation1", "OOD-object", "Pile");
  return {g - a1 >= kOverPlanar - 1e-12,
          "OOD-object Pile: gazebot " + pct(g) + ", ablation1 " + pct(a1)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "gazebot_acceptance";
  fs::remove_all(root);
  pipeline::save_models(shared().trained, root / "models");
  pipeline::RunConfig c = shared().config;
  c.model_dir = (root / "models").string();
  c.trials = 2;
  c.seed = 17;
  std::string csv[2], logs[2];
  for (int run = 0; run < 2; ++run) {
    c.output = (root / ("run" + std::to_string(run))).string();
    pipeline::run_pipeline(c);
    csv[run] = pipeline::detail::read_text(fs::path(c.output) / "results.csv");
    logs[run] = pipeline::detail::read_text(fs::path(c.output) / "trials.log");
  }
  const bool same = csv[0] == csv[1] && logs[0] == logs[1] && !csv[0].empty();
  fs::remove_all(root);
  return {same, std::string("results.csv ") + (csv[0] == csv[1] ? "identical" : "DIFFERS") +
                    ", trials.log " + (logs[0] == logs[1] ? "identical" : "DIFFERS") + " across two runs (" +
                    std::to_string(std::count(csv[0].begin(), csv[0].end(), '\n') - 1) + " rows)"};
}

}  // namespace
}  // namespace gazebot

int main(int argc, char** argv) {
  using namespace gazebot;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "geometry properties", geometry_properties},
      {2, "bezier suite", bezier_suite},
      {3, "segmentation oracle", segmentation_suite},
      {4, "bottleneck invariance", bottleneck_invariance},
      {5, "in-distribution success", id_performance},
      {6, "out-of-distribution ordering", ood_ordering},
      {7, "planar-crop ablation", planar_ablation},
      {8, "evaluation determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    try {
      selected.insert(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::fprintf(stderr, "usage: %s [criterion ids...]\n", argv[0]);
      return 1;
    }
  }
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %d %s: %s (%s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 2;
}
