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
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gazebot/pipeline.hpp"
#include "test_util.hpp"

namespace gazebot {
namespace {

using policy::Phase;
using policy::PolicyModel;
using policy::PolicyVariant;

TEST(Preset, FlagsPerName) {
  const auto g = PolicyVariant::preset("gazebot");
  EXPECT_TRUE(g.use_3d_crop);
  EXPECT_FALSE(g.state_in_features);
  EXPECT_FALSE(g.direct_bottleneck);
  EXPECT_FALSE(g.parametric_reach);
  EXPECT_FALSE(PolicyVariant::preset("ablation1").use_3d_crop);
  EXPECT_TRUE(PolicyVariant::preset("ablation3").state_in_features);
  EXPECT_TRUE(PolicyVariant::preset("ablation4").direct_bottleneck);
  EXPECT_TRUE(PolicyVariant::preset("daa").parametric_reach);
  for (const auto& n : policy::preset_names()) {
    EXPECT_EQ(PolicyVariant::preset(n).name, n);
    EXPECT_EQ(PolicyVariant::preset(n).same_flags(g), n == "gazebot");
  }
  EXPECT_THROW(PolicyVariant::preset("gazebot2"), Error);
}

class TrainedPolicies : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    pipeline::RunConfig c;
    c.demos = 12;
    c.demo_seed = 77;
    c.truth_segments = true;
    c.variants = {"gazebot", "ablation3", "daa"};
    trained_ = new pipeline::TrainedModels(
        pipeline::train_models(pipeline::DemoSource::from_config(c), c));
  }
  static void TearDownTestSuite() {
    delete trained_;
    trained_ = nullptr;
  }

  static const PolicyModel& model(const std::string& v) { return trained_->get(v); }

  static sim::World world(std::uint64_t seed, sim::Condition c = sim::Condition::kID) {
    return sim::spawn(sim::ScenarioSpec{}, c, seed);
  }

  static PointCloud scene_of(const sim::World& w) {
    return sim::render(w, sim::ScenarioSpec{}.camera(), {}, 5);
  }

  static predictors::WorkspaceBox box_of(const sim::World& w) {
    predictors::WorkspaceBox b;
    b.lo = w.workspace_lo;
    b.hi = w.workspace_hi;
    return b;
  }

  static inline pipeline::TrainedModels* trained_ = nullptr;
};

TEST_F(TrainedPolicies, BottleneckIgnoresArmPoses) {
  const auto& m = model("gazebot");
  const auto w = world(500);
  const auto scene = scene_of(w);
  const Vec3 g = m.gaze.predict(scene, 0);
  const Pose7 ref = m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], 0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose7 l = testing::random_pose(rng), r = testing::random_pose(rng);
    const Pose7 b = m.predict_bottleneck(scene, g, l, r, 0);
    EXPECT_EQ(b.position, ref.position);
    EXPECT_EQ(b.orientation.coeffs(), ref.orientation.coeffs());
    EXPECT_EQ(b.gripper, ref.gripper);
  }
}

TEST_F(TrainedPolicies, StateVariantBottleneckDependsOnArms) {
  const auto& m = model("ablation3");
  const auto w = world(500);
  const auto scene = scene_of(w);
  const Vec3 g = m.gaze.predict(scene, 0);
  const Pose7 a = m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], 0);
  Pose7 l = w.arms[0];
  l.position += Vec3(0.0, 0.25, 0.1);
  const Pose7 b = m.predict_bottleneck(scene, g, l, w.arms[1], 0);
  EXPECT_GT((a.position - b.position).norm(), 0.0);
}

TEST_F(TrainedPolicies, BottleneckShiftsWithSceneAndGaze) {
  const auto& m = model("gazebot");
  const auto w = world(501);
  auto scene = scene_of(w);
  const double q = std::ldexp(1.0, -16);
  for (Vec3& p : scene.points) p = (p / q).array().round().matrix() * q;
  Vec3 g = m.gaze.predict(scene, 0);
  g = (g / q).array().round().matrix() * q;
  const Vec3 v(0.125, -0.0625, 0.25);
  PointCloud moved = scene;
  for (Vec3& p : moved.points) p += v;
  for (int k = 0; k < m.n_seg(); ++k) {
    const Pose7 a = m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], k);
    const Pose7 b = m.predict_bottleneck(moved, g + v, w.arms[0], w.arms[1], k);
    EXPECT_LE((b.position - a.position - v).norm(), 1e-12);
    EXPECT_EQ(b.orientation.coeffs(), a.orientation.coeffs());
    EXPECT_EQ(b.gripper, a.gripper);
  }
}

TEST_F(TrainedPolicies, ArmAtBottleneckSwitchesOnFirstStep) {
  const auto& m = model("gazebot");
  const auto w = world(502);
  const auto scene = scene_of(w);
  Vec3 g = m.gaze.predict(scene, 0);
  const auto box = box_of(w);
  g = g.cwiseMax(box.lo).cwiseMin(box.hi);
  const Pose7 b = m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], 0);
  policy::Executor exec(m, box);
  policy::StepInfo info;
  exec.act(scene, b, w.arms[1], &info);
  EXPECT_EQ(info.phase, Phase::kGazeCentered);
  EXPECT_EQ(exec.state().phase, Phase::kGazeCentered);
  EXPECT_GE(info.progress, 0.0);
}

TEST_F(TrainedPolicies, ReachEndsWithinChordBudget) {
  const auto& m = model("gazebot");
  for (std::uint64_t seed : {503u, 504u, 505u}) {
    sim::World w = world(seed);
    const auto scene = scene_of(w);
    policy::Executor exec(m, box_of(w));
    std::optional<Pose7> target;
    int reach_steps = 0;
    for (int t = 0; t < 200 && exec.state().phase == Phase::kReaching; ++t) {
      policy::StepInfo info;
      const auto a = exec.act(scene, w.arms[0], w.arms[1], &info);
      if (!target) target = info.bottleneck;
      if (info.phase == Phase::kReaching) ++reach_steps;
      w = sim::step(w, a, {});
    }
    ASSERT_TRUE(target.has_value());
    const double chord = (target->position - world(seed).arms[0].position).norm();
    const int budget = static_cast<int>(std::ceil(chord / (m.config.reach_speed * m.config.dt))) + 5;
    EXPECT_EQ(exec.state().phase, Phase::kGazeCentered) << "seed " << seed;
    EXPECT_LE(reach_steps, budget) << "seed " << seed;
  }
}

TEST_F(TrainedPolicies, PhaseNeverReturnsToReachingWithinSubtask) {
  const auto& m = model("gazebot");
  const sim::ScenarioSpec spec;
  sim::World w = world(506);
  policy::Executor exec(m, box_of(w));
  int last_seg = 0;
  bool centered = false;
  for (int t = 0; t < 150 && !exec.state().complete; ++t) {
    policy::StepInfo info;
    const auto a = exec.act(sim::render(w, spec.camera(), {}, 100 + t), w.arms[0], w.arms[1], &info);
    ASSERT_GE(info.i_seg, last_seg);
    if (info.i_seg != last_seg) centered = false;
    if (centered) EXPECT_EQ(info.phase, Phase::kGazeCentered) << "step " << t;
    centered = centered || info.phase == Phase::kGazeCentered;
    last_seg = info.i_seg;
    w = sim::step(w, a, spec.grasp);
  }
}

TEST_F(TrainedPolicies, StateVariantFirstActionTracksArmPose) {
  const auto& m = model("ablation3");
  const auto w = world(507);
  const auto ood = world(507, sim::Condition::kOODArm);
  const auto scene = scene_of(w);
  policy::Executor e1(m, box_of(w)), e2(m, box_of(w));
  policy::StepInfo i1, i2;
  e1.act(scene, w.arms[0], w.arms[1], &i1);
  e2.act(scene, ood.arms[0], ood.arms[1], &i2);
  ASSERT_TRUE(i1.bottleneck && i2.bottleneck);
  EXPECT_GT((i1.bottleneck->position - i2.bottleneck->position).norm(), 1e-6);
}

TEST_F(TrainedPolicies, ParametricReachHasNoBottleneck) {
  const auto& m = model("daa");
  const auto w = world(508);
  policy::Executor exec(m, box_of(w));
  policy::StepInfo info;
  exec.act(scene_of(w), w.arms[0], w.arms[1], &info);
  EXPECT_FALSE(info.bottleneck.has_value());
}

TEST_F(TrainedPolicies, SaveLoadRoundTrip) {
  for (const auto& v : {"gazebot", "ablation3", "daa"}) {
    const auto& m = model(v);
    const std::string bytes = m.serialize();
    const PolicyModel back = PolicyModel::deserialize(bytes);
    EXPECT_EQ(back.serialize(), bytes);
    EXPECT_TRUE(back.variant.same_flags(m.variant));
    if (m.variant.parametric_reach) continue;
    const auto w = world(509);
    const auto scene = scene_of(w);
    const Vec3 g = m.gaze.predict(scene, 0);
    EXPECT_EQ(back.gaze.predict(scene, 0), g);
    EXPECT_EQ(back.predict_bottleneck(scene, g, w.arms[0], w.arms[1], 0).position,
              m.predict_bottleneck(scene, g, w.arms[0], w.arms[1], 0).position);
  }
  EXPECT_THROW(PolicyModel::deserialize(std::string(predictors::kModelMagic) + " 99\n"), Error);
}

TEST(PolicyErrors, UnfittedHeads) {
  PolicyModel m;
  m.heads.resize(1);
  EXPECT_THROW(m.predict_bottleneck(PointCloud{}, Vec3::Zero(), Pose7{}, Pose7{}, 0), Error);
  EXPECT_THROW(m.predict_bottleneck(PointCloud{}, Vec3::Zero(), Pose7{}, Pose7{}, 1), Error);
  PolicyModel empty;
  EXPECT_THROW(policy::Executor(empty, predictors::WorkspaceBox{}), Error);
}

TEST(PolicyErrors, TrainerArguments) {
  const predictors::GazePredictor gp(1, 5, {});
  EXPECT_THROW(policy::PolicyTrainer(PolicyVariant{}, policy::PolicyConfig{}, gp, {}), Error);
  policy::PolicyConfig c;
  c.chunk = 0;
  EXPECT_THROW(policy::PolicyTrainer(PolicyVariant{}, c, gp, {Arm::kLeft}), Error);
  policy::PolicyTrainer t(PolicyVariant{}, policy::PolicyConfig{}, gp, {Arm::kLeft});
  EXPECT_THROW(t.finish(), Error);
}

}  // namespace
}  // namespace gazebot
