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

#include <random>

#include "gazebot/predictors.hpp"
#include "gazebot/simenv.hpp"
#include "test_util.hpp"

namespace gazebot {
namespace {

using predictors::MatrixXd;
using predictors::VectorXd;
using testing::random_vec;

TEST(Featurize, EmptyCloud) {
  const auto f = predictors::featurize(GazeCloud{}, 8);
  EXPECT_EQ(f.total, 0u);
  EXPECT_EQ(f.grid.size(), 512u);
  for (double v : f.grid) EXPECT_EQ(v, 0.0);
}

TEST(Featurize, OriginLandsInCell444) {
  GazeCloud g;
  g.points = {Vec3::Zero()};
  const auto f = predictors::featurize(g, 8);
  int nonzero = 0;
  for (double v : f.grid) nonzero += v != 0.0;
  EXPECT_EQ(nonzero, 1);
  EXPECT_EQ(f.grid[(4 * 8 + 4) * 8 + 4], 1.0);
}

TEST(Featurize, BoundaryRule) {
  GazeCloud g;
  g.points = {Vec3(-0.1, -0.1, -0.1), Vec3(0.1, 0.1, 0.1)};
  const auto f = predictors::featurize(g, 8);
  EXPECT_EQ(f.grid[0], 0.5);
  EXPECT_EQ(f.grid[511], 0.5);
}

TEST(Featurize, Normalized) {
  std::mt19937_64 rng(1);
  GazeCloud g;
  for (int i = 0; i < 1000; ++i) g.points.push_back(random_vec(rng, 0.1));
  const auto f = predictors::featurize(g, 8);
  double sum = 0.0;
  for (double v : f.grid) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_THROW(predictors::featurize(g, 0), Error);
}

TEST(Knn, ExactMatchAndMean) {
  MatrixXd x(3, 1), y(3, 1);
  x << 0, 1, -1;
  y << 5, 0, 2;
  predictors::KnnRegressor k1(1);
  k1.fit(x, y);
  EXPECT_EQ(k1.predict(VectorXd::Constant(1, 0.0))[0], 5.0);
  predictors::KnnRegressor k2(2);
  MatrixXd x2(2, 1), y2(2, 1);
  x2 << 1, -1;
  y2 << 0, 2;
  k2.fit(x2, y2);
  EXPECT_EQ(k2.predict(VectorXd::Constant(1, 0.0))[0], 1.0);
}

TEST(Knn, Errors) {
  predictors::KnnRegressor k(3);
  EXPECT_THROW(k.predict(VectorXd::Zero(2)), Error);
  EXPECT_THROW(k.fit(MatrixXd(0, 2), MatrixXd(0, 1)), Error);
  EXPECT_THROW(k.fit(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 1)), Error);
  EXPECT_THROW(predictors::KnnRegressor(0), Error);
}

TEST(Knn, MatchesBruteForceScan) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 100, d = 5, k = 3;
  MatrixXd x(n, d), y(n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = u(rng);
    y(i, 0) = u(rng);
    y(i, 1) = u(rng);
  }
  predictors::KnnRegressor knn(k);
  knn.fit(x, y);
  for (int q = 0; q < 100; ++q) {
    VectorXd query(d);
    for (int j = 0; j < d; ++j) query[j] = u(rng);
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < n; ++i) dist.emplace_back((x.row(i).transpose() - query).squaredNorm(), i);
    std::sort(dist.begin(), dist.end());
    VectorXd expected = VectorXd::Zero(2);
    for (int i = 0; i < k; ++i) expected += y.row(dist[static_cast<std::size_t>(i)].second).transpose();
    expected /= k;
    EXPECT_LT((knn.predict(query) - expected).norm(), 1e-15);
  }
}

TEST(Ridge, ExactLinearData) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixXd x(30, 3), y(30, 1);
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = u(rng);
    y(i, 0) = 2 * x(i, 0) - x(i, 1) + 0.5 * x(i, 2) + 3;
  }
  predictors::RidgeRegressor r(0.0);
  r.fit(x, y);
  for (int i = 0; i < 30; ++i) EXPECT_NEAR(r.predict(x.row(i).transpose())[0], y(i, 0), 1e-10);
}

TEST(Ridge, LargeLambdaGivesMean) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixXd x(20, 2), y(20, 1);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
    y(i, 0) = x(i, 0) + 4.0;
  }
  predictors::RidgeRegressor r(1e9);
  r.fit(x, y);
  EXPECT_NEAR(r.predict(VectorXd::Constant(2, 0.7))[0], y.mean(), 1e-3);
}

TEST(Ridge, SingularAtZeroLambda) {
  MatrixXd x(4, 2), y(4, 1);
  x << 1, 2, 2, 4, 3, 6, 4, 8;
  y << 1, 2, 3, 4;
  predictors::RidgeRegressor r(0.0);
  EXPECT_THROW(r.fit(x, y), Error);
}

TEST(Ridge, MatchesIndependentSolver) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 40, d = 4;
  const double lambda = 0.3;
  MatrixXd x(n, d), y(n, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = u(rng);
    y(i, 0) = u(rng);
    y(i, 1) = u(rng);
  }
  // Augmented system with an unpenalized bias column, solved by SVD.
  MatrixXd a = MatrixXd::Zero(n + d, d + 1);
  MatrixXd b = MatrixXd::Zero(n + d, 2);
  a.topLeftCorner(n, d) = x;
  a.topRightCorner(n, 1).setOnes();
  a.bottomLeftCorner(d, d) = std::sqrt(lambda) * MatrixXd::Identity(d, d);
  b.topRows(n) = y;
  const MatrixXd w = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
  predictors::RidgeRegressor r(lambda);
  r.fit(x, y);
  EXPECT_LT((r.weights() - w.topRows(d)).norm(), 1e-8);
  EXPECT_LT((r.bias() - w.bottomRows(1).transpose()).norm(), 1e-8);
}

TEST(Regressor, SerializationRoundTrip) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixXd x(10, 3), y(10, 2);
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = u(rng);
    y(i, 0) = u(rng);
    y(i, 1) = u(rng);
  }
  for (const auto& spec : {predictors::RegressorSpec{"knn", 2, 0}, predictors::RegressorSpec{"ridge", 1, 0.1}}) {
    auto r = spec.make();
    r->fit(x, y);
    std::string bytes;
    predictors::write_regressor(bytes, r.get());
    dataset::detail::Reader rd(bytes);
    auto back = predictors::read_regressor(rd);
    const VectorXd q = VectorXd::Constant(3, 0.2);
    EXPECT_EQ(back->predict(q), r->predict(q));
  }
}

TEST(Offset, ZeroOffsetAndTranslation) {
  const Vec3 gaze(0.1, 0.2, 0.3);
  const Pose7 b = predictors::bottleneck_pose(gaze, PoseDelta7{});
  EXPECT_EQ(b.position, gaze);
  EXPECT_EQ(b.orientation.coeffs(), Quat::Identity().coeffs());

  std::mt19937_64 rng(7);
  GazeCloud g;
  for (int i = 0; i < 300; ++i) g.points.push_back(random_vec(rng, 0.1));
  MatrixXd x(20, 512), y(20, 7);
  for (int i = 0; i < 20; ++i) {
    GazeCloud gi;
    for (int j = 0; j < 200; ++j) gi.points.push_back(random_vec(rng, 0.1));
    x.row(i) = predictors::featurize(gi).vector().transpose();
    for (int j = 0; j < 7; ++j) y(i, j) = 0.01 * i + j;
  }
  predictors::RidgeRegressor f(0.1);
  f.fit(x, y);
  const PoseDelta7 off = predictors::predict_offset(f, g);
  const Vec3 v(0.5, -0.25, 0.125);
  const Pose7 p0 = predictors::bottleneck_pose(gaze, off);
  const Pose7 p1 = predictors::bottleneck_pose(gaze + v, off);
  EXPECT_LT(((p1.position - p0.position) - v).norm(), 1e-15);
  EXPECT_THROW(predictors::predict_offset(predictors::RidgeRegressor(), g), Error);
}

TEST(Progress, AdvanceRule) {
  predictors::ProgressTracker t(2);
  int i = 0;
  for (int s = 0; s < 10; ++s) i = t.advance(i, 0.5);
  EXPECT_EQ(i, 0);
  i = t.advance(i, 1.0);
  i = t.advance(i, 1.0);
  EXPECT_EQ(i, 0);
  i = t.advance(i, 1.0);
  EXPECT_EQ(i, 1);
  EXPECT_FALSE(t.complete());
  for (int s = 0; s < 3; ++s) i = t.advance(i, 0.95);
  EXPECT_EQ(i, 1);
  EXPECT_TRUE(t.complete());
}

TEST(Progress, RunResetsOnDip) {
  predictors::ProgressTracker t(3);
  int i = 0;
  for (double c : {1.0, 1.0, 0.5, 1.0, 1.0}) i = t.advance(i, c);
  EXPECT_EQ(i, 0);
  i = t.advance(i, 1.0);
  EXPECT_EQ(i, 1);
}

TEST(Progress, KnnMemorizesLabels) {
  std::mt19937_64 rng(8);
  std::vector<VectorXd> xs, ys;
  for (int t = 0; t <= 10; ++t) {
    GazeCloud g;
    for (int j = 0; j < 100; ++j) g.points.push_back(random_vec(rng, 0.1));
    xs.push_back(predictors::featurize(g).vector());
    ys.push_back(VectorXd::Constant(1, t / 10.0));
  }
  predictors::KnnRegressor c(1);
  c.fit(predictors::stack_rows(xs), predictors::stack_rows(ys));
  for (std::size_t t = 0; t < xs.size(); ++t) EXPECT_EQ(c.predict(xs[t])[0], ys[t][0]);
}

/// Scenes and gaze targets from the simulator for the gaze predictor.
struct GazeSet {
  std::vector<PointCloud> scenes;
  std::vector<Vec3> red, green;
};

GazeSet gaze_set(int n, std::uint64_t base) {
  GazeSet s;
  sim::ScenarioSpec spec;
  for (int i = 0; i < n; ++i) {
    const auto w = sim::spawn(spec, sim::Condition::kID, base + static_cast<std::uint64_t>(i));
    s.scenes.push_back(sim::render(w, spec.camera(), {}, base + static_cast<std::uint64_t>(i)));
    s.red.push_back(w.object(sim::kRedId)->center);
    s.green.push_back(w.object(sim::kGreenId)->center);
  }
  return s;
}

predictors::GazePredictor fit_gaze(const GazeSet& s) {
  predictors::GazePredictor gp(2, 3);
  std::vector<predictors::GazePredictor::Example> a, b;
  for (std::size_t i = 0; i < s.scenes.size(); ++i) {
    a.push_back({&s.scenes[i], s.red[i]});
    b.push_back({&s.scenes[i], s.green[i]});
  }
  gp.fit(0, a);
  gp.fit(1, b);
  return gp;
}

TEST(GazePredictor, HeldOutScenesNearTargets) {
  const GazeSet train = gaze_set(30, 100);
  const GazeSet test = gaze_set(20, 500);
  const auto gp = fit_gaze(train);
  for (std::size_t i = 0; i < test.scenes.size(); ++i) {
    EXPECT_LT((gp.predict(test.scenes[i], 0) - test.red[i]).norm(), 0.05);
    EXPECT_LT((gp.predict(test.scenes[i], 1) - test.green[i]).norm(), 0.05);
  }
  EXPECT_THROW(gp.predict(test.scenes[0], 2), Error);
}

TEST(GazePredictor, TranslatedSceneTranslatesGaze) {
  const GazeSet train = gaze_set(20, 100);
  const auto gp = fit_gaze(train);
  const GazeSet test = gaze_set(1, 900);
  const Vec3 v(0.5, -0.25, 0.0);
  const Vec3 g0 = gp.predict(test.scenes[0], 0);
  const Vec3 g1 = gp.predict(translated(test.scenes[0], v), 0);
  EXPECT_LT((g1 - g0 - v).norm(), 1e-9);
}

TEST(GazePredictor, SerializationRoundTrip) {
  const GazeSet train = gaze_set(10, 100);
  const auto gp = fit_gaze(train);
  std::string bytes;
  gp.write(bytes);
  dataset::detail::Reader rd(bytes);
  const auto back = predictors::GazePredictor::read(rd);
  EXPECT_EQ(back.predict(train.scenes[3], 1), gp.predict(train.scenes[3], 1));
}

}  // namespace
}  // namespace gazebot
