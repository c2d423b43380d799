#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <numeric>

#include "fscil/ranpac.hpp"
#include "fscil/synthgen.hpp"
#include "oracles.hpp"

using namespace fscil;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidValue;
}

std::vector<ClassId> labels_mod(std::size_t n, std::size_t k) {
  std::vector<ClassId> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<ClassId>(i % k);
  return y;
}

/// Exhaustive MSE of each candidate on the given split, each solved
/// independently by elimination.
std::vector<double> brute_force_mse(const Matrix& h, const std::vector<ClassId>& y, const HoldoutSplit& split,
                                    const std::vector<ClassId>& classes, const std::vector<double>& grid) {
  auto col = [&](ClassId c) { return std::lower_bound(classes.begin(), classes.end(), c) - classes.begin(); };
  Matrix hf(static_cast<Eigen::Index>(split.fit_rows.size()), h.cols());
  std::vector<ClassId> yf;
  for (std::size_t i = 0; i < split.fit_rows.size(); ++i) {
    hf.row(static_cast<Eigen::Index>(i)) = h.row(static_cast<Eigen::Index>(split.fit_rows[i]));
    yf.push_back(static_cast<ClassId>(col(y[split.fit_rows[i]])));
  }
  std::vector<double> out;
  for (double lambda : grid) {
    const Matrix w = oracle::ridge_weights(hf, yf, classes.size(), lambda);
    double se = 0.0;
    for (std::size_t r : split.holdout_rows) {
      const Vector s = oracle::ridge_scores(h.row(static_cast<Eigen::Index>(r)).transpose(), w);
      for (Eigen::Index k = 0; k < s.size(); ++k) {
        const double t = k == col(y[r]) ? 1.0 : 0.0;
        se += (s(k) - t) * (s(k) - t);
      }
    }
    out.push_back(se / static_cast<double>(split.holdout_rows.size() * classes.size()));
  }
  return out;
}

}  // namespace

TEST(InitProjection, DeterministicAndShaped) {
  Rng a(5), b(5);
  const auto pa = init_projection(7, 33, a);
  const auto pb = init_projection(7, 33, b);
  EXPECT_TRUE(pa.weights == pb.weights);
  EXPECT_EQ(pa.input_dim(), 7);
  EXPECT_EQ(pa.output_dim(), 33);
  Rng c(5);
  EXPECT_EQ(pa.weights(0, 1), [&] {
    c.normal();
    return c.normal();
  }());
}

TEST(InitProjection, WideOperatingPoint) {
  Rng rng(1);
  const auto p = init_projection(768, 10000, rng);
  EXPECT_EQ(p.weights.rows(), 768);
  EXPECT_EQ(p.weights.cols(), 10000);
  EXPECT_NEAR(p.weights.mean(), 0.0, 0.01);
}

TEST(InitProjection, InvalidDimensions) {
  Rng rng(1);
  EXPECT_EQ(code_of([&] { init_projection(0, 4, rng); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { init_projection(4, 0, rng); }), ErrorCode::InvalidConfig);
}

TEST(Project, Examples) {
  Rng rng(2);
  const auto p = init_projection(3, 5, rng);
  EXPECT_TRUE(project(Matrix::Zero(4, 3), p).isZero(0.0));

  ProjectionState two;
  two.weights = (Matrix(1, 2) << 1.0, -1.0).finished();
  const Matrix h = project((Matrix(1, 1) << 2.0).finished(), two);
  EXPECT_EQ(h(0, 0), 2.0);
  EXPECT_EQ(h(0, 1), 0.0);

  const Matrix f = oracle::random_matrix(4, 3, rng);
  EXPECT_LE(oracle::max_abs(project(f, p) - oracle::project_relu(f, p.weights)), 1e-9);
  EXPECT_EQ(code_of([&] { project(Matrix::Zero(2, 4), p); }), ErrorCode::DimensionMismatch);
}

TEST(Accumulate, Examples) {
  GramState g(3, 2);
  accumulate(g, Matrix(0, 3), std::vector<ClassId>{});
  EXPECT_TRUE(g.gram.isZero(0.0));

  const Vector h = (Vector(3) << 1.0, 2.0, 0.5).finished();
  accumulate(g, h.transpose(), std::vector<ClassId>{1});
  EXPECT_EQ(g.gram, h * h.transpose());
  EXPECT_TRUE(g.class_sums.col(1) == h);
  EXPECT_TRUE(g.class_sums.col(0).isZero(0.0));
  EXPECT_EQ(g.counts, (std::vector<std::size_t>{0, 1}));
}

TEST(Accumulate, AdditiveAcrossBatches) {
  Rng rng(3);
  const Matrix h = oracle::random_matrix(40, 6, rng).cwiseMax(0.0);
  const auto y = labels_mod(40, 3);
  GramState one(6, 3), two(6, 3);
  accumulate(one, h, y);
  accumulate(two, h.topRows(15), std::span<const ClassId>(y).first(15));
  accumulate(two, h.bottomRows(25), std::span<const ClassId>(y).subspan(15));
  EXPECT_LE(oracle::max_abs(one.gram - two.gram), 1e-9);
  EXPECT_LE(oracle::max_abs(one.class_sums - two.class_sums), 1e-9);
  EXPECT_EQ(one.counts, two.counts);
  EXPECT_LE(oracle::max_abs(one.gram - oracle::matmul(oracle::transpose(h), h)), 1e-9);
}

TEST(Accumulate, SymmetricAfterManyBatches) {
  Rng rng(4);
  GramState g(16, 2);
  for (int b = 0; b < 30; ++b) {
    const Matrix h = oracle::random_matrix(1 + b % 7, 16, rng, 10.0);
    accumulate(g, h, labels_mod(static_cast<std::size_t>(h.rows()), 2));
  }
  EXPECT_TRUE(g.gram == g.gram.transpose());
}

TEST(Accumulate, Errors) {
  GramState g(2, 2);
  EXPECT_EQ(code_of([&] { accumulate(g, Matrix::Ones(1, 2), std::vector<ClassId>{2}); }), ErrorCode::UnknownLabel);
  EXPECT_EQ(code_of([&] { accumulate(g, Matrix::Ones(2, 2), std::vector<ClassId>{0}); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { accumulate(g, Matrix::Ones(1, 3), std::vector<ClassId>{0}); }), ErrorCode::DimensionMismatch);
}

TEST(RidgeScores, Examples) {
  GramState g(4, 3);
  g.lambda = 1.0;
  g.class_sums.col(2) = (Vector(4) << 1, 0, 2, 0).finished();
  const Vector h = (Vector(4) << 0.5, 3, 0.1, -1).finished();
  const Vector s = ridge_scores(h, g);
  const std::vector<ClassId> all{0, 1, 2};
  EXPECT_EQ(ridge_argmax(s, all), 2);
  EXPECT_NEAR(s(2), h.dot(g.class_sums.col(2)), 1e-12);

  const Vector zero = ridge_scores(Vector::Zero(4), g);
  EXPECT_TRUE(zero.isZero(0.0));
  EXPECT_EQ(ridge_argmax(zero, all), 0);
}

TEST(RidgeScores, MatchesNormalEquationOracle) {
  Rng rng(5);
  const Matrix h = oracle::random_matrix(30, 5, rng).cwiseMax(0.0);
  const auto y = labels_mod(30, 3);
  GramState g(5, 3);
  g.lambda = 0.3;
  accumulate(g, h, y);
  const Matrix w = oracle::ridge_weights(h, y, 3, 0.3);
  for (int q = 0; q < 10; ++q) {
    const Vector x = oracle::random_vector(5, rng);
    EXPECT_LE((ridge_scores(x, g) - oracle::ridge_scores(x, w)).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(RidgeScores, LinearInH) {
  Rng rng(6);
  GramState g(8, 4);
  g.lambda = 0.1;
  accumulate(g, oracle::random_matrix(50, 8, rng).cwiseMax(0.0), labels_mod(50, 4));
  for (int t = 0; t < 20; ++t) {
    const Vector a = oracle::random_vector(8, rng), b = oracle::random_vector(8, rng);
    const double c = 3.0 * rng.normal();
    const Vector lhs = ridge_scores(c * a + b, g);
    const Vector rhs = c * ridge_scores(a, g) + ridge_scores(b, g);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(RidgeScores, SingularSystem) {
  GramState g(2, 1);
  g.lambda = 0.0;
  EXPECT_EQ(code_of([&] { ridge_scores(Vector::Ones(2), g); }), ErrorCode::SingularSystem);
}

TEST(LambdaGrid, SeventeenPowersOfTen) {
  const auto grid = default_lambda_grid();
  ASSERT_EQ(grid.size(), 17u);
  EXPECT_EQ(grid.front(), 1e-8);
  EXPECT_EQ(grid.back(), 1e8);
  for (std::size_t i = 1; i < grid.size(); ++i) EXPECT_NEAR(grid[i] / grid[i - 1], 10.0, 1e-12);
}

TEST(SelectLambda, SingleCandidateAndEmpty) {
  Rng rng(1);
  const std::vector<double> one{0.25};
  EXPECT_EQ(select_lambda(Matrix::Ones(3, 2), std::vector<ClassId>{0, 1, 0}, one, rng).lambda, 0.25);
  EXPECT_EQ(code_of([&] { select_lambda(Matrix::Ones(3, 2), std::vector<ClassId>{0, 1, 0}, {}, rng); }),
            ErrorCode::EmptyCandidates);
}

TEST(SelectLambda, HoldoutSplitIsEightyTwenty) {
  Rng rng(2);
  const auto s = holdout_split(100, rng);
  EXPECT_EQ(s.fit_rows.size(), 80u);
  EXPECT_EQ(s.holdout_rows.size(), 20u);
  std::vector<std::size_t> all = s.fit_rows;
  all.insert(all.end(), s.holdout_rows.begin(), s.holdout_rows.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
  Rng again(2);
  EXPECT_EQ(holdout_split(100, again).fit_rows, s.fit_rows);
  Rng small(3);
  EXPECT_EQ(holdout_split(2, small).fit_rows.size(), 1u);
}

TEST(SelectLambda, ReturnsExhaustiveMinimizerOnSeparableToy) {
  Rng rng(7);
  const Eigen::Index d = 4, dd = 24;
  Matrix f(120, d);
  std::vector<ClassId> y;
  for (Eigen::Index i = 0; i < 120; ++i) {
    const ClassId c = i % 3;
    f.row(i) = (oracle::random_vector(d, rng, 0.3) + 4.0 * Vector::Unit(d, c)).transpose();
    y.push_back(c);
  }
  const auto proj = init_projection(d, dd, rng);
  const Matrix h = project(f, proj);
  const auto grid = default_lambda_grid();
  Rng split_rng(11);
  const auto sel = select_lambda(h, y, grid, split_rng);
  const auto ref = brute_force_mse(h, y, sel.split, sel.classes, grid);
  const auto best = std::min_element(ref.begin(), ref.end()) - ref.begin();
  EXPECT_EQ(sel.lambda, grid[static_cast<std::size_t>(best)]);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(sel.mse[i], ref[i], 1e-6 * (1.0 + ref[i])) << grid[i];
}

TEST(Ranpac, LambdaAndProjectionFrozenAfterIncrements) {
  const auto world = generate(SynthConfig{.num_classes = 9, .dim = 6, .seed = 3});
  RanpacConfig cfg;
  cfg.proj_dim = 64;
  cfg.seed = 17;
  for (int calibrated = 0; calibrated < 2; ++calibrated) {
    std::unique_ptr<RanpacClassifier> clf;
    if (calibrated) {
      CalibratedRanpacConfig c;
      c.ranpac = cfg;
      c.sample_count = 50;
      clf = std::make_unique<CalibratedRanpacClassifier>(9, c);
    } else {
      clf = std::make_unique<RanpacClassifier>(9, cfg);
    }
    std::vector<Eigen::Index> rows;
    std::vector<ClassId> y;
    for (std::size_t i = 0; i < world.train.rows(); ++i) {
      if (world.train.labels[i] < 3) {
        rows.push_back(static_cast<Eigen::Index>(i));
        y.push_back(world.train.labels[i]);
      }
    }
    clf->fit_base(world.train.features(rows, Eigen::all), y);
    const Matrix w = clf->projection().weights;
    const double lambda = clf->gram().lambda;
    for (ClassId c = 3; c < 9; c += 2) {
      const std::size_t start = static_cast<std::size_t>(c) * 200;
      Matrix x(10, 6);
      std::vector<ClassId> yl;
      for (int k = 0; k < 10; ++k) {
        const std::size_t r = start + static_cast<std::size_t>(k % 5) + (k >= 5 ? 200 : 0);
        x.row(k) = world.train.features.row(static_cast<Eigen::Index>(r));
        yl.push_back(world.train.labels[r]);
      }
      clf->fit_increment(x, yl);
      EXPECT_TRUE(clf->projection().weights == w);
      EXPECT_EQ(clf->gram().lambda, lambda);
      EXPECT_TRUE(clf->gram().gram == clf->gram().gram.transpose());
    }
  }
}

TEST(Ranpac, UnitProjectionRunsEndToEnd) {
  const auto world = generate(SynthConfig{.num_classes = 4, .dim = 3, .seed = 4});
  RanpacConfig cfg;
  cfg.proj_dim = 1;
  RanpacClassifier clf(4, cfg);
  clf.fit_base(world.train.features.topRows(400), std::span<const ClassId>(world.train.labels).first(400));
  clf.fit_increment(world.train.features.middleRows(400, 5), std::span<const ClassId>(world.train.labels).subspan(400, 5));
  const auto pred = clf.predict(world.test.features);
  EXPECT_EQ(pred.size(), world.test.rows());
}

TEST(Ranpac, Errors) {
  RanpacConfig cfg;
  cfg.proj_dim = 8;
  RanpacClassifier clf(2, cfg);
  EXPECT_EQ(code_of([&] { clf.predict(Matrix::Zero(1, 2)); }), ErrorCode::NoClassesSeen);
  EXPECT_EQ(code_of([&] { clf.fit_increment(Matrix::Ones(2, 2), std::vector<ClassId>{0, 0}); }),
            ErrorCode::BaseNotFitted);
  EXPECT_EQ(code_of([&] { clf.fit_base(Matrix::Ones(2, 2), std::vector<ClassId>{0, 2}); }), ErrorCode::UnknownLabel);
  cfg.lambda_grid.clear();
  EXPECT_EQ(code_of([&] { RanpacClassifier(2, cfg); }), ErrorCode::EmptyCandidates);
}

namespace {

struct ToyRun {
  Matrix base_x;
  std::vector<ClassId> base_y;
  Matrix few_x;
  std::vector<ClassId> few_y;
};

ToyRun toy(std::uint64_t seed) {
  Rng rng(seed);
  ToyRun t;
  t.base_x = oracle::random_matrix(60, 4, rng);
  t.base_y = labels_mod(60, 3);
  for (Eigen::Index i = 0; i < 60; ++i) t.base_x(i, t.base_y[static_cast<std::size_t>(i)]) += 3.0;
  t.few_x = oracle::random_matrix(5, 4, rng);
  t.few_x.col(3).array() += 3.0;
  t.few_y.assign(5, 3);
  return t;
}

CalibratedRanpacConfig small_cfg(std::size_t samples) {
  CalibratedRanpacConfig c;
  c.ranpac.proj_dim = 32;
  c.ranpac.seed = 5;
  c.sample_count = samples;
  return c;
}

}  // namespace

TEST(CalibratedRanpac, ZeroSamplesLeavesStateUnchanged) {
  const ToyRun t = toy(1);
  CalibratedRanpacClassifier clf(4, small_cfg(0));
  clf.fit_base(t.base_x, t.base_y);
  const GramState before = clf.gram();
  clf.fit_increment(t.few_x, t.few_y);
  EXPECT_TRUE(clf.gram().gram == before.gram);
  EXPECT_TRUE(clf.gram().class_sums == before.class_sums);
  EXPECT_EQ(clf.gram().counts, before.counts);
}

TEST(CalibratedRanpac, DegenerateGaussianAddsRepeatedOuterProduct) {
  // Base class rows are all equal (zero covariance) and the new class sees
  // one shot, so the calibrated covariance is exactly zero.
  CalibratedRanpacConfig cfg = small_cfg(800);
  CalibratedRanpacClassifier clf(2, cfg);
  const Matrix base = (Vector(3) << 1.0, 2.0, 0.5).finished().transpose().replicate(10, 1);
  clf.fit_base(base, std::vector<ClassId>(10, 0));
  const GramState before = clf.gram();
  const Matrix shot = (Matrix(1, 3) << -1.0, 0.5, 2.0).finished();
  clf.fit_increment(shot, std::vector<ClassId>{1});

  const auto w = calibration_weights(std::vector<Vector>{base.row(0).transpose()}, shot.row(0).transpose(), 16.0);
  const Vector mu_hat = calibrate_prototype(shot.row(0).transpose(), std::vector<Vector>{base.row(0).transpose()}, w, 0.9);
  const Vector h = project(mu_hat.transpose(), clf.projection()).row(0).transpose();
  EXPECT_LE(oracle::max_abs(clf.gram().gram - before.gram - 800.0 * h * h.transpose()), 1e-9 * (1.0 + h.squaredNorm() * 800));
  EXPECT_LE((clf.gram().class_sums.col(1) - 800.0 * h).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + h.norm() * 800));
  EXPECT_EQ(clf.gram().counts[1], 800u);
}

TEST(CalibratedRanpac, RealShotsAreNotAccumulatedByDefault) {
  const ToyRun t = toy(2);
  CalibratedRanpacClassifier off(4, small_cfg(20));
  CalibratedRanpacConfig on_cfg = small_cfg(20);
  on_cfg.include_real_features = true;
  CalibratedRanpacClassifier on(4, on_cfg);
  off.fit_base(t.base_x, t.base_y);
  on.fit_base(t.base_x, t.base_y);
  off.fit_increment(t.few_x, t.few_y);
  on.fit_increment(t.few_x, t.few_y);
  EXPECT_EQ(off.gram().counts[3], 20u);
  EXPECT_EQ(on.gram().counts[3], 25u);
}

TEST(CalibratedRanpac, RunIsReproducible) {
  const ToyRun t = toy(3);
  std::vector<ClassId> preds[2];
  Rng rng(9);
  const Matrix q = oracle::random_matrix(100, 4, rng, 2.0);
  for (auto& p : preds) {
    CalibratedRanpacClassifier clf(4, small_cfg(100));
    clf.fit_base(t.base_x, t.base_y);
    clf.fit_increment(t.few_x, t.few_y);
    p = clf.predict(q);
  }
  EXPECT_EQ(preds[0], preds[1]);
}

TEST(CalibratedRanpac, BaseNotFitted) {
  CalibratedRanpacClassifier clf(4, small_cfg(10));
  const ToyRun t = toy(4);
  EXPECT_EQ(code_of([&] { clf.fit_increment(t.few_x, t.few_y); }), ErrorCode::BaseNotFitted);
}
