#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fscil/calibration.hpp"
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

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST(Similarity, Examples) {
  const Vector a = v2(0.3, -1.2);
  EXPECT_NEAR(similarity(a, a, 16.0), 16.0, 1e-12);
  EXPECT_EQ(similarity(v2(1, 0), v2(0, 5), 3.0), 0.0);
  EXPECT_NEAR(similarity(v2(1, 0), v2(1, 1), 16.0), 16.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(similarity(v2(1, 0), v2(1, 1), 16.0), 11.3137, 1e-4);
}

TEST(Similarity, BoundedByTau) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const double s = similarity(oracle::random_vector(5, rng), oracle::random_vector(5, rng), 16.0);
    EXPECT_LE(std::abs(s), 16.0 + 1e-12);
  }
}

TEST(Similarity, ZeroNormPrototype) {
  EXPECT_EQ(code_of([] { similarity(Vector::Zero(2), v2(1, 0), 16.0); }), ErrorCode::ZeroNormPrototype);
  EXPECT_EQ(code_of([] { similarity(v2(1, 0), Vector::Zero(2), 16.0); }), ErrorCode::ZeroNormPrototype);
}

TEST(CalibrationWeights, Examples) {
  const std::vector<Vector> one{v2(2, 3)};
  EXPECT_EQ(calibration_weights(one, v2(-1, 4), 16.0)(0), 1.0);

  const std::vector<Vector> sym{v2(1, 1), v2(1, -1)};
  const Vector w = calibration_weights(sym, v2(3, 0), 16.0);
  EXPECT_NEAR(w(0), 0.5, 1e-15);
  EXPECT_NEAR(w(1), 0.5, 1e-15);

  const std::vector<Vector> axes{v2(1, 0), v2(0, 1)};
  const Vector w2 = calibration_weights(axes, v2(1, 0), 16.0);
  const double e = std::exp(-16.0);
  EXPECT_NEAR(w2(0), 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(w2(1), e / (1.0 + e), 1e-15);
}

TEST(CalibrationWeights, NoBaseClasses) {
  EXPECT_EQ(code_of([] { calibration_weights({}, v2(1, 0), 16.0); }), ErrorCode::NoBaseClasses);
}

TEST(CalibrationWeights, ProbabilityVectorAndScaleInvariant) {
  Rng rng(2);
  for (int t = 0; t < 300; ++t) {
    const Eigen::Index d = 1 + t % 10;
    std::vector<Vector> base;
    for (int b = 0; b < 1 + t % 12; ++b) base.push_back(oracle::random_vector(d, rng, 5.0));
    const Vector mu = oracle::random_vector(d, rng, 5.0);
    const Vector w = calibration_weights(base, mu, 16.0);
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), 0.0);

    const double c = std::exp(3.0 * rng.normal());
    std::vector<Vector> scaled;
    for (const auto& b : base) scaled.push_back(c * b);
    EXPECT_LE((calibration_weights(scaled, c * mu, 16.0) - w).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CalibratePrototype, Examples) {
  Rng rng(3);
  const Vector mu = oracle::random_vector(3, rng);
  const std::vector<Vector> base{oracle::random_vector(3, rng), oracle::random_vector(3, rng)};
  const Vector w = (Vector(2) << 0.3, 0.7).finished();
  EXPECT_TRUE(calibrate_prototype(mu, base, w, 1.0) == mu);

  const std::vector<Vector> single{v2(0, 1)};
  const Vector one = (Vector(1) << 1.0).finished();
  EXPECT_TRUE(calibrate_prototype(v2(4, 4), single, one, 0.0) == v2(0, 1));
  const Vector p = calibrate_prototype(v2(1, 0), single, one, 0.9);
  EXPECT_NEAR(p(0), 0.9, 1e-15);
  EXPECT_NEAR(p(1), 0.1, 1e-15);
}

TEST(CalibratePrototype, Errors) {
  const std::vector<Vector> single{v2(0, 1)};
  EXPECT_EQ(code_of([&] { calibrate_prototype(v2(1, 0), single, (Vector(1) << 0.9).finished(), 0.5); }),
            ErrorCode::WeightSumInvalid);
  EXPECT_EQ(code_of([&] { calibrate_prototype(Vector::Zero(3), single, (Vector(1) << 1.0).finished(), 0.5); }),
            ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { calibrate_prototype(v2(1, 0), single, Vector::Ones(2) / 2, 0.5); }),
            ErrorCode::DimensionMismatch);
}

TEST(CalibratePrototype, LinearInAlpha) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<Vector> base;
    for (int b = 0; b < 1 + t % 6; ++b) base.push_back(oracle::random_vector(4, rng));
    const Vector mu = oracle::random_vector(4, rng);
    const Vector w = calibration_weights(base, mu, 16.0);
    const double a = rng.uniform();
    const Vector lhs = calibrate_prototype(mu, base, w, a);
    const Vector rhs = a * calibrate_prototype(mu, base, w, 1.0) + (1.0 - a) * calibrate_prototype(mu, base, w, 0.0);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CalibrateCovariance, Examples) {
  Rng rng(5);
  const Matrix sn = oracle::random_spd(3, rng), sb = oracle::random_spd(3, rng);
  const std::vector<Matrix> one{sb};
  const Vector w1 = (Vector(1) << 1.0).finished();
  EXPECT_LE(oracle::max_abs(calibrate_covariance(sn, one, w1, 1.0) - (sn + sb)), 1e-12);

  const std::vector<Matrix> ident{Matrix::Identity(2, 2)};
  EXPECT_EQ(calibrate_covariance(Matrix::Identity(2, 2), ident, w1, 0.5), Matrix::Identity(2, 2));

  const std::vector<Matrix> two{diag2(2, 0), diag2(0, 2)};
  EXPECT_EQ(calibrate_covariance(Matrix::Zero(2, 2), two, Vector::Constant(2, 0.5), 1.0), diag2(1, 1));
}

TEST(CalibrateCovariance, Errors) {
  const std::vector<Matrix> one{Matrix::Identity(3, 3)};
  EXPECT_EQ(code_of([&] { calibrate_covariance(Matrix::Identity(2, 2), one, Vector::Ones(1), 1.0); }),
            ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { calibrate_covariance(Matrix::Identity(3, 3), one, Vector::Constant(1, 2.0), 1.0); }),
            ErrorCode::WeightSumInvalid);
}

TEST(CalibrateCovariance, PreservesPsd) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index d = 2 + t % 7;
    std::vector<Matrix> base;
    for (int b = 0; b < 1 + t % 4; ++b) base.push_back(oracle::random_psd(d, 1 + t % d, rng));
    const Vector w = softmax(oracle::random_vector(static_cast<Eigen::Index>(base.size()), rng, 3.0));
    const Matrix out = calibrate_covariance(oracle::random_psd(d, 1, rng), base, w, 0.1 + rng.uniform());
    EXPECT_TRUE(out == out.transpose());
    EXPECT_GE(oracle::min_rayleigh(out, rng, 50), psd_tolerance(out));
  }
}

TEST(CalibrateAll, ZeroNewClasses) {
  const std::vector<ClassStats> base{ClassStats(0, 10, v2(1, 0), Matrix::Identity(2, 2))};
  EXPECT_TRUE(calibrate_all({}, base, {}).empty());
}

TEST(CalibrateAll, SingleBaseComposition) {
  Rng rng(7);
  const ClassStats b(0, 100, oracle::random_vector(3, rng), oracle::random_spd(3, rng));
  const ClassStats n(1, 5, oracle::random_vector(3, rng), oracle::random_spd(3, rng));
  const std::vector<ClassStats> base{b}, fresh{n};
  const auto out = calibrate_all(fresh, base, CalibrationConfig{16.0, 0.9, 1.0});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].class_id(), 1);
  EXPECT_LE((out[0].mean_hat() - (0.9 * n.mean() + 0.1 * b.mean())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(oracle::max_abs(out[0].cov_hat() - (n.cov() + b.cov())), 1e-12);
}

TEST(CalibrateAll, WeightsUseRawPrototypeAndBaseIsUntouched) {
  Rng rng(8);
  std::vector<ClassStats> base;
  for (int c = 0; c < 4; ++c) base.emplace_back(c, 50, oracle::random_vector(3, rng), oracle::random_spd(3, rng));
  const std::vector<ClassStats> copy = base;
  const std::vector<ClassStats> fresh{ClassStats(9, 5, oracle::random_vector(3, rng), oracle::random_spd(3, rng))};
  const CalibrationConfig cfg{4.0, 0.6, 0.5};
  const auto out = calibrate_all(fresh, base, cfg);

  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (const auto& b : base) {
    means.push_back(b.mean());
    covs.push_back(b.cov());
  }
  const Vector w = calibration_weights(means, fresh[0].mean(), cfg.tau);
  EXPECT_TRUE(out[0].mean_hat() == calibrate_prototype(fresh[0].mean(), means, w, cfg.alpha));
  EXPECT_TRUE(out[0].cov_hat() == calibrate_covariance(fresh[0].cov(), covs, w, cfg.beta));
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_TRUE(base[i].mean() == copy[i].mean());
    EXPECT_TRUE(base[i].cov() == copy[i].cov());
  }
}

TEST(CalibrateAll, OneShotClassStillCalibrates) {
  const std::vector<ClassStats> base{ClassStats(0, 10, v2(1, 0), diag2(2, 1))};
  const std::vector<ClassStats> fresh{ClassStats(1, 1, v2(1, 1), Matrix::Zero(2, 2))};
  const auto out = calibrate_all(fresh, base, {16.0, 0.9, 1.0});
  EXPECT_EQ(out[0].cov_hat(), diag2(2, 1));
}

TEST(CalibrateAll, Errors) {
  const std::vector<ClassStats> base{ClassStats(0, 10, v2(1, 0), Matrix::Identity(2, 2))};
  const std::vector<ClassStats> dup{ClassStats(0, 5, v2(0, 1), Matrix::Identity(2, 2))};
  EXPECT_EQ(code_of([&] { calibrate_all(dup, {}, {}); }), ErrorCode::NoBaseClasses);
  EXPECT_EQ(code_of([&] { calibrate_all(dup, base, {}); }), ErrorCode::OverlappingClasses);
  const std::vector<ClassStats> zero{ClassStats(1, 5, Vector::Zero(2), Matrix::Identity(2, 2))};
  EXPECT_EQ(code_of([&] { calibrate_all(zero, base, {}); }), ErrorCode::ZeroNormPrototype);
  EXPECT_EQ(code_of([] { CalibrationConfig{0.0, 0.9, 1.0}.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { CalibrationConfig{16.0, 1.5, 1.0}.validate(); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { CalibrationConfig{16.0, 0.9, 0.0}.validate(); }), ErrorCode::InvalidConfig);
}

// A few-shot class whose true covariance equals its nearest base class
// covariance: the calibrated estimate is closer to the truth than the raw
// 5-shot one, on average over seeds.
TEST(CalibrateAll, CalibratedCovarianceBeatsFewShotEstimate) {
  double err_raw = 0.0, err_cal = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig cfg;
    cfg.num_classes = 12;
    cfg.dim = 16;
    cfg.cov_coupling = 1.0;
    cfg.num_anchors = 3;
    cfg.cluster_spread = 0.2;
    cfg.mixture_temperature = 50.0;
    cfg.seed = seed;
    const SynthWorld world = generate(cfg);
    const Eigen::Index per = static_cast<Eigen::Index>(cfg.train_per_class);

    std::vector<ClassStats> base;
    for (Eigen::Index c = 0; c < 8; ++c) base.push_back(estimate_stats(world.train.features.middleRows(c * per, per), c));
    std::vector<ClassStats> fresh;
    for (Eigen::Index c = 8; c < 12; ++c) fresh.push_back(estimate_stats(world.train.features.middleRows(c * per, 5), c));
    const auto cal = calibrate_all(fresh, base, CalibrationConfig{16.0, 0.9, 0.5});
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      const Matrix& truth = world.true_covs[static_cast<std::size_t>(fresh[i].class_id())];
      err_raw += (fresh[i].cov() - truth).norm();
      err_cal += (cal[i].cov_hat() - truth).norm();
    }
  }
  EXPECT_LT(err_cal, err_raw);
}
