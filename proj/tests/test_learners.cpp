#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "odml/learners.hpp"
#include "test_util.hpp"

using namespace odml;
using odml::test::error_kind;

namespace {

Matrix uniform_matrix(Index n, Index k, std::uint64_t seed) {
  Rng rng(seed);
  return Matrix::NullaryExpr(n, k, [&] { return 2 * uniform01(rng) - 1; });
}

Vector noise(Index n, std::uint64_t seed, double sd) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  return Vector::NullaryExpr(n, [&] { return sd * z(rng); });
}

}  // namespace

// ---------------------------------------------------------------------------
// Ridge

TEST(FitLinear, ExactLine) {
  Matrix x(4, 1);
  x << 0, 1, 2, 3;
  const Vector y = (3 * x.col(0)).array() + 1;
  const TrainedModel m = fit_linear(x, y, 0);
  EXPECT_NEAR(m.coef(0), 3, 1e-12);
  EXPECT_NEAR(m.intercept, 1, 1e-12);
  Matrix x2(1, 1);
  x2 << 10;
  EXPECT_NEAR(predict(m, x2)(0), 31, 1e-10);
}

TEST(FitLinear, ClosedFormOneDimensional) {
  const Matrix x = uniform_matrix(50, 1, 1);
  const Vector y = 2 * x.col(0) + noise(50, 2, 0.3);
  for (double lambda : {0.0, 0.5, 10.0}) {
    const TrainedModel m = fit_linear(x, y, lambda);
    const Vector xc = x.col(0).array() - x.col(0).mean();
    const Vector yc = y.array() - y.mean();
    const double b = xc.dot(yc) / (xc.squaredNorm() + lambda);
    EXPECT_NEAR(m.coef(0), b, 1e-12);
    EXPECT_NEAR(m.intercept, y.mean() - b * x.col(0).mean(), 1e-12);
  }
}

TEST(FitLinear, HugePenaltyGivesMean) {
  const Matrix x = uniform_matrix(40, 3, 3);
  const Vector y = x.rowwise().sum() + noise(40, 4, 1);
  const TrainedModel m = fit_linear(x, y, 1e14);
  EXPECT_LT(m.coef.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(m.intercept, y.mean(), 1e-10);
}

TEST(FitLinear, SingularOnlyWithoutPenalty) {
  Matrix x = uniform_matrix(30, 2, 5);
  Matrix dup(30, 3);
  dup << x, x.col(0);
  const Vector y = x.col(0) + noise(30, 6, 0.1);
  EXPECT_EQ(error_kind([&] { fit_linear(dup, y, 0); }), "SingularDesign");
  const TrainedModel m = fit_linear(dup, y, 1e-3);
  EXPECT_TRUE(m.coef.allFinite());
  EXPECT_NEAR(m.coef(0), m.coef(2), 1e-8);
}

TEST(FitLinear, RejectsBadInput) {
  EXPECT_EQ(error_kind([] { fit_linear(Matrix(3, 1), Vector(2), 0); }), "DimensionMismatch");
  EXPECT_EQ(error_kind([] { fit_linear(Matrix(0, 1), Vector(0), 0); }), "EmptyInput");
  EXPECT_EQ(error_kind([] { fit_linear(Matrix::Ones(3, 1), Vector::Ones(3), -1); }), "ConfigError");
}

// ---------------------------------------------------------------------------
// Logistic

TEST(FitLogistic, InterceptOnly) {
  Vector d(8);
  d << 1, 1, 1, 0, 1, 1, 1, 0;
  const Matrix x(8, 0);
  const TrainedModel m = fit_logistic(x, d, 0);
  EXPECT_NEAR(predict(m, x)(0), 0.75, 1e-10);
  EXPECT_NEAR(m.intercept, std::log(3.0), 1e-8);
}

TEST(FitLogistic, ScoreEquationsHoldAtOptimum) {
  const Matrix x = uniform_matrix(400, 3, 7);
  Rng rng(8);
  Vector d(400);
  for (Index i = 0; i < 400; ++i) d(i) = uniform01(rng) < sigmoid(0.5 + x.row(i).sum()) ? 1 : 0;
  const TrainedModel m = fit_logistic(x, d, 0);
  const Vector r = predict(m, x) - d;
  EXPECT_LT(std::abs(r.sum()) / 400, 1e-8);
  EXPECT_LT((x.transpose() * r).cwiseAbs().maxCoeff() / 400, 1e-8);
  EXPECT_TRUE((predict(m, x).array() > 0).all() && (predict(m, x).array() < 1).all());
}

TEST(FitLogistic, SeparationNeedsPenalty) {
  Matrix x(4, 1);
  x << -2, -1, 1, 2;
  Vector d(4);
  d << 0, 0, 1, 1;
  EXPECT_EQ(error_kind([&] { fit_logistic(x, d, 0); }), "SeparationDetected");
  const TrainedModel m = fit_logistic(x, d, 0.1);
  EXPECT_TRUE(std::isfinite(m.coef(0)));
  EXPECT_GT(m.coef(0), 0);
  EXPECT_EQ(error_kind([&] { fit_logistic(x, Vector::Zero(4), 0.1); }), "ConstantTreatment");
}

TEST(FitLogistic, PenaltyShrinksMonotonically) {
  const Matrix x = uniform_matrix(200, 2, 9);
  Rng rng(10);
  Vector d(200);
  for (Index i = 0; i < 200; ++i) d(i) = uniform01(rng) < sigmoid(2 * x(i, 0)) ? 1 : 0;
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 1.0, 10.0, 100.0}) {
    const double norm = fit_logistic(x, d, lambda).coef.norm();
    EXPECT_LT(norm, prev + 1e-12);
    prev = norm;
  }
}

// ---------------------------------------------------------------------------
// Networks

TEST(Mlp, NoHiddenLayerMatchesLeastSquares) {
  const Matrix x = uniform_matrix(400, 2, 11);
  const Vector y = (1.5 * x.col(0) - 0.7 * x.col(1)).array() + 0.3;
  LearnerSpec spec = default_mlp_regressor();
  spec.hidden_layers = {};
  spec.learning_rate = 0.01;
  spec.max_epochs = 2000;
  spec.early_stop_patience = 200;
  const TrainedModel net = fit_mlp(x, y, spec);
  const Vector diff = predict(net, x) - predict(fit_linear(x, y, 0), x);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 0.02);
}

TEST(Mlp, ClassifierLearnsThreshold) {
  const Matrix x = uniform_matrix(1200, 2, 12);
  Vector d = (x.col(0).array() > 0).cast<double>();
  LearnerSpec spec = default_mlp_classifier();
  spec.hidden_layers = {16};
  spec.learning_rate = 0.01;
  spec.max_epochs = 200;
  const TrainedModel m = fit_mlp(x.topRows(1000), d.head(1000), spec);
  const Vector p = predict(m, x.bottomRows(200));
  int correct = 0;
  for (Index i = 0; i < 200; ++i) correct += (p(i) > 0.5) == (d(1000 + i) > 0.5);
  EXPECT_GE(correct, 180);
  EXPECT_TRUE((p.array() > 0).all() && (p.array() < 1).all());
}

TEST(Mlp, DeterministicGivenSeed) {
  const Matrix x = uniform_matrix(200, 3, 13);
  const Vector y = x.col(0).array().sin() + noise(200, 14, 0.1).array();
  LearnerSpec spec = default_mlp_regressor();
  spec.max_epochs = 30;
  const Vector a = predict(fit_mlp(x, y, spec), x);
  const Vector b = predict(fit_mlp(x, y, spec), x);
  EXPECT_EQ(a, b);
  spec.seed += 1;
  EXPECT_NE(predict(fit_mlp(x, y, spec), x), a);
}

TEST(Mlp, EarlyStoppingKeepsBestCheckpoint) {
  const Matrix x = uniform_matrix(120, 4, 15);
  const Vector y = noise(120, 16, 1.0);  // pure noise: validation loss turns up quickly
  LearnerSpec spec = default_mlp_regressor();
  spec.hidden_layers = {64};
  spec.learning_rate = 0.01;
  spec.max_epochs = 500;
  spec.early_stop_patience = 5;
  const TrainedModel m = fit_mlp(x, y, spec);
  ASSERT_FALSE(m.val_loss.empty());
  EXPECT_LT(m.val_loss.size(), 500u);
  const auto best = std::min_element(m.val_loss.begin(), m.val_loss.end()) - m.val_loss.begin();
  EXPECT_EQ(m.best_epoch, best);
  EXPECT_EQ(m.val_loss.size(), static_cast<std::size_t>(best + 1 + spec.early_stop_patience));
}

TEST(Mlp, GradientCheck) {
  const Matrix x = uniform_matrix(12, 3, 17);
  const Vector y = (x.col(0).array() > 0).cast<double>();
  for (auto act : {Activation::Relu, Activation::Tanh}) {
    for (auto kind : {LearnerKind::MlpRegressor, LearnerKind::MlpClassifier}) {
      LearnerSpec spec;
      spec.kind = kind;
      spec.activation = act;
      spec.hidden_layers = {5, 3};
      spec.ridge_lambda = 0.01;
      EXPECT_LT(grad_check(spec, x, y), 1e-4);
      spec.hidden_layers = {};
      EXPECT_LT(grad_check(spec, x, y), 1e-8);
    }
  }
  EXPECT_EQ(error_kind([&] { grad_check(LearnerSpec{LearnerKind::Mean}, x, y); }), "ConfigError");
}

TEST(Mlp, RejectsBadSpecs) {
  const Matrix x = uniform_matrix(10, 2, 18);
  LearnerSpec spec = default_mlp_regressor();
  spec.hidden_layers = {0};
  EXPECT_EQ(error_kind([&] { fit_mlp(x, Vector::Zero(10), spec); }), "ConfigError");
  spec = default_mlp_regressor();
  spec.learning_rate = 0;
  EXPECT_EQ(error_kind([&] { fit_mlp(x, Vector::Zero(10), spec); }), "ConfigError");
}

// ---------------------------------------------------------------------------
// Shared behavior

TEST(Predict, ZeroRowsAndWidthMismatch) {
  const Matrix x = uniform_matrix(30, 2, 19);
  const Vector y = x.col(0);
  Vector d = (x.col(1).array() > 0).cast<double>();
  d(0) = 1 - d(0);
  LearnerSpec mlp = default_mlp_regressor();
  mlp.max_epochs = 2;
  const std::vector<TrainedModel> models = {fit_linear(x, y, 0.1), fit_logistic(x, d, 1), fit_mlp(x, y, mlp),
                                            fit_mean(x, y, LearnerSpec{LearnerKind::Mean})};
  for (const auto& m : models) {
    EXPECT_EQ(predict(m, Matrix(0, 2)).size(), 0);
    EXPECT_EQ(error_kind([&] { predict(m, Matrix::Zero(3, 5)); }), "DimensionMismatch");
  }
  EXPECT_NEAR(predict(models[3], x)(7), y.mean(), 1e-15);
}

TEST(Serialize, RoundTripIsExact) {
  const Matrix x = uniform_matrix(60, 3, 20);
  const Vector y = x.col(0).array().square();
  Vector d = (x.col(1).array() > 0.2).cast<double>();
  d(0) = 1 - d(0);
  LearnerSpec mlp = default_mlp_classifier();
  mlp.hidden_layers = {4, 3};
  mlp.activation = Activation::Tanh;
  mlp.max_epochs = 5;
  for (const TrainedModel& m : {fit_linear(x, y, 0.2), fit_logistic(x, d, 0.5), fit_mlp(x, d, mlp)}) {
    const std::string blob = serialize_model(m);
    EXPECT_EQ(blob.substr(0, kModelMagic.size()), kModelMagic);
    const TrainedModel back = deserialize_model(blob);
    EXPECT_EQ(back.spec.kind, m.spec.kind);
    EXPECT_EQ(predict(back, x), predict(m, x));
    EXPECT_EQ(serialize_model(back), blob);
    EXPECT_EQ(error_kind([&] { deserialize_model(blob + "x"); }), "ParseError");
    EXPECT_EQ(error_kind([&] { deserialize_model(blob.substr(0, blob.size() - 3)); }), "ParseError");
  }
  EXPECT_EQ(error_kind([] { deserialize_model("NOPE"); }), "ParseError");
}

TEST(LearnerSpecJson, RoundTripAndNames) {
  LearnerSpec s = default_mlp_classifier();
  s.hidden_layers = {8, 4};
  s.activation = Activation::Tanh;
  s.ridge_lambda = 0.25;
  const LearnerSpec back = learner_spec_from_json(to_json(s));
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.hidden_layers, s.hidden_layers);
  EXPECT_EQ(back.activation, s.activation);
  EXPECT_EQ(back.ridge_lambda, s.ridge_lambda);
  EXPECT_EQ(back.seed, s.seed);
  for (auto k : {LearnerKind::LinearRidge, LearnerKind::Logistic, LearnerKind::MlpRegressor,
                 LearnerKind::MlpClassifier, LearnerKind::Mean})
    EXPECT_EQ(parse_learner_kind(learner_kind_name(k)), k);
  EXPECT_EQ(error_kind([] { parse_learner_kind("forest"); }), "ConfigError");
  EXPECT_EQ(error_kind([] { learner_spec_from_json(nlohmann::json{{"kind", "ridge"}, {"lambda", -1}}); }),
            "ConfigError");
  EXPECT_EQ(default_mlp_regressor().hidden_layers, std::vector<int>{32});
}
