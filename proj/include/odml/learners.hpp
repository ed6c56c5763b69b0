#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/numeric.hpp"

namespace odml {

enum class LearnerKind {
  LinearRidge,
  Logistic,
  MlpRegressor,
  MlpClassifier,
  Mean,  // intercept-only predictor; diagnostics and forced-propensity runs
};

enum class Activation { Relu, Tanh };

std::string_view learner_kind_name(LearnerKind k);
LearnerKind parse_learner_kind(std::string_view s);
std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);

struct LearnerSpec {
  LearnerKind kind = LearnerKind::LinearRidge;
  double ridge_lambda = 0.0;
  std::vector<int> hidden_layers;  // empty: linear-in-features with output link
  Activation activation = Activation::Relu;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 500;
  int early_stop_patience = 20;
  std::uint64_t seed = 20241206;

  bool is_classifier() const {
    return kind == LearnerKind::Logistic || kind == LearnerKind::MlpClassifier;
  }
  bool is_mlp() const {
    return kind == LearnerKind::MlpRegressor || kind == LearnerKind::MlpClassifier;
  }
};

/// One hidden layer of 32 relu units, Adam at 1e-3, batch 64, 500 epochs,
/// patience 20.
LearnerSpec default_mlp_regressor();
LearnerSpec default_mlp_classifier();

nlohmann::json to_json(const LearnerSpec& spec);
LearnerSpec learner_spec_from_json(const nlohmann::json& j);

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;
};

/// A fitted nuisance predictor. Linear and logistic models use coef/intercept
/// (logistic on standardized inputs); MLPs use layers on standardized inputs.
struct TrainedModel {
  LearnerSpec spec;
  Index feature_dim = 0;
  Vector coef;
  double intercept = 0.0;
  Vector input_mean;
  Vector input_scale;
  std::vector<DenseLayer> layers;
  std::vector<double> train_loss;  // per epoch (MLP) or per Newton iteration
  std::vector<double> val_loss;    // per epoch, MLP only
  int best_epoch = -1;
};

/// Minimizes ||y - x b - c||^2 + lambda ||b||^2 with c unpenalized, through
/// the Cholesky factor of the centered Gram matrix.
TrainedModel fit_linear(const Matrix& x, const Vector& y, double lambda);

/// Damped Newton on the Bernoulli log-likelihood with penalty
/// (lambda / 2) ||b||^2 on standardized slopes. Stops when the per-row
/// gradient max-norm drops below 1e-8 or after 100 iterations.
TrainedModel fit_logistic(const Matrix& x, const Vector& d, double lambda);

/// Mini-batch Adam on MSE (regressor) or cross-entropy (classifier), with a
/// seeded 10% validation hold-out for early stopping. Returns the best
/// validation checkpoint.
TrainedModel fit_mlp(const Matrix& x, const Vector& y, const LearnerSpec& spec);

TrainedModel fit_mean(const Matrix& x, const Vector& y, const LearnerSpec& spec);

/// Dispatches on spec.kind.
TrainedModel fit(const LearnerSpec& spec, const Matrix& x, const Vector& y);

Vector predict(const TrainedModel& model, const Matrix& x);

/// Largest relative disagreement between backpropagated and central
/// finite-difference (step 1e-5) loss gradients over every network
/// parameter, on a freshly initialized network for `spec`.
double grad_check(const LearnerSpec& spec, const Matrix& x, const Vector& y);

std::string serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::string_view blob);

inline constexpr std::string_view kModelMagic = "ODML1";

}  // namespace odml
