#include "odml/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "mlp_network.hpp"
#include "odml/error.hpp"

namespace odml {

std::string_view learner_kind_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::LinearRidge: return "linear_ridge";
    case LearnerKind::Logistic: return "logistic";
    case LearnerKind::MlpRegressor: return "mlp_regressor";
    case LearnerKind::MlpClassifier: return "mlp_classifier";
    case LearnerKind::Mean: return "mean";
  }
  return "?";
}

LearnerKind parse_learner_kind(std::string_view s) {
  for (LearnerKind k : {LearnerKind::LinearRidge, LearnerKind::Logistic, LearnerKind::MlpRegressor,
                        LearnerKind::MlpClassifier, LearnerKind::Mean})
    if (learner_kind_name(k) == s) return k;
  throw Error(errc::kConfigError, fmt::format("unknown learner kind '{}'", s));
}

std::string_view activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "tanh";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw Error(errc::kConfigError, fmt::format("unknown activation '{}'", s));
}

LearnerSpec default_mlp_regressor() {
  LearnerSpec s;
  s.kind = LearnerKind::MlpRegressor;
  s.hidden_layers = {32};
  return s;
}

LearnerSpec default_mlp_classifier() {
  LearnerSpec s = default_mlp_regressor();
  s.kind = LearnerKind::MlpClassifier;
  return s;
}

nlohmann::json to_json(const LearnerSpec& s) {
  return {{"kind", learner_kind_name(s.kind)},
          {"lambda", s.ridge_lambda},
          {"hidden", s.hidden_layers},
          {"activation", activation_name(s.activation)},
          {"lr", s.learning_rate},
          {"batch", s.batch_size},
          {"epochs", s.max_epochs},
          {"patience", s.early_stop_patience},
          {"seed", s.seed}};
}

LearnerSpec learner_spec_from_json(const nlohmann::json& j) {
  LearnerSpec s;
  try {
    if (j.contains("kind")) s.kind = parse_learner_kind(j.at("kind").get<std::string>());
    if (s.is_mlp()) s.hidden_layers = {32};
    s.ridge_lambda = j.value("lambda", s.ridge_lambda);
    if (j.contains("hidden")) s.hidden_layers = j.at("hidden").get<std::vector<int>>();
    if (j.contains("activation"))
      s.activation = parse_activation(j.at("activation").get<std::string>());
    s.learning_rate = j.value("lr", s.learning_rate);
    s.batch_size = j.value("batch", s.batch_size);
    s.max_epochs = j.value("epochs", s.max_epochs);
    s.early_stop_patience = j.value("patience", s.early_stop_patience);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kConfigError, fmt::format("learner spec: {}", e.what()));
  }
  if (s.ridge_lambda < 0) throw Error(errc::kConfigError, "lambda must be >= 0");
  return s;
}

namespace {

void check_rows(const Matrix& x, const Vector& y) {
  if (x.rows() != y.size())
    throw Error(errc::kDimensionMismatch,
                fmt::format("x has {} rows but target has {}", x.rows(), y.size()));
  if (x.rows() == 0) throw Error(errc::kEmptyInput, "no training rows");
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double clamp_open_unit(double p) {
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

}  // namespace

TrainedModel fit_linear(const Matrix& x, const Vector& y, double lambda) {
  check_rows(x, y);
  if (lambda < 0) throw Error(errc::kConfigError, "lambda must be >= 0");
  TrainedModel m;
  m.spec.kind = LearnerKind::LinearRidge;
  m.spec.ridge_lambda = lambda;
  m.feature_dim = x.cols();
  const double ybar = pairwise_mean(y);
  if (x.cols() == 0) {
    m.coef = Vector::Zero(0);
    m.intercept = ybar;
    return m;
  }
  const Vector xbar = x.colwise().mean().transpose();
  const Matrix xc = x.rowwise() - xbar.transpose();
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(gram);
  bool singular = llt.info() != Eigen::Success;
  if (!singular && lambda == 0.0) {
    const Vector pivots = llt.matrixLLT().diagonal().array().square();
    singular = pivots.minCoeff() < 1e-12 * gram.diagonal().maxCoeff();
  }
  if (singular)
    throw Error(errc::kSingularDesign, "centered Gram matrix is not positive definite");
  m.coef = llt.solve(xc.transpose() * (y.array() - ybar).matrix());
  m.intercept = ybar - xbar.dot(m.coef);
  return m;
}

TrainedModel fit_logistic(const Matrix& x, const Vector& d, double lambda) {
  check_rows(x, d);
  if (lambda < 0) throw Error(errc::kConfigError, "lambda must be >= 0");
  if (d.minCoeff() == d.maxCoeff())
    throw Error(errc::kConstantTreatment, "logistic fit needs both classes");
  const Index n = x.rows();

  TrainedModel m;
  m.spec.kind = LearnerKind::Logistic;
  m.spec.ridge_lambda = lambda;
  m.feature_dim = x.cols();
  m.input_mean = Vector::Zero(x.cols());
  m.input_scale = Vector::Ones(x.cols());
  std::vector<Index> active;
  for (Index j = 0; j < x.cols(); ++j) {
    m.input_mean(j) = pairwise_mean(x.col(j));
    const double ss = pairwise_sum((x.col(j).array() - m.input_mean(j)).square());
    const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    if (sd > 0) {
      m.input_scale(j) = sd;
      active.push_back(j);
    }
  }
  const Index q = static_cast<Index>(active.size());
  Matrix z(n, q + 1);
  z.col(0).setOnes();
  for (Index k = 0; k < q; ++k) {
    const Index j = active[static_cast<std::size_t>(k)];
    z.col(k + 1) = (x.col(j).array() - m.input_mean(j)) / m.input_scale(j);
  }

  Vector penalty_mask = Vector::Constant(q + 1, lambda);
  penalty_mask(0) = 0.0;
  auto objective = [&](const Vector& theta) {
    const Vector eta = z * theta;
    double s = 0;
    for (Index i = 0; i < n; ++i) s += softplus(eta(i)) - d(i) * eta(i);
    return s + 0.5 * theta.cwiseProduct(penalty_mask).dot(theta);
  };

  Vector theta = Vector::Zero(q + 1);
  const double dbar = pairwise_mean(d);
  theta(0) = std::log(dbar / (1.0 - dbar));
  double obj = objective(theta);
  for (int iter = 0; iter < 100; ++iter) {
    Vector p(n);
    for (Index i = 0; i < n; ++i) p(i) = sigmoid(z.row(i).dot(theta));
    const Vector grad = z.transpose() * (p - d) + penalty_mask.cwiseProduct(theta);
    if (grad.cwiseAbs().maxCoeff() / static_cast<double>(n) < 1e-8) break;
    const Vector w = p.array() * (1.0 - p.array());
    Matrix hess = z.transpose() * w.asDiagonal() * z;
    hess.diagonal() += penalty_mask;
    hess.diagonal().array() += 1e-12 * (1.0 + hess.diagonal().maxCoeff());
    const Vector step = hess.ldlt().solve(grad);

    double t = 1.0;
    Vector candidate = theta - step;
    double cand_obj = objective(candidate);
    int halvings = 0;
    while (!(cand_obj <= obj) && halvings < 40) {
      t *= 0.5;
      candidate = theta - t * step;
      cand_obj = objective(candidate);
      ++halvings;
    }
    if (!(cand_obj <= obj)) break;
    const bool stalled = obj - cand_obj <= 0.0 && t < 1.0;
    theta = candidate;
    obj = cand_obj;
    m.train_loss.push_back(obj / static_cast<double>(n));
    if (stalled) break;
  }
  // Collinear columns (a cubic in one variable) can carry large finite
  // coefficients; separation also drives the linear predictor off to infinity.
  if (lambda == 0.0 && q > 0) {
    const double coef_max = theta.tail(q).cwiseAbs().maxCoeff();
    const double eta_max = (z * theta).cwiseAbs().maxCoeff();
    if (coef_max > 30.0 && eta_max > 30.0)
      throw Error(errc::kSeparationDetected,
                  fmt::format("standardized coefficient magnitude {:.3g} with linear predictor {:.3g}",
                              coef_max, eta_max));
  }
  if (lambda == 0.0 && q > 0) {
    const Vector eta = z * theta;
    bool perfect = true;
    for (Index i = 0; i < n && perfect; ++i) perfect = std::abs(sigmoid(eta(i)) - d(i)) < 1e-6;
    if (perfect) throw Error(errc::kSeparationDetected, "fitted probabilities reproduce labels exactly");
  }

  m.intercept = theta(0);
  m.coef = Vector::Zero(x.cols());
  for (Index k = 0; k < q; ++k) m.coef(active[static_cast<std::size_t>(k)]) = theta(k + 1);
  return m;
}

TrainedModel fit_mean(const Matrix& x, const Vector& y, const LearnerSpec& spec) {
  check_rows(x, y);
  TrainedModel m;
  m.spec = spec;
  m.spec.kind = LearnerKind::Mean;
  m.feature_dim = x.cols();
  m.coef = Vector::Zero(x.cols());
  m.intercept = pairwise_mean(y);
  return m;
}

TrainedModel fit(const LearnerSpec& spec, const Matrix& x, const Vector& y) {
  TrainedModel m;
  switch (spec.kind) {
    case LearnerKind::LinearRidge: m = fit_linear(x, y, spec.ridge_lambda); break;
    case LearnerKind::Logistic: m = fit_logistic(x, y, spec.ridge_lambda); break;
    case LearnerKind::MlpRegressor:
    case LearnerKind::MlpClassifier: return fit_mlp(x, y, spec);
    case LearnerKind::Mean: return fit_mean(x, y, spec);
  }
  const auto log = std::move(m.train_loss);
  m.spec = spec;
  m.train_loss = log;
  return m;
}

Vector predict(const TrainedModel& m, const Matrix& x) {
  if (x.cols() != m.feature_dim)
    throw Error(errc::kDimensionMismatch,
                fmt::format("model expects {} features, got {}", m.feature_dim, x.cols()));
  switch (m.spec.kind) {
    case LearnerKind::LinearRidge:
      return (x * m.coef).array() + m.intercept;
    case LearnerKind::Mean:
      return Vector::Constant(x.rows(), m.intercept);
    case LearnerKind::Logistic: {
      const Matrix xs =
          (x.rowwise() - m.input_mean.transpose()).array().rowwise() / m.input_scale.transpose().array();
      const Vector eta = (xs * m.coef).array() + m.intercept;
      return eta.unaryExpr([](double e) { return clamp_open_unit(sigmoid(e)); });
    }
    case LearnerKind::MlpRegressor:
    case LearnerKind::MlpClassifier:
      return mlp_predict(m, x);
  }
  return {};
}

// Binary layout: magic, then fixed-width little-endian fields in declaration
// order; vectors and matrices are length-prefixed (rows, cols for matrices).
namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void vec(const Vector& v) {
    pod<std::int64_t>(v.size());
    for (Index i = 0; i < v.size(); ++i) pod(v(i));
  }
  void mat(const Matrix& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    for (Index i = 0; i < m.size(); ++i) pod(m.data()[i]);
  }
  void doubles(const std::vector<double>& v) {
    pod<std::int64_t>(static_cast<std::int64_t>(v.size()));
    for (double x : v) pod(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T pod() {
    if (pos_ + sizeof(T) > in_.size()) throw Error(errc::kParseError, "truncated model blob");
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Index length() {
    const auto n = pod<std::int64_t>();
    if (n < 0 || static_cast<std::size_t>(n) > in_.size())
      throw Error(errc::kParseError, "corrupt length in model blob");
    return static_cast<Index>(n);
  }
  Vector vec() {
    Vector v(length());
    for (Index i = 0; i < v.size(); ++i) v(i) = pod<double>();
    return v;
  }
  Matrix mat() {
    const Index r = length();
    const Index c = length();
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = pod<double>();
    return m;
  }
  std::vector<double> doubles() {
    std::vector<double> v(static_cast<std::size_t>(length()));
    for (double& x : v) x = pod<double>();
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const TrainedModel& m) {
  Writer w;
  const LearnerSpec& s = m.spec;
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(s.activation));
  w.pod(s.ridge_lambda);
  w.pod(s.learning_rate);
  w.pod<std::int32_t>(s.batch_size);
  w.pod<std::int32_t>(s.max_epochs);
  w.pod<std::int32_t>(s.early_stop_patience);
  w.pod<std::uint64_t>(s.seed);
  w.pod<std::int64_t>(static_cast<std::int64_t>(s.hidden_layers.size()));
  for (int h : s.hidden_layers) w.pod<std::int32_t>(h);
  w.pod<std::int64_t>(m.feature_dim);
  w.vec(m.coef);
  w.pod(m.intercept);
  w.vec(m.input_mean);
  w.vec(m.input_scale);
  w.pod<std::int64_t>(static_cast<std::int64_t>(m.layers.size()));
  for (const auto& layer : m.layers) {
    w.mat(layer.weights);
    w.vec(layer.bias);
  }
  w.doubles(m.train_loss);
  w.doubles(m.val_loss);
  w.pod<std::int32_t>(m.best_epoch);
  return std::string(kModelMagic) + w.take();
}

TrainedModel deserialize_model(std::string_view blob) {
  if (blob.substr(0, kModelMagic.size()) != kModelMagic)
    throw Error(errc::kParseError, "not an ODML1 model blob");
  Reader r(blob.substr(kModelMagic.size()));
  TrainedModel m;
  LearnerSpec& s = m.spec;
  const auto kind = r.pod<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(LearnerKind::Mean))
    throw Error(errc::kParseError, "unknown learner kind in model blob");
  s.kind = static_cast<LearnerKind>(kind);
  s.activation = static_cast<Activation>(r.pod<std::uint8_t>());
  s.ridge_lambda = r.pod<double>();
  s.learning_rate = r.pod<double>();
  s.batch_size = r.pod<std::int32_t>();
  s.max_epochs = r.pod<std::int32_t>();
  s.early_stop_patience = r.pod<std::int32_t>();
  s.seed = r.pod<std::uint64_t>();
  s.hidden_layers.resize(static_cast<std::size_t>(r.length()));
  for (int& h : s.hidden_layers) h = r.pod<std::int32_t>();
  m.feature_dim = r.pod<std::int64_t>();
  m.coef = r.vec();
  m.intercept = r.pod<double>();
  m.input_mean = r.vec();
  m.input_scale = r.vec();
  m.layers.resize(static_cast<std::size_t>(r.length()));
  for (auto& layer : m.layers) {
    layer.weights = r.mat();
    layer.bias = r.vec();
  }
  m.train_loss = r.doubles();
  m.val_loss = r.doubles();
  m.best_epoch = r.pod<std::int32_t>();
  if (!r.done()) throw Error(errc::kParseError, "trailing bytes in model blob");
  return m;
}

}  // namespace odml
