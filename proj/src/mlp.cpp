#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "mlp_network.hpp"
#include "odml/error.hpp"

namespace odml {

namespace mlp {

namespace {

Matrix activation_derivative(const Matrix& z, const Matrix& a, Activation act) {
  if (act == Activation::Relu) return (z.array() > 0.0).cast<double>().matrix();
  return (1.0 - a.array().square()).matrix();
}

template <typename Scalar>
std::vector<Scalar*> pointers_of(Network<Scalar>& net) {
  std::vector<Scalar*> out;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    for (Index k = 0; k < net.weights[l].size(); ++k) out.push_back(net.weights[l].data() + k);
    for (Index k = 0; k < net.biases[l].size(); ++k) out.push_back(net.biases[l].data() + k);
  }
  return out;
}

}  // namespace

double loss_and_gradients(const Network<double>& net, const Matrix& inputs,
                          const Vector& target, double penalty_coef, Gradients& grads) {
  const std::size_t depth = net.depth();
  const Index n = inputs.cols();
  std::vector<Matrix> z(depth);
  std::vector<Matrix> a(depth + 1);
  a[0] = inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    z[l] = net.weights[l] * a[l];
    z[l].colwise() += net.biases[l];
    a[l + 1] = (l + 1 < depth) ? activate(z[l], net.activation) : z[l];
  }

  Matrix delta(1, n);
  double data = 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const double logit = a[depth](0, i);
    if (net.classifier) {
      const double p = sigmoid(logit);
      const double pc = std::clamp(p, kProbClip, 1.0 - kProbClip);
      data -= target(i) * std::log(pc) + (1.0 - target(i)) * std::log(1.0 - pc);
      const bool clipped = p < kProbClip || p > 1.0 - kProbClip;
      delta(0, i) = clipped ? 0.0 : (p - target(i)) * inv_n;
    } else {
      const double r = logit - target(i);
      data += r * r;
      delta(0, i) = 2.0 * r * inv_n;
    }
  }
  data *= inv_n;

  grads.weights.resize(depth);
  grads.biases.resize(depth);
  double penalty = 0;
  for (std::size_t l = depth; l-- > 0;) {
    grads.weights[l] = delta * a[l].transpose();
    if (penalty_coef != 0.0) {
      grads.weights[l] += 2.0 * penalty_coef * net.weights[l];
      penalty += net.weights[l].squaredNorm();
    }
    grads.biases[l] = delta.rowwise().sum().transpose();
    if (l > 0) {
      delta = (net.weights[l].transpose() * delta).cwiseProduct(
          activation_derivative(z[l - 1], a[l], net.activation));
    }
  }
  return data + penalty_coef * penalty;
}

Network<double> initialize(const std::vector<int>& hidden, Index inputs, Activation act,
                           bool classifier, Rng& rng) {
  Network<double> net;
  net.activation = act;
  net.classifier = classifier;
  std::vector<Index> sizes{inputs};
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(1);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Index fan_in = sizes[l];
    const bool feeds_relu = act == Activation::Relu && l + 2 < sizes.size();
    const double limit =
        fan_in > 0 ? std::sqrt((feeds_relu ? 6.0 : 3.0) / static_cast<double>(fan_in)) : 0.0;
    Matrix w(sizes[l + 1], fan_in);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = limit * (2.0 * uniform01(rng) - 1.0);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector::Zero(sizes[l + 1]));
  }
  return net;
}

std::vector<double*> parameter_pointers(Network<double>& net) { return pointers_of(net); }

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.insert(out.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
    out.insert(out.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
  }
  return out;
}

}  // namespace mlp

namespace {

void standardizer(const Matrix& x, Vector& mean, Vector& scale) {
  const Index n = x.rows();
  mean = Vector::Zero(x.cols());
  scale = Vector::Ones(x.cols());
  if (n == 0) return;
  for (Index j = 0; j < x.cols(); ++j) {
    mean(j) = pairwise_mean(x.col(j));
    if (n > 1) {
      const double ss = pairwise_sum((x.col(j).array() - mean(j)).square());
      const double sd = std::sqrt(ss / static_cast<double>(n - 1));
      if (sd > 0) scale(j) = sd;
    }
  }
}

// Standardized inputs, transposed to features x rows.
Matrix standardized_t(const Matrix& x, const Vector& mean, const Vector& scale) {
  return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array())
      .matrix()
      .transpose();
}

mlp::Network<double> network_of(const TrainedModel& m) {
  mlp::Network<double> net;
  net.activation = m.spec.activation;
  net.classifier = m.spec.kind == LearnerKind::MlpClassifier;
  for (const auto& layer : m.layers) {
    net.weights.push_back(layer.weights);
    net.biases.push_back(layer.bias);
  }
  return net;
}

struct AdamState {
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  long step = 0;
};

void adam_update(mlp::Network<double>& net, const mlp::Gradients& g, AdamState& s, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++s.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t l = 0; l < net.depth(); ++l) {
    s.mw[l] = b1 * s.mw[l] + (1 - b1) * g.weights[l];
    s.vw[l] = b2 * s.vw[l] + (1 - b2) * g.weights[l].cwiseAbs2();
    net.weights[l].array() -=
        lr * (s.mw[l].array() / c1) / ((s.vw[l].array() / c2).sqrt() + eps);
    s.mb[l] = b1 * s.mb[l] + (1 - b1) * g.biases[l];
    s.vb[l] = b2 * s.vb[l] + (1 - b2) * g.biases[l].cwiseAbs2();
    net.biases[l].array() -=
        lr * (s.mb[l].array() / c1) / ((s.vb[l].array() / c2).sqrt() + eps);
  }
}

}  // namespace

Vector mlp_predict(const TrainedModel& model, const Matrix& x) {
  const Vector logits =
      mlp::forward_logits(network_of(model), standardized_t(x, model.input_mean, model.input_scale));
  if (model.spec.kind != LearnerKind::MlpClassifier) return logits;
  Vector p(logits.size());
  for (Index i = 0; i < p.size(); ++i)
    p(i) = std::clamp(sigmoid(logits(i)), std::numeric_limits<double>::min(),
                      std::nextafter(1.0, 0.0));
  return p;
}

TrainedModel fit_mlp(const Matrix& x, const Vector& y, const LearnerSpec& spec) {
  if (!spec.is_mlp()) throw Error(errc::kConfigError, "fit_mlp needs an MLP learner kind");
  const Index n = x.rows();
  if (y.size() != n) throw Error(errc::kDimensionMismatch, "x and y differ in rows");
  if (n == 0) throw Error(errc::kEmptyInput, "no training rows");
  if (!(spec.learning_rate > 0) || spec.batch_size < 1)
    throw Error(errc::kConfigError, "learning_rate must be > 0 and batch_size >= 1");
  for (int h : spec.hidden_layers)
    if (h < 1) throw Error(errc::kConfigError, "hidden layer widths must be positive");

  TrainedModel model;
  model.spec = spec;
  model.feature_dim = x.cols();
  standardizer(x, model.input_mean, model.input_scale);
  const Matrix xs = standardized_t(x, model.input_mean, model.input_scale);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng split_rng(derive_seed(spec.seed, "mlp-split"));
  shuffle_in_place(order, split_rng);
  const Index n_val = n >= 10 ? n / 10 : 0;
  const std::vector<Index> val_idx(order.begin(), order.begin() + n_val);
  std::vector<Index> train_idx(order.begin() + n_val, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  const Index n_train = static_cast<Index>(train_idx.size());

  const Matrix x_train = xs(Eigen::all, train_idx);
  const Vector y_train = y(train_idx);
  const Matrix x_val = xs(Eigen::all, val_idx);
  const Vector y_val = y(val_idx);

  Rng init_rng(derive_seed(spec.seed, "mlp-init"));
  const bool classifier = spec.kind == LearnerKind::MlpClassifier;
  mlp::Network<double> net =
      mlp::initialize(spec.hidden_layers, x.cols(), spec.activation, classifier, init_rng);
  AdamState adam;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    adam.mw.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
    adam.vw.push_back(adam.mw.back());
    adam.mb.push_back(Vector::Zero(net.biases[l].size()));
    adam.vb.push_back(adam.mb.back());
  }

  const double penalty = spec.ridge_lambda / static_cast<double>(n_train);
  const Index batch = std::min<Index>(spec.batch_size, n_train);
  Rng order_rng(derive_seed(spec.seed, "mlp-order"));
  std::vector<Index> epoch_order(static_cast<std::size_t>(n_train));
  std::iota(epoch_order.begin(), epoch_order.end(), Index{0});

  mlp::Network<double> best = net;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  mlp::Gradients grads;
  for (int epoch = 0; epoch < spec.max_epochs; ++epoch) {
    shuffle_in_place(epoch_order, order_rng);
    for (Index start = 0; start < n_train; start += batch) {
      const Index len = std::min(batch, n_train - start);
      const std::vector<Index> cols(epoch_order.begin() + start, epoch_order.begin() + start + len);
      mlp::loss_and_gradients(net, x_train(Eigen::all, cols), y_train(cols), penalty, grads);
      adam_update(net, grads, adam, spec.learning_rate);
    }
    const double train_loss = mlp::network_loss(net, x_train, y_train, penalty);
    if (!std::isfinite(train_loss))
      throw Error(errc::kNonFiniteLoss, fmt::format("training loss diverged at epoch {}", epoch));
    const double val_loss = n_val > 0 ? mlp::network_loss(net, x_val, y_val, 0.0) : train_loss;
    model.train_loss.push_back(train_loss);
    model.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = net;
      model.best_epoch = epoch;
      since_best = 0;
    } else if (spec.early_stop_patience > 0 && ++since_best >= spec.early_stop_patience) {
      break;
    }
  }

  for (std::size_t l = 0; l < best.depth(); ++l)
    model.layers.push_back({std::move(best.weights[l]), std::move(best.biases[l])});
  return model;
}

double grad_check(const LearnerSpec& spec_in, const Matrix& x, const Vector& y) {
  LearnerSpec spec = spec_in;
  if (spec.kind == LearnerKind::LinearRidge) spec.kind = LearnerKind::MlpRegressor;
  if (spec.kind == LearnerKind::Logistic) spec.kind = LearnerKind::MlpClassifier;
  if (!spec.is_mlp()) throw Error(errc::kConfigError, "grad_check needs a network learner");
  if (y.size() != x.rows()) throw Error(errc::kDimensionMismatch, "x and y differ in rows");

  Vector mean, scale;
  standardizer(x, mean, scale);
  const Matrix xs = standardized_t(x, mean, scale);
  Rng init_rng(derive_seed(spec.seed, "mlp-init"));
  mlp::Network<double> net = mlp::initialize(spec.hidden_layers, x.cols(), spec.activation,
                                             spec.kind == LearnerKind::MlpClassifier, init_rng);

  // Move relu pre-activations away from the kink so central differences do
  // not straddle it.
  if (spec.activation == Activation::Relu && net.depth() > 1) {
    constexpr double kMargin = 1e-3;
    for (int pass = 0; pass < 100; ++pass) {
      bool clean = true;
      Matrix a = xs;
      for (std::size_t l = 0; l + 1 < net.depth(); ++l) {
        Matrix z = net.weights[l] * a;
        z.colwise() += net.biases[l];
        for (Index j = 0; j < z.rows(); ++j) {
          if ((z.row(j).array().abs() < kMargin).any()) {
            net.biases[l](j) += 7.0 * kMargin;
            clean = false;
          }
        }
        a = mlp::activate(z, net.activation);
      }
      if (clean) break;
    }
  }

  const double penalty = spec.ridge_lambda / static_cast<double>(std::max<Index>(x.rows(), 1));
  mlp::Gradients grads;
  mlp::loss_and_gradients(net, xs, y, penalty, grads);
  const std::vector<double> analytic = mlp::flatten(grads);

  using Wide = long double;
  auto wide = net.cast<Wide>();
  const mlp::Mat<Wide> xw = xs.cast<Wide>();
  const mlp::Vec<Wide> yw = y.cast<Wide>();
  const Wide pen = static_cast<Wide>(penalty);
  const auto params = mlp::pointers_of(wide);
  constexpr Wide h = 1e-5L;

  double worst = 0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Wide* p = params[k];
    const Wide orig = *p;
    const Wide up = orig + h;
    const Wide down = orig - h;
    *p = up;
    const Wide lp = mlp::network_loss(wide, xw, yw, pen);
    *p = down;
    const Wide lm = mlp::network_loss(wide, xw, yw, pen);
    *p = orig;
    const double numeric = static_cast<double>((lp - lm) / (up - down));
    const double ga = analytic[k];
    const double denom = std::max({std::abs(ga), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(ga - numeric) / denom);
  }
  return worst;
}

}  // namespace odml
