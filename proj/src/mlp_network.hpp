#pragma once

// Feed-forward network used by the MLP learners. The loss is templated on the
// scalar so the finite-difference gradient oracle can run in extended
// precision against the double backpropagation path.

#include <vector>

#include "odml/learners.hpp"

namespace odml::mlp {

inline constexpr double kProbClip = 1e-7;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Network {
  std::vector<Mat<Scalar>> weights;  // layer l: out x in
  std::vector<Vec<Scalar>> biases;
  Activation activation = Activation::Relu;
  bool classifier = false;

  std::size_t depth() const { return weights.size(); }

  template <typename Other>
  Network<Other> cast() const {
    Network<Other> out;
    out.activation = activation;
    out.classifier = classifier;
    for (std::size_t l = 0; l < depth(); ++l) {
      out.weights.push_back(weights[l].template cast<Other>());
      out.biases.push_back(biases[l].template cast<Other>());
    }
    return out;
  }
};

template <typename Scalar>
Mat<Scalar> activate(const Mat<Scalar>& z, Activation a) {
  if (a == Activation::Relu) return z.cwiseMax(Scalar(0));
  return z.array().tanh().matrix();
}

/// Output-layer pre-activations for inputs laid out features x batch.
template <typename Scalar>
Vec<Scalar> forward_logits(const Network<Scalar>& net, const Mat<Scalar>& inputs) {
  Mat<Scalar> a = inputs;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Mat<Scalar> z = net.weights[l] * a;
    z.colwise() += net.biases[l];
    a = (l + 1 < net.depth()) ? activate(z, net.activation) : z;
  }
  return a.row(0).transpose();
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar z) {
  using std::exp;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

/// Mean data loss plus penalty_coef * sum of squared weights (biases are not
/// penalized).
template <typename Scalar>
Scalar network_loss(const Network<Scalar>& net, const Mat<Scalar>& inputs,
                    const Vec<Scalar>& target, Scalar penalty_coef) {
  using std::log;
  const Vec<Scalar> logits = forward_logits(net, inputs);
  const Index n = logits.size();
  Scalar data(0);
  if (net.classifier) {
    const Scalar lo(kProbClip), hi = Scalar(1) - Scalar(kProbClip);
    for (Index i = 0; i < n; ++i) {
      Scalar p = stable_sigmoid(logits(i));
      p = p < lo ? lo : (p > hi ? hi : p);
      data -= target(i) * log(p) + (Scalar(1) - target(i)) * log(Scalar(1) - p);
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      const Scalar r = logits(i) - target(i);
      data += r * r;
    }
  }
  data /= Scalar(n);
  Scalar penalty(0);
  if (penalty_coef != Scalar(0))
    for (const auto& w : net.weights) penalty += w.squaredNorm();
  return data + penalty_coef * penalty;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

/// Backpropagation of network_loss; returns the loss.
double loss_and_gradients(const Network<double>& net, const Matrix& inputs,
                          const Vector& target, double penalty_coef, Gradients& grads);

Network<double> initialize(const std::vector<int>& hidden, Index inputs, Activation act,
                           bool classifier, Rng& rng);

/// Parameters in a fixed flat order: per layer, weights column-major then biases.
std::vector<double*> parameter_pointers(Network<double>& net);
std::vector<double> flatten(const Gradients& g);

}  // namespace odml::mlp

namespace odml {
Vector mlp_predict(const TrainedModel& model, const Matrix& x);
}  // namespace odml
