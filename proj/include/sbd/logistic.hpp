#pragma once

#include <cmath>
#include <cstdint>

#include "sbd/forest.hpp"

namespace sbd {

struct LogisticConfig {
  double learning_rate = 0.5;
  std::size_t max_iterations = 20000;
  double tolerance = 1e-6;  // stop once the gradient norm drops below this
  double init_scale = 0.01;
  std::uint64_t seed = 0;
};

struct LogisticModel {
  Vector<double> weights;
  double bias = 0.0;
  LogisticConfig config;
  std::size_t iterations = 0;

  std::size_t n_features() const { return static_cast<std::size_t>(weights.size()); }
  bool operator==(const LogisticModel& o) const {
    return weights.size() == o.weights.size() && weights == o.weights && bias == o.bias &&
           iterations == o.iterations && config.seed == o.config.seed;
  }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct LogLoss {
  double value = 0.0;
  Vector<double> grad_weights;
  double grad_bias = 0.0;
};

// Mean binary cross-entropy and its gradient.
inline LogLoss log_loss(const Vector<double>& weights, double bias, const LabeledSet& data) {
  LogLoss out;
  out.grad_weights = Vector<double>::Zero(weights.size());
  const double n = static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.features.row(static_cast<Eigen::Index>(i));
    const double y = data.labels[i];
    const double z = x.dot(weights) + bias;
    out.value += softplus(z) - y * z;
    const double err = sigmoid(z) - y;
    out.grad_weights += err * x.transpose();
    out.grad_bias += err;
  }
  out.value /= n;
  out.grad_weights /= n;
  out.grad_bias /= n;
  return out;
}

// Full-batch gradient descent from a seeded small random start.
inline LogisticModel fit_logistic(const LabeledSet& data, const LogisticConfig& cfg = {}) {
  detail::check_training_data(data);
  if (!(cfg.learning_rate > 0) || !(cfg.tolerance >= 0) || !(cfg.init_scale >= 0)) {
    throw ValidationError("invalid logistic config");
  }
  LogisticModel m;
  m.config = cfg;
  Rng rng(cfg.seed);
  m.weights.resize(static_cast<Eigen::Index>(data.width()));
  for (auto& w : m.weights) w = rng.uniform(-cfg.init_scale, cfg.init_scale);
  m.bias = 0.0;
  for (m.iterations = 0; m.iterations < cfg.max_iterations; ++m.iterations) {
    const LogLoss l = log_loss(m.weights, m.bias, data);
    const double norm = std::sqrt(l.grad_weights.squaredNorm() + l.grad_bias * l.grad_bias);
    if (norm < cfg.tolerance) break;
    m.weights -= cfg.learning_rate * l.grad_weights;
    m.bias -= cfg.learning_rate * l.grad_bias;
  }
  if (!m.weights.allFinite() || !std::isfinite(m.bias)) {
    throw TrainingDivergedError(m.iterations);
  }
  return m;
}

inline Prediction predict(const LogisticModel& model, const Vector<double>& x) {
  if (x.size() != model.weights.size()) {
    throw ShapeError("logistic model expects " + std::to_string(model.weights.size()) + " features, got " +
                     std::to_string(x.size()));
  }
  Prediction p;
  p.score = sigmoid(model.weights.dot(x) + model.bias);
  p.label = label_for_score(p.score);
  return p;
}

}  // namespace sbd
