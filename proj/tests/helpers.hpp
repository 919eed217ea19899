// Shared helpers for the test suites.

#pragma once

#include <cmath>
#include <initializer_list>

#include "biq/data.hpp"
#include "biq/learner.hpp"

namespace biq::testing {

inline LabeledSet int_set(std::initializer_list<int> labels, int class_count) {
  Eigen::VectorXi y(static_cast<Eigen::Index>(labels.size()));
  Eigen::Index i = 0;
  for (const int label : labels) y[i++] = label;
  Eigen::MatrixXd x(y.size(), 1);
  for (Eigen::Index r = 0; r < y.size(); ++r) x(r, 0) = static_cast<double>(r);
  return LabeledSet(std::move(x), std::move(y), class_count);
}

// Binary 1-d logistic model hitting the requested P(y=0 | x) at x=0 and x=1.
inline ProbClassifier binary_model(double p0_at_x0, double p0_at_x1) {
  // score difference z1 - z0 = w*x + b with sigmoid(-(w*x+b)) = p0(x)
  const double b = std::log((1.0 - p0_at_x0) / p0_at_x0);
  const double w = std::log((1.0 - p0_at_x1) / p0_at_x1) - b;
  Eigen::MatrixXd weights(2, 1);
  weights << 0.0, w;
  Eigen::VectorXd biases(2);
  biases << 0.0, b;
  return ProbClassifier(std::move(weights), std::move(biases));
}

// Model predicting the same simplex vector everywhere (weights are zero).
inline ProbClassifier constant_model(const Eigen::VectorXd& probs, Eigen::Index dim) {
  Eigen::VectorXd biases(probs.size());
  for (Eigen::Index k = 0; k < probs.size(); ++k) biases[k] = std::log(probs[k]);
  return ProbClassifier(Eigen::MatrixXd::Zero(probs.size(), dim), std::move(biases));
}

}  // namespace biq::testing
