// Weighted probabilistic base classifier: multinomial logistic regression
// trained by full-batch gradient descent, plus the loss machinery the
// meta-algorithms plug into (per-row plain / forward / backward losses).

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "biq/data.hpp"

namespace biq {

// Floor applied inside -log(.) so confident wrong predictions stay bounded.
inline constexpr double kLossFloor = 1e-12;

struct TrainConfig {
  double learning_rate = 0.2;
  int max_iters = 600;
  double tolerance = 1e-8;  // gradient-norm stopping threshold
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;   // reserved for data shuffles in ensemble methods

  void validate() const;
};

// Nonnegative per-example weights aligned to a LabeledSet.
struct SampleWeights {
  Eigen::VectorXd values;

  static SampleWeights ones(Eigen::Index n);
  void validate(Eigen::Index expected_size) const;
};

// Trained multinomial logistic model; immutable and shareable.
class ProbClassifier {
 public:
  ProbClassifier();
  ProbClassifier(Eigen::MatrixXd weights, Eigen::VectorXd biases);

  int class_count() const { return static_cast<int>(biases_.size()); }
  Eigen::Index dim() const { return weights_.cols(); }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& biases() const { return biases_; }

  // Stabilized softmax of the affine scores; output sums to 1.
  Eigen::VectorXd predict_proba(const Eigen::RowVectorXd& x) const;
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& features) const;  // n x K

  // Versioned text record: header line "biq.model.v1 K d", K weight rows,
  // one bias row. Round-trips exactly.
  void save(std::ostream& out) const;
  static ProbClassifier load(std::istream& in);

 private:
  Eigen::MatrixXd weights_;  // K x d
  Eigen::VectorXd biases_;   // K
};

// -log(max(probs[label], kLossFloor)).
double cross_entropy(const Eigen::VectorXd& probs, int label);

struct Metrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double mean_log_loss = 0.0;
};

// Argmax accuracy (ties toward the lower class index), mean per-class recall
// over classes present in the test set, and mean floored log loss.
Metrics evaluate(const ProbClassifier& model, const LabeledSet& test);

// Minimizes sum_i w_i * CE_i + l2_penalty/2 * ||W||^2 (masked rows excluded).
// Gradient descent runs on the weight-normalized surface, so the trajectory
// is invariant to jointly scaling weights and penalty.
ProbClassifier fit_weighted(const LabeledSet& set, const SampleWeights& weights,
                            const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training engine shared by the loss-correction and reweighting pipelines.

// Plain:    CE(softmax(z), y)
// Forward:  CE(T^t . softmax(z), y)
// Backward: [T^{-1} . per-class-CE(softmax(z))]_y
enum class RowLossMode : std::uint8_t { Plain, Forward, Backward };

struct TrainProblem {
  Eigen::MatrixXd features;           // n x d
  Eigen::VectorXi labels;             // n, all in {0..K-1}
  Eigen::VectorXd weights;            // n, nonnegative, sum > 0
  std::vector<RowLossMode> modes;     // empty means all Plain
  Eigen::MatrixXd forward_matrix;     // T   (Forward rows)
  Eigen::MatrixXd backward_inverse;   // T^{-1} (Backward rows)
  int class_count = 2;

  void validate() const;
};

struct ObjectiveValue {
  double loss = 0.0;            // (sum_i w_i loss_i + l2/2 ||W||^2) / sum_i w_i
  Eigen::MatrixXd grad_weights; // K x d
  Eigen::VectorXd grad_biases;  // K
};

ObjectiveValue eval_objective(const TrainProblem& problem, const Eigen::MatrixXd& weights,
                              const Eigen::VectorXd& biases, double l2_penalty);

ProbClassifier fit_problem(const TrainProblem& problem, const TrainConfig& cfg);

}  // namespace biq
