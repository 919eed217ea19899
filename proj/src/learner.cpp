#include "biq/learner.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace biq {

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p = scores;
  const Eigen::VectorXd row_max = p.rowwise().maxCoeff();
  p.colwise() -= row_max;
  p = p.array().exp().matrix();
  const Eigen::VectorXd row_sum = p.rowwise().sum();
  p.array().colwise() /= row_sum.array();
  return p;
}

void print_value(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (max_iters < 1) throw std::invalid_argument("TrainConfig: max_iters must be >= 1");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("TrainConfig: tolerance must be >= 0");
  if (!(l2_penalty >= 0.0)) throw std::invalid_argument("TrainConfig: l2_penalty must be >= 0");
}

SampleWeights SampleWeights::ones(Eigen::Index n) {
  return SampleWeights{Eigen::VectorXd::Ones(n)};
}

void SampleWeights::validate(Eigen::Index expected_size) const {
  if (values.size() != expected_size) {
    throw std::invalid_argument("SampleWeights: length " + std::to_string(values.size()) +
                                " does not match set size " + std::to_string(expected_size));
  }
  if (!values.allFinite() || (values.array() < 0.0).any()) {
    throw std::invalid_argument("SampleWeights: values must be finite and nonnegative");
  }
}

ProbClassifier::ProbClassifier() : weights_(2, 1), biases_(2) {
  weights_.setZero();
  biases_.setZero();
}

ProbClassifier::ProbClassifier(Eigen::MatrixXd weights, Eigen::VectorXd biases)
    : weights_(std::move(weights)), biases_(std::move(biases)) {
  if (weights_.rows() != biases_.size() || weights_.rows() < 2 || weights_.cols() < 1) {
    throw std::invalid_argument("ProbClassifier: inconsistent parameter shapes");
  }
}

Eigen::VectorXd ProbClassifier::predict_proba(const Eigen::RowVectorXd& x) const {
  if (x.size() != dim()) {
    throw std::invalid_argument("predict_proba: input has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(dim()));
  }
  Eigen::VectorXd z = weights_ * x.transpose() + biases_;
  z.array() -= z.maxCoeff();
  Eigen::VectorXd p = z.array().exp();
  return p / p.sum();
}

Eigen::MatrixXd ProbClassifier::predict_proba(const Eigen::MatrixXd& features) const {
  if (features.cols() != dim()) {
    throw std::invalid_argument("predict_proba: feature matrix has " +
                                std::to_string(features.cols()) + " columns, model expects " +
                                std::to_string(dim()));
  }
  Eigen::MatrixXd scores = features * weights_.transpose();
  scores.rowwise() += biases_.transpose();
  return softmax_rows(scores);
}

void ProbClassifier::save(std::ostream& out) const {
  out << "biq.model.v1 " << class_count() << ' ' << dim() << '\n';
  for (Eigen::Index k = 0; k < weights_.rows(); ++k) {
    for (Eigen::Index j = 0; j < weights_.cols(); ++j) {
      if (j > 0) out << ' ';
      print_value(out, weights_(k, j));
    }
    out << '\n';
  }
  for (Eigen::Index k = 0; k < biases_.size(); ++k) {
    if (k > 0) out << ' ';
    print_value(out, biases_[k]);
  }
  out << '\n';
}

ProbClassifier ProbClassifier::load(std::istream& in) {
  std::string tag;
  int k = 0;
  Eigen::Index d = 0;
  if (!(in >> tag >> k >> d) || tag != "biq.model.v1") {
    throw std::runtime_error("ProbClassifier::load: bad header (expected biq.model.v1)");
  }
  Eigen::MatrixXd w(k, d);
  Eigen::VectorXd b(k);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (!(in >> w(i, j))) throw std::runtime_error("ProbClassifier::load: truncated weights");
    }
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (!(in >> b[i])) throw std::runtime_error("ProbClassifier::load: truncated biases");
  }
  return ProbClassifier(std::move(w), std::move(b));
}

double cross_entropy(const Eigen::VectorXd& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw std::invalid_argument("cross_entropy: label out of range");
  }
  return -std::log(std::max(probs[label], kLossFloor));
}

Metrics evaluate(const ProbClassifier& model, const LabeledSet& test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  const Eigen::MatrixXd probs = model.predict_proba(test.features());
  const int k = model.class_count();

  Eigen::VectorXd per_class_correct = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd per_class_total = Eigen::VectorXd::Zero(k);
  double correct = 0.0;
  double log_loss = 0.0;
  Eigen::Index counted = 0;

  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const int y = test.labels()[i];
    if (y == kMaskedLabel) continue;
    ++counted;
    int arg = 0;
    for (int c = 1; c < k; ++c) {
      if (probs(i, c) > probs(i, arg)) arg = c;  // ties stay at the lower index
    }
    per_class_total[y] += 1.0;
    if (arg == y) {
      correct += 1.0;
      per_class_correct[y] += 1.0;
    }
    log_loss += -std::log(std::max(probs(i, y), kLossFloor));
  }
  if (counted == 0) throw std::invalid_argument("evaluate: test set has no labeled rows");

  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    if (per_class_total[c] > 0.0) {
      recall_sum += per_class_correct[c] / per_class_total[c];
      ++present;
    }
  }
  Metrics m;
  m.accuracy = correct / static_cast<double>(counted);
  m.balanced_accuracy = recall_sum / static_cast<double>(present);
  m.mean_log_loss = log_loss / static_cast<double>(counted);
  return m;
}

void TrainProblem::validate() const {
  const Eigen::Index n = features.rows();
  if (labels.size() != n || weights.size() != n) {
    throw std::invalid_argument("TrainProblem: misaligned features/labels/weights");
  }
  if (!modes.empty() && static_cast<Eigen::Index>(modes.size()) != n) {
    throw std::invalid_argument("TrainProblem: modes length does not match rows");
  }
  if (class_count < 2) throw std::invalid_argument("TrainProblem: class_count must be >= 2");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw std::invalid_argument("TrainProblem: label out of range at row " + std::to_string(i));
    }
  }
  if (!weights.allFinite() || (weights.array() < 0.0).any()) {
    throw std::invalid_argument("TrainProblem: weights must be finite and nonnegative");
  }
  if (!(weights.sum() > 0.0)) {
    throw std::invalid_argument("TrainProblem: all weights are zero");
  }
  bool needs_forward = false;
  bool needs_backward = false;
  for (const RowLossMode m : modes) {
    needs_forward |= (m == RowLossMode::Forward);
    needs_backward |= (m == RowLossMode::Backward);
  }
  if (needs_forward &&
      (forward_matrix.rows() != class_count || forward_matrix.cols() != class_count)) {
    throw std::invalid_argument("TrainProblem: forward rows present but forward_matrix is not KxK");
  }
  if (needs_backward &&
      (backward_inverse.rows() != class_count || backward_inverse.cols() != class_count)) {
    throw std::invalid_argument("TrainProblem: backward rows present but backward_inverse is not KxK");
  }
}

ObjectiveValue eval_objective(const TrainProblem& problem, const Eigen::MatrixXd& weights,
                              const Eigen::VectorXd& biases, double l2_penalty) {
  const Eigen::Index n = problem.features.rows();
  const int k = problem.class_count;
  const double total_weight = problem.weights.sum();

  Eigen::MatrixXd scores = problem.features * weights.transpose();
  scores.rowwise() += biases.transpose();
  const Eigen::MatrixXd probs = softmax_rows(scores);

  // dloss/dscores, one row per example (unweighted)
  Eigen::MatrixXd dscores(n, k);
  double loss_sum = 0.0;

  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = problem.labels[i];
    const double w = problem.weights[i];
    const RowLossMode mode = problem.modes.empty() ? RowLossMode::Plain : problem.modes[i];

    switch (mode) {
      case RowLossMode::Plain: {
        const double py = probs(i, y);
        loss_sum += w * -std::log(std::max(py, kLossFloor));
        if (py > kLossFloor) {
          dscores.row(i) = probs.row(i);
          dscores(i, y) -= 1.0;
        } else {
          dscores.row(i).setZero();  // flat region of the floored loss
        }
        break;
      }
      case RowLossMode::Forward: {
        // m = T^t p; loss = -log(max(m_y, floor)); dL/dz_k = p_k (1 - T_{k,y}/m_y)
        const double my = probs.row(i).dot(problem.forward_matrix.col(y));
        loss_sum += w * -std::log(std::max(my, kLossFloor));
        if (my > kLossFloor) {
          dscores.row(i) =
              probs.row(i).cwiseProduct(
                  (1.0 - problem.forward_matrix.col(y).array() / my).matrix().transpose());
        } else {
          dscores.row(i).setZero();
        }
        break;
      }
      case RowLossMode::Backward: {
        // loss = sum_j Tinv(y,j) * -log(max(p_j, floor))
        const Eigen::RowVectorXd r = problem.backward_inverse.row(y);
        double row_loss = 0.0;
        double active_sum = 0.0;  // sum of r_j over non-floored classes
        Eigen::RowVectorXd direct = Eigen::RowVectorXd::Zero(k);
        for (int j = 0; j < k; ++j) {
          const double pj = probs(i, j);
          row_loss += r[j] * -std::log(std::max(pj, kLossFloor));
          if (pj > kLossFloor) {
            active_sum += r[j];
            direct[j] = r[j];
          }
        }
        loss_sum += w * row_loss;
        dscores.row(i) = active_sum * probs.row(i) - direct;
        break;
      }
    }
  }

  const Eigen::MatrixXd weighted_dscores =
      (dscores.array().colwise() * problem.weights.array()).matrix();

  ObjectiveValue out;
  out.loss = (loss_sum + 0.5 * l2_penalty * weights.squaredNorm()) / total_weight;
  out.grad_weights =
      (weighted_dscores.transpose() * problem.features + l2_penalty * weights) / total_weight;
  out.grad_biases = weighted_dscores.colwise().sum().transpose() / total_weight;
  return out;
}

ProbClassifier fit_problem(const TrainProblem& problem, const TrainConfig& cfg) {
  cfg.validate();
  problem.validate();

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(problem.class_count, problem.features.cols());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(problem.class_count);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const ObjectiveValue ov = eval_objective(problem, w, b, cfg.l2_penalty);
    if (!std::isfinite(ov.loss)) {
      throw std::runtime_error("fit: non-finite loss at iteration " + std::to_string(iter));
    }
    const double grad_norm =
        std::sqrt(ov.grad_weights.squaredNorm() + ov.grad_biases.squaredNorm());
    if (grad_norm <= cfg.tolerance) break;
    w -= cfg.learning_rate * ov.grad_weights;
    b -= cfg.learning_rate * ov.grad_biases;
  }
  return ProbClassifier(std::move(w), std::move(b));
}

ProbClassifier fit_weighted(const LabeledSet& set, const SampleWeights& weights,
                            const TrainConfig& cfg) {
  weights.validate(set.size());

  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(set.size()));
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    if (set.labels()[i] != kMaskedLabel) keep.push_back(i);
  }
  if (keep.empty()) throw std::invalid_argument("fit_weighted: no labeled rows");

  TrainProblem problem;
  problem.class_count = set.class_count();
  problem.features.resize(static_cast<Eigen::Index>(keep.size()), set.dim());
  problem.labels.resize(static_cast<Eigen::Index>(keep.size()));
  problem.weights.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const Eigen::Index r = keep[i];
    problem.features.row(static_cast<Eigen::Index>(i)) = set.features().row(r);
    problem.labels[static_cast<Eigen::Index>(i)] = set.labels()[r];
    problem.weights[static_cast<Eigen::Index>(i)] = weights.values[r];
  }
  return fit_problem(problem, cfg);
}

}  // namespace biq
