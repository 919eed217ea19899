#include "biq/correction.hpp"

#include <Eigen/SVD>
#include <stdexcept>
#include <string>

namespace biq {

AnchorSet find_anchors(const ProbClassifier& untrusted_model, const LabeledSet& pool) {
  if (pool.empty()) throw std::invalid_argument("find_anchors: empty candidate pool");
  const Eigen::MatrixXd probs = untrusted_model.predict_proba(pool.features());
  const int k = untrusted_model.class_count();

  AnchorSet anchors;
  anchors.rows.resize(k, pool.dim());
  anchors.pool_indices.resize(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < pool.size(); ++i) {
      if (probs(i, c) > probs(best, c)) best = i;  // strict: ties keep the first row
    }
    anchors.rows.row(c) = pool.features().row(best);
    anchors.pool_indices[static_cast<std::size_t>(c)] = best;
  }
  return anchors;
}

TransitionMatrix estimate_T_anchor(const ProbClassifier& untrusted_model,
                                   const AnchorSet& anchors) {
  if (anchors.rows.rows() != untrusted_model.class_count() ||
      anchors.rows.cols() != untrusted_model.dim()) {
    throw std::invalid_argument("estimate_T_anchor: anchor shape does not match model");
  }
  Eigen::MatrixXd t = untrusted_model.predict_proba(anchors.rows);
  t = t.cwiseMax(0.0).cwiseMin(1.0);
  t.array().colwise() /= t.rowwise().sum().array();
  return TransitionMatrix(std::move(t));
}

TransitionMatrix estimate_T_trusted(const ProbClassifier& untrusted_model,
                                    const LabeledSet& trusted) {
  if (trusted.dim() != untrusted_model.dim() ||
      trusted.class_count() != untrusted_model.class_count()) {
    throw std::invalid_argument("estimate_T_trusted: trusted set does not match model");
  }
  const int k = trusted.class_count();
  const Eigen::MatrixXd probs = untrusted_model.predict_proba(trusted.features());

  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < trusted.size(); ++i) {
    const int y = trusted.labels()[i];
    if (y == kMaskedLabel) continue;
    t.row(y) += probs.row(i);
    mass[y] += probs.row(i).sum();
  }
  for (int c = 0; c < k; ++c) {
    if (mass[c] <= 0.0) {
      throw std::invalid_argument("estimate_T_trusted: class " + std::to_string(c) +
                                  " has no trusted examples");
    }
    t.row(c) /= mass[c];
  }
  return TransitionMatrix(std::move(t));
}

Eigen::VectorXd forward_corrected_probs(const Eigen::VectorXd& probs,
                                        const TransitionMatrix& transition) {
  if (probs.size() != transition.class_count()) {
    throw std::invalid_argument("forward_corrected_probs: dimension mismatch");
  }
  return transition.entries().transpose() * probs;
}

Eigen::MatrixXd invert_transition(const TransitionMatrix& transition, double condition_cap,
                                  double diagonal_loading) {
  const int k = transition.class_count();
  Eigen::MatrixXd t = transition.entries();
  if (diagonal_loading > 0.0) {
    t += diagonal_loading * Eigen::MatrixXd::Identity(k, k);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(t);
  const double smallest = svd.singularValues().minCoeff();
  const double largest = svd.singularValues().maxCoeff();
  if (smallest <= 0.0 || largest / smallest > condition_cap) {
    throw std::runtime_error(
        "backward correction: transition matrix is singular or ill-conditioned "
        "(condition number " +
        (smallest <= 0.0 ? std::string("inf") : std::to_string(largest / smallest)) +
        "); consider diagonal loading (T + lambda*I)");
  }
  return t.inverse();
}

Eigen::VectorXd backward_corrected_loss(const Eigen::VectorXd& loss_vec,
                                        const TransitionMatrix& transition,
                                        double condition_cap) {
  if (loss_vec.size() != transition.class_count()) {
    throw std::invalid_argument("backward_corrected_loss: dimension mismatch");
  }
  if (!loss_vec.allFinite()) {
    throw std::invalid_argument("backward_corrected_loss: loss vector must be finite");
  }
  return invert_transition(transition, condition_cap) * loss_vec;
}

GlcModel glc_fit(const BiqualityDataset& ds, const TrainConfig& cfg, const GlcConfig& glc) {
  if (ds.untrusted.labeled_count() == 0) {
    throw std::invalid_argument("glc_fit: untrusted set has no labeled rows");
  }
  if (ds.trusted.labeled_count() == 0) {
    throw std::invalid_argument("glc_fit: trusted set is empty");
  }

  // stage 1: plain fit on the untrusted data
  const ProbClassifier untrusted_model =
      fit_weighted(ds.untrusted, SampleWeights::ones(ds.untrusted.size()), cfg);

  // stage 2: transition estimate from the trusted set
  TransitionMatrix transition = estimate_T_trusted(untrusted_model, ds.trusted);

  // stage 3: corrected loss on D_U, plain loss on D_T, one shared model
  const int k = ds.class_count();
  TrainProblem problem;
  problem.class_count = k;
  if (glc.kind == CorrectionKind::Forward) {
    problem.forward_matrix = transition.entries();
  } else {
    problem.backward_inverse = invert_transition(
        transition, glc.condition_cap, glc.diagonal_loading ? glc.loading_lambda : 0.0);
  }

  const Eigen::Index n_u = ds.untrusted.size();
  const Eigen::Index n_t = ds.trusted.size();
  std::vector<Eigen::Index> keep_u, keep_t;
  for (Eigen::Index i = 0; i < n_u; ++i) {
    if (ds.untrusted.labels()[i] != kMaskedLabel) keep_u.push_back(i);
  }
  for (Eigen::Index i = 0; i < n_t; ++i) {
    if (ds.trusted.labels()[i] != kMaskedLabel) keep_t.push_back(i);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(keep_u.size() + keep_t.size());
  problem.features.resize(n, ds.dim());
  problem.labels.resize(n);
  problem.weights.resize(n);
  problem.modes.assign(static_cast<std::size_t>(n), RowLossMode::Plain);

  Eigen::Index row = 0;
  const RowLossMode corrected =
      glc.kind == CorrectionKind::Forward ? RowLossMode::Forward : RowLossMode::Backward;
  for (const Eigen::Index i : keep_u) {
    problem.features.row(row) = ds.untrusted.features().row(i);
    problem.labels[row] = ds.untrusted.labels()[i];
    problem.weights[row] = 1.0;
    problem.modes[static_cast<std::size_t>(row)] = corrected;
    ++row;
  }
  for (const Eigen::Index i : keep_t) {
    problem.features.row(row) = ds.trusted.features().row(i);
    problem.labels[row] = ds.trusted.labels()[i];
    problem.weights[row] = glc.trusted_upweight;
    ++row;
  }

  return GlcModel{fit_problem(problem, cfg), std::move(transition)};
}

}  // namespace biq
