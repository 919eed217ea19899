// Transition-matrix loss correction: the anchor-point and trusted-set
// estimators of T, the forward/backward corrections, and the GLC training
// pipeline (forward-corrected loss on untrusted rows, plain loss on trusted).

#pragma once

#include "biq/corruption.hpp"
#include "biq/learner.hpp"

namespace biq {

enum class CorrectionKind { Forward, Backward };

// One anchor feature row per class, picked from a candidate pool.
struct AnchorSet {
  Eigen::MatrixXd rows;                    // K x d
  std::vector<Eigen::Index> pool_indices;  // provenance, one per class
};

// A_i = argmax over pool rows of P(Y=i | x) under the untrusted model;
// ties broken toward the lowest row index.
AnchorSet find_anchors(const ProbClassifier& untrusted_model, const LabeledSet& pool);

// Row i of the estimate is the model's predictive vector at anchor A_i.
TransitionMatrix estimate_T_anchor(const ProbClassifier& untrusted_model,
                                   const AnchorSet& anchors);

// Row i is the mean predictive vector of the untrusted model over the
// trusted rows of class i. Throws (naming the class) when a class has no
// trusted examples.
TransitionMatrix estimate_T_trusted(const ProbClassifier& untrusted_model,
                                    const LabeledSet& trusted);

// T^t . probs; stays on the simplex for row-stochastic T.
Eigen::VectorXd forward_corrected_probs(const Eigen::VectorXd& probs,
                                        const TransitionMatrix& transition);

// T^{-1} . loss_vec; entries may be negative. Throws when T is singular or
// its condition number exceeds condition_cap.
Eigen::VectorXd backward_corrected_loss(const Eigen::VectorXd& loss_vec,
                                        const TransitionMatrix& transition,
                                        double condition_cap = 1e8);

// Inverse of T (optionally of T + diagonal_loading * I). The error message
// for ill-conditioned inputs points at the diagonal-loading option.
Eigen::MatrixXd invert_transition(const TransitionMatrix& transition,
                                  double condition_cap = 1e8, double diagonal_loading = 0.0);

struct GlcConfig {
  CorrectionKind kind = CorrectionKind::Forward;
  double trusted_upweight = 1.0;  // per-example weight multiplier on D_T
  bool diagonal_loading = false;  // backward only, never applied silently
  double loading_lambda = 1e-3;
  double condition_cap = 1e8;
};

struct GlcModel {
  ProbClassifier model;
  TransitionMatrix transition;  // the trusted-set estimate used for training
};

// 1) fit f_U on D_U; 2) estimate T from D_T; 3) minimize the corrected loss
// on D_U plus the plain loss on D_T with a single shared model.
GlcModel glc_fit(const BiqualityDataset& ds, const TrainConfig& cfg, const GlcConfig& glc = {});

}  // namespace biq
