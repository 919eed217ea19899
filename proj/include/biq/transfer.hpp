// Inductive-transfer baselines: the multi-task convex-combination loss with
// fully shared parameters, and TrAdaBoost (binary, canonical weight updates,
// half-ensemble voting).

#pragma once

#include <iosfwd>
#include <vector>

#include "biq/data.hpp"
#include "biq/learner.hpp"

namespace biq {

struct MtlConfig {
  double lambda = 0.5;  // weight on the trusted loss, in [0,1]

  void validate() const;
};

// (1 - lambda) * untrusted_loss + lambda * trusted_loss.
double mtl_loss(double trusted_loss, double untrusted_loss, double lambda);

// Single shared logistic model minimizing
// lambda * mean-CE(D_T) + (1 - lambda) * mean-CE(D_U) + l2 penalty.
ProbClassifier mtl_fit(const BiqualityDataset& ds, const MtlConfig& mtl, const TrainConfig& cfg);

struct BoostMember {
  ProbClassifier model;
  double vote_weight = 0.0;  // ln(1/beta_t), positive for kept rounds
};

// Weighted vote over the second half of the boosting rounds.
class BoostEnsemble {
 public:
  BoostEnsemble() = default;
  BoostEnsemble(std::vector<BoostMember> members);

  int rounds() const { return static_cast<int>(members_.size()); }
  int half_point() const { return rounds() / 2; }  // voting members: index >= half_point
  const std::vector<BoostMember>& members() const { return members_; }

  int predict(const Eigen::RowVectorXd& x) const;
  Eigen::VectorXd predict_proba(const Eigen::RowVectorXd& x) const;  // vote shares
  Metrics evaluate(const LabeledSet& test) const;

  void save(std::ostream& out) const;
  static BoostEnsemble load(std::istream& in);

 private:
  double vote_share(const Eigen::RowVectorXd& x) const;
  std::vector<BoostMember> members_;
};

// Round-by-round diagnostics; weights are the raw (unnormalized) boosting
// weights over the untrusted rows, snapshotted after each round's update.
struct TradaboostTrace {
  std::vector<Eigen::VectorXd> untrusted_weights;
  std::vector<double> trusted_errors;
};

// Binary TrAdaBoost over D_T (AdaBoost-style upweighting of mistakes) and
// D_U (fixed-rate downweighting of mistakes). Rounds whose trusted error
// reaches 0.5 stop boosting early.
BoostEnsemble tradaboost_fit(const BiqualityDataset& ds, int rounds, const TrainConfig& cfg,
                             TradaboostTrace* trace = nullptr);

}  // namespace biq
