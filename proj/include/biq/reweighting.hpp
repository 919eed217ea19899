// Importance reweighting: IRBL conditional ratios, kernel mean matching, and
// the per-class DIW pipeline. The KMM quadratic program is solved by
// projected gradient descent on the box with the mean constraint enforced by
// exact projection, so no external QP solver is needed.

#pragma once

#include <filesystem>
#include <optional>

#include "biq/learner.hpp"

namespace biq {

struct KmmConfig {
  std::optional<double> kernel_bandwidth;  // empty: median pairwise distance
  double weight_cap = 1000.0;              // B
  double mean_slack = 0.01;                // |mean(beta) - 1| <= mean_slack
  int max_iters = 500;
  double step_size = 0.0;                  // <= 0: 1/L with L from power iteration

  void validate() const;
};

struct KmmResult {
  Eigen::VectorXd beta;
  double objective = 0.0;  // squared RKHS mean discrepancy at beta
  int iterations = 0;
  bool converged = true;   // false: best iterate returned after max_iters
};

// Minimizes || (1/n_U) sum_i beta_i phi(x_i) - (1/n_T) sum_j phi(z_j) ||^2
// over 0 <= beta <= B, |mean(beta) - 1| <= slack, Gaussian kernel.
KmmResult kmm_weights(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                      const KmmConfig& cfg);

enum class BetaSource { Irbl, Diw };

struct BetaWeights {
  Eigen::VectorXd values;  // aligned to the untrusted rows
  BetaSource source = BetaSource::Irbl;
};

inline constexpr double kIrblDenominatorFloor = 1e-6;
inline constexpr double kIrblWeightCap = 100.0;

// beta_i = f_T(x_i)[y_i] / max(f_U(x_i)[y_i], floor), clipped to [0, cap].
// Masked untrusted rows receive weight 0.
BetaWeights irbl_weights(const ProbClassifier& trusted_model,
                         const ProbClassifier& untrusted_model, const LabeledSet& untrusted);

struct IrblResult {
  ProbClassifier model;
  BetaWeights weights;
};

// Fits f_T and f_U, reweights D_U by the conditional ratio, then fits the
// final model on D_T (weight 1) plus the reweighted D_U.
IrblResult irbl_fit(const BiqualityDataset& ds, const TrainConfig& cfg);

struct DiwConfig {
  KmmConfig kmm;
  bool include_trusted = true;  // append D_T at weight 1 in the final fit
};

struct DiwResult {
  ProbClassifier model;
  BetaWeights weights;
};

// Per-class KMM between D_U^y (source) and D_T^y (target), scaled by the
// class-prior ratio P_T(y)/P_U(y); final fit on the reweighted data.
DiwResult diw_fit(const BiqualityDataset& ds, const DiwConfig& diw, const TrainConfig& cfg);

// Weight-normalized empirical risk: (1/sum w) * sum_i w_i CE(f(x_i), y_i).
double reweighted_risk(const ProbClassifier& model, const LabeledSet& set,
                       const SampleWeights& weights);

// Audit dump: one decimal per line, aligned to the untrusted row order.
void dump_weights(const std::filesystem::path& path, const BetaWeights& weights);
Eigen::VectorXd load_weight_dump(const std::filesystem::path& path);

}  // namespace biq
