// Label-corruption machinery: transition matrices, CAR/AR/NAR noise
// injection, label masking for PU-style settings, and the KL-ratio quality
// measure q. All injectors are pure functions of (input, spec, seed).

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "biq/data.hpp"
#include "biq/learner.hpp"

namespace biq {

// Row-stochastic K x K matrix; entries(i, j) = P(observed = j | clean = i).
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Eigen::MatrixXd entries);

  static TransitionMatrix identity(int class_count);

  const Eigen::MatrixXd& entries() const { return entries_; }
  int class_count() const { return static_cast<int>(entries_.rows()); }

 private:
  Eigen::MatrixXd entries_;
};

// Uniform-flip channel: diagonal 1-rho, off-diagonal rho/(K-1).
TransitionMatrix car_matrix(int class_count, double rho);

struct CarSpec {
  double rho = 0.0;
};
struct ArSpec {
  Eigen::MatrixXd matrix;  // row-stochastic K x K
};
struct NarSpec {
  Eigen::VectorXd direction;  // length d
  double strength = 0.0;
  double target_rate = 0.0;  // per-class mean flip rate after calibration
};
struct MaskSpec {
  Eigen::VectorXd keep_prob;  // length K, values in [0,1]
};

struct CorruptionSpec {
  std::variant<CarSpec, ArSpec, NarSpec, MaskSpec> kind;
  std::uint64_t seed = 0;

  // Compact text codec used by the harness config format:
  //   car:RHO | uniform | ar:r00,r01;r10,r11 | nar:STRENGTH:TARGET[:w1,w2,..]
  //   | mask:k0,k1,..
  // "uniform" resolves to car:(K-1)/K, i.e. labels redrawn uniformly.
  static CorruptionSpec parse(const std::string& text, int class_count, Eigen::Index dim,
                              std::uint64_t seed);
  std::string to_string() const;
};

struct CorruptionResult {
  LabeledSet corrupted;
  std::vector<std::uint8_t> flip_mask;  // 1 where the label changed / was masked
};

// Redraws each label from row T[y]; features untouched.
CorruptionResult apply_label_noise(const LabeledSet& set, const TransitionMatrix& transition,
                                   std::uint64_t seed);

// Instance-dependent flips: row i of class y flips with probability
// sigmoid(strength * (direction . x_i) - shift_y), shift_y calibrated per
// class so the class mean flip rate equals target_rate. Flipped labels are
// redrawn uniformly among the other K-1 classes.
CorruptionResult apply_nar_noise(const LabeledSet& set, const Eigen::VectorXd& direction,
                                 double strength, double target_rate, std::uint64_t seed);

// Keeps the label of a class-y row with probability keep_prob[y]; otherwise
// replaces it with the masked sentinel (-1).
CorruptionResult mask_labels(const LabeledSet& set, const Eigen::VectorXd& keep_prob,
                             std::uint64_t seed);

CorruptionResult apply_corruption(const LabeledSet& set, const CorruptionSpec& spec);

struct QualityEstimate {
  double q = 1.0;
  double mean_kl = 0.0;       // mean KL(f_T || f_U) over the probe, nats
  double reference_kl = 0.0;  // mean KL(f_T || uniform) over the probe, nats
  bool degenerate_reference = false;
};

// q = clamp(1 - mean_kl / reference_kl, 0, 1); q = 1 when mean_kl = 0 and
// q = 0 (flagged) when the reference divergence is zero but mean_kl is not.
QualityEstimate measure_quality(const ProbClassifier& trusted_model,
                                const ProbClassifier& untrusted_model, const LabeledSet& probe);

}  // namespace biq
