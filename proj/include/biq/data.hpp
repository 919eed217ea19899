// Data model for biquality learning: dense labeled sets, the paired
// trusted/untrusted dataset, class slices and stratified splitting.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace biq {

// Label value marking a masked (unlabeled) row.
inline constexpr int kMaskedLabel = -1;

// Dense feature matrix (n x d) with integer labels in {0..K-1}; label -1
// marks an unlabeled row. Immutable after construction and safe to share
// across threads.
class LabeledSet {
 public:
  LabeledSet();
  LabeledSet(Eigen::MatrixXd features, Eigen::VectorXi labels, int class_count);

  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXi& labels() const { return labels_; }
  int class_count() const { return class_count_; }
  Eigen::Index size() const { return labels_.size(); }
  Eigen::Index dim() const { return features_.cols(); }
  bool empty() const { return size() == 0; }

  // Number of rows carrying a real label (not the masked sentinel).
  Eigen::Index labeled_count() const;

  // New set holding the given rows, in the given order.
  LabeledSet take_rows(const std::vector<Eigen::Index>& rows) const;

  // Same features, different labels (used by the corruption injectors).
  LabeledSet with_labels(Eigen::VectorXi labels) const;

  // Empty set sharing this set's dimensionality and class count.
  LabeledSet empty_like() const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXi labels_;
  int class_count_ = 2;
};

// One trusted and one untrusted set over the same feature space. flip_mask,
// when present, records which untrusted labels were corrupted; it is ground
// truth from synthesis and must only be read by evaluation code.
struct BiqualityDataset {
  LabeledSet trusted;
  LabeledSet untrusted;
  std::optional<std::vector<std::uint8_t>> flip_mask;

  BiqualityDataset(LabeledSet trusted_set, LabeledSet untrusted_set,
                   std::optional<std::vector<std::uint8_t>> mask = std::nullopt);

  int class_count() const { return trusted.class_count(); }
  Eigen::Index dim() const { return trusted.dim(); }
};

// Rows of a parent set belonging to one class.
struct ClassSlice {
  const LabeledSet* parent = nullptr;
  int class_index = 0;
  std::vector<Eigen::Index> row_indices;

  Eigen::Index size() const { return static_cast<Eigen::Index>(row_indices.size()); }
  LabeledSet materialize() const { return parent->take_rows(row_indices); }
};

// |D_T| / (|D_T| + |D_U|). Throws when both sets are empty.
double trusted_ratio(const BiqualityDataset& ds);

// One slice per class, in class order; masked rows belong to no slice.
std::vector<ClassSlice> split_by_class(const LabeledSet& set);

// Index-level stratified split: first part receives ~fraction of each class
// (at least one row per class on each side). Deterministic for a fixed seed;
// both index lists are sorted ascending and partition the labeled rows.
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>
stratified_split_indices(const LabeledSet& set, double fraction, std::uint64_t seed);

std::pair<LabeledSet, LabeledSet> stratified_split(const LabeledSet& set,
                                                   double fraction,
                                                   std::uint64_t seed);

}  // namespace biq
