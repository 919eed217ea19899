#include "biq/data.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "biq/rng.hpp"

namespace biq {

namespace {

void check_labels(const Eigen::VectorXi& labels, int class_count) {
  if (class_count < 2) {
    throw std::invalid_argument("LabeledSet: class_count must be >= 2, got " +
                                std::to_string(class_count));
  }
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != kMaskedLabel && (y < 0 || y >= class_count)) {
      throw std::invalid_argument("LabeledSet: label " + std::to_string(y) +
                                  " at row " + std::to_string(i) +
                                  " outside {0.." + std::to_string(class_count - 1) + "}");
    }
  }
}

}  // namespace

LabeledSet::LabeledSet() : features_(0, 1), labels_(0), class_count_(2) {}

LabeledSet::LabeledSet(Eigen::MatrixXd features, Eigen::VectorXi labels, int class_count)
    : features_(std::move(features)), labels_(std::move(labels)), class_count_(class_count) {
  if (features_.rows() != labels_.size()) {
    throw std::invalid_argument("LabeledSet: feature rows (" +
                                std::to_string(features_.rows()) + ") != label count (" +
                                std::to_string(labels_.size()) + ")");
  }
  if (features_.cols() < 1) {
    throw std::invalid_argument("LabeledSet: feature dimension must be >= 1");
  }
  check_labels(labels_, class_count_);
  if (!features_.allFinite()) {
    throw std::invalid_argument("LabeledSet: features contain non-finite values");
  }
}

Eigen::Index LabeledSet::labeled_count() const {
  return (labels_.array() != kMaskedLabel).count();
}

LabeledSet LabeledSet::take_rows(const std::vector<Eigen::Index>& rows) const {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), dim());
  Eigen::VectorXi y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Eigen::Index r = rows[i];
    if (r < 0 || r >= size()) {
      throw std::out_of_range("LabeledSet::take_rows: row index " + std::to_string(r));
    }
    f.row(static_cast<Eigen::Index>(i)) = features_.row(r);
    y[static_cast<Eigen::Index>(i)] = labels_[r];
  }
  return LabeledSet(std::move(f), std::move(y), class_count_);
}

LabeledSet LabeledSet::with_labels(Eigen::VectorXi labels) const {
  return LabeledSet(features_, std::move(labels), class_count_);
}

LabeledSet LabeledSet::empty_like() const {
  return LabeledSet(Eigen::MatrixXd(0, dim()), Eigen::VectorXi(0), class_count_);
}

BiqualityDataset::BiqualityDataset(LabeledSet trusted_set, LabeledSet untrusted_set,
                                   std::optional<std::vector<std::uint8_t>> mask)
    : trusted(std::move(trusted_set)),
      untrusted(std::move(untrusted_set)),
      flip_mask(std::move(mask)) {
  if (trusted.dim() != untrusted.dim()) {
    throw std::invalid_argument("BiqualityDataset: feature dimensions differ");
  }
  if (trusted.class_count() != untrusted.class_count()) {
    throw std::invalid_argument("BiqualityDataset: class counts differ");
  }
  if (trusted.empty() && untrusted.empty()) {
    throw std::invalid_argument("BiqualityDataset: both sets are empty");
  }
  if (flip_mask && static_cast<Eigen::Index>(flip_mask->size()) != untrusted.size()) {
    throw std::invalid_argument("BiqualityDataset: flip_mask length != untrusted size");
  }
}

double trusted_ratio(const BiqualityDataset& ds) {
  const auto total = ds.trusted.size() + ds.untrusted.size();
  if (total == 0) throw std::invalid_argument("trusted_ratio: empty dataset");
  return static_cast<double>(ds.trusted.size()) / static_cast<double>(total);
}

std::vector<ClassSlice> split_by_class(const LabeledSet& set) {
  std::vector<ClassSlice> slices(static_cast<std::size_t>(set.class_count()));
  for (int c = 0; c < set.class_count(); ++c) {
    slices[static_cast<std::size_t>(c)].parent = &set;
    slices[static_cast<std::size_t>(c)].class_index = c;
  }
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const int y = set.labels()[i];
    if (y == kMaskedLabel) continue;
    slices[static_cast<std::size_t>(y)].row_indices.push_back(i);
  }
  return slices;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>
stratified_split_indices(const LabeledSet& set, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("stratified_split: fraction must lie in (0,1)");
  }
  Rng rng(seed);
  std::vector<Eigen::Index> first;
  std::vector<Eigen::Index> second;
  for (const ClassSlice& slice : split_by_class(set)) {
    const Eigen::Index n = slice.size();
    if (n == 0) continue;
    if (n < 2) {
      throw std::invalid_argument("stratified_split: class " +
                                  std::to_string(slice.class_index) +
                                  " has fewer than 2 examples; one side would be empty");
    }
    // round to nearest, then keep at least one row on each side
    Eigen::Index take = static_cast<Eigen::Index>(
        std::llround(fraction * static_cast<double>(n)));
    take = std::clamp<Eigen::Index>(take, 1, n - 1);

    std::vector<Eigen::Index> order = slice.row_indices;
    rng.shuffle(order);
    first.insert(first.end(), order.begin(), order.begin() + take);
    second.insert(second.end(), order.begin() + take, order.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

std::pair<LabeledSet, LabeledSet> stratified_split(const LabeledSet& set,
                                                   double fraction,
                                                   std::uint64_t seed) {
  auto [first, second] = stratified_split_indices(set, fraction, seed);
  return {set.take_rows(first), set.take_rows(second)};
}

}  // namespace biq
