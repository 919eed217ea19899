#include "biq/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "biq/rng.hpp"

namespace biq {

namespace {

constexpr double kRowSumTolerance = 1e-9;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

int sample_from_row(const Eigen::MatrixXd& t, int row, double u) {
  // inverse CDF walk; u in [0,1)
  double cumulative = 0.0;
  const int k = static_cast<int>(t.cols());
  for (int j = 0; j < k; ++j) {
    cumulative += t(row, j);
    if (u < cumulative) return j;
  }
  return k - 1;  // guard against rounding in the final bin
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("CorruptionSpec: cannot parse " + what + " from '" + text + "'");
  }
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

TransitionMatrix::TransitionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols() || entries_.rows() < 2) {
    throw std::invalid_argument("TransitionMatrix: must be square with K >= 2");
  }
  for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
    double row_sum = 0.0;
    for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
      const double v = entries_(i, j);
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) {
        throw std::invalid_argument("TransitionMatrix: entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") outside [0,1]");
      }
      row_sum += v;
    }
    if (std::abs(row_sum - 1.0) > kRowSumTolerance) {
      throw std::invalid_argument("TransitionMatrix: row " + std::to_string(i) +
                                  " sums to " + std::to_string(row_sum) + ", expected 1");
    }
  }
}

TransitionMatrix TransitionMatrix::identity(int class_count) {
  return TransitionMatrix(Eigen::MatrixXd::Identity(class_count, class_count));
}

TransitionMatrix car_matrix(int class_count, double rho) {
  if (class_count < 2) throw std::invalid_argument("car_matrix: class_count must be >= 2");
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("car_matrix: rho must lie in [0,1]");
  }
  const double off = rho / static_cast<double>(class_count - 1);
  Eigen::MatrixXd t = Eigen::MatrixXd::Constant(class_count, class_count, off);
  t.diagonal().setConstant(1.0 - rho);
  return TransitionMatrix(std::move(t));
}

CorruptionResult apply_label_noise(const LabeledSet& set, const TransitionMatrix& transition,
                                   std::uint64_t seed) {
  if (set.class_count() != transition.class_count()) {
    throw std::invalid_argument("apply_label_noise: class count mismatch (" +
                                std::to_string(set.class_count()) + " vs " +
                                std::to_string(transition.class_count()) + ")");
  }
  Rng rng(seed);
  Eigen::VectorXi labels = set.labels();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(set.size()), 0);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const int y = labels[i];
    if (y == kMaskedLabel) continue;
    const int drawn = sample_from_row(transition.entries(), y, rng.uniform());
    labels[i] = drawn;
    mask[static_cast<std::size_t>(i)] = (drawn != y) ? 1 : 0;
  }
  return {set.with_labels(std::move(labels)), std::move(mask)};
}

CorruptionResult apply_nar_noise(const LabeledSet& set, const Eigen::VectorXd& direction,
                                 double strength, double target_rate, std::uint64_t seed) {
  if (direction.size() != set.dim()) {
    throw std::invalid_argument("apply_nar_noise: direction length " +
                                std::to_string(direction.size()) + " != feature dimension " +
                                std::to_string(set.dim()));
  }
  if (!(strength >= 0.0)) throw std::invalid_argument("apply_nar_noise: strength must be >= 0");
  if (!(target_rate >= 0.0 && target_rate <= 1.0)) {
    throw std::invalid_argument("apply_nar_noise: target_rate must lie in [0,1]");
  }
  const Eigen::VectorXd scores = strength * (set.features() * direction);
  if (!scores.allFinite()) {
    throw std::invalid_argument("apply_nar_noise: non-finite scores");
  }

  // Per-class intercept so the class mean of sigmoid(score - shift) hits the
  // target rate; bisection on the (monotone decreasing) mean.
  const int k = set.class_count();
  std::vector<double> shift(static_cast<std::size_t>(k), 0.0);
  const auto slices = split_by_class(set);
  for (const ClassSlice& slice : slices) {
    if (slice.row_indices.empty()) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const Eigen::Index r : slice.row_indices) {
      lo = std::min(lo, scores[r]);
      hi = std::max(hi, scores[r]);
    }
    lo -= 50.0;  // sigmoid(50) is 1 to machine precision
    hi += 50.0;
    const auto mean_rate = [&](double s) {
      double total = 0.0;
      for (const Eigen::Index r : slice.row_indices) total += sigmoid(scores[r] - s);
      return total / static_cast<double>(slice.row_indices.size());
    };
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mean_rate(mid) > target_rate) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    shift[static_cast<std::size_t>(slice.class_index)] = 0.5 * (lo + hi);
  }

  Rng rng(seed);
  Eigen::VectorXi labels = set.labels();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(set.size()), 0);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const int y = labels[i];
    if (y == kMaskedLabel) continue;
    double rho;
    if (target_rate <= 0.0) {
      rho = 0.0;
    } else if (target_rate >= 1.0) {
      rho = 1.0;
    } else {
      rho = sigmoid(scores[i] - shift[static_cast<std::size_t>(y)]);
    }
    if (rng.uniform() < rho) {
      const int offset = static_cast<int>(rng.index(static_cast<std::size_t>(k - 1)));
      labels[i] = offset >= y ? offset + 1 : offset;
      mask[static_cast<std::size_t>(i)] = 1;
    }
  }
  return {set.with_labels(std::move(labels)), std::move(mask)};
}

CorruptionResult mask_labels(const LabeledSet& set, const Eigen::VectorXd& keep_prob,
                             std::uint64_t seed) {
  if (keep_prob.size() != set.class_count()) {
    throw std::invalid_argument("mask_labels: keep_prob length != class count");
  }
  if ((keep_prob.array() < 0.0).any() || (keep_prob.array() > 1.0).any()) {
    throw std::invalid_argument("mask_labels: keep probabilities must lie in [0,1]");
  }
  Rng rng(seed);
  Eigen::VectorXi labels = set.labels();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(set.size()), 0);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const int y = labels[i];
    if (y == kMaskedLabel) continue;
    if (rng.uniform() >= keep_prob[y]) {
      labels[i] = kMaskedLabel;
      mask[static_cast<std::size_t>(i)] = 1;
    }
  }
  return {set.with_labels(std::move(labels)), std::move(mask)};
}

CorruptionResult apply_corruption(const LabeledSet& set, const CorruptionSpec& spec) {
  return std::visit(
      [&](const auto& s) -> CorruptionResult {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CarSpec>) {
          return apply_label_noise(set, car_matrix(set.class_count(), s.rho), spec.seed);
        } else if constexpr (std::is_same_v<T, ArSpec>) {
          return apply_label_noise(set, TransitionMatrix(s.matrix), spec.seed);
        } else if constexpr (std::is_same_v<T, NarSpec>) {
          return apply_nar_noise(set, s.direction, s.strength, s.target_rate, spec.seed);
        } else {
          return mask_labels(set, s.keep_prob, spec.seed);
        }
      },
      spec.kind);
}

CorruptionSpec CorruptionSpec::parse(const std::string& text, int class_count, Eigen::Index dim,
                                     std::uint64_t seed) {
  CorruptionSpec spec;
  spec.seed = seed;
  if (text == "uniform") {
    spec.kind = CarSpec{static_cast<double>(class_count - 1) / static_cast<double>(class_count)};
    return spec;
  }
  const auto parts = split(text, ':');
  if (parts.empty()) throw std::invalid_argument("CorruptionSpec: empty spec");
  const std::string& tag = parts[0];

  if (tag == "car") {
    if (parts.size() != 2) throw std::invalid_argument("CorruptionSpec: expected car:RHO");
    const double rho = parse_double(parts[1], "rho");
    if (!(rho >= 0.0 && rho <= 1.0)) {
      throw std::invalid_argument("CorruptionSpec: rho must lie in [0,1]");
    }
    spec.kind = CarSpec{rho};
  } else if (tag == "ar") {
    if (parts.size() != 2) throw std::invalid_argument("CorruptionSpec: expected ar:ROWS");
    const auto rows = split(parts[1], ';');
    if (static_cast<int>(rows.size()) != class_count) {
      throw std::invalid_argument("CorruptionSpec: ar matrix needs " +
                                  std::to_string(class_count) + " rows");
    }
    Eigen::MatrixXd m(class_count, class_count);
    for (int i = 0; i < class_count; ++i) {
      const auto cells = split(rows[static_cast<std::size_t>(i)], ',');
      if (static_cast<int>(cells.size()) != class_count) {
        throw std::invalid_argument("CorruptionSpec: ar row " + std::to_string(i) +
                                    " needs " + std::to_string(class_count) + " entries");
      }
      for (int j = 0; j < class_count; ++j) {
        m(i, j) = parse_double(cells[static_cast<std::size_t>(j)], "ar entry");
      }
    }
    TransitionMatrix{m};  // reject non-stochastic matrices up front
    spec.kind = ArSpec{std::move(m)};
  } else if (tag == "nar") {
    if (parts.size() != 3 && parts.size() != 4) {
      throw std::invalid_argument("CorruptionSpec: expected nar:STRENGTH:TARGET[:w1,w2,..]");
    }
    NarSpec nar;
    nar.strength = parse_double(parts[1], "nar strength");
    nar.target_rate = parse_double(parts[2], "nar target rate");
    if (!(nar.strength >= 0.0)) {
      throw std::invalid_argument("CorruptionSpec: nar strength must be >= 0");
    }
    if (!(nar.target_rate >= 0.0 && nar.target_rate <= 1.0)) {
      throw std::invalid_argument("CorruptionSpec: nar target rate must lie in [0,1]");
    }
    if (parts.size() == 4) {
      const auto cells = split(parts[3], ',');
      if (static_cast<Eigen::Index>(cells.size()) != dim) {
        throw std::invalid_argument("CorruptionSpec: nar direction needs " +
                                    std::to_string(dim) + " entries");
      }
      nar.direction.resize(dim);
      for (Eigen::Index j = 0; j < dim; ++j) {
        nar.direction[j] = parse_double(cells[static_cast<std::size_t>(j)], "nar direction");
      }
    } else {
      nar.direction =
          Eigen::VectorXd::Constant(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
    }
    spec.kind = std::move(nar);
  } else if (tag == "mask") {
    if (parts.size() != 2) throw std::invalid_argument("CorruptionSpec: expected mask:k0,k1,..");
    const auto cells = split(parts[1], ',');
    if (static_cast<int>(cells.size()) != class_count) {
      throw std::invalid_argument("CorruptionSpec: mask needs " + std::to_string(class_count) +
                                  " keep probabilities");
    }
    MaskSpec m;
    m.keep_prob.resize(class_count);
    for (int j = 0; j < class_count; ++j) {
      m.keep_prob[j] = parse_double(cells[static_cast<std::size_t>(j)], "keep probability");
      if (!(m.keep_prob[j] >= 0.0 && m.keep_prob[j] <= 1.0)) {
        throw std::invalid_argument("CorruptionSpec: keep probabilities must lie in [0,1]");
      }
    }
    spec.kind = std::move(m);
  } else {
    throw std::invalid_argument("CorruptionSpec: unknown kind '" + tag + "'");
  }
  return spec;
}

std::string CorruptionSpec::to_string() const {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CarSpec>) {
          return "car:" + format_number(s.rho);
        } else if constexpr (std::is_same_v<T, ArSpec>) {
          std::string out = "ar:";
          for (Eigen::Index i = 0; i < s.matrix.rows(); ++i) {
            if (i > 0) out += ';';
            for (Eigen::Index j = 0; j < s.matrix.cols(); ++j) {
              if (j > 0) out += ',';
              out += format_number(s.matrix(i, j));
            }
          }
          return out;
        } else if constexpr (std::is_same_v<T, NarSpec>) {
          std::string out = "nar:" + format_number(s.strength) + ":" +
                            format_number(s.target_rate) + ":";
          for (Eigen::Index j = 0; j < s.direction.size(); ++j) {
            if (j > 0) out += ',';
            out += format_number(s.direction[j]);
          }
          return out;
        } else {
          std::string out = "mask:";
          for (Eigen::Index j = 0; j < s.keep_prob.size(); ++j) {
            if (j > 0) out += ',';
            out += format_number(s.keep_prob[j]);
          }
          return out;
        }
      },
      kind);
}

QualityEstimate measure_quality(const ProbClassifier& trusted_model,
                                const ProbClassifier& untrusted_model, const LabeledSet& probe) {
  if (probe.empty()) throw std::invalid_argument("measure_quality: empty probe set");
  if (trusted_model.dim() != probe.dim() || untrusted_model.dim() != probe.dim() ||
      trusted_model.class_count() != untrusted_model.class_count()) {
    throw std::invalid_argument("measure_quality: model/probe dimension mismatch");
  }
  const int k = trusted_model.class_count();
  const double uniform = 1.0 / static_cast<double>(k);
  const Eigen::MatrixXd pt = trusted_model.predict_proba(probe.features());
  const Eigen::MatrixXd pu = untrusted_model.predict_proba(probe.features());

  double kl_sum = 0.0;
  double ref_sum = 0.0;
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    for (int j = 0; j < k; ++j) {
      const double p = pt(i, j);
      if (p <= 0.0) continue;
      kl_sum += p * std::log(p / std::max(pu(i, j), kLossFloor));
      ref_sum += p * std::log(p / uniform);
    }
  }
  QualityEstimate est;
  est.mean_kl = std::max(kl_sum / static_cast<double>(probe.size()), 0.0);
  est.reference_kl = std::max(ref_sum / static_cast<double>(probe.size()), 0.0);
  if (est.mean_kl == 0.0) {
    est.q = 1.0;
  } else if (est.reference_kl > 0.0) {
    est.q = std::clamp(1.0 - est.mean_kl / est.reference_kl, 0.0, 1.0);
  } else {
    est.q = 0.0;
    est.degenerate_reference = true;
  }
  return est;
}

}  // namespace biq
