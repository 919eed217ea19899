#include "biq/transfer.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace biq {

void MtlConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("MtlConfig: lambda must lie in [0,1]");
  }
}

double mtl_loss(double trusted_loss, double untrusted_loss, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("mtl_loss: lambda must lie in [0,1]");
  }
  return (1.0 - lambda) * untrusted_loss + lambda * trusted_loss;
}

ProbClassifier mtl_fit(const BiqualityDataset& ds, const MtlConfig& mtl, const TrainConfig& cfg) {
  mtl.validate();
  const double n_t = static_cast<double>(ds.trusted.labeled_count());
  const double n_u = static_cast<double>(ds.untrusted.labeled_count());
  if (n_t == 0.0 || n_u == 0.0) {
    throw std::invalid_argument("mtl_fit: both sets need labeled rows");
  }

  // lambda * mean-CE(D_T) + (1-lambda) * mean-CE(D_U) as one weighted fit
  const Eigen::Index n = ds.trusted.size() + ds.untrusted.size();
  Eigen::MatrixXd features(n, ds.dim());
  Eigen::VectorXi labels(n);
  Eigen::VectorXd weights(n);
  features << ds.trusted.features(), ds.untrusted.features();
  labels << ds.trusted.labels(), ds.untrusted.labels();
  weights << Eigen::VectorXd::Constant(ds.trusted.size(), mtl.lambda / n_t),
      Eigen::VectorXd::Constant(ds.untrusted.size(), (1.0 - mtl.lambda) / n_u);

  const LabeledSet combined(std::move(features), std::move(labels), ds.class_count());
  return fit_weighted(combined, SampleWeights{std::move(weights)}, cfg);
}

BoostEnsemble::BoostEnsemble(std::vector<BoostMember> members) : members_(std::move(members)) {
  for (const BoostMember& m : members_) {
    if (!(m.vote_weight >= 0.0)) {
      throw std::invalid_argument("BoostEnsemble: vote weights must be nonnegative");
    }
  }
}

double BoostEnsemble::vote_share(const Eigen::RowVectorXd& x) const {
  double total = 0.0;
  double positive = 0.0;
  for (std::size_t t = static_cast<std::size_t>(half_point()); t < members_.size(); ++t) {
    const BoostMember& m = members_[t];
    total += m.vote_weight;
    const Eigen::VectorXd p = m.model.predict_proba(x);
    if (p[1] > p[0]) positive += m.vote_weight;
  }
  if (!(total > 0.0)) {
    throw std::runtime_error("BoostEnsemble: no member with positive vote weight");
  }
  return positive / total;
}

int BoostEnsemble::predict(const Eigen::RowVectorXd& x) const {
  return vote_share(x) > 0.5 ? 1 : 0;
}

Eigen::VectorXd BoostEnsemble::predict_proba(const Eigen::RowVectorXd& x) const {
  const double share = vote_share(x);
  Eigen::VectorXd p(2);
  p << 1.0 - share, share;
  return p;
}

Metrics BoostEnsemble::evaluate(const LabeledSet& test) const {
  if (test.empty()) throw std::invalid_argument("BoostEnsemble::evaluate: empty test set");
  double correct = 0.0;
  double log_loss = 0.0;
  Eigen::Index counted = 0;
  Eigen::Vector2d per_class_correct = Eigen::Vector2d::Zero();
  Eigen::Vector2d per_class_total = Eigen::Vector2d::Zero();

  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const int y = test.labels()[i];
    if (y == kMaskedLabel) continue;
    ++counted;
    const double share = vote_share(test.features().row(i));
    const int predicted = share > 0.5 ? 1 : 0;
    per_class_total[y] += 1.0;
    if (predicted == y) {
      correct += 1.0;
      per_class_correct[y] += 1.0;
    }
    log_loss += -std::log(std::max(y == 1 ? share : 1.0 - share, kLossFloor));
  }
  if (counted == 0) throw std::invalid_argument("BoostEnsemble::evaluate: no labeled rows");

  double recall_sum = 0.0;
  int present = 0;
  for (int c = 0; c < 2; ++c) {
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

void BoostEnsemble::save(std::ostream& out) const {
  out << "biq.ensemble.v1 " << members_.size() << '\n';
  for (const BoostMember& m : members_) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", m.vote_weight);
    out << buf << '\n';
    m.model.save(out);
  }
}

BoostEnsemble BoostEnsemble::load(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "biq.ensemble.v1") {
    throw std::runtime_error("BoostEnsemble::load: bad header (expected biq.ensemble.v1)");
  }
  std::vector<BoostMember> members;
  members.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    BoostMember m;
    if (!(in >> m.vote_weight)) throw std::runtime_error("BoostEnsemble::load: truncated record");
    m.model = ProbClassifier::load(in);
    members.push_back(std::move(m));
  }
  return BoostEnsemble(std::move(members));
}

BoostEnsemble tradaboost_fit(const BiqualityDataset& ds, int rounds, const TrainConfig& cfg,
                             TradaboostTrace* trace) {
  if (ds.class_count() != 2) {
    throw std::invalid_argument("tradaboost_fit: only binary classification is supported");
  }
  if (rounds < 2) throw std::invalid_argument("tradaboost_fit: rounds must be >= 2");
  if (ds.trusted.labeled_count() == 0 || ds.untrusted.labeled_count() == 0) {
    throw std::invalid_argument("tradaboost_fit: both sets need labeled rows");
  }

  std::vector<Eigen::Index> trusted_rows, untrusted_rows;
  for (Eigen::Index i = 0; i < ds.trusted.size(); ++i) {
    if (ds.trusted.labels()[i] != kMaskedLabel) trusted_rows.push_back(i);
  }
  for (Eigen::Index i = 0; i < ds.untrusted.size(); ++i) {
    if (ds.untrusted.labels()[i] != kMaskedLabel) untrusted_rows.push_back(i);
  }
  const Eigen::Index n_t = static_cast<Eigen::Index>(trusted_rows.size());
  const Eigen::Index n_u = static_cast<Eigen::Index>(untrusted_rows.size());
  const Eigen::Index n = n_t + n_u;

  TrainProblem problem;
  problem.class_count = 2;
  problem.features.resize(n, ds.dim());
  problem.labels.resize(n);
  problem.weights = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n_t; ++i) {
    problem.features.row(i) = ds.trusted.features().row(trusted_rows[static_cast<std::size_t>(i)]);
    problem.labels[i] = ds.trusted.labels()[trusted_rows[static_cast<std::size_t>(i)]];
  }
  for (Eigen::Index i = 0; i < n_u; ++i) {
    problem.features.row(n_t + i) =
        ds.untrusted.features().row(untrusted_rows[static_cast<std::size_t>(i)]);
    problem.labels[n_t + i] = ds.untrusted.labels()[untrusted_rows[static_cast<std::size_t>(i)]];
  }

  // fixed untrusted downweighting rate from the canonical algorithm
  const double beta_src =
      1.0 / (1.0 + std::sqrt(2.0 * std::log(static_cast<double>(n_u)) /
                             static_cast<double>(rounds)));

  std::vector<BoostMember> members;
  members.reserve(static_cast<std::size_t>(rounds));

  for (int round = 0; round < rounds; ++round) {
    const ProbClassifier learner = fit_problem(problem, cfg);

    const Eigen::MatrixXd probs = learner.predict_proba(problem.features);
    Eigen::VectorXi predicted(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      predicted[i] = probs(i, 1) > probs(i, 0) ? 1 : 0;
    }

    double trusted_weight = 0.0;
    double trusted_error = 0.0;
    for (Eigen::Index i = 0; i < n_t; ++i) {
      trusted_weight += problem.weights[i];
      if (predicted[i] != problem.labels[i]) trusted_error += problem.weights[i];
    }
    double epsilon = trusted_error / trusted_weight;
    if (epsilon >= 0.5) break;  // weak-learner contract violated; stop boosting
    epsilon = std::max(epsilon, 1e-10);
    const double beta_t = epsilon / (1.0 - epsilon);

    for (Eigen::Index i = 0; i < n_t; ++i) {
      if (predicted[i] != problem.labels[i]) problem.weights[i] /= beta_t;
    }
    for (Eigen::Index i = n_t; i < n; ++i) {
      if (predicted[i] != problem.labels[i]) problem.weights[i] *= beta_src;
    }
    if (!problem.weights.allFinite()) {
      throw std::runtime_error("tradaboost_fit: boosting weights overflowed");
    }

    members.push_back(BoostMember{learner, std::log(1.0 / beta_t)});
    if (trace) {
      trace->untrusted_weights.push_back(problem.weights.segment(n_t, n_u));
      trace->trusted_errors.push_back(epsilon);
    }
  }

  if (members.empty()) {
    throw std::runtime_error("tradaboost_fit: no round beat chance on the trusted set");
  }
  return BoostEnsemble(std::move(members));
}

}  // namespace biq
