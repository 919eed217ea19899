#include "biq/reweighting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace biq {

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd a2 = a.rowwise().squaredNorm();
  const Eigen::VectorXd b2 = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (a * b.transpose());
  d2.colwise() += a2;
  d2.rowwise() += b2.transpose();
  return d2.cwiseMax(0.0);
}

// Median pairwise Euclidean distance over the pooled sample.
double median_heuristic(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target) {
  Eigen::MatrixXd pooled(source.rows() + target.rows(), source.cols());
  pooled << source, target;
  const Eigen::Index n = pooled.rows();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (static_cast<std::size_t>(n) - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
    }
  }
  if (dists.empty()) return 1.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  const double median = dists[mid];
  return median > 0.0 ? median : 1.0;
}

// Euclidean projection onto {0 <= b <= cap, mean(b) = target}: clip(b + t)
// with t found by bisection on the monotone mean.
void project_to_mean(Eigen::VectorXd& beta, double cap, double target) {
  const auto mean_at = [&](double t) {
    return (beta.array() + t).cwiseMax(0.0).cwiseMin(cap).mean();
  };
  double lo = -cap - beta.maxCoeff();
  double hi = cap;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_at(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double t = 0.5 * (lo + hi);
  beta = (beta.array() + t).cwiseMax(0.0).cwiseMin(cap);
}

void project_feasible(Eigen::VectorXd& beta, double cap, double slack) {
  beta = beta.cwiseMax(0.0).cwiseMin(cap);
  const double mean = beta.mean();
  if (mean > 1.0 + slack) {
    project_to_mean(beta, cap, 1.0 + slack);
  } else if (mean < 1.0 - slack) {
    project_to_mean(beta, cap, 1.0 - slack);
  }
}

double largest_eigenvalue(const Eigen::MatrixXd& m) {
  // power iteration; kernel matrices are nonnegative so this converges fast
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd mv = m * v;
    const double norm = mv.norm();
    if (norm <= 0.0) return 0.0;
    lambda = v.dot(mv);
    v = mv / norm;
  }
  return std::max(lambda, 0.0);
}

}  // namespace

void KmmConfig::validate() const {
  if (kernel_bandwidth && !(*kernel_bandwidth > 0.0)) {
    throw std::invalid_argument("KmmConfig: kernel_bandwidth must be positive");
  }
  if (!(weight_cap > 0.0)) throw std::invalid_argument("KmmConfig: weight_cap must be positive");
  if (!(mean_slack >= 0.0)) throw std::invalid_argument("KmmConfig: mean_slack must be >= 0");
  if (weight_cap < 1.0 - mean_slack) {
    throw std::invalid_argument(
        "KmmConfig: weight_cap below 1 - mean_slack makes the mean constraint infeasible");
  }
  if (max_iters < 1) throw std::invalid_argument("KmmConfig: max_iters must be >= 1");
}

KmmResult kmm_weights(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                      const KmmConfig& cfg) {
  cfg.validate();
  if (source.rows() < 1 || target.rows() < 1) {
    throw std::invalid_argument("kmm_weights: source and target must be nonempty");
  }
  if (source.cols() != target.cols()) {
    throw std::invalid_argument("kmm_weights: source/target dimension mismatch");
  }
  const Eigen::Index n_u = source.rows();
  const Eigen::Index n_t = target.rows();
  const double sigma = cfg.kernel_bandwidth ? *cfg.kernel_bandwidth
                                            : median_heuristic(source, target);
  const double gamma = 1.0 / (2.0 * sigma * sigma);

  const Eigen::MatrixXd kernel = (-gamma * squared_distances(source, source).array()).exp();
  const Eigen::VectorXd kappa =
      ((-gamma * squared_distances(source, target).array()).exp()).matrix().rowwise().sum();
  const double target_self =
      ((-gamma * squared_distances(target, target).array()).exp()).sum() /
      (static_cast<double>(n_t) * static_cast<double>(n_t));

  const double inv_nu2 = 1.0 / (static_cast<double>(n_u) * static_cast<double>(n_u));
  const double inv_nut = 1.0 / (static_cast<double>(n_u) * static_cast<double>(n_t));

  const auto objective = [&](const Eigen::VectorXd& b) {
    return inv_nu2 * b.dot(kernel * b) - 2.0 * inv_nut * b.dot(kappa) + target_self;
  };

  double step = cfg.step_size;
  if (!(step > 0.0)) {
    const double lipschitz = 2.0 * inv_nu2 * largest_eigenvalue(kernel);
    step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Ones(n_u);
  project_feasible(beta, cfg.weight_cap, cfg.mean_slack);

  KmmResult result;
  result.beta = beta;
  result.objective = objective(beta);
  result.converged = false;

  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::VectorXd grad = 2.0 * inv_nu2 * (kernel * beta) - 2.0 * inv_nut * kappa;
    Eigen::VectorXd next = beta - step * grad;
    project_feasible(next, cfg.weight_cap, cfg.mean_slack);
    const double move = (next - beta).lpNorm<Eigen::Infinity>();
    beta = std::move(next);
    result.iterations = it + 1;

    const double obj = objective(beta);
    if (obj < result.objective) {
      result.objective = obj;
      result.beta = beta;
    }
    if (move <= 1e-12) {
      result.converged = true;
      break;
    }
  }
  return result;
}

BetaWeights irbl_weights(const ProbClassifier& trusted_model,
                         const ProbClassifier& untrusted_model, const LabeledSet& untrusted) {
  if (trusted_model.dim() != untrusted_model.dim() ||
      trusted_model.class_count() != untrusted_model.class_count() ||
      trusted_model.dim() != untrusted.dim() ||
      trusted_model.class_count() != untrusted.class_count()) {
    throw std::invalid_argument("irbl_weights: model/data dimension mismatch");
  }
  const Eigen::MatrixXd pt = trusted_model.predict_proba(untrusted.features());
  const Eigen::MatrixXd pu = untrusted_model.predict_proba(untrusted.features());

  BetaWeights out;
  out.source = BetaSource::Irbl;
  out.values = Eigen::VectorXd::Zero(untrusted.size());
  for (Eigen::Index i = 0; i < untrusted.size(); ++i) {
    const int y = untrusted.labels()[i];
    if (y == kMaskedLabel) continue;
    const double ratio = pt(i, y) / std::max(pu(i, y), kIrblDenominatorFloor);
    out.values[i] = std::clamp(ratio, 0.0, kIrblWeightCap);
  }
  return out;
}

namespace {

// D_T rows at the given trusted weight followed by D_U rows at beta.
ProbClassifier fit_union(const BiqualityDataset& ds, const Eigen::VectorXd& untrusted_weights,
                         double trusted_weight, const TrainConfig& cfg) {
  const Eigen::Index n = ds.trusted.size() + ds.untrusted.size();
  Eigen::MatrixXd features(n, ds.dim());
  Eigen::VectorXi labels(n);
  Eigen::VectorXd weights(n);
  features << ds.trusted.features(), ds.untrusted.features();
  labels << ds.trusted.labels(), ds.untrusted.labels();
  weights << Eigen::VectorXd::Constant(ds.trusted.size(), trusted_weight), untrusted_weights;
  const LabeledSet combined(std::move(features), std::move(labels), ds.class_count());
  return fit_weighted(combined, SampleWeights{std::move(weights)}, cfg);
}

}  // namespace

IrblResult irbl_fit(const BiqualityDataset& ds, const TrainConfig& cfg) {
  if (ds.trusted.labeled_count() == 0) {
    throw std::invalid_argument("irbl_fit: trusted set is empty");
  }
  if (ds.untrusted.labeled_count() == 0) {
    throw std::invalid_argument("irbl_fit: untrusted set has no labeled rows");
  }
  const ProbClassifier trusted_model =
      fit_weighted(ds.trusted, SampleWeights::ones(ds.trusted.size()), cfg);
  const ProbClassifier untrusted_model =
      fit_weighted(ds.untrusted, SampleWeights::ones(ds.untrusted.size()), cfg);

  BetaWeights beta = irbl_weights(trusted_model, untrusted_model, ds.untrusted);
  ProbClassifier model = fit_union(ds, beta.values, 1.0, cfg);
  return IrblResult{std::move(model), std::move(beta)};
}

DiwResult diw_fit(const BiqualityDataset& ds, const DiwConfig& diw, const TrainConfig& cfg) {
  diw.kmm.validate();
  const auto trusted_slices = split_by_class(ds.trusted);
  const auto untrusted_slices = split_by_class(ds.untrusted);
  const double n_t = static_cast<double>(ds.trusted.labeled_count());
  const double n_u = static_cast<double>(ds.untrusted.labeled_count());
  if (n_t == 0.0 || n_u == 0.0) {
    throw std::invalid_argument("diw_fit: both sets need labeled rows");
  }

  BetaWeights beta;
  beta.source = BetaSource::Diw;
  beta.values = Eigen::VectorXd::Zero(ds.untrusted.size());

  for (int c = 0; c < ds.class_count(); ++c) {
    const ClassSlice& t_slice = trusted_slices[static_cast<std::size_t>(c)];
    const ClassSlice& u_slice = untrusted_slices[static_cast<std::size_t>(c)];
    if (t_slice.size() == 0) {
      throw std::invalid_argument("diw_fit: class " + std::to_string(c) +
                                  " absent from the trusted set");
    }
    if (u_slice.size() == 0) {
      throw std::invalid_argument("diw_fit: class " + std::to_string(c) +
                                  " absent from the untrusted set");
    }
    Eigen::MatrixXd source(u_slice.size(), ds.dim());
    for (Eigen::Index i = 0; i < u_slice.size(); ++i) {
      source.row(i) = ds.untrusted.features().row(u_slice.row_indices[static_cast<std::size_t>(i)]);
    }
    Eigen::MatrixXd target(t_slice.size(), ds.dim());
    for (Eigen::Index i = 0; i < t_slice.size(); ++i) {
      target.row(i) = ds.trusted.features().row(t_slice.row_indices[static_cast<std::size_t>(i)]);
    }
    const KmmResult kmm = kmm_weights(source, target, diw.kmm);

    // P_T(y)/P_U(y) factor on top of the per-class feature match
    const double prior_ratio = (static_cast<double>(t_slice.size()) / n_t) /
                               (static_cast<double>(u_slice.size()) / n_u);
    for (Eigen::Index i = 0; i < u_slice.size(); ++i) {
      beta.values[u_slice.row_indices[static_cast<std::size_t>(i)]] =
          kmm.beta[i] * prior_ratio;
    }
  }

  ProbClassifier model;
  if (diw.include_trusted) {
    model = fit_union(ds, beta.values, 1.0, cfg);
  } else {
    model = fit_weighted(ds.untrusted, SampleWeights{beta.values}, cfg);
  }
  return DiwResult{std::move(model), std::move(beta)};
}

void dump_weights(const std::filesystem::path& path, const BetaWeights& weights) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_weights: cannot write " + path.string());
  char buf[40];
  for (Eigen::Index i = 0; i < weights.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", weights.values[i]);
    out << buf << '\n';
  }
}

Eigen::VectorXd load_weight_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_weight_dump: cannot open " + path.string());
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

double reweighted_risk(const ProbClassifier& model, const LabeledSet& set,
                       const SampleWeights& weights) {
  weights.validate(set.size());
  const Eigen::MatrixXd probs = model.predict_proba(set.features());
  double loss_sum = 0.0;
  double weight_sum = 0.0;
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    const int y = set.labels()[i];
    if (y == kMaskedLabel) continue;
    const double w = weights.values[i];
    loss_sum += w * -std::log(std::max(probs(i, y), kLossFloor));
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) {
    throw std::invalid_argument("reweighted_risk: total weight is zero");
  }
  return loss_sum / weight_sum;
}

}  // namespace biq
