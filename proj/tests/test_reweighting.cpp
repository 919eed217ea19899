#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biq/harness.hpp"
#include "biq/reweighting.hpp"
#include "biq/rng.hpp"
#include "helpers.hpp"

using namespace biq;
using biq::testing::binary_model;

namespace {

TrainConfig bench_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.max_iters = 600;
  cfg.tolerance = 1e-8;
  cfg.l2_penalty = 1e-4;
  return cfg;
}

double gaussian_kernel(double a, double b, double sigma) {
  const double d = a - b;
  return std::exp(-d * d / (2.0 * sigma * sigma));
}

// Spearman rank correlation (midranks for ties).
double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = mid;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("irbl_weights of identical models are exactly one") {
  const auto blobs = make_blobs(BlobSpec{2, 300, 2, 2.0}, 1);
  const auto model = fit_weighted(blobs, SampleWeights::ones(blobs.size()), bench_config());
  const auto beta = irbl_weights(model, model, blobs);
  for (Eigen::Index i = 0; i < beta.values.size(); ++i) CHECK(beta.values[i] == 1.0);
  CHECK(beta.source == BetaSource::Irbl);
}

TEST_CASE("irbl_weights computes the conditional ratio") {
  // f_T(x=0) = (0.9, 0.1), f_U(x=0) = (0.3, 0.7), observed label 0 -> 3.0
  const auto f_t = binary_model(0.9, 0.5);
  const auto f_u = binary_model(0.3, 0.5);
  const LabeledSet one(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXi::Zero(1), 2);
  const auto beta = irbl_weights(f_t, f_u, one);
  CHECK(beta.values[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("irbl_weights are floored, capped and skip masked rows") {
  const auto f_t = binary_model(1.0 - 1e-9, 0.5);  // near-certain class 0 at x=0
  const auto f_u = binary_model(1e-9, 0.5);        // near-zero class-0 mass at x=0
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXi y(2);
  y << 0, kMaskedLabel;
  const LabeledSet set(x, y, 2);
  const auto beta = irbl_weights(f_t, f_u, set);
  CHECK(beta.values[0] == kIrblWeightCap);  // 1/1e-9 capped at 100
  CHECK(beta.values[1] == 0.0);             // masked rows carry no weight
}

TEST_CASE("irbl downweights flipped rows") {
  const auto blobs = make_blobs(BlobSpec{2, 2000, 2, 1.5}, 7);
  const auto cell = synthesize_cell(blobs, 0.2, CorruptionSpec{CarSpec{0.4}, 0}, 8, 0.3);
  const auto result = irbl_fit(cell.data, bench_config());

  double flipped_sum = 0.0, clean_sum = 0.0, flipped_n = 0.0, clean_n = 0.0;
  const auto& mask = *cell.data.flip_mask;
  for (Eigen::Index i = 0; i < cell.data.untrusted.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      flipped_sum += result.weights.values[i];
      flipped_n += 1.0;
    } else {
      clean_sum += result.weights.values[i];
      clean_n += 1.0;
    }
  }
  CHECK(flipped_sum / flipped_n < clean_sum / clean_n);
}

TEST_CASE("irbl_fit tracks the plain fit on clean data") {
  const auto blobs = make_blobs(BlobSpec{2, 1500, 2, 2.0}, 9);
  const auto cell = synthesize_cell(blobs, 0.2, CorruptionSpec{CarSpec{0.0}, 0}, 10, 0.3);
  const auto cfg = bench_config();
  const auto irbl = irbl_fit(cell.data, cfg);

  const Eigen::Index n = cell.data.trusted.size() + cell.data.untrusted.size();
  Eigen::MatrixXd features(n, 2);
  Eigen::VectorXi labels(n);
  features << cell.data.trusted.features(), cell.data.untrusted.features();
  labels << cell.data.trusted.labels(), cell.data.untrusted.labels();
  const auto plain = fit_weighted(LabeledSet(features, labels, 2), SampleWeights::ones(n), cfg);

  // weights concentrate near 1, and accuracy stays within a point
  CHECK(std::abs(irbl.weights.values.mean() - 1.0) < 0.1);
  CHECK(std::abs(evaluate(irbl.model, cell.test).accuracy -
                 evaluate(plain, cell.test).accuracy) <= 0.01);
}

TEST_CASE("irbl_fit degrades gracefully on uninformative labels") {
  const auto blobs = make_blobs(BlobSpec{2, 2000, 2, 1.25}, 11);
  const auto cell = synthesize_cell(blobs, 0.1, CorruptionSpec{CarSpec{0.5}, 0}, 12, 0.3);
  const auto cfg = bench_config();
  const auto irbl = irbl_fit(cell.data, cfg);
  const auto trusted_only =
      fit_weighted(cell.data.trusted, SampleWeights::ones(cell.data.trusted.size()), cfg);
  CHECK(evaluate(irbl.model, cell.test).accuracy >=
        evaluate(trusted_only, cell.test).accuracy - 0.02);
}

TEST_CASE("irbl_fit beats the naive union under instance-dependent noise") {
  // unbalanced priors with flips concentrated on the minority class's
  // boundary side: the naive fit drifts toward the majority while the
  // conditional ratio cleans the corrupted region
  const auto unbalanced_blobs = [](Eigen::Index n0, Eigen::Index n1, double sep,
                                   std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd x(n0 + n1, 2);
    Eigen::VectorXi y(n0 + n1);
    for (Eigen::Index i = 0; i < n0 + n1; ++i) {
      const bool minority = i >= n0;
      y[i] = minority ? 1 : 0;
      x(i, 0) = (minority ? sep : -sep) + rng.normal();
      x(i, 1) = rng.normal();
    }
    return LabeledSet(std::move(x), std::move(y), 2);
  };

  const auto cfg = bench_config();
  std::vector<double> irbl_acc, naive_acc;
  for (int s = 0; s < 10; ++s) {
    const auto blobs = unbalanced_blobs(1500, 500, 1.25, 400 + s);
    const auto spec = CorruptionSpec::parse("nar:4:0.3:-1,0", 2, 2, 0);
    const auto cell = synthesize_cell(blobs, 0.1, spec, 500 + s, 0.3);

    irbl_acc.push_back(evaluate(irbl_fit(cell.data, cfg).model, cell.test).accuracy);
    const Eigen::Index n = cell.data.trusted.size() + cell.data.untrusted.size();
    Eigen::MatrixXd features(n, 2);
    Eigen::VectorXi labels(n);
    features << cell.data.trusted.features(), cell.data.untrusted.features();
    labels << cell.data.trusted.labels(), cell.data.untrusted.labels();
    naive_acc.push_back(evaluate(
        fit_weighted(LabeledSet(features, labels, 2), SampleWeights::ones(n), cfg), cell.test)
                            .accuracy);
  }
  std::sort(irbl_acc.begin(), irbl_acc.end());
  std::sort(naive_acc.begin(), naive_acc.end());
  const double irbl_median = 0.5 * (irbl_acc[4] + irbl_acc[5]);
  const double naive_median = 0.5 * (naive_acc[4] + naive_acc[5]);
  CHECK(irbl_median >= naive_median + 0.03);
}

TEST_CASE("kmm_weights returns ones for identical source and target") {
  const auto blobs = make_blobs(BlobSpec{2, 50, 2, 2.0}, 13);
  KmmConfig cfg;
  cfg.weight_cap = 10.0;
  cfg.mean_slack = 0.01;
  const auto result = kmm_weights(blobs.features(), blobs.features(), cfg);

  CHECK(std::abs(result.beta.mean() - 1.0) <= cfg.mean_slack + 1e-9);
  // all-ones is optimal here; the solver must not do worse
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(blobs.size());
  KmmConfig one_shot = cfg;
  one_shot.max_iters = 1;
  one_shot.step_size = 1e-30;  // objective evaluation at the start point
  const double objective_ones = kmm_weights(blobs.features(), blobs.features(), one_shot).objective;
  CHECK(result.objective <= objective_ones + 1e-8);
  CHECK((result.beta - ones).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("kmm_weights matches a two-point grid-search oracle") {
  Eigen::MatrixXd source(2, 1);
  source << 0.0, 10.0;
  Eigen::MatrixXd target(1, 1);
  target << 0.0;

  const double sigma = 3.0;
  KmmConfig cfg;
  cfg.kernel_bandwidth = sigma;
  cfg.weight_cap = 2.0;
  cfg.mean_slack = 0.0;
  cfg.max_iters = 2000;

  // independent oracle: J on the segment beta2 = 2 - beta1, grid step 1e-4
  const double k12 = gaussian_kernel(0.0, 10.0, sigma);
  const double kappa1 = gaussian_kernel(0.0, 0.0, sigma);
  const double kappa2 = gaussian_kernel(10.0, 0.0, sigma);
  const auto objective = [&](double b1, double b2) {
    const double quad = b1 * b1 + 2.0 * b1 * b2 * k12 + b2 * b2;
    const double lin = b1 * kappa1 + b2 * kappa2;
    return 0.25 * quad - lin + 1.0;
  };
  double best_b1 = 0.0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (double b1 = 0.0; b1 <= 2.0 + 1e-12; b1 += 1e-4) {
    const double obj = objective(b1, 2.0 - b1);
    if (obj < best_obj) {
      best_obj = obj;
      best_b1 = b1;
    }
  }

  const auto result = kmm_weights(source, target, cfg);
  CHECK(std::abs(result.beta[0] - best_b1) < 1e-3);
  CHECK(std::abs(result.beta[1] - (2.0 - best_b1)) < 1e-3);
  CHECK(result.objective == doctest::Approx(best_obj).epsilon(1e-6));
  CHECK(result.beta[0] > 1.99);  // mass moves onto the point matching the target
  CHECK(result.beta[1] < 0.01);
}

TEST_CASE("kmm_weights respects the box and mean constraints") {
  Rng rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd source(40, 2), target(25, 2);
    for (Eigen::Index i = 0; i < source.rows(); ++i) {
      source(i, 0) = rng.normal();
      source(i, 1) = rng.normal() + 1.0;
    }
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      target(i, 0) = rng.normal() * 1.5;
      target(i, 1) = rng.normal() - 0.5;
    }
    KmmConfig cfg;
    cfg.weight_cap = 3.0;
    cfg.mean_slack = 0.05;
    const auto result = kmm_weights(source, target, cfg);
    CHECK((result.beta.array() >= 0.0).all());
    CHECK((result.beta.array() <= cfg.weight_cap).all());
    CHECK(std::abs(result.beta.mean() - 1.0) <= cfg.mean_slack + 1e-9);
  }
}

TEST_CASE("kmm_weights upweights the undersampled region") {
  for (int s = 0; s < 5; ++s) {
    Rng rng(700 + s);
    // source: cluster A (near 0) oversampled 4:1 against cluster B (near 5)
    const Eigen::Index n_a = 160, n_b = 40;
    Eigen::MatrixXd source(n_a + n_b, 1);
    std::vector<double> is_b;
    for (Eigen::Index i = 0; i < n_a; ++i) source(i, 0) = rng.normal() * 0.5;
    for (Eigen::Index i = 0; i < n_b; ++i) source(n_a + i, 0) = 5.0 + rng.normal() * 0.5;
    for (Eigen::Index i = 0; i < n_a + n_b; ++i) is_b.push_back(i >= n_a ? 1.0 : 0.0);

    // target: the same two clusters, balanced
    Eigen::MatrixXd target(100, 1);
    for (Eigen::Index i = 0; i < 50; ++i) target(i, 0) = rng.normal() * 0.5;
    for (Eigen::Index i = 0; i < 50; ++i) target(50 + i, 0) = 5.0 + rng.normal() * 0.5;

    KmmConfig cfg;
    cfg.weight_cap = 10.0;
    const auto result = kmm_weights(source, target, cfg);
    std::vector<double> beta(result.beta.data(), result.beta.data() + result.beta.size());
    CHECK(rank_correlation(beta, is_b) > 0.0);
  }
}

TEST_CASE("kmm config validation") {
  KmmConfig bad;
  bad.weight_cap = 0.5;
  bad.mean_slack = 0.01;  // cap below 1 - slack: mean constraint unreachable
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = KmmConfig{};
  bad.kernel_bandwidth = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(kmm_weights(Eigen::MatrixXd::Zero(0, 1), Eigen::MatrixXd::Zero(1, 1), {}),
                  std::invalid_argument);
}

TEST_CASE("diw_fit applies class-prior ratios on top of the match") {
  // same per-class feature law; priors (0.5, 0.5) trusted vs (0.25, 0.75)
  Rng rng(15);
  const auto fill = [&](Eigen::Index n0, Eigen::Index n1) {
    Eigen::MatrixXd x(n0 + n1, 1);
    Eigen::VectorXi y(n0 + n1);
    for (Eigen::Index i = 0; i < n0; ++i) {
      x(i, 0) = rng.normal();
      y[i] = 0;
    }
    for (Eigen::Index i = 0; i < n1; ++i) {
      x(n0 + i, 0) = 4.0 + rng.normal();
      y[n0 + i] = 1;
    }
    return LabeledSet(std::move(x), std::move(y), 2);
  };
  const auto trusted = fill(60, 60);
  const auto untrusted = fill(50, 150);
  const BiqualityDataset ds(trusted, untrusted);

  DiwConfig diw;
  diw.kmm.weight_cap = 10.0;
  const auto result = diw_fit(ds, diw, bench_config());

  double mean0 = 0.0, mean1 = 0.0;
  for (Eigen::Index i = 0; i < untrusted.size(); ++i) {
    if (untrusted.labels()[i] == 0) {
      mean0 += result.weights.values[i] / 50.0;
    } else {
      mean1 += result.weights.values[i] / 150.0;
    }
  }
  // prior ratio factors: (0.5/0.25) = 2 and (0.5/0.75) = 2/3
  CHECK(mean0 == doctest::Approx(2.0).epsilon(0.05));
  CHECK(mean1 == doctest::Approx(2.0 / 3.0).epsilon(0.05));
  CHECK(result.weights.source == BetaSource::Diw);
}

TEST_CASE("diw_fit is a no-op on identical trusted and untrusted data") {
  const auto blobs = make_blobs(BlobSpec{2, 400, 2, 2.0}, 16);
  const BiqualityDataset ds(blobs, blobs);
  DiwConfig diw;
  const auto cfg = bench_config();
  const auto result = diw_fit(ds, diw, cfg);
  CHECK(std::abs(result.weights.values.mean() - 1.0) < 0.05);

  const auto plain = fit_weighted(blobs, SampleWeights::ones(blobs.size()), cfg);
  const auto probe = make_blobs(BlobSpec{2, 600, 2, 2.0}, 17);
  CHECK(std::abs(evaluate(result.model, probe).accuracy - evaluate(plain, probe).accuracy) <=
        0.01);
}

TEST_CASE("diw_fit beats the naive union under class-dependent noise") {
  const auto cfg = bench_config();
  std::vector<double> diw_acc, naive_acc;
  for (int s = 0; s < 5; ++s) {
    const auto blobs = make_blobs(BlobSpec{2, 1500, 2, 1.25}, 800 + s);
    const auto spec = CorruptionSpec::parse("ar:0.9,0.1;0.5,0.5", 2, 2, 0);
    const auto cell = synthesize_cell(blobs, 0.1, spec, 900 + s, 0.3);

    DiwConfig diw;
    diw_acc.push_back(evaluate(diw_fit(cell.data, diw, cfg).model, cell.test).accuracy);
    const Eigen::Index n = cell.data.trusted.size() + cell.data.untrusted.size();
    Eigen::MatrixXd features(n, 2);
    Eigen::VectorXi labels(n);
    features << cell.data.trusted.features(), cell.data.untrusted.features();
    labels << cell.data.trusted.labels(), cell.data.untrusted.labels();
    naive_acc.push_back(evaluate(
        fit_weighted(LabeledSet(features, labels, 2), SampleWeights::ones(n), cfg), cell.test)
                            .accuracy);
  }
  std::sort(diw_acc.begin(), diw_acc.end());
  std::sort(naive_acc.begin(), naive_acc.end());
  CHECK(diw_acc[2] >= naive_acc[2] + 0.03);  // 5-seed medians
}

TEST_CASE("diw_fit names a class missing from either side") {
  const auto trusted = testing::int_set({0, 0, 1, 1}, 2);
  const auto untrusted = testing::int_set({0, 0, 0, 0}, 2);
  CHECK_THROWS_WITH_AS(diw_fit(BiqualityDataset(trusted, untrusted), {}, bench_config()),
                       doctest::Contains("class 1"), std::invalid_argument);
}

TEST_CASE("reweighted_risk is the weighted mean loss") {
  const auto model = binary_model(0.8, 0.4);
  const auto set = testing::int_set({0, 1}, 2);

  const double risk = reweighted_risk(model, set, SampleWeights::ones(2));
  const Eigen::MatrixXd probs = model.predict_proba(set.features());
  const double expected = 0.5 * (-std::log(probs(0, 0)) - std::log(probs(1, 1)));
  CHECK(risk == doctest::Approx(expected).epsilon(1e-12));

  Eigen::VectorXd only_second(2);
  only_second << 0.0, 1.0;
  CHECK(reweighted_risk(model, set, SampleWeights{only_second}) ==
        doctest::Approx(-std::log(probs(1, 1))).epsilon(1e-12));

  CHECK_THROWS_AS(reweighted_risk(model, set, SampleWeights{Eigen::VectorXd::Zero(2)}),
                  std::invalid_argument);
}

TEST_CASE("the risk-rewriting identity holds exactly on an enumerable toy") {
  // two feature points (x = 0 with mass 0.6, x = 1 with mass 0.4), two labels;
  // exact-count datasets realize the distributions:
  //   P_T(y=0|x=0) = 0.7   P_T(y=0|x=1) = 0.2
  //   P_U(y=0|x=0) = 0.5   P_U(y=0|x=1) = 0.4
  Eigen::MatrixXd xt(100, 1);
  Eigen::VectorXi yt(100);
  Eigen::MatrixXd xu(100, 1);
  Eigen::VectorXi yu(100);
  Eigen::VectorXd beta(100);
  Eigen::Index r = 0;
  const auto fill = [&](Eigen::MatrixXd& x, Eigen::VectorXi& y, Eigen::Index count, double value,
                        int label) {
    for (Eigen::Index i = 0; i < count; ++i, ++r) {
      x(r, 0) = value;
      y[r] = label;
    }
  };
  fill(xt, yt, 42, 0.0, 0);
  fill(xt, yt, 18, 0.0, 1);
  fill(xt, yt, 8, 1.0, 0);
  fill(xt, yt, 32, 1.0, 1);
  r = 0;
  fill(xu, yu, 30, 0.0, 0);
  fill(xu, yu, 30, 0.0, 1);
  fill(xu, yu, 16, 1.0, 0);
  fill(xu, yu, 24, 1.0, 1);
  r = 0;
  const auto fill_beta = [&](Eigen::Index count, double value) {
    for (Eigen::Index i = 0; i < count; ++i, ++r) beta[r] = value;
  };
  fill_beta(30, 0.7 / 0.5);
  fill_beta(30, 0.3 / 0.5);
  fill_beta(16, 0.2 / 0.4);
  fill_beta(24, 0.8 / 0.6);

  const LabeledSet trusted(xt, yt, 2);
  const LabeledSet untrusted(xu, yu, 2);
  const auto model = binary_model(0.8, 0.35);

  // brute-force enumeration over the four outcomes
  const Eigen::RowVectorXd x_zero = Eigen::RowVectorXd::Zero(1);
  const Eigen::RowVectorXd x_one = Eigen::RowVectorXd::Ones(1);
  const Eigen::VectorXd p0 = model.predict_proba(x_zero);
  const Eigen::VectorXd p1 = model.predict_proba(x_one);
  const double enumerated = 0.6 * (0.7 * -std::log(p0[0]) + 0.3 * -std::log(p0[1])) +
                            0.4 * (0.2 * -std::log(p1[0]) + 0.8 * -std::log(p1[1]));

  const double trusted_risk = reweighted_risk(model, trusted, SampleWeights::ones(100));
  const double reweighted_untrusted = reweighted_risk(model, untrusted, SampleWeights{beta});

  CHECK(std::abs(trusted_risk - enumerated) < 1e-12);
  CHECK(std::abs(reweighted_untrusted - enumerated) < 1e-12);
  CHECK(std::abs(reweighted_untrusted - trusted_risk) < 1e-12);
}

TEST_CASE("the risk identity holds within 3 sigma on sampled toys") {
  // same two-point toy, but the untrusted set is sampled from P_U instead of
  // realized by exact counts; the ratio estimator's variance is enumerable
  const auto model = binary_model(0.8, 0.35);
  const Eigen::RowVectorXd x_zero = Eigen::RowVectorXd::Zero(1);
  const Eigen::RowVectorXd x_one = Eigen::RowVectorXd::Ones(1);
  const Eigen::VectorXd p0 = model.predict_proba(x_zero);
  const Eigen::VectorXd p1 = model.predict_proba(x_one);

  // outcome table: P(x), P_T(y|x), P_U(y|x), loss, beta
  struct Outcome {
    double x, p_joint_u, beta, loss;
  };
  const double px0 = 0.6;
  const std::vector<Outcome> outcomes = {
      {0.0, px0 * 0.5, 0.7 / 0.5, -std::log(p0[0])},
      {0.0, px0 * 0.5, 0.3 / 0.5, -std::log(p0[1])},
      {1.0, (1.0 - px0) * 0.4, 0.2 / 0.4, -std::log(p1[0])},
      {1.0, (1.0 - px0) * 0.6, 0.8 / 0.6, -std::log(p1[1])},
  };
  double trusted_risk = 0.0;  // E_U[beta * loss], the identity's left side
  double mean_beta = 0.0;
  for (const auto& o : outcomes) {
    trusted_risk += o.p_joint_u * o.beta * o.loss;
    mean_beta += o.p_joint_u * o.beta;
  }
  // delta-method variance of the ratio estimator (sum bL / sum b)
  double var_z = 0.0, var_b = 0.0, cov = 0.0;
  for (const auto& o : outcomes) {
    const double z = o.beta * o.loss;
    var_z += o.p_joint_u * (z - trusted_risk) * (z - trusted_risk);
    var_b += o.p_joint_u * (o.beta - mean_beta) * (o.beta - mean_beta);
    cov += o.p_joint_u * (z - trusted_risk) * (o.beta - mean_beta);
  }
  const Eigen::Index n = 20000;
  const double sigma =
      std::sqrt((var_z - 2.0 * trusted_risk * cov + trusted_risk * trusted_risk * var_b) /
                static_cast<double>(n));

  Rng rng(2024);
  Eigen::MatrixXd xs(n, 1);
  Eigen::VectorXi ys(n);
  Eigen::VectorXd beta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double u = rng.uniform();
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
      if (u < outcomes[k].p_joint_u || k + 1 == outcomes.size()) {
        xs(i, 0) = outcomes[k].x;
        ys[i] = static_cast<int>(k % 2);
        beta[i] = outcomes[k].beta;
        break;
      }
      u -= outcomes[k].p_joint_u;
    }
  }
  const double sampled =
      reweighted_risk(model, LabeledSet(xs, ys, 2), SampleWeights{beta});
  CHECK(std::abs(sampled - trusted_risk) < 3.0 * sigma);
}

TEST_CASE("weight vectors dump and reload for audit") {
  const auto blobs = make_blobs(BlobSpec{2, 200, 2, 1.5}, 44);
  const auto cell = synthesize_cell(blobs, 0.3, CorruptionSpec{CarSpec{0.3}, 0}, 45, 0.3);
  const auto irbl = irbl_fit(cell.data, bench_config());

  const auto path = std::filesystem::temp_directory_path() / "biq-weights-test.txt";
  dump_weights(path, irbl.weights);
  const Eigen::VectorXd reloaded = load_weight_dump(path);
  REQUIRE(reloaded.size() == irbl.weights.values.size());
  CHECK((reloaded - irbl.weights.values).lpNorm<Eigen::Infinity>() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("irbl and diw fits are deterministic") {
  const auto blobs = make_blobs(BlobSpec{2, 600, 2, 1.5}, 18);
  const auto cell = synthesize_cell(blobs, 0.2, CorruptionSpec{CarSpec{0.3}, 0}, 19, 0.3);
  const auto cfg = bench_config();

  const auto i1 = irbl_fit(cell.data, cfg);
  const auto i2 = irbl_fit(cell.data, cfg);
  CHECK((i1.model.weights() - i2.model.weights()).lpNorm<Eigen::Infinity>() <= 1e-12);

  DiwConfig diw;
  const auto d1 = diw_fit(cell.data, diw, cfg);
  const auto d2 = diw_fit(cell.data, diw, cfg);
  CHECK((d1.model.weights() - d2.model.weights()).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((d1.weights.values - d2.weights.values).lpNorm<Eigen::Infinity>() <= 1e-12);
}
