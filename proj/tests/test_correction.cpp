#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "biq/correction.hpp"
#include "biq/harness.hpp"
#include "biq/rng.hpp"
#include "helpers.hpp"

using namespace biq;
using biq::testing::binary_model;
using biq::testing::constant_model;

namespace {

TrainConfig bench_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.max_iters = 600;
  cfg.tolerance = 1e-8;
  cfg.l2_penalty = 1e-4;
  return cfg;
}

ProbClassifier one_hot_model(int k) {
  // huge diagonal weights on one-hot features saturate the softmax
  return ProbClassifier(50.0 * Eigen::MatrixXd::Identity(k, k), Eigen::VectorXd::Zero(k));
}

}  // namespace

TEST_CASE("find_anchors picks the most confident pool row per class") {
  const int k = 3;
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Identity(k, k);
  const LabeledSet pool(onehot, Eigen::VectorXi::LinSpaced(k, 0, k - 1), k);
  const auto anchors = find_anchors(one_hot_model(k), pool);
  for (int c = 0; c < k; ++c) {
    CHECK(anchors.pool_indices[static_cast<std::size_t>(c)] == c);
    CHECK(anchors.rows.row(c) == onehot.row(c));
  }
}

TEST_CASE("find_anchors breaks ties toward the lowest row index") {
  Eigen::MatrixXd same = Eigen::MatrixXd::Ones(4, 2);
  const LabeledSet pool(same, Eigen::VectorXi::Zero(4), 2);
  Eigen::MatrixXd w(2, 2);
  w << 0.5, 0.0, 0.0, 0.5;
  const ProbClassifier model(w, Eigen::VectorXd::Zero(2));
  const auto anchors = find_anchors(model, pool);
  CHECK(anchors.pool_indices[0] == 0);
  CHECK(anchors.pool_indices[1] == 0);

  CHECK_THROWS_AS(find_anchors(model, pool.take_rows({})), std::invalid_argument);
}

TEST_CASE("find_anchors on a 1-d logistic slope") {
  Eigen::MatrixXd x(3, 1);
  x << -5.0, 0.0, 5.0;
  const LabeledSet pool(x, Eigen::VectorXi::Zero(3), 2);
  // positive slope: P(y=1|x) grows with x
  const auto model = binary_model(0.9, 0.5);
  const auto anchors = find_anchors(model, pool);
  CHECK(anchors.pool_indices[0] == 0);  // class 0 anchored at x = -5
  CHECK(anchors.pool_indices[1] == 2);  // class 1 anchored at x = +5
}

TEST_CASE("estimate_T_anchor reads rows off the model") {
  // one-hot confident model: estimate is the identity
  const int k = 3;
  AnchorSet anchors;
  anchors.rows = Eigen::MatrixXd::Identity(k, k);
  anchors.pool_indices = {0, 1, 2};
  const auto t_hat = estimate_T_anchor(one_hot_model(k), anchors);
  CHECK((t_hat.entries() - Eigen::MatrixXd::Identity(k, k)).lpNorm<Eigen::Infinity>() < 1e-9);

  // model outputs (0.7,0.3) at A_0 = 0 and (0.2,0.8) at A_1 = 1
  AnchorSet two;
  two.rows = Eigen::MatrixXd::Zero(2, 1);
  two.rows(1, 0) = 1.0;
  two.pool_indices = {0, 1};
  const auto t2 = estimate_T_anchor(binary_model(0.7, 0.2), two);
  CHECK(t2.entries()(0, 0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(t2.entries()(0, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(t2.entries()(1, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(t2.entries()(1, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("estimate_T_anchor recovers an injected CAR channel") {
  // anchor points sit in the far tails, where a logistic fit overshoots the
  // noisy-label ceiling; wide separation keeps that excursion small. Features
  // are shrunk so fixed-step descent converges at this separation.
  const auto raw = make_blobs(BlobSpec{2, 20000, 2, 10.0}, 77);
  const LabeledSet blobs(0.3 * raw.features(), raw.labels(), 2);
  const auto truth = car_matrix(2, 0.3);
  const auto noisy = apply_label_noise(blobs, truth, 78);
  const auto model =
      fit_weighted(noisy.corrupted, SampleWeights::ones(noisy.corrupted.size()), bench_config());
  const auto anchors = find_anchors(model, noisy.corrupted);
  const auto t_hat = estimate_T_anchor(model, anchors);
  CHECK((t_hat.entries() - truth.entries()).lpNorm<Eigen::Infinity>() < 0.1);
}

TEST_CASE("estimate_T_trusted averages predictions per trusted class") {
  // constant (0.6, 0.4) prediction: every row of the estimate is (0.6, 0.4)
  Eigen::VectorXd probs(2);
  probs << 0.6, 0.4;
  const auto model = constant_model(probs, 1);
  const auto trusted = testing::int_set({0, 0, 0, 1}, 2);
  const auto t_hat = estimate_T_trusted(model, trusted);
  CHECK(t_hat.entries()(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(t_hat.entries()(1, 1) == doctest::Approx(0.4).epsilon(1e-12));

  // one example per class with one-hot predictions: identity
  const int k = 3;
  const LabeledSet onehot(Eigen::MatrixXd::Identity(k, k), Eigen::VectorXi::LinSpaced(k, 0, 2), k);
  const auto t_id = estimate_T_trusted(one_hot_model(k), onehot);
  CHECK((t_id.entries() - Eigen::MatrixXd::Identity(k, k)).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("estimate_T_trusted names the empty class") {
  const auto trusted = testing::int_set({0, 0, 0}, 2);
  CHECK_THROWS_WITH_AS(estimate_T_trusted(binary_model(0.6, 0.6), trusted),
                       doctest::Contains("class 1"), std::invalid_argument);
}

TEST_CASE("estimate_T_trusted recovers an injected CAR channel") {
  const auto blobs = make_blobs(BlobSpec{3, 30300, 2, 4.0}, 41);
  std::vector<Eigen::Index> untrusted_rows(30000), trusted_rows(300);
  for (Eigen::Index i = 0; i < 30000; ++i) untrusted_rows[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = 0; i < 300; ++i) trusted_rows[static_cast<std::size_t>(i)] = 30000 + i;

  const auto truth = car_matrix(3, 0.4);
  const auto noisy = apply_label_noise(blobs.take_rows(untrusted_rows), truth, 42);
  const auto model = fit_weighted(noisy.corrupted, SampleWeights::ones(30000), bench_config());
  const auto t_hat = estimate_T_trusted(model, blobs.take_rows(trusted_rows));
  CHECK((t_hat.entries() - truth.entries()).norm() < 0.15);
}

TEST_CASE("trusted estimator error shrinks with the square root of n_T") {
  // model whose class-conditional mean prediction defines the channel: the
  // estimate is unbiased, so the error is pure Monte-Carlo noise. Expected
  // error ratio between n_T = 100 and n_T = 1600 is 4.
  Eigen::MatrixXd w(2, 1);
  w << 0.0, 1.2;
  const ProbClassifier model(w, Eigen::VectorXd::Zero(2));  // P(1|x) = sigmoid(1.2 x)

  // quadrature oracle: row means of the model over x ~ N(+-1, 1)
  const auto mean_p1 = [](double mu) {
    double total = 0.0, norm = 0.0;
    for (double z = -8.0; z <= 8.0; z += 1e-4) {
      const double phi = std::exp(-0.5 * z * z);
      total += phi / (1.0 + std::exp(-1.2 * (mu + z)));
      norm += phi;
    }
    return total / norm;
  };
  Eigen::MatrixXd t_true(2, 2);
  const double m0 = mean_p1(-1.0);
  const double m1 = mean_p1(1.0);
  t_true << 1.0 - m0, m0, 1.0 - m1, m1;

  double err_small = 0.0, err_large = 0.0;
  for (int s = 0; s < 10; ++s) {
    Rng rng(500 + s);
    const auto sample = [&](Eigen::Index per_class) {
      Eigen::MatrixXd x(2 * per_class, 1);
      Eigen::VectorXi y(2 * per_class);
      for (Eigen::Index i = 0; i < per_class; ++i) {
        x(i, 0) = -1.0 + rng.normal();
        y[i] = 0;
        x(per_class + i, 0) = 1.0 + rng.normal();
        y[per_class + i] = 1;
      }
      return LabeledSet(std::move(x), std::move(y), 2);
    };
    err_small += (estimate_T_trusted(model, sample(50)).entries() - t_true).norm();
    err_large += (estimate_T_trusted(model, sample(800)).entries() - t_true).norm();
  }
  const double improvement = err_small / err_large;
  CHECK(improvement > 4.0 / 3.0);  // within a factor 3 of the sqrt-law factor 4
  CHECK(improvement < 12.0);
}

TEST_CASE("forward correction is T^t applied to the prediction") {
  Eigen::VectorXd probs(2);
  probs << 1.0, 0.0;
  CHECK(forward_corrected_probs(probs, TransitionMatrix::identity(2)) == probs);

  Eigen::MatrixXd t(2, 2);
  t << 0.7, 0.3, 0.2, 0.8;
  const Eigen::VectorXd out = forward_corrected_probs(probs, TransitionMatrix{t});
  CHECK(out[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(std::abs(out.sum() - 1.0) <= 1e-12);  // stays on the simplex

  Eigen::VectorXd any(2);
  any << 0.23, 0.77;
  const Eigen::VectorXd mixed = forward_corrected_probs(any, car_matrix(2, 0.5));
  CHECK(mixed[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mixed[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward correction applies the inverse channel") {
  Eigen::VectorXd loss(2);
  loss << 1.0, 0.0;
  CHECK(backward_corrected_loss(loss, TransitionMatrix::identity(2)) == loss);

  // K=2 CAR(0.2): T^{-1} (1,0) = (0.8, -0.2)/0.6
  const Eigen::VectorXd corrected = backward_corrected_loss(loss, car_matrix(2, 0.2));
  CHECK(corrected[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-9));
  CHECK(corrected[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-9));

  CHECK_THROWS_WITH_AS(backward_corrected_loss(loss, car_matrix(2, 0.5)),
                       doctest::Contains("diagonal loading"), std::runtime_error);
}

TEST_CASE("inversion respects the condition cap and diagonal loading") {
  const auto nearly_singular = car_matrix(2, 0.499999999);
  CHECK_THROWS_AS(invert_transition(nearly_singular, 1e8), std::runtime_error);
  CHECK_NOTHROW(invert_transition(nearly_singular, 1e8, 1e-3));  // loading rescues it

  const auto t = car_matrix(3, 0.3);
  const Eigen::MatrixXd inv = invert_transition(t);
  CHECK((t.entries() * inv - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-8);
}

TEST_CASE("glc_fit on clean untrusted data matches the plain union fit") {
  const auto blobs = make_blobs(BlobSpec{2, 1200, 2, 2.0}, 55);
  const auto cell = synthesize_cell(blobs, 0.2, CorruptionSpec{CarSpec{0.0}, 0}, 56, 0.3);
  const auto cfg = bench_config();

  const auto glc = glc_fit(cell.data, cfg);
  CHECK((glc.transition.entries() - Eigen::MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>() <
        0.05);

  const Eigen::Index n = cell.data.trusted.size() + cell.data.untrusted.size();
  Eigen::MatrixXd features(n, 2);
  Eigen::VectorXi labels(n);
  features << cell.data.trusted.features(), cell.data.untrusted.features();
  labels << cell.data.trusted.labels(), cell.data.untrusted.labels();
  const auto plain = fit_weighted(LabeledSet(features, labels, 2), SampleWeights::ones(n), cfg);

  const double acc_glc = evaluate(glc.model, cell.test).accuracy;
  const double acc_plain = evaluate(plain, cell.test).accuracy;
  CHECK(acc_glc >= acc_plain - 0.01);
  CHECK(acc_glc <= acc_plain + 0.01);
}

TEST_CASE("glc_fit beats the naive fit under heavy label noise") {
  const auto blobs = make_blobs(BlobSpec{2, 2000, 2, 1.25}, 91);
  const auto cell = synthesize_cell(blobs, 0.05, CorruptionSpec{CarSpec{0.45}, 0}, 92, 0.3);
  const auto cfg = bench_config();

  const auto glc = glc_fit(cell.data, cfg);
  const Eigen::Index n = cell.data.trusted.size() + cell.data.untrusted.size();
  Eigen::MatrixXd features(n, 2);
  Eigen::VectorXi labels(n);
  features << cell.data.trusted.features(), cell.data.untrusted.features();
  labels << cell.data.trusted.labels(), cell.data.untrusted.labels();
  const auto naive = fit_weighted(LabeledSet(features, labels, 2), SampleWeights::ones(n), cfg);

  CHECK(evaluate(glc.model, cell.test).accuracy > evaluate(naive, cell.test).accuracy);
}

TEST_CASE("glc_fit degrades gracefully at q near zero") {
  const auto blobs = make_blobs(BlobSpec{2, 2000, 2, 1.25}, 93);
  // uniform labels: CAR((K-1)/K) = CAR(0.5) for K = 2
  const auto cell = synthesize_cell(blobs, 0.1, CorruptionSpec{CarSpec{0.5}, 0}, 94, 0.3);
  const auto cfg = bench_config();

  const auto glc = glc_fit(cell.data, cfg);
  const auto trusted_only =
      fit_weighted(cell.data.trusted, SampleWeights::ones(cell.data.trusted.size()), cfg);
  CHECK(evaluate(glc.model, cell.test).accuracy >=
        evaluate(trusted_only, cell.test).accuracy - 0.02);
}

TEST_CASE("glc_fit with the backward correction works on invertible channels") {
  const auto blobs = make_blobs(BlobSpec{2, 1500, 2, 1.5}, 95);
  const auto cell = synthesize_cell(blobs, 0.1, CorruptionSpec{CarSpec{0.3}, 0}, 96, 0.3);
  GlcConfig glc;
  glc.kind = CorrectionKind::Backward;
  const auto model = glc_fit(cell.data, bench_config(), glc);
  CHECK(evaluate(model.model, cell.test).accuracy > 0.7);
}

TEST_CASE("glc_fit validates its preconditions") {
  const auto blobs = make_blobs(BlobSpec{2, 100, 2, 2.0}, 97);
  const auto empty = blobs.empty_like();
  CHECK_THROWS_AS(glc_fit(BiqualityDataset(blobs, empty), bench_config()), std::invalid_argument);
  CHECK_THROWS_AS(glc_fit(BiqualityDataset(empty, blobs), bench_config()), std::invalid_argument);
}
