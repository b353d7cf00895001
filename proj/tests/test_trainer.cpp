#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "recon/trainer.hpp"
#include "testutil.hpp"

using namespace recon;
namespace tu = recon::testutil;

namespace {

SyntheticSpec desk_spec() {
  SyntheticSpec spec;
  spec.class_count = 3;
  spec.per_class = 5;
  spec.dims = 6;
  spec.cluster_separation = 4.0;
  spec.noise_scale = 0.1;
  spec.seed = 7;
  return spec;
}

Dataset<double> one_sample_dataset(const Eigen::VectorXd& x, int y, int classes) {
  Dataset<double> d;
  d.samples = x.transpose();
  d.labels = Eigen::VectorXi::Constant(1, y);
  d.class_count = classes;
  return d;
}

}  // namespace

TEST_CASE("cross_entropy closed forms") {
  // zero weights force equal logits: loss = ln C
  MlpParams<double> zero;
  zero.layers = {Eigen::MatrixXd::Zero(4, 6), Eigen::MatrixXd::Zero(6, 5)};
  SyntheticSpec spec = desk_spec();
  spec.class_count = 5;
  spec.dims = 4;
  auto data = make_synthetic<double>(spec);
  auto [loss, grad] = cross_entropy(zero, data);
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // one sample, linear model, logits (10, -10), y = 0
  MlpParams<double> lin;
  Eigen::MatrixXd w(1, 2);
  w << 10, -10;
  lin.layers = {w};
  Eigen::VectorXd x(1);
  x << 1;
  auto [l2, g2] = cross_entropy(lin, one_sample_dataset(x, 0, 2));
  CHECK(l2 == doctest::Approx(std::log(1.0 + std::exp(-20.0))).epsilon(1e-9));
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  for (std::uint64_t seed : {500u, 501u, 502u}) {
    auto gp = tu::sample_generic_point({5, 7, 3}, seed);
    SyntheticSpec spec;
    spec.class_count = 3;
    spec.per_class = 4;
    spec.dims = 5;
    spec.seed = seed;
    spec.cluster_separation = 1.0;
    spec.noise_scale = 0.3;
    auto data = make_synthetic<double>(spec);

    auto f = [&](const Eigen::VectorXd& t) {
      auto p = MlpParams<double>::unflatten(t, gp.params.dims());
      return cross_entropy(p, data).first;
    };
    Eigen::VectorXd theta = gp.params.flatten();
    Eigen::VectorXd fd = tu::fd_gradient(f, theta);
    Eigen::VectorXd an = cross_entropy(gp.params, data).second;
    CHECK(tu::rel_error(fd, an) < 1e-6);
  }
}

TEST_CASE("training a separable synthetic set reaches zero error with decreasing loss") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  init.seed = 2;
  auto params = init_params<double>(init, {6, 16, 3});
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 2000;
  cfg.checkpoint_every = 200;
  cfg.kkt_in_report = false;
  auto [trained, report] = train(std::move(params), data, cfg);
  REQUIRE(report.checkpoints.size() == 10);
  CHECK(report.final_checkpoint().train_error == 0.0);
  for (std::size_t i = 1; i < report.checkpoints.size(); ++i) {
    CHECK(report.checkpoints[i].ce_loss < report.checkpoints[i - 1].ce_loss);
    CHECK(report.checkpoints[i].epoch > report.checkpoints[i - 1].epoch);
  }
  // margins of a fitted set are positive, so the final on-margin fraction
  // uses the normalized band and sits in (0, 1]
  CHECK(report.final_checkpoint().min_margin > 0.0);
  CHECK(report.final_checkpoint().frac_on_margin > 0.0);
  CHECK(report.final_checkpoint().frac_on_margin <= 1.0);
}

TEST_CASE("weight-decay step is exactly shrink-then-step") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  init.seed = 5;
  auto params = init_params<double>(init, {6, 8, 3});
  TrainConfig cfg;
  cfg.learning_rate = 0.25;
  cfg.weight_decay = 0.01;
  cfg.epochs = 1;
  cfg.checkpoint_every = 1;
  cfg.kkt_in_report = false;

  std::vector<Matrix<double>> grad;
  detail::cross_entropy_stack(params, data.samples, data.labels, &grad);
  const double lr = cfg.learning_rate;
  std::vector<Matrix<double>> expected;
  const double shrink = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.layers.size(); ++k)
    expected.push_back(shrink * params.layers[k] - lr * grad[k]);

  auto [stepped, report] = train(std::move(params), data, cfg);
  for (std::size_t k = 0; k < stepped.layers.size(); ++k)
    CHECK((stepped.layers[k].array() == expected[k].array()).all());
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  init.seed = 6;
  auto params = init_params<double>(init, {6, 8, 3});
  const Eigen::VectorXd before = params.flatten();
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  cfg.checkpoint_every = 1;
  cfg.kkt_in_report = false;
  auto [after, report] = train(std::move(params), data, cfg);
  CHECK((after.flatten().array() == before.array()).all());
}

TEST_CASE("training is bit-deterministic per config") {
  auto data = make_synthetic<double>(desk_spec());
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 50;
  cfg.checkpoint_every = 10;
  cfg.kkt_in_report = false;
  InitScheme init;
  init.seed = 9;
  auto run = [&]() {
    auto params = init_params<double>(init, {6, 10, 3});
    return train(std::move(params), data, cfg).first.flatten();
  };
  Eigen::VectorXd a = run(), b = run();
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("divergence aborts with the epoch in the message") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  init.seed = 10;
  auto params = init_params<double>(init, {6, 8, 3});
  // blow up the parameters so exp overflows the loss within a few steps
  for (auto& w : params.layers) w *= 1e200;
  TrainConfig cfg;
  cfg.learning_rate = 1e10;
  cfg.epochs = 50;
  cfg.checkpoint_every = 50;
  cfg.kkt_in_report = false;
  CHECK_THROWS_WITH_AS(train(std::move(params), data, cfg), doctest::Contains("epoch"),
                       DivergenceError);
}

TEST_CASE("nnls recovers a constructed nonnegative combination") {
  // Linear C=2 model: margin gradients depend only on the data, so theta
  // can be built exactly as 2 g_1 + 3 g_2.
  const Index d = 6, n = 6;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> unit(0.0, 1.0);
  Dataset<double> data;
  data.samples.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) data.samples(i, j) = unit(rng);
  data.labels.resize(n);
  for (Index i = 0; i < n; ++i) data.labels(i) = static_cast<int>(i % 2);
  data.class_count = 2;

  MlpParams<double> probe;
  probe.layers = {Eigen::MatrixXd::Zero(d, 2)};
  Eigen::VectorXd g1 = grad_theta_margin(probe, Eigen::VectorXd(data.samples.row(0).transpose()),
                                         data.labels(0));
  Eigen::VectorXd g2 = grad_theta_margin(probe, Eigen::VectorXd(data.samples.row(1).transpose()),
                                         data.labels(1));
  MlpParams<double> constructed =
      MlpParams<double>::unflatten(Eigen::VectorXd(2.0 * g1 + 3.0 * g2), {d, 2});

  DualFit fit = fit_dual_coefficients(constructed, data);
  REQUIRE(fit.lambda.size() == n);
  CHECK(fit.residual <= 1e-6);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(n);
  expected(0) = 2.0;
  expected(1) = 3.0;
  CHECK((fit.lambda - expected).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("nnls on an orthogonal gradient gives lambda 0 and residual exactly 1") {
  // one sample with g_1 orthogonal to theta
  const Index d = 4;
  Dataset<double> data;
  Eigen::VectorXd x(d);
  x << 1, 0, 0, 0;
  data.samples = x.transpose();
  data.labels = Eigen::VectorXi::Constant(1, 0);
  data.class_count = 2;
  // g_1 has x in one column and -x in the other; theta avoids that coordinate
  MlpParams<double> params;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, 2);
  w(1, 0) = 3.0;
  w(2, 1) = -2.0;
  params.layers = {w};
  DualFit fit = fit_dual_coefficients(params, data);
  CHECK(fit.lambda(0) == 0.0);
  CHECK(fit.residual == 1.0);
}

TEST_CASE("nnls keeps lambda nonnegative and the residual non-increasing") {
  std::mt19937_64 rng(123);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    const Index p = 30, n = 12;
    Eigen::MatrixXd G(p, n);
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < n; ++j) G(i, j) = unit(rng);
    Eigen::VectorXd theta(p);
    for (Index i = 0; i < p; ++i) theta(i) = unit(rng);
    DualFit fit = detail::nnls_nonneg(G.transpose() * G, G.transpose() * theta,
                                      theta.squaredNorm());
    CHECK((fit.lambda.array() >= 0.0).all());
    REQUIRE(!fit.residual_trace.empty());
    for (std::size_t i = 1; i < fit.residual_trace.size(); ++i)
      CHECK(fit.residual_trace[i] <= fit.residual_trace[i - 1]);
    CHECK(fit.residual == doctest::Approx(fit.residual_trace.back()));
  }
}

TEST_CASE("kkt_audit: untrained nets violate everywhere, trained nets satisfy") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  init.seed = 3;
  auto params = init_params<double>(init, {6, 16, 3});

  KktAudit before = kkt_audit(params, data);
  CHECK(before.violations == data.n());  // margins near zero at init

  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs = 12000;
  cfg.checkpoint_every = 4000;
  cfg.kkt_in_report = true;
  auto [trained, report] = train(std::move(params), data, cfg);
  KktAudit after = kkt_audit(trained, data);
  CHECK(after.residual <= 0.1);
  CHECK(after.min_margin > 0.0);
  CHECK(after.violations == 0);  // raw margins exceed 1 after a long run
  // the report carried a kkt residual per checkpoint, decreasing overall
  REQUIRE(report.checkpoints.size() == 3);
  CHECK(report.checkpoints.back().kkt_residual <= report.checkpoints.front().kkt_residual);
}

TEST_CASE("train rejects mismatched class counts and empty budgets") {
  auto data = make_synthetic<double>(desk_spec());
  InitScheme init;
  auto params = init_params<double>(init, {6, 8, 4});  // 4 outputs vs 3 classes
  TrainConfig cfg;
  CHECK_THROWS_AS(train(std::move(params), data, cfg), ShapeError);

  auto params2 = init_params<double>(init, {6, 8, 3});
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(std::move(params2), data, cfg), ConfigError);
}
