#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "recon/checkpoint.hpp"
#include "recon/mlp.hpp"
#include "testutil.hpp"

using namespace recon;
namespace tu = recon::testutil;

namespace {

MlpParams<double> tiny_hand_net() {
  // d=2, h=2, C=2 with every unit active at x = (1, 2).
  MlpParams<double> p;
  Eigen::MatrixXd w1(2, 2), w2(2, 2);
  w1 << 1, -1,  //
      2, 1;
  w2 << 1, 3,  //
      -2, 0.5;
  p.layers = {w1, w2};
  return p;
}

}  // namespace

TEST_CASE("flatten/unflatten is an exact bijection") {
  InitScheme scheme;
  scheme.seed = 11;
  auto params = init_params<double>(scheme, {5, 7, 3});
  auto theta = params.flatten();
  CHECK(theta.size() == params.param_count());
  auto back = MlpParams<double>::unflatten(theta, params.dims());
  REQUIRE(back.layers.size() == params.layers.size());
  for (std::size_t k = 0; k < params.layers.size(); ++k)
    CHECK((back.layers[k].array() == params.layers[k].array()).all());
  CHECK((back.flatten().array() == theta.array()).all());

  CHECK_THROWS_AS(MlpParams<double>::unflatten(theta, {5, 7, 4}), ShapeError);
  CHECK_THROWS_AS(MlpParams<double>::unflatten(theta.head(10), params.dims()), ShapeError);
}

TEST_CASE("init_params is deterministic per seed") {
  InitScheme scheme;
  scheme.seed = 42;
  auto a = init_params<double>(scheme, {6, 8, 3});
  auto b = init_params<double>(scheme, {6, 8, 3});
  CHECK((a.flatten().array() == b.flatten().array()).all());
  scheme.seed = 43;
  auto c = init_params<double>(scheme, {6, 8, 3});
  CHECK((a.flatten().array() != c.flatten().array()).any());
}

TEST_CASE("init_params hits the scheme variance") {
  // 3072 x 1000 gives 3.072e6 draws; the sample variance should sit within
  // 5% of the target for both schemes.
  InitScheme standard;
  standard.seed = 1;
  auto p = init_params<double>(standard, {3072, 1000, 10});
  const auto& w = p.layers[0];
  const double var = w.array().square().sum() / static_cast<double>(w.size());
  CHECK(var == doctest::Approx(1.0 / 3072.0).epsilon(0.05));

  InitScheme small;
  small.kind = InitKind::small_first_layer;
  small.seed = 2;
  auto q = init_params<double>(small, {3072, 1000, 10});
  const double var1 = q.layers[0].array().square().sum() / static_cast<double>(q.layers[0].size());
  CHECK(var1 == doctest::Approx(std::pow(3072.0, -1.5)).epsilon(0.05));
  // remaining layers keep the standard exponent
  const double var2 = q.layers[1].array().square().sum() / static_cast<double>(q.layers[1].size());
  CHECK(var2 == doctest::Approx(1.0 / 1000.0).epsilon(0.05));
}

TEST_CASE("forward matches a hand-computed tiny net") {
  auto p = tiny_hand_net();
  Eigen::VectorXd x(2);
  x << 1, 2;
  // z1 = (1*1+2*2, -1*1+1*2) = (5, 1); relu keeps both
  // logits = (5*1 + 1*(-2), 5*3 + 1*0.5) = (3, 15.5)
  Eigen::VectorXd logits = forward(p, x);
  CHECK(logits(0) == doctest::Approx(3.0));
  CHECK(logits(1) == doctest::Approx(15.5));

  Matrix<double> batch(1, 2);
  batch << 1, 2;
  Eigen::MatrixXd blogits = forward_batch(p, batch);
  CHECK(blogits(0, 0) == doctest::Approx(3.0));
  CHECK(blogits(0, 1) == doctest::Approx(15.5));
}

TEST_CASE("forward of the zero input is zero (no biases)") {
  InitScheme scheme;
  scheme.seed = 3;
  auto p = init_params<double>(scheme, {4, 6, 6, 3});
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  CHECK(forward(p, x).norm() == 0.0);
}

TEST_CASE("positive homogeneity in x and in theta") {
  InitScheme scheme;
  scheme.seed = 4;
  auto p = init_params<double>(scheme, {5, 9, 4});
  Eigen::VectorXd x = tu::random_vector(5, 10);
  const double c = 2.7;
  Eigen::VectorXd direct = forward(p, Eigen::VectorXd(c * x));
  Eigen::VectorXd scaled = c * forward(p, x);
  CHECK(tu::rel_error(direct, scaled) < 1e-12);

  // theta-homogeneity of degree L
  auto p3 = init_params<double>(scheme, {5, 9, 7, 4});
  MlpParams<double> p3s = p3;
  for (auto& w : p3s.layers) w *= c;
  Eigen::VectorXd lhs = forward(p3s, x);
  Eigen::VectorXd rhs = std::pow(c, 3.0) * forward(p3, x);
  CHECK(tu::rel_error(lhs, rhs) < 1e-12);
}

TEST_CASE("Euler identity: theta . grad_theta Phi_j = L * Phi_j") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto gp = tu::sample_generic_point({6, 8, 5, 3}, seed);
    Eigen::VectorXd theta = gp.params.flatten();
    Eigen::VectorXd logits = forward(gp.params, gp.x);
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
      e(j) = 1.0;
      Eigen::VectorXd g = grad_theta_output(gp.params, gp.x, e);
      CHECK(theta.dot(g) == doctest::Approx(3.0 * logits(j)).epsilon(1e-10));
    }
  }
}

TEST_CASE("margin basics") {
  // linear model with logits (3, 1, 1) at x = 1
  MlpParams<double> lin;
  Eigen::MatrixXd w(1, 3);
  w << 3, 1, 1;
  lin.layers = {w};
  Eigen::VectorXd x(1);
  x << 1;
  CHECK(margin(lin, x, 0) == doctest::Approx(2.0));
  // ties break toward the lowest class index
  Eigen::VectorXd logits = forward(lin, x);
  CHECK(runner_up(logits, 0) == 1);

  // all logits equal -> margin 0
  Eigen::MatrixXd wz = Eigen::MatrixXd::Zero(1, 3);
  MlpParams<double> zero;
  zero.layers = {wz};
  CHECK(margin(zero, x, 1) == 0.0);

  CHECK_THROWS_AS(margin(lin, x, 3), ShapeError);
}

TEST_CASE("grad_theta_margin closed form for a linear model") {
  MlpParams<double> lin;
  Eigen::MatrixXd w(3, 2);
  w << 1, 0,  //
      0, 1,   //
      2, -1;
  lin.layers = {w};
  Eigen::VectorXd x(3);
  x << 0.5, -1.5, 2.0;
  // y = 0, j* = 1: gradient is x in column 0 and -x in column 1
  Eigen::VectorXd g = grad_theta_margin(lin, x, 0);
  REQUIRE(g.size() == 6);
  CHECK((g.head(3) - x).norm() == 0.0);
  CHECK((g.tail(3) + x).norm() == 0.0);
}

TEST_CASE("x = 0 zeroes grad_theta_margin for L >= 2") {
  InitScheme scheme;
  scheme.seed = 5;
  auto p = init_params<double>(scheme, {4, 6, 3});
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  CHECK(grad_theta_margin(p, x, 1).norm() == 0.0);
}

TEST_CASE("derivatives match central finite differences at generic points") {
  std::vector<std::pair<std::vector<Index>, std::uint64_t>> cases;
  for (std::uint64_t seed = 100; seed < 106; ++seed) cases.push_back({{6, 8, 3}, seed});
  for (std::uint64_t seed = 200; seed < 203; ++seed) cases.push_back({{6, 8, 5, 3}, seed});
  for (const auto& [dims, seed] : cases) {
    auto gp = tu::sample_generic_point(dims, seed);
    const Eigen::VectorXd theta = gp.params.flatten();

    // d margin / d theta
    auto f_theta = [&](const Eigen::VectorXd& t) {
      auto p = MlpParams<double>::unflatten(t, gp.params.dims());
      return margin(p, gp.x, gp.y);
    };
    Eigen::VectorXd fd_t = tu::fd_gradient(f_theta, theta);
    Eigen::VectorXd an_t = grad_theta_margin(gp.params, gp.x, gp.y);
    CHECK(tu::rel_error(fd_t, an_t) < 1e-6);

    // d margin / d x
    auto f_x = [&](const Eigen::VectorXd& xv) { return margin(gp.params, xv, gp.y); };
    Eigen::VectorXd fd_x = tu::fd_gradient(f_x, gp.x);
    Eigen::VectorXd an_x = grad_x_margin(gp.params, gp.x, gp.y);
    CHECK(tu::rel_error(fd_x, an_x) < 1e-6);

    // d/dx of r . grad_theta_margin for a fixed random r
    Eigen::VectorXd r = tu::random_vector(theta.size(), seed * 31 + 1);
    auto f_mixed = [&](const Eigen::VectorXd& xv) {
      return r.dot(grad_theta_margin(gp.params, xv, gp.y));
    };
    Eigen::VectorXd fd_m = tu::fd_gradient(f_mixed, gp.x);
    Eigen::VectorXd an_m = mixed_vjp(gp.params, gp.x, gp.y, r);
    CHECK(tu::rel_error(fd_m, an_m) < 1e-6);
  }
}

TEST_CASE("mixed_vjp closed form for a linear model and r = 0") {
  MlpParams<double> lin;
  Eigen::MatrixXd w(3, 2);
  w << 0.3, -0.2,  //
      1.0, 0.4,    //
      -0.5, 0.9;
  lin.layers = {w};
  Eigen::VectorXd x(3);
  x << 1.0, 2.0, -0.5;
  const int y = 0;
  Eigen::VectorXd r = tu::random_vector(6, 77);
  Eigen::VectorXd got = mixed_vjp(lin, x, y, r);
  // s(x) = (col_y(r) - col_j(r)) . x, so the gradient is that column diff
  Eigen::VectorXd logits = forward(lin, x);
  const int j = runner_up(logits, y);
  Eigen::VectorXd expect = r.segment(3 * y, 3) - r.segment(3 * j, 3);
  CHECK(tu::rel_error(got, expect) < 1e-15);

  CHECK(mixed_vjp(lin, x, y, Eigen::VectorXd(Eigen::VectorXd::Zero(6))).norm() == 0.0);
}

TEST_CASE("grad_x_margin scales quadratically with theta for a 2-layer net") {
  auto gp = tu::sample_generic_point({5, 7, 3}, 300);
  const double c = 1.9;
  MlpParams<double> scaled = gp.params;
  for (auto& w : scaled.layers) w *= c;
  Eigen::VectorXd base = grad_x_margin(gp.params, gp.x, gp.y);
  Eigen::VectorXd big = grad_x_margin(scaled, gp.x, gp.y);
  CHECK(tu::rel_error(big, Eigen::VectorXd(c * c * base)) < 1e-12);
}

TEST_CASE("rescale_to_margin sets the min margin to 1") {
  auto gp = tu::sample_generic_point({4, 6, 3}, 400);
  Matrix<double> X(3, 4);
  Eigen::VectorXi labels(3);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) X(i, j) = unit(rng);
    labels(i) = static_cast<int>(i % 3);
  }
  Vector<double> m = margins_batch(gp.params, X, labels);
  if (m.minCoeff() <= 0) {
    // force positive margins by flipping labels to the argmax class
    Eigen::MatrixXd logits = forward_batch(gp.params, X);
    for (Index i = 0; i < 3; ++i) {
      Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      labels(i) = static_cast<int>(arg);
    }
  }
  auto rescaled = rescale_to_margin(gp.params, X, labels);
  Vector<double> m2 = margins_batch(rescaled, X, labels);
  CHECK(m2.minCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((m2.array() >= 1.0 - 1e-12).all());
}

TEST_CASE("checkpoint round-trips exactly and rejects corruption") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "recon_test_ckpt.bin";
  InitScheme scheme;
  scheme.seed = 8;
  auto p64 = init_params<double>(scheme, {4, 5, 3});
  save_checkpoint(path, p64);
  CHECK(checkpoint_precision(path) == Precision::f64);
  auto back = load_checkpoint<double>(path);
  CHECK((back.flatten().array() == p64.flatten().array()).all());
  CHECK_THROWS_AS(load_checkpoint<float>(path), FileFormatError);

  auto p32 = p64.cast<float>();
  save_checkpoint(path, p32);
  CHECK(checkpoint_precision(path) == Precision::f32);
  auto back32 = load_checkpoint<float>(path);
  CHECK((back32.flatten().array() == p32.flatten().array()).all());

  // flip one payload byte -> checksum mismatch
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(24);
  char b;
  f.seekg(24);
  f.get(b);
  f.seekp(24);
  f.put(static_cast<char>(b ^ 0x5a));
  f.close();
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(path), doctest::Contains("checksum"),
                       FileFormatError);
  fs::remove(path);
}
