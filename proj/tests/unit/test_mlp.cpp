#include <doctest.h>

#include <cmath>
#include <random>

#include <mograppa/grid.hpp>
#include <mograppa/mlp.hpp>

using namespace mograppa;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = n(rng);
  }
  return m;
}

// Squared error against a fixed target, 0.5 * ||Y - T||^2.
Mlp::LossFn squared_error(Eigen::MatrixXd const &T)
{
  return [T](Eigen::MatrixXd const &Y, Eigen::MatrixXd &dY) {
    dY = Y - T;
    return 0.5 * dY.squaredNorm();
  };
}

} // namespace

TEST_CASE("backprop matches central differences at three random points")
{
  Mlp net(7, {16, 16, 16}, 5, 11);
  auto const X = random_matrix(7, 9, 1);
  auto const T = random_matrix(5, 9, 2);
  auto const loss = squared_error(T);
  for (std::uint64_t point = 0; point < 3; ++point) {
    net.params() = 0.5 * random_matrix(net.n_params(), 1, 100 + point).col(0);
    Eigen::VectorXd grad;
    net.value_and_gradient(X, loss, grad);
    Eigen::VectorXd fd(net.n_params());
    double const h = 1e-5;
    for (Eigen::Index i = 0; i < net.n_params(); ++i) {
      Mlp probe = net;
      Eigen::VectorXd g;
      probe.params()[i] += h;
      double const up = probe.value_and_gradient(X, loss, g);
      probe.params()[i] -= 2.0 * h;
      double const down = probe.value_and_gradient(X, loss, g);
      fd[i] = (up - down) / (2.0 * h);
    }
    double const rel = (grad - fd).norm() / fd.norm();
    MESSAGE("point " << point << " relative gradient error " << rel);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("forward shape, determinism and single precision")
{
  Mlp const a(4, {8, 8}, 3, 5);
  Mlp const b(4, {8, 8}, 3, 5);
  Mlp const c(4, {8, 8}, 3, 6);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
  CHECK(a.n_params() == 8 * 4 + 8 + 8 * 8 + 8 + 3 * 8 + 3);
  auto const X = random_matrix(4, 6, 3);
  auto const Y = a.forward(X);
  CHECK(Y.rows() == 3);
  CHECK(Y.cols() == 6);
  CHECK(Y == a.forward(X));
  // Same column alone gives the same output.
  CHECK((a.forward(X.col(2)).col(0) - Y.col(2)).norm() < 1e-12);

  Mlp s = a;
  s.set_precision(Mlp::Precision::Single);
  CHECK((s.forward(X) - Y).norm() / Y.norm() < 1e-5);

  Mlp const rebuilt(a.widths(), a.params());
  CHECK(rebuilt.forward(X) == Y);
  CHECK_THROWS_AS(Mlp(a.widths(), Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("activations")
{
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(-800.0)));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
}

TEST_CASE("adam with cosine schedule fits a small regression, reproducibly")
{
  auto const X = random_matrix(3, 64, 8);
  Eigen::MatrixXd T(2, 64);
  for (Eigen::Index j = 0; j < 64; ++j) {
    T(0, j) = std::sin(X(0, j)) + 0.5 * X(1, j);
    T(1, j) = X(2, j) * X(0, j);
  }
  auto run = [&] {
    Mlp net(3, {32, 32}, 2, 4);
    Adam opt(net.n_params(), {});
    Eigen::VectorXd grad;
    auto const loss = squared_error(T);
    double const first = net.value_and_gradient(X, loss, grad);
    long const steps = 1500;
    for (long s = 0; s < steps; ++s) {
      net.value_and_gradient(X, loss, grad);
      opt.step(net.params(), grad, cosine_lr(1e-2, s, steps));
    }
    double const last = net.value_and_gradient(X, loss, grad);
    return std::make_pair(last / first, net.params());
  };
  auto const [ratio, p1] = run();
  MESSAGE("loss ratio " << ratio);
  CHECK(ratio < 0.05);
  CHECK(run().second == p1);

  CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0));
}
