#include <doctest.h>

#include <cmath>
#include <random>

#include <mograppa/numerics.hpp>

#include "support.hpp"

using namespace mograppa;
using testing::norm;
using testing::random_grid;
using testing::rel_diff;

TEST_CASE("fft2c of a centered impulse is flat")
{
  ComplexGrid img = ComplexGrid::Zero(8, 8);
  img(4, 4) = 1.0;
  auto const k = fft2c(img);
  for (Eigen::Index i = 0; i < k.size(); ++i) {
    CHECK(std::abs(k.data()[i] - cd(0.125, 0.0)) < 1e-15);
  }
}

TEST_CASE("fft2c round trip and Parseval across sizes")
{
  for (Eigen::Index n : {8, 16, 32, 64, 128}) {
    auto const x = random_grid(n, n, 10 + static_cast<std::uint64_t>(n));
    auto const k = fft2c(x);
    CHECK(rel_diff(ifft2c(k), x) < 1e-12);
    CHECK(std::abs(norm(k) - norm(x)) / norm(x) < 1e-12);
  }
  auto const x = random_grid(16, 24, 3);
  CHECK(rel_diff(ifft2c(fft2c(x)), x) < 1e-12);
}

TEST_CASE("fft2c rejects non-finite input and tiny grids")
{
  auto x = random_grid(8, 8, 1);
  x(2, 3) = cd(std::nan(""), 0.0);
  CHECK_THROWS_AS(fft2c(x), Error);
  CHECK_THROWS_AS(fft2c(ComplexGrid::Zero(1, 8)), Error);
}

TEST_CASE("nudft on integer points matches fft2c")
{
  for (Eigen::Index n : {8, 16, 32}) {
    auto const x = random_grid(n, n + 8, 7);
    std::vector<KPoint> pts;
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n + 8; ++c) {
        pts.push_back({k_coord(c, n + 8), k_coord(r, n)});
      }
    }
    auto const s = nudft_sample(x, pts);
    auto const k = fft2c(x);
    double worst = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      worst = std::max(worst, std::abs(s[i] - k.data()[i]));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("nudft of a delta has constant magnitude; of a constant only DC")
{
  ComplexGrid d = ComplexGrid::Zero(16, 16);
  d(3, 11) = 1.0;
  std::vector<KPoint> pts{{0.3, -2.7}, {7.9, 1.1}, {-8.0, 8.0}, {0.0, 0.0}};
  for (auto const &v : nudft_sample(d, pts)) {
    CHECK(std::abs(std::abs(v) - 1.0 / 16.0) < 1e-14);
  }
  ComplexGrid const c = ComplexGrid::Constant(16, 16, cd(2.0, -1.0));
  std::vector<KPoint> grid_pts{{0, 0}, {1, 0}, {0, -3}, {5, 7}};
  auto const s = nudft_sample(c, grid_pts);
  CHECK(std::abs(s[0]) > 1.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    CHECK(std::abs(s[i]) < 1e-12);
  }
}

TEST_CASE("nudft rejects points beyond Nyquist")
{
  std::vector<KPoint> pts{{8.5, 0.0}};
  CHECK_THROWS_AS(nudft_sample(random_grid(16, 16, 2), pts), Error);
}

TEST_CASE("nudft shift and rotation theorems")
{
  // Circular shift by whole pixels is an exact phase ramp at integer k.
  auto const x = random_grid(16, 16, 4);
  ComplexGrid shifted = ComplexGrid::Zero(16, 16);
  for (Eigen::Index r = 0; r < 16; ++r) {
    for (Eigen::Index c = 0; c < 16; ++c) {
      shifted(r, c) = x((r + 16 - 3) % 16, (c + 16 - 2) % 16);
    }
  }
  std::vector<KPoint> ipts{{1, -2}, {-4, 5}, {7, 0}, {3, 3}};
  auto const ai = nudft_sample(x, ipts);
  auto const bi = nudft_sample(shifted, ipts);
  for (std::size_t i = 0; i < ipts.size(); ++i) {
    double const ph = -2.0 * std::numbers::pi * (ipts[i].kx * 2.0 / 16.0 + ipts[i].ky * 3.0 / 16.0);
    CHECK(std::abs(bi[i] - ai[i] * std::polar(1.0, ph)) < 1e-10);
  }

  // 90 degree rotation of the pixel lattice maps k to the rotated k exactly.
  ComplexGrid rot = ComplexGrid::Zero(16, 16);
  for (Eigen::Index r = 1; r < 16; ++r) {
    for (Eigen::Index c = 1; c < 16; ++c) {
      // x' = -y, y' = x in normalized coordinates centered at n/2
      Eigen::Index const xr = 16 - r; // column of -y
      Eigen::Index const yr = c;      // row of x
      rot(yr, xr) = x(r, c);
    }
  }
  ComplexGrid x_trim = x;
  x_trim.row(0).setZero();
  x_trim.col(0).setZero();
  std::vector<KPoint> rp{{0.7, -1.9}, {3.2, 2.5}, {-6.1, 4.4}};
  std::vector<KPoint> rq;
  for (auto const &k : rp) {
    rq.push_back({k.ky, -k.kx}); // R^T k for +90 degrees
  }
  auto const sr = nudft_sample(rot, rp);
  auto const so = nudft_sample(x_trim, rq);
  for (std::size_t i = 0; i < rp.size(); ++i) {
    CHECK(std::abs(sr[i] - so[i]) < 1e-10);
  }
}

TEST_CASE("regularized least squares")
{
  CMatrix const I = CMatrix::Identity(5, 5);
  auto const b = testing::random_vector(5, 1);
  CHECK((solve_regularized_lsq(I, b, 0.0) - b).norm() < 1e-14);

  CMatrix A(20, 8);
  for (Eigen::Index c = 0; c < 8; ++c) {
    A.col(c) = testing::random_vector(20, 100 + static_cast<std::uint64_t>(c));
  }
  auto const xs = testing::random_vector(8, 5);
  CVector const y = A * xs;
  CHECK((solve_regularized_lsq(A, y, 0.0) - xs).norm() < 1e-8);

  double prev = 1e300;
  for (double lambda : {0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6}) {
    double const n = solve_regularized_lsq(A, y, lambda).norm();
    CHECK(std::isfinite(n));
    CHECK(n <= prev + 1e-12);
    prev = n;
  }

  CMatrix S = A;
  S.col(3) = S.col(2);
  CHECK_THROWS_AS(solve_regularized_lsq(S, y, 0.0), Error);
  CHECK(solve_regularized_lsq(S, y, 1e-3).allFinite());
  CHECK_THROWS_AS(solve_regularized_lsq(A, y, -1.0), Error);
}

TEST_CASE("conjugate gradients")
{
  int const n = 12;
  LinearOp diag = [](CVector const &in, CVector &out) {
    out.resize(in.size());
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      out[i] = static_cast<double>(i + 1) * in[i];
    }
  };
  auto const b = testing::random_vector(n, 9);
  auto const r = cg_hermitian(diag, b, 1e-12, n);
  CVector expect(n);
  for (int i = 0; i < n; ++i) {
    expect[i] = b[i] / static_cast<double>(i + 1);
  }
  CHECK((r.x - expect).norm() / expect.norm() < 1e-10);
  CHECK(r.iterations <= n);
  CHECK(r.residuals.back() <= 1e-12);

  auto const z = cg_hermitian(diag, CVector::Zero(n), 1e-8, 10);
  CHECK(z.iterations == 0);
  CHECK(z.x.norm() == 0.0);

  // A-norm of the error never increases.
  double prev = 1e300;
  for (int k = 1; k <= n; ++k) {
    auto const part = cg_hermitian(diag, b, 1e-300, k, true);
    CVector const e = part.x - expect;
    CVector Ae;
    diag(e, Ae);
    double const anorm = std::sqrt(e.dot(Ae).real());
    CHECK(anorm <= prev * (1.0 + 1e-12) + 1e-14);
    prev = anorm;
  }

  CHECK_THROWS_AS(cg_hermitian(diag, b, 0.0, 5), Error);

  // Fixed mode runs every iteration even after convergence (stopped by a null direction only).
  LinearOp ident = [](CVector const &in, CVector &out) { out = 2.0 * in; };
  auto const f = cg_hermitian(ident, b, 1e-6, 5, true);
  CHECK(f.iterations >= 1);
}

TEST_CASE("conjugate gradients reports divergence")
{
  // Strongly non-Hermitian operator with a positive Hermitian part, so p.Ap stays positive
  // while the residual grows.
  int const n = 40;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd S(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      S(i, j) = nd(rng);
    }
  }
  CMatrix const K = (5.0 * (S - S.transpose())).cast<cd>();
  LinearOp broken = [&](CVector const &in, CVector &out) {
    out = K * in;
    for (int i = 0; i < n; ++i) {
      out[i] += 0.1 * (i + 1) * in[i];
    }
  };
  auto const b = testing::random_vector(40, 3);
  std::string what;
  try {
    (void)cg_hermitian(broken, b, 1e-12, 40);
  } catch (Error const &e) {
    what = e.what();
  }
  CHECK(what.find("iteration") != std::string::npos);
}

TEST_CASE("parallel_for visits every index once")
{
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) {
    CHECK(h == 1);
  }
  CHECK(thread_count() >= 1);
}
