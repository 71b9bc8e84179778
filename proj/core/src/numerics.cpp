#include "mograppa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <numbers>
#include <thread>
#include <tuple>

#include <Eigen/Cholesky>
#include <fftw3.h>
#include <fmt/format.h>

namespace mograppa {

namespace {

struct PlanCache
{
  std::mutex lock;
  std::map<std::tuple<Eigen::Index, Eigen::Index, int>, fftw_plan> plans;

  ~PlanCache()
  {
    for (auto &[key, plan] : plans) {
      fftw_destroy_plan(plan);
    }
  }

  fftw_plan get(Eigen::Index ny, Eigen::Index nx, int sign)
  {
    std::lock_guard guard(lock);
    auto const key = std::make_tuple(ny, nx, sign);
    if (auto it = plans.find(key); it != plans.end()) {
      return it->second;
    }
    ComplexGrid a(ny, nx), b(ny, nx);
    auto *in = reinterpret_cast<fftw_complex *>(a.data());
    auto *out = reinterpret_cast<fftw_complex *>(b.data());
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(ny), static_cast<int>(nx), in, out, sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans.emplace(key, plan);
    return plan;
  }
};

PlanCache &plan_cache()
{
  static PlanCache cache;
  return cache;
}

} // namespace

ComplexGrid fft2c(ComplexGrid const &img, FftDirection direction)
{
  Eigen::Index const ny = img.rows();
  Eigen::Index const nx = img.cols();
  if (ny < 2 || nx < 2) {
    throw Error(fmt::format("fft2c: grid must be at least 2x2, got {}x{}", ny, nx));
  }
  if (!all_finite(img)) {
    throw Error("fft2c: input contains non-finite values");
  }
  Eigen::Index const cy = ny / 2;
  Eigen::Index const cx = nx / 2;

  // ifftshift: the centered origin moves to index 0
  ComplexGrid shifted(ny, nx);
  for (Eigen::Index y = 0; y < ny; ++y) {
    Eigen::Index const sy = (y + cy) % ny;
    for (Eigen::Index x = 0; x < nx; ++x) {
      shifted(y, x) = img(sy, (x + cx) % nx);
    }
  }
  ComplexGrid transformed(ny, nx);
  int const sign = direction == FftDirection::Forward ? FFTW_FORWARD : FFTW_BACKWARD;
  fftw_execute_dft(plan_cache().get(ny, nx, sign), reinterpret_cast<fftw_complex *>(shifted.data()),
                   reinterpret_cast<fftw_complex *>(transformed.data()));

  double const scale = 1.0 / std::sqrt(static_cast<double>(ny * nx));
  ComplexGrid out(ny, nx);
  for (Eigen::Index y = 0; y < ny; ++y) {
    Eigen::Index const dy = (y + cy) % ny;
    for (Eigen::Index x = 0; x < nx; ++x) {
      out(dy, (x + cx) % nx) = transformed(y, x) * scale;
    }
  }
  return out;
}

std::vector<std::vector<cd>> nudft_sample_many(std::span<ComplexGrid const> imgs, std::span<KPoint const> points)
{
  std::vector<std::vector<cd>> result(imgs.size());
  if (imgs.empty()) {
    return result;
  }
  Eigen::Index const ny = imgs[0].rows();
  Eigen::Index const nx = imgs[0].cols();
  for (auto const &img : imgs) {
    if (img.rows() != ny || img.cols() != nx) {
      throw Error("nudft_sample: all images must share one grid size");
    }
    if (!all_finite(img)) {
      throw Error("nudft_sample: input contains non-finite values");
    }
  }
  double const bx = static_cast<double>(nx) / 2.0 + 1e-9;
  double const by = static_cast<double>(ny) / 2.0 + 1e-9;
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (!(std::abs(points[j].kx) <= bx && std::abs(points[j].ky) <= by)) {
      throw Error(fmt::format("nudft_sample: point {} at ({}, {}) lies outside the {}x{} band", j,
                              points[j].kx, points[j].ky, ny, nx));
    }
  }
  for (auto &r : result) {
    r.resize(points.size());
  }

  double const scale = 1.0 / std::sqrt(static_cast<double>(ny * nx));
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Eigen::Index const n_img = static_cast<Eigen::Index>(imgs.size());

  // Stack images vertically so one product covers every image: (n_img*ny) x nx.
  CMatrix stacked(n_img * ny, nx);
  for (Eigen::Index i = 0; i < n_img; ++i) {
    stacked.middleRows(i * ny, ny) = imgs[static_cast<std::size_t>(i)].matrix();
  }

  std::size_t constexpr chunk = 2048;
  for (std::size_t start = 0; start < points.size(); start += chunk) {
    std::size_t const count = std::min(chunk, points.size() - start);
    CMatrix ex(nx, static_cast<Eigen::Index>(count));
    CMatrix ey(ny, static_cast<Eigen::Index>(count));
    for (std::size_t j = 0; j < count; ++j) {
      auto const &p = points[start + j];
      for (Eigen::Index x = 0; x < nx; ++x) {
        ex(x, static_cast<Eigen::Index>(j)) = std::polar(1.0, -two_pi * p.kx * norm_coord(x, nx));
      }
      for (Eigen::Index y = 0; y < ny; ++y) {
        ey(y, static_cast<Eigen::Index>(j)) = std::polar(scale, -two_pi * p.ky * norm_coord(y, ny));
      }
    }
    CMatrix const partial = stacked * ex; // (n_img*ny) x count
    for (Eigen::Index i = 0; i < n_img; ++i) {
      auto const block = partial.middleRows(i * ny, ny);
      auto &out = result[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < count; ++j) {
        auto const col = static_cast<Eigen::Index>(j);
        out[start + j] = (block.col(col).array() * ey.col(col).array()).sum();
      }
    }
  }
  return result;
}

std::vector<cd> nudft_sample(ComplexGrid const &img, std::span<KPoint const> points)
{
  auto many = nudft_sample_many(std::span<ComplexGrid const>(&img, 1), points);
  return std::move(many[0]);
}

CMatrix solve_regularized_lsq(CMatrix const &A, CMatrix const &B, double lambda)
{
  if (A.rows() < 1) {
    throw Error("solve_regularized_lsq: system has no rows");
  }
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw Error(fmt::format("solve_regularized_lsq: lambda must be finite and >= 0, got {}", lambda));
  }
  if (B.rows() != A.rows()) {
    throw Error("solve_regularized_lsq: right-hand side length does not match A");
  }
  CMatrix normal = A.adjoint() * A;
  normal.diagonal().array() += lambda;
  CMatrix const rhs = A.adjoint() * B;

  Eigen::LDLT<CMatrix> ldlt(normal);
  if (lambda == 0.0) {
    auto const d = ldlt.vectorD().cwiseAbs();
    double const dmax = d.maxCoeff();
    double const dmin = d.minCoeff();
    double const eps = 1e-12 * static_cast<double>(normal.rows());
    if (ldlt.info() != Eigen::Success || dmax == 0.0 || dmin <= eps * dmax) {
      throw Error(fmt::format("solve_regularized_lsq: normal matrix is rank deficient ({} unknowns, {} rows) "
                              "and lambda = 0",
                              A.cols(), A.rows()));
    }
  }
  return ldlt.solve(rhs);
}

CVector solve_regularized_lsq(CMatrix const &A, CVector const &b, double lambda)
{
  return solve_regularized_lsq(A, CMatrix(b), lambda).col(0);
}

CgResult cg_hermitian(LinearOp const &apply, CVector const &b, double tol, int maxit, bool fixed)
{
  if (!(tol > 0.0)) {
    throw Error("cg_hermitian: tol must be positive");
  }
  CgResult result;
  result.x = CVector::Zero(b.size());
  double const bnorm = b.norm();
  if (bnorm == 0.0) {
    result.residuals.push_back(0.0);
    return result;
  }
  CVector r = b;
  CVector p = r;
  CVector q(b.size());
  double rr = r.squaredNorm();
  result.residuals.push_back(1.0);
  int growth = 0;
  double best = 1.0;
  for (int it = 0; it < maxit; ++it) {
    apply(p, q);
    double const pq = p.dot(q).real();
    if (!(pq > 0.0)) {
      break; // null direction: the solution has been reached within the range of the operator
    }
    double const alpha = rr / pq;
    result.x += alpha * p;
    r -= alpha * q;
    double const rr_new = r.squaredNorm();
    double const rel = std::sqrt(rr_new) / bnorm;
    result.iterations = it + 1;
    growth = rel > result.residuals.back() && rel > 1e-12 ? growth + 1 : 0;
    best = std::min(best, rel);
    result.residuals.push_back(rel);
    // 2-norm residuals of CG wobble on plateaus; only growth well above the best counts
    if (growth >= 5 && rel > 2.0 * best) {
      std::string tail;
      for (std::size_t k = result.residuals.size() - std::min<std::size_t>(7, result.residuals.size());
           k < result.residuals.size(); ++k) {
        tail += fmt::format(" {:.3g}", result.residuals[k]);
      }
      throw Error(
        fmt::format("cg_hermitian: residual grew for 5 consecutive iterations (iteration {}; last:{})", it + 1, tail));
    }
    if (!fixed && rel <= tol) {
      break;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return result;
}

int thread_count()
{
  static int const count = [] {
    if (char const *env = std::getenv("MOGRAPPA_THREADS")) {
      int const n = std::atoi(env);
      if (n >= 1) {
        return n;
      }
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }();
  return count;
}

void parallel_for(std::size_t n, std::function<void(std::size_t)> const &fn)
{
  std::size_t const workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  std::size_t const per = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t const begin = w * per;
    std::size_t const end = std::min(n, begin + per);
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) {
        fn(i);
      }
    });
  }
}

} // namespace mograppa
