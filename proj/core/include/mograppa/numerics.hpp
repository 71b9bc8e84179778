#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "grid.hpp"

namespace mograppa {

enum class FftDirection
{
  Forward,
  Inverse
};

/// Centered (DC at grid center), unitary 2D DFT.
ComplexGrid fft2c(ComplexGrid const &img, FftDirection direction = FftDirection::Forward);
inline ComplexGrid ifft2c(ComplexGrid const &ksp) { return fft2c(ksp, FftDirection::Inverse); }

/// Exact non-uniform DFT of `img` at arbitrary k-space points, using the same
/// coordinate and normalization convention as fft2c. Points must lie within the
/// grid's Nyquist band.
std::vector<cd> nudft_sample(ComplexGrid const &img, std::span<KPoint const> points);

/// Batched variant: one set of points, many images of identical size. Returns
/// result[image][point].
std::vector<std::vector<cd>> nudft_sample_many(std::span<ComplexGrid const> imgs, std::span<KPoint const> points);

/// argmin ||Ax - b||^2 + lambda ||x||^2 through the regularized normal equations.
CVector solve_regularized_lsq(CMatrix const &A, CVector const &b, double lambda);

/// Same normal matrix, several right-hand sides (columns of B).
CMatrix solve_regularized_lsq(CMatrix const &A, CMatrix const &B, double lambda);

using LinearOp = std::function<void(CVector const &in, CVector &out)>;

struct CgResult
{
  CVector x;
  std::vector<double> residuals; // relative 2-norm residual, entry 0 is the initial residual
  int iterations = 0;
};

/// Conjugate gradients for a Hermitian positive semi-definite operator, zero start.
/// Stops when ||Ax - b|| / ||b|| <= tol or after maxit iterations; with `fixed` the tolerance
/// test is skipped and exactly maxit iterations run (unless a null direction is reached).
/// Throws Error if the residual grows for 5 consecutive iterations (above the round-off
/// floor of 1e-12) and ends more than twice the best residual seen.
CgResult cg_hermitian(LinearOp const &apply, CVector const &b, double tol, int maxit, bool fixed = false);

/// Worker count: MOGRAPPA_THREADS if set, otherwise hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) across thread_count() workers with static chunking.
/// fn must only write state owned by index i.
void parallel_for(std::size_t n, std::function<void(std::size_t)> const &fn);

} // namespace mograppa
