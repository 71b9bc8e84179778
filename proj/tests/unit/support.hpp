#pragma once

#include <complex>
#include <random>

#include <mograppa/grid.hpp>

namespace testing {

using mograppa::cd;
using mograppa::ComplexGrid;

inline ComplexGrid random_grid(Eigen::Index ny, Eigen::Index nx, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexGrid g(ny, nx);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.data()[i] = cd(n(rng), n(rng));
  }
  return g;
}

inline mograppa::CVector random_vector(Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  mograppa::CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    v[i] = cd(d(rng), d(rng));
  }
  return v;
}

/// <a, b> with conjugation on a.
inline cd inner(ComplexGrid const &a, ComplexGrid const &b)
{
  return (a.conjugate() * b).sum();
}

inline double norm(ComplexGrid const &a)
{
  return std::sqrt(a.abs2().sum());
}

inline double rel_diff(ComplexGrid const &a, ComplexGrid const &b)
{
  return norm(a - b) / std::max(norm(b), 1e-300);
}

} // namespace testing
