#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mograppa {

using cd = std::complex<double>;

/// Row-major 2D complex image or k-space grid, indexed (row = y, col = x).
using ComplexGrid = Eigen::Array<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealGrid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic>;

/// All library failures are reported as this exception type.
class Error : public std::runtime_error
{
public:
  explicit Error(std::string const &what)
    : std::runtime_error(what)
  {
  }
};

/// Normalized spatial coordinate of pixel p on an axis of n pixels: (p - n/2) / n.
inline double norm_coord(Eigen::Index p, Eigen::Index n)
{
  return static_cast<double>(p - n / 2) / static_cast<double>(n);
}

/// Centered k-space coordinate (cycles/FOV) of grid index q on an axis of n samples.
inline double k_coord(Eigen::Index q, Eigen::Index n)
{
  return static_cast<double>(q - n / 2);
}

inline bool all_finite(ComplexGrid const &g)
{
  return g.real().allFinite() && g.imag().allFinite();
}

/// k-space location in cycles/FOV.
struct KPoint
{
  double kx = 0.0;
  double ky = 0.0;
};

} // namespace mograppa
