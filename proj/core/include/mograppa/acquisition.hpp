#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grid.hpp"
#include "scene.hpp"

namespace mograppa {

struct SamplingPlan
{
  Eigen::Index ny = 0;
  Eigen::Index nx = 0;
  int R = 1;
  int acs = 0;     // half-width of the fully sampled central block, in lines
  int n_shots = 1;
  std::vector<int> shot_of_line; // per row; -1 when the line is skipped
  std::vector<double> tes;       // echo times, seconds

  Mask mask() const;
  std::vector<Eigen::Index> sampled_lines() const; // ascending
  std::vector<Eigen::Index> lines_of_shot(int shot) const;
  std::size_t n_echoes() const { return tes.size(); }
};

SamplingPlan make_sampling_plan(Eigen::Index ny, Eigen::Index nx, int R, int acs, int n_shots, std::vector<double> tes);

/// coils x echoes x ny x nx samples plus their sampling mask and per-line shot labels.
struct MultiCoilKspace
{
  int n_coils = 0;
  int n_echoes = 0;
  std::vector<ComplexGrid> data; // index echo * n_coils + coil
  Mask mask;
  std::vector<int> line_shot; // per row, -1 when unsampled

  MultiCoilKspace() = default;
  MultiCoilKspace(int coils, int echoes, Eigen::Index ny, Eigen::Index nx);

  Eigen::Index ny() const { return mask.rows(); }
  Eigen::Index nx() const { return mask.cols(); }
  ComplexGrid &at(int coil, int echo) { return data[static_cast<std::size_t>(echo * n_coils + coil)]; }
  ComplexGrid const &at(int coil, int echo) const { return data[static_cast<std::size_t>(echo * n_coils + coil)]; }
  /// All coils of one echo.
  std::vector<ComplexGrid> echo(int e) const;
  MultiCoilKspace scaled(cd a) const;
};

struct AcquisitionOptions
{
  double noise_sigma = 0.0; // additive complex Gaussian, per real component
  std::uint64_t noise_seed = 0;
};

/// Coil- and field-weighted object as seen in the reference frame for one state:
/// g_c(u) = S_c(R u + d) exp(i 2 pi b(R u + d) te) m(u), evaluated on the object's grid.
/// Coil maps are looked up bilinearly on their own grid, which may differ from the object's.
std::vector<ComplexGrid> moved_weighted_images(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                               MotionState const &state, double te, double fov_mm);

/// Samples of the moved state at nominal scanner-frame locations; sample j is
/// exp(-i 2 pi k_j.d) * DTFT[g_c](R^T k_j). Rotated locations outside the band read zero.
std::vector<std::vector<cd>> sample_moved(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                          MotionState const &state, double te, double fov_mm,
                                          std::span<KPoint const> nominal);

/// The corruption simulator.
MultiCoilKspace simulate_acquisition(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                     MotionTimeline const &timeline, SamplingPlan const &plan,
                                     AcquisitionOptions const &options = {});

/// Fully sampled central calib_size x calib_size block at the reference pose, zero field, TE = tes[0].
MultiCoilKspace acquire_calibration(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                    SamplingPlan const &plan, int calib_size);

struct CoilEstimate
{
  std::vector<ComplexGrid> maps;
  Mask support;
  RealGrid rss; // root-sum-of-squares of the low-resolution coil images
};

/// Coil maps from fully sampled calibration data: zero-padded inverse FFT divided by rSoS.
CoilEstimate estimate_coil_maps(MultiCoilKspace const &calib, double threshold = 0.05);

/// Maps extended beyond their support by a weighted least-squares fit of 2D polynomials
/// of total degree `degree`, fitted on the support pixels and renormalized to unit rSoS.
/// Moving anatomy visits pixels outside the reference support, where zeroed maps would
/// hide it from any motion-aware forward model.
std::vector<ComplexGrid> extrapolate_coil_maps(CoilEstimate const &est, int degree = 6);

/// Centered square block mask.
Mask centered_block(Eigen::Index ny, Eigen::Index nx, int size);

} // namespace mograppa
