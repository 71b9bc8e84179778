#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grid.hpp"

namespace mograppa {

/// In-plane rigid pose of the subject relative to the reference position.
struct Pose
{
  double theta_deg = 0.0; // rotation about the grid center
  double dx_mm = 0.0;
  double dy_mm = 0.0;

  bool operator==(Pose const &) const = default;
  bool is_identity() const { return theta_deg == 0.0 && dx_mm == 0.0 && dy_mm == 0.0; }
};

/// Second-order 2D field expansion in Hz over {1, x, y, x^2, xy, y^2}, normalized coordinates.
struct FieldCoeffs
{
  std::array<double, 6> c{};

  bool operator==(FieldCoeffs const &) const = default;
  bool is_zero() const
  {
    for (double v : c) {
      if (v != 0.0) {
        return false;
      }
    }
    return true;
  }
  double at(double x, double y) const { return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y; }
};

struct MotionState
{
  Pose pose;
  FieldCoeffs field;

  bool operator==(MotionState const &) const = default;
};

struct MotionTimeline
{
  std::vector<MotionState> entries; // one per shot, indexed by shot id
  double shot_duration_s = 0.4;
  double fov_mm = 256.0;

  std::size_t size() const { return entries.size(); }
  /// Distinct states in first-occurrence order.
  std::vector<MotionState> distinct_states() const;
};

/// Rigid transform in normalized coordinates: x = R(theta) u + d.
struct RigidTransform
{
  double cos_t = 1.0;
  double sin_t = 0.0;
  double dx = 0.0; // normalized units (fraction of FOV)
  double dy = 0.0;

  static RigidTransform from_pose(Pose const &pose, double fov_mm);

  void apply(double ux, double uy, double &x, double &y) const
  {
    x = cos_t * ux - sin_t * uy + dx;
    y = sin_t * ux + cos_t * uy + dy;
  }
  void apply_inverse(double x, double y, double &ux, double &uy) const
  {
    double const tx = x - dx;
    double const ty = y - dy;
    ux = cos_t * tx + sin_t * ty;
    uy = -sin_t * tx + cos_t * ty;
  }
  /// R^T k: where a nominal k-space location samples the reference-frame spectrum.
  KPoint rotate_k_to_reference(KPoint const &k) const
  {
    return {cos_t * k.kx + sin_t * k.ky, -sin_t * k.kx + cos_t * k.ky};
  }
  /// Linear phase exp(-i 2 pi k.d) a translation imprints on sample k.
  cd translation_phase(KPoint const &k) const;
};

/// Relative pose taking the object at `reference` to the object at `moved`.
Pose relative_pose(Pose const &moved, Pose const &reference);

/// Ten-ellipse Shepp-Logan head phantom, original intensities scaled into [0, 1], zero phase.
ComplexGrid shepp_logan(Eigen::Index ny, Eigen::Index nx);

/// Gaussian low-pass (standard deviation in pixels) applied in k-space.
ComplexGrid smooth_gaussian(ComplexGrid const &img, double sigma_px);

/// Pixels inside the phantom's outer ellipse.
Mask shepp_logan_support(Eigen::Index ny, Eigen::Index nx);

/// Smooth complex coil sensitivities normalized to unit root-sum-of-squares.
std::vector<ComplexGrid> simulate_coils(int n_coils, Eigen::Index ny, Eigen::Index nx, Mask const &support);

/// Field map b(x, y) in Hz.
RealGrid eval_field(FieldCoeffs const &coeffs, Eigen::Index ny, Eigen::Index nx);

enum class PoseMode
{
  Forward,
  Adjoint
};

/// Bilinear resampling matrix of one rigid pose on a square grid. Forward maps the
/// reference-frame image to the moved frame; adjoint applies the exact transpose.
class PoseOperator
{
public:
  PoseOperator(Eigen::Index ny, Eigen::Index nx, Pose const &pose, double fov_mm);

  ComplexGrid apply(ComplexGrid const &img, PoseMode mode) const;
  bool identity() const { return identity_; }

private:
  struct Tap
  {
    std::int32_t index[4];
    double weight[4];
  };
  Eigen::Index ny_;
  Eigen::Index nx_;
  bool identity_;
  std::vector<Tap> taps_;
};

ComplexGrid apply_pose(ComplexGrid const &img, Pose const &pose, PoseMode mode, double fov_mm = 256.0);

/// Bilinear lookup at fractional pixel coordinates with edge clamping.
cd sample_bilinear(ComplexGrid const &grid, double py, double px);

enum class TimelineProfile
{
  Zero,
  Step,
  Walk,
  File,
  Discrete
};

struct StepJump
{
  int shot = 0;
  MotionState state;
};

struct TimelineSpec
{
  TimelineProfile profile = TimelineProfile::Zero;
  std::vector<StepJump> jumps; // step: state holds from `shot` onward
  double walk_step_deg = 0.5;
  double walk_bound_deg = 5.0;
  double walk_step_mm = 0.2;
  double walk_bound_mm = 3.0;
  double walk_field_step_hz = 1.0;
  double walk_field_bound_hz = 10.0;
  // discrete: n_states random states, state 0 the reference; each parameter is rescaled so
  // its largest magnitude over the states equals the bound. Shot s holds state s * n_states / n_shots.
  int n_states = 12;
  double rotation_deg = 12.0;
  double translation_mm = 2.0;
  double field_hz = 0.0;        // c0 bound
  double field_linear_hz = 0.0; // c1, c2 bound
  std::filesystem::path file;
  double fov_mm = 256.0;
  double shot_duration_s = 0.4;
};

MotionTimeline generate_timeline(int n_shots, TimelineSpec const &spec, std::uint64_t seed);

MotionTimeline parse_timeline(std::string const &text, double fov_mm = 256.0, std::string const &source = "<string>");
MotionTimeline read_timeline(std::filesystem::path const &path, double fov_mm = 256.0);
std::string format_timeline(MotionTimeline const &timeline);
void write_timeline(std::filesystem::path const &path, MotionTimeline const &timeline);

} // namespace mograppa
