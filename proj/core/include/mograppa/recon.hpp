#pragma once

#include <span>
#include <string>
#include <vector>

#include "acquisition.hpp"
#include "grid.hpp"
#include "scene.hpp"

namespace mograppa {

struct CgOptions
{
  double tol = 1e-6;
  int maxit = 40;
  bool fixed_iterations = false; // always run maxit iterations (equal work for timing runs)
};

struct ReconResult
{
  std::string method;
  std::vector<ComplexGrid> images; // one per echo
  std::vector<std::vector<double>> residuals;
  int iterations = 0; // largest per-echo iteration count
  double wall_time_s = 0.0;
  double prep_time_s = 0.0;  // k-space preparation (regridding, cleaning)
  double solve_time_s = 0.0;
  double train_time_s = 0.0; // kernel training done inside the call, excluded from wall time
  std::size_t fallback_targets = 0;
  std::size_t dropped_targets = 0;
};

/// One motion state of the aligned forward model and the k-space cells it owns.
struct StateBlock
{
  MotionState state;
  Mask mask;
  MultiCoilKspace const *data = nullptr; // samples for this block; only cells in `mask` are read
};

/// E m = [ M_b F S_c P_b(te) T_b m ]_{b, c}, the aligned-SENSE forward model for one echo.
/// With a single identity block and zero field this is the standard SENSE operator.
class MotionSenseOperator
{
public:
  MotionSenseOperator(std::span<ComplexGrid const> coils, std::span<StateBlock const> blocks, double te,
                      double fov_mm);

  /// Output ordering: block-major, then coil.
  std::vector<ComplexGrid> forward(ComplexGrid const &m) const;
  ComplexGrid adjoint(std::span<ComplexGrid const> y) const;
  ComplexGrid normal(ComplexGrid const &m) const;
  /// E^H applied to the blocks' own data at `echo`.
  ComplexGrid rhs(int echo) const;

  Eigen::Index ny() const { return ny_; }
  Eigen::Index nx() const { return nx_; }
  std::size_t n_blocks() const { return blocks_.size(); }

private:
  struct Prepared
  {
    PoseOperator pose;
    ComplexGrid phase; // empty when the field term is identity
    Mask mask;
    MultiCoilKspace const *data;
  };
  std::vector<ComplexGrid> coils_;
  std::vector<Prepared> blocks_;
  Eigen::Index ny_;
  Eigen::Index nx_;
};

/// Standard CG-SENSE on the normal equations, per echo.
ReconResult cg_sense(MultiCoilKspace const &y, std::span<ComplexGrid const> coils, Mask const &mask,
                     CgOptions const &opts = {});

/// Aligned-SENSE over explicit state blocks (used directly by clustered cleaning).
ReconResult aligned_sense_blocks(std::span<StateBlock const> blocks, std::span<ComplexGrid const> coils,
                                 std::span<double const> tes, double fov_mm, CgOptions const &opts = {});

/// Gold-standard aligned reconstruction; shots sharing a state are merged into one block.
ReconResult aligned_sense(MultiCoilKspace const &y, std::span<ComplexGrid const> coils,
                          MotionTimeline const &timeline, SamplingPlan const &plan, CgOptions const &opts = {});

/// Groups shots by identical state; block masks cover each group's lines.
std::vector<StateBlock> blocks_from_timeline(MultiCoilKspace const &y, MotionTimeline const &timeline,
                                             SamplingPlan const &plan);

/// Approximate augmented SENSE: translation phase removed, rotated lines regridded
/// bilinearly onto a 2x oversampled Cartesian grid, then standard SENSE on that grid with
/// zero-padded coil maps, cropped back to the plan grid. Coil and field changes are ignored.
ReconResult augmented_sense_approx(MultiCoilKspace const &y, std::span<ComplexGrid const> coils,
                                   MotionTimeline const &timeline, SamplingPlan const &plan,
                                   CgOptions const &opts = {});

/// The regridded k-space augmented_sense_approx feeds to SENSE, on a grid `oversampling`
/// times finer (a field of view that many times larger). Cells whose accumulated bilinear
/// weight is below `min_weight` are left unsampled.
MultiCoilKspace regrid_rotated(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                               double min_weight = 0.5, int oversampling = 2);

/// Window-mean of poses and field coefficients.
MotionTimeline downsample_timeline(MotionTimeline const &timeline, int window);

/// Timeline with every field coefficient zeroed (motion-only aligned reconstruction).
MotionTimeline motion_only(MotionTimeline const &timeline);

} // namespace mograppa
