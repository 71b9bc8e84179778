#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "acquisition.hpp"
#include "clustering.hpp"
#include "grid.hpp"
#include "mlp.hpp"
#include "recon.hpp"
#include "scene.hpp"

namespace mograppa {

struct KernelGeometry
{
  int n_src = 9;
  double search_radius = 2.5; // grid units; doubled once before declaring under-coverage
  int coils = 8;
};

/// Motion-and-field condition a kernel is specific to.
struct Condition
{
  Pose pose;
  FieldCoeffs field;
  double te = 0.0;
  bool operator==(Condition const &) const = default;
};

/// Per-parameter extent of the training conditions. Field bounds are in Hz; TE in seconds.
struct ConditionRange
{
  std::array<double, 3> pose_min{};
  std::array<double, 3> pose_max{};
  std::array<double, 6> field_min{};
  std::array<double, 6> field_max{};
  double te_min = 0.0;
  double te_max = 0.0;

  /// TE is not checked for zero-field conditions.
  bool contains(Condition const &c, double tol = 1e-9) const;
};

/// Divisors applied to the raw condition and target features.
struct FeatureNorms
{
  std::array<double, 3> pose{1.0, 1.0, 1.0};  // theta (deg), dx, dy (mm)
  std::array<double, 6> field{1, 1, 1, 1, 1, 1}; // field phase 2 pi c_i TE (rad)
  double kx = 1.0;
  double ky = 1.0;
  int octaves = 4;
  double pe_base = 0.39269908169872414; // pi / 8 rad per grid unit for the lowest octave
};

struct TrainingHyper
{
  std::vector<int> hidden{128, 128, 128};
  int batch = 512;
  int epochs = 30;
  double lr = 1e-3;
  bool single_precision = true; // network arithmetic; parameters stay double
};

/// One (condition, source pattern, target) training example; values divided by the signal scale.
struct TrainSample
{
  std::vector<double> features;
  CVector src; // n_src * C, source-major
  CVector tgt; // C
};

struct KernelFamily
{
  Mlp mlp;
  FeatureNorms norms;
  KernelGeometry geom;
  ConditionRange range;
  TrainingHyper hyper;
  double signal_scale = 1.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double train_time_s = 0.0;
  std::uint64_t seed = 0;

  int kernel_width() const { return geom.n_src * geom.coils; }
  /// One C x (n_src C) complex kernel per column of `features`.
  std::vector<CMatrix> kernels(Eigen::MatrixXd const &features) const;
};

int feature_length(KernelGeometry const &geom, int octaves = 4);

/// Condition, target and positional-encoding features:
/// [theta, dx, dy]/norms, [2 pi c_i TE]/norms, [kx, ky]/norms, then for each source
/// offset and octave l: sin/cos(pe_base 2^l o_x), sin/cos(pe_base 2^l o_y).
std::vector<double> build_features(Condition const &cond, std::span<KPoint const> offsets, KPoint target,
                                   FeatureNorms const &norms);

/// Norms mapping every condition in `range` into [-1, 1] while the reference stays at 0.
FeatureNorms norms_for_range(ConditionRange const &range, Eigen::Index ny, Eigen::Index nx);

struct SourceSelection
{
  std::vector<std::size_t> index; // into the candidate list
  std::vector<KPoint> offsets;    // candidate - target, grid units
  bool widened = false;           // radius doubling was needed
};

/// The n_src candidates nearest the target (ties: lower nominal ky, then lower kx), returned in
/// nominal (ky, kx) order. Candidates are reference-frame coordinates with the nominal coordinate
/// used only for ordering. Throws Error when fewer than n_src lie within twice the radius.
SourceSelection select_sources(KPoint target, std::span<KPoint const> coords, std::span<KPoint const> nominal,
                               KernelGeometry const &geom);

/// A gridding target of one shot: the reference-frame cell and the shot samples feeding it.
struct GriddingTarget
{
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  std::vector<std::size_t> sources; // indices into the shot's sample list
  std::vector<KPoint> offsets;
  bool fallback = false; // under-covered; filled from the nearest sample
  bool widened = false;
};

struct ShotGridding
{
  std::vector<Eigen::Index> sample_row; // nominal (row, col) of each acquired sample
  std::vector<Eigen::Index> sample_col;
  std::vector<GriddingTarget> targets;
  std::size_t dropped = 0; // samples whose cell falls outside the grid
};

/// Targets are the cells nearest to R^T k of every sample of the shot, each listed once.
ShotGridding plan_shot_gridding(SamplingPlan const &plan, Mask const &mask, int shot, Pose const &pose,
                                double fov_mm, KernelGeometry const &geom);

/// Low-resolution calibration object and coils used to simulate corrupted calibration data.
class CalibrationModel
{
public:
  /// `calib` holds the fully sampled central block; `coils` are full-grid (extrapolated) maps.
  CalibrationModel(MultiCoilKspace const &calib, std::span<ComplexGrid const> coils, double fov_mm);

  Eigen::Index grid() const { return object_.rows(); }
  int calib_half() const { return calib_half_; } // half-width of the measured block, cycles/FOV
  double signal_scale() const { return signal_scale_; }
  ComplexGrid const &object() const { return object_; }
  double fov_mm() const { return fov_mm_; }

  /// Coil- and field-weighted object for a condition (translation phase excluded).
  std::vector<ComplexGrid> weighted_images(Condition const &cond) const;
  /// Spectra of `images` evaluated at q + offset for every integer q of the grid.
  std::vector<ComplexGrid> shifted_spectra(std::span<ComplexGrid const> images, KPoint offset) const;

private:
  ComplexGrid object_;
  std::vector<ComplexGrid> coils_;
  int calib_half_;
  double signal_scale_;
  double fov_mm_;
};

struct TrainingSetOptions
{
  int n_targets = 2048;       // per condition
  int targets_per_pattern = 1; // consecutive samples sharing one source pattern
  int interior_margin = 4;    // target positions keep this distance from the calibration edge
};

/// Training samples for every condition. Source patterns come from the plan's real gridding
/// geometry under each condition's pose; data are evaluated at random calibration-interior
/// positions with the same offsets (kernels are shift invariant in k-space).
std::vector<TrainSample> synthesize_training_set(CalibrationModel const &model, SamplingPlan const &plan,
                                                 std::span<Condition const> conditions, KernelGeometry const &geom,
                                                 FeatureNorms const &norms, TrainingSetOptions const &opts,
                                                 std::uint64_t seed);

/// Per-target-coil ridge regression of targets on stacked sources; returns C x (n_src C).
CMatrix fit_kernel_lsq(std::span<TrainSample const> samples, double lambda);

/// sqrt(sum ||W_i src_i - tgt_i||^2 / sum ||tgt_i||^2) with W_i = kernel_of(i).
double kernel_nrmse(std::span<TrainSample const> samples, std::function<CMatrix(std::size_t)> const &kernel_of);

/// Data-domain training of the kernel family.
KernelFamily mlp_train(std::span<TrainSample const> samples, KernelGeometry const &geom, FeatureNorms const &norms,
                       ConditionRange const &range, double signal_scale, TrainingHyper const &hyper,
                       std::uint64_t seed);

/// Mean data-domain loss of `family` on `samples`.
double family_loss(KernelFamily const &family, std::span<TrainSample const> samples);

struct CleanStats
{
  std::size_t targets = 0;
  std::size_t fallback = 0;
  std::size_t dropped = 0;
  std::size_t widened = 0;
  bool extrapolated = false; // some condition fell outside the training range
};

/// One condition per shot and echo, applied to that shot's samples.
using ShotConditions = std::function<Condition(int shot, int echo)>;

/// Kernel cleaning onto the reference Cartesian grid. Output mask is the union of every shot's
/// gridding targets; cells hit by several shots hold the mean.
MultiCoilKspace clean_kspace(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                             KernelFamily const &family, CleanStats *stats = nullptr);

/// As clean_kspace with an explicit per-shot condition (translation removed using its pose).
MultiCoilKspace clean_kspace_with(MultiCoilKspace const &y, SamplingPlan const &plan, double fov_mm,
                                  ShotConditions const &condition_of, KernelFamily const &family,
                                  std::span<int const> shots, CleanStats *stats = nullptr);

ReconResult mobile_grappa_recon(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                                KernelFamily const &family, std::span<ComplexGrid const> coils,
                                CgOptions const &opts = {});

/// Builds a family for the given (relative) conditions.
using FamilyBuilder = std::function<KernelFamily(std::vector<Condition> const &)>;

/// Clusters the timeline into K states, cleans each shot to its cluster centroid with one
/// family built for all centroid-relative conditions, then runs aligned SENSE over the centroids.
ReconResult clustered_mobile_grappa(MultiCoilKspace const &y, MotionTimeline const &timeline,
                                    SamplingPlan const &plan, FamilyBuilder const &builder,
                                    std::span<ComplexGrid const> coils, int K, ClusterWeights const &weights,
                                    std::uint64_t seed, CgOptions const &opts = {});

struct ConditionListOptions
{
  double margin = 0.1;       // fraction of each parameter's range added on both sides
  bool include_corners = true; // add the all-min and all-max corner conditions
  int n_random = 0;          // extra conditions drawn uniformly inside the widened box
};

/// Distinct (state, TE) conditions of the timeline plus the widened-range extras. Zero-field
/// states appear once, at the first TE.
std::vector<Condition> conditions_from_timeline(MotionTimeline const &timeline, std::span<double const> tes,
                                                ConditionListOptions const &opts, std::uint64_t seed);

/// Appends the widened-range corners and random extras of `opts` to an explicit list.
std::vector<Condition> widen_conditions(std::vector<Condition> conditions, std::span<double const> tes,
                                        ConditionListOptions const &opts, std::uint64_t seed);

/// Bounding box of the conditions, widened by `margin` of each range on both sides.
ConditionRange range_of(std::span<Condition const> conditions, double margin);

/// Training set and MLP for the given conditions; the recorded range is their bounding box.
struct TrainingSetup
{
  KernelGeometry geom;
  TrainingHyper hyper;
  TrainingSetOptions data;
};

KernelFamily train_family(CalibrationModel const &model, SamplingPlan const &plan,
                          std::span<Condition const> conditions, TrainingSetup const &setup, std::uint64_t seed);

} // namespace mograppa
