#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "mobile_grappa.hpp"
#include "recon.hpp"

namespace mograppa {

/// ‖|x| − |ref|‖₂ / ‖|ref|‖₂ over the mask pixels.
double nrmse(ComplexGrid const &x, ComplexGrid const &ref, Mask const &mask);

struct ReportRow
{
  std::string experiment;
  std::string method;
  double param = 0.0;
  double nrmse_mean = 0.0;
  double nrmse_std = 0.0;
  double wall_time_s = 0.0;
  std::string config_hash;
  bool operator==(ReportRow const &) const = default;
};

struct ImagePanel
{
  std::string method;
  double param = 0.0;
  ComplexGrid image;
};

struct Chart
{
  enum class Style
  {
    Bars,
    Lines
  };
  std::string experiment; // rows plotted
  std::string title;
  std::string x_label;
  bool wall_time = false; // y axis: wall time instead of NRMSE
  Style style = Style::Bars;
};

struct ExperimentReport
{
  std::string config_hash;
  std::vector<ReportRow> rows;
  Json provenance = Json::object(); // seeds, hash, training records
  std::vector<Chart> charts;
  ComplexGrid reference;             // ground truth shared by every difference panel
  Mask mask;
  std::vector<ImagePanel> panels;
};

/// Simulated object, coils, plan, calibration and the maps estimated from it.
struct Scene
{
  ComplexGrid object;
  Mask support;
  std::vector<ComplexGrid> coils;
  SamplingPlan plan;
  MultiCoilKspace calib;
  std::vector<ComplexGrid> maps;
};

Scene make_scene(RunConfig const &cfg);
MotionTimeline make_timeline(RunConfig const &cfg);
/// Discrete spec with rotation bound `amplitude_deg`; translation keeps its ratio to rotation.
TimelineSpec scaled_spec(TimelineSpec const &base, double amplitude_deg);
MultiCoilKspace acquire(Scene const &scene, MotionTimeline const &timeline, RunConfig const &cfg);

TrainingSetup training_setup(RunConfig const &cfg);
/// Family trained on the timeline's conditions (plus the configured range extras).
KernelFamily train_for_timeline(RunConfig const &cfg, CalibrationModel const &model, SamplingPlan const &plan,
                                MotionTimeline const &timeline);

/// Inputs a method may need beyond the data; `family` serves "mobile", `builder` serves
/// "mobile-cluster".
struct MethodInputs
{
  std::span<ComplexGrid const> maps;
  KernelFamily const *family = nullptr;
  FamilyBuilder builder;
};

/// One of known_methods() on `y`.
ReconResult run_method(std::string const &method, MultiCoilKspace const &y, MotionTimeline const &timeline,
                       RunConfig const &cfg, MethodInputs const &inputs);

using Progress = std::function<void(std::string const &)>;

ExperimentReport run_single(RunConfig const &cfg, Progress const &log = {});
ExperimentReport sweep_motion_range(RunConfig const &cfg, Progress const &log = {});
ExperimentReport sweep_te(RunConfig const &cfg, Progress const &log = {});
/// Timing rows for aligned and mobile per state count, clustered rows per K under
/// "<experiment>-clusters", and one "mlp-train" row (wall time = training time).
ExperimentReport bench_state_scaling(RunConfig const &cfg, Progress const &log = {});
/// Dispatch on cfg.kind.
ExperimentReport run_experiment(RunConfig const &cfg, Progress const &log = {});

std::string const &report_csv_header();
std::string format_report_csv(std::span<ReportRow const> rows);
std::vector<ReportRow> parse_report_csv(std::string const &text);

/// report.csv, report.json (provenance), one PNG per chart, reference and per-panel
/// magnitude and |difference|x5 images.
void render_report(ExperimentReport const &report, std::filesystem::path const &outdir);

struct ExpectOutcome
{
  std::string name;
  std::string type;
  bool passed = false;
  std::string detail;
};

std::vector<ExpectOutcome> evaluate_expects(ExperimentReport const &report, Json const &expect);

} // namespace mograppa
