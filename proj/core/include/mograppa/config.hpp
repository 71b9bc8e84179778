#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clustering.hpp"
#include "io.hpp"
#include "mobile_grappa.hpp"
#include "recon.hpp"
#include "scene.hpp"

namespace mograppa {

/// Schema violation; the message starts with the offending JSON path.
class ConfigError : public Error
{
public:
  using Error::Error;
};

enum class ExperimentKind
{
  Single,       // one timeline, every configured method
  MotionSweep,  // timeline regenerated per rotation amplitude
  TeSweep,      // per-echo NRMSE of a multi-echo run
  StateScaling, // wall time against the number of motion states and clusters
};

struct SweepConfig
{
  std::vector<double> amplitudes_deg; // motion sweep; translation scales with rotation
  std::vector<int> state_counts;      // state scaling
  std::vector<int> cluster_counts;    // state scaling, clustered mode
  int repeats = 3;                    // timing median
};

struct RunConfig
{
  std::string experiment = "run";
  ExperimentKind kind = ExperimentKind::Single;
  Eigen::Index ny = 128;
  Eigen::Index nx = 128;
  double fov_mm = 256.0;
  int coils = 8;
  int R = 2;
  int acs = 8;
  int n_shots = 12;
  int calib_size = 32;
  std::vector<double> tes{0.004};
  double smooth_px = 1.5;
  double noise_sigma = 0.0;
  int map_degree = 6;
  double map_threshold = 0.05;

  TimelineSpec timeline;
  std::vector<std::string> methods;

  KernelGeometry geom;
  TrainingHyper hyper;
  TrainingSetOptions data;
  ConditionListOptions conditions;
  CgOptions cg;
  int clusters = 2;
  ClusterWeights weights;
  int downsample_window = 2;
  SweepConfig sweep;

  std::map<std::string, std::uint64_t> seeds{{"timeline", 1}, {"mlp", 2}, {"kmeans", 3}, {"noise", 4}};
  std::filesystem::path outdir = "out";
  Json expect = Json::array();

  Json canonical;   // normalized config used for hashing
  std::string hash; // FNV-1a of the canonical form, outdir excluded

  std::uint64_t seed(std::string const &name) const;
  SamplingPlan plan() const;
};

/// Methods accepted in `methods` and by `mograppa recon`.
std::vector<std::string> const &known_methods();
std::string to_string(ExperimentKind kind);

/// Validates against the schema (unknown keys rejected) and fills defaults.
/// `base_dir` resolves a relative timeline file.
RunConfig parse_config(Json const &j, std::filesystem::path const &base_dir = ".");
RunConfig load_config(std::filesystem::path const &path);

/// "NAME=INT" on an existing seed; refreshes the hash.
void apply_seed_override(RunConfig &cfg, std::string const &assignment);

} // namespace mograppa
