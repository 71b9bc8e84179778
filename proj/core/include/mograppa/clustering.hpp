#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scene.hpp"

namespace mograppa {

/// (theta w_rot, dx, dy, c0 w_f, ..., c5 w_f)
using PosePoint = Eigen::Matrix<double, 9, 1>;

struct ClusterWeights
{
  double w_rot = 1.4; // mm per degree
  double w_f = 0.5;   // mm per Hz
};

PosePoint embed(MotionState const &state, ClusterWeights const &w);

/// D^2 seeding. Throws Error when K exceeds the number of distinct points.
std::vector<PosePoint> kmeans_pp_seed(std::span<PosePoint const> points, int K, std::uint64_t seed);

struct KMeansResult
{
  std::vector<int> assignment;
  std::vector<PosePoint> centroids;
  double objective = 0.0;
  std::vector<double> history; // objective after each Lloyd iteration
  int iterations = 0;
};

/// Lloyd iterations from k-means++ seeds until the assignment stops changing.
KMeansResult kmeans(std::span<PosePoint const> points, int K, std::uint64_t seed, int max_iter = 100);

struct ClusteredTimeline
{
  MotionTimeline quantized;        // every shot carries its cluster's mean state
  std::vector<int> cluster_of_shot;
  std::vector<MotionState> centroids;
  double objective = 0.0;
};

ClusteredTimeline cluster_timeline(MotionTimeline const &timeline, int K, ClusterWeights const &weights,
                                   std::uint64_t seed);

/// `shot,cluster` rows with a header line.
std::string format_cluster_csv(std::span<int const> cluster_of_shot);
void write_cluster_csv(std::filesystem::path const &path, std::span<int const> cluster_of_shot);

} // namespace mograppa
