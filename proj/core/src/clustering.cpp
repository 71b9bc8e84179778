#include "mograppa/clustering.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "mograppa/grid.hpp"

namespace mograppa {

PosePoint embed(MotionState const &state, ClusterWeights const &w)
{
  if (!(w.w_rot > 0.0) || !(w.w_f > 0.0)) {
    throw Error("cluster weights must be positive");
  }
  PosePoint p;
  p << state.pose.theta_deg * w.w_rot, state.pose.dx_mm, state.pose.dy_mm, state.field.c[0] * w.w_f,
    state.field.c[1] * w.w_f, state.field.c[2] * w.w_f, state.field.c[3] * w.w_f, state.field.c[4] * w.w_f,
    state.field.c[5] * w.w_f;
  return p;
}

namespace {

std::size_t count_distinct(std::span<PosePoint const> points)
{
  std::vector<PosePoint> seen;
  for (auto const &p : points) {
    if (std::none_of(seen.begin(), seen.end(), [&](PosePoint const &q) { return q == p; })) {
      seen.push_back(p);
    }
  }
  return seen.size();
}

// first + mean(x - first): exact when all members coincide.
template <typename T, typename Get>
T shifted_mean(std::vector<std::size_t> const &members, Get get)
{
  T const first = get(members.front());
  T acc = first - first;
  for (std::size_t i : members) {
    acc += get(i) - first;
  }
  return first + acc / static_cast<double>(members.size());
}

double nearest(PosePoint const &p, std::vector<PosePoint> const &centroids, int &which)
{
  double best = std::numeric_limits<double>::infinity();
  which = 0;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    double const d = (p - centroids[k]).squaredNorm();
    if (d < best) {
      best = d;
      which = static_cast<int>(k);
    }
  }
  return best;
}

} // namespace

std::vector<PosePoint> kmeans_pp_seed(std::span<PosePoint const> points, int K, std::uint64_t seed)
{
  if (K < 1) {
    throw Error("k-means: K must be >= 1");
  }
  std::size_t const distinct = count_distinct(points);
  if (static_cast<std::size_t>(K) > distinct) {
    throw Error(fmt::format("k-means: K = {} exceeds the {} distinct points", K, distinct));
  }
  std::mt19937_64 rng(seed);
  std::vector<PosePoint> seeds;
  std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
  seeds.push_back(points[first(rng)]);

  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    d2[i] = (points[i] - seeds[0]).squaredNorm();
  }
  while (seeds.size() < static_cast<std::size_t>(K)) {
    double total = 0.0;
    for (double d : d2) {
      total += d;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double const pick = u(rng);
    double run = 0.0;
    std::size_t chosen = points.size();
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (d2[i] <= 0.0) {
        continue;
      }
      last_positive = i;
      run += d2[i];
      if (pick < run) {
        chosen = i;
        break;
      }
    }
    if (chosen == points.size()) {
      chosen = last_positive; // pick == total after rounding
    }
    seeds.push_back(points[chosen]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], (points[i] - seeds.back()).squaredNorm());
    }
  }
  return seeds;
}

KMeansResult kmeans(std::span<PosePoint const> points, int K, std::uint64_t seed, int max_iter)
{
  if (points.empty()) {
    throw Error("k-means: no points");
  }
  KMeansResult res;
  res.centroids = kmeans_pp_seed(points, K, seed);
  std::size_t const n = points.size();
  res.assignment.assign(n, -1);

  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int k = 0;
      obj += nearest(points[i], res.centroids, k);
      if (k != res.assignment[i]) {
        res.assignment[i] = k;
        changed = true;
      }
    }
    res.iterations = it + 1;
    if (!changed) {
      res.objective = obj;
      res.history.push_back(obj);
      break;
    }
    for (int k = 0; k < K; ++k) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i) {
        if (res.assignment[i] == k) {
          members.push_back(i);
        }
      }
      if (members.empty()) {
        // Re-seed an empty cluster with the point farthest from its centroid.
        std::size_t far = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double const d = (points[i] - res.centroids[static_cast<std::size_t>(res.assignment[i])]).squaredNorm();
          if (d > best) {
            best = d;
            far = i;
          }
        }
        res.centroids[static_cast<std::size_t>(k)] = points[far];
        continue;
      }
      res.centroids[static_cast<std::size_t>(k)] =
        shifted_mean<PosePoint>(members, [&](std::size_t i) { return points[i]; });
    }
    obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      obj += (points[i] - res.centroids[static_cast<std::size_t>(res.assignment[i])]).squaredNorm();
    }
    res.objective = obj;
    res.history.push_back(obj);
  }
  return res;
}

ClusteredTimeline cluster_timeline(MotionTimeline const &timeline, int K, ClusterWeights const &weights,
                                   std::uint64_t seed)
{
  if (K < 1) {
    throw Error("cluster_timeline: K must be >= 1");
  }
  if (timeline.entries.empty()) {
    throw Error("cluster_timeline: empty timeline");
  }
  std::vector<PosePoint> pts;
  pts.reserve(timeline.size());
  for (auto const &e : timeline.entries) {
    pts.push_back(embed(e, weights));
  }
  auto const km = kmeans(pts, K, seed);

  ClusteredTimeline out;
  out.quantized = timeline;
  out.cluster_of_shot = km.assignment;
  out.objective = km.objective;

  // Relabel clusters in first-occurrence order so maps are stable to read.
  std::vector<int> relabel(static_cast<std::size_t>(K), -1);
  int next = 0;
  for (int &c : out.cluster_of_shot) {
    auto &r = relabel[static_cast<std::size_t>(c)];
    if (r < 0) {
      r = next++;
    }
    c = r;
  }

  out.centroids.resize(static_cast<std::size_t>(next));
  for (int k = 0; k < next; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < timeline.size(); ++i) {
      if (out.cluster_of_shot[i] == k) {
        members.push_back(i);
      }
    }
    // Means in state units rather than unembedding, so identical members reproduce exactly.
    MotionState m;
    m.pose.theta_deg =
      shifted_mean<double>(members, [&](std::size_t i) { return timeline.entries[i].pose.theta_deg; });
    m.pose.dx_mm = shifted_mean<double>(members, [&](std::size_t i) { return timeline.entries[i].pose.dx_mm; });
    m.pose.dy_mm = shifted_mean<double>(members, [&](std::size_t i) { return timeline.entries[i].pose.dy_mm; });
    for (std::size_t j = 0; j < 6; ++j) {
      m.field.c[j] = shifted_mean<double>(members, [&](std::size_t i) { return timeline.entries[i].field.c[j]; });
    }
    out.centroids[static_cast<std::size_t>(k)] = m;
  }
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    out.quantized.entries[i] = out.centroids[static_cast<std::size_t>(out.cluster_of_shot[i])];
  }
  return out;
}

std::string format_cluster_csv(std::span<int const> cluster_of_shot)
{
  std::string s = "shot,cluster\n";
  for (std::size_t i = 0; i < cluster_of_shot.size(); ++i) {
    s += fmt::format("{},{}\n", i, cluster_of_shot[i]);
  }
  return s;
}

void write_cluster_csv(std::filesystem::path const &path, std::span<int const> cluster_of_shot)
{
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw Error(fmt::format("cannot write cluster map {}", path.string()));
  }
  f << format_cluster_csv(cluster_of_shot);
  if (!f) {
    throw Error(fmt::format("write failed for {}", path.string()));
  }
}

} // namespace mograppa
