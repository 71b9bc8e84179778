#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <mograppa/clustering.hpp>
#include <mograppa/grid.hpp>

using namespace mograppa;

namespace {

std::vector<PosePoint> blobs(int per_blob, double gap, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<PosePoint> pts;
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < per_blob; ++i) {
      PosePoint p;
      for (int k = 0; k < 9; ++k) {
        p[k] = n(rng);
      }
      p[0] += b * gap;
      pts.push_back(p);
    }
  }
  return pts;
}

bool contains(std::span<PosePoint const> pts, PosePoint const &q)
{
  return std::any_of(pts.begin(), pts.end(), [&](PosePoint const &p) { return p == q; });
}

MotionTimeline walk(int shots, std::uint64_t seed)
{
  TimelineSpec spec;
  spec.profile = TimelineProfile::Walk;
  spec.walk_step_deg = 1.5;
  spec.walk_bound_deg = 12.0;
  spec.walk_step_mm = 0.4;
  spec.walk_field_step_hz = 1.0;
  return generate_timeline(shots, spec, seed);
}

} // namespace

TEST_CASE("embedding")
{
  MotionState s;
  s.pose = {2.0, 3.0, -1.0};
  s.field.c = {4.0, 0.0, 0.0, 0.0, 0.0, -2.0};
  auto const p = embed(s, {1.4, 0.5});
  CHECK(p[0] == doctest::Approx(2.8));
  CHECK(p[1] == 3.0);
  CHECK(p[2] == -1.0);
  CHECK(p[3] == 2.0);
  CHECK(p[8] == -1.0);
}

TEST_CASE("k-means++ seeding")
{
  auto const pts = blobs(10, 50.0, 1);
  auto const one = kmeans_pp_seed(pts, 1, 3);
  REQUIRE(one.size() == 1);
  CHECK(contains(pts, one[0]));

  std::vector<PosePoint> few(pts.begin(), pts.begin() + 5);
  few.push_back(few[0]); // duplicate: 5 distinct points
  auto const all = kmeans_pp_seed(few, 5, 9);
  std::set<std::vector<double>> seen;
  for (auto const &c : all) {
    CHECK(contains(few, c));
    seen.insert(std::vector<double>(c.data(), c.data() + 9));
  }
  CHECK(seen.size() == 5);
  CHECK_THROWS_AS(kmeans_pp_seed(few, 6, 9), Error);

  int split = 0;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    auto const s = kmeans_pp_seed(pts, 2, 1000 + trial);
    split += (s[0][0] > 25.0) != (s[1][0] > 25.0) ? 1 : 0;
  }
  MESSAGE("seeds in different blobs: " << split << "/200");
  CHECK(split > 190);
}

TEST_CASE("lloyd iterations")
{
  auto const pts = blobs(30, 20.0, 4);
  auto const r = kmeans(pts, 2, 5);
  for (int i = 0; i < 60; ++i) {
    CHECK(r.assignment[static_cast<std::size_t>(i)] == r.assignment[i < 30 ? 0 : 30]);
  }
  CHECK(r.assignment[0] != r.assignment[30]);
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    CHECK(r.history[i] <= r.history[i - 1]);
  }

  auto const one = kmeans(pts, 1, 5);
  PosePoint mean = PosePoint::Zero();
  for (auto const &p : pts) {
    mean += p;
  }
  mean /= static_cast<double>(pts.size());
  CHECK((one.centroids[0] - mean).norm() < 1e-12);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<PosePoint> cloud(200);
  for (auto &p : cloud) {
    for (int k = 0; k < 9; ++k) {
      p[k] = n(rng);
    }
  }
  auto const a = kmeans(cloud, 6, 17);
  auto const b = kmeans(cloud, 6, 17);
  CHECK(a.assignment == b.assignment);
  CHECK(a.objective == b.objective);
  for (std::size_t i = 1; i < a.history.size(); ++i) {
    CHECK(a.history[i] <= a.history[i - 1]);
  }
}

TEST_CASE("cluster_timeline")
{
  TimelineSpec spec;
  spec.profile = TimelineProfile::Discrete;
  spec.n_states = 12;
  spec.field_hz = 10.0;
  auto const tl = generate_timeline(48, spec, 3);
  auto const exact = cluster_timeline(tl, 12, {}, 1);
  CHECK(exact.objective < 1e-18);
  double worst = 0.0;
  for (std::size_t i = 0; i < tl.size(); ++i) {
    auto const &a = exact.quantized.entries[i];
    auto const &b = tl.entries[i];
    worst = std::max({worst, std::abs(a.pose.theta_deg - b.pose.theta_deg), std::abs(a.pose.dx_mm - b.pose.dx_mm),
                      std::abs(a.pose.dy_mm - b.pose.dy_mm)});
    for (int k = 0; k < 6; ++k) {
      worst = std::max(worst, std::abs(a.field.c[k] - b.field.c[k]));
    }
  }
  CHECK(worst < 1e-12);
  CHECK(std::set<int>(exact.cluster_of_shot.begin(), exact.cluster_of_shot.end()).size() == 12);

  auto const w = walk(60, 5);
  auto const global = cluster_timeline(w, 1, {}, 1);
  double mean_theta = 0.0;
  for (auto const &e : w.entries) {
    mean_theta += e.pose.theta_deg / 60.0;
  }
  for (auto const &e : global.quantized.entries) {
    CHECK(e.pose.theta_deg == doctest::Approx(mean_theta));
  }

  double previous = global.objective;
  for (int K : {2, 4, 8, 12}) {
    auto const c = cluster_timeline(w, K, {}, 1);
    MESSAGE("K=" << K << " objective " << c.objective);
    CHECK(c.objective <= previous);
    previous = c.objective;
  }

  // Two clusters tighten the rotation range seen within each cluster.
  auto const range = [](std::vector<double> v) {
    auto const [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  };
  std::vector<double> all;
  for (auto const &e : w.entries) {
    all.push_back(e.pose.theta_deg);
  }
  auto const two = cluster_timeline(w, 2, {}, 1);
  for (int k = 0; k < 2; ++k) {
    std::vector<double> members;
    for (std::size_t s = 0; s < w.size(); ++s) {
      if (two.cluster_of_shot[s] == k) {
        members.push_back(w.entries[s].pose.theta_deg);
      }
    }
    CHECK(range(members) < range(all));
  }
  CHECK_THROWS_AS(cluster_timeline(w, 0, {}, 1), Error);

  int const shots[] = {2, 0, 1};
  CHECK(format_cluster_csv(shots) == "shot,cluster\n0,2\n1,0\n2,1\n");
}
