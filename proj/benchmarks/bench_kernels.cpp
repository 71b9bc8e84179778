#include <random>

#include <benchmark/benchmark.h>

#include <mograppa/acquisition.hpp>
#include <mograppa/clustering.hpp>
#include <mograppa/mlp.hpp>
#include <mograppa/numerics.hpp>
#include <mograppa/recon.hpp>
#include <mograppa/scene.hpp>

using namespace mograppa;

namespace {

ComplexGrid noise(Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ComplexGrid g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.data()[i] = cd(nd(rng), nd(rng));
  }
  return g;
}

void BM_fft2c(benchmark::State &state)
{
  auto const x = noise(state.range(0), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fft2c(x));
  }
}
BENCHMARK(BM_fft2c)->Arg(64)->Arg(128)->Arg(256);

void BM_nudft_line(benchmark::State &state)
{
  Eigen::Index const n = state.range(0);
  auto const x = noise(n, 2);
  std::vector<KPoint> pts;
  for (Eigen::Index c = 0; c < n; ++c) {
    pts.push_back({k_coord(c, n) * 0.98, 3.3});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(nudft_sample(x, pts));
  }
}
BENCHMARK(BM_nudft_line)->Arg(64)->Arg(128);

void BM_pose_apply(benchmark::State &state)
{
  Eigen::Index const n = state.range(0);
  auto const x = noise(n, 3);
  PoseOperator const op(n, n, Pose{7.0, 1.5, -2.0}, 256.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(op.apply(x, PoseMode::Forward));
  }
}
BENCHMARK(BM_pose_apply)->Arg(128);

void BM_mlp_forward(benchmark::State &state)
{
  Mlp const net(57, {128, 128, 128}, 144, 1);
  Eigen::MatrixXd const X = Eigen::MatrixXd::Random(57, state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(X));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_mlp_forward)->Arg(256)->Arg(4096);

void BM_cg_sense(benchmark::State &state)
{
  Eigen::Index const n = 64;
  auto const object = smooth_gaussian(shepp_logan(n, n), 1.5);
  auto const coils = simulate_coils(4, n, n, shepp_logan_support(n, n));
  auto const plan = make_sampling_plan(n, n, 2, 8, 4, {0.004});
  MotionTimeline still;
  still.entries.resize(4);
  auto const y = simulate_acquisition(object, coils, still, plan);
  CgOptions opts;
  opts.maxit = static_cast<int>(state.range(0));
  opts.fixed_iterations = true;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cg_sense(y, coils, plan.mask(), opts));
  }
}
BENCHMARK(BM_cg_sense)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_kmeans(benchmark::State &state)
{
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<PosePoint> pts(static_cast<std::size_t>(state.range(0)));
  for (auto &p : pts) {
    for (int d = 0; d < 9; ++d) {
      p[d] = nd(rng);
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(kmeans(pts, 8, 1));
  }
}
BENCHMARK(BM_kmeans)->Arg(96)->Arg(1024);

} // namespace

BENCHMARK_MAIN();
