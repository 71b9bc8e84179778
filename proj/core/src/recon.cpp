#include "mograppa/recon.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mograppa/numerics.hpp"

namespace mograppa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

MotionSenseOperator::MotionSenseOperator(std::span<ComplexGrid const> coils, std::span<StateBlock const> blocks,
                                         double te, double fov_mm)
  : coils_(coils.begin(), coils.end())
{
  if (coils_.empty()) {
    throw Error("SENSE operator: no coil maps");
  }
  if (blocks.empty()) {
    throw Error("SENSE operator: no state blocks");
  }
  ny_ = coils_[0].rows();
  nx_ = coils_[0].cols();
  bool any = false;
  for (auto const &b : blocks) {
    if (b.mask.rows() != ny_ || b.mask.cols() != nx_) {
      throw Error("SENSE operator: block mask does not match coil grid");
    }
    any = any || b.mask.any();
    ComplexGrid phase;
    if (!b.state.field.is_zero() && te != 0.0) {
      RealGrid const field = eval_field(b.state.field, ny_, nx_);
      phase = (field * (2.0 * std::numbers::pi * te)).unaryExpr([](double p) { return std::polar(1.0, p); });
    }
    blocks_.push_back({PoseOperator(ny_, nx_, b.state.pose, fov_mm), std::move(phase), b.mask, b.data});
  }
  if (!any) {
    throw Error("SENSE operator: sampling mask is empty");
  }
}

std::vector<ComplexGrid> MotionSenseOperator::forward(ComplexGrid const &m) const
{
  std::vector<ComplexGrid> out;
  out.reserve(blocks_.size() * coils_.size());
  for (auto const &b : blocks_) {
    ComplexGrid moved = b.pose.apply(m, PoseMode::Forward);
    if (b.phase.size() > 0) {
      moved *= b.phase;
    }
    for (auto const &s : coils_) {
      out.push_back(b.mask.select(fft2c(s * moved), cd(0.0)));
    }
  }
  return out;
}

ComplexGrid MotionSenseOperator::adjoint(std::span<ComplexGrid const> y) const
{
  if (y.size() != blocks_.size() * coils_.size()) {
    throw Error("SENSE adjoint: wrong number of k-space grids");
  }
  ComplexGrid out = ComplexGrid::Zero(ny_, nx_);
  std::size_t i = 0;
  for (auto const &b : blocks_) {
    ComplexGrid acc = ComplexGrid::Zero(ny_, nx_);
    for (auto const &s : coils_) {
      acc += s.conjugate() * ifft2c(b.mask.select(y[i++], cd(0.0)));
    }
    if (b.phase.size() > 0) {
      acc *= b.phase.conjugate();
    }
    out += b.pose.apply(acc, PoseMode::Adjoint);
  }
  return out;
}

ComplexGrid MotionSenseOperator::normal(ComplexGrid const &m) const
{
  ComplexGrid out = ComplexGrid::Zero(ny_, nx_);
  for (auto const &b : blocks_) {
    ComplexGrid moved = b.pose.apply(m, PoseMode::Forward);
    if (b.phase.size() > 0) {
      moved *= b.phase;
    }
    ComplexGrid acc = ComplexGrid::Zero(ny_, nx_);
    for (auto const &s : coils_) {
      acc += s.conjugate() * ifft2c(b.mask.select(fft2c(s * moved), cd(0.0)));
    }
    if (b.phase.size() > 0) {
      acc *= b.phase.conjugate();
    }
    out += b.pose.apply(acc, PoseMode::Adjoint);
  }
  return out;
}

ComplexGrid MotionSenseOperator::rhs(int echo) const
{
  std::vector<ComplexGrid> y;
  y.reserve(blocks_.size() * coils_.size());
  for (auto const &b : blocks_) {
    if (b.data == nullptr) {
      throw Error("SENSE operator: block carries no data");
    }
    if (b.data->n_coils != static_cast<int>(coils_.size())) {
      throw Error(fmt::format("SENSE: data has {} coils, {} coil maps supplied", b.data->n_coils, coils_.size()));
    }
    for (int c = 0; c < b.data->n_coils; ++c) {
      y.push_back(b.data->at(c, echo));
    }
  }
  return adjoint(y);
}

namespace {

ComplexGrid solve_echo(MotionSenseOperator const &op, int echo, CgOptions const &opts, std::vector<double> &history,
                       int &iterations)
{
  Eigen::Index const ny = op.ny();
  Eigen::Index const nx = op.nx();
  ComplexGrid const b = op.rhs(echo);
  CVector const bv = Eigen::Map<CVector const>(b.data(), b.size());
  LinearOp apply = [&](CVector const &in, CVector &out) {
    ComplexGrid const m = Eigen::Map<ComplexGrid const>(in.data(), ny, nx);
    ComplexGrid const r = op.normal(m);
    out = Eigen::Map<CVector const>(r.data(), r.size());
  };
  auto res = cg_hermitian(apply, bv, opts.tol, opts.maxit, opts.fixed_iterations);
  history = std::move(res.residuals);
  iterations = res.iterations;
  return Eigen::Map<ComplexGrid const>(res.x.data(), ny, nx);
}

ReconResult solve_blocks(std::span<StateBlock const> blocks, std::span<ComplexGrid const> coils,
                         std::span<double const> tes, double fov_mm, CgOptions const &opts, std::string method)
{
  auto const t0 = Clock::now();
  ReconResult out;
  out.method = std::move(method);
  for (std::size_t e = 0; e < tes.size(); ++e) {
    MotionSenseOperator const op(coils, blocks, tes[e], fov_mm);
    std::vector<double> hist;
    int its = 0;
    out.images.push_back(solve_echo(op, static_cast<int>(e), opts, hist, its));
    out.residuals.push_back(std::move(hist));
    out.iterations = std::max(out.iterations, its);
  }
  out.solve_time_s = seconds_since(t0);
  out.wall_time_s = out.solve_time_s;
  return out;
}

} // namespace

ReconResult cg_sense(MultiCoilKspace const &y, std::span<ComplexGrid const> coils, Mask const &mask,
                     CgOptions const &opts)
{
  if (static_cast<std::size_t>(y.n_coils) != coils.size()) {
    throw Error(fmt::format("cg_sense: data has {} coils, {} coil maps supplied", y.n_coils, coils.size()));
  }
  if (!mask.any()) {
    throw Error("cg_sense: sampling mask is empty");
  }
  StateBlock const block{MotionState{}, mask, &y};
  // TE is irrelevant without a field term.
  std::vector<double> const tes(static_cast<std::size_t>(y.n_echoes), 0.0);
  return solve_blocks(std::span(&block, 1), coils, tes, 256.0, opts, "sense");
}

ReconResult aligned_sense_blocks(std::span<StateBlock const> blocks, std::span<ComplexGrid const> coils,
                                 std::span<double const> tes, double fov_mm, CgOptions const &opts)
{
  return solve_blocks(blocks, coils, tes, fov_mm, opts, "aligned");
}

std::vector<StateBlock> blocks_from_timeline(MultiCoilKspace const &y, MotionTimeline const &timeline,
                                             SamplingPlan const &plan)
{
  if (timeline.size() != static_cast<std::size_t>(plan.n_shots)) {
    throw Error(fmt::format("timeline has {} shots, plan expects {}", timeline.size(), plan.n_shots));
  }
  auto const states = timeline.distinct_states();
  std::vector<StateBlock> blocks;
  for (auto const &st : states) {
    blocks.push_back({st, Mask::Constant(plan.ny, plan.nx, false), &y});
  }
  for (Eigen::Index r = 0; r < plan.ny; ++r) {
    int const shot = plan.shot_of_line[static_cast<std::size_t>(r)];
    if (shot < 0) {
      continue;
    }
    auto const &st = timeline.entries[static_cast<std::size_t>(shot)];
    for (std::size_t b = 0; b < states.size(); ++b) {
      if (states[b] == st) {
        blocks[b].mask.row(r) = y.mask.row(r);
        break;
      }
    }
  }
  return blocks;
}

ReconResult aligned_sense(MultiCoilKspace const &y, std::span<ComplexGrid const> coils,
                          MotionTimeline const &timeline, SamplingPlan const &plan, CgOptions const &opts)
{
  if (static_cast<std::size_t>(y.n_coils) != coils.size()) {
    throw Error(fmt::format("aligned_sense: data has {} coils, {} coil maps supplied", y.n_coils, coils.size()));
  }
  if (!y.mask.any()) {
    throw Error("aligned_sense: sampling mask is empty");
  }
  auto const t0 = Clock::now();
  auto const blocks = blocks_from_timeline(y, timeline, plan);
  auto out = solve_blocks(blocks, coils, plan.tes, timeline.fov_mm, opts, "aligned");
  out.wall_time_s = seconds_since(t0);
  return out;
}

MultiCoilKspace regrid_rotated(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                               double min_weight, int oversampling)
{
  if (timeline.size() != static_cast<std::size_t>(plan.n_shots)) {
    throw Error(fmt::format("timeline has {} shots, plan expects {}", timeline.size(), plan.n_shots));
  }
  if (oversampling < 1) {
    throw Error("regrid_rotated: oversampling must be >= 1");
  }
  Eigen::Index const ny = plan.ny;
  Eigen::Index const nx = plan.nx;
  Eigen::Index const my = ny * oversampling;
  Eigen::Index const mx = nx * oversampling;
  auto const os = static_cast<double>(oversampling);
  // Unitary FFT scaling: a zero-padded image has spectrum values 1/os of the original's.
  double const amp = 1.0 / os;
  MultiCoilKspace out(y.n_coils, y.n_echoes, my, mx);
  RealGrid weight = RealGrid::Zero(my, mx);

  for (Eigen::Index r = 0; r < ny; ++r) {
    int const shot = plan.shot_of_line[static_cast<std::size_t>(r)];
    if (shot < 0) {
      continue;
    }
    auto const xf = RigidTransform::from_pose(timeline.entries[static_cast<std::size_t>(shot)].pose, timeline.fov_mm);
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (!y.mask(r, c)) {
        continue;
      }
      KPoint const k{k_coord(c, nx), k_coord(r, ny)};
      cd const unshift = amp * std::conj(xf.translation_phase(k));
      KPoint const kr = xf.rotate_k_to_reference(k);
      double const px = kr.kx * os + static_cast<double>(mx / 2);
      double const py = kr.ky * os + static_cast<double>(my / 2);
      double const fx = std::floor(px);
      double const fy = std::floor(py);
      double const ax = px - fx;
      double const ay = py - fy;
      auto const ix = static_cast<Eigen::Index>(fx);
      auto const iy = static_cast<Eigen::Index>(fy);
      Eigen::Index const xs[4] = {ix, ix + 1, ix, ix + 1};
      Eigen::Index const ys[4] = {iy, iy, iy + 1, iy + 1};
      double const ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (int t = 0; t < 4; ++t) {
        if (ws[t] == 0.0 || xs[t] < 0 || xs[t] >= mx || ys[t] < 0 || ys[t] >= my) {
          continue;
        }
        weight(ys[t], xs[t]) += ws[t];
        for (std::size_t g = 0; g < y.data.size(); ++g) {
          out.data[g](ys[t], xs[t]) += ws[t] * unshift * y.data[g](r, c);
        }
      }
    }
  }
  out.mask = weight >= min_weight;
  RealGrid const inv = out.mask.select(1.0 / weight, 0.0);
  for (auto &g : out.data) {
    g *= inv.cast<cd>();
  }
  return out;
}

ReconResult augmented_sense_approx(MultiCoilKspace const &y, std::span<ComplexGrid const> coils,
                                   MotionTimeline const &timeline, SamplingPlan const &plan, CgOptions const &opts)
{
  constexpr int os = 2;
  auto const t0 = Clock::now();
  auto const gridded = regrid_rotated(y, timeline, plan, 0.5, os);
  Eigen::Index const my = gridded.ny();
  Eigen::Index const mx = gridded.nx();
  Eigen::Index const r0 = my / 2 - plan.ny / 2;
  Eigen::Index const c0 = mx / 2 - plan.nx / 2;
  std::vector<ComplexGrid> padded;
  for (auto const &s : coils) {
    ComplexGrid z = ComplexGrid::Zero(my, mx);
    z.block(r0, c0, plan.ny, plan.nx) = s;
    padded.push_back(std::move(z));
  }
  double const prep = seconds_since(t0);
  auto out = cg_sense(gridded, padded, gridded.mask, opts);
  for (auto &img : out.images) {
    img = ComplexGrid(img.block(r0, c0, plan.ny, plan.nx));
  }
  out.method = "augmented";
  out.prep_time_s = prep;
  out.wall_time_s = seconds_since(t0);
  return out;
}

MotionTimeline downsample_timeline(MotionTimeline const &timeline, int window)
{
  if (window < 1) {
    throw Error("downsample_timeline: window must be >= 1");
  }
  MotionTimeline out = timeline;
  std::size_t const n = timeline.size();
  auto const w = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start < n; start += w) {
    std::size_t const end = std::min(n, start + w);
    MotionState mean;
    for (std::size_t s = start; s < end; ++s) {
      auto const &e = timeline.entries[s];
      mean.pose.theta_deg += e.pose.theta_deg;
      mean.pose.dx_mm += e.pose.dx_mm;
      mean.pose.dy_mm += e.pose.dy_mm;
      for (std::size_t i = 0; i < 6; ++i) {
        mean.field.c[i] += e.field.c[i];
      }
    }
    double const cnt = static_cast<double>(end - start);
    bool const constant = [&] {
      for (std::size_t s = start + 1; s < end; ++s) {
        if (!(timeline.entries[s] == timeline.entries[start])) {
          return false;
        }
      }
      return true;
    }();
    if (constant) {
      continue; // exact: the mean of identical states is the state itself
    }
    mean.pose.theta_deg /= cnt;
    mean.pose.dx_mm /= cnt;
    mean.pose.dy_mm /= cnt;
    for (double &c : mean.field.c) {
      c /= cnt;
    }
    for (std::size_t s = start; s < end; ++s) {
      out.entries[s] = mean;
    }
  }
  return out;
}

MotionTimeline motion_only(MotionTimeline const &timeline)
{
  MotionTimeline out = timeline;
  for (auto &e : out.entries) {
    e.field = FieldCoeffs{};
  }
  return out;
}

} // namespace mograppa
