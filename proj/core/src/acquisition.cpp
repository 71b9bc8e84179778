#include "mograppa/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mograppa/numerics.hpp"

namespace mograppa {

Mask SamplingPlan::mask() const
{
  Mask m = Mask::Constant(ny, nx, false);
  for (Eigen::Index r = 0; r < ny; ++r) {
    if (shot_of_line[static_cast<std::size_t>(r)] >= 0) {
      m.row(r).setConstant(true);
    }
  }
  return m;
}

std::vector<Eigen::Index> SamplingPlan::sampled_lines() const
{
  std::vector<Eigen::Index> lines;
  for (Eigen::Index r = 0; r < ny; ++r) {
    if (shot_of_line[static_cast<std::size_t>(r)] >= 0) {
      lines.push_back(r);
    }
  }
  return lines;
}

std::vector<Eigen::Index> SamplingPlan::lines_of_shot(int shot) const
{
  std::vector<Eigen::Index> lines;
  for (Eigen::Index r = 0; r < ny; ++r) {
    if (shot_of_line[static_cast<std::size_t>(r)] == shot) {
      lines.push_back(r);
    }
  }
  return lines;
}

SamplingPlan make_sampling_plan(Eigen::Index ny, Eigen::Index nx, int R, int acs, int n_shots, std::vector<double> tes)
{
  if (ny < 2 || nx < 2) {
    throw Error("make_sampling_plan: grid must be at least 2x2");
  }
  if (R < 1) {
    throw Error(fmt::format("make_sampling_plan: R must be >= 1, got {}", R));
  }
  if (acs < 0 || acs >= ny / 2) {
    throw Error(fmt::format("make_sampling_plan: ACS half-width {} must lie in [0, ny/2 = {})", acs, ny / 2));
  }
  if (tes.empty()) {
    throw Error("make_sampling_plan: need at least one echo time");
  }
  for (std::size_t i = 0; i < tes.size(); ++i) {
    if (!(tes[i] >= 0.0) || (i > 0 && !(tes[i] > tes[i - 1]))) {
      throw Error("make_sampling_plan: echo times must be >= 0 and strictly increasing");
    }
  }
  SamplingPlan plan;
  plan.ny = ny;
  plan.nx = nx;
  plan.R = R;
  plan.acs = acs;
  plan.tes = std::move(tes);
  plan.shot_of_line.assign(static_cast<std::size_t>(ny), -1);

  std::vector<Eigen::Index> lines;
  for (Eigen::Index r = 0; r < ny; ++r) {
    auto const ky = static_cast<long>(k_coord(r, ny));
    bool const regular = ((ky % R) + R) % R == 0;
    bool const in_acs = ky >= -acs && ky < acs;
    if (regular || in_acs) {
      lines.push_back(r);
    }
  }
  if (n_shots < 1 || static_cast<std::size_t>(n_shots) > lines.size()) {
    throw Error(fmt::format("make_sampling_plan: n_shots = {} must lie in [1, {}] sampled lines", n_shots,
                            lines.size()));
  }
  plan.n_shots = n_shots;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    plan.shot_of_line[static_cast<std::size_t>(lines[i])] = static_cast<int>(i % static_cast<std::size_t>(n_shots));
  }
  return plan;
}

MultiCoilKspace::MultiCoilKspace(int coils, int echoes, Eigen::Index ny, Eigen::Index nx)
  : n_coils(coils)
  , n_echoes(echoes)
  , data(static_cast<std::size_t>(coils * echoes), ComplexGrid::Zero(ny, nx))
  , mask(Mask::Constant(ny, nx, false))
  , line_shot(static_cast<std::size_t>(ny), -1)
{
}

std::vector<ComplexGrid> MultiCoilKspace::echo(int e) const
{
  auto const first = data.begin() + e * n_coils;
  return {first, first + n_coils};
}

MultiCoilKspace MultiCoilKspace::scaled(cd a) const
{
  MultiCoilKspace out = *this;
  for (auto &d : out.data) {
    d *= a;
  }
  return out;
}

std::vector<ComplexGrid> moved_weighted_images(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                               MotionState const &state, double te, double fov_mm)
{
  Eigen::Index const ny = object.rows();
  Eigen::Index const nx = object.cols();
  auto const xf = RigidTransform::from_pose(state.pose, fov_mm);
  bool const has_field = !state.field.is_zero() && te != 0.0;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<ComplexGrid> out(coils.size(), ComplexGrid::Zero(ny, nx));
  for (Eigen::Index r = 0; r < ny; ++r) {
    double const uy = norm_coord(r, ny);
    for (Eigen::Index c = 0; c < nx; ++c) {
      cd const m = object(r, c);
      if (m == cd(0.0)) {
        continue;
      }
      double const ux = norm_coord(c, nx);
      double x, y;
      xf.apply(ux, uy, x, y);
      cd const w = has_field ? m * std::polar(1.0, two_pi * state.field.at(x, y) * te) : m;
      for (std::size_t ic = 0; ic < coils.size(); ++ic) {
        auto const &map = coils[ic];
        double const py = y * static_cast<double>(map.rows()) + static_cast<double>(map.rows() / 2);
        double const px = x * static_cast<double>(map.cols()) + static_cast<double>(map.cols() / 2);
        out[ic](r, c) = w * sample_bilinear(map, py, px);
      }
    }
  }
  return out;
}

std::vector<std::vector<cd>> sample_moved(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                          MotionState const &state, double te, double fov_mm,
                                          std::span<KPoint const> nominal)
{
  auto const xf = RigidTransform::from_pose(state.pose, fov_mm);
  double const by = static_cast<double>(object.rows()) / 2.0;
  double const bx = static_cast<double>(object.cols()) / 2.0;
  std::vector<KPoint> inband;
  std::vector<std::size_t> where;
  inband.reserve(nominal.size());
  for (std::size_t j = 0; j < nominal.size(); ++j) {
    KPoint const kr = xf.rotate_k_to_reference(nominal[j]);
    if (std::abs(kr.kx) <= bx && std::abs(kr.ky) <= by) {
      inband.push_back(kr);
      where.push_back(j);
    }
  }
  auto const images = moved_weighted_images(object, coils, state, te, fov_mm);
  auto const sampled = nudft_sample_many(images, inband);
  std::vector<std::vector<cd>> out(coils.size(), std::vector<cd>(nominal.size(), cd(0.0)));
  for (std::size_t j = 0; j < inband.size(); ++j) {
    cd const ph = xf.translation_phase(nominal[where[j]]);
    for (std::size_t c = 0; c < coils.size(); ++c) {
      out[c][where[j]] = ph * sampled[c][j];
    }
  }
  return out;
}

MultiCoilKspace simulate_acquisition(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                     MotionTimeline const &timeline, SamplingPlan const &plan,
                                     AcquisitionOptions const &options)
{
  if (timeline.size() != static_cast<std::size_t>(plan.n_shots)) {
    throw Error(fmt::format("simulate_acquisition: timeline has {} shots, plan expects {}", timeline.size(),
                            plan.n_shots));
  }
  if (object.rows() != plan.ny || object.cols() != plan.nx) {
    throw Error("simulate_acquisition: object size does not match plan");
  }
  if (coils.empty()) {
    throw Error("simulate_acquisition: need at least one coil");
  }
  int const nc = static_cast<int>(coils.size());
  int const ne = static_cast<int>(plan.n_echoes());
  MultiCoilKspace out(nc, ne, plan.ny, plan.nx);
  out.mask = plan.mask();
  out.line_shot = plan.shot_of_line;

  struct Job
  {
    int shot;
    int echo;
  };
  std::vector<Job> jobs;
  for (int s = 0; s < plan.n_shots; ++s) {
    for (int e = 0; e < ne; ++e) {
      jobs.push_back({s, e});
    }
  }
  parallel_for(jobs.size(), [&](std::size_t i) {
    auto const [shot, echo] = jobs[i];
    auto const lines = plan.lines_of_shot(shot);
    std::vector<KPoint> pts;
    pts.reserve(lines.size() * static_cast<std::size_t>(plan.nx));
    for (auto r : lines) {
      for (Eigen::Index c = 0; c < plan.nx; ++c) {
        pts.push_back({k_coord(c, plan.nx), k_coord(r, plan.ny)});
      }
    }
    auto const values =
      sample_moved(object, coils, timeline.entries[static_cast<std::size_t>(shot)],
                   plan.tes[static_cast<std::size_t>(echo)], timeline.fov_mm, pts);
    for (int c = 0; c < nc; ++c) {
      auto &grid = out.at(c, echo);
      std::size_t j = 0;
      for (auto r : lines) {
        for (Eigen::Index col = 0; col < plan.nx; ++col) {
          grid(r, col) = values[static_cast<std::size_t>(c)][j++];
        }
      }
    }
  });

  if (options.noise_sigma > 0.0) {
    std::mt19937_64 rng(options.noise_seed);
    std::normal_distribution<double> normal(0.0, options.noise_sigma);
    for (auto &grid : out.data) {
      for (Eigen::Index r = 0; r < plan.ny; ++r) {
        for (Eigen::Index c = 0; c < plan.nx; ++c) {
          if (out.mask(r, c)) {
            grid(r, c) += cd(normal(rng), normal(rng));
          }
        }
      }
    }
  }
  return out;
}

Mask centered_block(Eigen::Index ny, Eigen::Index nx, int size)
{
  Mask m = Mask::Constant(ny, nx, false);
  Eigen::Index const r0 = ny / 2 - size / 2;
  Eigen::Index const c0 = nx / 2 - size / 2;
  m.block(r0, c0, size, size).setConstant(true);
  return m;
}

MultiCoilKspace acquire_calibration(ComplexGrid const &object, std::span<ComplexGrid const> coils,
                                    SamplingPlan const &plan, int calib_size)
{
  if (calib_size < 2 || calib_size > std::min(plan.ny, plan.nx)) {
    throw Error(fmt::format("acquire_calibration: calib_size {} must lie in [2, {}]", calib_size,
                            std::min(plan.ny, plan.nx)));
  }
  int const nc = static_cast<int>(coils.size());
  MultiCoilKspace out(nc, 1, plan.ny, plan.nx);
  out.mask = centered_block(plan.ny, plan.nx, calib_size);
  for (int c = 0; c < nc; ++c) {
    ComplexGrid const k = fft2c(object * coils[static_cast<std::size_t>(c)]);
    out.at(c, 0) = out.mask.select(k, cd(0.0));
  }
  Eigen::Index const r0 = plan.ny / 2 - calib_size / 2;
  for (Eigen::Index r = r0; r < r0 + calib_size; ++r) {
    out.line_shot[static_cast<std::size_t>(r)] = 0;
  }
  return out;
}

CoilEstimate estimate_coil_maps(MultiCoilKspace const &calib, double threshold)
{
  if (calib.n_coils < 1) {
    throw Error("estimate_coil_maps: no coils");
  }
  Eigen::Index const ny = calib.ny();
  Eigen::Index const nx = calib.nx();
  std::vector<ComplexGrid> imgs;
  imgs.reserve(static_cast<std::size_t>(calib.n_coils));
  RealGrid rss = RealGrid::Zero(ny, nx);
  for (int c = 0; c < calib.n_coils; ++c) {
    imgs.push_back(ifft2c(calib.mask.select(calib.at(c, 0), cd(0.0))));
    rss += imgs.back().abs2();
  }
  rss = rss.sqrt();
  double const peak = rss.maxCoeff();
  if (!(peak > 0.0)) {
    throw Error("estimate_coil_maps: calibration data are all zero");
  }
  CoilEstimate est;
  est.support = rss > threshold * peak;
  est.rss = rss;
  RealGrid const inv = est.support.select(1.0 / rss, 0.0);
  for (auto &img : imgs) {
    est.maps.push_back(img * inv.cast<cd>());
  }
  return est;
}

std::vector<ComplexGrid> extrapolate_coil_maps(CoilEstimate const &est, int degree)
{
  if (degree < 0) {
    throw Error("extrapolate_coil_maps: degree must be >= 0");
  }
  if (est.maps.empty()) {
    throw Error("extrapolate_coil_maps: no maps");
  }
  Eigen::Index const ny = est.support.rows();
  Eigen::Index const nx = est.support.cols();
  auto const n_fit = static_cast<Eigen::Index>(est.support.count());
  Eigen::Index const n_terms = (degree + 1) * (degree + 2) / 2;
  if (n_fit < n_terms) {
    throw Error(fmt::format("extrapolate_coil_maps: {} support pixels cannot fit {} terms", n_fit, n_terms));
  }

  // Monomials x^i y^j on [-1, 1) coordinates.
  auto basis_row = [&](Eigen::Index r, Eigen::Index c, Eigen::Ref<Eigen::RowVectorXcd> out) {
    double const x = 2.0 * norm_coord(c, nx);
    double const y = 2.0 * norm_coord(r, ny);
    Eigen::Index t = 0;
    for (int d = 0; d <= degree; ++d) {
      for (int j = 0; j <= d; ++j) {
        out(t++) = std::pow(x, d - j) * std::pow(y, j);
      }
    }
  };

  Eigen::RowVectorXcd row(n_terms);
  CMatrix A(n_fit, n_terms);
  CMatrix B(n_fit, static_cast<Eigen::Index>(est.maps.size()));
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (!est.support(r, c)) {
        continue;
      }
      basis_row(r, c, row);
      A.row(i) = row;
      for (std::size_t k = 0; k < est.maps.size(); ++k) {
        B(i, static_cast<Eigen::Index>(k)) = est.maps[k](r, c);
      }
      ++i;
    }
  }
  CMatrix const coef = solve_regularized_lsq(A, B, 1e-9 * static_cast<double>(n_fit));

  std::vector<ComplexGrid> out = est.maps;
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (est.support(r, c)) {
        continue;
      }
      basis_row(r, c, row);
      Eigen::RowVectorXcd const v = row * coef;
      double const norm = v.norm();
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k](r, c) = norm > 0.0 ? v(static_cast<Eigen::Index>(k)) / norm : cd(0.0);
      }
    }
  }
  return out;
}

} // namespace mograppa
