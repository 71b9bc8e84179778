#include "mograppa/mobile_grappa.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "mograppa/numerics.hpp"

namespace mograppa {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double two_pi = 2.0 * std::numbers::pi;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::array<double, 3> pose_vec(Pose const &p)
{
  return {p.theta_deg, p.dx_mm, p.dy_mm};
}

// Candidate ordering for selection: distance, then nominal ky, then nominal kx.
struct Ranked
{
  double d2;
  double ky;
  double kx;
  std::size_t index;
  bool operator<(Ranked const &o) const
  {
    if (d2 != o.d2) {
      return d2 < o.d2;
    }
    if (ky != o.ky) {
      return ky < o.ky;
    }
    return kx < o.kx;
  }
};

SourceSelection finish_selection(std::vector<Ranked> &ranked, KPoint target, std::span<KPoint const> coords,
                                 std::span<KPoint const> nominal, KernelGeometry const &geom)
{
  auto const n = static_cast<std::size_t>(geom.n_src);
  if (ranked.size() < n) {
    throw Error(fmt::format("under-coverage: target ({}, {}) has {} candidate sources, needs {}", target.kx,
                            target.ky, ranked.size(), n));
  }
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n), ranked.end());
  double const r = geom.search_radius;
  double const far = ranked[n - 1].d2;
  if (far > 4.0 * r * r) {
    throw Error(fmt::format("under-coverage: target ({}, {}) has fewer than {} sources within radius {}", target.kx,
                            target.ky, n, 2.0 * r));
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    chosen.push_back(ranked[i].index);
  }
  std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
    if (nominal[a].ky != nominal[b].ky) {
      return nominal[a].ky < nominal[b].ky;
    }
    return nominal[a].kx < nominal[b].kx;
  });
  SourceSelection sel;
  sel.widened = far > r * r;
  sel.index = chosen;
  for (std::size_t i : chosen) {
    sel.offsets.push_back({coords[i].kx - target.kx, coords[i].ky - target.ky});
  }
  return sel;
}

} // namespace

bool ConditionRange::contains(Condition const &c, double tol) const
{
  auto const p = pose_vec(c.pose);
  for (std::size_t i = 0; i < 3; ++i) {
    if (p[i] < pose_min[i] - tol || p[i] > pose_max[i] + tol) {
      return false;
    }
  }
  for (std::size_t i = 0; i < 6; ++i) {
    if (c.field.c[i] < field_min[i] - tol || c.field.c[i] > field_max[i] + tol) {
      return false;
    }
  }
  // Without a field the echo time has no effect on the kernel.
  return c.field.is_zero() || (c.te >= te_min - tol && c.te <= te_max + tol);
}

int feature_length(KernelGeometry const &geom, int octaves)
{
  return 3 + 6 + 2 + geom.n_src * 2 * 2 * octaves;
}

std::vector<double> build_features(Condition const &cond, std::span<KPoint const> offsets, KPoint target,
                                   FeatureNorms const &norms)
{
  std::vector<double> f;
  f.reserve(11 + offsets.size() * 4 * static_cast<std::size_t>(norms.octaves));
  auto const p = pose_vec(cond.pose);
  for (std::size_t i = 0; i < 3; ++i) {
    f.push_back(p[i] / norms.pose[i]);
  }
  for (std::size_t i = 0; i < 6; ++i) {
    f.push_back(two_pi * cond.field.c[i] * cond.te / norms.field[i]);
  }
  f.push_back(target.kx / norms.kx);
  f.push_back(target.ky / norms.ky);
  for (auto const &o : offsets) {
    double w = norms.pe_base;
    for (int l = 0; l < norms.octaves; ++l) {
      f.push_back(std::sin(w * o.kx));
      f.push_back(std::cos(w * o.kx));
      f.push_back(std::sin(w * o.ky));
      f.push_back(std::cos(w * o.ky));
      w *= 2.0;
    }
  }
  return f;
}

FeatureNorms norms_for_range(ConditionRange const &range, Eigen::Index ny, Eigen::Index nx)
{
  FeatureNorms n;
  auto scale = [](double lo, double hi) {
    double const m = std::max(std::abs(lo), std::abs(hi));
    return m > 0.0 ? m : 1.0;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    n.pose[i] = scale(range.pose_min[i], range.pose_max[i]);
  }
  double const te = std::max(std::abs(range.te_min), std::abs(range.te_max));
  for (std::size_t i = 0; i < 6; ++i) {
    n.field[i] = scale(two_pi * range.field_min[i] * te, two_pi * range.field_max[i] * te);
  }
  n.kx = static_cast<double>(nx / 2);
  n.ky = static_cast<double>(ny / 2);
  return n;
}

SourceSelection select_sources(KPoint target, std::span<KPoint const> coords, std::span<KPoint const> nominal,
                               KernelGeometry const &geom)
{
  if (coords.size() != nominal.size()) {
    throw Error("select_sources: coordinate lists differ in length");
  }
  std::vector<Ranked> ranked;
  ranked.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double const dx = coords[i].kx - target.kx;
    double const dy = coords[i].ky - target.ky;
    ranked.push_back({dx * dx + dy * dy, nominal[i].ky, nominal[i].kx, i});
  }
  return finish_selection(ranked, target, coords, nominal, geom);
}

ShotGridding plan_shot_gridding(SamplingPlan const &plan, Mask const &mask, int shot, Pose const &pose,
                                double fov_mm, KernelGeometry const &geom)
{
  Eigen::Index const ny = plan.ny;
  Eigen::Index const nx = plan.nx;
  auto const xf = RigidTransform::from_pose(pose, fov_mm);
  ShotGridding g;
  std::vector<KPoint> coords;
  std::vector<KPoint> nominal;
  // Sample index by nominal cell, for windowed candidate search.
  std::vector<int> at(static_cast<std::size_t>(ny * nx), -1);
  for (Eigen::Index r = 0; r < ny; ++r) {
    if (plan.shot_of_line[static_cast<std::size_t>(r)] != shot) {
      continue;
    }
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (!mask(r, c)) {
        continue;
      }
      KPoint const k{k_coord(c, nx), k_coord(r, ny)};
      at[static_cast<std::size_t>(r * nx + c)] = static_cast<int>(coords.size());
      g.sample_row.push_back(r);
      g.sample_col.push_back(c);
      nominal.push_back(k);
      coords.push_back(xf.rotate_k_to_reference(k));
    }
  }

  std::unordered_map<Eigen::Index, std::size_t> seen;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  for (auto const &k : coords) {
    auto const row = static_cast<Eigen::Index>(std::lround(k.ky)) + ny / 2;
    auto const col = static_cast<Eigen::Index>(std::lround(k.kx)) + nx / 2;
    if (row < 0 || row >= ny || col < 0 || col >= nx) {
      ++g.dropped;
      continue;
    }
    if (seen.emplace(row * nx + col, cells.size()).second) {
      cells.emplace_back(row, col);
    }
  }

  auto const reach = static_cast<Eigen::Index>(std::ceil(2.0 * geom.search_radius)) + 1;
  std::vector<Ranked> ranked;
  for (auto const &[row, col] : cells) {
    KPoint const q{k_coord(col, nx), k_coord(row, ny)};
    // Candidates within twice the radius of q lie in a window around R q in nominal cells.
    double const cx = xf.cos_t * q.kx - xf.sin_t * q.ky;
    double const cy = xf.sin_t * q.kx + xf.cos_t * q.ky;
    auto const r0 = static_cast<Eigen::Index>(std::lround(cy)) + ny / 2;
    auto const c0 = static_cast<Eigen::Index>(std::lround(cx)) + nx / 2;
    ranked.clear();
    for (Eigen::Index r = std::max<Eigen::Index>(0, r0 - reach); r <= std::min(ny - 1, r0 + reach); ++r) {
      for (Eigen::Index c = std::max<Eigen::Index>(0, c0 - reach); c <= std::min(nx - 1, c0 + reach); ++c) {
        int const i = at[static_cast<std::size_t>(r * nx + c)];
        if (i < 0) {
          continue;
        }
        auto const ui = static_cast<std::size_t>(i);
        double const dx = coords[ui].kx - q.kx;
        double const dy = coords[ui].ky - q.ky;
        ranked.push_back({dx * dx + dy * dy, nominal[ui].ky, nominal[ui].kx, ui});
      }
    }
    GriddingTarget t;
    t.row = row;
    t.col = col;
    try {
      auto sel = finish_selection(ranked, q, coords, nominal, geom);
      t.sources = std::move(sel.index);
      t.offsets = std::move(sel.offsets);
      t.widened = sel.widened;
    } catch (Error const &) {
      // Nearest-sample fallback: the closest candidate is the cell's own sample.
      t.fallback = true;
      auto const best = std::min_element(ranked.begin(), ranked.end());
      t.sources = {best->index};
      t.offsets = {{coords[best->index].kx - q.kx, coords[best->index].ky - q.ky}};
    }
    g.targets.push_back(std::move(t));
  }
  return g;
}

CalibrationModel::CalibrationModel(MultiCoilKspace const &calib, std::span<ComplexGrid const> coils, double fov_mm)
  : coils_(coils.begin(), coils.end())
  , fov_mm_(fov_mm)
{
  if (calib.n_coils < 1 || calib.data.empty()) {
    throw Error("calibration model: no calibration data");
  }
  if (coils_.size() != static_cast<std::size_t>(calib.n_coils)) {
    throw Error(fmt::format("calibration model: {} coil maps for {} calibration coils", coils_.size(),
                            calib.n_coils));
  }
  Eigen::Index const ny = calib.ny();
  Eigen::Index const nx = calib.nx();
  // Measured block extent from the mask's central row and column.
  Eigen::Index n = 0;
  for (Eigen::Index c = 0; c < nx; ++c) {
    n += calib.mask(ny / 2, c) ? 1 : 0;
  }
  if (n < 24) {
    throw Error(fmt::format("calibration model: calibration block is {} wide, needs >= 24", n));
  }
  calib_half_ = static_cast<int>(n / 2);
  Eigen::Index const G = 2 * n;
  signal_scale_ = 0.0;

  RealGrid rss = RealGrid::Zero(G, G);
  for (int c = 0; c < calib.n_coils; ++c) {
    ComplexGrid k = ComplexGrid::Zero(G, G);
    auto const &src = calib.at(c, 0);
    for (Eigen::Index r = 0; r < ny; ++r) {
      for (Eigen::Index col = 0; col < nx; ++col) {
        if (!calib.mask(r, col)) {
          continue;
        }
        Eigen::Index const gr = r - ny / 2 + G / 2;
        Eigen::Index const gc = col - nx / 2 + G / 2;
        if (gr >= 0 && gr < G && gc >= 0 && gc < G) {
          k(gr, gc) = src(r, col);
          signal_scale_ = std::max(signal_scale_, std::abs(src(r, col)));
        }
      }
    }
    rss += ifft2c(k).abs2();
  }
  if (!(signal_scale_ > 0.0)) {
    throw Error("calibration model: calibration data are all zero");
  }
  object_ = rss.sqrt().cast<cd>();
}

std::vector<ComplexGrid> CalibrationModel::weighted_images(Condition const &cond) const
{
  MotionState const st{cond.pose, cond.field};
  return moved_weighted_images(object_, coils_, st, cond.te, fov_mm_);
}

std::vector<ComplexGrid> CalibrationModel::shifted_spectra(std::span<ComplexGrid const> images, KPoint offset) const
{
  Eigen::Index const G = grid();
  ComplexGrid ramp(G, G);
  for (Eigen::Index r = 0; r < G; ++r) {
    double const y = norm_coord(r, G);
    for (Eigen::Index c = 0; c < G; ++c) {
      ramp(r, c) = std::polar(1.0, -two_pi * (offset.kx * norm_coord(c, G) + offset.ky * y));
    }
  }
  std::vector<ComplexGrid> out;
  out.reserve(images.size());
  for (auto const &img : images) {
    out.push_back(fft2c(img * ramp));
  }
  return out;
}

std::vector<TrainSample> synthesize_training_set(CalibrationModel const &model, SamplingPlan const &plan,
                                                 std::span<Condition const> conditions, KernelGeometry const &geom,
                                                 FeatureNorms const &norms, TrainingSetOptions const &opts,
                                                 std::uint64_t seed)
{
  if (conditions.empty()) {
    throw Error("synthesize_training_set: no conditions");
  }
  if (opts.n_targets < 1 || opts.targets_per_pattern < 1) {
    throw Error("synthesize_training_set: n_targets and targets_per_pattern must be >= 1");
  }
  int const interior = model.calib_half() - opts.interior_margin;
  if (interior < 1) {
    throw Error("synthesize_training_set: calibration interior is empty");
  }
  Eigen::Index const G = model.grid();
  double const scale = model.signal_scale();
  auto const nc = static_cast<std::size_t>(geom.coils);
  auto const ns = static_cast<std::size_t>(geom.n_src);
  Mask const plan_mask = plan.mask();

  Condition const ref{};
  std::vector<ComplexGrid> const clean_img = model.weighted_images(ref);
  std::vector<ComplexGrid> const clean = model.shifted_spectra(clean_img, {0.0, 0.0});
  if (clean.size() != nc) {
    throw Error(fmt::format("synthesize_training_set: model has {} coils, geometry expects {}", clean.size(), nc));
  }

  std::vector<std::vector<TrainSample>> per_cond(conditions.size());
  parallel_for(conditions.size(), [&](std::size_t ci) {
    auto const &cond = conditions[ci];
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (ci + 1)));
    auto const images = model.weighted_images(cond);

    // Source patterns from the plan's gridding of every shot under this pose.
    std::vector<GriddingTarget> pool;
    for (int s = 0; s < plan.n_shots; ++s) {
      auto g = plan_shot_gridding(plan, plan_mask, s, cond.pose, model.fov_mm(), geom);
      for (auto &t : g.targets) {
        if (!t.fallback) {
          pool.push_back(std::move(t));
        }
      }
    }
    if (pool.empty()) {
      throw Error(fmt::format("synthesize_training_set: condition {} has no covered targets", ci));
    }

    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::uniform_int_distribution<int> pos(-interior, interior);
    auto const n_t = static_cast<std::size_t>(opts.n_targets);
    std::vector<std::size_t> pattern(n_t);
    std::vector<Eigen::Index> at_r(n_t);
    std::vector<Eigen::Index> at_c(n_t);
    std::vector<KPoint> points;
    points.reserve(n_t * ns);
    for (std::size_t j = 0; j < n_t; ++j) {
      if (j % static_cast<std::size_t>(opts.targets_per_pattern) == 0) {
        pattern[j] = pick(rng);
      } else {
        pattern[j] = pattern[j - 1];
      }
      int const qy = pos(rng);
      int const qx = pos(rng);
      at_r[j] = qy + G / 2;
      at_c[j] = qx + G / 2;
      for (auto const &o : pool[pattern[j]].offsets) {
        points.push_back({qx + o.kx, qy + o.ky});
      }
    }
    // Corrupted sources are the exact spectra of the moved images off the integer grid.
    auto const src = nudft_sample_many(images, points);

    auto &out = per_cond[ci];
    out.resize(n_t);
    for (std::size_t j = 0; j < n_t; ++j) {
      auto const &t = pool[pattern[j]];
      KPoint const plan_k{k_coord(t.col, plan.nx), k_coord(t.row, plan.ny)};
      auto &s = out[j];
      s.features = build_features(cond, t.offsets, plan_k, norms);
      s.src.resize(static_cast<Eigen::Index>(ns * nc));
      s.tgt.resize(static_cast<Eigen::Index>(nc));
      for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t k = 0; k < nc; ++k) {
          s.src(static_cast<Eigen::Index>(i * nc + k)) = src[k][j * ns + i] / scale;
        }
      }
      for (std::size_t k = 0; k < nc; ++k) {
        s.tgt(static_cast<Eigen::Index>(k)) = clean[k](at_r[j], at_c[j]) / scale;
      }
    }
  });

  std::vector<TrainSample> all;
  all.reserve(conditions.size() * static_cast<std::size_t>(opts.n_targets));
  for (auto &v : per_cond) {
    std::move(v.begin(), v.end(), std::back_inserter(all));
  }
  return all;
}

CMatrix fit_kernel_lsq(std::span<TrainSample const> samples, double lambda)
{
  if (samples.empty()) {
    throw Error("fit_kernel_lsq: no samples");
  }
  Eigen::Index const K = samples[0].src.size();
  Eigen::Index const C = samples[0].tgt.size();
  auto const n = static_cast<Eigen::Index>(samples.size());
  if (n < 2 * K) {
    throw Error(fmt::format("fit_kernel_lsq: {} samples, need at least {}", n, 2 * K));
  }
  CMatrix A(n, K);
  CMatrix B(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto const &s = samples[static_cast<std::size_t>(i)];
    if (s.src.size() != K || s.tgt.size() != C) {
      throw Error("fit_kernel_lsq: samples differ in shape");
    }
    A.row(i) = s.src.transpose();
    B.row(i) = s.tgt.transpose();
  }
  CMatrix const X = solve_regularized_lsq(A, B, lambda);
  return X.transpose();
}

double kernel_nrmse(std::span<TrainSample const> samples, std::function<CMatrix(std::size_t)> const &kernel_of)
{
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CMatrix const W = kernel_of(i);
    num += (W * samples[i].src - samples[i].tgt).squaredNorm();
    den += samples[i].tgt.squaredNorm();
  }
  if (!(den > 0.0)) {
    throw Error("kernel_nrmse: targets are all zero");
  }
  return std::sqrt(num / den);
}

namespace {

void unpack_kernel(Eigen::MatrixXd const &Y, Eigen::Index col, Eigen::Index C, Eigen::Index K, CMatrix &W)
{
  W.resize(C, K);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index i = 0; i < K; ++i) {
      Eigen::Index const o = 2 * (c * K + i);
      W(c, i) = cd(Y(o, col), Y(o + 1, col));
    }
  }
}

struct PackedSet
{
  Eigen::MatrixXd X; // features x n
  CMatrix S;         // K x n
  CMatrix T;         // C x n
};

PackedSet pack(std::span<TrainSample const> samples)
{
  PackedSet p;
  auto const n = static_cast<Eigen::Index>(samples.size());
  auto const F = static_cast<Eigen::Index>(samples[0].features.size());
  p.X.resize(F, n);
  p.S.resize(samples[0].src.size(), n);
  p.T.resize(samples[0].tgt.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto const &s = samples[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(s.features.size()) != F) {
      throw Error("training samples differ in feature length");
    }
    p.X.col(i) = Eigen::Map<Eigen::VectorXd const>(s.features.data(), F);
    p.S.col(i) = s.src;
    p.T.col(i) = s.tgt;
  }
  return p;
}

// Mean over columns of ||W(Y_j) s_j - t_j||^2; optional gradient with respect to Y.
double data_loss(Eigen::MatrixXd const &Y, CMatrix const &S, CMatrix const &T, Eigen::MatrixXd *dY)
{
  Eigen::Index const K = S.rows();
  Eigen::Index const C = T.rows();
  Eigen::Index const B = Y.cols();
  double loss = 0.0;
  if (dY != nullptr) {
    dY->setZero(Y.rows(), B);
  }
  double const inv = 1.0 / static_cast<double>(B);
  CMatrix W;
  for (Eigen::Index j = 0; j < B; ++j) {
    unpack_kernel(Y, j, C, K, W);
    CVector const r = W * S.col(j) - T.col(j);
    loss += r.squaredNorm();
    if (dY != nullptr) {
      for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index i = 0; i < K; ++i) {
          cd const g = 2.0 * inv * r(c) * std::conj(S(i, j));
          Eigen::Index const o = 2 * (c * K + i);
          (*dY)(o, j) = g.real();
          (*dY)(o + 1, j) = g.imag();
        }
      }
    }
  }
  return loss * inv;
}

double mean_loss(Mlp const &mlp, PackedSet const &p)
{
  Eigen::Index const n = p.X.cols();
  constexpr Eigen::Index chunk = 2048;
  double total = 0.0;
  for (Eigen::Index s = 0; s < n; s += chunk) {
    Eigen::Index const m = std::min(chunk, n - s);
    Eigen::MatrixXd const Y = mlp.forward(p.X.middleCols(s, m));
    total += data_loss(Y, p.S.middleCols(s, m), p.T.middleCols(s, m), nullptr) * static_cast<double>(m);
  }
  return total / static_cast<double>(n);
}

} // namespace

std::vector<CMatrix> KernelFamily::kernels(Eigen::MatrixXd const &features) const
{
  Eigen::MatrixXd const Y = mlp.forward(features);
  std::vector<CMatrix> out(static_cast<std::size_t>(Y.cols()));
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    unpack_kernel(Y, j, geom.coils, kernel_width(), out[static_cast<std::size_t>(j)]);
  }
  return out;
}

KernelFamily mlp_train(std::span<TrainSample const> samples, KernelGeometry const &geom, FeatureNorms const &norms,
                       ConditionRange const &range, double signal_scale, TrainingHyper const &hyper,
                       std::uint64_t seed)
{
  if (samples.size() < 1000) {
    throw Error(fmt::format("mlp_train: {} samples, need at least 1000", samples.size()));
  }
  if (hyper.batch < 1 || hyper.epochs < 0 || !(hyper.lr > 0.0)) {
    throw Error("mlp_train: invalid hyperparameters");
  }
  auto const t0 = Clock::now();
  PackedSet const data = pack(samples);
  if (data.S.rows() != geom.n_src * geom.coils || data.T.rows() != geom.coils) {
    throw Error("mlp_train: sample shapes do not match the kernel geometry");
  }
  auto const F = static_cast<int>(data.X.rows());
  int const n_out = 2 * geom.coils * geom.n_src * geom.coils;

  KernelFamily fam;
  fam.mlp = Mlp(F, hyper.hidden, n_out, seed);
  fam.mlp.set_precision(hyper.single_precision ? Mlp::Precision::Single : Mlp::Precision::Double);
  fam.norms = norms;
  fam.geom = geom;
  fam.range = range;
  fam.hyper = hyper;
  fam.signal_scale = signal_scale;
  fam.seed = seed;
  fam.initial_loss = mean_loss(fam.mlp, data);

  auto const n = static_cast<std::size_t>(data.X.cols());
  auto const bs = static_cast<std::size_t>(hyper.batch);
  std::size_t const per_epoch = (n + bs - 1) / bs;
  long const total = static_cast<long>(per_epoch) * hyper.epochs;
  Adam adam(fam.mlp.n_params(), AdamOptions{hyper.lr});
  std::mt19937_64 rng(seed + 1);
  std::vector<Eigen::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = static_cast<Eigen::Index>(i);
  }

  long step = 0;
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::size_t const lo = b * bs;
      std::size_t const hi = std::min(n, lo + bs);
      auto const m = static_cast<Eigen::Index>(hi - lo);
      Eigen::MatrixXd Xb(data.X.rows(), m);
      CMatrix Sb(data.S.rows(), m);
      CMatrix Tb(data.T.rows(), m);
      for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::Index const src = order[lo + static_cast<std::size_t>(j)];
        Xb.col(j) = data.X.col(src);
        Sb.col(j) = data.S.col(src);
        Tb.col(j) = data.T.col(src);
      }
      double const loss = fam.mlp.value_and_gradient(
        Xb, [&](Eigen::MatrixXd const &Y, Eigen::MatrixXd &dY) { return data_loss(Y, Sb, Tb, &dY); }, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw Error(fmt::format("mlp_train: non-finite loss at epoch {} batch {}", epoch, b));
      }
      adam.step(fam.mlp.params(), grad, cosine_lr(hyper.lr, step, total));
      ++step;
    }
  }
  fam.final_loss = mean_loss(fam.mlp, data);
  fam.train_time_s = seconds_since(t0);
  return fam;
}

double family_loss(KernelFamily const &family, std::span<TrainSample const> samples)
{
  if (samples.empty()) {
    throw Error("family_loss: no samples");
  }
  return mean_loss(family.mlp, pack(samples));
}

MultiCoilKspace clean_kspace_with(MultiCoilKspace const &y, SamplingPlan const &plan, double fov_mm,
                                  ShotConditions const &condition_of, KernelFamily const &family,
                                  std::span<int const> shots, CleanStats *stats)
{
  if (y.n_coils != family.geom.coils) {
    throw Error(fmt::format("clean_kspace: data has {} coils, family expects {}", y.n_coils, family.geom.coils));
  }
  if (y.ny() != plan.ny || y.nx() != plan.nx) {
    throw Error("clean_kspace: data size does not match plan");
  }
  int const C = y.n_coils;
  int const E = y.n_echoes;
  Eigen::Index const ny = plan.ny;
  Eigen::Index const nx = plan.nx;

  struct ShotResult
  {
    ShotGridding grid;
    std::vector<CMatrix> values; // per echo: C x targets
    bool extrapolated = false;
  };
  std::vector<ShotResult> results(shots.size());

  parallel_for(shots.size(), [&](std::size_t si) {
    int const shot = shots[si];
    auto &res = results[si];
    Condition const c0 = condition_of(shot, 0);
    res.grid = plan_shot_gridding(plan, y.mask, shot, c0.pose, fov_mm, family.geom);
    auto const &g = res.grid;
    auto const xf = RigidTransform::from_pose(c0.pose, fov_mm);
    std::vector<cd> unshift(g.sample_row.size());
    for (std::size_t i = 0; i < unshift.size(); ++i) {
      KPoint const k{k_coord(g.sample_col[i], nx), k_coord(g.sample_row[i], ny)};
      unshift[i] = std::conj(xf.translation_phase(k));
    }
    auto const T = static_cast<Eigen::Index>(g.targets.size());
    int const F = feature_length(family.geom, family.norms.octaves);
    for (int e = 0; e < E; ++e) {
      Condition const cond = condition_of(shot, e);
      if (!(cond.pose == c0.pose)) {
        throw Error("clean_kspace: pose must not change across echoes of one shot");
      }
      res.extrapolated = res.extrapolated || !family.range.contains(cond);
      Eigen::MatrixXd X(F, T);
      for (Eigen::Index t = 0; t < T; ++t) {
        auto const &tg = g.targets[static_cast<std::size_t>(t)];
        if (tg.fallback) {
          X.col(t).setZero();
          continue;
        }
        auto const f = build_features(cond, tg.offsets, {k_coord(tg.col, nx), k_coord(tg.row, ny)}, family.norms);
        X.col(t) = Eigen::Map<Eigen::VectorXd const>(f.data(), F);
      }
      auto const W = family.kernels(X);
      CMatrix vals(C, T);
      CVector src(family.kernel_width());
      for (Eigen::Index t = 0; t < T; ++t) {
        auto const &tg = g.targets[static_cast<std::size_t>(t)];
        if (tg.fallback) {
          std::size_t const i = tg.sources[0];
          for (int c = 0; c < C; ++c) {
            vals(c, t) = unshift[i] * y.at(c, e)(g.sample_row[i], g.sample_col[i]);
          }
          continue;
        }
        for (std::size_t s = 0; s < tg.sources.size(); ++s) {
          std::size_t const i = tg.sources[s];
          for (int c = 0; c < C; ++c) {
            src(static_cast<Eigen::Index>(s) * C + c) = unshift[i] * y.at(c, e)(g.sample_row[i], g.sample_col[i]);
          }
        }
        vals.col(t) = W[static_cast<std::size_t>(t)] * src;
      }
      res.values.push_back(std::move(vals));
    }
  });

  MultiCoilKspace out(C, E, ny, nx);
  out.line_shot = plan.shot_of_line;
  RealGrid count = RealGrid::Zero(ny, nx);
  CleanStats st;
  // Fixed shot order keeps the reduction bit-reproducible.
  for (auto const &res : results) {
    st.dropped += res.grid.dropped;
    st.extrapolated = st.extrapolated || res.extrapolated;
    for (std::size_t t = 0; t < res.grid.targets.size(); ++t) {
      auto const &tg = res.grid.targets[t];
      ++st.targets;
      st.fallback += tg.fallback ? 1 : 0;
      st.widened += tg.widened ? 1 : 0;
      count(tg.row, tg.col) += 1.0;
      for (int e = 0; e < E; ++e) {
        for (int c = 0; c < C; ++c) {
          out.at(c, e)(tg.row, tg.col) += res.values[static_cast<std::size_t>(e)](c, static_cast<Eigen::Index>(t));
        }
      }
    }
  }
  out.mask = count > 0.0;
  RealGrid const inv = out.mask.select(1.0 / count, 0.0);
  for (auto &g : out.data) {
    g *= inv.cast<cd>();
  }
  if (stats != nullptr) {
    *stats = st;
  }
  return out;
}

MultiCoilKspace clean_kspace(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                             KernelFamily const &family, CleanStats *stats)
{
  if (timeline.size() != static_cast<std::size_t>(plan.n_shots)) {
    throw Error(fmt::format("clean_kspace: timeline has {} shots, plan expects {}", timeline.size(), plan.n_shots));
  }
  if (static_cast<std::size_t>(y.n_echoes) != plan.n_echoes()) {
    throw Error("clean_kspace: echo count does not match plan");
  }
  std::vector<int> shots(static_cast<std::size_t>(plan.n_shots));
  for (int s = 0; s < plan.n_shots; ++s) {
    shots[static_cast<std::size_t>(s)] = s;
  }
  auto const cond = [&](int shot, int echo) {
    auto const &e = timeline.entries[static_cast<std::size_t>(shot)];
    return Condition{e.pose, e.field, plan.tes[static_cast<std::size_t>(echo)]};
  };
  return clean_kspace_with(y, plan, timeline.fov_mm, cond, family, shots, stats);
}

ReconResult mobile_grappa_recon(MultiCoilKspace const &y, MotionTimeline const &timeline, SamplingPlan const &plan,
                                KernelFamily const &family, std::span<ComplexGrid const> coils, CgOptions const &opts)
{
  auto const t0 = Clock::now();
  CleanStats st;
  auto const cleaned = clean_kspace(y, timeline, plan, family, &st);
  double const prep = seconds_since(t0);
  auto out = cg_sense(cleaned, coils, cleaned.mask, opts);
  out.method = "mobile";
  out.prep_time_s = prep;
  out.wall_time_s = prep + out.solve_time_s;
  out.fallback_targets = st.fallback;
  out.dropped_targets = st.dropped;
  return out;
}

ReconResult clustered_mobile_grappa(MultiCoilKspace const &y, MotionTimeline const &timeline,
                                    SamplingPlan const &plan, FamilyBuilder const &builder,
                                    std::span<ComplexGrid const> coils, int K, ClusterWeights const &weights,
                                    std::uint64_t seed, CgOptions const &opts)
{
  if (timeline.size() != static_cast<std::size_t>(plan.n_shots)) {
    throw Error(fmt::format("clustered_mobile_grappa: timeline has {} shots, plan expects {}", timeline.size(),
                            plan.n_shots));
  }
  auto const t0 = Clock::now();
  auto const cl = cluster_timeline(timeline, K, weights, seed);

  std::vector<MotionState> rel(timeline.size());
  for (std::size_t s = 0; s < timeline.size(); ++s) {
    auto const &e = timeline.entries[s];
    auto const &c = cl.centroids[static_cast<std::size_t>(cl.cluster_of_shot[s])];
    rel[s].pose = relative_pose(e.pose, c.pose);
    for (std::size_t i = 0; i < 6; ++i) {
      rel[s].field.c[i] = e.field.c[i] - c.field.c[i];
    }
  }
  auto const cond = [&](int shot, int echo) {
    auto const &r = rel[static_cast<std::size_t>(shot)];
    return Condition{r.pose, r.field, plan.tes[static_cast<std::size_t>(echo)]};
  };

  std::vector<Condition> conds;
  for (int s = 0; s < plan.n_shots; ++s) {
    for (std::size_t e = 0; e < plan.n_echoes(); ++e) {
      Condition const c = cond(s, static_cast<int>(e));
      if (std::find(conds.begin(), conds.end(), c) == conds.end()) {
        conds.push_back(c);
      }
    }
  }
  double const setup = seconds_since(t0);
  auto const t_train = Clock::now();
  KernelFamily const family = builder(conds);
  double const train = seconds_since(t_train);

  auto const t1 = Clock::now();
  auto const n_clusters = cl.centroids.size();
  std::vector<MultiCoilKspace> cleaned(n_clusters);
  CleanStats total;
  for (std::size_t k = 0; k < n_clusters; ++k) {
    std::vector<int> shots;
    for (int s = 0; s < plan.n_shots; ++s) {
      if (cl.cluster_of_shot[static_cast<std::size_t>(s)] == static_cast<int>(k)) {
        shots.push_back(s);
      }
    }
    CleanStats st;
    cleaned[k] = clean_kspace_with(y, plan, timeline.fov_mm, cond, family, shots, &st);
    total.fallback += st.fallback;
    total.dropped += st.dropped;
  }
  double const prep = setup + seconds_since(t1);

  std::vector<StateBlock> blocks;
  for (std::size_t k = 0; k < n_clusters; ++k) {
    blocks.push_back({cl.centroids[k], cleaned[k].mask, &cleaned[k]});
  }
  auto out = aligned_sense_blocks(blocks, coils, plan.tes, timeline.fov_mm, opts);
  out.method = "mobile-cluster";
  out.prep_time_s = prep;
  out.train_time_s = train;
  out.wall_time_s = prep + out.solve_time_s;
  out.fallback_targets = total.fallback;
  out.dropped_targets = total.dropped;
  return out;
}

ConditionRange range_of(std::span<Condition const> conditions, double margin)
{
  if (conditions.empty()) {
    throw Error("range_of: no conditions");
  }
  ConditionRange r;
  auto const p0 = pose_vec(conditions[0].pose);
  for (std::size_t i = 0; i < 3; ++i) {
    r.pose_min[i] = r.pose_max[i] = p0[i];
  }
  r.field_min = r.field_max = conditions[0].field.c;
  r.te_min = r.te_max = conditions[0].te;
  for (auto const &c : conditions) {
    auto const p = pose_vec(c.pose);
    for (std::size_t i = 0; i < 3; ++i) {
      r.pose_min[i] = std::min(r.pose_min[i], p[i]);
      r.pose_max[i] = std::max(r.pose_max[i], p[i]);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      r.field_min[i] = std::min(r.field_min[i], c.field.c[i]);
      r.field_max[i] = std::max(r.field_max[i], c.field.c[i]);
    }
    r.te_min = std::min(r.te_min, c.te);
    r.te_max = std::max(r.te_max, c.te);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    double const w = margin * (r.pose_max[i] - r.pose_min[i]);
    r.pose_min[i] -= w;
    r.pose_max[i] += w;
  }
  for (std::size_t i = 0; i < 6; ++i) {
    double const w = margin * (r.field_max[i] - r.field_min[i]);
    r.field_min[i] -= w;
    r.field_max[i] += w;
  }
  return r;
}

std::vector<Condition> conditions_from_timeline(MotionTimeline const &timeline, std::span<double const> tes,
                                                ConditionListOptions const &opts, std::uint64_t seed)
{
  if (tes.empty()) {
    throw Error("conditions_from_timeline: no echo times");
  }
  if (!(opts.margin >= 0.0) || opts.n_random < 0) {
    throw Error("conditions_from_timeline: margin must be >= 0 and n_random >= 0");
  }
  std::vector<Condition> out;
  for (auto const &st : timeline.distinct_states()) {
    // A zero-field state yields identical features and data at every echo time.
    auto const n_te = st.field.is_zero() ? std::size_t{1} : tes.size();
    for (std::size_t e = 0; e < n_te; ++e) {
      out.push_back({st.pose, st.field, tes[e]});
    }
  }
  return widen_conditions(std::move(out), tes, opts, seed);
}

std::vector<Condition> widen_conditions(std::vector<Condition> out, std::span<double const> tes,
                                        ConditionListOptions const &opts, std::uint64_t seed)
{
  if (out.empty() || tes.empty()) {
    throw Error("widen_conditions: no conditions or echo times");
  }
  if (!(opts.margin >= 0.0) || opts.n_random < 0) {
    throw Error("widen_conditions: margin must be >= 0 and n_random >= 0");
  }
  auto const r = range_of(out, opts.margin);
  auto add = [&](Condition const &c) {
    if (std::find(out.begin(), out.end(), c) == out.end()) {
      out.push_back(c);
    }
  };
  if (opts.include_corners) {
    Condition lo{{r.pose_min[0], r.pose_min[1], r.pose_min[2]}, {r.field_min}, r.te_min};
    Condition hi{{r.pose_max[0], r.pose_max[1], r.pose_max[2]}, {r.field_max}, r.te_max};
    add(lo);
    add(hi);
  }
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };
  for (int i = 0; i < opts.n_random; ++i) {
    Condition c;
    c.pose = {uni(r.pose_min[0], r.pose_max[0]), uni(r.pose_min[1], r.pose_max[1]), uni(r.pose_min[2], r.pose_max[2])};
    for (std::size_t j = 0; j < 6; ++j) {
      c.field.c[j] = uni(r.field_min[j], r.field_max[j]);
    }
    c.te = tes[std::uniform_int_distribution<std::size_t>(0, tes.size() - 1)(rng)];
    add(c);
  }
  return out;
}

KernelFamily train_family(CalibrationModel const &model, SamplingPlan const &plan,
                          std::span<Condition const> conditions, TrainingSetup const &setup, std::uint64_t seed)
{
  auto const t0 = Clock::now();
  auto const range = range_of(conditions, 0.0);
  auto const norms = norms_for_range(range, plan.ny, plan.nx);
  auto const samples = synthesize_training_set(model, plan, conditions, setup.geom, norms, setup.data, seed);
  auto fam = mlp_train(samples, setup.geom, norms, range, model.signal_scale(), setup.hyper, seed);
  fam.train_time_s = seconds_since(t0);
  return fam;
}

} // namespace mograppa
