#include "mograppa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mograppa/numerics.hpp"

namespace mograppa {

namespace {

constexpr double deg2rad = std::numbers::pi / 180.0;

struct Ellipse
{
  double intensity, a, b, x0, y0, phi_deg;
};

// Original Shepp-Logan table with intensities halved to span [0, 1]; coordinates in [-1, 1].
// Every pixel inside the outer ellipse is nonzero (brain 0.51, ventricles 0.50, skull 1.0).
constexpr std::array<Ellipse, 10> kPhantom{{
  {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
  {-0.49, 0.6624, 0.874, 0.0, -0.0184, 0.0},
  {-0.01, 0.11, 0.31, 0.22, 0.0, -18.0},
  {-0.01, 0.16, 0.41, -0.22, 0.0, 18.0},
  {0.005, 0.21, 0.25, 0.0, 0.35, 0.0},
  {0.005, 0.046, 0.046, 0.0, 0.1, 0.0},
  {0.005, 0.046, 0.046, 0.0, -0.1, 0.0},
  {0.005, 0.046, 0.023, -0.08, -0.605, 0.0},
  {0.005, 0.023, 0.023, 0.0, -0.606, 0.0},
  {0.005, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

bool inside(Ellipse const &e, double X, double Y)
{
  double const phi = e.phi_deg * deg2rad;
  double const c = std::cos(phi);
  double const s = std::sin(phi);
  double const tx = X - e.x0;
  double const ty = Y - e.y0;
  double const xr = tx * c + ty * s;
  double const yr = -tx * s + ty * c;
  return (xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b) <= 1.0;
}

// Phantom coordinates: X to the right, Y up, both spanning [-1, 1) across the grid.
void phantom_coords(Eigen::Index row, Eigen::Index col, Eigen::Index ny, Eigen::Index nx, double &X, double &Y)
{
  X = 2.0 * norm_coord(col, nx);
  Y = -2.0 * norm_coord(row, ny);
}

} // namespace

std::vector<MotionState> MotionTimeline::distinct_states() const
{
  std::vector<MotionState> out;
  for (auto const &e : entries) {
    if (std::find(out.begin(), out.end(), e) == out.end()) {
      out.push_back(e);
    }
  }
  return out;
}

RigidTransform RigidTransform::from_pose(Pose const &pose, double fov_mm)
{
  if (!(fov_mm > 0.0)) {
    throw Error("pose: FOV must be positive");
  }
  RigidTransform t;
  double const th = pose.theta_deg * deg2rad;
  t.cos_t = pose.theta_deg == 0.0 ? 1.0 : std::cos(th);
  t.sin_t = pose.theta_deg == 0.0 ? 0.0 : std::sin(th);
  t.dx = pose.dx_mm / fov_mm;
  t.dy = pose.dy_mm / fov_mm;
  return t;
}

cd RigidTransform::translation_phase(KPoint const &k) const
{
  return std::polar(1.0, -2.0 * std::numbers::pi * (k.kx * dx + k.ky * dy));
}

Pose relative_pose(Pose const &moved, Pose const &reference)
{
  // moved = delta o reference  =>  delta = moved o reference^-1
  double const th = (moved.theta_deg - reference.theta_deg) * deg2rad;
  double const c = std::cos(th);
  double const s = std::sin(th);
  Pose d;
  d.theta_deg = moved.theta_deg - reference.theta_deg;
  d.dx_mm = moved.dx_mm - (c * reference.dx_mm - s * reference.dy_mm);
  d.dy_mm = moved.dy_mm - (s * reference.dx_mm + c * reference.dy_mm);
  return d;
}

ComplexGrid shepp_logan(Eigen::Index ny, Eigen::Index nx)
{
  if (ny < 32 || nx < 32) {
    throw Error(fmt::format("shepp_logan: grid must be at least 32x32, got {}x{}", ny, nx));
  }
  ComplexGrid img = ComplexGrid::Zero(ny, nx);
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      double X, Y;
      phantom_coords(r, c, ny, nx, X, Y);
      double v = 0.0;
      for (auto const &e : kPhantom) {
        if (inside(e, X, Y)) {
          v += e.intensity;
        }
      }
      img(r, c) = cd(std::clamp(v, 0.0, 1.0), 0.0);
    }
  }
  return img;
}

ComplexGrid smooth_gaussian(ComplexGrid const &img, double sigma_px)
{
  if (!(sigma_px >= 0.0)) {
    throw Error("smooth_gaussian: sigma must be >= 0");
  }
  if (sigma_px == 0.0) {
    return img;
  }
  Eigen::Index const ny = img.rows();
  Eigen::Index const nx = img.cols();
  ComplexGrid k = fft2c(img);
  double const a = 2.0 * std::numbers::pi * std::numbers::pi * sigma_px * sigma_px;
  for (Eigen::Index r = 0; r < ny; ++r) {
    double const fy = k_coord(r, ny) / static_cast<double>(ny);
    for (Eigen::Index c = 0; c < nx; ++c) {
      double const fx = k_coord(c, nx) / static_cast<double>(nx);
      // The unpaired Nyquist row/column is dropped so real input stays real.
      bool const nyquist = r == 0 || c == 0;
      k(r, c) *= nyquist ? 0.0 : std::exp(-a * (fx * fx + fy * fy));
    }
  }
  return ifft2c(k);
}

Mask shepp_logan_support(Eigen::Index ny, Eigen::Index nx)
{
  Mask m(ny, nx);
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      double X, Y;
      phantom_coords(r, c, ny, nx, X, Y);
      m(r, c) = inside(kPhantom[0], X, Y);
    }
  }
  return m;
}

std::vector<ComplexGrid> simulate_coils(int n_coils, Eigen::Index ny, Eigen::Index nx, Mask const &support)
{
  if (n_coils < 1) {
    throw Error("simulate_coils: need at least one coil");
  }
  if (support.rows() != ny || support.cols() != nx) {
    throw Error("simulate_coils: support mask does not match grid");
  }
  // Ring radius just outside the support's extent.
  double extent = 0.0;
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      if (support(r, c)) {
        extent = std::max(extent, std::hypot(norm_coord(c, nx), norm_coord(r, ny)));
      }
    }
  }
  double const ring = std::max(0.3, extent + 0.05);
  double const sigma = 0.3;

  std::vector<ComplexGrid> coils(static_cast<std::size_t>(n_coils), ComplexGrid(ny, nx));
  for (int i = 0; i < n_coils; ++i) {
    double const ang = 2.0 * std::numbers::pi * i / n_coils;
    double const cxp = ring * std::cos(ang);
    double const cyp = ring * std::sin(ang);
    // distinct linear phase per coil: about one cycle across the FOV, rotated per channel
    double const gx = 0.8 * std::cos(ang + 0.7);
    double const gy = 0.8 * std::sin(ang + 0.7);
    double const phase0 = 0.9 * i;
    auto &map = coils[static_cast<std::size_t>(i)];
    for (Eigen::Index r = 0; r < ny; ++r) {
      double const y = norm_coord(r, ny);
      for (Eigen::Index c = 0; c < nx; ++c) {
        double const x = norm_coord(c, nx);
        double const d2 = (x - cxp) * (x - cxp) + (y - cyp) * (y - cyp);
        double const mag = n_coils == 1 ? 1.0 : std::exp(-d2 / (2.0 * sigma * sigma));
        double const ph = 2.0 * std::numbers::pi * (gx * x + gy * y) + phase0;
        map(r, c) = std::polar(mag, n_coils == 1 ? 0.0 : ph);
      }
    }
  }
  RealGrid rss = RealGrid::Zero(ny, nx);
  for (auto const &m : coils) {
    rss += m.abs2();
  }
  rss = rss.sqrt();
  for (auto &m : coils) {
    m /= rss.cast<cd>();
  }
  return coils;
}

RealGrid eval_field(FieldCoeffs const &coeffs, Eigen::Index ny, Eigen::Index nx)
{
  if (ny < 2 || nx < 2) {
    throw Error("eval_field: grid must be at least 2x2");
  }
  RealGrid b(ny, nx);
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index c = 0; c < nx; ++c) {
      b(r, c) = coeffs.at(norm_coord(c, nx), norm_coord(r, ny));
    }
  }
  return b;
}

PoseOperator::PoseOperator(Eigen::Index ny, Eigen::Index nx, Pose const &pose, double fov_mm)
  : ny_(ny)
  , nx_(nx)
  , identity_(pose.is_identity())
{
  if (identity_) {
    return;
  }
  if (pose.theta_deg != 0.0 && ny != nx) {
    throw Error("apply_pose: rotation requires a square grid");
  }
  if (std::abs(pose.theta_deg) > 180.0) {
    throw Error(fmt::format("apply_pose: |theta| must be <= 180, got {}", pose.theta_deg));
  }
  // Pixel units about the grid center; square pixels.
  double const th = pose.theta_deg * deg2rad;
  double const c = pose.theta_deg == 0.0 ? 1.0 : std::cos(th);
  double const s = pose.theta_deg == 0.0 ? 0.0 : std::sin(th);
  double const tx = pose.dx_mm / fov_mm * static_cast<double>(nx);
  double const ty = pose.dy_mm / fov_mm * static_cast<double>(ny);
  double const cy = static_cast<double>(ny / 2);
  double const cx = static_cast<double>(nx / 2);

  taps_.resize(static_cast<std::size_t>(ny * nx));
  for (Eigen::Index r = 0; r < ny; ++r) {
    for (Eigen::Index col = 0; col < nx; ++col) {
      double const xo = static_cast<double>(col) - cx - tx;
      double const yo = static_cast<double>(r) - cy - ty;
      double const pu = c * xo + s * yo + cx;
      double const pv = -s * xo + c * yo + cy;
      double const fu = std::floor(pu);
      double const fv = std::floor(pv);
      double const au = pu - fu;
      double const av = pv - fv;
      auto const iu = static_cast<Eigen::Index>(fu);
      auto const iv = static_cast<Eigen::Index>(fv);
      Tap tap{};
      Eigen::Index const us[4] = {iu, iu + 1, iu, iu + 1};
      Eigen::Index const vs[4] = {iv, iv, iv + 1, iv + 1};
      double const ws[4] = {(1 - au) * (1 - av), au * (1 - av), (1 - au) * av, au * av};
      for (int k = 0; k < 4; ++k) {
        bool const ok = us[k] >= 0 && us[k] < nx && vs[k] >= 0 && vs[k] < ny && ws[k] != 0.0;
        tap.index[k] = ok ? static_cast<std::int32_t>(vs[k] * nx + us[k]) : -1;
        tap.weight[k] = ok ? ws[k] : 0.0;
      }
      taps_[static_cast<std::size_t>(r * nx + col)] = tap;
    }
  }
}

ComplexGrid PoseOperator::apply(ComplexGrid const &img, PoseMode mode) const
{
  if (img.rows() != ny_ || img.cols() != nx_) {
    throw Error("apply_pose: image size does not match operator");
  }
  if (identity_) {
    return img;
  }
  ComplexGrid out = ComplexGrid::Zero(ny_, nx_);
  cd const *in = img.data();
  cd *o = out.data();
  std::size_t const n = taps_.size();
  if (mode == PoseMode::Forward) {
    for (std::size_t i = 0; i < n; ++i) {
      auto const &t = taps_[i];
      cd acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (t.index[k] >= 0) {
          acc += t.weight[k] * in[t.index[k]];
        }
      }
      o[i] = acc;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto const &t = taps_[i];
      for (int k = 0; k < 4; ++k) {
        if (t.index[k] >= 0) {
          o[t.index[k]] += t.weight[k] * in[i];
        }
      }
    }
  }
  return out;
}

ComplexGrid apply_pose(ComplexGrid const &img, Pose const &pose, PoseMode mode, double fov_mm)
{
  return PoseOperator(img.rows(), img.cols(), pose, fov_mm).apply(img, mode);
}

cd sample_bilinear(ComplexGrid const &grid, double py, double px)
{
  Eigen::Index const ny = grid.rows();
  Eigen::Index const nx = grid.cols();
  px = std::clamp(px, 0.0, static_cast<double>(nx - 1));
  py = std::clamp(py, 0.0, static_cast<double>(ny - 1));
  auto const x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(px), nx - 2);
  auto const y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(py), ny - 2);
  double const ax = px - static_cast<double>(x0);
  double const ay = py - static_cast<double>(y0);
  return (1 - ay) * ((1 - ax) * grid(y0, x0) + ax * grid(y0, x0 + 1)) +
         ay * ((1 - ax) * grid(y0 + 1, x0) + ax * grid(y0 + 1, x0 + 1));
}

MotionTimeline generate_timeline(int n_shots, TimelineSpec const &spec, std::uint64_t seed)
{
  if (n_shots < 1) {
    throw Error("generate_timeline: need at least one shot");
  }
  MotionTimeline tl;
  tl.fov_mm = spec.fov_mm;
  tl.shot_duration_s = spec.shot_duration_s;
  auto const n = static_cast<std::size_t>(n_shots);
  switch (spec.profile) {
  case TimelineProfile::Zero:
    tl.entries.assign(n, MotionState{});
    break;
  case TimelineProfile::Step: {
    tl.entries.assign(n, MotionState{});
    auto jumps = spec.jumps;
    std::stable_sort(jumps.begin(), jumps.end(), [](auto const &a, auto const &b) { return a.shot < b.shot; });
    for (auto const &j : jumps) {
      if (j.shot < 0 || j.shot >= n_shots) {
        throw Error(fmt::format("generate_timeline: step at shot {} outside [0, {})", j.shot, n_shots));
      }
      for (std::size_t s = static_cast<std::size_t>(j.shot); s < n; ++s) {
        tl.entries[s] = j.state;
      }
    }
    break;
  }
  case TimelineProfile::Walk: {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    MotionState cur;
    tl.entries.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
      if (s > 0) {
        cur.pose.theta_deg = std::clamp(cur.pose.theta_deg + spec.walk_step_deg * normal(rng), -spec.walk_bound_deg,
                                        spec.walk_bound_deg);
        cur.pose.dx_mm =
          std::clamp(cur.pose.dx_mm + spec.walk_step_mm * normal(rng), -spec.walk_bound_mm, spec.walk_bound_mm);
        cur.pose.dy_mm =
          std::clamp(cur.pose.dy_mm + spec.walk_step_mm * normal(rng), -spec.walk_bound_mm, spec.walk_bound_mm);
        for (std::size_t i = 0; i < 6; ++i) {
          // higher orders wander less
          double const w = i == 0 ? 1.0 : (i < 3 ? 0.5 : 0.25);
          cur.field.c[i] = std::clamp(cur.field.c[i] + w * spec.walk_field_step_hz * normal(rng),
                                      -w * spec.walk_field_bound_hz, w * spec.walk_field_bound_hz);
        }
      }
      tl.entries.push_back(cur);
    }
    break;
  }
  case TimelineProfile::Discrete: {
    if (spec.n_states < 1 || spec.n_states > n_shots) {
      throw Error(fmt::format("generate_timeline: n_states {} must lie in [1, {}]", spec.n_states, n_shots));
    }
    auto const k = static_cast<std::size_t>(spec.n_states);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    // columns: theta, dx, dy, c0, c1, c2
    std::vector<std::array<double, 6>> u(k, std::array<double, 6>{});
    std::array<double, 6> peak{};
    for (std::size_t j = 1; j < k; ++j) {
      for (std::size_t p = 0; p < 6; ++p) {
        u[j][p] = uni(rng);
        peak[p] = std::max(peak[p], std::abs(u[j][p]));
      }
    }
    std::array<double, 6> const bound{spec.rotation_deg, spec.translation_mm, spec.translation_mm,
                                      spec.field_hz,     spec.field_linear_hz, spec.field_linear_hz};
    std::vector<MotionState> states(k);
    for (std::size_t j = 1; j < k; ++j) {
      std::array<double, 6> v{};
      for (std::size_t p = 0; p < 6; ++p) {
        v[p] = peak[p] > 0.0 ? bound[p] * u[j][p] / peak[p] : 0.0;
      }
      states[j].pose = {v[0], v[1], v[2]};
      states[j].field.c[0] = v[3];
      states[j].field.c[1] = v[4];
      states[j].field.c[2] = v[5];
    }
    tl.entries.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      tl.entries[s] = states[s * k / n];
    }
    break;
  }
  case TimelineProfile::File: {
    tl = read_timeline(spec.file, spec.fov_mm);
    if (tl.size() != n) {
      throw Error(fmt::format("generate_timeline: {} holds {} shots, expected {}", spec.file.string(), tl.size(),
                              n_shots));
    }
    tl.shot_duration_s = spec.shot_duration_s;
    break;
  }
  }
  return tl;
}

MotionTimeline parse_timeline(std::string const &text, double fov_mm, std::string const &source)
{
  MotionTimeline tl;
  tl.fov_mm = fov_mm;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream fields(line);
    long shot = -1;
    MotionState st;
    fields >> shot >> st.pose.theta_deg >> st.pose.dx_mm >> st.pose.dy_mm;
    for (double &c : st.field.c) {
      fields >> c;
    }
    if (fields.fail()) {
      throw Error(fmt::format("{}:{}: expected 'shot theta dx dy c0 c1 c2 c3 c4 c5'", source, lineno));
    }
    std::string extra;
    if (fields >> extra) {
      throw Error(fmt::format("{}:{}: unexpected trailing field '{}'", source, lineno, extra));
    }
    if (shot != static_cast<long>(tl.entries.size())) {
      throw Error(fmt::format("{}:{}: shot index {} out of order (expected {})", source, lineno, shot,
                              tl.entries.size()));
    }
    if (std::abs(st.pose.theta_deg) > 180.0) {
      throw Error(fmt::format("{}:{}: |theta| exceeds 180 degrees", source, lineno));
    }
    tl.entries.push_back(st);
  }
  if (tl.entries.empty()) {
    throw Error(fmt::format("{}: timeline holds no shots", source));
  }
  return tl;
}

MotionTimeline read_timeline(std::filesystem::path const &path, double fov_mm)
{
  std::ifstream f(path);
  if (!f) {
    throw Error(fmt::format("cannot open timeline file {}", path.string()));
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_timeline(ss.str(), fov_mm, path.string());
}

std::string format_timeline(MotionTimeline const &timeline)
{
  std::string out = "# shot theta_deg dx_mm dy_mm c0 c1 c2 c3 c4 c5\n";
  for (std::size_t s = 0; s < timeline.entries.size(); ++s) {
    auto const &e = timeline.entries[s];
    out += fmt::format("{} {:.17g} {:.17g} {:.17g}", s, e.pose.theta_deg, e.pose.dx_mm, e.pose.dy_mm);
    for (double c : e.field.c) {
      out += fmt::format(" {:.17g}", c);
    }
    out += '\n';
  }
  return out;
}

void write_timeline(std::filesystem::path const &path, MotionTimeline const &timeline)
{
  std::ofstream f(path);
  if (!f) {
    throw Error(fmt::format("cannot write timeline file {}", path.string()));
  }
  f << format_timeline(timeline);
}

} // namespace mograppa
