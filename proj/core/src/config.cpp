#include "mograppa/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace mograppa {

namespace {

// Object cursor that records which keys were read so leftovers can be rejected.
class Node
{
public:
  Node(Json const &j, std::string path)
    : j_(j)
    , path_(std::move(path))
  {
    if (!j_.is_object()) {
      fail("expected an object");
    }
  }

  [[noreturn]] void fail(std::string const &msg, std::string const &key = {}) const
  {
    throw ConfigError(fmt::format("{}: {}", key.empty() ? path_ : path_ + "." + key, msg));
  }

  bool has(std::string const &key) const { return j_.contains(key); }

  Json const &raw(std::string const &key)
  {
    seen_.insert(key);
    return j_.at(key);
  }

  Node child(std::string const &key)
  {
    if (!has(key)) {
      return Node(empty(), path_ + "." + key);
    }
    return Node(raw(key), path_ + "." + key);
  }

  long integer(std::string const &key, long def, long lo, long hi = std::numeric_limits<long>::max())
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_number_integer()) {
      fail("expected an integer", key);
    }
    long const x = v.get<long>();
    if (x < lo || x > hi) {
      fail(hi == std::numeric_limits<long>::max() ? fmt::format("must be >= {}", lo)
                                                   : fmt::format("must lie in [{}, {}]", lo, hi),
           key);
    }
    return x;
  }

  std::uint64_t seed(std::string const &key, std::uint64_t def)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      fail("expected a non-negative integer", key);
    }
    return v.get<std::uint64_t>();
  }

  double number(std::string const &key, double def, double lo, bool open_lo = false)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_number()) {
      fail("expected a number", key);
    }
    double const x = v.get<double>();
    if (!std::isfinite(x) || x < lo || (open_lo && x == lo)) {
      fail(fmt::format("must be {} {}", open_lo ? ">" : ">=", lo), key);
    }
    return x;
  }

  bool boolean(std::string const &key, bool def)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_boolean()) {
      fail("expected true or false", key);
    }
    return v.get<bool>();
  }

  std::string string(std::string const &key, std::string def)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_string()) {
      fail("expected a string", key);
    }
    return v.get<std::string>();
  }

  std::vector<double> numbers(std::string const &key, std::vector<double> def, double lo, bool nonempty = true)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_array() || (nonempty && v.empty())) {
      fail(nonempty ? "expected a non-empty array of numbers" : "expected an array of numbers", key);
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()) || v[i].get<double>() < lo) {
        fail(fmt::format("expected a number >= {}", lo), fmt::format("{}[{}]", key, i));
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<int> integers(std::string const &key, std::vector<int> def, int lo)
  {
    if (!has(key)) {
      return def;
    }
    auto const &v = raw(key);
    if (!v.is_array() || v.empty()) {
      fail("expected a non-empty array of integers", key);
    }
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number_integer() || v[i].get<long>() < lo) {
        fail(fmt::format("expected an integer >= {}", lo), fmt::format("{}[{}]", key, i));
      }
      out.push_back(v[i].get<int>());
    }
    return out;
  }

  /// Rejects keys that no reader consumed.
  void finish() const
  {
    for (auto const &[k, v] : j_.items()) {
      if (!seen_.contains(k)) {
        fail("unknown key", k);
      }
    }
  }

  std::string const &path() const { return path_; }

private:
  static Json const &empty()
  {
    static Json const e = Json::object();
    return e;
  }
  Json const &j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct ExpectSchema
{
  char const *type;
  std::vector<char const *> required;
  std::vector<char const *> optional;
};

// Assertion kinds evaluated by the experiment runner.
std::vector<ExpectSchema> const &expect_schemas()
{
  static std::vector<ExpectSchema> const s = {
    {"order", {"methods", "param"}, {"strict"}},
    {"abs_diff_max", {"a", "b", "max"}, {"param"}},
    {"gap_min", {"a", "b", "min"}, {"param"}},
    {"monotone", {"method", "direction"}, {"tolerance"}},
    {"spread_max", {"param", "max"}, {"methods"}},
    {"value_max", {"method", "max"}, {"param"}},
    {"time_ratio_min", {"method", "num_param", "den_param", "min"}, {}},
    {"time_spread_max", {"method", "max"}, {}},
    {"linear_r2_min", {"method", "min"}, {}},
    {"row_count", {"method", "count"}, {}},
  };
  return s;
}

void check_expect(Json const &list)
{
  if (!list.is_array()) {
    throw ConfigError("config.expect: expected an array of assertions");
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    std::string const path = fmt::format("config.expect[{}]", i);
    Node n(list[i], path);
    n.string("name", "");
    auto const type = n.string("type", "");
    n.string("experiment", "");
    auto const it = std::find_if(expect_schemas().begin(), expect_schemas().end(),
                                 [&](ExpectSchema const &s) { return type == s.type; });
    if (it == expect_schemas().end()) {
      n.fail(fmt::format("unknown assertion type '{}'", type), "type");
    }
    for (char const *k : it->required) {
      if (!n.has(k)) {
        n.fail("required key missing", k);
      }
      n.raw(k);
    }
    for (char const *k : it->optional) {
      if (n.has(k)) {
        n.raw(k);
      }
    }
    n.finish();
  }
}

TimelineSpec parse_timeline_spec(Node n, double fov_mm, std::filesystem::path const &base_dir, Json &canon)
{
  TimelineSpec t;
  t.fov_mm = fov_mm;
  auto const profile = n.string("profile", "zero");
  t.shot_duration_s = n.number("shot_duration_s", 0.4, 0.0, true);
  canon = {{"profile", profile}, {"shot_duration_s", t.shot_duration_s}};
  if (profile == "zero") {
    t.profile = TimelineProfile::Zero;
  } else if (profile == "step") {
    t.profile = TimelineProfile::Step;
    if (!n.has("jumps") || !n.raw("jumps").is_array()) {
      n.fail("step profile needs a 'jumps' array", "jumps");
    }
    auto const &jumps = n.raw("jumps");
    for (std::size_t i = 0; i < jumps.size(); ++i) {
      Node jn(jumps[i], fmt::format("{}.jumps[{}]", n.path(), i));
      StepJump s;
      s.shot = static_cast<int>(jn.integer("shot", 0, 0));
      s.state.pose.theta_deg = jn.number("theta_deg", 0.0, -180.0);
      s.state.pose.dx_mm = jn.number("dx_mm", 0.0, -1e9);
      s.state.pose.dy_mm = jn.number("dy_mm", 0.0, -1e9);
      auto const f = jn.numbers("field", std::vector<double>(6, 0.0), -1e9);
      if (f.size() != 6) {
        jn.fail("expected 6 field coefficients", "field");
      }
      std::copy(f.begin(), f.end(), s.state.field.c.begin());
      jn.finish();
      t.jumps.push_back(s);
      canon["jumps"].push_back({{"shot", s.shot},
                                {"theta_deg", s.state.pose.theta_deg},
                                {"dx_mm", s.state.pose.dx_mm},
                                {"dy_mm", s.state.pose.dy_mm},
                                {"field", s.state.field.c}});
    }
  } else if (profile == "walk") {
    t.profile = TimelineProfile::Walk;
    t.walk_step_deg = n.number("step_deg", t.walk_step_deg, 0.0);
    t.walk_bound_deg = n.number("bound_deg", t.walk_bound_deg, 0.0);
    t.walk_step_mm = n.number("step_mm", t.walk_step_mm, 0.0);
    t.walk_bound_mm = n.number("bound_mm", t.walk_bound_mm, 0.0);
    t.walk_field_step_hz = n.number("field_step_hz", t.walk_field_step_hz, 0.0);
    t.walk_field_bound_hz = n.number("field_bound_hz", t.walk_field_bound_hz, 0.0);
    canon.update({{"step_deg", t.walk_step_deg},
                  {"bound_deg", t.walk_bound_deg},
                  {"step_mm", t.walk_step_mm},
                  {"bound_mm", t.walk_bound_mm},
                  {"field_step_hz", t.walk_field_step_hz},
                  {"field_bound_hz", t.walk_field_bound_hz}});
  } else if (profile == "discrete") {
    t.profile = TimelineProfile::Discrete;
    t.n_states = static_cast<int>(n.integer("n_states", t.n_states, 1));
    t.rotation_deg = n.number("rotation_deg", t.rotation_deg, 0.0);
    t.translation_mm = n.number("translation_mm", t.translation_mm, 0.0);
    t.field_hz = n.number("field_hz", t.field_hz, 0.0);
    t.field_linear_hz = n.number("field_linear_hz", t.field_linear_hz, 0.0);
    canon.update({{"n_states", t.n_states},
                  {"rotation_deg", t.rotation_deg},
                  {"translation_mm", t.translation_mm},
                  {"field_hz", t.field_hz},
                  {"field_linear_hz", t.field_linear_hz}});
  } else if (profile == "file") {
    t.profile = TimelineProfile::File;
    auto const file = n.string("file", "");
    if (file.empty()) {
      n.fail("file profile needs 'file'", "file");
    }
    t.file = std::filesystem::path(file).is_absolute() ? std::filesystem::path(file) : base_dir / file;
    // The file's content, not its location, identifies the run.
    canon["file_hash"] = timeline_hash(read_timeline(t.file, fov_mm));
  } else {
    n.fail(fmt::format("unknown profile '{}' (zero, step, walk, discrete, file)", profile), "profile");
  }
  n.finish();
  return t;
}

void refresh_hash(RunConfig &cfg)
{
  cfg.canonical["seed"] = cfg.seeds;
  cfg.hash = hash_hex(fnv1a64(cfg.canonical.dump()));
}

} // namespace

std::vector<std::string> const &known_methods()
{
  static std::vector<std::string> const m = {"none",      "aligned", "aligned-ds",    "aligned-km",
                                             "augmented", "mobile",  "mobile-cluster", "aligned-motion"};
  return m;
}

std::string to_string(ExperimentKind kind)
{
  switch (kind) {
  case ExperimentKind::Single:
    return "single";
  case ExperimentKind::MotionSweep:
    return "motion_sweep";
  case ExperimentKind::TeSweep:
    return "te_sweep";
  case ExperimentKind::StateScaling:
    return "state_scaling";
  }
  return "single";
}

std::uint64_t RunConfig::seed(std::string const &name) const
{
  auto const it = seeds.find(name);
  if (it == seeds.end()) {
    throw ConfigError(fmt::format("config.seed: no seed named '{}'", name));
  }
  return it->second;
}

SamplingPlan RunConfig::plan() const
{
  return make_sampling_plan(ny, nx, R, acs, n_shots, tes);
}

RunConfig parse_config(Json const &j, std::filesystem::path const &base_dir)
{
  RunConfig c;
  Node root(j, "config");
  c.experiment = root.string("experiment", c.experiment);
  auto const kind = root.string("kind", "single");
  if (kind == "single") {
    c.kind = ExperimentKind::Single;
  } else if (kind == "motion_sweep") {
    c.kind = ExperimentKind::MotionSweep;
  } else if (kind == "te_sweep") {
    c.kind = ExperimentKind::TeSweep;
  } else if (kind == "state_scaling") {
    c.kind = ExperimentKind::StateScaling;
  } else {
    root.fail(fmt::format("unknown kind '{}' (single, motion_sweep, te_sweep, state_scaling)", kind), "kind");
  }

  {
    auto g = root.child("grid");
    c.ny = g.integer("ny", c.ny, 8, 4096);
    c.nx = g.integer("nx", c.nx, 8, 4096);
    c.fov_mm = g.number("fov_mm", c.fov_mm, 0.0, true);
    g.finish();
  }
  c.coils = static_cast<int>(root.integer("coils", c.coils, 1, 64));
  c.R = static_cast<int>(root.integer("R", c.R, 1, 16));
  c.acs = static_cast<int>(root.integer("acs", c.acs, 0));
  c.n_shots = static_cast<int>(root.integer("n_shots", c.n_shots, 1));
  c.calib_size = static_cast<int>(root.integer("calib_size", c.calib_size, 24));
  c.tes = root.numbers("tes", c.tes, 0.0);
  c.noise_sigma = root.number("noise_sigma", c.noise_sigma, 0.0);
  {
    auto p = root.child("phantom");
    c.smooth_px = p.number("smooth_px", c.smooth_px, 0.0);
    p.finish();
  }
  {
    auto m = root.child("coil_maps");
    c.map_degree = static_cast<int>(m.integer("degree", c.map_degree, 0, 12));
    c.map_threshold = m.number("threshold", c.map_threshold, 0.0, true);
    m.finish();
  }
  if (c.calib_size > c.ny || c.calib_size > c.nx) {
    root.fail("calib_size exceeds the grid", "calib_size");
  }

  Json tl_canon;
  c.timeline = parse_timeline_spec(root.child("timeline"), c.fov_mm, base_dir, tl_canon);
  if (c.timeline.profile == TimelineProfile::Discrete && c.timeline.n_states > c.n_shots) {
    root.fail("timeline.n_states exceeds n_shots", "timeline");
  }

  if (root.has("methods")) {
    auto const &m = root.raw("methods");
    if (!m.is_array()) {
      root.fail("expected an array of method names", "methods");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_string()) {
        root.fail("expected a string", fmt::format("methods[{}]", i));
      }
      auto const name = m[i].get<std::string>();
      auto const &known = known_methods();
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        root.fail(fmt::format("unknown method '{}'", name), fmt::format("methods[{}]", i));
      }
      c.methods.push_back(name);
    }
  }

  {
    auto k = root.child("kernel");
    c.geom.n_src = static_cast<int>(k.integer("n_src", c.geom.n_src, 1, 64));
    c.geom.search_radius = k.number("search_radius", c.geom.search_radius, 0.0, true);
    k.finish();
  }
  c.geom.coils = c.coils;
  {
    auto m = root.child("mlp");
    c.hyper.hidden = m.integers("hidden", c.hyper.hidden, 1);
    c.hyper.batch = static_cast<int>(m.integer("batch", c.hyper.batch, 1));
    c.hyper.epochs = static_cast<int>(m.integer("epochs", c.hyper.epochs, 0));
    c.hyper.lr = m.number("lr", c.hyper.lr, 0.0, true);
    c.hyper.single_precision = m.boolean("single_precision", c.hyper.single_precision);
    m.finish();
  }
  {
    auto t = root.child("training");
    c.data.n_targets = static_cast<int>(t.integer("n_targets", c.data.n_targets, 1));
    c.data.targets_per_pattern = static_cast<int>(t.integer("targets_per_pattern", c.data.targets_per_pattern, 1));
    c.data.interior_margin = static_cast<int>(t.integer("interior_margin", c.data.interior_margin, 0));
    c.conditions.margin = t.number("condition_margin", c.conditions.margin, 0.0);
    c.conditions.include_corners = t.boolean("include_corners", c.conditions.include_corners);
    c.conditions.n_random = static_cast<int>(t.integer("n_random", c.conditions.n_random, 0));
    t.finish();
  }
  {
    auto g = root.child("cg");
    c.cg.tol = g.number("tol", c.cg.tol, 0.0, true);
    c.cg.maxit = static_cast<int>(g.integer("maxit", c.cg.maxit, 1));
    c.cg.fixed_iterations = g.boolean("fixed_iterations", c.cg.fixed_iterations);
    g.finish();
  }
  {
    auto k = root.child("clustering");
    c.clusters = static_cast<int>(k.integer("K", c.clusters, 1));
    c.weights.w_rot = k.number("w_rot", c.weights.w_rot, 0.0, true);
    c.weights.w_f = k.number("w_f", c.weights.w_f, 0.0, true);
    k.finish();
  }
  c.downsample_window = static_cast<int>(root.integer("downsample_window", c.downsample_window, 1));
  {
    auto s = root.child("sweep");
    c.sweep.amplitudes_deg = s.numbers("amplitudes_deg", {}, 0.0);
    c.sweep.state_counts = s.integers("state_counts", {}, 1);
    c.sweep.cluster_counts = s.integers("cluster_counts", {}, 1);
    c.sweep.repeats = static_cast<int>(s.integer("repeats", c.sweep.repeats, 1));
    s.finish();
  }
  {
    auto s = root.child("seed");
    for (auto &[name, value] : c.seeds) {
      value = s.seed(name, value);
    }
    s.finish();
  }
  c.outdir = root.string("outdir", c.outdir.string());
  if (root.has("expect")) {
    c.expect = root.raw("expect");
    check_expect(c.expect);
  }
  root.finish();

  if (c.kind == ExperimentKind::MotionSweep && c.sweep.amplitudes_deg.empty()) {
    throw ConfigError("config.sweep.amplitudes_deg: required for a motion sweep");
  }
  if (c.kind == ExperimentKind::StateScaling && c.sweep.state_counts.empty()) {
    throw ConfigError("config.sweep.state_counts: required for state scaling");
  }
  if ((c.kind == ExperimentKind::MotionSweep || c.kind == ExperimentKind::StateScaling) &&
      c.timeline.profile != TimelineProfile::Discrete) {
    throw ConfigError("config.timeline.profile: sweeps regenerate a discrete timeline");
  }
  if (c.kind == ExperimentKind::StateScaling) {
    for (int s : c.sweep.state_counts) {
      if (s > c.n_shots) {
        throw ConfigError(fmt::format("config.sweep.state_counts: {} states exceed {} shots", s, c.n_shots));
      }
    }
  }
  // Plan constraints are checked here so errors surface before any work.
  try {
    (void)c.plan();
  } catch (Error const &e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }

  c.canonical = {
    {"experiment", c.experiment},
    {"kind", to_string(c.kind)},
    {"grid", {{"ny", c.ny}, {"nx", c.nx}, {"fov_mm", c.fov_mm}}},
    {"coils", c.coils},
    {"R", c.R},
    {"acs", c.acs},
    {"n_shots", c.n_shots},
    {"calib_size", c.calib_size},
    {"tes", c.tes},
    {"noise_sigma", c.noise_sigma},
    {"phantom", {{"smooth_px", c.smooth_px}}},
    {"coil_maps", {{"degree", c.map_degree}, {"threshold", c.map_threshold}}},
    {"timeline", tl_canon},
    {"methods", c.methods},
    {"kernel", {{"n_src", c.geom.n_src}, {"search_radius", c.geom.search_radius}}},
    {"mlp",
     {{"hidden", c.hyper.hidden},
      {"batch", c.hyper.batch},
      {"epochs", c.hyper.epochs},
      {"lr", c.hyper.lr},
      {"single_precision", c.hyper.single_precision}}},
    {"training",
     {{"n_targets", c.data.n_targets},
      {"targets_per_pattern", c.data.targets_per_pattern},
      {"interior_margin", c.data.interior_margin},
      {"condition_margin", c.conditions.margin},
      {"include_corners", c.conditions.include_corners},
      {"n_random", c.conditions.n_random}}},
    {"cg", {{"tol", c.cg.tol}, {"maxit", c.cg.maxit}, {"fixed_iterations", c.cg.fixed_iterations}}},
    {"clustering", {{"K", c.clusters}, {"w_rot", c.weights.w_rot}, {"w_f", c.weights.w_f}}},
    {"downsample_window", c.downsample_window},
    {"sweep",
     {{"amplitudes_deg", c.sweep.amplitudes_deg},
      {"state_counts", c.sweep.state_counts},
      {"cluster_counts", c.sweep.cluster_counts},
      {"repeats", c.sweep.repeats}}},
    {"expect", c.expect},
  };
  refresh_hash(c);
  return c;
}

RunConfig load_config(std::filesystem::path const &path)
{
  std::ifstream f(path);
  if (!f) {
    throw ConfigError(fmt::format("cannot open config {}", path.string()));
  }
  Json j;
  try {
    j = Json::parse(f);
  } catch (Json::parse_error const &e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_config(j, path.parent_path());
}

void apply_seed_override(RunConfig &cfg, std::string const &assignment)
{
  auto const eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("seed override '{}': expected NAME=INT", assignment));
  }
  auto const name = assignment.substr(0, eq);
  auto const value = assignment.substr(eq + 1);
  auto const it = cfg.seeds.find(name);
  if (it == cfg.seeds.end()) {
    throw ConfigError(fmt::format("seed override: no seed named '{}'", name));
  }
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (value.empty() || value[0] == '-') {
      throw std::invalid_argument("negative");
    }
    v = std::stoull(value, &used);
  } catch (std::exception const &) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ConfigError(fmt::format("seed override '{}': '{}' is not a non-negative integer", assignment, value));
  }
  it->second = v;
  refresh_hash(cfg);
}

} // namespace mograppa
