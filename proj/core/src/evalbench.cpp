#include "mograppa/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "mograppa/numerics.hpp"

namespace mograppa {

double nrmse(ComplexGrid const &x, ComplexGrid const &ref, Mask const &mask)
{
  if (x.rows() != ref.rows() || x.cols() != ref.cols() || mask.rows() != ref.rows() || mask.cols() != ref.cols()) {
    throw Error("nrmse: dimension mismatch");
  }
  double num = 0.0;
  double den = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    if (!mask.data()[i]) {
      continue;
    }
    double const r = std::abs(ref.data()[i]);
    double const d = std::abs(x.data()[i]) - r;
    num += d * d;
    den += r * r;
    ++n;
  }
  if (n == 0) {
    throw Error("nrmse: empty mask");
  }
  if (den == 0.0) {
    throw Error("nrmse: reference is zero on the mask");
  }
  return std::sqrt(num / den);
}

Scene make_scene(RunConfig const &cfg)
{
  Scene s;
  s.object = smooth_gaussian(shepp_logan(cfg.ny, cfg.nx), cfg.smooth_px);
  s.support = shepp_logan_support(cfg.ny, cfg.nx);
  s.coils = simulate_coils(cfg.coils, cfg.ny, cfg.nx, s.support);
  s.plan = cfg.plan();
  s.calib = acquire_calibration(s.object, s.coils, s.plan, cfg.calib_size);
  s.maps = extrapolate_coil_maps(estimate_coil_maps(s.calib, cfg.map_threshold), cfg.map_degree);
  return s;
}

MotionTimeline make_timeline(RunConfig const &cfg)
{
  return generate_timeline(cfg.n_shots, cfg.timeline, cfg.seed("timeline"));
}

TimelineSpec scaled_spec(TimelineSpec const &base, double amplitude_deg)
{
  TimelineSpec s = base;
  s.rotation_deg = amplitude_deg;
  s.translation_mm = base.rotation_deg > 0.0 ? base.translation_mm * amplitude_deg / base.rotation_deg : 0.0;
  return s;
}

MultiCoilKspace acquire(Scene const &scene, MotionTimeline const &timeline, RunConfig const &cfg)
{
  AcquisitionOptions opt;
  opt.noise_sigma = cfg.noise_sigma;
  opt.noise_seed = cfg.seed("noise");
  return simulate_acquisition(scene.object, scene.coils, timeline, scene.plan, opt);
}

TrainingSetup training_setup(RunConfig const &cfg)
{
  return TrainingSetup{cfg.geom, cfg.hyper, cfg.data};
}

KernelFamily train_for_timeline(RunConfig const &cfg, CalibrationModel const &model, SamplingPlan const &plan,
                                MotionTimeline const &timeline)
{
  auto const conds = conditions_from_timeline(timeline, plan.tes, cfg.conditions, cfg.seed("mlp"));
  return train_family(model, plan, conds, training_setup(cfg), cfg.seed("mlp"));
}

ReconResult run_method(std::string const &method, MultiCoilKspace const &y, MotionTimeline const &timeline,
                       RunConfig const &cfg, MethodInputs const &in)
{
  auto const plan = cfg.plan();
  if (method == "none") {
    auto r = cg_sense(y, in.maps, y.mask, cfg.cg);
    r.method = method;
    return r;
  }
  if (method == "aligned" || method == "aligned-motion" || method == "aligned-ds" || method == "aligned-km") {
    MotionTimeline tl = timeline;
    auto const t0 = std::chrono::steady_clock::now();
    if (method == "aligned-motion") {
      tl = motion_only(timeline);
    } else if (method == "aligned-ds") {
      tl = downsample_timeline(timeline, cfg.downsample_window);
    } else if (method == "aligned-km") {
      int const K = std::min<int>(cfg.clusters, static_cast<int>(timeline.distinct_states().size()));
      tl = cluster_timeline(timeline, K, cfg.weights, cfg.seed("kmeans")).quantized;
    }
    double const t_prep = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto r = aligned_sense(y, in.maps, tl, plan, cfg.cg);
    r.method = method;
    r.prep_time_s += t_prep;
    r.wall_time_s += t_prep;
    return r;
  }
  if (method == "augmented") {
    auto r = augmented_sense_approx(y, in.maps, timeline, plan, cfg.cg);
    r.method = method;
    return r;
  }
  if (method == "mobile") {
    if (in.family == nullptr) {
      throw Error("run_method: mobile needs a trained kernel family");
    }
    return mobile_grappa_recon(y, timeline, plan, *in.family, in.maps, cfg.cg);
  }
  if (method == "mobile-cluster") {
    if (!in.builder) {
      throw Error("run_method: mobile-cluster needs a family builder");
    }
    int const K = std::min<int>(cfg.clusters, static_cast<int>(timeline.distinct_states().size()));
    return clustered_mobile_grappa(y, timeline, plan, in.builder, in.maps, K, cfg.weights, cfg.seed("kmeans"),
                                   cfg.cg);
  }
  throw Error(fmt::format("run_method: unknown method '{}'", method));
}

namespace {

void say(Progress const &log, std::string const &msg)
{
  if (log) {
    log(msg);
  }
}

ExperimentReport start_report(RunConfig const &cfg)
{
  ExperimentReport r;
  r.config_hash = cfg.hash;
  r.provenance["experiment"] = cfg.experiment;
  r.provenance["kind"] = to_string(cfg.kind);
  r.provenance["config_hash"] = cfg.hash;
  r.provenance["seeds"] = cfg.seeds;
  r.provenance["threads"] = thread_count();
  r.provenance["training"] = Json::array();
  return r;
}

Json training_record(KernelFamily const &f, std::string const &label, std::size_t n_conditions)
{
  return {{"label", label},
          {"conditions", n_conditions},
          {"initial_loss", f.initial_loss},
          {"final_loss", f.final_loss},
          {"loss_ratio", f.initial_loss > 0.0 ? f.final_loss / f.initial_loss : 0.0},
          {"train_time_s", f.train_time_s}};
}

bool needs(RunConfig const &cfg, char const *method)
{
  return std::find(cfg.methods.begin(), cfg.methods.end(), method) != cfg.methods.end();
}

// Every configured method on one timeline; rows carry the per-echo mean and std of NRMSE,
// or one row per echo when `per_echo` is set.
void run_methods(RunConfig const &cfg, Scene const &scene, CalibrationModel const &model,
                 MotionTimeline const &timeline, double param, bool per_echo, bool keep_panels,
                 ExperimentReport &report, Progress const &log)
{
  auto const y = acquire(scene, timeline, cfg);
  KernelFamily family;
  MethodInputs in;
  in.maps = scene.maps;
  if (needs(cfg, "mobile")) {
    auto const conds = conditions_from_timeline(timeline, scene.plan.tes, cfg.conditions, cfg.seed("mlp"));
    say(log, fmt::format("  training kernel family on {} conditions", conds.size()));
    family = train_family(model, scene.plan, conds, training_setup(cfg), cfg.seed("mlp"));
    say(log, fmt::format("  trained in {:.1f} s, loss ratio {:.3g}", family.train_time_s,
                         family.final_loss / family.initial_loss));
    report.provenance["training"].push_back(training_record(family, fmt::format("mobile@{}", param), conds.size()));
    in.family = &family;
  }
  if (needs(cfg, "mobile-cluster")) {
    std::string const label = fmt::format("mobile-cluster@{}", param);
    in.builder = [&, label](std::vector<Condition> const &rel) {
      auto const conds = widen_conditions(rel, scene.plan.tes, cfg.conditions, cfg.seed("mlp"));
      auto f = train_family(model, scene.plan, conds, training_setup(cfg), cfg.seed("mlp"));
      report.provenance["training"].push_back(training_record(f, label, conds.size()));
      return f;
    };
  }
  for (auto const &m : cfg.methods) {
    auto const r = run_method(m, y, timeline, cfg, in);
    std::vector<double> e;
    for (auto const &img : r.images) {
      e.push_back(nrmse(img, scene.object, scene.support));
    }
    if (per_echo) {
      for (std::size_t k = 0; k < e.size(); ++k) {
        report.rows.push_back({cfg.experiment, m, cfg.tes[k] * 1e3, e[k], 0.0, r.wall_time_s, cfg.hash});
      }
    } else {
      double mean = 0.0;
      for (double v : e) {
        mean += v;
      }
      mean /= static_cast<double>(e.size());
      double var = 0.0;
      for (double v : e) {
        var += (v - mean) * (v - mean);
      }
      double const sd = e.size() > 1 ? std::sqrt(var / static_cast<double>(e.size() - 1)) : 0.0;
      report.rows.push_back({cfg.experiment, m, param, mean, sd, r.wall_time_s, cfg.hash});
    }
    say(log, fmt::format("  {:<15} nrmse {:.4f} ({:.2f} s)", m, e.front(), r.wall_time_s));
    if (keep_panels) {
      for (std::size_t k = 0; k < r.images.size(); ++k) {
        if (per_echo || k + 1 == r.images.size()) {
          report.panels.push_back({m, per_echo ? cfg.tes[k] * 1e3 : param, r.images[k]});
        }
      }
    }
  }
}

std::vector<double> sorted(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  return v;
}

double median_of(std::vector<double> v)
{
  v = sorted(std::move(v));
  std::size_t const n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

ExperimentReport run_single(RunConfig const &cfg, Progress const &log)
{
  auto report = start_report(cfg);
  auto const scene = make_scene(cfg);
  CalibrationModel const model(scene.calib, scene.maps, cfg.fov_mm);
  report.reference = scene.object;
  report.mask = scene.support;
  say(log, fmt::format("{}: single run", cfg.experiment));
  run_methods(cfg, scene, model, make_timeline(cfg), 0.0, false, true, report, log);
  report.charts.push_back({cfg.experiment, cfg.experiment, "run", false, Chart::Style::Bars});
  return report;
}

ExperimentReport sweep_motion_range(RunConfig const &cfg, Progress const &log)
{
  auto report = start_report(cfg);
  auto const scene = make_scene(cfg);
  CalibrationModel const model(scene.calib, scene.maps, cfg.fov_mm);
  report.reference = scene.object;
  report.mask = scene.support;
  double const top = *std::max_element(cfg.sweep.amplitudes_deg.begin(), cfg.sweep.amplitudes_deg.end());
  for (double a : cfg.sweep.amplitudes_deg) {
    say(log, fmt::format("{}: amplitude {} deg", cfg.experiment, a));
    auto const tl = generate_timeline(cfg.n_shots, scaled_spec(cfg.timeline, a), cfg.seed("timeline"));
    run_methods(cfg, scene, model, tl, a, false, a == top, report, log);
  }
  report.charts.push_back({cfg.experiment, "NRMSE versus motion range", "rotation amplitude (deg)", false,
                           Chart::Style::Bars});
  return report;
}

ExperimentReport sweep_te(RunConfig const &cfg, Progress const &log)
{
  if (cfg.tes.size() < 2) {
    throw ConfigError("config.tes: a TE sweep needs at least two echoes");
  }
  auto report = start_report(cfg);
  auto const scene = make_scene(cfg);
  CalibrationModel const model(scene.calib, scene.maps, cfg.fov_mm);
  report.reference = scene.object;
  report.mask = scene.support;
  say(log, fmt::format("{}: TE sweep over {} echoes", cfg.experiment, cfg.tes.size()));
  run_methods(cfg, scene, model, make_timeline(cfg), 0.0, true, true, report, log);
  report.charts.push_back({cfg.experiment, "NRMSE versus echo time", "TE (ms)", false, Chart::Style::Lines});
  return report;
}

ExperimentReport bench_state_scaling(RunConfig const &cfg, Progress const &log)
{
  auto report = start_report(cfg);
  auto const scene = make_scene(cfg);
  CalibrationModel const model(scene.calib, scene.maps, cfg.fov_mm);
  report.reference = scene.object;
  report.mask = scene.support;
  CgOptions cg = cfg.cg;
  cg.fixed_iterations = true;
  int const reps = cfg.sweep.repeats;

  std::vector<MotionTimeline> timelines;
  std::vector<Condition> all;
  for (int S : cfg.sweep.state_counts) {
    TimelineSpec spec = cfg.timeline;
    spec.n_states = S;
    timelines.push_back(generate_timeline(cfg.n_shots, spec, cfg.seed("timeline")));
    auto const c = conditions_from_timeline(timelines.back(), scene.plan.tes, cfg.conditions, cfg.seed("mlp"));
    for (auto const &x : c) {
      if (std::find(all.begin(), all.end(), x) == all.end()) {
        all.push_back(x);
      }
    }
  }
  say(log, fmt::format("{}: training one family on {} conditions", cfg.experiment, all.size()));
  auto const family = train_family(model, scene.plan, all, training_setup(cfg), cfg.seed("mlp"));
  report.provenance["training"].push_back(training_record(family, "mobile", all.size()));
  int const s_max = *std::max_element(cfg.sweep.state_counts.begin(), cfg.sweep.state_counts.end());
  report.rows.push_back({cfg.experiment, "mlp-train", static_cast<double>(s_max), 0.0, 0.0, family.train_time_s,
                         cfg.hash});

  RunConfig timed = cfg;
  timed.cg = cg;
  MethodInputs in;
  in.maps = scene.maps;
  in.family = &family;
  // Repeats run as round-robin passes over every (state count, method) pair, so slow drift in
  // machine speed spreads over all points instead of biasing whichever ran last.
  std::vector<MultiCoilKspace> data;
  for (auto const &tl : timelines) {
    data.push_back(acquire(scene, tl, cfg));
  }
  char const *const methods[] = {"aligned", "mobile"};
  std::vector<std::vector<double>> times(timelines.size() * 2);
  std::vector<double> errs(timelines.size() * 2, 0.0);
  for (int r = 0; r < reps; ++r) {
    for (std::size_t i = 0; i < timelines.size(); ++i) {
      for (std::size_t m = 0; m < 2; ++m) {
        auto const res = run_method(methods[m], data[i], timelines[i], timed, in);
        times[i * 2 + m].push_back(res.wall_time_s);
        errs[i * 2 + m] = nrmse(res.images.front(), scene.object, scene.support);
      }
    }
  }
  for (std::size_t i = 0; i < timelines.size(); ++i) {
    int const S = cfg.sweep.state_counts[i];
    for (std::size_t m = 0; m < 2; ++m) {
      double const med = median_of(times[i * 2 + m]);
      double const err = errs[i * 2 + m];
      report.rows.push_back({cfg.experiment, methods[m], static_cast<double>(S), err, 0.0, med, cfg.hash});
      say(log, fmt::format("  S={:<3} {:<8} {:.3f} s (nrmse {:.4f})", S, methods[m], med, err));
    }
  }

  if (!cfg.sweep.cluster_counts.empty()) {
    auto const idx = static_cast<std::size_t>(
      std::max_element(cfg.sweep.state_counts.begin(), cfg.sweep.state_counts.end()) - cfg.sweep.state_counts.begin());
    auto const &tl = timelines[idx];
    auto const y = acquire(scene, tl, cfg);
    // kmeans is deterministic, so repeats ask for the same conditions; train each set once
    std::vector<std::pair<std::vector<Condition>, KernelFamily>> cache;
    in.builder = [&](std::vector<Condition> const &rel) {
      auto const conds = widen_conditions(rel, scene.plan.tes, cfg.conditions, cfg.seed("mlp"));
      for (auto const &[c, f] : cache) {
        if (c == conds) {
          return f;
        }
      }
      cache.emplace_back(conds, train_family(model, scene.plan, conds, training_setup(cfg), cfg.seed("mlp")));
      report.provenance["training"].push_back(
        training_record(cache.back().second, fmt::format("mobile-cluster K={}", timed.clusters), conds.size()));
      return cache.back().second;
    };
    std::string const exp = cfg.experiment + "-clusters";
    auto const &ks = cfg.sweep.cluster_counts;
    std::vector<std::vector<double>> kt(ks.size());
    std::vector<double> kerr(ks.size(), 0.0);
    for (int r = 0; r < reps; ++r) {
      for (std::size_t j = 0; j < ks.size(); ++j) {
        timed.clusters = ks[j];
        auto const res = run_method("mobile-cluster", y, tl, timed, in);
        kt[j].push_back(res.wall_time_s);
        kerr[j] = nrmse(res.images.front(), scene.object, scene.support);
      }
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
      double const med = median_of(kt[j]);
      report.rows.push_back({exp, "mobile-cluster", static_cast<double>(ks[j]), kerr[j], 0.0, med, cfg.hash});
      say(log, fmt::format("  K={:<3} mobile-cluster {:.3f} s (nrmse {:.4f})", ks[j], med, kerr[j]));
    }
    report.charts.push_back({exp, "Clustered wall time versus K", "clusters K", true, Chart::Style::Lines});
  }
  report.charts.insert(report.charts.begin(), {cfg.experiment, "Wall time versus motion states",
                                               "motion states", true, Chart::Style::Lines});
  report.provenance["timing"] = {{"repeats", reps}, {"statistic", "median"}, {"cg_iterations", cg.maxit}};
  return report;
}

ExperimentReport run_experiment(RunConfig const &cfg, Progress const &log)
{
  if (cfg.methods.empty() && cfg.kind != ExperimentKind::StateScaling) {
    throw ConfigError("config.methods: no methods configured");
  }
  switch (cfg.kind) {
  case ExperimentKind::Single:
    return run_single(cfg, log);
  case ExperimentKind::MotionSweep:
    return sweep_motion_range(cfg, log);
  case ExperimentKind::TeSweep:
    return sweep_te(cfg, log);
  case ExperimentKind::StateScaling:
    return bench_state_scaling(cfg, log);
  }
  throw Error("run_experiment: unknown kind");
}

std::string const &report_csv_header()
{
  static std::string const h = "experiment,method,param,nrmse_mean,nrmse_std,wall_time_s,config_hash";
  return h;
}

std::string format_report_csv(std::span<ReportRow const> rows)
{
  std::string out = report_csv_header() + "\n";
  for (auto const &r : rows) {
    for (auto const *s : {&r.experiment, &r.method, &r.config_hash}) {
      if (s->find_first_of(",\n\"") != std::string::npos) {
        throw Error(fmt::format("format_report_csv: field '{}' contains a separator", *s));
      }
    }
    out += fmt::format("{},{},{},{},{},{},{}\n", r.experiment, r.method, r.param, r.nrmse_mean, r.nrmse_std,
                       r.wall_time_s, r.config_hash);
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(std::string const &text)
{
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != report_csv_header()) {
    throw Error("parse_report_csv: missing or wrong header");
  }
  std::vector<ReportRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      auto const c = line.find(',', start);
      f.push_back(line.substr(start, c - start));
      if (c == std::string::npos) {
        break;
      }
      start = c + 1;
    }
    if (f.size() != 7) {
      throw Error(fmt::format("parse_report_csv: line {} has {} fields, expected 7", lineno, f.size()));
    }
    auto num = [&](std::string const &s) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (std::exception const &) {
        used = 0;
      }
      if (used == 0 || used != s.size()) {
        throw Error(fmt::format("parse_report_csv: line {}: '{}' is not a number", lineno, s));
      }
      return v;
    };
    rows.push_back({f[0], f[1], num(f[2]), num(f[3]), num(f[4]), num(f[5]), f[6]});
  }
  return rows;
}

// ---- expect evaluation ----

namespace {

struct Selector
{
  ExperimentReport const &report;
  std::string experiment; // empty: any

  std::vector<ReportRow const *> of(std::string const &method) const
  {
    std::vector<ReportRow const *> out;
    for (auto const &r : report.rows) {
      if (r.method == method && (experiment.empty() || r.experiment == experiment)) {
        out.push_back(&r);
      }
    }
    std::sort(out.begin(), out.end(), [](auto *a, auto *b) { return a->param < b->param; });
    return out;
  }

  ReportRow const *at(std::string const &method, double param, std::string &why) const
  {
    ReportRow const *hit = nullptr;
    for (auto const *r : of(method)) {
      if (std::abs(r->param - param) <= 1e-9 * std::max(1.0, std::abs(param))) {
        if (hit != nullptr) {
          why = fmt::format("several rows for {} at {}; set 'experiment'", method, param);
          return nullptr;
        }
        hit = r;
      }
    }
    if (hit == nullptr) {
      why = fmt::format("no row for {} at {}", method, param);
    }
    return hit;
  }
};

double num(Json const &j, char const *key)
{
  if (!j.at(key).is_number()) {
    throw ConfigError(fmt::format("expect.{}: expected a number", key));
  }
  return j.at(key).get<double>();
}

std::string str(Json const &j, char const *key)
{
  if (!j.at(key).is_string()) {
    throw ConfigError(fmt::format("expect.{}: expected a string", key));
  }
  return j.at(key).get<std::string>();
}

std::vector<std::string> strs(Json const &j, char const *key)
{
  if (!j.at(key).is_array() || j.at(key).size() < 1) {
    throw ConfigError(fmt::format("expect.{}: expected a non-empty array of method names", key));
  }
  std::vector<std::string> out;
  for (auto const &v : j.at(key)) {
    if (!v.is_string()) {
      throw ConfigError(fmt::format("expect.{}: expected strings", key));
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

// Params where both methods have rows, or just the configured one.
std::vector<double> shared_params(Selector const &sel, Json const &j, std::string const &a, std::string const &b)
{
  if (j.contains("param")) {
    return {num(j, "param")};
  }
  std::vector<double> out;
  std::string why;
  for (auto const *r : sel.of(a)) {
    if (sel.at(b, r->param, why) != nullptr) {
      out.push_back(r->param);
    }
  }
  return out;
}

ExpectOutcome evaluate_one(ExperimentReport const &report, Json const &j)
{
  ExpectOutcome o;
  o.type = str(j, "type");
  o.name = j.contains("name") ? str(j, "name") : o.type;
  Selector const sel{report, j.contains("experiment") ? str(j, "experiment") : std::string{}};
  std::vector<std::string> bad;
  std::vector<std::string> seen;
  std::string why;

  if (o.type == "order") {
    auto const methods = strs(j, "methods");
    double const p = num(j, "param");
    bool const strict = j.value("strict", true);
    std::vector<double> v;
    for (auto const &m : methods) {
      auto const *r = sel.at(m, p, why);
      if (r == nullptr) {
        bad.push_back(why);
        break;
      }
      v.push_back(r->nrmse_mean);
      seen.push_back(fmt::format("{}={:.4f}", m, r->nrmse_mean));
    }
    if (bad.empty()) {
      for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        if (strict ? !(v[i] > v[i + 1]) : !(v[i] >= v[i + 1])) {
          bad.push_back(fmt::format("{} {:.4f} not {} {} {:.4f}", methods[i], v[i], strict ? ">" : ">=",
                                    methods[i + 1], v[i + 1]));
        }
      }
    }
  } else if (o.type == "abs_diff_max" || o.type == "gap_min") {
    auto const a = str(j, "a");
    auto const b = str(j, "b");
    bool const diff = o.type == "abs_diff_max";
    double const lim = num(j, diff ? "max" : "min");
    auto const params = shared_params(sel, j, a, b);
    if (params.empty()) {
      bad.push_back(fmt::format("no shared rows for {} and {}", a, b));
    }
    for (double p : params) {
      auto const *ra = sel.at(a, p, why);
      auto const *rb = ra != nullptr ? sel.at(b, p, why) : nullptr;
      if (rb == nullptr) {
        bad.push_back(why);
        continue;
      }
      double const d = diff ? std::abs(ra->nrmse_mean - rb->nrmse_mean) : ra->nrmse_mean - rb->nrmse_mean;
      seen.push_back(fmt::format("@{}: {:.4f}", p, d));
      if (diff ? !(d <= lim) : !(d >= lim)) {
        bad.push_back(fmt::format("@{}: {}={:.4f} {}={:.4f} {} {:.4f}", p, a, ra->nrmse_mean, b, rb->nrmse_mean,
                                  diff ? "|diff|" : "gap", d));
      }
    }
  } else if (o.type == "monotone") {
    auto const m = str(j, "method");
    auto const dir = str(j, "direction");
    if (dir != "nondecreasing" && dir != "nonincreasing") {
      throw ConfigError("expect.direction: nondecreasing or nonincreasing");
    }
    double const tol = j.contains("tolerance") ? num(j, "tolerance") : 0.0;
    auto const rows = sel.of(m);
    if (rows.size() < 2) {
      bad.push_back(fmt::format("{} has {} rows", m, rows.size()));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      seen.push_back(fmt::format("@{}={:.4f}", rows[i]->param, rows[i]->nrmse_mean));
      if (i == 0) {
        continue;
      }
      double const step = rows[i]->nrmse_mean - rows[i - 1]->nrmse_mean;
      if (dir == "nondecreasing" ? step < -tol : step > tol) {
        bad.push_back(fmt::format("{} @{} {:.4f} -> @{} {:.4f}", m, rows[i - 1]->param, rows[i - 1]->nrmse_mean,
                                  rows[i]->param, rows[i]->nrmse_mean));
      }
    }
  } else if (o.type == "spread_max") {
    double const p = num(j, "param");
    std::vector<std::string> methods;
    if (j.contains("methods")) {
      methods = strs(j, "methods");
    } else {
      for (auto const &r : report.rows) {
        if ((sel.experiment.empty() || r.experiment == sel.experiment) &&
            std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
          methods.push_back(r.method);
        }
      }
    }
    double lo = 1e300;
    double hi = -1e300;
    for (auto const &m : methods) {
      auto const *r = sel.at(m, p, why);
      if (r == nullptr) {
        bad.push_back(why);
        continue;
      }
      lo = std::min(lo, r->nrmse_mean);
      hi = std::max(hi, r->nrmse_mean);
      seen.push_back(fmt::format("{}={:.4f}", m, r->nrmse_mean));
    }
    if (bad.empty() && !(hi - lo <= num(j, "max"))) {
      bad.push_back(fmt::format("spread {:.4f} exceeds {}", hi - lo, num(j, "max")));
    }
  } else if (o.type == "value_max") {
    auto const m = str(j, "method");
    std::vector<ReportRow const *> rows;
    if (j.contains("param")) {
      if (auto const *r = sel.at(m, num(j, "param"), why)) {
        rows.push_back(r);
      } else {
        bad.push_back(why);
      }
    } else {
      rows = sel.of(m);
      if (rows.empty()) {
        bad.push_back(fmt::format("no rows for {}", m));
      }
    }
    for (auto const *r : rows) {
      seen.push_back(fmt::format("@{}={:.4f}", r->param, r->nrmse_mean));
      if (!(r->nrmse_mean <= num(j, "max"))) {
        bad.push_back(fmt::format("{} @{} nrmse {:.4f} exceeds {}", m, r->param, r->nrmse_mean, num(j, "max")));
      }
    }
  } else if (o.type == "time_ratio_min") {
    auto const m = str(j, "method");
    auto const *a = sel.at(m, num(j, "num_param"), why);
    auto const *b = a != nullptr ? sel.at(m, num(j, "den_param"), why) : nullptr;
    if (b == nullptr) {
      bad.push_back(why);
    } else {
      double const ratio = a->wall_time_s / b->wall_time_s;
      seen.push_back(fmt::format("ratio {:.3f}", ratio));
      if (!(ratio >= num(j, "min"))) {
        bad.push_back(fmt::format("{} time {:.3f} s / {:.3f} s = {:.3f} below {}", m, a->wall_time_s,
                                  b->wall_time_s, ratio, num(j, "min")));
      }
    }
  } else if (o.type == "time_spread_max") {
    auto const m = str(j, "method");
    auto const rows = sel.of(m);
    if (rows.size() < 2) {
      bad.push_back(fmt::format("{} has {} rows", m, rows.size()));
    } else {
      auto const [lo, hi] = std::minmax_element(rows.begin(), rows.end(), [](auto *x, auto *y) {
        return x->wall_time_s < y->wall_time_s;
      });
      double const ratio = (*hi)->wall_time_s / (*lo)->wall_time_s;
      seen.push_back(fmt::format("max/min {:.3f}", ratio));
      if (!(ratio <= num(j, "max"))) {
        bad.push_back(fmt::format("{} max/min time {:.3f} (@{} {:.3f} s, @{} {:.3f} s) exceeds {}", m, ratio,
                                  (*hi)->param, (*hi)->wall_time_s, (*lo)->param, (*lo)->wall_time_s,
                                  num(j, "max")));
      }
    }
  } else if (o.type == "linear_r2_min") {
    auto const m = str(j, "method");
    auto const rows = sel.of(m);
    if (rows.size() < 3) {
      bad.push_back(fmt::format("{} has {} rows; a fit needs 3", m, rows.size()));
    } else {
      double const n = static_cast<double>(rows.size());
      double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
      for (auto const *r : rows) {
        sx += r->param;
        sy += r->wall_time_s;
        sxx += r->param * r->param;
        sxy += r->param * r->wall_time_s;
        syy += r->wall_time_s * r->wall_time_s;
      }
      double const cxx = sxx - sx * sx / n;
      double const cxy = sxy - sx * sy / n;
      double const cyy = syy - sy * sy / n;
      double const r2 = cxx > 0 && cyy > 0 ? cxy * cxy / (cxx * cyy) : 0.0;
      double const slope = cxx > 0 ? cxy / cxx : 0.0;
      seen.push_back(fmt::format("R2 {:.4f}, slope {:.4g} s per unit", r2, slope));
      if (!(r2 >= num(j, "min")) || slope <= 0.0) {
        bad.push_back(fmt::format("{} R2 {:.4f} (slope {:.4g}) below {}", m, r2, slope, num(j, "min")));
      }
    }
  } else if (o.type == "row_count") {
    auto const m = str(j, "method");
    auto const n = sel.of(m).size();
    seen.push_back(fmt::format("{} rows", n));
    if (static_cast<double>(n) != num(j, "count")) {
      bad.push_back(fmt::format("{} has {} rows, expected {}", m, n, num(j, "count")));
    }
  } else {
    throw ConfigError(fmt::format("expect: unknown assertion type '{}'", o.type));
  }

  o.passed = bad.empty();
  std::string detail;
  for (auto const &s : o.passed ? seen : bad) {
    detail += (detail.empty() ? "" : "; ") + s;
  }
  o.detail = detail;
  return o;
}

} // namespace

std::vector<ExpectOutcome> evaluate_expects(ExperimentReport const &report, Json const &expect)
{
  std::vector<ExpectOutcome> out;
  for (auto const &j : expect) {
    out.push_back(evaluate_one(report, j));
  }
  return out;
}

} // namespace mograppa
