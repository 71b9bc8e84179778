#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <mograppa/config.hpp>
#include <mograppa/evalbench.hpp>
#include <mograppa/io.hpp>
#include <mograppa/numerics.hpp>

namespace fs = std::filesystem;
using namespace mograppa;

namespace {

enum Exit
{
  Ok = 0,
  Failure = 1,
  BadConfig = 2,
  ExpectFailed = 3,
};

struct Common
{
  std::string config;
  std::string outdir;
  std::vector<std::string> seed_overrides;
};

void add_common(CLI::App *cmd, Common &c)
{
  cmd->add_option("--config", c.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--outdir", c.outdir, "output directory (overrides the config)");
  cmd->add_option("--seed-override", c.seed_overrides, "NAME=INT, repeatable");
}

RunConfig load(Common const &c)
{
  auto cfg = load_config(c.config);
  for (auto const &s : c.seed_overrides) {
    apply_seed_override(cfg, s);
  }
  if (!c.outdir.empty()) {
    cfg.outdir = c.outdir;
  }
  fs::create_directories(cfg.outdir);
  return cfg;
}

void log_line(std::string const &s)
{
  std::fprintf(stderr, "%s\n", s.c_str());
}

Json meta_of(RunConfig const &cfg)
{
  return {{"config_hash", cfg.hash}, {"experiment", cfg.experiment}};
}

fs::path input(std::string const &given, RunConfig const &cfg, char const *fallback)
{
  fs::path const p = given.empty() ? cfg.outdir / fallback : fs::path(given);
  if (!fs::exists(p)) {
    throw Error(fmt::format("missing input {}", p.string()));
  }
  return p;
}

int cmd_simulate(Common const &c)
{
  auto const cfg = load(c);
  auto const scene = make_scene(cfg);
  auto const tl = make_timeline(cfg);
  auto const y = acquire(scene, tl, cfg);
  MotionTimeline still = tl;
  for (auto &e : still.entries) {
    e = MotionState{};
  }
  auto const clean = acquire(scene, still, cfg);
  auto const meta = meta_of(cfg);
  auto const &d = cfg.outdir;
  std::vector<ComplexGrid> const obj{scene.object};
  write_images(d / "object.mgrp", obj, meta);
  write_images(d / "coils.mgrp", scene.coils, meta);
  write_kspace(d / "calib.mgrp", scene.calib, meta);
  write_kspace(d / "kspace.mgrp", y, meta);
  write_kspace(d / "kspace_clean.mgrp", clean, meta);
  write_timeline(d / "timeline.txt", tl);
  write_json(d / "config.json", cfg.canonical);
  write_magnitude_png(d / "object.png", scene.object);
  std::printf("simulate: %zu shots, %zu distinct states, %zu echoes -> %s\n", tl.size(),
              tl.distinct_states().size(), cfg.tes.size(), d.string().c_str());
  std::printf("config_hash %s\n", cfg.hash.c_str());
  return Ok;
}

struct TrainArgs
{
  std::string calib;
  std::string timeline;
};

int cmd_train(Common const &c, TrainArgs const &a)
{
  auto const cfg = load(c);
  auto const calib = read_kspace(input(a.calib, cfg, "calib.mgrp"));
  auto const tl = read_timeline(input(a.timeline, cfg, "timeline.txt"), cfg.fov_mm);
  if (static_cast<int>(tl.size()) != cfg.n_shots) {
    throw Error(fmt::format("timeline holds {} shots, config expects {}", tl.size(), cfg.n_shots));
  }
  auto const maps = extrapolate_coil_maps(estimate_coil_maps(calib, cfg.map_threshold), cfg.map_degree);
  CalibrationModel const model(calib, maps, cfg.fov_mm);
  auto const plan = cfg.plan();
  auto const conds = conditions_from_timeline(tl, plan.tes, cfg.conditions, cfg.seed("mlp"));
  log_line(fmt::format("training on {} conditions", conds.size()));
  auto const family = train_family(model, plan, conds, training_setup(cfg), cfg.seed("mlp"));
  auto meta = meta_of(cfg);
  meta["timeline_hash"] = timeline_hash(tl);
  write_family(cfg.outdir / "family.mgrp", family, meta);
  std::printf("train: %zu conditions, wall time %.2f s\n", conds.size(), family.train_time_s);
  std::printf("loss initial %.6g final %.6g ratio %.4g\n", family.initial_loss, family.final_loss,
              family.final_loss / family.initial_loss);
  return Ok;
}

struct ReconArgs
{
  std::string method;
  std::string kspace;
  std::string timeline;
  std::string calib;
  std::string family;
};

int cmd_recon(Common const &c, ReconArgs const &a)
{
  auto const cfg = load(c);
  auto const y = read_kspace(input(a.kspace, cfg, "kspace.mgrp"));
  auto const tl = read_timeline(input(a.timeline, cfg, "timeline.txt"), cfg.fov_mm);
  auto const calib = read_kspace(input(a.calib, cfg, "calib.mgrp"));
  auto const maps = extrapolate_coil_maps(estimate_coil_maps(calib, cfg.map_threshold), cfg.map_degree);
  auto const plan = cfg.plan();
  if (y.ny() != plan.ny || y.nx() != plan.nx || y.n_echoes != static_cast<int>(plan.n_echoes())) {
    throw Error("k-space dimensions do not match the config");
  }

  MethodInputs in;
  in.maps = maps;
  std::optional<KernelFamily> family;
  std::optional<CalibrationModel> model;
  if (a.method == "mobile") {
    family = read_family(input(a.family, cfg, "family.mgrp"));
    in.family = &*family;
  }
  if (a.method == "mobile-cluster") {
    model.emplace(calib, maps, cfg.fov_mm);
    in.builder = [&](std::vector<Condition> const &rel) {
      auto const conds = widen_conditions(rel, plan.tes, cfg.conditions, cfg.seed("mlp"));
      log_line(fmt::format("training cluster family on {} conditions", conds.size()));
      return train_family(*model, plan, conds, training_setup(cfg), cfg.seed("mlp"));
    };
  }
  if (a.method == "aligned-km" || a.method == "mobile-cluster") {
    int const K = std::min<int>(cfg.clusters, static_cast<int>(tl.distinct_states().size()));
    auto const ct = cluster_timeline(tl, K, cfg.weights, cfg.seed("kmeans"));
    write_cluster_csv(cfg.outdir / fmt::format("clusters_{}.csv", a.method), ct.cluster_of_shot);
  }

  auto const r = run_method(a.method, y, tl, cfg, in);
  auto meta = meta_of(cfg);
  meta["method"] = a.method;
  meta["wall_time_s"] = r.wall_time_s;
  meta["prep_time_s"] = r.prep_time_s;
  meta["solve_time_s"] = r.solve_time_s;
  meta["train_time_s"] = r.train_time_s;
  meta["iterations"] = r.iterations;
  meta["fallback_targets"] = r.fallback_targets;
  meta["dropped_targets"] = r.dropped_targets;
  meta["residuals"] = r.residuals;
  fs::path const obj_path = cfg.outdir / "object.mgrp";
  if (fs::exists(obj_path)) {
    auto const obj = read_images(obj_path);
    auto const support = shepp_logan_support(cfg.ny, cfg.nx);
    std::vector<double> e;
    for (auto const &img : r.images) {
      e.push_back(nrmse(img, obj.front(), support));
    }
    meta["nrmse"] = e;
    for (std::size_t k = 0; k < e.size(); ++k) {
      std::printf("echo %zu nrmse %.5f\n", k, e[k]);
    }
  }
  auto const stem = fmt::format("recon_{}", a.method);
  write_images(cfg.outdir / (stem + ".mgrp"), r.images, meta);
  write_magnitude_png(cfg.outdir / (stem + ".png"), r.images.front());
  std::printf("recon %s: %d iterations, %.3f s (prep %.3f, solve %.3f)\n", a.method.c_str(), r.iterations,
              r.wall_time_s, r.prep_time_s, r.solve_time_s);
  return Ok;
}

int report_and_gate(RunConfig const &cfg, ExperimentReport const &report)
{
  render_report(report, cfg.outdir);
  auto const outcomes = evaluate_expects(report, cfg.expect);
  int failed = 0;
  for (auto const &o : outcomes) {
    std::printf("%s %s [%s] %s\n", o.passed ? "PASS" : "FAIL", o.name.c_str(), o.type.c_str(), o.detail.c_str());
    failed += o.passed ? 0 : 1;
  }
  std::printf("%zu rows -> %s/report.csv; %zu of %zu assertions passed\n", report.rows.size(),
              cfg.outdir.string().c_str(), outcomes.size() - static_cast<std::size_t>(failed), outcomes.size());
  return failed == 0 ? Ok : ExpectFailed;
}

int cmd_eval(Common const &c)
{
  auto const cfg = load(c);
  if (cfg.kind == ExperimentKind::StateScaling) {
    throw ConfigError("config.kind: state_scaling runs under 'bench'");
  }
  return report_and_gate(cfg, run_experiment(cfg, log_line));
}

int cmd_bench(Common const &c)
{
  auto const cfg = load(c);
  if (cfg.kind != ExperimentKind::StateScaling) {
    throw ConfigError("config.kind: 'bench' needs state_scaling");
  }
  return report_and_gate(cfg, run_experiment(cfg, log_line));
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"mograppa: motion-robust kernel gridding and reconstruction toolkit"};
  app.require_subcommand(1);

  Common sim_c, train_c, recon_c, eval_c, bench_c;
  TrainArgs train_a;
  ReconArgs recon_a;

  auto *sim = app.add_subcommand("simulate", "simulate object, coils, calibration and corrupted k-space");
  add_common(sim, sim_c);

  auto *train = app.add_subcommand("train", "train a kernel family from calibration and timeline");
  add_common(train, train_c);
  train->add_option("--calib", train_a.calib, "calibration k-space (default OUTDIR/calib.mgrp)");
  train->add_option("--timeline", train_a.timeline, "timeline (default OUTDIR/timeline.txt)");

  auto *recon = app.add_subcommand("recon", "reconstruct with one method");
  add_common(recon, recon_c);
  recon->add_option("--method", recon_a.method, "reconstruction method")
    ->required()
    ->check(CLI::IsMember(known_methods()));
  recon->add_option("--kspace", recon_a.kspace, "k-space (default OUTDIR/kspace.mgrp)");
  recon->add_option("--timeline", recon_a.timeline, "timeline (default OUTDIR/timeline.txt)");
  recon->add_option("--calib", recon_a.calib, "calibration (default OUTDIR/calib.mgrp)");
  recon->add_option("--family", recon_a.family, "kernel family (default OUTDIR/family.mgrp)");

  auto *eval = app.add_subcommand("eval", "run the configured sweep and check its assertions");
  add_common(eval, eval_c);
  auto *bench = app.add_subcommand("bench", "run the state-scaling benchmark and check its assertions");
  add_common(bench, bench_c);

  CLI11_PARSE(app, argc, argv);
  try {
    if (sim->parsed()) {
      return cmd_simulate(sim_c);
    }
    if (train->parsed()) {
      return cmd_train(train_c, train_a);
    }
    if (recon->parsed()) {
      return cmd_recon(recon_c, recon_a);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_c);
    }
    if (bench->parsed()) {
      return cmd_bench(bench_c);
    }
  } catch (ConfigError const &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return BadConfig;
  } catch (std::exception const &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return Failure;
  }
  return Failure;
}
