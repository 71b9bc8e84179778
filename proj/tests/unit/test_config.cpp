#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <mograppa/config.hpp>

using namespace mograppa;
namespace fs = std::filesystem;

namespace {

Json minimal()
{
  return Json::parse(R"({
    "experiment": "unit",
    "grid": {"ny": 64, "nx": 64},
    "n_shots": 8,
    "acs": 4,
    "timeline": {"profile": "zero"},
    "methods": ["none", "aligned"]
  })");
}

std::string error_of(Json const &j)
{
  try {
    (void)parse_config(j);
  } catch (ConfigError const &e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST_CASE("defaults and plan")
{
  auto const cfg = parse_config(minimal());
  CHECK(cfg.experiment == "unit");
  CHECK(cfg.kind == ExperimentKind::Single);
  CHECK(cfg.coils == 8);
  CHECK(cfg.R == 2);
  CHECK(cfg.cg.tol == 1e-6);
  CHECK(cfg.cg.maxit == 40);
  CHECK(cfg.geom.n_src == 9);
  CHECK(cfg.geom.search_radius == 2.5);
  CHECK(cfg.weights.w_rot == 1.4);
  CHECK(cfg.weights.w_f == 0.5);
  CHECK(cfg.seed("mlp") == 2);
  CHECK_THROWS_AS(cfg.seed("nope"), Error);
  auto const plan = cfg.plan();
  CHECK(plan.ny == 64);
  CHECK(plan.n_shots == 8);
  CHECK(cfg.geom.coils == cfg.coils);
  CHECK(cfg.hash.size() == 16);
}

TEST_CASE("schema errors name the JSON path")
{
  auto j = minimal();
  j["grid"]["nz"] = 3;
  CHECK(error_of(j).find("config.grid.nz") != std::string::npos);

  j = minimal();
  j["bogus"] = 1;
  CHECK(error_of(j).find("config.bogus") != std::string::npos);

  j = minimal();
  j["coils"] = "eight";
  CHECK(error_of(j).find("config.coils") != std::string::npos);

  j = minimal();
  j["methods"] = {"none", "magic"};
  CHECK(error_of(j).find("magic") != std::string::npos);

  j = minimal();
  j["timeline"]["profile"] = "discrete";
  j["timeline"]["n_states"] = 9;
  CHECK(error_of(j).find("n_states") != std::string::npos);

  j = minimal();
  j["kind"] = "motion_sweep";
  CHECK(error_of(j).find("amplitudes") != std::string::npos);

  j = minimal();
  j["calib_size"] = 16;
  CHECK(error_of(j).find("config.calib_size") != std::string::npos);

  j = minimal();
  j["expect"] = Json::array({{{"type", "order"}, {"methods", {"none"}}}});
  CHECK(error_of(j).find("config.expect") != std::string::npos);

  j = minimal();
  j["expect"] = Json::array({{{"type", "mystery"}}});
  CHECK(error_of(j).find("mystery") != std::string::npos);

  j = minimal();
  j["mlp"] = {{"lr", -1.0}};
  CHECK(error_of(j).find("config.mlp.lr") != std::string::npos);

  j = minimal();
  j["acs"] = 40;
  CHECK_FALSE(error_of(j).empty());
}

TEST_CASE("hash tracks content, not formatting or outdir")
{
  auto const a = parse_config(minimal());
  auto j = minimal();
  j["outdir"] = "elsewhere";
  CHECK(parse_config(j).hash == a.hash);
  j = minimal();
  j["coils"] = 8; // explicit default
  CHECK(parse_config(j).hash == a.hash);
  j = minimal();
  j["coils"] = 6;
  CHECK(parse_config(j).hash != a.hash);
  j = minimal();
  j["seed"] = {{"mlp", 9}};
  CHECK(parse_config(j).hash != a.hash);
}

TEST_CASE("seed overrides")
{
  auto cfg = parse_config(minimal());
  auto const before = cfg.hash;
  apply_seed_override(cfg, "mlp=41");
  CHECK(cfg.seed("mlp") == 41);
  CHECK(cfg.hash != before);
  auto j = minimal();
  j["seed"] = {{"mlp", 41}};
  CHECK(parse_config(j).hash == cfg.hash);
  CHECK_THROWS_AS(apply_seed_override(cfg, "mlp"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "unknown=1"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "mlp=-1"), ConfigError);
  CHECK_THROWS_AS(apply_seed_override(cfg, "mlp=1x"), ConfigError);
}

TEST_CASE("timeline files resolve against the config directory")
{
  fs::path const dir = fs::temp_directory_path() / "mograppa_test_config";
  fs::create_directories(dir);
  MotionTimeline t;
  t.entries.resize(8);
  t.entries[3].pose = {4.0, 1.0, 0.0};
  write_timeline(dir / "tl.txt", t);
  auto j = minimal();
  j["timeline"] = {{"profile", "file"}, {"file", "tl.txt"}};
  {
    std::ofstream out(dir / "c.json");
    out << j.dump();
  }
  auto const cfg = load_config(dir / "c.json");
  CHECK(cfg.timeline.profile == TimelineProfile::File);
  CHECK(fs::equivalent(cfg.timeline.file, dir / "tl.txt"));
  CHECK(cfg.canonical.at("timeline").contains("file_hash"));

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("shipped configs parse")
{
  for (char const *name : {"fig4_analog.json", "fig5_analog.json", "bench_scaling.json"}) {
    fs::path const p = fs::path(MOGRAPPA_SOURCE_DIR) / "configs" / name;
    if (!fs::exists(p)) {
      FAIL("missing config " << p.string());
      continue;
    }
    auto const cfg = load_config(p);
    CHECK(!cfg.expect.empty());
  }
}
