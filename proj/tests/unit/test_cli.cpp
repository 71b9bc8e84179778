#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <mograppa/evalbench.hpp>
#include <mograppa/io.hpp>

#include "support.hpp"

using namespace mograppa;
namespace fs = std::filesystem;

namespace {

fs::path const root = fs::temp_directory_path() / "mograppa_test_cli";

struct Run
{
  int code;
  std::string out;
};

Run run(std::string const &args)
{
  fs::create_directories(root);
  fs::path const log = root / "log.txt";
  std::string const cmd = std::string(MOGRAPPA_CLI) + " " + args + " > " + log.string() + " 2>&1";
  int const status = std::system(cmd.c_str());
  std::ifstream in(log);
  return {WEXITSTATUS(status), std::string(std::istreambuf_iterator<char>(in), {})};
}

std::string bytes(fs::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_config(char const *name, Json const &j)
{
  fs::create_directories(root);
  fs::path const p = root / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

Json base(char const *profile)
{
  auto j = Json::parse(R"({
    "experiment": "cli",
    "grid": {"ny": 128, "nx": 128},
    "n_shots": 12,
    "methods": ["none", "aligned", "mobile", "mobile-cluster"],
    "mlp": {"hidden": [32, 32, 32], "epochs": 2, "batch": 128},
    "training": {"n_targets": 1024},
    "clustering": {"K": 1}
  })");
  j["timeline"] = {{"profile", profile}};
  if (std::string(profile) == "discrete") {
    j["timeline"]["n_states"] = 6;
    j["timeline"]["rotation_deg"] = 6;
  }
  return j;
}

double image_error(fs::path const &recon, fs::path const &object)
{
  auto const x = read_images(recon);
  auto const ref = read_images(object);
  return nrmse(x.front(), ref.front(), shepp_logan_support(128, 128));
}

} // namespace

TEST_CASE("zero-motion pipeline")
{
  auto const cfg = write_config("zero.json", base("zero"));
  fs::path const out = root / "zero";
  fs::remove_all(out);
  std::string const common = " --config " + cfg.string() + " --outdir " + out.string();

  auto const sim = run("simulate" + common);
  REQUIRE_MESSAGE(sim.code == 0, sim.out);
  auto const y = read_kspace(out / "kspace.mgrp");
  auto const clean = read_kspace(out / "kspace_clean.mgrp");
  double worst = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    worst = std::max(worst, (y.data[i] - clean.data[i]).abs().maxCoeff());
  }
  CHECK(worst <= 1e-10);

  auto const hash = read_json(out / "config.json");
  std::string const expected = parse_config(read_json(cfg)).hash;
  CHECK(sim.out.find(expected) != std::string::npos);
  for (char const *f : {"kspace.json", "kspace_clean.json", "calib.json", "object.json", "coils.json"}) {
    CHECK(read_json(out / f).at("config_hash") == expected);
  }

  // Rerun into a second directory: byte-identical outputs.
  fs::path const again = root / "zero2";
  fs::remove_all(again);
  REQUIRE(run("simulate --config " + cfg.string() + " --outdir " + again.string()).code == 0);
  for (char const *f : {"kspace.mgrp", "kspace.json", "calib.mgrp", "coils.mgrp", "timeline.txt", "object.png"}) {
    CHECK_MESSAGE(bytes(out / f) == bytes(again / f), f);
  }

  auto const none = run("recon --method none" + common);
  REQUIRE_MESSAGE(none.code == 0, none.out);
  double const e_none = image_error(out / "recon_none.mgrp", out / "object.mgrp");
  MESSAGE("none on clean R=2 data: " << e_none);
  CHECK(e_none < 0.05);
  REQUIRE(run("recon --method aligned" + common).code == 0);
  auto const a = read_images(out / "recon_aligned.mgrp");
  auto const n = read_images(out / "recon_none.mgrp");
  CHECK(testing::rel_diff(a[0], n[0]) < 1e-6); // complex64 storage

  auto const train = run("train" + common);
  REQUIRE_MESSAGE(train.code == 0, train.out);
  CHECK(train.out.find("loss initial") != std::string::npos);
  CHECK(train.out.find("wall time") != std::string::npos);
  auto const first = bytes(out / "family.mgrp");
  REQUIRE(run("train" + common).code == 0);
  CHECK(bytes(out / "family.mgrp") == first);

  REQUIRE(run("recon --method mobile" + common).code == 0);
  REQUIRE(run("recon --method mobile-cluster" + common).code == 0);
  auto const m = read_images(out / "recon_mobile.mgrp");
  auto const k = read_images(out / "recon_mobile-cluster.mgrp");
  CHECK(testing::rel_diff(k[0], m[0]) < 1e-6);
  CHECK(bytes(out / "clusters_mobile-cluster.csv").rfind("shot,cluster\n0,0\n", 0) == 0);
  auto const meta = read_json(out / "recon_mobile.json");
  CHECK(meta.at("method") == "mobile");
  CHECK(meta.at("wall_time_s").get<double>() > 0.0);
}

TEST_CASE("trained range covers the timeline")
{
  auto j = base("discrete");
  auto const cfg = write_config("moving.json", j);
  fs::path const out = root / "moving";
  fs::remove_all(out);
  std::string const common = " --config " + cfg.string() + " --outdir " + out.string();
  REQUIRE(run("simulate" + common).code == 0);
  REQUIRE(run("train" + common).code == 0);
  auto const range = read_json(out / "family.json").at("range");
  auto const tl = read_timeline(out / "timeline.txt");
  for (auto const &e : tl.entries) {
    CHECK(range.at("pose_min")[0].get<double>() <= e.pose.theta_deg);
    CHECK(range.at("pose_max")[0].get<double>() >= e.pose.theta_deg);
  }
  CHECK(read_json(out / "family.json").at("timeline_hash") == timeline_hash(tl));
  REQUIRE(run("recon --method aligned-km" + common).code == 0);
  CHECK(fs::exists(out / "clusters_aligned-km.csv"));
  REQUIRE(run("recon --method aligned-ds" + common).code == 0);
  CHECK(fs::exists(out / "recon_aligned-ds.png"));
}

TEST_CASE("errors and exit codes")
{
  auto j = base("zero");
  j["grid"]["nz"] = 1;
  auto const bad = write_config("bad.json", j);
  auto const r = run("simulate --config " + bad.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("config.grid.nz") != std::string::npos);

  CHECK(run("simulate --config " + (root / "absent.json").string()).code != 0);
  CHECK(run("frobnicate").code != 0);

  auto const good = write_config("zero.json", base("zero"));
  auto const missing = run("recon --method mobile --config " + good.string() + " --outdir " + (root / "empty").string());
  CHECK(missing.code == 1);
  CHECK(missing.out.find("missing input") != std::string::npos);
  CHECK(run("recon --method magic --config " + good.string()).code != 0);
  CHECK(run("simulate --seed-override bogus=1 --config " + good.string() + " --outdir " +
            (root / "seeded").string())
          .code == 2);
  auto const seeded = run("simulate --seed-override timeline=9 --config " + good.string() + " --outdir " +
                          (root / "seeded").string());
  CHECK(seeded.code == 0);
  CHECK(seeded.out.find(parse_config(read_json(good)).hash) == std::string::npos);

  // eval exits 3 when an assertion fails and names the failing rows.
  auto e = base("discrete");
  e["methods"] = {"none", "aligned"};
  e["expect"] = Json::array({{{"type", "order"}, {"name", "backwards"}, {"methods", {"aligned", "none"}}, {"param", 0}}});
  auto const ecfg = write_config("eval.json", e);
  auto const ev = run("eval --config " + ecfg.string() + " --outdir " + (root / "eval").string());
  CHECK(ev.code == 3);
  CHECK(ev.out.find("FAIL backwards") != std::string::npos);
  CHECK(fs::exists(root / "eval" / "report.csv"));
  CHECK(run("bench --config " + ecfg.string() + " --outdir " + (root / "eval").string()).code == 2);
}
