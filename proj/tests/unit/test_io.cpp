#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <mograppa/io.hpp>

#include "support.hpp"

using namespace mograppa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(char const *name)
{
  fs::path const dir = fs::temp_directory_path() / "mograppa_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<unsigned char> bytes_of(fs::path const &p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put_bytes(fs::path const &p, std::vector<unsigned char> const &b)
{
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<char const *>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST_CASE("MGRP layout and round trip")
{
  MgrpArray a;
  a.dims = {2, 3};
  a.complex = {{1, 2}, {3, 4}, {5, 6}, {-1, -2}, {0.5, 0.25}, {0, 0}};
  auto const p = scratch("a.mgrp");
  write_mgrp(p, a);
  auto const raw = bytes_of(p);
  REQUIRE(raw.size() == 4 + 3 + 2 * 8 + 6 * 8);
  CHECK(std::memcmp(raw.data(), "MGRP", 4) == 0);
  CHECK(raw[4] == 1);
  CHECK(raw[5] == 0);
  CHECK(raw[6] == 2);
  CHECK(raw[7] == 2); // little-endian u64 dims[0]
  float first;
  std::memcpy(&first, raw.data() + 23, 4);
  CHECK(first == 1.0f);

  auto const b = read_mgrp(p);
  CHECK(b.dims == a.dims);
  CHECK(b.complex == a.complex);

  MgrpArray r;
  r.dtype = Dtype::Float64;
  r.dims = {4};
  r.real = {1.0 / 3.0, -2.0, 1e300, 0.0};
  write_mgrp(p, r);
  CHECK(read_mgrp(p).real == r.real);

  MgrpArray bad;
  bad.dims = {3};
  bad.complex = {{1, 1}};
  CHECK_THROWS_AS(write_mgrp(p, bad), Error);
}

TEST_CASE("MGRP read errors")
{
  MgrpArray a;
  a.dims = {4};
  a.complex.assign(4, cd(1, 1));
  auto const good = scratch("good.mgrp");
  write_mgrp(good, a);
  auto const raw = bytes_of(good);
  auto const p = scratch("bad.mgrp");

  auto expect_error = [&](std::vector<unsigned char> b, char const *what) {
    put_bytes(p, b);
    try {
      (void)read_mgrp(p);
      FAIL("no error for " << what);
    } catch (Error const &e) {
      CHECK(std::string(e.what()).find(what) != std::string::npos);
    }
  };
  auto b = raw;
  b[0] = 'X';
  expect_error(b, "not an MGRP file");
  b = raw;
  b[4] = 2;
  expect_error(b, "version");
  b = raw;
  b[5] = 9;
  expect_error(b, "dtype");
  expect_error(std::vector<unsigned char>(raw.begin(), raw.end() - 3), "payload shorter");
  b = raw;
  b.push_back(0);
  expect_error(b, "trailing bytes");
  expect_error(std::vector<unsigned char>(raw.begin(), raw.begin() + 9), "truncated");
  CHECK_THROWS_AS(read_mgrp(scratch("missing.mgrp")), Error);
}

TEST_CASE("k-space, images and sidecars")
{
  auto const plan = make_sampling_plan(16, 12, 2, 2, 3, {0.002, 0.006});
  MultiCoilKspace y(2, 2, 16, 12);
  y.mask = plan.mask();
  y.line_shot = plan.shot_of_line;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    y.data[i] = testing::random_grid(16, 12, i) * y.mask.cast<cd>();
  }
  auto const p = scratch("k.mgrp");
  write_kspace(p, y, {{"config_hash", "abc"}});
  CHECK(sidecar_path(p) == scratch("k.json"));
  Json meta;
  auto const back = read_kspace(p, &meta);
  CHECK(meta.at("config_hash") == "abc");
  CHECK(back.n_coils == 2);
  CHECK(back.n_echoes == 2);
  CHECK((back.mask == y.mask).all());
  CHECK(back.line_shot == y.line_shot);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    // complex64 storage
    CHECK((back.data[i] - y.data[i]).abs().maxCoeff() < 1e-6 * (1.0 + y.data[i].abs().maxCoeff()));
  }

  auto const plan_back = plan_from_json(plan_to_json(plan));
  CHECK(plan_back.shot_of_line == plan.shot_of_line);
  CHECK(plan_back.tes == plan.tes);
  CHECK(plan_back.R == 2);

  std::vector<ComplexGrid> imgs{testing::random_grid(8, 8, 1), testing::random_grid(8, 8, 2)};
  auto const ip = scratch("img.mgrp");
  write_images(ip, imgs, {{"method", "none"}});
  Json im;
  auto const ib = read_images(ip, &im);
  REQUIRE(ib.size() == 2);
  CHECK(testing::rel_diff(ib[1], imgs[1]) < 1e-6);
  CHECK(im.at("method") == "none");
  CHECK_THROWS_AS(read_kspace(ip), Error);
}

TEST_CASE("kernel family round trip")
{
  KernelFamily f;
  f.geom = {3, 2.0, 2};
  f.mlp = Mlp(feature_length(f.geom), {8, 8, 8}, 2 * f.geom.coils * f.geom.n_src * f.geom.coils, 4);
  f.norms.pose = {12.0, 2.0, 3.0};
  f.range.pose_max = {12.0, 2.0, 3.0};
  f.range.te_max = 0.01;
  f.signal_scale = 3.5;
  f.initial_loss = 1.0;
  f.final_loss = 0.01;
  f.seed = 77;
  auto const p = scratch("fam.mgrp");
  write_family(p, f, {{"timeline_hash", "t"}});
  Json meta;
  auto const g = read_family(p, &meta);
  CHECK(g.mlp.params() == f.mlp.params());
  CHECK(g.mlp.widths() == f.mlp.widths());
  CHECK(g.norms.pose == f.norms.pose);
  CHECK(g.range.pose_max == f.range.pose_max);
  CHECK(g.geom.n_src == 3);
  CHECK(g.signal_scale == 3.5);
  CHECK(g.seed == 77);
  CHECK(meta.at("timeline_hash") == "t");

  write_family(scratch("fam2.mgrp"), g, {{"timeline_hash", "t"}});
  CHECK(bytes_of(p) == bytes_of(scratch("fam2.mgrp")));
  CHECK(bytes_of(sidecar_path(p)) == bytes_of(sidecar_path(scratch("fam2.mgrp"))));
}

TEST_CASE("hashing, percentile and PNG")
{
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hash_hex(0xaf63dc4c8601ec8cULL) == "af63dc4c8601ec8c");
  MotionTimeline t;
  t.entries.resize(2);
  auto const h0 = timeline_hash(t);
  t.entries[1].pose.theta_deg = 1.0;
  CHECK(timeline_hash(t) != h0);

  CHECK(percentile({1.0, 2.0, 3.0, 4.0}, 50.0) == doctest::Approx(2.5));
  CHECK(percentile({5.0}, 99.5) == 5.0);
  CHECK(percentile({0.0, 10.0}, 100.0) == 10.0);
  CHECK_THROWS_AS(percentile({}, 50.0), Error);

  auto const p = scratch("m.png");
  write_magnitude_png(p, testing::random_grid(10, 14, 3));
  auto const raw = bytes_of(p);
  REQUIRE(raw.size() > 24);
  CHECK(raw[1] == 'P');
  CHECK(raw[2] == 'N');
  CHECK(raw[19] == 14); // IHDR width
  CHECK(raw[23] == 10); // IHDR height
}
