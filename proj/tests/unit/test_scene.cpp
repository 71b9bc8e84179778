#include <doctest.h>

#include <cmath>
#include <set>

#include <mograppa/scene.hpp>

#include "support.hpp"

using namespace mograppa;
using testing::inner;
using testing::random_grid;

TEST_CASE("phantom support and values")
{
  auto const img = shepp_logan(128, 128);
  auto const sup = shepp_logan_support(128, 128);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    if (!sup.data()[i]) {
      CHECK(img.data()[i] == cd(0.0, 0.0));
    }
    CHECK(img.data()[i].imag() == 0.0);
    CHECK(img.data()[i].real() >= 0.0);
    CHECK(img.data()[i].real() <= 1.0);
  }
  // At the origin only the skull (1.0) and brain (-0.49) ellipses overlap.
  CHECK(img(64, 64).real() == doctest::Approx(0.51).epsilon(1e-12));
  CHECK_THROWS_AS(shepp_logan(16, 64), Error);
}

TEST_CASE("phantom mirror symmetry holds where only symmetric ellipses reach")
{
  // The standard table is not left-right symmetric: the two large inner ellipses differ in
  // size and the three small bottom ones are offset. The outer rows above and below them
  // are symmetric.
  Eigen::Index const n = 128;
  auto const img = shepp_logan(n, n);
  int asym = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 1; c < n; ++c) {
      if (img(r, c) != img(r, n - c)) {
        ++asym;
      }
    }
  }
  CHECK(asym > 0);
  // Rows through the top of the head (Y > 0.65) touch only axis-centered ellipses.
  for (Eigen::Index r = 0; r < 10; ++r) {
    for (Eigen::Index c = 1; c < n; ++c) {
      CHECK(img(r, c) == img(r, n - c));
    }
  }
}

TEST_CASE("coil maps")
{
  auto const sup = shepp_logan_support(64, 64);
  auto const coils = simulate_coils(8, 64, 64, sup);
  REQUIRE(coils.size() == 8);
  for (Eigen::Index i = 0; i < sup.size(); ++i) {
    if (!sup.data()[i]) {
      continue;
    }
    double s = 0.0;
    for (auto const &c : coils) {
      s += std::norm(c.data()[i]);
    }
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-10);
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < coils.size(); ++a) {
    for (std::size_t b = a + 1; b < coils.size(); ++b) {
      double const v = std::abs(inner(coils[a], coils[b])) / (testing::norm(coils[a]) * testing::norm(coils[b]));
      worst = std::max(worst, v);
    }
  }
  CHECK(worst < 0.99);

  auto const one = simulate_coils(1, 64, 64, sup);
  for (Eigen::Index i = 0; i < sup.size(); ++i) {
    if (sup.data()[i]) {
      CHECK(std::abs(std::abs(one[0].data()[i]) - 1.0) < 1e-10);
    }
  }
  CHECK_THROWS_AS(simulate_coils(0, 64, 64, sup), Error);
}

TEST_CASE("field maps")
{
  FieldCoeffs c0;
  c0.c[0] = 5.0;
  auto const b0 = eval_field(c0, 16, 16);
  CHECK((b0 - 5.0).abs().maxCoeff() == 0.0);

  FieldCoeffs c1;
  c1.c[1] = 1.0;
  auto const b1 = eval_field(c1, 16, 16);
  CHECK(b1(8, 8) == 0.0);
  CHECK(b1(3, 15) == doctest::Approx(7.0 / 16.0));

  FieldCoeffs c3;
  c3.c[3] = 1.0;
  auto const b3 = eval_field(c3, 16, 16);
  CHECK(b3.minCoeff() == 0.0);
  for (Eigen::Index c = 1; c < 16; ++c) {
    CHECK(b3(2, c) == doctest::Approx(b3(2, 16 - c)));
  }

  FieldCoeffs a, b, s;
  for (int i = 0; i < 6; ++i) {
    a.c[i] = 0.3 * i - 1.0;
    b.c[i] = std::sin(i + 1.0);
    s.c[i] = a.c[i] + b.c[i];
  }
  CHECK((eval_field(s, 12, 20) - eval_field(a, 12, 20) - eval_field(b, 12, 20)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("pose operator")
{
  auto const x = random_grid(32, 32, 1);
  CHECK((apply_pose(x, Pose{}, PoseMode::Forward) - x).abs().maxCoeff() == 0.0);

  // Two pixels right, one down: 8 mm per pixel on a 256 mm, 32 pixel grid.
  Pose const p{0.0, 16.0, 8.0};
  auto const y = apply_pose(x, p, PoseMode::Forward, 256.0);
  for (Eigen::Index r = 0; r < 32; ++r) {
    for (Eigen::Index c = 0; c < 32; ++c) {
      cd const expect = (r >= 1 && c >= 2) ? x(r - 1, c - 2) : cd(0.0, 0.0);
      CHECK(std::abs(y(r, c) - expect) < 1e-12);
    }
  }

  for (Pose const &q : {Pose{7.5, 3.0, -2.0}, Pose{-12.0, 0.5, 4.0}, Pose{90.0, 0.0, 0.0}}) {
    PoseOperator const op(32, 32, q, 256.0);
    auto const a = random_grid(32, 32, 11);
    auto const b = random_grid(32, 32, 12);
    cd const lhs = inner(op.apply(a, PoseMode::Forward), b);
    cd const rhs = inner(a, op.apply(b, PoseMode::Adjoint));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * testing::norm(a) * testing::norm(b));
  }
}

TEST_CASE("pose round trip on a smooth image")
{
  auto const img = smooth_gaussian(shepp_logan(128, 128), 2.0);
  Pose const p{6.0, 3.0, -2.0};
  Pose inv;
  inv.theta_deg = -p.theta_deg;
  double const th = -p.theta_deg * std::numbers::pi / 180.0;
  inv.dx_mm = -(std::cos(th) * p.dx_mm - std::sin(th) * p.dy_mm);
  inv.dy_mm = -(std::sin(th) * p.dx_mm + std::cos(th) * p.dy_mm);
  auto const back = apply_pose(apply_pose(img, p, PoseMode::Forward), inv, PoseMode::Forward);
  auto const sup = shepp_logan_support(128, 128);
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    if (sup.data()[i]) {
      num += std::norm(back.data()[i] - img.data()[i]);
      den += std::norm(img.data()[i]);
    }
  }
  CHECK(std::sqrt(num / den) < 0.02);
}

TEST_CASE("relative pose composes back")
{
  Pose const ref{5.0, 2.0, -1.0};
  Pose const moved{-3.0, 0.5, 4.0};
  auto const d = relative_pose(moved, ref);
  // Applying d after ref lands on moved.
  auto const tr = RigidTransform::from_pose(ref, 256.0);
  auto const td = RigidTransform::from_pose(d, 256.0);
  auto const tm = RigidTransform::from_pose(moved, 256.0);
  for (auto [ux, uy] : {std::pair{0.1, -0.2}, std::pair{-0.3, 0.25}}) {
    double x1, y1, x2, y2, x3, y3;
    tr.apply(ux, uy, x1, y1);
    td.apply(x1, y1, x2, y2);
    tm.apply(ux, uy, x3, y3);
    CHECK(x2 == doctest::Approx(x3).epsilon(1e-12));
    CHECK(y2 == doctest::Approx(y3).epsilon(1e-12));
  }
}

TEST_CASE("timeline profiles")
{
  TimelineSpec zero;
  auto const z = generate_timeline(10, zero, 1);
  REQUIRE(z.size() == 10);
  for (auto const &e : z.entries) {
    CHECK(e.pose.is_identity());
    CHECK(e.field.is_zero());
  }

  TimelineSpec step;
  step.profile = TimelineProfile::Step;
  StepJump j;
  j.shot = 6;
  j.state.pose.theta_deg = 12.0;
  step.jumps.push_back(j);
  auto const s = generate_timeline(12, step, 1);
  CHECK(s.distinct_states().size() == 2);
  CHECK(s.entries[5].pose.theta_deg == 0.0);
  CHECK(s.entries[6].pose.theta_deg == 12.0);
  CHECK(s.entries[11].pose.theta_deg == 12.0);

  TimelineSpec walk;
  walk.profile = TimelineProfile::Walk;
  walk.walk_step_deg = 2.0;
  walk.walk_bound_deg = 3.0;
  auto const w = generate_timeline(400, walk, 5);
  double peak = 0.0;
  for (auto const &e : w.entries) {
    peak = std::max(peak, std::abs(e.pose.theta_deg));
  }
  CHECK(peak <= 3.0);
  CHECK(peak > 2.0);
  auto const w2 = generate_timeline(400, walk, 5);
  CHECK(w.entries == w2.entries);
  CHECK(generate_timeline(400, walk, 6).entries != w.entries);
}

TEST_CASE("discrete profile")
{
  TimelineSpec d;
  d.profile = TimelineProfile::Discrete;
  d.n_states = 12;
  d.rotation_deg = 12.0;
  d.translation_mm = 2.0;
  d.field_hz = 20.0;
  d.field_linear_hz = 5.0;
  auto const t = generate_timeline(24, d, 1);
  CHECK(t.distinct_states().size() == 12);
  CHECK(t.entries[0].pose.is_identity());
  CHECK(t.entries[0].field.is_zero());
  CHECK(t.entries[1] == t.entries[0]);
  double th = 0.0, dx = 0.0, c0 = 0.0, c1 = 0.0;
  for (auto const &e : t.entries) {
    th = std::max(th, std::abs(e.pose.theta_deg));
    dx = std::max(dx, std::abs(e.pose.dx_mm));
    c0 = std::max(c0, std::abs(e.field.c[0]));
    c1 = std::max(c1, std::abs(e.field.c[1]));
    CHECK(e.field.c[3] == 0.0);
  }
  CHECK(th == doctest::Approx(12.0));
  CHECK(dx == doctest::Approx(2.0));
  CHECK(c0 == doctest::Approx(20.0));
  CHECK(c1 == doctest::Approx(5.0));
  d.n_states = 30;
  CHECK_THROWS_AS(generate_timeline(24, d, 1), Error);
}

TEST_CASE("timeline text format")
{
  TimelineSpec walk;
  walk.profile = TimelineProfile::Walk;
  auto const t = generate_timeline(20, walk, 3);
  auto const back = parse_timeline(format_timeline(t));
  CHECK(back.entries == t.entries);

  auto const parsed = parse_timeline("# header\n0 1 2 3 0 0 0 0 0 0  # trailing\n\n1 -4 0 0 5 0 0 0 0 1\n");
  REQUIRE(parsed.size() == 2);
  CHECK(parsed.entries[1].pose.theta_deg == -4.0);
  CHECK(parsed.entries[1].field.c[5] == 1.0);

  auto message = [](std::string const &text) {
    try {
      (void)parse_timeline(text, 256.0, "t.txt");
    } catch (Error const &e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("0 0 0 0 0 0 0 0 0 0\n1 0 0 0 0 0\n").find("t.txt:2") != std::string::npos);
  CHECK(message("0 0 0 0 0 0 0 0 0 0\n2 0 0 0 0 0 0 0 0 0\n").find("t.txt:2") != std::string::npos);
  CHECK(message("0 0 0 0 0 0 0 0 0 0 7\n").find("t.txt:1") != std::string::npos);
  CHECK(message("0 200 0 0 0 0 0 0 0 0\n").find("t.txt:1") != std::string::npos);
  CHECK(!message("# nothing\n").empty());
}
