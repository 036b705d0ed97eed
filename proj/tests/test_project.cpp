#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "capbound/convop.hpp"
#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"
#include "capbound/project.hpp"
#include "oracles.hpp"

using namespace capbound;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

KernelTensor random_in_ball(std::mt19937_64& rng, const KernelTensor& center, double b) {
  auto d = oracle::random_kernel(rng, center.c_out(), center.c_in(), center.kh(), center.kw());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  d *= b * u(rng) / group_norm_21(d);
  return center + d;
}

ConvSpec grid_spec(const KernelTensor& g) { return make_spec(g, g.kh(), g.kw()); }

/// Infeasible toy layer: the reference has Lipschitz constant 1 <= s, and the kernel violates both constraints by a
/// factor between 1.5 and 3.
struct Toy {
  KernelTensor k;
  ConstraintSet c;
};

Toy make_toy(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> ch(1, 3);
  std::uniform_real_distribution<double> factor(1.5, 3.0), lip(3.0, 5.0);
  const std::size_t co = ch(rng), ci = ch(rng);
  Toy t;
  t.c.spec = make_spec(KernelTensor(co, ci, 3, 3), 5, 5);
  t.c.reference = init_scale_to_feasible(oracle::random_kernel(rng, co, ci, 3, 3), t.c.spec, 1.0);
  auto d = init_scale_to_feasible(oracle::random_kernel(rng, co, ci, 3, 3), t.c.spec, lip(rng));
  t.k = t.c.reference + d;
  const double l = lipschitz_constant(t.k, t.c.spec).value;
  t.c.lipschitz_bound = std::max(1.0, l / factor(rng));
  t.c.distance_bound = group_norm_21(d) / factor(rng);
  return t;
}

}  // namespace

TEST_CASE("l21 projection: trivial cases") {
  std::mt19937_64 rng(30);
  auto c = oracle::random_kernel(rng, 2, 2, 3, 3);
  auto k = random_in_ball(rng, c, 3.0);
  CHECK(oracle::frob_dist(project_l21_ball(k, c, 3.0), k) == 0.0);
  CHECK(oracle::frob_dist(project_l21_ball(k, c, 0.0), c) == 0.0);

  KernelTensor one(1, 4, 1, 1);
  one(0, 0, 0, 0) = 6;
  one(0, 1, 0, 0) = 8;  // norm 10
  auto p = project_l21_ball(one, KernelTensor(1, 4, 1, 1), 4.0);
  CHECK(p(0, 0, 0, 0) == doctest::Approx(2.4));
  CHECK(p(0, 1, 0, 0) == doctest::Approx(3.2));
}

TEST_CASE("l21 projection matches bisection and beats feasible candidates") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 100; ++t) {
    auto c = oracle::random_kernel(rng, 2, 3, 2, 2);
    auto k = oracle::random_kernel(rng, 2, 3, 2, 2, 2.0);
    double b = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    auto p = project_l21_ball(k, c, b);
    auto o = oracle::l21_bisection(k, c, b);
    CHECK(oracle::frob_dist(p, o) < 1e-8);
    CHECK(oracle::fiber_norm_sum_diff(p, c) <= b * (1 + 1e-9));
  }
  auto c = oracle::random_kernel(rng, 2, 2, 2, 2);
  auto k = oracle::random_kernel(rng, 2, 2, 2, 2, 3.0);
  const double b = 2.0;
  auto p = project_l21_ball(k, c, b);
  const double best = oracle::frob_dist(p, k);
  int beaten = 0;
  for (int t = 0; t < 10000; ++t) {
    // Half the candidates are local perturbations of the projection pulled back into the ball.
    KernelTensor y = (t % 2) ? random_in_ball(rng, c, b)
                             : radial_project(p + oracle::random_kernel(rng, 2, 2, 2, 2, 0.05), c, b, RadialNorm::l21);
    if (oracle::frob_dist(y, k) < best) ++beaten;
  }
  CHECK(beaten == 0);
}

TEST_CASE("l21 projection with tied fiber norms") {
  KernelTensor k(1, 1, 2, 2);
  for (auto& v : k.values()) v = 1.0;
  auto p = project_l21_ball(k, KernelTensor(1, 1, 2, 2), 2.0);
  for (double v : p.values()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("spectral projection") {
  DenseMatrix d = DenseMatrix::Zero(2, 2);
  d(0, 0) = 3;
  d(1, 1) = 1;
  auto K = matrix_as_kernel(d);
  auto p = project_spectral(K, make_spec(K, 1, 1), 2.0);
  CHECK(p(0, 0, 0, 0) == doctest::Approx(2.0));
  CHECK(p(1, 1, 0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(p(0, 1, 0, 0)) < 1e-12);

  std::mt19937_64 rng(32);
  auto small = oracle::random_kernel(rng, 2, 2, 3, 3);
  auto sspec = make_spec(small, 4, 4);
  double top = fft_exact_spectrum(small, sspec).max;
  CHECK(oracle::frob_dist(project_spectral(small, sspec, top * 1.5), embed_in_grid(small, 4, 4)) < 1e-10);

  for (int t = 0; t < 10; ++t) {
    auto k = oracle::random_kernel(rng, 2, 3, 3, 3);
    auto spec = make_spec(k, 4, 5);
    double before = fft_exact_spectrum(k, spec).max;
    double s = before * std::uniform_real_distribution<double>(0.2, 1.2)(rng);
    auto g = project_spectral(k, spec, s);
    CHECK(fft_exact_spectrum(g, grid_spec(g)).max == doctest::Approx(std::min(s, before)).epsilon(1e-8));
    // Clipping the singular values of the dense operator gives the same operator.
    Eigen::MatrixXd m = oracle::naive_matrix(k, 4, 5, 1, 1, Padding::circular);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd clipped =
        svd.matrixU() * svd.singularValues().cwiseMin(s).asDiagonal() * svd.matrixV().transpose();
    Eigen::MatrixXd got = oracle::naive_matrix(g, 4, 5, 1, 1, Padding::circular);
    CHECK((got - clipped).norm() < 1e-8 * std::max(1.0, m.norm()));
  }
}

TEST_CASE("support projection") {
  KernelTensor g(1, 1, 3, 3);
  for (auto& v : g.values()) v = 1.0;
  auto p = project_support(g, 2, 2);
  double s = 0;
  for (double v : p.values()) s += v;
  CHECK(s == 4.0);
  std::mt19937_64 rng(33);
  auto k = oracle::random_kernel(rng, 2, 2, 3, 3);
  auto e = embed_in_grid(k, 5, 5);
  CHECK(oracle::frob_dist(project_support(e, 3, 3), e) == 0.0);
  auto r = oracle::random_kernel(rng, 2, 2, 5, 5);
  auto once = project_support(r, 3, 2);
  CHECK(oracle::frob_dist(project_support(once, 3, 2), once) == 0.0);
}

TEST_CASE("idempotence and nonexpansiveness") {
  std::mt19937_64 rng(34);
  for (int t = 0; t < 20; ++t) {
    auto c = oracle::random_kernel(rng, 2, 2, 4, 4);
    auto x = oracle::random_kernel(rng, 2, 2, 4, 4, 2.0);
    auto y = oracle::random_kernel(rng, 2, 2, 4, 4, 2.0);
    auto spec = grid_spec(x);
    auto pl = [&](const KernelTensor& z) { return project_l21_ball(z, c, 3.0); };
    auto ps = [&](const KernelTensor& z) { return project_spectral(z, spec, 1.0); };
    auto pc = [&](const KernelTensor& z) { return project_support(z, 3, 3); };
    CHECK(oracle::frob_dist(pl(pl(x)), pl(x)) < 1e-10);
    CHECK(oracle::frob_dist(ps(ps(x)), ps(x)) < 1e-10);
    CHECK(oracle::frob_dist(pc(pc(x)), pc(x)) < 1e-10);
    const double dxy = oracle::frob_dist(x, y);
    CHECK(oracle::frob_dist(pl(x), pl(y)) <= dxy + 1e-10);
    CHECK(oracle::frob_dist(ps(x), ps(y)) <= dxy + 1e-10);
    CHECK(oracle::frob_dist(pc(x), pc(y)) <= dxy + 1e-10);
  }
}

TEST_CASE("alternating projections") {
  std::mt19937_64 rng(35);
  auto feasible = make_toy(rng);
  auto same = alternating_projections(feasible.c.reference, feasible.c, 3);
  CHECK(oracle::frob_dist(same.kernel, feasible.c.reference) < 1e-10);

  for (int t = 0; t < 10; ++t) {
    auto toy = make_toy(rng);
    REQUIRE(measure_violation(toy.k, toy.c).relative() > 0.0);
    auto r = alternating_projections(toy.k, toy.c, 15);
    // Observed excesses stay below 1e-3 relative; the Lipschitz excess left by the final support step is a few 1e-4.
    CHECK(r.report.final.distance_excess <= 1e-3 * toy.c.distance_bound);
    CHECK(r.report.final.lipschitz_excess <= 1e-3 * toy.c.lipschitz_bound);
    REQUIRE(r.report.trajectory.size() == 15);
    for (std::size_t j = 1; j < r.report.trajectory.size(); ++j)
      CHECK(r.report.trajectory[j].relative() <= r.report.trajectory[j - 1].relative() + 1e-12);
  }
}

TEST_CASE("projection order knob") {
  auto order = parse_projection_order("C2,C1,C3");
  REQUIRE(order.size() == 3);
  CHECK(order[0] == ConstraintId::spectral);
  CHECK_THROWS_AS(parse_projection_order("C4"), UsageError);
}

TEST_CASE("dykstra") {
  std::mt19937_64 rng(36);
  auto toy = make_toy(rng);
  auto same = dykstra(toy.c.reference, toy.c);
  CHECK(oracle::frob_dist(same.kernel, toy.c.reference) < 1e-10);

  // Distance constraint inactive and the support covering the whole grid: only the spectral set binds, so both
  // schemes end at its projection.
  ConstraintSet only;
  auto k3 = oracle::random_kernel(rng, 2, 3, 3, 3, 2.0);
  only.spec = make_spec(k3, 3, 3);
  only.reference = KernelTensor(2, 3, 3, 3);
  only.distance_bound = 1e9;
  only.lipschitz_bound = 0.5 * fft_exact_spectrum(k3, only.spec).max;
  auto clip = project_spectral(k3, only.spec, only.lipschitz_bound);
  CHECK(oracle::frob_dist(alternating_projections(k3, only, 15).kernel, clip) < 1e-10);
  CHECK(oracle::frob_dist(dykstra(k3, only, 100).kernel, clip) < 1e-10);

  for (int t = 0; t < 5; ++t) {
    auto ty = make_toy(rng);
    auto alt = alternating_projections(ty.k, ty.c, 15);
    auto dy = dykstra(ty.k, ty.c, 100);
    CHECK(dy.report.final.relative() <= 1e-3);
    CHECK(oracle::frob_dist(dy.kernel, ty.k) <= oracle::frob_dist(alt.kernel, ty.k) + 1e-6);
  }
}

TEST_CASE("dykstra on the two-disc lens") {
  // A 1x2 kernel on a 1x1 grid is a point in the plane: the distance ball is a disc around the reference and the
  // spectral ball is the disc of radius s around the origin.
  const std::pair<Eigen::Vector2d, Eigen::Vector2d> cases[] = {
      {{3.0, 0.2}, {1.0, 0.0}}, {{0.0, 3.0}, {1.0, 0.0}}, {{-2.0, -2.0}, {0.5, 0.5}}, {{0.9, 0.1}, {1.2, 0.0}}};
  for (const auto& [pt, ref] : cases) {
    ConstraintSet c;
    c.spec = make_spec(KernelTensor(1, 2, 1, 1), 1, 1);
    c.reference = KernelTensor({1, 2, 1, 1}, {ref.x(), ref.y()});
    c.distance_bound = 0.8;
    c.lipschitz_bound = 1.0;
    KernelTensor k({1, 2, 1, 1}, {pt.x(), pt.y()});
    auto r = dykstra(k, c, 100);
    Eigen::Vector2d expect = oracle::lens_projection(pt, ref, 0.8, Eigen::Vector2d::Zero(), 1.0);
    CHECK(std::abs(r.kernel(0, 0, 0, 0) - expect.x()) < 1e-6);
    CHECK(std::abs(r.kernel(0, 1, 0, 0) - expect.y()) < 1e-6);
  }
}

TEST_CASE("radial projection") {
  std::mt19937_64 rng(37);
  auto c = oracle::random_kernel(rng, 2, 2, 3, 3);
  auto inside = random_in_ball(rng, c, 1.0);
  CHECK(oracle::frob_dist(radial_project(inside, c, 1.0, RadialNorm::l21), inside) == 0.0);
  KernelTensor one({1, 3, 1, 1}, {1.0, -2.0, 2.0});
  KernelTensor zero(1, 3, 1, 1);
  CHECK(oracle::frob_dist(radial_project(one, zero, 1.5, RadialNorm::l21), project_l21_ball(one, zero, 1.5)) < 1e-14);
  for (int t = 0; t < 20; ++t) {
    auto k = oracle::random_kernel(rng, 2, 2, 3, 3, 2.0);
    auto rad = radial_project(k, c, 1.0, RadialNorm::l21);
    auto orth = project_l21_ball(k, c, 1.0);
    CHECK(oracle::frob_dist(rad, k) >= oracle::frob_dist(orth, k) - 1e-12);
  }
  auto spec = make_spec(c, 4, 4);
  auto big = oracle::random_kernel(rng, 2, 2, 3, 3, 3.0);
  auto sp = radial_project(big, KernelTensor(2, 2, 3, 3), 0.7, RadialNorm::spectral, &spec);
  CHECK(fft_exact_spectrum(sp, spec).max == doctest::Approx(0.7).epsilon(1e-10));
  CHECK_THROWS_AS(radial_project(big, c, 1.0, RadialNorm::spectral), UsageError);
}

TEST_CASE("radial point is never closer than the orthogonal projection") {
  std::mt19937_64 rng(38);
  for (int t = 0; t < 10; ++t) {
    auto toy = make_toy(rng);
    auto rad = radial_joint(toy.k, toy.c);
    auto orth = dykstra(toy.k, toy.c, 100);
    CHECK(rad.report.final.relative() <= 1e-9);
    CHECK(oracle::frob_dist(rad.kernel, toy.k) >= oracle::frob_dist(orth.kernel, toy.k) - 1e-6);
  }
}

TEST_CASE("initial scaling") {
  std::mt19937_64 rng(39);
  auto k = oracle::random_kernel(rng, 2, 3, 3, 3);
  auto spec = make_spec(k, 5, 5);
  const double lip = fft_exact_spectrum(k, spec).max;
  CHECK(oracle::frob_dist(init_scale_to_feasible(k, spec, lip), k) == 0.0);
  auto half = init_scale_to_feasible(k, spec, lip / 2);
  CHECK(oracle::frob_dist(half, 0.5 * k) < 1e-12);
  CHECK(fft_exact_spectrum(init_scale_to_feasible(k, spec, 0.37), spec).max == doctest::Approx(0.37).epsilon(1e-8));
  CHECK_THROWS_AS(init_scale_to_feasible(KernelTensor(2, 3, 3, 3), spec, 1.0), UsageError);
}

TEST_CASE("violation measurement") {
  ConstraintSet c;
  c.spec = make_spec(KernelTensor(1, 1, 1, 1), 2, 2);
  c.reference = KernelTensor(1, 1, 1, 1);
  c.distance_bound = 1.0;
  c.lipschitz_bound = 2.0;
  KernelTensor k({1, 1, 1, 1}, {3.0});
  auto v = measure_violation(k, c);
  CHECK(v.distance_excess == doctest::Approx(2.0));
  CHECK(v.lipschitz_excess == doctest::Approx(1.0));
  CHECK(v.relative() == doctest::Approx(2.0));
  c.lipschitz_bound = kInf;
  CHECK(measure_violation(k, c).lipschitz_excess == 0.0);
  c.distance_bound = -1;
  CHECK_THROWS_AS(c.validate(), UsageError);
}
