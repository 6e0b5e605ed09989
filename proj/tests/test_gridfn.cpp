#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hierpop/gridfn.hpp"

#include <cmath>
#include <random>

using namespace hierpop;

TEST_CASE("grid construction and invariants") {
  Grid g(2.0, 10);
  CHECK(g.h() == doctest::Approx(0.2));
  CHECK(g.node(0) == 0.0);
  CHECK(g.node(10) == doctest::Approx(2.0));
  CHECK_THROWS_AS(Grid(0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(Grid(-1.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(Grid(1.0, 1), std::invalid_argument);
}

TEST_CASE("grid function validation") {
  Grid g(1.0, 4);
  CHECK_THROWS_AS(GridFunction(g, Eigen::VectorXd::Zero(4)), std::invalid_argument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(5);
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(GridFunction(g, bad), std::invalid_argument);
}

TEST_CASE("integrate: constants and affine functions are exact") {
  Grid g(1.0, 10);
  CHECK(integrate(GridFunction::constant(g, 1.0)) == doctest::Approx(1.0).epsilon(1e-15));
  auto lin = GridFunction::sample(g, [](double s) { return s; });
  CHECK(integrate(lin) == doctest::Approx(0.5).epsilon(1e-15));
  Grid g2(1.0, 7);
  auto lin2 = GridFunction::sample(g2, [](double s) { return s; });
  CHECK(integrate(lin2) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("integrate: hand-computed trapezoid sum for s^2, n = 2") {
  Grid g(1.0, 2);
  auto f = GridFunction::sample(g, [](double s) { return s * s; });
  // 0.25 * (0 + 2*0.25 + 1)
  CHECK(integrate(f) == doctest::Approx(0.375).epsilon(1e-16));
}

TEST_CASE("cumulative integral: closed forms") {
  Grid g(1.0, 10);
  auto ones = GridFunction::constant(g, 1.0);
  auto c1 = cumulative_integral(ones);
  for (Eigen::Index i = 0; i <= 10; ++i) {
    CHECK(c1[i] == doctest::Approx(g.node(i)).epsilon(1e-15));
  }
  auto lin = GridFunction::sample(g, [](double s) { return s; });
  auto c2 = cumulative_integral(lin);
  for (Eigen::Index i = 0; i <= 10; ++i) {
    CHECK(c2[i] == doctest::Approx(0.5 * g.node(i) * g.node(i)).epsilon(1e-14));
  }
}

TEST_CASE("cumulative integral of e^s converges at second order") {
  Grid g(1.0, 100);
  auto f = GridFunction::sample(g, [](double s) { return std::exp(s); });
  auto c = cumulative_integral(f);
  double worst = 0.0;
  for (Eigen::Index i = 0; i <= 100; ++i) {
    worst = std::max(worst, std::abs(c[i] - (std::exp(g.node(i)) - 1.0)));
  }
  // |error| <= C h^2 with C ~ e/12.
  CHECK(worst <= 1.0 * 1e-4);
  CHECK(worst > 0.0);
}

TEST_CASE("integrate equals the last cumulative node exactly") {
  Grid g(3.0, 57);
  std::mt19937 rng(1234);
  std::uniform_real_distribution<double> u(-2.0, 5.0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd v(58);
    for (auto& x : v.reshaped()) x = u(rng);
    GridFunction f(g, v);
    CHECK(integrate(f) == cumulative_integral(f)[57]);
  }
}

TEST_CASE("integrate is linear to machine precision") {
  Grid g(2.0, 33);
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd fv(34), gv(34);
  for (Eigen::Index i = 0; i < 34; ++i) {
    fv[i] = u(rng);
    gv[i] = u(rng);
  }
  GridFunction f(g, fv), h(g, gv);
  const double a = 2.75, b = -0.6;
  GridFunction combo(g, a * fv + b * gv);
  CHECK(integrate(combo) ==
        doctest::Approx(a * integrate(f) + b * integrate(h)).epsilon(1e-13));
}

TEST_CASE("second-order convergence of the trapezoid rule on e^s") {
  auto err = [](Eigen::Index n) {
    Grid g(1.0, n);
    auto f = GridFunction::sample(g, [](double s) { return std::exp(s); });
    return std::abs(integrate(f) - (std::exp(1.0) - 1.0));
  };
  const double ratio = err(100) / err(200);
  CHECK(ratio > 3.2);
  CHECK(ratio < 4.8);
}

TEST_CASE("positivity: nonnegative nodes give nonnegative integrals") {
  Grid g(1.5, 41);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Eigen::VectorXd v(42);
  for (auto& x : v.reshaped()) x = u(rng);
  GridFunction f(g, v);
  CHECK(integrate(f) >= 0.0);
  auto c = cumulative_integral(f);
  for (Eigen::Index i = 1; i <= 41; ++i) CHECK(c[i] >= c[i - 1]);
}

TEST_CASE("interpolate reproduces node values and linear functions") {
  Grid g(1.0, 10);
  auto f = GridFunction::sample(g, [](double s) { return 3.0 * s - 1.0; });
  for (Eigen::Index i = 0; i <= 10; ++i) {
    CHECK(interpolate(f, g.node(i)) == f[i]);
  }
  CHECK(interpolate(f, 0.35) == doctest::Approx(3.0 * 0.35 - 1.0).epsilon(1e-14));
  CHECK_THROWS_AS(interpolate(f, -0.01), std::domain_error);
  CHECK_THROWS_AS(interpolate(f, 1.01), std::domain_error);
}

TEST_CASE("interpolation error inside a cell stays under (h^2/8) max|f''| for s^2") {
  Grid g(1.0, 10);
  auto f = GridFunction::sample(g, [](double s) { return s * s; });
  // Mid-cell point of the first cell: the interpolant value is 0.005 and the
  // error attains the bound exactly since f'' = 2.
  const double v = interpolate(f, 0.05);
  CHECK(v == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(std::abs(v - 0.0025) <= 2.0 / 8.0 * g.h() * g.h() + 1e-15);
}

TEST_CASE("refine: identity, constants, and exact linear resampling") {
  Grid g(1.0, 8);
  auto c = GridFunction::constant(g, 4.2);
  auto c4 = refine(c, 4);
  CHECK(c4.grid().n() == 32);
  for (Eigen::Index i = 0; i <= 32; ++i) CHECK(c4[i] == 4.2);

  auto lin = GridFunction::sample(g, [](double s) { return s; });
  CHECK(refine(lin, 1).values() == lin.values());
  auto lin2 = refine(lin, 2);
  for (Eigen::Index i = 0; i <= 16; ++i) {
    CHECK(lin2[i] == doctest::Approx(lin2.grid().node(i)).epsilon(1e-15));
  }
}

TEST_CASE("attenuated cumulative matches the direct trapezoid double loop") {
  Grid g(1.0, 24);
  auto gfun = GridFunction::sample(g, [](double s) { return 1.0 + 0.3 * std::sin(5 * s); });
  auto lam = GridFunction::sample(g, [](double s) { return 0.7 * s + 0.2 * s * s; });
  auto fast = attenuated_cumulative(gfun, lam);
  for (Eigen::Index i = 0; i <= 24; ++i) {
    // Direct trapezoid of exp(-(lam(s_i)-lam(x))) g(x) over [0, s_i].
    double acc = 0.0;
    for (Eigen::Index k = 0; k < i; ++k) {
      const double a = std::exp(-(lam[i] - lam[k])) * gfun[k];
      const double b = std::exp(-(lam[i] - lam[k + 1])) * gfun[k + 1];
      acc += 0.5 * g.h() * (a + b);
    }
    CHECK(fast[i] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("attenuated cumulative with a complex exponent matches an analytic kernel") {
  // g = 1, Lambda = lambda * s: K(s) = (1 - e^{-lambda s}) / lambda.
  Grid g(1.0, 400);
  const std::complex<double> lambda(0.8, 1.7);
  ComplexGridFunction ones = to_complex(GridFunction::constant(g, 1.0));
  ComplexGridFunction lam(g, ComplexGridFunction::Vector::LinSpaced(401, 0.0, 1.0) * lambda);
  auto k = attenuated_cumulative(ones, lam);
  for (Eigen::Index i = 0; i <= 400; i += 80) {
    const std::complex<double> expected =
        (1.0 - std::exp(-lambda * g.node(i))) / lambda;
    CHECK(std::abs(k[i] - expected) <= 2e-6);
  }
}

TEST_CASE("derivative: centered interior is exact on quadratics") {
  Grid g(1.0, 20);
  auto f = GridFunction::sample(g, [](double s) { return s * (1.0 - s); });
  auto d = derivative(f);
  for (Eigen::Index i = 1; i < 20; ++i) {
    CHECK(d[i] == doctest::Approx(1.0 - 2.0 * g.node(i)).epsilon(1e-12));
  }
  // One-sided ends are first order.
  CHECK(d[0] == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("trapezoid weights sum to m and match integrate") {
  Grid g(2.5, 17);
  auto w = trapezoid_weights(g);
  CHECK(w.sum() == doctest::Approx(2.5).epsilon(1e-14));
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(18);
  for (auto& x : v.reshaped()) x = u(rng);
  GridFunction f(g, v);
  CHECK(w.dot(v) == doctest::Approx(integrate(f)).epsilon(1e-13));
}
