#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hierpop/stability.hpp"
#include "fixtures.hpp"

#include <cmath>

using namespace hierpop;

namespace {

// Closed-form double integral for constant ingredients:
// int_0^m k0 int_0^s e^{-(mu0+lambda)(s-y)/g0} (r0/g0) dy ds.
Complex constants_kernel(Complex lambda, double k0, double r0, double mu0, double g0,
                         double m) {
  const Complex z = (mu0 + lambda) / g0;
  return k0 * r0 / g0 * (m - (1.0 - std::exp(-z * m)) / z) / z;
}

LinearizationData synthetic_constants_lin(const Grid& g, double k0, double r0, double mu0,
                                          double g0) {
  // A hand-built linearization with prescribed rho_* = -r0 < 0.
  LinearizationData lin{
      g,
      0.0,
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::constant(g, g0),
      GridFunction::constant(g, -r0),
      GridFunction::constant(g, mu0),
      GridFunction::zero(g),
      GridFunction::constant(g, k0),
      GridFunction::constant(g, 1.0),
      GridFunction::constant(g, mu0 / g0),
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::constant(g, r0 / g0),
  };
  lin.Lambda = cumulative_integral(lin.survival_exponent);
  lin.gamma_time = cumulative_integral(GridFunction::constant(g, 1.0 / g0));
  return lin;
}

SteadyState synthetic_state(const ModelIngredients& ing, const GridFunction& p) {
  auto env = environment(p, ing);
  return SteadyState{p, env.E, env.P, Eigen::VectorXd::Constant(1, 1.0), 0.0, 0, true};
}

}  // namespace

TEST_CASE("linearize: P-independent growth kills rho_* and f1") {
  ModelIngredients ing = fixtures::constants(1.0, 1.0);
  Grid g(1.0, 50);
  auto p = GridFunction::sample(g, [](double s) { return s * (1.0 - s); });
  auto lin = linearize(synthetic_state(ing, p), ing);
  CHECK(lin.rho_star.values().cwiseAbs().maxCoeff() == 0.0);
  CHECK(lin.f1.values().cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(lin.has_separable());
}

TEST_CASE("linearize: zero state kills f2 and leaves f3 = beta1/gamma") {
  ModelIngredients ing = fixtures::hierarchical();
  Grid g(1.0, 50);
  auto lin = linearize_trivial(ing, g);
  REQUIRE(lin.has_separable());
  CHECK(lin.f2->values().cwiseAbs().maxCoeff() == 0.0);
  for (Eigen::Index i = 0; i <= 50; ++i) {
    const double s = g.node(i);
    CHECK((*lin.f3)[i] == doctest::Approx(30.0 * s * (1.0 - s) / 1.0).epsilon(1e-12));
  }
}

TEST_CASE("linearize: product-rule identity for rho_* with gamma2 = 1 + P") {
  // gamma1 = 1, gamma2 = 1 + P, p_* = s(1-s): rho_* = gamma2'(P) (gamma1 p_*)' = 1 - 2s.
  ModelIngredients ing(RateExpr::constant(1.0), RateExpr::affine(Var::P, 1.0, 1.0),
                       RateExpr::constant(0.5),
                       RateExpr::product(RateExpr::constant(1.0), RateExpr::constant(1.0)),
                       RateExpr::constant(1.0), RateExpr::constant(1.0), 0.5, 1.0);
  Grid g(1.0, 200);
  auto p = GridFunction::sample(g, [](double s) { return s * (1.0 - s); });
  auto lin = linearize(synthetic_state(ing, p), ing);
  for (Eigen::Index i = 0; i <= 200; ++i) {
    CHECK(lin.rho_star[i] == doctest::Approx(1.0 - 2.0 * g.node(i)).epsilon(0.02));
  }
  // Node-wise the computed rho_* equals gamma2' (gamma1 p_*)' with the same
  // difference stencil.
  auto rhs = derivative(p);
  for (Eigen::Index i = 0; i <= 200; ++i) {
    CHECK(lin.rho_star[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
  }
}

TEST_CASE("char_K: zero rho gives zero, large real parts decay") {
  ModelIngredients ing = fixtures::constants(1.2, 1.0);
  Grid g(1.0, 80);
  auto p = GridFunction::sample(g, [](double s) { return s * (1.0 - s); });
  auto lin = linearize(synthetic_state(ing, p), ing);
  CHECK(std::abs(char_K(Complex(0.7, 0.3), lin)) == 0.0);

  auto lin2 = synthetic_constants_lin(Grid(1.0, 200), 1.3, 0.8, 1.1, 0.9);
  const double k10 = std::abs(char_K(Complex(10.0, 0.0), lin2));
  const double k50 = std::abs(char_K(Complex(50.0, 0.0), lin2));
  const double k400 = std::abs(char_K(Complex(400.0, 0.0), lin2));
  CHECK(k10 < std::abs(char_K(Complex(0.0, 0.0), lin2)));
  CHECK(k50 < k10);
  CHECK(k400 < 5e-3);
}

TEST_CASE("char_K: closed-form constants oracle") {
  const double k0 = 1.3, r0 = 0.8, mu0 = 1.1, g0 = 0.9, m = 1.0;
  auto lin = synthetic_constants_lin(Grid(m, 400), k0, r0, mu0, g0);
  for (double x : {0.0, 0.5, 2.0}) {
    const Complex expected = constants_kernel(Complex(x, 0.0), k0, r0, mu0, g0, m);
    CHECK(std::abs(char_K(Complex(x, 0.0), lin) - expected) <= 1e-5 * (1.0 + std::abs(expected)));
  }
  // Complex argument too.
  const Complex z(0.4, 1.5);
  CHECK(std::abs(char_K(z, lin) - constants_kernel(z, k0, r0, mu0, g0, m)) <= 1e-5);
  // Conjugate symmetry for real data.
  CHECK(std::abs(char_K(std::conj(z), lin) - std::conj(char_K(z, lin))) <= 1e-14);
}

TEST_CASE("char_det: all-zero kernels give det = 1; scalar reduction matches char_K") {
  // beta1 = 0: f3 = 0; zero state: f2 = 0; gamma2 = 1+P with p=0 gives f1 = 0.
  ModelIngredients zf(RateExpr::constant(1.0), RateExpr::affine(Var::P, 1.0, 1.0),
                      RateExpr::constant(0.5),
                      RateExpr::product(RateExpr::constant(0.0), RateExpr::constant(1.0)),
                      RateExpr::constant(1.0), RateExpr::constant(1.0), 0.5, 1.0);
  Grid g(1.0, 60);
  auto lin0 = linearize_trivial(zf, g);
  auto ev = char_det(Complex(0.3, 0.2), lin0);
  CHECK(std::abs(ev.value - 1.0) == 0.0);
  CHECK(ev.matrix_A.norm() == 0.0);

  // With f2 = f3 = 0 but f1 nonzero: det(I - A) = 1 - a11 and a11 = K.
  auto lin1 = synthetic_constants_lin(Grid(1.0, 100), 1.1, 0.6, 0.9, 1.0);
  lin1.fertility = SeparableFertility{RateExpr::constant(0.0), RateExpr::constant(1.0)};
  lin1.beta2_at_Estar = GridFunction::constant(lin1.grid, 1.0);
  lin1.f2 = GridFunction::zero(lin1.grid);
  lin1.f3 = GridFunction::zero(lin1.grid);
  for (double x : {0.0, 0.8}) {
    const Complex lam(x, 0.3);
    auto e = char_det(lam, lin1);
    CHECK(std::abs(e.value - (1.0 - char_K(lam, lin1))) <= 1e-12);
  }
}

TEST_CASE("char_det at the zero state reduces to 1 - char_trivial") {
  ModelIngredients ing = fixtures::hierarchical();
  Grid g(1.0, 150);
  auto lin = linearize_trivial(ing, g);
  auto b1 = GridFunction::sample(g, [&](double s) { return 30.0 * s * (1.0 - s); });
  auto b2 = GridFunction::constant(g, 1.0);  // c/(1+E) at E = 0 with c = 1
  for (double re : {-0.2, 0.0, 0.5}) {
    for (double im : {0.0, 1.0, 7.0}) {
      const Complex lam(re, im);
      const Complex det = char_det(lam, lin).value;
      const Complex kl = char_trivial(lam, b1, b2, ing);
      CHECK(std::abs(det - (1.0 - kl)) <= 1e-10);
    }
  }
}

TEST_CASE("char_trivial: K(0) equals the net reproduction number at zero") {
  ModelIngredients ing = fixtures::constants(2.0, 1.3, 0.9, 1.1);
  Grid g(1.0, 300);
  auto b1 = GridFunction::constant(g, 2.0);
  auto b2 = GridFunction::constant(g, 1.3);
  const double K0 = char_trivial(Complex(0.0, 0.0), b1, b2, ing).real();
  const double R0 = net_reproduction(GridFunction::zero(g), RateExpr::constant(2.0),
                                     RateExpr::constant(1.3), ing);
  CHECK(std::abs(K0 - R0) <= 1e-12);
  // Closed form for the constants fixture.
  CHECK(K0 == doctest::Approx(fixtures::constants_R0(2.0, 1.3, 0.9, 1.1)).epsilon(1e-5));
  // Decay for large real parts (the kernel falls off like 1/lambda).
  CHECK(std::abs(char_trivial(Complex(60.0, 0.0), b1, b2, ing)) < K0 / 20.0);
  CHECK(std::abs(char_trivial(Complex(600.0, 0.0), b1, b2, ing)) < 1e-2);
}

TEST_CASE("net reproduction: zero fertility and the two-form identity") {
  ModelIngredients ing = fixtures::hierarchical();
  Grid g(1.0, 200);
  CHECK(net_reproduction(GridFunction::zero(g), RateExpr::constant(0.0),
                         RateExpr::constant(1.0), ing) == 0.0);

  auto split = split_separable_fertility(ing.beta);
  REQUIRE(split.has_value());
  auto p = GridFunction::sample(g, [](double s) { return 1.3 * s * (1.0 - s); });
  auto forms = net_reproduction_forms(p, split->beta1, split->beta2, ing);
  CHECK(std::abs(forms.value - forms.alt_value) <= 1e-8 * std::abs(forms.value));
  CHECK(forms.value > 0.0);
}

TEST_CASE("find_real_root: bisection against the closed-form kernel") {
  // Constants with R(0) = 2: bisection finds the positive root of K = 1.
  const double factor = fixtures::constants_R0(1.0, 1.0);
  const double b1 = 2.0 / factor;
  ModelIngredients ing = fixtures::constants(b1, 1.0);
  Grid g(1.0, 400);
  auto bb1 = GridFunction::constant(g, b1);
  auto bb2 = GridFunction::constant(g, 1.0);
  auto kfun = [&](double x) { return char_trivial(Complex(x, 0.0), bb1, bb2, ing).real(); };
  auto root = find_real_root(kfun, 0.0, 50.0);
  REQUIRE(root.has_value());
  CHECK(*root > 0.0);
  CHECK(std::abs(kfun(*root) - 1.0) <= 1e-9);

  // Subcritical: K decreasing from K(0) = 0.5, no root on [0, inf).
  const double b1s = 0.5 / factor;
  ModelIngredients sub = fixtures::constants(b1s, 1.0);
  auto sb1 = GridFunction::constant(g, b1s);
  auto kfun_sub = [&](double x) {
    return char_trivial(Complex(x, 0.0), sb1, bb2, sub).real();
  };
  CHECK_FALSE(find_real_root(kfun_sub, 0.0, 50.0).has_value());

  // The zero function has no root of f = 1.
  CHECK_FALSE(find_real_root([](double) { return 0.0; }, 0.0, 10.0).has_value());
  CHECK_THROWS_AS(find_real_root(kfun, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("scan_complex: no zeros for the constant function") {
  auto roots = scan_complex([](Complex) { return Complex(1.0, 0.0); },
                            ScanWindow{-1.0, 2.0, 5.0});
  CHECK(roots.empty());
}

TEST_CASE("scan_complex: recovers the bisection root and conjugate pairs") {
  const double factor = fixtures::constants_R0(1.0, 1.0);
  const double b1 = 1.5 / factor;
  ModelIngredients ing = fixtures::constants(b1, 1.0);
  Grid g(1.0, 200);
  auto bb1 = GridFunction::constant(g, b1);
  auto bb2 = GridFunction::constant(g, 1.0);
  auto kfun = [&](double x) { return char_trivial(Complex(x, 0.0), bb1, bb2, ing).real(); };
  auto bis = find_real_root(kfun, 0.0, 50.0);
  REQUIRE(bis.has_value());

  auto f = [&](Complex z) { return 1.0 - char_trivial(z, bb1, bb2, ing); };
  auto roots = scan_complex(f, ScanWindow{-2.0, 3.0, 30.0});
  REQUIRE_FALSE(roots.empty());
  double best = 1e9;
  for (const Complex& r : roots) {
    if (std::abs(r.imag()) < 1e-8) best = std::min(best, std::abs(r.real() - *bis));
    // Conjugate partner present for every off-axis root.
    if (r.imag() > 1e-8) {
      bool partner = false;
      for (const Complex& o : roots) {
        partner = partner || std::abs(o - std::conj(r)) <= 1e-6 * (1.0 + std::abs(r));
      }
      CHECK(partner);
    }
  }
  CHECK(best <= 1e-6);
}

TEST_CASE("char_det: continuity in lambda and the non-separable error path") {
  ModelIngredients ing = fixtures::hierarchical();
  Grid g(1.0, 80);
  auto lin = linearize_trivial(ing, g);
  const Complex lam(0.3, 0.7);
  const Complex v0 = char_det(lam, lin).value;
  for (const Complex d : {Complex(1e-6, 0.0), Complex(0.0, 1e-6)}) {
    CHECK(std::abs(char_det(lam + d, lin).value - v0) <= 1e-4);
  }

  // A rank-2 fertility has no f2/f3 kernels; the determinant path refuses.
  auto rank2 = RateExpr::sum(
      RateExpr::product(RateExpr::polynomial(Var::s, {0.0, 1.0}), RateExpr::constant(1.0)),
      RateExpr::product(RateExpr::constant(1.0), RateExpr::affine(Var::y, 0.1, 1.0)));
  ModelIngredients ing2(RateExpr::constant(1.0), RateExpr::constant(1.0),
                        RateExpr::constant(0.5), std::move(rank2), RateExpr::constant(1.0),
                        RateExpr::constant(1.0), 0.5, 1.0);
  auto lin2 = linearize_trivial(ing2, g);
  CHECK_FALSE(lin2.has_separable());
  CHECK_THROWS_AS(char_det(lam, lin2), std::invalid_argument);
}

TEST_CASE("scan_complex rejects a degenerate window") {
  CHECK_THROWS_AS(scan_complex([](Complex) { return Complex(1.0); },
                               ScanWindow{2.0, 1.0, 5.0}),
                  std::invalid_argument);
}

TEST_CASE("char_det satisfies conjugate symmetry for real data") {
  ModelIngredients ing = fixtures::hierarchical();
  Grid g(1.0, 80);
  auto lin = linearize_trivial(ing, g);
  for (const Complex lam : {Complex(0.4, 1.3), Complex(-0.2, 5.0)}) {
    const Complex a = char_det(lam, lin).value;
    const Complex b = char_det(std::conj(lam), lin).value;
    CHECK(std::abs(b - std::conj(a)) <= 1e-13 * (1.0 + std::abs(a)));
  }
}

TEST_CASE("scan_complex: the threaded scan returns the sequential roots") {
  const double factor = fixtures::constants_R0(1.0, 1.0);
  const double b1 = 1.5 / factor;
  ModelIngredients ing = fixtures::constants(b1, 1.0);
  Grid g(1.0, 120);
  auto bb1 = GridFunction::constant(g, b1);
  auto bb2 = GridFunction::constant(g, 1.0);
  auto f = [&](Complex z) { return 1.0 - char_trivial(z, bb1, bb2, ing); };
  ScanOptions seq;
  ScanOptions par;
  par.threads = 4;
  auto r1 = scan_complex(f, ScanWindow{-2.0, 3.0, 20.0}, seq);
  auto r2 = scan_complex(f, ScanWindow{-2.0, 3.0, 20.0}, par);
  REQUIRE(r1.size() == r2.size());
  for (size_t k = 0; k < r1.size(); ++k) {
    CHECK(std::abs(r1[k] - r2[k]) <= 1e-9 * (1.0 + std::abs(r1[k])));
  }
}

TEST_CASE("classify: subcritical synthetic positive state takes the stable branch") {
  // gamma2 falling in P (rho_* <= 0 along an increasing profile), mortality
  // and fertility free of E (the majorant comparisons hold with equality),
  // fertility scaled well below criticality: the determinant scan and the
  // oracle must both come back clear.
  auto beta = RateExpr::product(RateExpr::affine(Var::s, 0.4, 0.4),
                                RateExpr::constant(0.5));
  ModelIngredients ing(RateExpr::constant(1.0), RateExpr::logistic(Var::P, 1.0, 1.0),
                       RateExpr::constant(1.2), std::move(beta), RateExpr::constant(1.0),
                       RateExpr::constant(1.0), 0.5, 1.0);
  Grid g(1.0, 100);
  auto p = GridFunction::sample(g, [](double s) { return 0.5 * s * s; });  // increasing
  auto ss = synthetic_state(ing, p);
  StabilityOptions opts;
  opts.oracle_n = 100;
  auto rep = classify(ss, ing, opts);
  CHECK(rep.verdict == Verdict::stable);
  CHECK(rep.rightmost.real() < 0.0);
  bool scan_ran = false;
  for (const auto& c : rep.triggered_conditions) {
    if (c.name == "det(I - A(lambda)) clear of Re >= 0") {
      scan_ran = true;
      CHECK(c.passed);
    }
  }
  CHECK(scan_ran);
}

TEST_CASE("linearized matrix: decay-dominated spectrum stays left of -mu0") {
  // beta = 0, mu = mu0, gamma P-independent: A+B only.
  const double mu0 = 0.8;
  ModelIngredients ing = fixtures::constants(0.0, 1.0, mu0);
  Grid g(1.0, 80);
  auto lin = linearize_trivial(ing, g);
  auto M = linearized_matrix(lin, ing);
  auto eigs = operator_spectrum(M);
  for (Eigen::Index i = 0; i < eigs.size(); ++i) {
    CHECK(eigs[i].real() <= -mu0 + 1e-9);
  }
}

TEST_CASE("linearized matrix: rightmost eigenvalue tracks the trivial-state root") {
  const double factor = fixtures::constants_R0(1.0, 1.0);
  const double b1 = 1.5 / factor;
  ModelIngredients ing = fixtures::constants(b1, 1.0);
  Grid g(1.0, 200);
  auto bb1 = GridFunction::constant(g, b1);
  auto bb2 = GridFunction::constant(g, 1.0);
  auto kfun = [&](double x) { return char_trivial(Complex(x, 0.0), bb1, bb2, ing).real(); };
  auto root = find_real_root(kfun, 0.0, 50.0);
  REQUIRE(root.has_value());

  auto lin = linearize_trivial(ing, g);
  const Complex rm = rightmost_eigenvalue(linearized_matrix(lin, ing));
  CHECK(std::abs(rm.imag()) <= 1e-8);
  CHECK(std::abs(rm.real() - *root) <= 0.10 * std::abs(*root));

  // Refinement brings the oracle closer (Cauchy behavior).
  const Complex rm400 = rightmost_eigenvalue(linearized_matrix(lin, ing, 400));
  CHECK(std::abs(rm400.real() - *root) < std::abs(rm.real() - *root));
}

TEST_CASE("rightmost_eigenvalue: dense closed forms") {
  Eigen::MatrixXd d = Eigen::Vector3d(-1.0, -2.0, -3.0).asDiagonal();
  CHECK(rightmost_eigenvalue(d).real() == doctest::Approx(-1.0));
  Eigen::MatrixXd r(2, 2);
  r << -1.0, -5.0, 5.0, -1.0;
  const Complex e = rightmost_eigenvalue(r);
  CHECK(e.real() == doctest::Approx(-1.0));
  CHECK(e.imag() == doctest::Approx(5.0));
}

TEST_CASE("rightmost_eigenvalue: shift-invert path agrees with the planted eigenvalue") {
  const Eigen::Index N = 450;  // beyond the dense-solve cutoff
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    M(i, i) = -1.0 - 2.0 * static_cast<double>(i) / N;
    if (i + 1 < N) M(i, i + 1) = 0.01;
  }
  M(0, 0) = 0.7;
  const Complex e = rightmost_eigenvalue(M, Complex(0.6, 0.0));
  CHECK(e.real() == doctest::Approx(0.7).epsilon(1e-8));
}

TEST_CASE("classify: trivial state verdicts for super- and subcritical constants") {
  const double factor = fixtures::constants_R0(1.0, 1.0);
  Grid g(1.0, 100);
  StabilityOptions opts;
  opts.oracle_n = 100;

  ModelIngredients super = fixtures::constants(1.5 / factor, 1.0);
  SteadyState zero{GridFunction::zero(g), GridFunction::zero(g), 0.0, Eigen::VectorXd(), 0.0,
                   0, true};
  auto rep_u = classify(zero, super, opts);
  CHECK(rep_u.trivial_state);
  CHECK(rep_u.verdict == Verdict::unstable);
  REQUIRE_FALSE(rep_u.char_roots.empty());
  CHECK(rep_u.char_roots.front().location.real() > 0.0);
  CHECK(rep_u.rightmost.real() > 0.0);

  ModelIngredients sub = fixtures::constants(0.5 / factor, 1.0);
  auto rep_s = classify(zero, sub, opts);
  CHECK(rep_s.verdict == Verdict::stable);
  CHECK(rep_s.rightmost.real() < 0.0);
}

TEST_CASE("classify: positive state with failed instability hypotheses is inconclusive") {
  // gamma P-independent (rho_* = 0), mu_E <= 0, beta_E >= 0: the sign
  // hypotheses hold but K vanishes identically, and the rank-2 fertility
  // admits no separable majorant, so neither theorem applies. Hypothesis
  // checking must land on inconclusive rather than forcing a verdict.
  auto beta = RateExpr::sum(
      RateExpr::product(RateExpr::polynomial(Var::s, {0.0, 6.0, -6.0}), RateExpr::constant(1.0)),
      RateExpr::product(RateExpr::constant(1.0), RateExpr::affine(Var::y, 0.5, 1.0)));
  ModelIngredients ing(RateExpr::constant(1.0), RateExpr::constant(1.0),
                       RateExpr::exp_decay(Var::E, 0.6, 0.1), std::move(beta),
                       RateExpr::constant(1.0), RateExpr::constant(1.0), 0.5, 1.0);
  Grid g(1.0, 80);
  // A synthetic positive state: the hypothesis checks read the state, not the
  // solver that produced it.
  auto p = GridFunction::sample(g, [](double s) { return s * (1.0 - s); });
  auto ss = synthetic_state(ing, p);
  StabilityOptions opts;
  opts.oracle_n = 80;
  auto rep = classify(ss, ing, opts);
  CHECK(rep.verdict == Verdict::inconclusive);
  bool k0_checked = false, muE_ok = false, betaE_ok = false;
  for (const auto& c : rep.triggered_conditions) {
    if (c.name == "K(0) > 1") {
      k0_checked = true;
      CHECK_FALSE(c.passed);  // rho_* = 0 makes K identically zero
    }
    if (c.name == "mu_E <= 0 at E_*") muE_ok = c.passed;
    if (c.name == "beta_E >= 0 at E_*") betaE_ok = c.passed;
  }
  CHECK(k0_checked);
  CHECK(muE_ok);
  CHECK(betaE_ok);
}
