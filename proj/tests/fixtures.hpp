#pragma once

#include "hierpop/model.hpp"

// Ingredient builders shared by the unit and acceptance suites. The CLI never
// uses these; it always reads scenario files.

namespace hierpop::fixtures {

/// All-constant rates. beta = b1 * b2 (an explicitly separable product),
/// gamma = g0, mu = m0. R(0) = b1 b2 (m - g0(1-e^{-m0 m/g0})/m0)/m0.
inline ModelIngredients constants(double b1, double b2, double mu0 = 1.0, double gamma0 = 1.0,
                                  double alpha = 0.5, double m = 1.0) {
  return ModelIngredients(RateExpr::constant(gamma0), RateExpr::constant(1.0),
                          RateExpr::constant(mu0),
                          RateExpr::product(RateExpr::constant(b1), RateExpr::constant(b2)),
                          RateExpr::constant(1.0), RateExpr::constant(1.0), alpha, m);
}

/// The net reproduction number of the constants fixture at the zero state.
inline double constants_R0(double b1, double b2, double mu0 = 1.0, double gamma0 = 1.0,
                           double m = 1.0) {
  return b1 * b2 / mu0 * (m - gamma0 * (1.0 - std::exp(-mu0 * m / gamma0)) / mu0);
}

/// Hierarchical scenario: mu = mu0 + mu1 E, beta = b0 s(m-s) * c/(1+E),
/// gamma = gamma0 / (1 + P). Admits a positive steady state for b0 large
/// enough; both environment feedbacks are stabilizing.
inline ModelIngredients hierarchical(double b0 = 30.0, double c = 1.0, double mu0 = 0.2,
                                     double mu1 = 0.4, double gamma0 = 1.0,
                                     double alpha = 0.5, double m = 1.0) {
  auto beta = RateExpr::product(RateExpr::polynomial(Var::s, {0.0, b0 * m, -b0}),
                                RateExpr::logistic(Var::E, c, 1.0));
  auto mu = RateExpr::sum(RateExpr::constant(mu0), RateExpr::affine(Var::E, 0.0, mu1));
  return ModelIngredients(RateExpr::constant(gamma0), RateExpr::logistic(Var::P, 1.0, 1.0),
                          std::move(mu), std::move(beta), RateExpr::constant(1.0),
                          RateExpr::constant(1.0), alpha, m);
}

/// Rank-1 fertility with no environment dependence anywhere but a
/// P-dependent growth rate gamma = gamma0 (1 + P): the steady state reduces
/// to the scalar equation 1 = b2 int_0^m F_1(s, P0) ds.
inline ModelIngredients rank1_scalar(double b1a = 2.0, double b1b = 2.0, double b2 = 1.6,
                                     double mu0 = 0.8, double gamma0 = 1.0, double m = 1.0) {
  auto beta = RateExpr::product(RateExpr::affine(Var::s, b1a, b1b),
                                RateExpr::product(RateExpr::constant(b2),
                                                  RateExpr::constant(1.0)));
  return ModelIngredients(RateExpr::constant(gamma0), RateExpr::affine(Var::P, 1.0, 1.0),
                          RateExpr::constant(mu0), std::move(beta), RateExpr::constant(1.0),
                          RateExpr::constant(1.0), 0.5, m);
}

}  // namespace hierpop::fixtures
