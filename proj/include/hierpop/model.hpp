#pragma once

#include "hierpop/gridfn.hpp"
#include "hierpop/rate_expr.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hierpop {

/// The model ingredients: rates, hierarchy parameter alpha and maximal size
/// m. The growth rate is the separable product gamma1(s) * gamma2(P); all
/// partial derivatives used by the linearization come from the rate catalog.
struct ModelIngredients {
  RateExpr gamma1;  // size factor of the growth rate, reads s
  RateExpr gamma2;  // population modulation of the growth rate, reads P
  RateExpr mu;      // mortality, reads (s, E)
  RateExpr beta;    // fertility, reads (s, y, E); s is offspring, y parent size
  RateExpr w;       // environment weight, reads s
  RateExpr kappa;   // population weight, reads s
  double alpha = 0.0;
  double m = 0.0;
  std::optional<RateExpr> beta_bound;  // optional b(s) >= beta(s,y,E), reads s

  ModelIngredients(RateExpr gamma1_, RateExpr gamma2_, RateExpr mu_, RateExpr beta_,
                   RateExpr w_, RateExpr kappa_, double alpha_, double m_,
                   std::optional<RateExpr> beta_bound_ = std::nullopt);

  double gamma(double s, double P) const;
  double gamma_s(double s, double P) const;
  double gamma_P(double s, double P) const;
  double gamma_Ps(double s, double P) const;
  double gamma_ss(double s, double P) const;

  double mu_at(double s, double E) const;
  double mu_s(double s, double E) const;
  double mu_E(double s, double E) const;

  double beta_at(double s, double y, double E) const;
  double beta_E(double s, double y, double E) const;

  double w_at(double s) const;
  double kappa_at(double s) const;

  GridFunction sample_w(const Grid& g) const;
  GridFunction sample_kappa(const Grid& g) const;
  /// gamma(., P) at fixed P sampled on the grid.
  GridFunction sample_gamma(const Grid& g, double P) const;
  GridFunction sample_gamma_s(const Grid& g, double P) const;
};

/// E(s, p) and the weighted population P of a density p.
struct EnvironmentState {
  GridFunction E;
  double P = 0.0;
};

/// E(s) = alpha * int_0^s w p + int_s^m w p and P = int_0^m kappa p, both
/// from a single cumulative array. Rejects densities with negative nodes.
EnvironmentState environment(const GridFunction& p, const ModelIngredients& ing);

enum class RateSelector { gamma, gamma1, gamma2, mu, beta, w, kappa };
enum class DerivSelector { value, d_s, d_y, d_E, d_P, d_Ps, d_ss };

/// Uniform entry point for rate evaluation used by the CLI and the checks;
/// throws when the derivative is not defined for the selected rate.
double eval_rate(RateSelector which, DerivSelector deriv, const RateArgs& args,
                 const ModelIngredients& ing);

struct AssumptionViolation {
  std::string what;     // e.g. "gamma <= 0"
  std::string message;  // human-readable with the sampled location
  double s = 0.0, y = 0.0, E = 0.0, P = 0.0, value = 0.0;
};

struct AssumptionReport {
  std::vector<AssumptionViolation> violations;
  double sampled_E_max = 0.0;
  double sampled_P_max = 0.0;
  bool ok() const { return violations.empty(); }
};

struct AssumptionCheckOptions {
  int samples = 101;    // per axis
  double E_max = 10.0;  // environment range to probe
  double P_max = 10.0;  // weighted-population range to probe
};

/// Samples the rates on a dense grid and reports violations of the sign
/// assumptions (gamma, kappa > 0; mu, beta, w, alpha >= 0) and non-finite
/// values. Advisory: construction never enforces these.
AssumptionReport check_assumptions(const ModelIngredients& ing,
                                   const AssumptionCheckOptions& opts = {});

}  // namespace hierpop
