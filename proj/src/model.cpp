#include "hierpop/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hierpop {

namespace {

void require_reads_only(const RateExpr& r, std::initializer_list<Var> allowed,
                        const std::string& name) {
  for (Var v : {Var::s, Var::y, Var::E, Var::P}) {
    bool ok = false;
    for (Var a : allowed) ok = ok || (a == v);
    if (!ok && r.depends_on(v)) {
      throw std::invalid_argument("ModelIngredients: rate '" + name +
                                  "' must not read argument " + var_name(v));
    }
  }
}

}  // namespace

ModelIngredients::ModelIngredients(RateExpr gamma1_, RateExpr gamma2_, RateExpr mu_,
                                   RateExpr beta_, RateExpr w_, RateExpr kappa_,
                                   double alpha_, double m_,
                                   std::optional<RateExpr> beta_bound_)
    : gamma1(std::move(gamma1_)),
      gamma2(std::move(gamma2_)),
      mu(std::move(mu_)),
      beta(std::move(beta_)),
      w(std::move(w_)),
      kappa(std::move(kappa_)),
      alpha(alpha_),
      m(m_),
      beta_bound(std::move(beta_bound_)) {
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw std::invalid_argument("ModelIngredients: m must be positive and finite");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("ModelIngredients: alpha must be non-negative and finite");
  }
  require_reads_only(gamma1, {Var::s}, "gamma1");
  require_reads_only(gamma2, {Var::P}, "gamma2");
  require_reads_only(mu, {Var::s, Var::E}, "mu");
  require_reads_only(beta, {Var::s, Var::y, Var::E}, "beta");
  require_reads_only(w, {Var::s}, "w");
  require_reads_only(kappa, {Var::s}, "kappa");
  if (beta_bound) require_reads_only(*beta_bound, {Var::s}, "beta_bound");
}

double ModelIngredients::gamma(double s, double P) const {
  return gamma1({.s = s}) * gamma2({.P = P});
}
double ModelIngredients::gamma_s(double s, double P) const {
  return gamma1.d1(Var::s, {.s = s}) * gamma2({.P = P});
}
double ModelIngredients::gamma_P(double s, double P) const {
  return gamma1({.s = s}) * gamma2.d1(Var::P, {.P = P});
}
double ModelIngredients::gamma_Ps(double s, double P) const {
  return gamma1.d1(Var::s, {.s = s}) * gamma2.d1(Var::P, {.P = P});
}
double ModelIngredients::gamma_ss(double s, double P) const {
  return gamma1.d2(Var::s, Var::s, {.s = s}) * gamma2({.P = P});
}

double ModelIngredients::mu_at(double s, double E) const { return mu({.s = s, .E = E}); }
double ModelIngredients::mu_s(double s, double E) const {
  return mu.d1(Var::s, {.s = s, .E = E});
}
double ModelIngredients::mu_E(double s, double E) const {
  return mu.d1(Var::E, {.s = s, .E = E});
}

double ModelIngredients::beta_at(double s, double y, double E) const {
  return beta({.s = s, .y = y, .E = E});
}
double ModelIngredients::beta_E(double s, double y, double E) const {
  return beta.d1(Var::E, {.s = s, .y = y, .E = E});
}

double ModelIngredients::w_at(double s) const { return w({.s = s}); }
double ModelIngredients::kappa_at(double s) const { return kappa({.s = s}); }

GridFunction ModelIngredients::sample_w(const Grid& g) const {
  return GridFunction::sample(g, [&](double s) { return w_at(s); });
}
GridFunction ModelIngredients::sample_kappa(const Grid& g) const {
  return GridFunction::sample(g, [&](double s) { return kappa_at(s); });
}
GridFunction ModelIngredients::sample_gamma(const Grid& g, double P) const {
  return GridFunction::sample(g, [&](double s) { return gamma(s, P); });
}
GridFunction ModelIngredients::sample_gamma_s(const Grid& g, double P) const {
  return GridFunction::sample(g, [&](double s) { return gamma_s(s, P); });
}

EnvironmentState environment(const GridFunction& p, const ModelIngredients& ing) {
  const Grid& g = p.grid();
  if (g.m() != ing.m) {
    throw std::invalid_argument("environment: grid domain does not match ingredients");
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) throw std::invalid_argument("environment: density has negative nodes");
  }
  const GridFunction wp = p.with_values(
      (ing.sample_w(g).values().array() * p.values().array()).matrix());
  const GridFunction cum = cumulative_integral(wp);
  const double total = cum[g.n()];
  Eigen::VectorXd e(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    e[i] = ing.alpha * cum[i] + (total - cum[i]);
  }
  const GridFunction kp = p.with_values(
      (ing.sample_kappa(g).values().array() * p.values().array()).matrix());
  return EnvironmentState{p.with_values(std::move(e)), integrate(kp)};
}

double eval_rate(RateSelector which, DerivSelector deriv, const RateArgs& args,
                 const ModelIngredients& ing) {
  auto unsupported = [&]() -> double {
    throw std::invalid_argument("eval_rate: derivative not available for this rate");
  };
  switch (which) {
    case RateSelector::gamma:
      switch (deriv) {
        case DerivSelector::value: return ing.gamma(args.s, args.P);
        case DerivSelector::d_s: return ing.gamma_s(args.s, args.P);
        case DerivSelector::d_P: return ing.gamma_P(args.s, args.P);
        case DerivSelector::d_Ps: return ing.gamma_Ps(args.s, args.P);
        case DerivSelector::d_ss: return ing.gamma_ss(args.s, args.P);
        default: return unsupported();
      }
    case RateSelector::gamma1:
      switch (deriv) {
        case DerivSelector::value: return ing.gamma1(args);
        case DerivSelector::d_s: return ing.gamma1.d1(Var::s, args);
        case DerivSelector::d_ss: return ing.gamma1.d2(Var::s, Var::s, args);
        default: return unsupported();
      }
    case RateSelector::gamma2:
      switch (deriv) {
        case DerivSelector::value: return ing.gamma2(args);
        case DerivSelector::d_P: return ing.gamma2.d1(Var::P, args);
        default: return unsupported();
      }
    case RateSelector::mu:
      switch (deriv) {
        case DerivSelector::value: return ing.mu_at(args.s, args.E);
        case DerivSelector::d_s: return ing.mu_s(args.s, args.E);
        case DerivSelector::d_E: return ing.mu_E(args.s, args.E);
        default: return unsupported();
      }
    case RateSelector::beta:
      switch (deriv) {
        case DerivSelector::value: return ing.beta_at(args.s, args.y, args.E);
        case DerivSelector::d_s: return ing.beta.d1(Var::s, args);
        case DerivSelector::d_y: return ing.beta.d1(Var::y, args);
        case DerivSelector::d_E: return ing.beta_E(args.s, args.y, args.E);
        default: return unsupported();
      }
    case RateSelector::w:
      switch (deriv) {
        case DerivSelector::value: return ing.w_at(args.s);
        case DerivSelector::d_s: return ing.w.d1(Var::s, args);
        default: return unsupported();
      }
    case RateSelector::kappa:
      switch (deriv) {
        case DerivSelector::value: return ing.kappa_at(args.s);
        case DerivSelector::d_s: return ing.kappa.d1(Var::s, args);
        default: return unsupported();
      }
  }
  return unsupported();
}

namespace {

std::string locate(double s, double y, double E, double P, bool with_y, bool with_E,
                   bool with_P) {
  std::ostringstream os;
  os << "s=" << s;
  if (with_y) os << ", y=" << y;
  if (with_E) os << ", E=" << E;
  if (with_P) os << ", P=" << P;
  return os.str();
}

}  // namespace

AssumptionReport check_assumptions(const ModelIngredients& ing,
                                   const AssumptionCheckOptions& opts) {
  AssumptionReport rep;
  rep.sampled_E_max = opts.E_max;
  rep.sampled_P_max = opts.P_max;
  const int ns = std::max(opts.samples, 3);
  auto flag = [&](const std::string& what, const std::string& msg, double s, double y,
                  double E, double P, double value) {
    // Keep the first site per violation kind; repeats add no information.
    for (const auto& v : rep.violations) {
      if (v.what == what) return;
    }
    rep.violations.push_back({what, msg, s, y, E, P, value});
  };
  auto probe = [&](const std::string& what, double v, bool bad, double s, double y,
                   double E, double P, bool with_y, bool with_E, bool with_P) {
    if (!std::isfinite(v)) {
      flag(what + " non-finite", what + " is non-finite at " +
                                     locate(s, y, E, P, with_y, with_E, with_P),
           s, y, E, P, v);
    } else if (bad) {
      std::ostringstream os;
      os << what << " at " << locate(s, y, E, P, with_y, with_E, with_P) << " (value " << v
         << ")";
      flag(what, os.str(), s, y, E, P, v);
    }
  };

  for (int i = 0; i < ns; ++i) {
    const double s = ing.m * i / (ns - 1.0);
    probe("kappa <= 0", ing.kappa_at(s), ing.kappa_at(s) <= 0.0, s, 0, 0, 0, false, false,
          false);
    probe("w < 0", ing.w_at(s), ing.w_at(s) < 0.0, s, 0, 0, 0, false, false, false);
    for (int k = 0; k < ns; ++k) {
      const double P = opts.P_max * k / (ns - 1.0);
      const double gv = ing.gamma(s, P);
      probe("gamma <= 0", gv, gv <= 0.0, s, 0, 0, P, false, false, true);
      const double Ev = opts.E_max * k / (ns - 1.0);
      const double mv = ing.mu_at(s, Ev);
      probe("mu < 0", mv, mv < 0.0, s, 0, Ev, 0, false, true, false);
    }
  }
  // beta is sampled on a coarser lattice; it has three arguments.
  const int nb = std::max(ns / 4, 9);
  for (int i = 0; i < nb; ++i) {
    const double s = ing.m * i / (nb - 1.0);
    for (int j = 0; j < nb; ++j) {
      const double y = ing.m * j / (nb - 1.0);
      for (int k = 0; k < nb; ++k) {
        const double E = opts.E_max * k / (nb - 1.0);
        const double bv = ing.beta_at(s, y, E);
        probe("beta < 0", bv, bv < 0.0, s, y, E, 0, true, true, false);
      }
    }
  }
  if (ing.alpha < 0.0) {
    flag("alpha < 0", "hierarchy parameter alpha is negative", 0, 0, 0, 0, ing.alpha);
  }
  return rep;
}

}  // namespace hierpop
