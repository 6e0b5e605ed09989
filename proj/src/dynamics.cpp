#include "hierpop/dynamics.hpp"

#include "hierpop/rate_expr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hierpop {

double StepLedger::defect() const {
  const double rhs = births - deaths - outflow;
  const double scale =
      std::max({std::abs(births) + std::abs(deaths) + std::abs(outflow), std::abs(rate_sum),
                std::numeric_limits<double>::min()});
  return std::abs(rate_sum - rhs) / scale;
}

namespace {

struct SourceKernel {
  // Finite-rank fertility: recruitment in O(n * rank) via parent moments.
  struct Term {
    Eigen::VectorXd profile;  // beta1(s_i)
    RateExpr bar;             // beta2(y, E)
  };
  std::vector<Term> terms;
  bool separable = false;

  static SourceKernel build(const ModelIngredients& ing, const Grid& g) {
    SourceKernel k;
    if (auto split = split_finite_rank_fertility(ing.beta)) {
      k.separable = true;
      for (const SeparableFertility& t : *split) {
        Eigen::VectorXd prof(g.num_nodes());
        for (Eigen::Index i = 0; i < prof.size(); ++i) {
          prof[i] = t.beta1({.s = g.node(i)});
        }
        k.terms.push_back({std::move(prof), t.beta2});
      }
    }
    return k;
  }

  // B(s_i) = int beta(s_i, y, E(y)) p(y) dy with trapezoid weights.
  Eigen::VectorXd recruitment(const GridFunction& p, const GridFunction& E,
                              const ModelIngredients& ing) const {
    const Grid& g = p.grid();
    const Eigen::VectorXd tw = trapezoid_weights(g);
    Eigen::VectorXd B = Eigen::VectorXd::Zero(g.num_nodes());
    if (separable) {
      for (const Term& t : terms) {
        double moment = 0.0;
        for (Eigen::Index j = 0; j < B.size(); ++j) {
          moment += tw[j] * t.bar({.y = g.node(j), .E = E[j]}) * p[j];
        }
        B += moment * t.profile;
      }
    } else {
      for (Eigen::Index i = 0; i < B.size(); ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < B.size(); ++j) {
          acc += tw[j] * ing.beta_at(g.node(i), g.node(j), E[j]) * p[j];
        }
        B[i] = acc;
      }
    }
    return B;
  }
};

double advective_speed(const ModelIngredients& ing, double s, double P, StepMode mode) {
  return mode == StepMode::quasilinear ? ing.gamma(s, P) : ing.gamma1({.s = s});
}

GridFunction step_impl(const GridFunction& p, double dt, const ModelIngredients& ing,
                       StepMode mode, StepLedger* ledger, const SourceKernel& kernel,
                       bool limiter) {
  const Grid& g = p.grid();
  const Eigen::Index n = g.n();
  const double h = g.h();
  const EnvironmentState env = environment(p, ing);
  const double source_scale =
      mode == StepMode::semilinear ? 1.0 / ing.gamma2({.P = env.P}) : 1.0;

  // Upwind face fluxes: interior faces at s_{i+1/2} carry the left value,
  // the inflow face at s = 0 carries nothing, the outflow face at s = m
  // carries gamma(m) p_n.
  Eigen::VectorXd flux(n + 1);  // flux[i] = face between cells i and i+1; flux[n] = outflow
  for (Eigen::Index i = 0; i < n; ++i) {
    flux[i] = advective_speed(ing, (static_cast<double>(i) + 0.5) * h, env.P, mode) * p[i];
  }
  flux[n] = advective_speed(ing, g.m(), env.P, mode) * p[n];

  Eigen::VectorXd B = kernel.recruitment(p, env.E, ing) * source_scale;
  Eigen::VectorXd mu(n + 1);
  for (Eigen::Index i = 0; i <= n; ++i) {
    mu[i] = ing.mu_at(g.node(i), env.E[i]) * source_scale;
  }

  const Eigen::VectorXd tw = trapezoid_weights(g);  // finite-volume cell widths

  // Forward sweep: cap each cell's outgoing flux so the update cannot turn the
  // cell negative. Inactive under the CFL step except at the half-width
  // boundary cells with adversarial data; keeps the flux-form ledger exact.
  if (limiter) {
    double inflow = 0.0;
    for (Eigen::Index i = 0; i <= n; ++i) {
      const double keep = p[i] * (1.0 - dt * mu[i]) + dt * (inflow / tw[i] + B[i]);
      const double cap = std::max(0.0, keep) * tw[i] / dt;
      if (flux[i] > cap) flux[i] = cap;
      inflow = flux[i];
    }
  }

  Eigen::VectorXd rhs(n + 1), next(n + 1);
  double prev_flux = 0.0;
  for (Eigen::Index i = 0; i <= n; ++i) {
    const double div = (flux[i] - prev_flux) / tw[i];
    rhs[i] = -div - mu[i] * p[i] + B[i];
    next[i] = p[i] + dt * rhs[i];
    // Under the limiter the update is nonnegative in exact arithmetic; any
    // remaining negative node is roundoff and is snapped to zero.
    if (limiter && next[i] < 0.0) next[i] = 0.0;
    prev_flux = flux[i];
  }

  GridFunction out = p.with_values(std::move(next));
  if (ledger) {
    ledger->dt = dt;
    ledger->mass_before = integrate(p);
    ledger->mass_after = integrate(out);
    ledger->rate_sum = integrate(p.with_values(std::move(rhs)));
    ledger->births = integrate(p.with_values(B));
    Eigen::VectorXd mp = mu.array() * p.values().array();
    ledger->deaths = integrate(p.with_values(std::move(mp)));
    ledger->outflow = flux[n];
  }
  return out;
}

}  // namespace

double cfl_dt(const GridFunction& p, const ModelIngredients& ing, double cfl, StepMode mode) {
  if (!(cfl > 0.0) || !(cfl <= 1.0)) {
    throw std::invalid_argument("cfl_dt: cfl must lie in (0, 1]");
  }
  const Grid& g = p.grid();
  const EnvironmentState env = environment(p, ing);
  const double source_scale =
      mode == StepMode::semilinear ? 1.0 / ing.gamma2({.P = env.P}) : 1.0;

  double speed_max = 0.0, mu_max = 0.0;
  for (Eigen::Index i = 0; i <= g.n(); ++i) {
    speed_max = std::max(speed_max, std::abs(advective_speed(ing, g.node(i), env.P, mode)));
    mu_max = std::max(mu_max, std::abs(ing.mu_at(g.node(i), env.E[i]) * source_scale));
  }
  // Fertility scale from a coarse lattice; a bound, not a quadrature.
  double beta_max = 0.0;
  const int nb = 33;
  for (int i = 0; i < nb; ++i) {
    for (int j = 0; j < nb; ++j) {
      const double y = ing.m * j / (nb - 1.0);
      beta_max = std::max(beta_max, std::abs(ing.beta_at(ing.m * i / (nb - 1.0), y,
                                                         interpolate(env.E, y)) *
                                             source_scale));
    }
  }

  double dt = std::numeric_limits<double>::infinity();
  if (speed_max > 0.0) dt = std::min(dt, cfl * g.h() / speed_max);
  const double source_rate = mu_max + ing.m * beta_max;
  if (source_rate > 0.0) dt = std::min(dt, 1.0 / source_rate);
  if (!std::isfinite(dt)) {
    throw std::invalid_argument("cfl_dt: no finite step bound (all rates vanish)");
  }
  return dt;
}

GridFunction step(const GridFunction& p, double dt, const ModelIngredients& ing,
                  StepMode mode, StepLedger* ledger) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  if (dt > cfl_dt(p, ing, 1.0, mode) * (1.0 + 1e-12)) {
    throw std::invalid_argument("step: dt violates the CFL bound");
  }
  const SourceKernel kernel = SourceKernel::build(ing, p.grid());
  return step_impl(p, dt, ing, mode, ledger, kernel, true);
}

Trajectory simulate(const GridFunction& p0, double T, const ModelIngredients& ing,
                    const SimOptions& opts) {
  if (!(T > 0.0)) throw std::invalid_argument("simulate: horizon T must be positive");
  for (Eigen::Index i = 0; i < p0.size(); ++i) {
    if (p0[i] < 0.0) throw std::invalid_argument("simulate: initial density has negative nodes");
  }
  std::vector<double> outputs = opts.output_times;
  std::sort(outputs.begin(), outputs.end());
  outputs.erase(std::unique(outputs.begin(), outputs.end()), outputs.end());
  for (double t : outputs) {
    if (t < 0.0 || t > T * (1.0 + 1e-12)) {
      throw std::invalid_argument("simulate: output time outside [0, T]");
    }
  }

  const SourceKernel kernel = SourceKernel::build(ing, p0.grid());
  Trajectory traj;
  size_t next_out = 0;
  while (next_out < outputs.size() && outputs[next_out] <= 0.0) {
    traj.times.push_back(outputs[next_out]);
    traj.snapshots.push_back(p0);
    ++next_out;
  }

  GridFunction cur = p0;
  double t = 0.0;
  while (t < T) {
    const double dt = std::min(cfl_dt(cur, ing, opts.cfl, opts.mode), T - t);
    StepLedger ledger;
    GridFunction nxt = step_impl(cur, dt, ing, opts.mode, &ledger, kernel, true);
    double t_next = t + dt;
    if (t_next >= T * (1.0 - 1e-14)) t_next = T;

    if (!(ledger.mass_after <= opts.mass_ceiling)) {
      throw BlowUpError("simulate: total mass exceeded the configured ceiling at t=" +
                        std::to_string(t_next));
    }
    traj.diagnostics.push_back({t_next, ledger.mass_after,
                                environment(nxt, ing).P, ledger.outflow, ledger.defect()});

    while (next_out < outputs.size() && outputs[next_out] <= t_next * (1.0 + 1e-15)) {
      const double to = std::min(outputs[next_out], t_next);
      const double a = (to - t) / dt;
      traj.times.push_back(outputs[next_out]);
      traj.snapshots.push_back(
          cur.with_values(((1.0 - a) * cur.values() + a * nxt.values()).eval()));
      ++next_out;
    }
    if (opts.store_all_steps) {
      traj.times.push_back(t_next);
      traj.snapshots.push_back(nxt);
    }
    cur = std::move(nxt);
    t = t_next;
  }
  return traj;
}

TimeRescaling time_rescale(const Trajectory& traj, const ModelIngredients& ing) {
  TimeRescaling r;
  r.t.push_back(0.0);
  r.tau.push_back(0.0);
  // The weighted population at t = 0 is not in the diagnostics; the first
  // recorded step carries it forward with first-order accuracy, matching the
  // scheme order.
  double g_prev = traj.diagnostics.empty()
                      ? ing.gamma2({.P = 0.0})
                      : ing.gamma2({.P = traj.diagnostics.front().P});
  r.g.push_back(g_prev);
  double t_prev = 0.0, tau_acc = 0.0;
  for (const auto& d : traj.diagnostics) {
    const double g_cur = ing.gamma2({.P = d.P});
    tau_acc += (d.t - t_prev) * 0.5 * (g_prev + g_cur);
    r.t.push_back(d.t);
    r.tau.push_back(tau_acc);
    r.g.push_back(g_cur);
    t_prev = d.t;
    g_prev = g_cur;
  }
  return r;
}

namespace {

double monotone_lookup(const std::vector<double>& xs, const std::vector<double>& ys,
                       double x) {
  if (xs.empty()) return 0.0;
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const size_t k = static_cast<size_t>(it - xs.begin());
  const double a = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
  return (1.0 - a) * ys[k - 1] + a * ys[k];
}

}  // namespace

double TimeRescaling::tau_of(double time) const { return monotone_lookup(t, tau, time); }
double TimeRescaling::t_of(double tau_value) const { return monotone_lookup(tau, t, tau_value); }

}  // namespace hierpop
