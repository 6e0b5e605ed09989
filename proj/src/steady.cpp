#include "hierpop/steady.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace hierpop {

namespace {

constexpr double kZeroSnapFactor = 1e4;  // times tol_fp; below this the state is trivial

double bin_anchor_point(double lo, double hi, BinAnchor anchor) {
  return anchor == BinAnchor::right ? hi : 0.5 * (lo + hi);
}

}  // namespace

double FertilityDecomposition::bar_at(int k, double y, double Ev) const {
  const FertilityTerm& t = terms.at(static_cast<size_t>(k));
  if (t.bar) return (*t.bar)({.y = y, .E = Ev});
  // Indicator of (bin_lo, bin_hi]; the first bin also covers y = bin_lo so the
  // bins partition [0, m].
  const bool first = t.bin_lo == 0.0;
  const bool inside = (y <= t.bin_hi) && (first ? y >= t.bin_lo : y > t.bin_lo);
  return inside ? 1.0 : 0.0;
}

FertilityDecomposition separable_decomposition(const ModelIngredients& ing, const Grid& g) {
  auto terms = split_finite_rank_fertility(ing.beta);
  if (!terms) {
    throw std::invalid_argument(
        "separable_decomposition: fertility is not a finite sum of separable products");
  }
  FertilityDecomposition dec;
  dec.mode = FertilityDecomposition::Mode::user_separable;
  dec.sup_error = 0.0;  // the decomposition reproduces beta exactly
  for (const SeparableFertility& t : *terms) {
    FertilityTerm term{
        GridFunction::sample(g, [&](double s) { return t.beta1({.s = s}); }), t.beta2, 0.0,
        0.0};
    dec.terms.push_back(std::move(term));
  }
  return dec;
}

FertilityDecomposition decompose_beta(const ModelIngredients& ing, const GridFunction& H,
                                      int rank, BinAnchor anchor, bool estimate_error) {
  if (rank < 1) throw std::invalid_argument("decompose_beta: rank must be >= 1");
  const Grid& g = H.grid();
  FertilityDecomposition dec;
  dec.mode = FertilityDecomposition::Mode::auto_piecewise;
  dec.anchor = anchor;
  const double bin_width = ing.m / rank;
  for (int k = 0; k < rank; ++k) {
    const double lo = k * bin_width;
    const double hi = (k + 1 == rank) ? ing.m : (k + 1) * bin_width;
    const double a = bin_anchor_point(lo, hi, anchor);
    const double Ha = interpolate(H, a);
    FertilityTerm term{
        GridFunction::sample(g, [&](double s) { return ing.beta_at(s, a, Ha); }),
        std::nullopt, lo, hi};
    dec.terms.push_back(std::move(term));
  }
  if (estimate_error) {
    // Dense sampling of |beta - beta^l| with the environment frozen along H.
    const int s_stride = std::max<int>(1, static_cast<int>(g.n() / 100));
    const int per_bin = 8;
    double err = 0.0;
    for (int k = 0; k < rank; ++k) {
      const FertilityTerm& t = dec.terms[static_cast<size_t>(k)];
      const double a = bin_anchor_point(t.bin_lo, t.bin_hi, anchor);
      const double Ha = interpolate(H, a);
      for (int q = 0; q <= per_bin; ++q) {
        const double y = t.bin_lo + (t.bin_hi - t.bin_lo) * q / per_bin;
        const double Hy = interpolate(H, y);
        for (Eigen::Index i = 0; i <= g.n(); i += s_stride) {
          const double s = g.node(i);
          err = std::max(err, std::abs(ing.beta_at(s, y, Hy) - ing.beta_at(s, a, Ha)));
        }
      }
    }
    dec.sup_error = err;
  }
  return dec;
}

bool FixedPointState::in_cone() const {
  if (P0 < 0.0) return false;
  if ((Pp.array() < 0.0).any()) return false;
  return !(H.values().array() < 0.0).any();
}

GridFunction survival_kernel(int term_index, const GridFunction& H, double P0,
                             const FertilityDecomposition& dec, const ModelIngredients& ing) {
  const Grid& g = H.grid();
  const GridFunction gam = ing.sample_gamma(g, P0);
  if ((gam.values().array() <= 0.0).any()) {
    throw SolveError("survival_kernel: gamma is not positive on [0, m] at P0=" +
                     std::to_string(P0));
  }
  const GridFunction gam_s = ing.sample_gamma_s(g, P0);
  Eigen::VectorXd expo(g.num_nodes()), src(g.num_nodes());
  const auto& profile = dec.terms.at(static_cast<size_t>(term_index)).profile;
  for (Eigen::Index i = 0; i < expo.size(); ++i) {
    expo[i] = (ing.mu_at(g.node(i), H[i]) + gam_s[i]) / gam[i];
    src[i] = profile[i] / gam[i];
  }
  const GridFunction lambda = cumulative_integral(H.with_values(std::move(expo)));
  return attenuated_cumulative(H.with_values(std::move(src)), lambda);
}

FixedPointState phi_map(const FixedPointState& x, const FertilityDecomposition& dec,
                        const ModelIngredients& ing) {
  const Grid& g = x.H.grid();
  const FertilityDecomposition live =
      dec.mode == FertilityDecomposition::Mode::auto_piecewise
          ? decompose_beta(ing, x.H, dec.rank(), dec.anchor, false)
          : dec;
  const int l = live.rank();
  if (x.Pp.size() != l) {
    throw std::invalid_argument("phi_map: flux count does not match decomposition rank");
  }

  // q~ = sum_j P^j F_j; every output coordinate is an integral against it.
  Eigen::VectorXd q = Eigen::VectorXd::Zero(g.num_nodes());
  for (int j = 0; j < l; ++j) {
    if (x.Pp[j] == 0.0) continue;
    q += x.Pp[j] * survival_kernel(j, x.H, x.P0, live, ing).values();
  }
  const GridFunction q_tilde = x.H.with_values(std::move(q));

  const EnvironmentState env = environment(q_tilde, ing);

  Eigen::VectorXd fluxes(l);
  const GridFunction cum_q = cumulative_integral(q_tilde);
  for (int k = 0; k < l; ++k) {
    const FertilityTerm& t = live.terms[static_cast<size_t>(k)];
    if (t.bar) {
      Eigen::VectorXd integrand(g.num_nodes());
      for (Eigen::Index i = 0; i < integrand.size(); ++i) {
        integrand[i] = (*t.bar)({.y = g.node(i), .E = x.H[i]}) * q_tilde[i];
      }
      fluxes[k] = integrate(x.H.with_values(std::move(integrand)));
    } else {
      fluxes[k] = interpolate(cum_q, t.bin_hi) - interpolate(cum_q, t.bin_lo);
    }
  }
  return FixedPointState{env.E, env.P, std::move(fluxes)};
}

namespace {

Eigen::VectorXd flatten(const FixedPointState& x) {
  Eigen::VectorXd z(x.H.size() + 1 + x.Pp.size());
  z << x.H.values(), x.P0, x.Pp;
  return z;
}

FixedPointState unflatten(const Eigen::VectorXd& z, const Grid& g, Eigen::Index l) {
  return FixedPointState{GridFunction(g, z.head(g.num_nodes())), z[g.num_nodes()],
                         z.tail(l)};
}

double shell_norm_flat(const Eigen::VectorXd& z, const Grid& g) {
  // L1 of the H block plus the absolute scalar coordinates.
  const Eigen::Index nn = g.num_nodes();
  GridFunction h(g, z.head(nn).cwiseAbs());
  return integrate(h) + z.tail(z.size() - nn).cwiseAbs().sum();
}

SteadyState assemble_state(const Eigen::VectorXd& z, const Grid& g,
                           const FertilityDecomposition& dec, const ModelIngredients& ing,
                           int iterations, bool converged) {
  const Eigen::Index l = dec.rank();
  FixedPointState x = unflatten(z, g, l);
  const FertilityDecomposition live =
      dec.mode == FertilityDecomposition::Mode::auto_piecewise
          ? decompose_beta(ing, x.H, dec.rank(), dec.anchor, false)
          : dec;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(g.num_nodes());
  for (int j = 0; j < l; ++j) {
    p += x.Pp[j] * survival_kernel(j, x.H, x.P0, live, ing).values();
  }
  SteadyState out{GridFunction(g, std::move(p)), x.H, x.P0, x.Pp, 0.0, iterations, converged};
  out.residual_l1 = residual_psi(out.p_star, ing);
  return out;
}

SteadyState trivial_state(const Grid& g, int l, int iterations) {
  return SteadyState{GridFunction::zero(g), GridFunction::zero(g), 0.0,
                     Eigen::VectorXd::Zero(l), 0.0, iterations, true};
}

}  // namespace

SteadyState solve_fixed_point(const ModelIngredients& ing, const Grid& g,
                              const SolverOptions& opts,
                              const std::optional<FertilityDecomposition>& dec_in) {
  FertilityDecomposition dec;
  if (dec_in) {
    dec = *dec_in;
  } else if (split_finite_rank_fertility(ing.beta)) {
    dec = separable_decomposition(ing, g);
  } else {
    dec = decompose_beta(ing, GridFunction::zero(g), opts.rank, opts.anchor, false);
  }
  const int l = dec.rank();
  const Eigen::Index nz = g.num_nodes() + 1 + l;

  auto apply_damped = [&](const Eigen::VectorXd& z) {
    const FixedPointState phi = phi_map(unflatten(z, g, l), dec, ing);
    return ((1.0 - opts.theta) * z + opts.theta * flatten(phi)).eval();
  };

  double best_diff = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_z = Eigen::VectorXd::Zero(nz);
  int total_iters = 0;

  for (int attempt = 0; attempt <= opts.restarts; ++attempt) {
    const double seed = opts.seed * std::pow(5.0, attempt);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(nz);
    z.tail(l + 1).setConstant(seed);

    // Difference history for Anderson acceleration.
    std::vector<Eigen::VectorXd> dz_hist, dr_hist;
    Eigen::VectorXd r_prev, z_prev;

    for (int it = 0; it < opts.max_iter; ++it) {
      ++total_iters;
      Eigen::VectorXd gz = apply_damped(z);
      Eigen::VectorXd r = gz - z;
      const double diff = shell_norm_flat(r, g);
      if (diff < best_diff) {
        best_diff = diff;
        best_z = gz;
      }

      Eigen::VectorXd z_next = gz;
      if (opts.anderson && r_prev.size() == r.size()) {
        dz_hist.push_back(z - z_prev);
        dr_hist.push_back(r - r_prev);
        if (static_cast<int>(dr_hist.size()) > opts.anderson_depth) {
          dz_hist.erase(dz_hist.begin());
          dr_hist.erase(dr_hist.begin());
        }
        const auto m = static_cast<Eigen::Index>(dr_hist.size());
        Eigen::MatrixXd R(r.size(), m), Z(r.size(), m);
        for (Eigen::Index c = 0; c < m; ++c) {
          R.col(c) = dr_hist[static_cast<size_t>(c)];
          Z.col(c) = dz_hist[static_cast<size_t>(c)];
        }
        const Eigen::VectorXd gamma = R.householderQr().solve(r);
        Eigen::VectorXd cand = gz - (Z + R) * gamma;
        // Safeguards: the accelerated step must stay in the cone, must not
        // collapse the iterate toward the ever-present zero fixed point, and
        // must actually shrink the residual; otherwise take the damped step.
        if (!(cand.array() < 0.0).any() &&
            shell_norm_flat(cand, g) >= 0.2 * shell_norm_flat(z, g)) {
          const Eigen::VectorXd g_cand = apply_damped(cand);
          if (shell_norm_flat(g_cand - cand, g) < diff) z_next = std::move(cand);
        }
      }
      z_prev = z;
      r_prev = r;

      const double norm_next = shell_norm_flat(z_next, g);
      if (!std::isfinite(norm_next) || norm_next > opts.divergence_ceiling) {
        throw SolveError("solve_fixed_point: iteration diverged (shell norm " +
                         std::to_string(norm_next) + ")");
      }
      z = std::move(z_next);

      if (diff <= opts.tol_fp) {
        if (shell_norm_flat(z, g) <= kZeroSnapFactor * opts.tol_fp) {
          return trivial_state(g, l, total_iters);
        }
        return assemble_state(z, g, dec, ing, total_iters, true);
      }
    }
  }
  SteadyState out = assemble_state(best_z, g, dec, ing, total_iters, false);
  return out;
}

double residual_psi(const GridFunction& q, const ModelIngredients& ing) {
  const Grid& g = q.grid();
  const EnvironmentState env = environment(q, ing);
  const double Q = env.P;

  Eigen::VectorXd gq(g.num_nodes());
  for (Eigen::Index i = 0; i < gq.size(); ++i) {
    gq[i] = ing.gamma(g.node(i), Q) * q[i];
  }
  const GridFunction transport = derivative(q.with_values(std::move(gq)));

  const Eigen::VectorXd weights = trapezoid_weights(g);
  Eigen::VectorXd defect(g.num_nodes());
  for (Eigen::Index i = 0; i < defect.size(); ++i) {
    const double s = g.node(i);
    double recruit = 0.0;
    for (Eigen::Index j = 0; j < defect.size(); ++j) {
      recruit += weights[j] * ing.beta_at(s, g.node(j), env.E[j]) * q[j];
    }
    defect[i] = transport[i] + ing.mu_at(s, env.E[i]) * q[i] - recruit;
  }
  return l1_norm(q.with_values(std::move(defect)));
}

namespace {

double integral_against_term(const FertilityDecomposition& dec, int k, const GridFunction& f,
                             const GridFunction& H) {
  const FertilityTerm& t = dec.terms[static_cast<size_t>(k)];
  if (t.bar) {
    Eigen::VectorXd integrand(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      integrand[i] = (*t.bar)({.y = f.grid().node(i), .E = H[i]}) * f[i];
    }
    return integrate(f.with_values(std::move(integrand)));
  }
  const GridFunction cum = cumulative_integral(f);
  return interpolate(cum, t.bin_hi) - interpolate(cum, t.bin_lo);
}

}  // namespace

ExistenceReport check_existence(const FertilityDecomposition& dec, const ModelIngredients& ing,
                                double radius) {
  ExistenceReport rep;
  const Grid& g = dec.terms.at(0).profile.grid();
  const GridFunction zero = GridFunction::zero(g);
  const GridFunction kap = ing.sample_kappa(g);

  // Supercriticality at zero: int bar_beta_j(s, 0) F_j(s, 0, 0) ds > 1 for
  // some term.
  {
    double best = -std::numeric_limits<double>::infinity();
    int best_j = -1;
    std::ostringstream detail;
    for (int j = 0; j < dec.rank(); ++j) {
      const GridFunction F = survival_kernel(j, zero, 0.0, dec, ing);
      const double I = integral_against_term(dec, j, F, zero);
      detail << (j ? ", " : "") << "I_" << (j + 1) << "=" << I;
      if (I > best) {
        best = I;
        best_j = j;
      }
    }
    rep.supercritical_at_zero = best > 1.0;
    rep.findings.push_back({"supercriticality at zero state", rep.supercritical_at_zero,
                            false, best,
                            "max over terms of int bar_beta_j F_j at the zero state, term " +
                                std::to_string(best_j + 1) + " largest; " + detail.str()});
  }

  // Domination constant: largest c with kappa(s) >= c sum_k bar_beta_k(s, H(s))
  // over a family of constant environment profiles.
  const std::array<double, 5> levels = {0.0, 0.25, 0.5, 1.0, 2.0};
  {
    double c = std::numeric_limits<double>::infinity();
    for (double lv : levels) {
      const double Hc = lv * radius / ing.m;
      for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
        double bar_sum = 0.0;
        for (int k = 0; k < dec.rank(); ++k) {
          bar_sum += dec.bar_at(k, g.node(i), Hc);
        }
        if (bar_sum > 0.0) c = std::min(c, kap[i] / bar_sum);
      }
    }
    rep.c_bound = c;
    std::ostringstream detail;
    detail << "largest c with kappa >= c * sum_k bar_beta_k over constant environments up to "
           << levels.back() * radius / ing.m;
    rep.findings.push_back({"kappa domination constant", std::isfinite(c) && c > 0.0, false,
                            c, detail.str()});
  }

  // Large-population bound: int kappa F_b <= c sampled over (H, P) with
  // ||H|| + P beyond the radius. Advisory by construction.
  {
    RateExpr bound = ing.beta_bound ? *ing.beta_bound : RateExpr::constant(0.0);
    if (!ing.beta_bound) {
      // No user bound: estimate b(s) = max over sampled (y, E) of beta.
      Eigen::VectorXd b(g.num_nodes());
      const int ny = 33;
      for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
        double bmax = 0.0;
        for (int jy = 0; jy < ny; ++jy) {
          const double y = ing.m * jy / (ny - 1.0);
          for (double lv : levels) {
            bmax = std::max(bmax, ing.beta_at(g.node(i), y, lv * radius / ing.m));
          }
        }
        b[i] = bmax;
      }
      bound = RateExpr::tabulated(Var::s, ing.m, std::move(b));
    }
    FertilityDecomposition bdec;
    bdec.mode = FertilityDecomposition::Mode::user_separable;
    bdec.terms.push_back({GridFunction::sample(g, [&](double s) { return bound({.s = s}); }),
                          RateExpr::constant(1.0), 0.0, 0.0});

    double worst = 0.0;
    for (double t : {1.0, 2.0, 4.0}) {
      for (double split : {0.0, 0.5, 1.0}) {
        // ||H||+P = 2 t radius, split between the two coordinates.
        const double Hc = split * 2.0 * t * radius / ing.m;
        const double P = (1.0 - split) * 2.0 * t * radius;
        const GridFunction H = GridFunction::constant(g, Hc);
        const GridFunction Fb = survival_kernel(0, H, P, bdec, ing);
        Eigen::VectorXd integrand = kap.values().array() * Fb.values().array();
        worst = std::max(worst, integrate(Fb.with_values(std::move(integrand))));
      }
    }
    std::ostringstream detail;
    detail << "max int kappa F_b = " << worst << " against c = " << rep.c_bound
           << " over sampled (H, P) with ||H||+P >= " << 2.0 * radius
           << (ing.beta_bound ? " (user fertility bound)" : " (sampled fertility bound)");
    rep.findings.push_back({"large-population bound", worst <= rep.c_bound, true, worst,
                            detail.str()});
  }
  return rep;
}

}  // namespace hierpop
