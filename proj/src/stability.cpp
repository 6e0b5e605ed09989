#include "hierpop/stability.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>
#include <sstream>

namespace hierpop {

namespace {

GridFunction sample_on(const Grid& g, const std::function<double(double)>& f) {
  return GridFunction::sample(g, f);
}

std::optional<SeparableFertility> pick_fertility(const ModelIngredients& ing,
                                                 std::optional<SeparableFertility> tilde) {
  if (tilde) return tilde;
  return split_separable_fertility(ing.beta);
}

LinearizationData build_linearization(const GridFunction& p_star, const GridFunction& E_star,
                                      double P_star, const ModelIngredients& ing,
                                      std::optional<SeparableFertility> tilde) {
  const Grid& g = p_star.grid();
  LinearizationData lin{
      g,
      P_star,
      p_star,
      derivative(p_star),
      E_star,
      ing.sample_gamma(g, P_star),
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::zero(g),
      ing.sample_kappa(g),
      ing.sample_w(g),
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::zero(g),
      GridFunction::zero(g),
  };
  if ((lin.gamma_star.values().array() <= 0.0).any()) {
    throw SolveError("linearize: gamma is not positive on [0, m] at P_*");
  }

  Eigen::VectorXd rho(g.num_nodes()), mus(g.num_nodes()), muEp(g.num_nodes()),
      expo(g.num_nodes()), invg(g.num_nodes()), f1(g.num_nodes());
  for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
    const double s = g.node(i);
    rho[i] = ing.gamma_Ps(s, P_star) * p_star[i] + ing.gamma_P(s, P_star) * lin.p_star_prime[i];
    mus[i] = ing.mu_at(s, E_star[i]);
    muEp[i] = ing.mu_E(s, E_star[i]) * p_star[i];
    expo[i] = (ing.gamma_s(s, P_star) + mus[i]) / lin.gamma_star[i];
    invg[i] = 1.0 / lin.gamma_star[i];
    f1[i] = -rho[i] / lin.gamma_star[i];
  }
  lin.rho_star = p_star.with_values(std::move(rho));
  lin.mu_star = p_star.with_values(std::move(mus));
  lin.mu_E_p_star = p_star.with_values(std::move(muEp));
  lin.survival_exponent = p_star.with_values(std::move(expo));
  lin.Lambda = cumulative_integral(lin.survival_exponent);
  lin.gamma_time = cumulative_integral(p_star.with_values(std::move(invg)));
  lin.f1 = p_star.with_values(std::move(f1));

  lin.fertility = pick_fertility(ing, std::move(tilde));
  if (lin.fertility) {
    const RateExpr& b1 = lin.fertility->beta1;
    const RateExpr& b2 = lin.fertility->beta2;
    lin.beta2_at_Estar =
        sample_on(g, [&](double s) { return b2({.y = s, .E = interpolate(E_star, s)}); });
    Eigen::VectorXd b2p = lin.beta2_at_Estar->values().array() * p_star.values().array();
    lin.beta2_moment = integrate(p_star.with_values(std::move(b2p)));
    Eigen::VectorXd f2(g.num_nodes()), f3(g.num_nodes());
    for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
      const double b1v = b1({.s = g.node(i)});
      f3[i] = b1v / lin.gamma_star[i];
      f2[i] = (b1v * lin.beta2_moment - lin.mu_E_p_star[i]) / lin.gamma_star[i];
    }
    lin.f2 = p_star.with_values(std::move(f2));
    lin.f3 = p_star.with_values(std::move(f3));
  }
  return lin;
}

}  // namespace

LinearizationData linearize(const SteadyState& ss, const ModelIngredients& ing,
                            std::optional<SeparableFertility> tilde) {
  return build_linearization(ss.p_star, ss.E_star, ss.P_star, ing, std::move(tilde));
}

LinearizationData linearize_trivial(const ModelIngredients& ing, const Grid& g,
                                    std::optional<SeparableFertility> tilde) {
  return build_linearization(GridFunction::zero(g), GridFunction::zero(g), 0.0, ing,
                             std::move(tilde));
}

namespace {

ComplexGridFunction attenuation_exponent(const LinearizationData& lin, Complex lambda) {
  ComplexGridFunction::Vector e(lin.grid.num_nodes());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    e[i] = lin.Lambda[i] + lambda * lin.gamma_time[i];
  }
  return ComplexGridFunction(lin.grid, std::move(e));
}

/// int_0^m weight(s) int_0^s f_0^lambda(s,y) f(y) dy ds.
Complex weighted_double_integral(const GridFunction& weight, const GridFunction& f,
                                 const ComplexGridFunction& expo) {
  const ComplexGridFunction inner = attenuated_cumulative(to_complex(f), expo);
  ComplexGridFunction::Vector integrand(inner.size());
  for (Eigen::Index i = 0; i < integrand.size(); ++i) {
    integrand[i] = weight[i] * inner[i];
  }
  return integrate(inner.with_values(std::move(integrand)));
}

}  // namespace

Complex char_K(Complex lambda, const LinearizationData& lin) {
  const ComplexGridFunction expo = attenuation_exponent(lin, lambda);
  // f1 already carries the sign: K = -int kappa int f_0 rho_*/gamma.
  return weighted_double_integral(lin.kappa, lin.f1, expo);
}

CharEval char_det(Complex lambda, const LinearizationData& lin, double null_tol) {
  if (!lin.has_separable()) {
    throw std::invalid_argument(
        "char_det: the determinant path needs a separable fertility beta1(s) beta2(y,E)");
  }
  const ComplexGridFunction expo = attenuation_exponent(lin, lambda);
  const std::array<const GridFunction*, 3> kernels = {&lin.f1, &*lin.f2, &*lin.f3};
  const std::array<const GridFunction*, 3> weights = {&lin.kappa, &lin.w,
                                                      &*lin.beta2_at_Estar};
  CharEval out;
  out.lambda = lambda;
  for (int j = 0; j < 3; ++j) {
    const ComplexGridFunction inner = attenuated_cumulative(to_complex(*kernels[j]), expo);
    for (int i = 0; i < 3; ++i) {
      ComplexGridFunction::Vector integrand(inner.size());
      for (Eigen::Index k = 0; k < integrand.size(); ++k) {
        integrand[k] = (*weights[i])[k] * inner[k];
      }
      out.matrix_A(i, j) = integrate(inner.with_values(std::move(integrand)));
    }
  }
  const Eigen::Matrix3cd ima = Eigen::Matrix3cd::Identity() - out.matrix_A;
  out.value = ima.determinant();
  if (std::abs(out.value) < null_tol * (1.0 + out.matrix_A.norm())) {
    Eigen::JacobiSVD<Eigen::Matrix3cd> svd(ima, Eigen::ComputeFullV);
    out.nullvector = svd.matrixV().col(2);
  }
  return out;
}

Complex char_trivial(Complex lambda, const GridFunction& beta1, const GridFunction& beta2,
                     const ModelIngredients& ing) {
  const Grid& g = beta1.grid();
  GridFunction::require_same_grid(beta1, beta2);
  Eigen::VectorXd expo(g.num_nodes()), invg_t(g.num_nodes()), f(g.num_nodes());
  for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
    const double s = g.node(i);
    const double gam = ing.gamma(s, 0.0);
    if (!(gam > 0.0)) throw SolveError("char_trivial: gamma not positive at P = 0");
    expo[i] = (ing.gamma_s(s, 0.0) + ing.mu_at(s, 0.0)) / gam;
    invg_t[i] = 1.0 / gam;
    f[i] = beta1[i] / gam;
  }
  const GridFunction Lambda = cumulative_integral(beta1.with_values(std::move(expo)));
  const GridFunction Tg = cumulative_integral(beta1.with_values(std::move(invg_t)));
  ComplexGridFunction::Vector e(g.num_nodes());
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = Lambda[i] + lambda * Tg[i];
  return weighted_double_integral(beta2, beta1.with_values(std::move(f)),
                                  ComplexGridFunction(g, std::move(e)));
}

NetReproduction net_reproduction_forms(const GridFunction& p, const RateExpr& beta1,
                                       const RateExpr& beta2, const ModelIngredients& ing) {
  const Grid& g = p.grid();
  const EnvironmentState env = environment(p, ing);
  Eigen::VectorXd expoA(g.num_nodes()), expoB(g.num_nodes()), srcA(g.num_nodes()),
      srcB(g.num_nodes()), w2(g.num_nodes()), w2g(g.num_nodes());
  for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
    const double s = g.node(i);
    const double gam = ing.gamma(s, env.P);
    if (!(gam > 0.0)) throw SolveError("net_reproduction: gamma not positive on [0, m]");
    const double mu = ing.mu_at(s, env.E[i]);
    const double b1 = beta1({.s = s});
    expoA[i] = (ing.gamma_s(s, env.P) + mu) / gam;
    expoB[i] = mu / gam;
    srcA[i] = b1 / gam;
    srcB[i] = b1;
    w2[i] = beta2({.y = s, .E = env.E[i]});
    w2g[i] = w2[i] / gam;
  }
  const GridFunction innerA = attenuated_cumulative(
      p.with_values(std::move(srcA)), cumulative_integral(p.with_values(std::move(expoA))));
  const GridFunction innerB = attenuated_cumulative(
      p.with_values(std::move(srcB)), cumulative_integral(p.with_values(std::move(expoB))));
  NetReproduction out;
  out.value = integrate(p.with_values((w2.array() * innerA.values().array()).matrix()));
  out.alt_value = integrate(p.with_values((w2g.array() * innerB.values().array()).matrix()));
  return out;
}

double net_reproduction(const GridFunction& p, const RateExpr& beta1, const RateExpr& beta2,
                        const ModelIngredients& ing) {
  return net_reproduction_forms(p, beta1, beta2, ing).value;
}

std::optional<double> find_real_root(const std::function<double(double)>& char_fn, double lo,
                                     double hi, double tol) {
  if (!(hi > lo)) throw std::invalid_argument("find_real_root: invalid bracket");
  double ga = char_fn(lo) - 1.0;
  double gb = char_fn(hi) - 1.0;
  if (!std::isfinite(ga) || !std::isfinite(gb)) {
    throw std::invalid_argument("find_real_root: characteristic function not finite on bracket");
  }
  if (ga == 0.0) return lo;
  if (gb == 0.0) return hi;
  if (ga * gb > 0.0) return std::nullopt;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double gm = char_fn(mid) - 1.0;
    if (gm == 0.0) return mid;
    if (ga * gm < 0.0) {
      hi = mid;
    } else {
      lo = mid;
      ga = gm;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

struct ContourNearZero {};

// Total argument increment of f along the closed rectangle boundary, sampled
// adaptively so consecutive phases differ by less than pi/2.
class WindingCounter {
 public:
  WindingCounter(const std::function<Complex(Complex)>& f, double near_zero_tol,
                 int samples_per_edge)
      : f_(f), tol_(near_zero_tol), base_(std::max(4, samples_per_edge)) {}

  int count(Complex lo, Complex hi) const {
    const Complex c0 = lo;
    const Complex c1(hi.real(), lo.imag());
    const Complex c2 = hi;
    const Complex c3(lo.real(), hi.imag());
    double total = 0.0;
    total += edge_arg(c0, c1);
    total += edge_arg(c1, c2);
    total += edge_arg(c2, c3);
    total += edge_arg(c3, c0);
    return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
  }

 private:
  double edge_arg(Complex a, Complex b) const {
    Complex fa = eval(a);
    double total = 0.0;
    for (int k = 1; k <= base_; ++k) {
      const Complex z = a + (b - a) * (static_cast<double>(k) / base_);
      const Complex fz = eval(z);
      total += segment_arg(a + (b - a) * (static_cast<double>(k - 1) / base_), fa, z, fz, 0);
      fa = fz;
    }
    return total;
  }

  // Phase increment between two contour points, bisecting until each piece
  // rotates by less than pi/2.
  double segment_arg(Complex za, Complex fa, Complex zb, Complex fb, int depth) const {
    const double d = std::arg(fb / fa);
    if (std::abs(d) < 0.5 * std::numbers::pi || depth >= 48) return d;
    const Complex zm = 0.5 * (za + zb);
    const Complex fm = eval(zm);
    return segment_arg(za, fa, zm, fm, depth + 1) + segment_arg(zm, fm, zb, fb, depth + 1);
  }

  Complex eval(Complex z) const {
    const Complex v = f_(z);
    if (std::abs(v) < tol_) throw ContourNearZero{};
    return v;
  }

  const std::function<Complex(Complex)>& f_;
  double tol_;
  int base_;
};

std::optional<Complex> newton_polish(const std::function<Complex(Complex)>& f, Complex z0,
                                     double tol, double escape_radius) {
  Complex z = z0;
  for (int it = 0; it < 100; ++it) {
    const Complex fz = f(z);
    const double delta = 1e-7 * (1.0 + std::abs(z));
    const Complex df = (f(z + delta) - f(z - delta)) / (2.0 * delta);
    if (df == Complex(0.0, 0.0)) return std::nullopt;
    const Complex dz = fz / df;
    z -= dz;
    if (std::abs(z) > escape_radius) return std::nullopt;
    if (std::abs(dz) <= tol * (1.0 + std::abs(z))) return z;
  }
  return std::nullopt;
}

struct ScanContext {
  const std::function<Complex(Complex)>& f;
  ScanOptions opts;
  double near_zero_tol;
  double escape_radius;
};

int winding_with_retry(const ScanContext& ctx, Complex& lo, Complex& hi) {
  // A root close to the contour ruins the phase count; inflate the rectangle
  // slightly and retry.
  for (int attempt = 0; attempt < 6; ++attempt) {
    try {
      WindingCounter wc(ctx.f, ctx.near_zero_tol, ctx.opts.resolution / 8);
      return wc.count(lo, hi);
    } catch (const ContourNearZero&) {
      const Complex pad = 0.013 * (hi - lo) + Complex(1e-9, 1e-9);
      lo -= pad;
      hi += pad;
    }
  }
  throw std::runtime_error("scan_complex: a zero stays within tolerance of every contour tried");
}

void hunt_roots(const ScanContext& ctx, Complex lo, Complex hi, int depth,
                std::vector<Complex>& roots) {
  const int w = winding_with_retry(ctx, lo, hi);
  if (w == 0) return;
  const Complex center = 0.5 * (lo + hi);
  const double diag = std::abs(hi - lo);
  const bool tiny = diag <= std::max(1e-7, 64.0 * ctx.opts.root_tol);
  if (w == 1 || tiny || depth >= ctx.opts.max_depth) {
    if (auto z = newton_polish(ctx.f, center, ctx.opts.root_tol, ctx.escape_radius)) {
      const bool inside = z->real() >= lo.real() - diag && z->real() <= hi.real() + diag &&
                          z->imag() >= lo.imag() - diag && z->imag() <= hi.imag() + diag;
      if (inside) {
        roots.push_back(*z);
        if (w == 1) return;
      }
    }
    if (tiny || depth >= ctx.opts.max_depth) {
      // Poorly conditioned cluster: report the cell center as its location.
      roots.push_back(center);
      return;
    }
  }
  const double mre = 0.5 * (lo.real() + hi.real());
  const double mim = 0.5 * (lo.imag() + hi.imag());
  hunt_roots(ctx, lo, Complex(mre, mim), depth + 1, roots);
  hunt_roots(ctx, Complex(mre, lo.imag()), Complex(hi.real(), mim), depth + 1, roots);
  hunt_roots(ctx, Complex(lo.real(), mim), Complex(mre, hi.imag()), depth + 1, roots);
  hunt_roots(ctx, Complex(mre, mim), hi, depth + 1, roots);
}

void dedupe_roots(std::vector<Complex>& roots, double tol) {
  std::sort(roots.begin(), roots.end(), [](Complex a, Complex b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  std::vector<Complex> out;
  for (const Complex& r : roots) {
    bool dup = false;
    for (const Complex& o : out) {
      if (std::abs(r - o) <= tol * (1.0 + std::abs(o))) dup = true;
    }
    if (!dup) out.push_back(r);
  }
  roots = std::move(out);
}

}  // namespace

std::vector<Complex> scan_complex(const std::function<Complex(Complex)>& f,
                                  const ScanWindow& window, const ScanOptions& opts) {
  if (!(window.re_max > window.re_min) || !(window.im_max > 0.0)) {
    throw std::invalid_argument("scan_complex: degenerate window");
  }
  const double span = std::max(window.re_max - window.re_min, 2.0 * window.im_max);
  ScanContext ctx{f, opts, 1e-13, 10.0 * span + 10.0};

  // First-level tiling; tiles are independent winding problems.
  const int tiles_im = std::max(2, opts.resolution / 16);
  std::vector<std::pair<Complex, Complex>> tiles;
  for (int k = 0; k < tiles_im; ++k) {
    const double i0 = -window.im_max + 2.0 * window.im_max * k / tiles_im;
    const double i1 = -window.im_max + 2.0 * window.im_max * (k + 1) / tiles_im;
    tiles.emplace_back(Complex(window.re_min, i0), Complex(window.re_max, i1));
  }

  std::vector<Complex> roots;
  if (opts.threads > 1) {
    std::vector<std::future<std::vector<Complex>>> futs;
    for (const auto& t : tiles) {
      futs.push_back(std::async(std::launch::async, [&ctx, t]() {
        std::vector<Complex> local;
        hunt_roots(ctx, t.first, t.second, 0, local);
        return local;
      }));
    }
    for (auto& fu : futs) {
      auto local = fu.get();
      roots.insert(roots.end(), local.begin(), local.end());
    }
  } else {
    for (const auto& t : tiles) hunt_roots(ctx, t.first, t.second, 0, roots);
  }
  dedupe_roots(roots, 100.0 * opts.root_tol);

  // Keep only roots inside the requested window (tile inflation can step out).
  std::vector<Complex> inside;
  for (const Complex& r : roots) {
    if (r.real() >= window.re_min - 1e-12 && r.real() <= window.re_max + 1e-12 &&
        std::abs(r.imag()) <= window.im_max + 1e-12) {
      inside.push_back(r);
    }
  }
  return inside;
}

namespace {

/// Quadrature weights of E(s_k, u) = alpha int_0^{s_k} w u + int_{s_k}^m w u
/// as a dense matrix row per node, with w folded in.
Eigen::MatrixXd environment_weights(const Grid& g, double alpha, const GridFunction& w) {
  const Eigen::Index N = g.num_nodes();
  const double h = g.h();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
  for (Eigen::Index k = 0; k < N; ++k) {
    for (Eigen::Index j = 0; j < N; ++j) {
      double lower = 0.0, upper = 0.0;
      if (k > 0 && j <= k) lower = (j == 0 || j == k) ? 0.5 * h : h;
      if (k < N - 1 && j >= k) upper = (j == k || j == N - 1) ? 0.5 * h : h;
      W(k, j) = (alpha * lower + upper) * w[j];
    }
  }
  return W;
}

}  // namespace

Eigen::MatrixXd linearized_matrix(const LinearizationData& lin, const ModelIngredients& ing) {
  const Grid& g = lin.grid;
  const Eigen::Index N = g.num_nodes();
  const double h = g.h();
  const Eigen::VectorXd tw = trapezoid_weights(g);

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  const Eigen::MatrixXd Wenv = environment_weights(g, ing.alpha, lin.w);

  Eigen::VectorXd kq = lin.kappa.values().array() * tw.array();
  for (Eigen::Index i = 1; i < N; ++i) {
    const double s = g.node(i);
    // A: upwind transport, B: local decay.
    M(i, i) += -lin.gamma_star[i] / h;
    M(i, i - 1) += lin.gamma_star[i] / h;
    M(i, i) += -(ing.gamma_s(s, lin.P_star) + lin.mu_star[i]);
    // C: rank-one population coupling.
    M.row(i).noalias() += -lin.rho_star[i] * kq.transpose();
    // D: environment coupling through the mortality.
    M.row(i).noalias() += -lin.mu_E_p_star[i] * Wenv.row(i);
    // F, direct part: recruitment of perturbations.
    for (Eigen::Index j = 0; j < N; ++j) {
      M(i, j) += tw[j] * ing.beta_at(s, g.node(j), lin.E_star[j]);
    }
  }
  // F, environment part: int beta_E(s, y, E_*) p_*(y) E(y, u) dy.
  Eigen::MatrixXd bep = Eigen::MatrixXd::Zero(N, N);
  bool any_bep = false;
  for (Eigen::Index k = 0; k < N; ++k) {
    if (lin.p_star[k] == 0.0) continue;
    for (Eigen::Index i = 1; i < N; ++i) {
      bep(i, k) = tw[k] * ing.beta_E(g.node(i), g.node(k), lin.E_star[k]) * lin.p_star[k];
      any_bep = any_bep || bep(i, k) != 0.0;
    }
  }
  if (any_bep) M.noalias() += bep * Wenv;

  // Boundary row: u(0) = 0 enforced as a pure drain at the upwind rate, which
  // factors the spectrum into {-gamma(0)/h} and the interior operator.
  M.row(0).setZero();
  M(0, 0) = -lin.gamma_star[0] / h;
  return M;
}

Eigen::MatrixXd linearized_matrix(const LinearizationData& lin, const ModelIngredients& ing,
                                  Eigen::Index n) {
  if (n == lin.grid.n()) return linearized_matrix(lin, ing);
  const Grid target(lin.grid.m(), n);
  LinearizationData resampled = build_linearization(
      resample(lin.p_star, target), resample(lin.E_star, target), lin.P_star, ing,
      lin.fertility);
  return linearized_matrix(resampled, ing);
}

Eigen::VectorXcd operator_spectrum(const Eigen::MatrixXd& matrix) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(matrix, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("operator_spectrum: dense eigenvalue solve failed");
  }
  return solver.eigenvalues();
}

namespace {

Complex pick_rightmost(const Eigen::VectorXcd& eigs) {
  Complex best = eigs[0];
  for (Eigen::Index i = 1; i < eigs.size(); ++i) {
    const Complex e = eigs[i];
    if (e.real() > best.real() ||
        (e.real() == best.real() && e.imag() > best.imag())) {
      best = e;
    }
  }
  // Report the upper element of a conjugate pair.
  return best.imag() < 0.0 ? std::conj(best) : best;
}

std::optional<Complex> shift_invert_once(const Eigen::MatrixXd& M, Complex shift) {
  const Eigen::Index N = M.rows();
  Eigen::MatrixXcd A = M.cast<Complex>();
  A.diagonal().array() -= shift;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);

  Eigen::VectorXcd v(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    v[i] = Complex(1.0 / (1.0 + static_cast<double>(i)), 0.25 / (2.0 + static_cast<double>(i)));
  }
  v.normalize();
  Complex lambda_prev(std::numeric_limits<double>::infinity(), 0.0);
  for (int it = 0; it < 400; ++it) {
    Eigen::VectorXcd w = lu.solve(v);
    const double nw = w.norm();
    if (!std::isfinite(nw) || nw == 0.0) return std::nullopt;
    const Complex nu = v.dot(w);  // v^H w, the inverse-iteration Rayleigh quotient
    if (nu == Complex(0, 0)) return std::nullopt;
    const Complex lambda = shift + 1.0 / nu;
    v = w / nw;
    if (std::abs(lambda - lambda_prev) <= 1e-12 * (1.0 + std::abs(lambda))) {
      const double resid = (M * v - lambda * v).norm();
      if (resid <= 1e-6 * (1.0 + M.cwiseAbs().rowwise().sum().maxCoeff())) return lambda;
      return std::nullopt;
    }
    lambda_prev = lambda;
  }
  return std::nullopt;
}

}  // namespace

Complex rightmost_eigenvalue(const Eigen::MatrixXd& matrix, std::optional<Complex> shift_hint) {
  const Eigen::Index N = matrix.rows();
  if (matrix.cols() != N) throw std::invalid_argument("rightmost_eigenvalue: matrix not square");
  if (N <= 401) return pick_rightmost(operator_spectrum(matrix));

  std::vector<Complex> shifts;
  if (shift_hint) {
    shifts.push_back(*shift_hint + Complex(1e-3, 1e-3));
    shifts.push_back(*shift_hint + Complex(0.05, 0.0));
  }
  // Fallback sweep near the right edge of the Gershgorin bound.
  double edge = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < N; ++i) {
    edge = std::max(edge, matrix(i, i) + matrix.row(i).cwiseAbs().sum() -
                              std::abs(matrix(i, i)));
  }
  const double off = 0.1 * (1.0 + std::abs(edge));
  for (double im : {0.0, off, -off, 4.0 * off, -4.0 * off}) {
    shifts.push_back(Complex(edge + off, im));
  }

  std::optional<Complex> best;
  for (const Complex& sigma : shifts) {
    if (auto lam = shift_invert_once(matrix, sigma)) {
      if (!best || lam->real() > best->real()) best = lam;
    }
  }
  if (!best) {
    throw std::runtime_error(
        "rightmost_eigenvalue: shift-invert iteration did not converge for any shift");
  }
  return best->imag() < 0.0 ? std::conj(*best) : *best;
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::stable: return "stable";
    case Verdict::unstable: return "unstable";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

namespace {

ScanWindow auto_window(const LinearizationData& lin, const ModelIngredients& ing) {
  double scale = 0.1;
  const int nb = 17;
  for (int i = 0; i < nb; ++i) {
    const double s = ing.m * i / (nb - 1.0);
    scale = std::max(scale, std::abs(ing.mu_at(s, interpolate(lin.E_star, s))));
    for (int j = 0; j < nb; ++j) {
      const double y = ing.m * j / (nb - 1.0);
      scale = std::max(scale, std::abs(ing.beta_at(s, y, interpolate(lin.E_star, y))));
    }
  }
  ScanWindow wdw;
  wdw.re_max = 5.0 * scale;
  wdw.re_min = -0.5 * scale;
  wdw.im_max = 20.0 * wdw.re_max;
  return wdw;
}

void add_finding(StabilityReport& rep, const std::string& name, bool passed, double value,
                 const std::string& detail, bool advisory = false) {
  rep.triggered_conditions.push_back({name, passed, advisory, value, detail});
}

struct SignCheck {
  bool holds = true;
  double worst = 0.0;
  double at_s = 0.0, at_y = 0.0;
};

SignCheck check_sign_grid(const std::function<double(double, double)>& f, double m, bool wanted_nonpositive) {
  SignCheck sc;
  const int nb = 41;
  for (int i = 0; i < nb; ++i) {
    for (int j = 0; j < nb; ++j) {
      const double s = m * i / (nb - 1.0);
      const double y = m * j / (nb - 1.0);
      const double v = f(s, y);
      const double signed_v = wanted_nonpositive ? v : -v;
      if (signed_v > sc.worst) {
        sc.worst = signed_v;
        sc.at_s = s;
        sc.at_y = y;
        sc.holds = signed_v <= 1e-12;
      }
    }
  }
  return sc;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

StabilityReport classify(const SteadyState& ss, const ModelIngredients& ing,
                         const StabilityOptions& opts) {
  StabilityReport rep;
  const Grid& g = ss.p_star.grid();
  rep.trivial_state = l1_norm(ss.p_star) <= 1e-12;
  rep.oracle_n = opts.oracle_n;

  std::optional<SeparableFertility> tilde =
      opts.majorant ? opts.majorant : split_separable_fertility(ing.beta);
  const LinearizationData lin = rep.trivial_state
                                    ? linearize_trivial(ing, g, tilde)
                                    : linearize(ss, ing, tilde);
  rep.scan_window = opts.window ? *opts.window : auto_window(lin, ing);

  // The discretized-operator oracle is evaluated for every verdict.
  const Eigen::MatrixXd M = linearized_matrix(lin, ing, opts.oracle_n);
  rep.matrix_eigs = operator_spectrum(M);
  rep.rightmost = pick_rightmost(rep.matrix_eigs);

  ScanOptions scan_opts;
  scan_opts.resolution = opts.scan_resolution;
  scan_opts.threads = opts.threads;

  const double tol = opts.tol_spec;

  if (rep.trivial_state) {
    // Extinction state: net-reproduction bracketing of Proposition-type
    // criteria with separable under/over-estimators.
    std::optional<SeparableFertility> minorant =
        opts.minorant ? opts.minorant : split_separable_fertility(ing.beta);
    const GridFunction zero = GridFunction::zero(g);

    bool unstable_evidence = false, stable_evidence = false;
    if (minorant) {
      auto lower_ok = check_sign_grid(
          [&](double s, double y) {
            return minorant->beta1({.s = s}) * minorant->beta2({.y = y, .E = 0.0}) -
                   ing.beta_at(s, y, 0.0);
          },
          ing.m, true);
      add_finding(rep, "minorant beta^l <= beta at E=0", lower_ok.holds, lower_ok.worst,
                  "largest excess " + fmt(lower_ok.worst) + " at s=" + fmt(lower_ok.at_s) +
                      ", y=" + fmt(lower_ok.at_y));
      const double Rl = net_reproduction(zero, minorant->beta1, minorant->beta2, ing);
      add_finding(rep, "R_minorant(0) > 1", Rl > 1.0, Rl,
                  "net reproduction of the underestimator at the zero state");
      if (lower_ok.holds && Rl > 1.0) {
        const GridFunction b1 =
            GridFunction::sample(g, [&](double s) { return minorant->beta1({.s = s}); });
        const GridFunction b2 = GridFunction::sample(
            g, [&](double s) { return minorant->beta2({.y = s, .E = 0.0}); });
        auto kfun = [&](double x) { return char_trivial(Complex(x, 0.0), b1, b2, ing).real(); };
        double hi = std::max(rep.scan_window.re_max, 1.0);
        while (kfun(hi) >= 1.0 && hi < 1e6) hi *= 2.0;
        if (auto root = find_real_root(kfun, 0.0, hi)) {
          rep.char_roots.push_back({Complex(*root, 0.0), "char_trivial bisection"});
          unstable_evidence = *root > tol;
        }
      }
    } else {
      add_finding(rep, "separable minorant available", false, 0.0,
                  "no beta1(s)*beta2(y,E) underestimator supplied and the fertility does not split");
    }
    if (tilde) {
      auto upper_ok = check_sign_grid(
          [&](double s, double y) {
            return ing.beta_at(s, y, 0.0) -
                   tilde->beta1({.s = s}) * tilde->beta2({.y = y, .E = 0.0});
          },
          ing.m, true);
      add_finding(rep, "majorant beta^u >= beta at E=0", upper_ok.holds, upper_ok.worst,
                  "largest excess " + fmt(upper_ok.worst) + " at s=" + fmt(upper_ok.at_s) +
                      ", y=" + fmt(upper_ok.at_y));
      const double Ru = net_reproduction(zero, tilde->beta1, tilde->beta2, ing);
      add_finding(rep, "R_majorant(0) < 1", Ru < 1.0, Ru,
                  "net reproduction of the overestimator at the zero state");
      if (upper_ok.holds && Ru < 1.0) {
        const GridFunction b1 =
            GridFunction::sample(g, [&](double s) { return tilde->beta1({.s = s}); });
        const GridFunction b2 =
            GridFunction::sample(g, [&](double s) { return tilde->beta2({.y = s, .E = 0.0}); });
        const auto roots = scan_complex(
            [&](Complex z) { return 1.0 - char_trivial(z, b1, b2, ing); }, rep.scan_window,
            scan_opts);
        bool clear = true;
        for (const Complex& r : roots) {
          rep.char_roots.push_back({r, "char_trivial scan"});
          clear = clear && r.real() <= -tol;
        }
        add_finding(rep, "majorant characteristic function clear of Re >= 0", clear,
                    static_cast<double>(roots.size()),
                    "window-relative scan of 1 - K(lambda) for the overestimator");
        stable_evidence = clear;
      }
    }

    const bool oracle_stable = rep.rightmost.real() < -tol;
    add_finding(rep, "oracle rightmost eigenvalue", true, rep.rightmost.real(),
                "discretized-generator spectrum at n=" + std::to_string(opts.oracle_n),
                true);
    if (unstable_evidence) {
      rep.verdict = Verdict::unstable;
    } else if (stable_evidence && oracle_stable) {
      rep.verdict = Verdict::stable;
    } else {
      rep.verdict = Verdict::inconclusive;
    }
  } else {
    // Positive steady state.
    const double K0 = char_K(Complex(0.0, 0.0), lin).real();
    add_finding(rep, "K(0) > 1", K0 > 1.0, K0, "characteristic value at lambda = 0");

    double rho_max = 0.0;
    for (Eigen::Index i = 0; i < g.num_nodes(); ++i) {
      rho_max = std::max(rho_max, lin.rho_star[i]);
    }
    const double rho_scale = lin.rho_star.values().cwiseAbs().maxCoeff();
    const bool rho_nonpos = rho_max <= 1e-12 * std::max(1.0, rho_scale);
    add_finding(rep, "rho_* <= 0", rho_nonpos, rho_max, "largest node value of rho_*");

    const double eps = opts.support_epsilon > 0.0 ? opts.support_epsilon : ing.m / 20.0;
    Eigen::Index in_eps = 0, nonzero = 0;
    for (Eigen::Index i = 0; i < g.num_nodes() && g.node(i) <= eps; ++i) {
      ++in_eps;
      if (std::abs(lin.rho_star[i]) > 1e-14 * std::max(1.0, rho_scale)) ++nonzero;
    }
    const bool rho_support = in_eps > 0 && nonzero * 10 >= in_eps * 9;
    add_finding(rep, "rho_* nonzero near 0", rho_support,
                in_eps > 0 ? static_cast<double>(nonzero) / static_cast<double>(in_eps) : 0.0,
                "fraction of nodes in [0, " + fmt(eps) + "] with rho_* != 0 (>= 90% wanted)");

    auto muE_check = check_sign_grid(
        [&](double s, double) { return ing.mu_E(s, interpolate(lin.E_star, s)); }, ing.m,
        true);
    add_finding(rep, "mu_E <= 0 at E_*", muE_check.holds, muE_check.worst,
                "largest mu_E over the size range");
    auto betaE_check = check_sign_grid(
        [&](double s, double y) { return ing.beta_E(s, y, interpolate(lin.E_star, y)); },
        ing.m, false);
    add_finding(rep, "beta_E >= 0 at E_*", betaE_check.holds, -betaE_check.worst,
                "smallest beta_E over the size-pair range");

    const bool instab_hyp =
        K0 > 1.0 && rho_nonpos && rho_support && muE_check.holds && betaE_check.holds;

    bool unstable_evidence = false;
    if (instab_hyp) {
      auto kfun = [&](double x) { return char_K(Complex(x, 0.0), lin).real(); };
      double hi = std::max(rep.scan_window.re_max, 1.0);
      while (kfun(hi) >= 1.0 && hi < 1e6) hi *= 2.0;
      if (auto root = find_real_root(kfun, 0.0, hi)) {
        rep.char_roots.push_back({Complex(*root, 0.0), "char_K bisection"});
        unstable_evidence = *root > tol;
      }
    }

    bool stable_evidence = false;
    bool stab_hyp = false;
    if (lin.has_separable()) {
      auto major_ok = check_sign_grid(
          [&](double s, double y) {
            const double Ey = interpolate(lin.E_star, y);
            return ing.beta_at(s, y, Ey) -
                   lin.fertility->beta1({.s = s}) * lin.fertility->beta2({.y = y, .E = Ey});
          },
          ing.m, true);
      add_finding(rep, "beta <= beta~ at E_*", major_ok.holds, major_ok.worst,
                  "largest excess of beta over the separable majorant");
      auto tildeE_check = check_sign_grid(
          [&](double s, double y) {
            return lin.fertility->beta1({.s = s}) *
                   lin.fertility->beta2.d1(Var::E, {.y = y, .E = interpolate(lin.E_star, y)});
          },
          ing.m, false);
      add_finding(rep, "beta~_E >= 0 at E_*", tildeE_check.holds, -tildeE_check.worst,
                  "smallest E-derivative of the majorant");
      stab_hyp = major_ok.holds && muE_check.holds && tildeE_check.holds && rho_nonpos;

      if (stab_hyp) {
        const auto roots = scan_complex(
            [&](Complex z) { return char_det(z, lin).value; }, rep.scan_window, scan_opts);
        bool clear = true;
        for (const Complex& r : roots) {
          rep.char_roots.push_back({r, "char_det scan"});
          clear = clear && r.real() <= -tol;
        }
        add_finding(rep, "det(I - A(lambda)) clear of Re >= 0", clear,
                    static_cast<double>(roots.size()), "window-relative determinant scan");
        stable_evidence = clear;
      }
    } else {
      add_finding(rep, "separable majorant available", false, 0.0,
                  "stability determinant needs beta1(s)*beta2(y,E); none available");
    }

    const bool oracle_stable = rep.rightmost.real() < -tol;
    add_finding(rep, "oracle rightmost eigenvalue", true, rep.rightmost.real(),
                "discretized-generator spectrum at n=" + std::to_string(opts.oracle_n),
                true);

    if (instab_hyp && unstable_evidence) {
      rep.verdict = Verdict::unstable;
    } else if (stab_hyp && stable_evidence && oracle_stable) {
      rep.verdict = Verdict::stable;
    } else {
      rep.verdict = Verdict::inconclusive;
    }
  }

  std::ostringstream sum;
  sum << verdict_name(rep.verdict) << " (rightmost oracle eigenvalue " << rep.rightmost.real();
  if (rep.rightmost.imag() != 0.0) sum << (rep.rightmost.imag() > 0 ? "+" : "") << rep.rightmost.imag() << "i";
  sum << ", " << rep.char_roots.size() << " characteristic roots recorded, window Re ["
      << rep.scan_window.re_min << ", " << rep.scan_window.re_max << "], |Im| <= "
      << rep.scan_window.im_max << ")";
  rep.summary = sum.str();
  return rep;
}

}  // namespace hierpop
