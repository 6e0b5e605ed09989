#pragma once

#include "hierpop/gridfn.hpp"
#include "hierpop/model.hpp"
#include "hierpop/steady.hpp"

#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hierpop {

using Complex = std::complex<double>;

/// Everything the characteristic functions and the discretized-operator
/// oracle need, frozen at an equilibrium.
struct LinearizationData {
  Grid grid;
  double P_star = 0.0;
  GridFunction p_star;
  GridFunction p_star_prime;  // centered differences, one-sided at the ends
  GridFunction E_star;
  GridFunction gamma_star;    // gamma(., P_*)
  GridFunction rho_star;      // gamma_Ps p_* + gamma_P p_*'
  GridFunction mu_star;       // mu(., E_*)
  GridFunction mu_E_p_star;   // mu_E(., E_*) p_*
  GridFunction kappa;
  GridFunction w;
  GridFunction survival_exponent;  // (gamma_s + mu)/gamma at the equilibrium
  GridFunction Lambda;             // cumulative integral of survival_exponent
  GridFunction gamma_time;         // T(s) = int_0^s dx/gamma, the lambda part of the exponent
  GridFunction f1;                 // -rho_*/gamma

  // Separable-fertility path (Theorem 3.4 kernels); absent when no
  // beta1(s) beta2(y,E) form is available.
  std::optional<SeparableFertility> fertility;
  std::optional<GridFunction> beta2_at_Estar;  // beta2(s, E_*(s))
  std::optional<GridFunction> f2, f3;
  double beta2_moment = 0.0;  // int beta2(x, E_*) p_* dx

  bool has_separable() const { return fertility.has_value(); }
};

/// Linearization around a converged steady state (or the explicit zero
/// state). The separable kernels f2, f3 are filled from the supplied
/// beta1*beta2 form, from the ingredients' own fertility when it splits, and
/// are absent otherwise.
LinearizationData linearize(const SteadyState& ss, const ModelIngredients& ing,
                            std::optional<SeparableFertility> tilde = std::nullopt);

/// Zero-state linearization on a given grid.
LinearizationData linearize_trivial(const ModelIngredients& ing, const Grid& g,
                                    std::optional<SeparableFertility> tilde = std::nullopt);

/// K(lambda) = -int_0^m kappa(s) int_0^s f_0^lambda(s,y) rho_*(y)/gamma(y) dy ds;
/// the characteristic equation of the rank-one-perturbed transport part is
/// K(lambda) = 1.
Complex char_K(Complex lambda, const LinearizationData& lin);

struct CharEval {
  Complex lambda;
  Eigen::Matrix3cd matrix_A;
  Complex value;  // det(I - A(lambda))
  std::optional<Eigen::Vector3cd> nullvector;
};

/// The 3x3 characteristic determinant of the separable-fertility
/// linearization: entries a_ij integrate f_0^lambda f_j against kappa, w and
/// beta2(., E_*). Roots of det(I - A(lambda)) are the eigenvalues.
CharEval char_det(Complex lambda, const LinearizationData& lin, double null_tol = 1e-8);

/// Characteristic function of the extinction state for a separable fertility
/// sampled as beta1, beta2 profiles: K^l(lambda) = int beta2(s) int_0^s
/// f_0^lambda beta1(y)/gamma(y,0) dy ds with all rates at p = 0.
Complex char_trivial(Complex lambda, const GridFunction& beta1, const GridFunction& beta2,
                     const ModelIngredients& ing);

struct NetReproduction {
  double value = 0.0;      // survival-exponent form (with gamma_s in the exponent)
  double alt_value = 0.0;  // growth-ratio form (gamma(y)/gamma(s) folded in)
};

/// Both displayed forms of the net reproduction functional R(p); they agree
/// up to quadrature roundoff through the identity
/// exp{-int gamma_s/gamma} = gamma(y)/gamma(s).
NetReproduction net_reproduction_forms(const GridFunction& p, const RateExpr& beta1,
                                       const RateExpr& beta2, const ModelIngredients& ing);

double net_reproduction(const GridFunction& p, const RateExpr& beta1, const RateExpr& beta2,
                        const ModelIngredients& ing);

/// Bisection on char(lambda) - 1 over [lo, hi]; nullopt when no sign change.
std::optional<double> find_real_root(const std::function<double(double)>& char_fn, double lo,
                                     double hi, double tol = 1e-10);

struct ScanWindow {
  double re_min = -1.0;
  double re_max = 5.0;
  double im_max = 20.0;
};

struct ScanOptions {
  int resolution = 64;  // initial samples per rectangle edge
  int max_depth = 60;
  double root_tol = 1e-10;
  int threads = 1;
};

/// Argument-principle scan: winding numbers on subdivided rectangles isolate
/// the zeros of f, each polished by a damped Newton iteration. The returned
/// list is window-relative; an empty list says nothing outside the window.
std::vector<Complex> scan_complex(const std::function<Complex(Complex)>& f,
                                  const ScanWindow& window, const ScanOptions& opts = {});

/// Dense collocation of the linearized generator A+B+C+D+F on the grid of
/// lin, resampled to n cells when n differs: upwind transport with a
/// boundary row at s = 0, diagonal decay, the rank-one population coupling,
/// the environment coupling and the recruitment quadrature.
Eigen::MatrixXd linearized_matrix(const LinearizationData& lin, const ModelIngredients& ing,
                                  Eigen::Index n);
Eigen::MatrixXd linearized_matrix(const LinearizationData& lin, const ModelIngredients& ing);

/// All eigenvalues of the dense collocation matrix.
Eigen::VectorXcd operator_spectrum(const Eigen::MatrixXd& matrix);

/// Eigenvalue with maximal real part: a full dense solve up to 401 nodes, a
/// shift-invert power iteration (seeded by the hint) above.
Complex rightmost_eigenvalue(const Eigen::MatrixXd& matrix,
                             std::optional<Complex> shift_hint = std::nullopt);

enum class Verdict { stable, unstable, inconclusive };

const char* verdict_name(Verdict v);

struct RootRecord {
  Complex location;
  std::string source;  // "char_K bisection", "char_det scan", ...
};

struct StabilityReport {
  Verdict verdict = Verdict::inconclusive;
  std::vector<ConditionFinding> triggered_conditions;
  std::vector<RootRecord> char_roots;
  Eigen::VectorXcd matrix_eigs;
  Complex rightmost{0.0, 0.0};
  ScanWindow scan_window;
  Eigen::Index oracle_n = 0;
  bool trivial_state = false;
  std::string summary;
};

struct StabilityOptions {
  std::optional<ScanWindow> window;  // derived from the rate scales when unset
  double tol_spec = 1e-6;            // spectral margin for a verdict
  Eigen::Index oracle_n = 400;
  int scan_resolution = 64;
  double support_epsilon = -1.0;  // interval for the rho_* support check; m/20 when < 0
  std::optional<SeparableFertility> majorant;  // beta-tilde for the stability theorem
  std::optional<SeparableFertility> minorant;  // underestimator for the extinction state
  int threads = 1;
};

/// Verdict for a steady state: hypothesis checks of the instability and
/// stability theorems (extinction-state criteria for the zero state), the
/// characteristic roots, and the discretized-operator oracle. Inconclusive is
/// a legitimate outcome whenever the hypotheses fail or the two spectral
/// routes disagree.
StabilityReport classify(const SteadyState& ss, const ModelIngredients& ing,
                         const StabilityOptions& opts = {});

}  // namespace hierpop
