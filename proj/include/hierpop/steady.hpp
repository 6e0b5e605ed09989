#pragma once

#include "hierpop/gridfn.hpp"
#include "hierpop/model.hpp"
#include "hierpop/rate_expr.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hierpop {

/// Raised when a solve cannot proceed (non-positive growth rate, divergence).
class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One separable fertility term: an offspring-size profile beta_j(s) sampled
/// on the grid, and the parent-side factor, either a catalog expression
/// bar_beta_j(y, E) or the indicator of a parent-size bin.
struct FertilityTerm {
  GridFunction profile;
  std::optional<RateExpr> bar;  // user-separable mode
  double bin_lo = 0.0;          // auto-piecewise mode: indicator of (bin_lo, bin_hi]
  double bin_hi = 0.0;
};

enum class BinAnchor { right, midpoint };

/// Finite-rank representation of the fertility: beta ~ sum_j beta_j(s) *
/// bar_beta_j(y, E(y)).
struct FertilityDecomposition {
  enum class Mode { user_separable, auto_piecewise };

  Mode mode = Mode::user_separable;
  std::vector<FertilityTerm> terms;
  BinAnchor anchor = BinAnchor::right;
  /// Sup-norm distance between beta and the decomposition, estimated by dense
  /// sampling; NaN when not estimated.
  double sup_error = std::numeric_limits<double>::quiet_NaN();

  int rank() const { return static_cast<int>(terms.size()); }

  /// Parent-side factor of term k at parent size y and environment value Ev.
  double bar_at(int k, double y, double Ev) const;
};

/// Exact finite-rank decomposition from a fertility that splits into a sum of
/// separable products; the s-profiles are sampled on the grid.
FertilityDecomposition separable_decomposition(const ModelIngredients& ing, const Grid& g);

/// Piecewise-constant rank-l decomposition: parent sizes are binned into l
/// intervals and the profile of bin k is beta(., y_k, H(y_k)) frozen at the
/// bin anchor under the environment iterate H.
FertilityDecomposition decompose_beta(const ModelIngredients& ing, const GridFunction& H,
                                      int rank, BinAnchor anchor = BinAnchor::right,
                                      bool estimate_error = true);

/// The coordinates the fixed-point map acts on: the environment iterate H,
/// the weighted population P0 and the birth fluxes P^1..P^l.
struct FixedPointState {
  GridFunction H;
  double P0 = 0.0;
  Eigen::VectorXd Pp;

  double shell_norm() const { return l1_norm(H) + std::abs(P0) + Pp.cwiseAbs().sum(); }
  bool in_cone() const;
};

/// F_j(s) = int_0^s exp{-int_x^s (mu(r,H) + gamma_s(r,P0))/gamma(r,P0) dr}
///          * beta_j(x) / gamma(x,P0) dx.
/// Throws SolveError when gamma(., P0) is not positive on the grid.
GridFunction survival_kernel(int term_index, const GridFunction& H, double P0,
                             const FertilityDecomposition& dec, const ModelIngredients& ing);

/// One application of the fixed-point map. In auto-piecewise mode the profiles
/// are refreshed from the input H before the kernels are evaluated.
FixedPointState phi_map(const FixedPointState& x, const FertilityDecomposition& dec,
                        const ModelIngredients& ing);

struct SteadyState {
  GridFunction p_star;
  GridFunction E_star;
  double P_star = 0.0;
  Eigen::VectorXd birth_fluxes;
  double residual_l1 = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SolverOptions {
  double tol_fp = 1e-9;
  // Reporting threshold for the assembled state: residual_l1 is compared
  // against tol_residual_rel * ||p_*||_L1 + tol_residual_abs.
  double tol_residual_rel = 1e-4;
  double tol_residual_abs = 1e-8;
  double theta = 0.5;           // damping of the Picard step
  int max_iter = 5000;
  int rank = 8;                 // auto-piecewise rank when beta does not split
  BinAnchor anchor = BinAnchor::right;
  double seed = 1e-2;           // initial value of P0 and every birth flux
  double divergence_ceiling = 1e8;
  bool anderson = false;        // Anderson acceleration of the damped iteration
  int anderson_depth = 3;
  int restarts = 2;             // restarts from rescaled seeds on stall
};

/// Damped Picard iteration of phi_map from a strictly positive seed, assembly
/// of the steady density p_* = sum_j P^j F_j and the residual check. A
/// decomposition may be supplied explicitly; otherwise the fertility is split
/// exactly when separable and binned at the requested rank when not.
SteadyState solve_fixed_point(const ModelIngredients& ing, const Grid& g,
                              const SolverOptions& opts = {},
                              const std::optional<FertilityDecomposition>& dec = std::nullopt);

/// L1 norm of the steady-state defect
///   d/ds(gamma(s,Q) q) + mu(s,E(s,q)) q - int_0^m beta(s,y,E(y,q)) q(y) dy
/// with the full fertility (never the decomposition).
double residual_psi(const GridFunction& q, const ModelIngredients& ing);

struct ConditionFinding {
  std::string name;
  bool passed = false;
  bool advisory = false;  // sampled evidence only, not a proof
  double value = 0.0;
  std::string detail;
};

struct ExistenceReport {
  std::vector<ConditionFinding> findings;
  bool supercritical_at_zero = false;  // some term has int bar_beta_j F_j > 1 at zero
  double c_bound = 0.0;                // largest c with kappa >= c sum_k bar_beta_k
};

/// Numerical screening of the existence theorem hypotheses: supercriticality
/// at zero, the kappa-domination constant, and the large-population bound
/// sampled over a family of environments with norm beyond the given radius.
/// Advisory only; the quantifier over all environments is not decidable here.
ExistenceReport check_existence(const FertilityDecomposition& dec, const ModelIngredients& ing,
                                double radius);

}  // namespace hierpop
