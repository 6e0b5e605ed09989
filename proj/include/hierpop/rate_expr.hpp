#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hierpop {

/// The arguments a vital rate may read.
enum class Var { s, y, E, P };

const char* var_name(Var v);

struct RateArgs {
  double s = 0.0;
  double y = 0.0;
  double E = 0.0;
  double P = 0.0;
  double get(Var v) const;
};

/// A parametric rate function from the catalog: leaves are one-variable
/// families with closed-form first and second derivatives, composed by
/// products and sums. Tabulated leaves interpolate user samples and
/// differentiate by centered differences. Expressions are immutable and
/// cheap to copy (shared tree).
class RateExpr {
 public:
  enum class Family {
    constant,      // c
    polynomial,    // c0 + c1 x + c2 x^2 + ...
    exp_decay,     // a e^{-b x}
    logistic,      // a / (1 + b x)
    hill,          // a x^c / (1 + x^c)
    affine,        // a + b x
    tabulated,     // linear interpolation of samples on [0, xmax]
    product,
    sum,
  };

  static RateExpr constant(double c);
  static RateExpr polynomial(Var v, std::vector<double> coeffs);
  static RateExpr exp_decay(Var v, double a, double b);
  static RateExpr logistic(Var v, double a, double b);
  static RateExpr hill(Var v, double a, double c);
  static RateExpr affine(Var v, double a, double b);
  static RateExpr tabulated(Var v, double xmax, Eigen::VectorXd samples);
  static RateExpr product(RateExpr a, RateExpr b);
  static RateExpr sum(RateExpr a, RateExpr b);

  double operator()(const RateArgs& args) const;
  /// First partial derivative with respect to v.
  double d1(Var v, const RateArgs& args) const;
  /// Second partial derivative d^2/dv1 dv2.
  double d2(Var v1, Var v2, const RateArgs& args) const;

  bool depends_on(Var v) const;
  /// Flattened factor list when the expression is a (nested) product;
  /// the expression itself otherwise.
  std::vector<RateExpr> factors() const;
  /// Flattened summand list when the expression is a (nested) sum.
  std::vector<RateExpr> summands() const;

  std::string describe() const;

  static const std::vector<std::string>& family_names();

  struct Node;  // definition private to the implementation file

 private:
  explicit RateExpr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

/// A fertility split beta(s,y,E) = beta1(s) * beta2(y,E). beta1 reads only s,
/// beta2 reads only (y, E).
struct SeparableFertility {
  RateExpr beta1;
  RateExpr beta2;
};

/// Splits a fertility expression into beta1(s) * beta2(y,E) when it is a
/// product whose factors partition cleanly between s and (y,E); nullopt
/// otherwise. Variable-free factors fold into beta1 first, so a constant
/// fertility splits as (c, 1)-style with the left factor carrying the s role.
std::optional<SeparableFertility> split_separable_fertility(const RateExpr& beta);

/// Splits a fertility expression written as a finite sum of separable
/// products into its rank-l term list; nullopt if any summand fails to split.
std::optional<std::vector<SeparableFertility>> split_finite_rank_fertility(const RateExpr& beta);

}  // namespace hierpop
