#include "hierpop/rate_expr.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hierpop {

const char* var_name(Var v) {
  switch (v) {
    case Var::s: return "s";
    case Var::y: return "y";
    case Var::E: return "E";
    case Var::P: return "P";
  }
  return "?";
}

double RateArgs::get(Var v) const {
  switch (v) {
    case Var::s: return s;
    case Var::y: return y;
    case Var::E: return E;
    case Var::P: return P;
  }
  return 0.0;
}

struct RateExpr::Node {
  Family family = Family::constant;
  Var var = Var::s;
  std::vector<double> coeffs;
  double xmax = 0.0;                       // tabulated domain
  Eigen::VectorXd samples, d1_table, d2_table;  // tabulated data
  std::shared_ptr<const Node> left, right;

  bool is_leaf() const { return family != Family::product && family != Family::sum; }

  // Value and up to two derivatives of the underlying one-variable family.
  void leaf_eval(double x, double& f, double& df, double& ddf) const {
    switch (family) {
      case Family::constant:
        f = coeffs[0]; df = 0.0; ddf = 0.0;
        return;
      case Family::polynomial: {
        f = df = ddf = 0.0;
        // Simultaneous Horner recurrence for value, first and second derivative.
        for (auto k = static_cast<long>(coeffs.size()) - 1; k >= 0; --k) {
          ddf = ddf * x + 2.0 * df;
          df = df * x + f;
          f = f * x + coeffs[static_cast<size_t>(k)];
        }
        return;
      }
      case Family::exp_decay: {
        const double a = coeffs[0], b = coeffs[1];
        const double e = std::exp(-b * x);
        f = a * e; df = -b * f; ddf = b * b * f;
        return;
      }
      case Family::logistic: {
        const double a = coeffs[0], b = coeffs[1];
        const double den = 1.0 + b * x;
        f = a / den;
        df = -a * b / (den * den);
        ddf = 2.0 * a * b * b / (den * den * den);
        return;
      }
      case Family::hill: {
        const double a = coeffs[0], c = coeffs[1];
        const double xc = std::pow(x, c);
        const double den = 1.0 + xc;
        f = a * xc / den;
        df = a * c * std::pow(x, c - 1.0) / (den * den);
        ddf = a * c * std::pow(x, c - 2.0) * ((c - 1.0) - (c + 1.0) * xc) / (den * den * den);
        return;
      }
      case Family::affine:
        f = coeffs[0] + coeffs[1] * x; df = coeffs[1]; ddf = 0.0;
        return;
      case Family::tabulated: {
        f = table_at(samples, x);
        df = table_at(d1_table, x);
        ddf = table_at(d2_table, x);
        return;
      }
      default:
        throw std::logic_error("RateExpr: leaf_eval on combination node");
    }
  }

  double table_at(const Eigen::VectorXd& tab, double x) const {
    const auto n = tab.size() - 1;
    const double h = xmax / static_cast<double>(n);
    // Constant extension outside the tabulated range.
    if (x <= 0.0) return tab[0];
    if (x >= xmax) return tab[n];
    const double u = x / h;
    auto i = static_cast<Eigen::Index>(u);
    if (i >= n) i = n - 1;
    const double t = u - static_cast<double>(i);
    return (1.0 - t) * tab[i] + t * tab[i + 1];
  }
};

namespace {

std::shared_ptr<const RateExpr::Node> make_leaf(RateExpr::Family fam, Var v,
                                                std::vector<double> coeffs) {
  auto n = std::make_shared<RateExpr::Node>();
  n->family = fam;
  n->var = v;
  n->coeffs = std::move(coeffs);
  return n;
}

Eigen::VectorXd centered_diff_table(const Eigen::VectorXd& v, double h) {
  Eigen::VectorXd d(v.size());
  const auto n = v.size() - 1;
  d[0] = (v[1] - v[0]) / h;
  for (Eigen::Index i = 1; i < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
  d[n] = (v[n] - v[n - 1]) / h;
  return d;
}

}  // namespace

RateExpr RateExpr::constant(double c) {
  return RateExpr(make_leaf(Family::constant, Var::s, {c}));
}
RateExpr RateExpr::polynomial(Var v, std::vector<double> coeffs) {
  if (coeffs.empty()) throw std::invalid_argument("polynomial: needs at least one coefficient");
  return RateExpr(make_leaf(Family::polynomial, v, std::move(coeffs)));
}
RateExpr RateExpr::exp_decay(Var v, double a, double b) {
  return RateExpr(make_leaf(Family::exp_decay, v, {a, b}));
}
RateExpr RateExpr::logistic(Var v, double a, double b) {
  return RateExpr(make_leaf(Family::logistic, v, {a, b}));
}
RateExpr RateExpr::hill(Var v, double a, double c) {
  if (!(c >= 1.0)) throw std::invalid_argument("hill: exponent must be >= 1 for a C^1 rate");
  return RateExpr(make_leaf(Family::hill, v, {a, c}));
}
RateExpr RateExpr::affine(Var v, double a, double b) {
  return RateExpr(make_leaf(Family::affine, v, {a, b}));
}
RateExpr RateExpr::tabulated(Var v, double xmax, Eigen::VectorXd samples) {
  if (!(xmax > 0.0)) throw std::invalid_argument("tabulated: xmax must be positive");
  if (samples.size() < 2) throw std::invalid_argument("tabulated: needs at least two samples");
  auto n = std::make_shared<Node>();
  n->family = Family::tabulated;
  n->var = v;
  n->xmax = xmax;
  const double h = xmax / static_cast<double>(samples.size() - 1);
  n->samples = std::move(samples);
  n->d1_table = centered_diff_table(n->samples, h);
  n->d2_table = centered_diff_table(n->d1_table, h);
  return RateExpr(n);
}
RateExpr RateExpr::product(RateExpr a, RateExpr b) {
  auto n = std::make_shared<Node>();
  n->family = Family::product;
  n->left = a.node_;
  n->right = b.node_;
  return RateExpr(n);
}
RateExpr RateExpr::sum(RateExpr a, RateExpr b) {
  auto n = std::make_shared<Node>();
  n->family = Family::sum;
  n->left = a.node_;
  n->right = b.node_;
  return RateExpr(n);
}

namespace {

double eval_node(const RateExpr::Node& n, const RateArgs& args);

double d1_node(const RateExpr::Node& n, Var v, const RateArgs& args);

double d2_node(const RateExpr::Node& n, Var v1, Var v2, const RateArgs& args);

double eval_node(const RateExpr::Node& n, const RateArgs& args) {
  if (n.is_leaf()) {
    double f, df, ddf;
    n.leaf_eval(args.get(n.var), f, df, ddf);
    return f;
  }
  const double a = eval_node(*n.left, args);
  const double b = eval_node(*n.right, args);
  return n.family == RateExpr::Family::product ? a * b : a + b;
}

double d1_node(const RateExpr::Node& n, Var v, const RateArgs& args) {
  if (n.is_leaf()) {
    if (n.var != v) return 0.0;
    double f, df, ddf;
    n.leaf_eval(args.get(n.var), f, df, ddf);
    return df;
  }
  if (n.family == RateExpr::Family::sum) {
    return d1_node(*n.left, v, args) + d1_node(*n.right, v, args);
  }
  return d1_node(*n.left, v, args) * eval_node(*n.right, args) +
         eval_node(*n.left, args) * d1_node(*n.right, v, args);
}

double d2_node(const RateExpr::Node& n, Var v1, Var v2, const RateArgs& args) {
  if (n.is_leaf()) {
    if (n.var != v1 || n.var != v2) return 0.0;
    double f, df, ddf;
    n.leaf_eval(args.get(n.var), f, df, ddf);
    return ddf;
  }
  if (n.family == RateExpr::Family::sum) {
    return d2_node(*n.left, v1, v2, args) + d2_node(*n.right, v1, v2, args);
  }
  return d2_node(*n.left, v1, v2, args) * eval_node(*n.right, args) +
         d1_node(*n.left, v1, args) * d1_node(*n.right, v2, args) +
         d1_node(*n.left, v2, args) * d1_node(*n.right, v1, args) +
         eval_node(*n.left, args) * d2_node(*n.right, v1, v2, args);
}

bool depends_node(const RateExpr::Node& n, Var v) {
  if (n.is_leaf()) {
    if (n.family == RateExpr::Family::constant) return false;
    return n.var == v;
  }
  return depends_node(*n.left, v) || depends_node(*n.right, v);
}

}  // namespace

double RateExpr::operator()(const RateArgs& args) const { return eval_node(*node_, args); }
double RateExpr::d1(Var v, const RateArgs& args) const { return d1_node(*node_, v, args); }
double RateExpr::d2(Var v1, Var v2, const RateArgs& args) const {
  return d2_node(*node_, v1, v2, args);
}
bool RateExpr::depends_on(Var v) const { return depends_node(*node_, v); }

std::vector<RateExpr> RateExpr::factors() const {
  if (node_->family != Family::product) return {*this};
  auto out = RateExpr(node_->left).factors();
  auto rhs = RateExpr(node_->right).factors();
  out.insert(out.end(), rhs.begin(), rhs.end());
  return out;
}

std::vector<RateExpr> RateExpr::summands() const {
  if (node_->family != Family::sum) return {*this};
  auto out = RateExpr(node_->left).summands();
  auto rhs = RateExpr(node_->right).summands();
  out.insert(out.end(), rhs.begin(), rhs.end());
  return out;
}

const std::vector<std::string>& RateExpr::family_names() {
  static const std::vector<std::string> names = {
      "constant", "polynomial", "exp_decay", "logistic",
      "hill",     "affine",     "tabulated", "product",
      "sum"};
  return names;
}

std::string RateExpr::describe() const {
  std::ostringstream os;
  const Node& n = *node_;
  switch (n.family) {
    case Family::constant:
      os << n.coeffs[0];
      break;
    case Family::polynomial: {
      os << "poly(" << var_name(n.var) << ";";
      for (size_t k = 0; k < n.coeffs.size(); ++k) os << (k ? "," : " ") << n.coeffs[k];
      os << ")";
      break;
    }
    case Family::exp_decay:
      os << n.coeffs[0] << "*exp(-" << n.coeffs[1] << "*" << var_name(n.var) << ")";
      break;
    case Family::logistic:
      os << n.coeffs[0] << "/(1+" << n.coeffs[1] << "*" << var_name(n.var) << ")";
      break;
    case Family::hill:
      os << n.coeffs[0] << "*" << var_name(n.var) << "^" << n.coeffs[1] << "/(1+"
         << var_name(n.var) << "^" << n.coeffs[1] << ")";
      break;
    case Family::affine:
      os << "(" << n.coeffs[0] << "+" << n.coeffs[1] << "*" << var_name(n.var) << ")";
      break;
    case Family::tabulated:
      os << "tabulated(" << var_name(n.var) << "; " << n.samples.size() << " samples on [0,"
         << n.xmax << "])";
      break;
    case Family::product:
      os << RateExpr(n.left).describe() << " * " << RateExpr(n.right).describe();
      break;
    case Family::sum:
      os << "(" << RateExpr(n.left).describe() << " + " << RateExpr(n.right).describe() << ")";
      break;
  }
  return os.str();
}

std::optional<SeparableFertility> split_separable_fertility(const RateExpr& beta) {
  if (beta.depends_on(Var::P)) return std::nullopt;
  std::optional<RateExpr> s_part, ye_part;
  auto fold = [](std::optional<RateExpr>& acc, const RateExpr& f) {
    acc = acc ? RateExpr::product(*acc, f) : f;
  };
  for (const RateExpr& f : beta.factors()) {
    const bool in_s = f.depends_on(Var::s);
    const bool in_ye = f.depends_on(Var::y) || f.depends_on(Var::E);
    if (in_s && in_ye) return std::nullopt;  // an entangled sum factor
    if (in_ye) {
      fold(ye_part, f);
    } else {
      fold(s_part, f);  // s-dependent and variable-free factors both go left
    }
  }
  if (!s_part) s_part = RateExpr::constant(1.0);
  if (!ye_part) ye_part = RateExpr::constant(1.0);
  return SeparableFertility{*s_part, *ye_part};
}

std::optional<std::vector<SeparableFertility>> split_finite_rank_fertility(const RateExpr& beta) {
  // Distribute product-of-sum structure one level: (f * g) with g a sum
  // splits into f*g_k terms; then each term must be separable.
  std::vector<RateExpr> terms;
  for (const RateExpr& factor_level : beta.summands()) {
    bool expanded = false;
    const auto fs = factor_level.factors();
    for (size_t i = 0; i < fs.size(); ++i) {
      const auto inner = fs[i].summands();
      if (inner.size() > 1) {
        for (const RateExpr& t : inner) {
          std::optional<RateExpr> rebuilt;
          for (size_t j = 0; j < fs.size(); ++j) {
            const RateExpr& piece = (j == i) ? t : fs[j];
            rebuilt = rebuilt ? RateExpr::product(*rebuilt, piece) : piece;
          }
          terms.push_back(*rebuilt);
        }
        expanded = true;
        break;
      }
    }
    if (!expanded) terms.push_back(factor_level);
  }
  std::vector<SeparableFertility> out;
  for (const RateExpr& t : terms) {
    auto split = split_separable_fertility(t);
    if (!split) return std::nullopt;
    out.push_back(*split);
  }
  return out;
}

}  // namespace hierpop
