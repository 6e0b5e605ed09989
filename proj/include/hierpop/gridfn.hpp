#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <utility>

namespace hierpop {

/// Uniform grid on [0, m] with n cells and n+1 nodes s_i = i*m/n.
class Grid {
 public:
  Grid(double m, Eigen::Index n) : m_(m), n_(n) {
    if (!(m > 0.0) || !std::isfinite(m)) {
      throw std::invalid_argument("Grid: maximal size m must be positive and finite");
    }
    if (n < 2) {
      throw std::invalid_argument("Grid: cell count n must be at least 2");
    }
    h_ = m_ / static_cast<double>(n_);
  }

  double m() const { return m_; }
  Eigen::Index n() const { return n_; }
  Eigen::Index num_nodes() const { return n_ + 1; }
  double h() const { return h_; }
  double node(Eigen::Index i) const { return static_cast<double>(i) * h_; }

  Eigen::VectorXd nodes() const {
    return Eigen::VectorXd::LinSpaced(n_ + 1, 0.0, m_);
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.m_ == b.m_ && a.n_ == b.n_;
  }
  friend bool operator!=(const Grid& a, const Grid& b) { return !(a == b); }

 private:
  double m_;
  Eigen::Index n_;
  double h_;
};

namespace detail {
inline bool entry_finite(double v) { return std::isfinite(v); }
inline bool entry_finite(const std::complex<double>& v) {
  return std::isfinite(v.real()) && std::isfinite(v.imag());
}
}  // namespace detail

/// A function of size s sampled at the nodes of a uniform grid. Immutable
/// after construction; the representation of densities, environments and
/// kernels throughout.
template <class Scalar>
class GridFunctionT {
 public:
  using Vector = Eigen::Vector<Scalar, Eigen::Dynamic>;

  GridFunctionT(Grid grid, Vector values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.num_nodes()) {
      throw std::invalid_argument("GridFunction: value count must equal node count");
    }
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (!detail::entry_finite(values_[i])) {
        throw std::invalid_argument("GridFunction: all values must be finite");
      }
    }
  }

  static GridFunctionT zero(const Grid& g) {
    return GridFunctionT(g, Vector::Zero(g.num_nodes()));
  }
  static GridFunctionT constant(const Grid& g, Scalar c) {
    return GridFunctionT(g, Vector::Constant(g.num_nodes(), c));
  }
  template <class F>
  static GridFunctionT sample(const Grid& g, F&& f) {
    Vector v(g.num_nodes());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f(g.node(i));
    return GridFunctionT(g, std::move(v));
  }

  const Grid& grid() const { return grid_; }
  const Vector& values() const { return values_; }
  Scalar operator[](Eigen::Index i) const { return values_[i]; }
  Eigen::Index size() const { return values_.size(); }

  GridFunctionT with_values(Vector v) const {
    return GridFunctionT(grid_, std::move(v));
  }

  friend GridFunctionT operator+(const GridFunctionT& a, const GridFunctionT& b) {
    require_same_grid(a, b);
    return GridFunctionT(a.grid_, a.values_ + b.values_);
  }
  friend GridFunctionT operator-(const GridFunctionT& a, const GridFunctionT& b) {
    require_same_grid(a, b);
    return GridFunctionT(a.grid_, a.values_ - b.values_);
  }
  friend GridFunctionT operator*(Scalar c, const GridFunctionT& f) {
    return GridFunctionT(f.grid_, (c * f.values_.array()).matrix());
  }

  static void require_same_grid(const GridFunctionT& a, const GridFunctionT& b) {
    if (a.grid_ != b.grid_) {
      throw std::invalid_argument("GridFunction: operands live on different grids");
    }
  }

 private:
  Grid grid_;
  Vector values_;
};

using GridFunction = GridFunctionT<double>;
using ComplexGridFunction = GridFunctionT<std::complex<double>>;

inline ComplexGridFunction to_complex(const GridFunction& f) {
  return ComplexGridFunction(f.grid(), f.values().cast<std::complex<double>>());
}

/// Composite trapezoid approximation of the integral over [0, m]. Exact for
/// affine integrands. Accumulates cell by cell in the same order as
/// cumulative_integral, so integrate(f) equals the last cumulative node value
/// bit for bit.
template <class Scalar>
Scalar integrate(const GridFunctionT<Scalar>& f) {
  const auto& v = f.values();
  const double half_h = 0.5 * f.grid().h();
  Scalar acc{};
  for (Eigen::Index i = 0; i + 1 < v.size(); ++i) {
    acc += half_h * (v[i] + v[i + 1]);
  }
  return acc;
}

/// G with G(s_i) = trapezoid integral of f over [0, s_i]; G(0) = 0.
template <class Scalar>
GridFunctionT<Scalar> cumulative_integral(const GridFunctionT<Scalar>& f) {
  const auto& v = f.values();
  const double half_h = 0.5 * f.grid().h();
  typename GridFunctionT<Scalar>::Vector g(v.size());
  Scalar acc{};
  g[0] = acc;
  for (Eigen::Index i = 0; i + 1 < v.size(); ++i) {
    acc += half_h * (v[i] + v[i + 1]);
    g[i + 1] = acc;
  }
  return f.with_values(std::move(g));
}

/// Piecewise-linear interpolant. Node values are reproduced exactly; s
/// outside [0, m] is rejected.
template <class Scalar>
Scalar interpolate(const GridFunctionT<Scalar>& f, double s) {
  const Grid& g = f.grid();
  if (!(s >= 0.0) || !(s <= g.m())) {
    throw std::domain_error("interpolate: point outside [0, m]");
  }
  double u = s / g.h();
  auto i = static_cast<Eigen::Index>(u);
  if (i >= g.n()) i = g.n() - 1;
  double t = u - static_cast<double>(i);
  // Snap to the node when s is a node value up to roundoff of s/h.
  if (t < 1e-9) return f[i];
  if (t > 1.0 - 1e-9) return f[i + 1];
  return (1.0 - t) * f[i] + t * f[i + 1];
}

/// Resample onto a grid with factor times as many cells. New nodes that
/// coincide with old ones copy the value; the rest interpolate linearly.
template <class Scalar>
GridFunctionT<Scalar> refine(const GridFunctionT<Scalar>& f, Eigen::Index factor) {
  if (factor < 1) throw std::invalid_argument("refine: factor must be >= 1");
  if (factor == 1) return f;
  const Grid& g = f.grid();
  Grid fine(g.m(), g.n() * factor);
  typename GridFunctionT<Scalar>::Vector v(fine.num_nodes());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const Eigen::Index i = j / factor;
    const Eigen::Index r = j % factor;
    if (r == 0) {
      v[j] = f[i];
    } else {
      const double t = static_cast<double>(r) / static_cast<double>(factor);
      v[j] = (1.0 - t) * f[i] + t * f[i + 1];
    }
  }
  return GridFunctionT<Scalar>(fine, std::move(v));
}

/// Resample onto an arbitrary coarser or finer uniform grid over the same
/// [0, m] by linear interpolation.
template <class Scalar>
GridFunctionT<Scalar> resample(const GridFunctionT<Scalar>& f, const Grid& target) {
  if (target == f.grid()) return f;
  if (target.m() != f.grid().m()) {
    throw std::invalid_argument("resample: target grid has a different domain");
  }
  typename GridFunctionT<Scalar>::Vector v(target.num_nodes());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    v[j] = interpolate(f, std::min(target.node(j), target.m()));
  }
  return GridFunctionT<Scalar>(target, std::move(v));
}

/// K with K(s_i) = trapezoid integral over [0, s_i] of
/// exp{-(Lambda(s_i) - Lambda(x))} * g(x). Evaluated by the cell recurrence
///   K_{i+1} = d_i K_i + (h/2)(d_i g_i + g_{i+1}),  d_i = exp{-(L_{i+1}-L_i)},
/// which reproduces the direct trapezoid sum exactly while keeping every
/// exponent a single-cell increment. This is the inner kernel of every
/// survival integral and characteristic function.
template <class Scalar>
GridFunctionT<Scalar> attenuated_cumulative(const GridFunctionT<Scalar>& g,
                                            const GridFunctionT<Scalar>& exponent) {
  GridFunctionT<Scalar>::require_same_grid(g, exponent);
  const auto& gv = g.values();
  const auto& lv = exponent.values();
  const double half_h = 0.5 * g.grid().h();
  typename GridFunctionT<Scalar>::Vector k(gv.size());
  k[0] = Scalar{};
  for (Eigen::Index i = 0; i + 1 < gv.size(); ++i) {
    const Scalar d = std::exp(-(lv[i + 1] - lv[i]));
    k[i + 1] = d * k[i] + half_h * (d * gv[i] + gv[i + 1]);
  }
  return g.with_values(std::move(k));
}

/// Centered difference derivative, second-order one-sided at the endpoints.
inline GridFunction derivative(const GridFunction& f) {
  const auto& v = f.values();
  const double h = f.grid().h();
  Eigen::VectorXd d(v.size());
  const Eigen::Index n = v.size() - 1;
  d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
  for (Eigen::Index i = 1; i < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
  d[n] = (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h);
  return f.with_values(std::move(d));
}

inline double l1_norm(const GridFunction& f) {
  return integrate(f.with_values(f.values().cwiseAbs()));
}

/// Trapezoid node weights (h/2, h, ..., h, h/2); the quadrature row used by
/// the discretized-operator oracle.
inline Eigen::VectorXd trapezoid_weights(const Grid& g) {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(g.num_nodes(), g.h());
  w[0] *= 0.5;
  w[g.n()] *= 0.5;
  return w;
}

}  // namespace hierpop
