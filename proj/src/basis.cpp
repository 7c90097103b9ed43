#include "atmdg/basis.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace atmdg {

namespace {

// Legendre P_n(x) and P_n'(x) on [-1,1] by three-term recurrence.
void legendre(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  if (n == 0) {
    p = 1.0;
    dp = 0.0;
    return;
  }
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1.0);
}

} // namespace

Quadrature1D gauss_legendre(int n) {
  assert(n >= 1);
  Quadrature1D q;
  q.points.resize(n);
  q.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    // Chebyshev initial guess, Newton refinement.
    double x = std::cos(M_PI * (k + 0.75) / (n + 0.5));
    double p, dp;
    for (int it = 0; it < 100; ++it) {
      legendre(n, x, p, dp);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    legendre(n, x, p, dp);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // Map [-1,1] -> [0,1]; reverse so points come out increasing.
    q.points[n - 1 - k] = 0.5 * (x + 1.0);
    q.weights[n - 1 - k] = 0.5 * w;
  }
  return q;
}

std::vector<double> gauss_lobatto_points(int r) {
  assert(r >= 1);
  const int n = r + 1;
  std::vector<double> pts(n);
  pts[0] = 0.0;
  pts[n - 1] = 1.0;
  // Interior nodes: roots of P_r'(x).
  for (int k = 1; k < n - 1; ++k) {
    double x = std::cos(M_PI * k / r);  // k-th Chebyshev-Lobatto guess
    for (int it = 0; it < 100; ++it) {
      double p, dp;
      legendre(r, x, p, dp);
      // f = P_r', f' = P_r'' from (1-x^2)P'' = 2xP' - r(r+1)P
      const double ddp = (2.0 * x * dp - r * (r + 1.0) * p) / (1.0 - x * x);
      const double dx = dp / ddp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    pts[n - 1 - k] = 0.5 * (x + 1.0);
  }
  return pts;
}

Basis::Basis(int degree) : r_(degree) {
  if (degree < 1) throw std::invalid_argument("basis degree must be >= 1");
  nodes_ = gauss_lobatto_points(degree);
  const int n = n1d();
  bary_.assign(n, 1.0);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      if (k != j) bary_[j] /= (nodes_[j] - nodes_[k]);
    }
  }
  quad_ = gauss_legendre(degree + 2);  // exact to degree 2r+3
  V_ = interp_matrix(quad_.points, false);
  D_ = interp_matrix(quad_.points, true);
}

double Basis::lagrange(int j, double x) const {
  const int n = n1d();
  // Exact hit on a node short-circuits the barycentric form.
  for (int k = 0; k < n; ++k) {
    if (x == nodes_[k]) return k == j ? 1.0 : 0.0;
  }
  double num = bary_[j] / (x - nodes_[j]);
  double den = 0.0;
  for (int k = 0; k < n; ++k) den += bary_[k] / (x - nodes_[k]);
  return num / den;
}

double Basis::lagrange_deriv(int j, double x) const {
  const int n = n1d();
  // At a node, use the classical differentiation-matrix entries.
  for (int i = 0; i < n; ++i) {
    if (x == nodes_[i]) {
      if (i == j) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) {
          if (k != j) s += 1.0 / (nodes_[j] - nodes_[k]);
        }
        return s;
      }
      return bary_[j] / (bary_[i] * (nodes_[i] - nodes_[j]));
    }
  }
  // Elsewhere, differentiate the barycentric quotient directly.
  double den = 0.0, dden = 0.0;
  for (int k = 0; k < n; ++k) {
    const double t = bary_[k] / (x - nodes_[k]);
    den += t;
    dden -= t / (x - nodes_[k]);
  }
  const double numj = bary_[j] / (x - nodes_[j]);
  const double dnumj = -numj / (x - nodes_[j]);
  return (dnumj * den - numj * dden) / (den * den);
}

Eigen::MatrixXd Basis::interp_matrix(const std::vector<double>& pts, bool deriv) const {
  Eigen::MatrixXd m(pts.size(), n1d());
  for (std::size_t q = 0; q < pts.size(); ++q) {
    for (int j = 0; j < n1d(); ++j) {
      m(static_cast<int>(q), j) = deriv ? lagrange_deriv(j, pts[q]) : lagrange(j, pts[q]);
    }
  }
  return m;
}

double Basis::eval2d(const double* nodal, double xi, double eta) const {
  const int n = n1d();
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    const double lj = lagrange(j, eta);
    if (lj == 0.0) continue;
    double row = 0.0;
    for (int i = 0; i < n; ++i) row += nodal[j * n + i] * lagrange(i, xi);
    acc += lj * row;
  }
  return acc;
}

void Basis::eval2d_grad(const double* nodal, double xi, double eta,
                        double& dxi, double& deta) const {
  const int n = n1d();
  dxi = 0.0;
  deta = 0.0;
  for (int j = 0; j < n; ++j) {
    const double lj = lagrange(j, eta);
    const double dlj = lagrange_deriv(j, eta);
    double row = 0.0, drow = 0.0;
    for (int i = 0; i < n; ++i) {
      row += nodal[j * n + i] * lagrange(i, xi);
      drow += nodal[j * n + i] * lagrange_deriv(i, xi);
    }
    dxi += lj * drow;
    deta += dlj * row;
  }
}

} // namespace atmdg
