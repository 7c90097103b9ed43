#ifndef ATMDG_BASIS_HPP
#define ATMDG_BASIS_HPP

#include <Eigen/Dense>
#include <vector>

namespace atmdg {

/// 1D quadrature rule on [0,1].
struct Quadrature1D {
  std::vector<double> points;
  std::vector<double> weights;
  int size() const { return static_cast<int>(points.size()); }
};

/// Gauss-Legendre rule with n points on [0,1]; exact for degree 2n-1.
Quadrature1D gauss_legendre(int n);

/// Gauss-Lobatto points (r+1 of them) on [0,1], endpoints included.
std::vector<double> gauss_lobatto_points(int r);

/// Nodal tensor-product Lagrange basis of degree r on the reference square
/// [0,1]^2, with support points at the (r+1)-point Gauss-Lobatto nodes.
/// All 2D objects use lexicographic node numbering: node (i,j) -> j*(r+1)+i,
/// i along xi (first coordinate), j along eta.
class Basis {
public:
  explicit Basis(int degree);

  int degree() const { return r_; }
  int n1d() const { return r_ + 1; }                 // nodes per direction
  int npc() const { return (r_ + 1) * (r_ + 1); }    // nodes per cell
  int nq1() const { return quad_.size(); }           // volume quad pts per direction
  int nq() const { return nq1() * nq1(); }

  const std::vector<double>& nodes() const { return nodes_; }
  const Quadrature1D& quad() const { return quad_; }       // volume rule, r+2 pts
  const Quadrature1D& face_quad() const { return quad_; }  // same rule on faces

  /// Value of 1D Lagrange polynomial j at x (barycentric form).
  double lagrange(int j, double x) const;
  /// Derivative of 1D Lagrange polynomial j at x.
  double lagrange_deriv(int j, double x) const;

  /// Values of all 1D basis functions at the volume quadrature points,
  /// V(q, j) = L_j(x_q). D is the same for derivatives.
  const Eigen::MatrixXd& V() const { return V_; }
  const Eigen::MatrixXd& D() const { return D_; }

  /// Interpolation matrix from the nodal values to arbitrary points:
  /// M(q, j) = L_j(p_q). deriv=true gives L_j'(p_q).
  Eigen::MatrixXd interp_matrix(const std::vector<double>& pts, bool deriv = false) const;

  /// Evaluates a 2D nodal field (npc values) at reference point (xi, eta).
  double eval2d(const double* nodal, double xi, double eta) const;
  /// Reference-space gradient of a 2D nodal field at (xi, eta).
  void eval2d_grad(const double* nodal, double xi, double eta,
                   double& dxi, double& deta) const;

private:
  int r_;
  std::vector<double> nodes_;
  std::vector<double> bary_;  // barycentric weights
  Quadrature1D quad_;
  Eigen::MatrixXd V_, D_;
};

} // namespace atmdg

#endif
