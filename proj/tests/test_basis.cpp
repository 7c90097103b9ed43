#include <cmath>

#include "atmdg/basis.hpp"
#include "doctest.h"

using namespace atmdg;

TEST_CASE("gauss-lobatto nodes match known values") {
  // r=1: endpoints; r=2: midpoint; r=3: 0.5 +- sqrt(5)/10 on [0,1].
  auto n1 = gauss_lobatto_points(1);
  CHECK(n1[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(n1[1] == doctest::Approx(1.0).epsilon(1e-15));

  auto n2 = gauss_lobatto_points(2);
  CHECK(n2[1] == doctest::Approx(0.5).epsilon(1e-14));

  auto n3 = gauss_lobatto_points(3);
  const double ref = 0.5 - std::sqrt(5.0) / 10.0;
  CHECK(n3[1] == doctest::Approx(ref).epsilon(1e-13));
  CHECK(n3[2] == doctest::Approx(1.0 - ref).epsilon(1e-13));
}

TEST_CASE("gauss quadrature is exact to degree 2n-1") {
  for (int n = 2; n <= 7; ++n) {
    auto q = gauss_legendre(n);
    for (int deg = 0; deg <= 2 * n - 1; ++deg) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += q.weights[k] * std::pow(q.points[k], deg);
      CHECK(s == doctest::Approx(1.0 / (deg + 1)).epsilon(1e-13));
    }
  }
}

TEST_CASE("lagrange property L_i(x_j) = delta_ij") {
  for (int r : {1, 2, 3, 4, 5}) {
    Basis b(r);
    for (int i = 0; i <= r; ++i) {
      for (int j = 0; j <= r; ++j) {
        const double v = b.lagrange(i, b.nodes()[j]);
        CHECK(std::abs(v - (i == j ? 1.0 : 0.0)) < 1e-13);
      }
    }
  }
}

TEST_CASE("derivative matrices differentiate polynomials exactly") {
  Basis b(4);
  // nodal values of f = x^3, derivative 3x^2 at quadrature points
  std::vector<double> f(b.n1d());
  for (int i = 0; i < b.n1d(); ++i) f[i] = std::pow(b.nodes()[i], 3);
  for (int q = 0; q < b.nq1(); ++q) {
    double df = 0;
    for (int j = 0; j < b.n1d(); ++j) df += b.D()(q, j) * f[j];
    CHECK(df == doctest::Approx(3.0 * std::pow(b.quad().points[q], 2)).epsilon(1e-12));
  }
}

TEST_CASE("2d evaluation and gradient of a tensor polynomial") {
  Basis b(3);
  const int n = b.n1d();
  std::vector<double> f(b.npc());
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = b.nodes()[i], y = b.nodes()[j];
      f[j * n + i] = x * x * y + 2.0 * y * y;
    }
  }
  const double x = 0.3, y = 0.7;
  CHECK(b.eval2d(f.data(), x, y) == doctest::Approx(x * x * y + 2 * y * y).epsilon(1e-13));
  double dx, dy;
  b.eval2d_grad(f.data(), x, y, dx, dy);
  CHECK(dx == doctest::Approx(2 * x * y).epsilon(1e-12));
  CHECK(dy == doctest::Approx(x * x + 4 * y).epsilon(1e-12));
}
