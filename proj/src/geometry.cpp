#include "atmdg/geometry.hpp"

#include <bit>
#include <cmath>

#include "atmdg/threading.hpp"

namespace atmdg {

GeometryCache::GeometryCache(const Mesh& mesh, const Basis& basis)
    : mesh_(&mesh), basis_(&basis), map_basis_(mesh.map_degree()) {
  build();
}

void GeometryCache::side_slice(int side, int n1d, int& offset, int& stride) {
  switch (side) {
    case 0: offset = 0; stride = n1d; break;
    case 1: offset = n1d - 1; stride = n1d; break;
    case 2: offset = 0; stride = 1; break;
    default: offset = (n1d - 1) * n1d; stride = 1; break;
  }
}

const Eigen::MatrixXd& GeometryCache::trace_matrix(double a, double b) const {
  const std::pair<std::int64_t, std::int64_t> key{std::bit_cast<std::int64_t>(a),
                                                  std::bit_cast<std::int64_t>(b)};
  auto it = trace_cache_.find(key);
  if (it == trace_cache_.end()) {
    const auto& tq = basis_->face_quad();
    std::vector<double> pts(tq.size());
    for (int q = 0; q < tq.size(); ++q) pts[q] = a + b * tq.points[q];
    it = trace_cache_.emplace(key, basis_->interp_matrix(pts)).first;
  }
  return it->second;
}

void GeometryCache::trace_scalar(const Face& f, bool plus, const double* nodal,
                                 double* out) const {
  const double a = plus ? f.a_plus : f.a_minus;
  const double b = plus ? f.b_plus : f.b_minus;
  const int side = plus ? f.plus_side : f.minus_side;
  const Eigen::MatrixXd& T = trace_matrix(a, b);
  int off, stride;
  side_slice(side, basis_->n1d(), off, stride);
  const int n = basis_->n1d();
  for (int q = 0; q < nq1(); ++q) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += T(q, j) * nodal[off + j * stride];
    out[q] = acc;
  }
}

void GeometryCache::scatter_scalar(const Face& f, bool plus, const double* contrib,
                                   double* nodal) const {
  const double a = plus ? f.a_plus : f.a_minus;
  const double b = plus ? f.b_plus : f.b_minus;
  const int side = plus ? f.plus_side : f.minus_side;
  const Eigen::MatrixXd& T = trace_matrix(a, b);
  int off, stride;
  side_slice(side, basis_->n1d(), off, stride);
  const int n = basis_->n1d();
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int q = 0; q < nq1(); ++q) acc += T(q, j) * contrib[q];
    nodal[off + j * stride] += acc;
  }
}

void GeometryCache::build() {
  const Mesh& m = *mesh_;
  const Basis& b = *basis_;
  const int nc = m.n_active();
  const int q1 = b.nq1();
  const int nqv = b.nq();
  const int m1 = map_basis_.n1d();

  // Map-basis values/derivatives at the solution quadrature points and nodes.
  const Eigen::MatrixXd Vm = map_basis_.interp_matrix(b.quad().points, false);
  const Eigen::MatrixXd Dm = map_basis_.interp_matrix(b.quad().points, true);
  std::vector<double> node_pts(b.nodes());
  const Eigen::MatrixXd Vn = map_basis_.interp_matrix(node_pts, false);

  vol_.assign(std::size_t(nc) * 6 * nqv, 0.0);
  nodes_x_.assign(std::size_t(nc) * b.npc(), 0.0);
  nodes_z_.assign(std::size_t(nc) * b.npc(), 0.0);
  quad_x_.assign(std::size_t(nc) * nqv, 0.0);
  quad_z_.assign(std::size_t(nc) * nqv, 0.0);
  affine_.assign(nc, 0);
  volumes_.assign(nc, 0.0);

  threading::parallel_for(nc, [&](std::size_t c) {
    const Eigen::Map<const Eigen::MatrixXd> Gx(m.geo_x(int(c)).data(), m1, m1);
    const Eigen::Map<const Eigen::MatrixXd> Gz(m.geo_z(int(c)).data(), m1, m1);
    const Eigen::MatrixXd X = Vm * Gx * Vm.transpose();    // positions
    const Eigen::MatrixXd Z = Vm * Gz * Vm.transpose();
    const Eigen::MatrixXd Xxi = Dm * Gx * Vm.transpose();  // d/dxi
    const Eigen::MatrixXd Xeta = Vm * Gx * Dm.transpose();
    const Eigen::MatrixXd Zxi = Dm * Gz * Vm.transpose();
    const Eigen::MatrixXd Zeta = Vm * Gz * Dm.transpose();

    double* out = vol_.data() + c * 6 * nqv;
    double volume = 0.0;
    double det0 = 0.0;
    bool affine = true;
    for (int qj = 0; qj < q1; ++qj) {
      for (int qi = 0; qi < q1; ++qi) {
        const int q = qj * q1 + qi;
        const double xx = Xxi(qi, qj), xe = Xeta(qi, qj);
        const double zx = Zxi(qi, qj), ze = Zeta(qi, qj);
        const double det = xx * ze - xe * zx;
        if (det <= 0.0) throw MeshError("non-positive Jacobian in geometry cache");
        const double w = b.quad().weights[qi] * b.quad().weights[qj];
        out[6 * q + 0] = ze;    // adj_xx
        out[6 * q + 1] = -xe;   // adj_xz
        out[6 * q + 2] = -zx;   // adj_zx
        out[6 * q + 3] = xx;    // adj_zz
        out[6 * q + 4] = det;
        out[6 * q + 5] = w * det;
        volume += w * det;
        quad_x_[c * nqv + q] = X(qi, qj);
        quad_z_[c * nqv + q] = Z(qi, qj);
        if (q == 0) det0 = det;
        if (std::abs(det - det0) > 1e-12 * std::abs(det0) ||
            std::abs(xe) > 1e-12 * std::abs(det0) + 1e-300 ||
            std::abs(zx) > 1e-12 * std::abs(det0) + 1e-300) {
          // Not axis-aligned-constant; general map.
          affine = false;
        }
      }
    }
    volumes_[c] = volume;
    affine_[c] = affine ? 1 : 0;

    const Eigen::MatrixXd Xn = Vn * Gx * Vn.transpose();
    const Eigen::MatrixXd Zn = Vn * Gz * Vn.transpose();
    const int n1 = b.n1d();
    for (int j = 0; j < n1; ++j) {
      for (int i = 0; i < n1; ++i) {
        nodes_x_[c * b.npc() + j * n1 + i] = Xn(i, j);
        nodes_z_[c * b.npc() + j * n1 + i] = Zn(i, j);
      }
    }
  });

  // Face geometry from the plus side's mapping.
  const auto& faces = m.faces();
  fgeom_.assign(faces.size(), {});
  const auto& tq = b.face_quad();
  threading::parallel_for(faces.size(), [&](std::size_t fi) {
    const Face& f = faces[fi];
    FaceGeom& fg = fgeom_[fi];
    fg.nx.resize(q1);
    fg.nz.resize(q1);
    fg.jxw.resize(q1);
    fg.x.resize(q1);
    fg.z.resize(q1);
    const auto& tcell = m.tree_cell(m.active_tree_id(f.plus_cell));
    // 1D geometry along the side of the plus cell (map-basis slice).
    int off, stride;
    side_slice(f.plus_side, m1, off, stride);
    std::vector<double> ex(m1), ez(m1);
    for (int k = 0; k < m1; ++k) {
      ex[k] = tcell.geo_x[off + k * stride];
      ez[k] = tcell.geo_z[off + k * stride];
    }
    for (int q = 0; q < q1; ++q) {
      const double s = f.a_plus + f.b_plus * tq.points[q];
      double tx = 0.0, tz = 0.0, px = 0.0, pz = 0.0;
      for (int k = 0; k < m1; ++k) {
        const double dl = map_basis_.lagrange_deriv(k, s);
        const double vl = map_basis_.lagrange(k, s);
        tx += dl * ex[k];
        tz += dl * ez[k];
        px += vl * ex[k];
        pz += vl * ez[k];
      }
      // Outward normal: rotate the local-parameter tangent; CCW for sides
      // 0 and 3, CW for 1 and 2 (valid for positively oriented maps).
      double nx, nz;
      if (f.plus_side == 0 || f.plus_side == 3) {
        nx = -tz;
        nz = tx;
      } else {
        nx = tz;
        nz = -tx;
      }
      const double len = std::hypot(nx, nz);
      fg.nx[q] = nx / len;
      fg.nz[q] = nz / len;
      fg.jxw[q] = len * std::abs(f.b_plus) * tq.weights[q];
      fg.x[q] = px;
      fg.z[q] = pz;
    }
  });

  // Pre-populate the trace-operator cache single-threaded so concurrent
  // assembly only ever reads it.
  for (const Face& f : faces) {
    trace_matrix(f.a_plus, f.b_plus);
    if (f.minus_cell >= 0) trace_matrix(f.a_minus, f.b_minus);
  }
}

} // namespace atmdg
