#ifndef ATMDG_GEOMETRY_HPP
#define ATMDG_GEOMETRY_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "atmdg/basis.hpp"
#include "atmdg/mesh.hpp"

namespace atmdg {

/// Per-mesh-snapshot metric data evaluated at quadrature points, plus cached
/// trace interpolation operators for face integrals (including the half-side
/// operators used on the coarse side of hanging faces).
class GeometryCache {
public:
  GeometryCache(const Mesh& mesh, const Basis& basis);

  const Mesh& mesh() const { return *mesh_; }
  const Basis& basis() const { return *basis_; }
  int n_cells() const { return mesh_->n_active(); }
  int npc() const { return basis_->npc(); }
  int nq1() const { return basis_->nq1(); }
  int nq() const { return basis_->nq(); }

  // --- volume data ---------------------------------------------------------

  /// adj(J) entries at volume quad points; J^{-T} grad_ref = adj^T/det.
  /// Layout per cell: [a_xx, a_xz, a_zx, a_zz, det, wdet] * nq, so stride 6.
  const double* cell_metric(int cell) const { return vol_.data() + std::size_t(cell) * 6 * nq(); }
  /// w * detJ only, stride 1.
  double wdet(int cell, int q) const { return cell_metric(cell)[6 * q + 5]; }

  /// Physical coordinates of the solution nodes (npc per cell).
  const double* node_x(int cell) const { return nodes_x_.data() + std::size_t(cell) * npc(); }
  const double* node_z(int cell) const { return nodes_z_.data() + std::size_t(cell) * npc(); }

  /// Physical coordinates of the volume quadrature points (nq per cell).
  const double* quad_x(int cell) const { return quad_x_.data() + std::size_t(cell) * nq(); }
  const double* quad_z(int cell) const { return quad_z_.data() + std::size_t(cell) * nq(); }

  /// True when the cell map is affine (constant metric), e.g. any Cartesian
  /// cell; enables shared reference mass matrices.
  bool cell_affine(int cell) const { return affine_[cell] != 0; }

  double cell_volume(int cell) const { return volumes_[cell]; }

  // --- face data -----------------------------------------------------------

  struct FaceGeom {
    // Per face-quadrature point: unit normal (outward from plus side),
    // measure JxW, and physical position.
    std::vector<double> nx, nz, jxw, x, z;
  };
  const FaceGeom& face_geom(int face) const { return fgeom_[face]; }

  /// Trace interpolation matrix (nq1 x n1d) for side parameter map s = a+b*t.
  const Eigen::MatrixXd& trace_matrix(double a, double b) const;

  /// Nodal indices of a cell side: node k of the side is nodal[offset+k*stride].
  static void side_slice(int side, int n1d, int& offset, int& stride);

  /// Evaluates a nodal scalar field's trace on one side of a face.
  /// `nodal` points at the cell's npc values; out has nq1 entries.
  void trace_scalar(const Face& f, bool plus, const double* nodal, double* out) const;
  /// Adjoint of trace_scalar: nodal[slice] += T^T * contrib.
  void scatter_scalar(const Face& f, bool plus, const double* contrib, double* nodal) const;

private:
  void build();

  const Mesh* mesh_;
  const Basis* basis_;
  Basis map_basis_;

  std::vector<double> vol_;        // 6 * nq per cell
  std::vector<double> nodes_x_, nodes_z_;
  std::vector<double> quad_x_, quad_z_;
  std::vector<std::uint8_t> affine_;
  std::vector<double> volumes_;
  std::vector<FaceGeom> fgeom_;

  mutable std::map<std::pair<std::int64_t, std::int64_t>, Eigen::MatrixXd> trace_cache_;
};

} // namespace atmdg

#endif
