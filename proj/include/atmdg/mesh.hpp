#ifndef ATMDG_MESH_HPP
#define ATMDG_MESH_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "atmdg/common.hpp"

namespace atmdg {

/// Terrain-following map: (x, zeta) -> (x, zeta + h(x) * (1 - zeta/z_top)).
/// The bottom edge follows h, the top edge stays at z_top.
struct TerrainMap {
  std::function<double(double)> h_surface;
  double z_top = 0.0;
  int mapping_degree = 1;
};

enum class BcTag : std::uint8_t { none, wall, damped };

/// Boundary condition per domain side; periodic x is a mesh-level pairing,
/// not a tag (paired faces become interior).
struct BoundarySpec {
  BcTag xmin = BcTag::wall;
  BcTag xmax = BcTag::wall;
  BcTag zmin = BcTag::wall;
  BcTag zmax = BcTag::wall;
};

enum class FaceKind : std::uint8_t { interior, boundary, subface };

/// A mesh face. Quadrature points on the face are parameterized by t in
/// [0,1]; each side sees them at local side parameter s = a + b*t. For
/// subfaces the plus side is always the coarse cell and the points land in
/// the first or second half of its side ("subface_index" 0 or 1).
struct Face {
  FaceKind kind = FaceKind::interior;
  std::int32_t plus_cell = -1;   // active-cell index
  std::int32_t minus_cell = -1;  // active-cell index, -1 on boundary
  std::int8_t plus_side = -1;    // local side 0..3 (xi=0, xi=1, eta=0, eta=1)
  std::int8_t minus_side = -1;
  std::int8_t subface_index = -1;
  BcTag btag = BcTag::none;
  double a_plus = 0.0, b_plus = 1.0;
  double a_minus = 0.0, b_minus = 1.0;
};

/// Hierarchical quadrilateral mesh: a forest of quadtrees over a set of root
/// quads. Cells refine by isotropic quadrisection; neighboring active cells
/// never differ by more than one level (2:1 rule). Cell geometry is a
/// polynomial map of degree map_degree per cell; children inherit the exact
/// restriction of the parent map, so children tile the parent exactly.
class Mesh {
public:
  struct TreeCell {
    std::int32_t parent = -1;
    std::array<std::int32_t, 4> children{-1, -1, -1, -1};
    std::int32_t root = 0;
    std::int16_t level = 0;
    bool active = true;
    double ref_lo[2] = {0.0, 0.0};  // sub-rectangle in root reference coords
    double ref_hi[2] = {1.0, 1.0};
    std::vector<double> geo_x, geo_z;  // (m+1)^2 mapping nodes, lexicographic
  };

  Mesh() = default;

  // --- construction -------------------------------------------------------

  static Mesh cartesian(double x0, double x1, double z0, double z1,
                        int nx, int nz, int map_degree = 1);
  static Mesh read_file(const std::string& path, int map_degree = 1);

  void write_file(const std::string& path) const;

  void set_periodic_x(bool on);
  bool periodic_x() const { return periodic_x_; }
  void set_boundary(const BoundarySpec& bc);
  const BoundarySpec& boundary() const { return bc_; }

  /// Applies the terrain-following map, rebuilding every cell's geometry:
  /// roots interpolate the analytic map, descendants inherit restrictions.
  /// Requires the flat vertical extent to be exactly (0, z_top).
  void apply_terrain(const TerrainMap& terrain);
  const std::optional<TerrainMap>& terrain() const { return terrain_; }
  /// Re-binds the analytic terrain after a checkpoint restore (the geometry
  /// itself is serialized; the analytic profile is needed for locate()).
  void set_terrain_analytic(const TerrainMap& terrain);

  /// Refine (+1), keep (0) or coarsen (-1) active cells, then restore the
  /// 2:1 balance by extra refinement. Coarsen flags apply only when all four
  /// siblings carry them and balance allows; infeasible flags are clamped.
  /// Returns the number of clamped coarsen requests.
  int refine_and_balance(const std::vector<int>& flags);

  // --- queries ------------------------------------------------------------

  std::uint64_t version() const { return version_; }
  int map_degree() const { return map_degree_; }
  int n_active() const { return static_cast<int>(active_.size()); }
  int n_tree() const { return static_cast<int>(tree_.size()); }
  int n_roots() const { return n_roots_; }

  const std::vector<std::int32_t>& active_cells() const { return active_; }
  const TreeCell& tree_cell(int tree_id) const { return tree_[tree_id]; }
  std::int32_t active_tree_id(int active_idx) const { return active_[active_idx]; }
  int active_index_of(int tree_id) const { return active_index_[tree_id]; }
  int cell_level(int active_idx) const { return tree_[active_[active_idx]].level; }

  const std::vector<Face>& faces() const { return faces_; }
  /// (face index, 0 if this cell is the plus side else 1) per active cell.
  const std::vector<std::vector<std::pair<std::int32_t, std::int8_t>>>& cell_faces() const {
    return cell_faces_;
  }

  /// Geometry nodes of an active cell ((m+1)^2 points, lexicographic).
  const std::vector<double>& geo_x(int active_idx) const { return tree_[active_[active_idx]].geo_x; }
  const std::vector<double>& geo_z(int active_idx) const { return tree_[active_[active_idx]].geo_z; }

  /// Physical position of reference point (xi, eta) in an active cell.
  Vec2 map_point(int active_idx, double xi, double eta) const;

  /// Analytic inverse of the global coordinate map for point location:
  /// physical (x, z) -> flat (x, zeta). Identity when no terrain is set.
  Vec2 to_flat(double x, double z) const;

  /// Locates the active cell containing physical point (x, z); returns the
  /// active index and reference coordinates, or -1 if outside the domain.
  int locate(double x, double z, double& xi, double& eta) const;

  double min_edge_length() const;
  double min_diameter() const;
  /// Maximum active-level difference across any face (must be <= 1).
  int max_face_level_diff() const;
  /// Area of an active cell (quadrature of |det J|).
  double cell_area(int active_idx) const;
  /// Unit outward normal of the plus side at face parameter t.
  Vec2 face_unit_normal(const Face& f, double t) const;

  std::array<double, 4> bounding_box() const { return {xmin_, xmax_, zmin_, zmax_}; }

  /// Serialization for checkpoints.
  void save_binary(std::ostream& os) const;
  static Mesh load_binary(std::istream& is);

private:
  struct RootNeighbor {
    std::int32_t root = -1;
    std::int8_t side = -1;
    bool flip = false;
  };

  void init_roots(int map_degree);
  void set_root_geometry(int root);
  void inherit_geometry(int child_id);
  void build_root_connectivity();
  void rebuild_faces();
  void rebuild_active();
  void refine_cell(int tree_id);
  void classify_boundary();
  BcTag boundary_tag_for_root_side(int root, int side) const;

  // Segments along shared lines; used for both balancing and face building.
  struct Segment {
    std::int32_t cell;  // tree id
    std::int8_t side;
    double t0, t1;      // canonical interval along the line
    double alpha, beta; // local side param s = alpha + beta * tau (canonical tau)
  };
  struct LineGroup {
    std::vector<Segment> low, high;  // two sides of the line
  };
  std::vector<LineGroup> collect_line_groups() const;

  std::vector<TreeCell> tree_;
  std::vector<std::int32_t> active_;
  std::vector<std::int32_t> active_index_;  // tree id -> active idx or -1
  std::vector<Face> faces_;
  std::vector<std::vector<std::pair<std::int32_t, std::int8_t>>> cell_faces_;

  std::vector<Vec2> vertices_;
  std::vector<std::array<std::int32_t, 4>> root_verts_;  // v00,v10,v01,v11
  std::vector<std::array<RootNeighbor, 4>> root_neighbors_;
  std::vector<std::array<std::int8_t, 4>> root_side_class_;  // 0..3 = xmin,xmax,zmin,zmax; -1 interior

  int n_roots_ = 0;
  int map_degree_ = 1;
  bool periodic_x_ = false;
  BoundarySpec bc_;
  std::optional<TerrainMap> terrain_;
  double xmin_ = 0, xmax_ = 0, zmin_ = 0, zmax_ = 0;
  std::uint64_t version_ = 0;

  // Cartesian fast path for point location.
  bool is_cartesian_ = false;
  int cart_nx_ = 0, cart_nz_ = 0;
};

/// Versiera di Agnesi hill profile h_m / (1 + ((x-x_c)/a_c)^2).
std::function<double(double)> agnesi_profile(double h_m, double x_c, double a_c);

/// Schaer mountain chain h_m * exp(-(x/a_c)^2) * cos^2(pi x / lambda_c),
/// centered at x_c.
std::function<double(double)> schaer_profile(double h_m, double x_c, double a_c,
                                             double lambda_c);

} // namespace atmdg

#endif
