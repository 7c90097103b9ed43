#include "atmdg/mesh.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "atmdg/basis.hpp"

namespace atmdg {

namespace {

std::atomic<std::uint64_t> g_mesh_version{1};

const Basis& basis_for(int degree) {
  static std::map<int, std::unique_ptr<Basis>> cache;
  auto it = cache.find(degree);
  if (it == cache.end()) {
    it = cache.emplace(degree, std::make_unique<Basis>(degree)).first;
  }
  return *it->second;
}

// Reference outward normals per side (xi=0, xi=1, eta=0, eta=1).
constexpr double kRefNormal[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};

// Fixed-point key for dyadic reference coordinates (exact for level <= 30).
std::int64_t dyadic_key(double v) {
  return static_cast<std::int64_t>(std::llround(v * double(1 << 30)));
}

} // namespace

std::function<double(double)> agnesi_profile(double h_m, double x_c, double a_c) {
  return [=](double x) {
    const double s = (x - x_c) / a_c;
    return h_m / (1.0 + s * s);
  };
}

std::function<double(double)> schaer_profile(double h_m, double x_c, double a_c,
                                             double lambda_c) {
  return [=](double x) {
    const double xr = x - x_c;
    const double c = std::cos(M_PI * xr / lambda_c);
    return h_m * std::exp(-(xr / a_c) * (xr / a_c)) * c * c;
  };
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

Mesh Mesh::cartesian(double x0, double x1, double z0, double z1,
                     int nx, int nz, int map_degree) {
  if (nx < 1 || nz < 1) throw MeshError("cartesian mesh needs nx, nz >= 1");
  if (!(x1 > x0) || !(z1 > z0)) throw MeshError("cartesian mesh range is degenerate");

  Mesh m;
  m.vertices_.resize(std::size_t(nx + 1) * (nz + 1));
  for (int j = 0; j <= nz; ++j) {
    for (int i = 0; i <= nx; ++i) {
      const double x = (i == nx) ? x1 : x0 + (x1 - x0) * i / nx;
      const double z = (j == nz) ? z1 : z0 + (z1 - z0) * j / nz;
      m.vertices_[std::size_t(j) * (nx + 1) + i] = {x, z};
    }
  }
  m.root_verts_.resize(std::size_t(nx) * nz);
  for (int j = 0; j < nz; ++j) {
    for (int i = 0; i < nx; ++i) {
      const auto v = [&](int a, int b) { return std::int32_t((j + b) * (nx + 1) + (i + a)); };
      m.root_verts_[std::size_t(j) * nx + i] = {v(0, 0), v(1, 0), v(0, 1), v(1, 1)};
    }
  }
  m.n_roots_ = nx * nz;
  m.is_cartesian_ = true;
  m.cart_nx_ = nx;
  m.cart_nz_ = nz;
  m.xmin_ = x0;
  m.xmax_ = x1;
  m.zmin_ = z0;
  m.zmax_ = z1;
  m.init_roots(map_degree);
  return m;
}

void Mesh::init_roots(int map_degree) {
  map_degree_ = map_degree;
  tree_.clear();
  tree_.resize(n_roots_);
  for (int r = 0; r < n_roots_; ++r) {
    tree_[r].root = r;
    tree_[r].level = 0;
    tree_[r].active = true;
    set_root_geometry(r);
  }
  build_root_connectivity();
  classify_boundary();
  rebuild_active();
  rebuild_faces();
  version_ = g_mesh_version.fetch_add(1);
}

void Mesh::set_root_geometry(int root) {
  const auto& n = basis_for(map_degree_).nodes();
  const int m1 = map_degree_ + 1;
  auto& tc = tree_[root];
  tc.geo_x.resize(std::size_t(m1) * m1);
  tc.geo_z.resize(std::size_t(m1) * m1);
  const Vec2 v00 = vertices_[root_verts_[root][0]];
  const Vec2 v10 = vertices_[root_verts_[root][1]];
  const Vec2 v01 = vertices_[root_verts_[root][2]];
  const Vec2 v11 = vertices_[root_verts_[root][3]];
  for (int j = 0; j < m1; ++j) {
    for (int i = 0; i < m1; ++i) {
      const double xi = n[i], eta = n[j];
      const double w00 = (1 - xi) * (1 - eta), w10 = xi * (1 - eta);
      const double w01 = (1 - xi) * eta, w11 = xi * eta;
      tc.geo_x[std::size_t(j) * m1 + i] = w00 * v00.x + w10 * v10.x + w01 * v01.x + w11 * v11.x;
      tc.geo_z[std::size_t(j) * m1 + i] = w00 * v00.z + w10 * v10.z + w01 * v01.z + w11 * v11.z;
    }
  }
}

void Mesh::build_root_connectivity() {
  root_neighbors_.assign(n_roots_, {});
  // Side start/end vertices, in increasing side-parameter order.
  static constexpr int kSideVerts[4][2] = {{0, 2}, {1, 3}, {0, 1}, {2, 3}};
  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<std::tuple<int, int, std::int32_t>>> edges;
  for (int r = 0; r < n_roots_; ++r) {
    for (int s = 0; s < 4; ++s) {
      const std::int32_t a = root_verts_[r][kSideVerts[s][0]];
      const std::int32_t b = root_verts_[r][kSideVerts[s][1]];
      edges[{std::min(a, b), std::max(a, b)}].push_back({r, s, a});
    }
  }
  for (const auto& [key, lst] : edges) {
    if (lst.size() > 2) throw MeshError("non-manifold edge in mesh");
    if (lst.size() == 2) {
      const auto [r0, s0, a0] = lst[0];
      const auto [r1, s1, a1] = lst[1];
      const bool flip = (a0 != a1);
      root_neighbors_[r0][s0] = {std::int32_t(r1), std::int8_t(s1), flip};
      root_neighbors_[r1][s1] = {std::int32_t(r0), std::int8_t(s0), flip};
    }
  }
}

void Mesh::classify_boundary() {
  root_side_class_.assign(n_roots_, {std::int8_t(-1), std::int8_t(-1), std::int8_t(-1), std::int8_t(-1)});
  xmin_ = zmin_ = 1e300;
  xmax_ = zmax_ = -1e300;
  for (const auto& v : vertices_) {
    xmin_ = std::min(xmin_, v.x);
    xmax_ = std::max(xmax_, v.x);
    zmin_ = std::min(zmin_, v.z);
    zmax_ = std::max(zmax_, v.z);
  }
  const double tolx = 1e-9 * (xmax_ - xmin_);
  const double tolz = 1e-9 * (zmax_ - zmin_);
  static constexpr int kSideVerts[4][2] = {{0, 2}, {1, 3}, {0, 1}, {2, 3}};
  for (int r = 0; r < n_roots_; ++r) {
    for (int s = 0; s < 4; ++s) {
      if (root_neighbors_[r][s].root >= 0) continue;
      const Vec2 a = vertices_[root_verts_[r][kSideVerts[s][0]]];
      const Vec2 b = vertices_[root_verts_[r][kSideVerts[s][1]]];
      std::int8_t cls = -1;
      if (std::abs(a.x - xmin_) < tolx && std::abs(b.x - xmin_) < tolx) cls = 0;
      else if (std::abs(a.x - xmax_) < tolx && std::abs(b.x - xmax_) < tolx) cls = 1;
      else if (std::abs(a.z - zmin_) < tolz && std::abs(b.z - zmin_) < tolz) cls = 2;
      else if (std::abs(a.z - zmax_) < tolz && std::abs(b.z - zmax_) < tolz) cls = 3;
      root_side_class_[r][s] = cls;
    }
  }
}

BcTag Mesh::boundary_tag_for_root_side(int root, int side) const {
  switch (root_side_class_[root][side]) {
    case 0: return bc_.xmin;
    case 1: return bc_.xmax;
    case 2: return bc_.zmin;
    case 3: return bc_.zmax;
    default: return BcTag::wall;
  }
}

void Mesh::set_periodic_x(bool on) {
  if (on == periodic_x_) return;
  periodic_x_ = on;
  if (on) {
    // Pair xmin/xmax boundary root sides by vertical midpoint.
    static constexpr int kSideVerts[4][2] = {{0, 2}, {1, 3}, {0, 1}, {2, 3}};
    std::vector<std::tuple<double, int, int>> lo, hi;  // (z mid, root, side)
    for (int r = 0; r < n_roots_; ++r) {
      for (int s = 0; s < 4; ++s) {
        if (root_neighbors_[r][s].root >= 0) continue;
        const int cls = root_side_class_[r][s];
        if (cls != 0 && cls != 1) continue;
        const Vec2 a = vertices_[root_verts_[r][kSideVerts[s][0]]];
        const Vec2 b = vertices_[root_verts_[r][kSideVerts[s][1]]];
        (cls == 0 ? lo : hi).push_back({0.5 * (a.z + b.z), r, s});
      }
    }
    if (lo.size() != hi.size() || lo.empty()) {
      throw MeshError("periodic_x: xmin/xmax boundary faces do not match");
    }
    std::sort(lo.begin(), lo.end());
    std::sort(hi.begin(), hi.end());
    for (std::size_t k = 0; k < lo.size(); ++k) {
      const auto [zl, rl, sl] = lo[k];
      const auto [zh, rh, sh] = hi[k];
      if (std::abs(zl - zh) > 1e-6 * (zmax_ - zmin_) + 1e-30) {
        throw MeshError("periodic_x: boundary faces are not aligned");
      }
      const Vec2 a0 = vertices_[root_verts_[rl][kSideVerts[sl][0]]];
      const Vec2 a1 = vertices_[root_verts_[rl][kSideVerts[sl][1]]];
      const Vec2 b0 = vertices_[root_verts_[rh][kSideVerts[sh][0]]];
      const Vec2 b1 = vertices_[root_verts_[rh][kSideVerts[sh][1]]];
      const bool flip = ((a1.z - a0.z) > 0) != ((b1.z - b0.z) > 0);
      root_neighbors_[rl][sl] = {std::int32_t(rh), std::int8_t(sh), flip};
      root_neighbors_[rh][sh] = {std::int32_t(rl), std::int8_t(sl), flip};
    }
  } else {
    build_root_connectivity();
  }
  rebuild_faces();
  version_ = g_mesh_version.fetch_add(1);
}

void Mesh::set_boundary(const BoundarySpec& bc) {
  bc_ = bc;
  rebuild_faces();
  version_ = g_mesh_version.fetch_add(1);
}

// ---------------------------------------------------------------------------
// terrain
// ---------------------------------------------------------------------------

void Mesh::apply_terrain(const TerrainMap& terrain) {
  const double zt = terrain.z_top;
  if (std::abs(zmin_) > 1e-9 * zt || std::abs(zmax_ - zt) > 1e-9 * zt) {
    throw MeshError("terrain map requires flat vertical extent (0, z_top)");
  }
  map_degree_ = terrain.mapping_degree;
  const auto& bs = basis_for(map_degree_);
  const auto& n = bs.nodes();
  const int m1 = map_degree_ + 1;

  // Roots interpolate the analytic map at their mapping nodes.
  for (int r = 0; r < n_roots_; ++r) {
    auto& tc = tree_[r];
    tc.geo_x.assign(std::size_t(m1) * m1, 0.0);
    tc.geo_z.assign(std::size_t(m1) * m1, 0.0);
    const Vec2 v00 = vertices_[root_verts_[r][0]];
    const Vec2 v10 = vertices_[root_verts_[r][1]];
    const Vec2 v01 = vertices_[root_verts_[r][2]];
    const Vec2 v11 = vertices_[root_verts_[r][3]];
    for (int j = 0; j < m1; ++j) {
      for (int i = 0; i < m1; ++i) {
        const double xi = n[i], eta = n[j];
        const double w00 = (1 - xi) * (1 - eta), w10 = xi * (1 - eta);
        const double w01 = (1 - xi) * eta, w11 = xi * eta;
        const double x = w00 * v00.x + w10 * v10.x + w01 * v01.x + w11 * v11.x;
        const double zeta = w00 * v00.z + w10 * v10.z + w01 * v01.z + w11 * v11.z;
        const double h = terrain.h_surface(x);
        if (h >= zt) throw MeshError("terrain height reaches the domain top");
        tc.geo_x[std::size_t(j) * m1 + i] = x;
        tc.geo_z[std::size_t(j) * m1 + i] = zeta + h * (1.0 - zeta / zt);
      }
    }
  }
  // Descendants inherit exact restrictions (keeps child/parent geometry and
  // shared faces consistent to machine precision).
  for (int t = n_roots_; t < n_tree(); ++t) inherit_geometry(t);

  terrain_ = terrain;
  version_ = g_mesh_version.fetch_add(1);

  // Jacobian positivity on all active cells.
  const Quadrature1D q = gauss_legendre(map_degree_ + 2);
  for (int a = 0; a < n_active(); ++a) {
    const auto& tc = tree_[active_[a]];
    for (int jq = 0; jq < q.size(); ++jq) {
      for (int iq = 0; iq < q.size(); ++iq) {
        double xx, xz, zx, zz;
        bs.eval2d_grad(tc.geo_x.data(), q.points[iq], q.points[jq], xx, xz);
        bs.eval2d_grad(tc.geo_z.data(), q.points[iq], q.points[jq], zx, zz);
        if (xx * zz - xz * zx <= 0.0) {
          throw MeshError("terrain mapping produced non-positive Jacobian");
        }
      }
    }
  }
}

void Mesh::inherit_geometry(int child_id) {
  auto& child = tree_[child_id];
  const auto& parent = tree_[child.parent];
  const auto& bs = basis_for(map_degree_);
  const auto& n = bs.nodes();
  const int m1 = map_degree_ + 1;
  child.geo_x.resize(std::size_t(m1) * m1);
  child.geo_z.resize(std::size_t(m1) * m1);
  // Which quadrant of the parent this child occupies (exact dyadics).
  const double qx = (child.ref_lo[0] == parent.ref_lo[0]) ? 0.0 : 1.0;
  const double qz = (child.ref_lo[1] == parent.ref_lo[1]) ? 0.0 : 1.0;
  for (int j = 0; j < m1; ++j) {
    for (int i = 0; i < m1; ++i) {
      const double xi = 0.5 * (qx + n[i]);
      const double eta = 0.5 * (qz + n[j]);
      child.geo_x[std::size_t(j) * m1 + i] = bs.eval2d(parent.geo_x.data(), xi, eta);
      child.geo_z[std::size_t(j) * m1 + i] = bs.eval2d(parent.geo_z.data(), xi, eta);
    }
  }
}

// ---------------------------------------------------------------------------
// adaptation
// ---------------------------------------------------------------------------

void Mesh::refine_cell(int tree_id) {
  auto& tc = tree_[tree_id];
  assert(tc.active);
  if (tc.children[0] < 0) {
    const double mx = 0.5 * (tc.ref_lo[0] + tc.ref_hi[0]);
    const double mz = 0.5 * (tc.ref_lo[1] + tc.ref_hi[1]);
    for (int q = 0; q < 4; ++q) {
      TreeCell child;
      child.parent = tree_id;
      child.root = tc.root;
      child.level = tc.level + 1;
      const bool hx = q & 1, hz = q & 2;
      child.ref_lo[0] = hx ? mx : tc.ref_lo[0];
      child.ref_hi[0] = hx ? tc.ref_hi[0] : mx;
      child.ref_lo[1] = hz ? mz : tc.ref_lo[1];
      child.ref_hi[1] = hz ? tc.ref_hi[1] : mz;
      child.active = false;
      const int id = n_tree();
      tree_.push_back(std::move(child));
      tree_[tree_id].children[q] = id;
      inherit_geometry(id);
    }
  }
  auto& tc2 = tree_[tree_id];
  tc2.active = false;
  for (int q = 0; q < 4; ++q) tree_[tc2.children[q]].active = true;
}

int Mesh::refine_and_balance(const std::vector<int>& flags) {
  if (flags.size() != active_.size()) {
    throw MeshError("refine flags size does not match active cell count");
  }
  int clamped = 0;

  // Coarsen candidates: full sibling groups, all flagged, parent exists.
  std::vector<std::int32_t> coarsen_parents;
  {
    std::map<std::int32_t, int> votes;
    for (std::size_t a = 0; a < flags.size(); ++a) {
      if (flags[a] != -1) continue;
      const auto& tc = tree_[active_[a]];
      if (tc.parent < 0) {
        ++clamped;
        continue;
      }
      ++votes[tc.parent];
    }
    for (const auto& [parent, count] : votes) {
      bool ok = (count == 4);
      if (ok) {
        for (int q = 0; q < 4; ++q) {
          const int c = tree_[parent].children[q];
          if (c < 0 || !tree_[c].active) ok = false;
        }
      }
      if (ok) coarsen_parents.push_back(parent);
      else clamped += count;
    }
  }

  // Refinements first.
  std::vector<std::int32_t> to_refine;
  for (std::size_t a = 0; a < flags.size(); ++a) {
    if (flags[a] == 1) to_refine.push_back(active_[a]);
  }
  for (int id : to_refine) refine_cell(id);
  rebuild_active();

  // Enforce 2:1 by refining the coarser neighbor until stable.
  for (;;) {
    auto groups = collect_line_groups();
    std::vector<std::int32_t> fix;
    for (const auto& g : groups) {
      for (const auto& sl : g.low) {
        for (const auto& sh : g.high) {
          if (std::min(sl.t1, sh.t1) - std::max(sl.t0, sh.t0) <= 0) continue;
          const int dl = tree_[sl.cell].level, dh = tree_[sh.cell].level;
          if (dl - dh > 1) fix.push_back(sh.cell);
          if (dh - dl > 1) fix.push_back(sl.cell);
        }
      }
    }
    if (fix.empty()) break;
    std::sort(fix.begin(), fix.end());
    fix.erase(std::unique(fix.begin(), fix.end()), fix.end());
    for (int id : fix) {
      if (tree_[id].active) refine_cell(id);
    }
    rebuild_active();
  }

  // Coarsening, clamped by 2:1 against post-refinement neighbor levels.
  if (!coarsen_parents.empty()) {
    // Max neighbor level per active cell.
    std::vector<int> max_nbr(tree_.size(), -1);
    auto groups = collect_line_groups();
    for (const auto& g : groups) {
      for (const auto& sl : g.low) {
        for (const auto& sh : g.high) {
          if (std::min(sl.t1, sh.t1) - std::max(sl.t0, sh.t0) <= 0) continue;
          max_nbr[sl.cell] = std::max(max_nbr[sl.cell], int(tree_[sh.cell].level));
          max_nbr[sh.cell] = std::max(max_nbr[sh.cell], int(tree_[sl.cell].level));
        }
      }
    }
    for (int parent : coarsen_parents) {
      bool ok = true;
      for (int q = 0; q < 4 && ok; ++q) {
        const int c = tree_[parent].children[q];
        if (c < 0 || !tree_[c].active) ok = false;   // refined meanwhile
        else if (max_nbr[c] > tree_[c].level) ok = false;  // finer neighbor
      }
      if (!ok) {
        clamped += 4;
        continue;
      }
      for (int q = 0; q < 4; ++q) tree_[tree_[parent].children[q]].active = false;
      tree_[parent].active = true;
    }
    rebuild_active();
  }

  rebuild_faces();
  version_ = g_mesh_version.fetch_add(1);
  return clamped;
}

void Mesh::rebuild_active() {
  active_.clear();
  active_index_.assign(tree_.size(), -1);
  // Canonical order: depth-first from roots, children in quadrant order.
  std::vector<std::int32_t> stack;
  for (int r = n_roots_ - 1; r >= 0; --r) stack.push_back(r);
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const auto& tc = tree_[id];
    if (tc.active) {
      active_index_[id] = static_cast<int>(active_.size());
      active_.push_back(id);
    } else if (tc.children[0] >= 0 && !tc.active) {
      for (int q = 3; q >= 0; --q) {
        if (tree_[tc.children[q]].active || tree_[tc.children[q]].children[0] >= 0) {
          stack.push_back(tc.children[q]);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// line groups and faces
// ---------------------------------------------------------------------------

std::vector<Mesh::LineGroup> Mesh::collect_line_groups() const {
  std::map<std::tuple<std::int32_t, std::int32_t, std::int64_t>, int> keys;
  std::vector<LineGroup> groups;

  auto group_for = [&](std::int32_t k0, std::int32_t k1, std::int64_t k2) -> LineGroup& {
    auto it = keys.find({k0, k1, k2});
    if (it == keys.end()) {
      it = keys.emplace(std::make_tuple(k0, k1, k2), int(groups.size())).first;
      groups.emplace_back();
    }
    return groups[it->second];
  };

  for (int a = 0; a < n_active(); ++a) {
    const int id = active_[a];
    const auto& tc = tree_[id];
    for (int s = 0; s < 4; ++s) {
      const int axis = (s < 2) ? 0 : 1;      // direction of the face normal
      const int paxis = 1 - axis;            // direction of the side parameter
      const double coord = (s == 0 || s == 2) ? tc.ref_lo[axis] : tc.ref_hi[axis];
      const bool on_root_side = (coord == 0.0) || (coord == 1.0);
      const double lo = tc.ref_lo[paxis], hi = tc.ref_hi[paxis];

      if (!on_root_side) {
        LineGroup& g = group_for(tc.root, axis, dyadic_key(coord));
        // "low" side of the line: cells below it (their high side touches it).
        const bool is_low = (s == 1 || s == 3);
        Segment seg;
        seg.cell = id;
        seg.side = std::int8_t(s);
        seg.t0 = lo;
        seg.t1 = hi;
        seg.beta = 1.0 / (hi - lo);
        seg.alpha = -lo * seg.beta;
        (is_low ? g.low : g.high).push_back(seg);
        continue;
      }
      // Root boundary: either paired with a neighboring root or true boundary.
      const int rside = s;
      const auto& nb = root_neighbors_[tc.root][rside];
      if (nb.root < 0) continue;  // boundary faces handled in rebuild_faces

      const bool canonical = std::make_pair(int(tc.root), rside) <=
                             std::make_pair(int(nb.root), int(nb.side));
      std::int32_t k0, k1;
      std::int64_t k2;
      if (canonical) {
        k0 = -tc.root - 1;
        k1 = rside;
        k2 = std::int64_t(nb.root) * 4 + nb.side;
      } else {
        k0 = -nb.root - 1;
        k1 = nb.side;
        k2 = std::int64_t(tc.root) * 4 + rside;
      }
      LineGroup& g = group_for(k0, k1, k2);
      Segment seg;
      seg.cell = id;
      seg.side = std::int8_t(s);
      const bool flipped = !canonical && nb.flip;
      if (!flipped) {
        seg.t0 = lo;
        seg.t1 = hi;
        seg.beta = 1.0 / (hi - lo);
        seg.alpha = -lo * seg.beta;
      } else {
        seg.t0 = 1.0 - hi;
        seg.t1 = 1.0 - lo;
        seg.beta = -1.0 / (hi - lo);
        seg.alpha = (1.0 - lo) / (hi - lo);
      }
      (canonical ? g.low : g.high).push_back(seg);
    }
  }
  return groups;
}

void Mesh::rebuild_faces() {
  faces_.clear();
  cell_faces_.assign(active_.size(), {});

  auto add_face = [&](Face f) {
    const int idx = static_cast<int>(faces_.size());
    cell_faces_[f.plus_cell].push_back({idx, 0});
    if (f.minus_cell >= 0) cell_faces_[f.minus_cell].push_back({idx, 1});
    faces_.push_back(f);
  };

  // Interior faces from line groups.
  auto groups = collect_line_groups();
  for (auto& g : groups) {
    auto by_t0 = [](const Segment& a, const Segment& b) { return a.t0 < b.t0; };
    std::sort(g.low.begin(), g.low.end(), by_t0);
    std::sort(g.high.begin(), g.high.end(), by_t0);
    std::size_t i = 0, j = 0;
    while (i < g.low.size() && j < g.high.size()) {
      const Segment& L = g.low[i];
      const Segment& H = g.high[j];
      auto make_side = [&](const Segment& seg, double f0, double f1, double& a, double& b) {
        a = seg.alpha + seg.beta * f0;
        b = seg.beta * (f1 - f0);
      };
      if (L.t0 == H.t0 && L.t1 == H.t1) {
        Face f;
        f.kind = FaceKind::interior;
        const bool l_plus = L.cell <= H.cell;
        const Segment& P = l_plus ? L : H;
        const Segment& M = l_plus ? H : L;
        f.plus_cell = active_index_[P.cell];
        f.plus_side = P.side;
        f.minus_cell = active_index_[M.cell];
        f.minus_side = M.side;
        make_side(P, L.t0, L.t1, f.a_plus, f.b_plus);
        make_side(M, L.t0, L.t1, f.a_minus, f.b_minus);
        add_face(f);
        ++i;
        ++j;
      } else {
        // 2:1 hanging interface: one coarse segment spans two fine ones.
        const bool low_coarse = (L.t1 - L.t0) > (H.t1 - H.t0);
        if (low_coarse ? (j + 1 >= g.high.size()) : (i + 1 >= g.low.size())) {
          throw MeshError("internal: non-conforming interface is not 2:1");
        }
        const Segment& C = low_coarse ? L : H;
        for (int half = 0; half < 2; ++half) {
          const Segment& F = low_coarse ? g.high[j + half] : g.low[i + half];
          if (F.t0 < C.t0 || F.t1 > C.t1) {
            throw MeshError("internal: non-conforming interface is not 2:1");
          }
          Face f;
          f.kind = FaceKind::subface;
          f.plus_cell = active_index_[C.cell];
          f.plus_side = C.side;
          f.minus_cell = active_index_[F.cell];
          f.minus_side = F.side;
          make_side(C, F.t0, F.t1, f.a_plus, f.b_plus);
          make_side(F, F.t0, F.t1, f.a_minus, f.b_minus);
          const double smid = f.a_plus + 0.5 * f.b_plus;
          f.subface_index = smid < 0.5 ? 0 : 1;
          add_face(f);
        }
        i += low_coarse ? 1 : 2;
        j += low_coarse ? 2 : 1;
      }
    }
    if (i != g.low.size() || j != g.high.size()) {
      throw MeshError("internal: unmatched segments on interior line");
    }
  }

  // Boundary faces.
  for (int a = 0; a < n_active(); ++a) {
    const int id = active_[a];
    const auto& tc = tree_[id];
    for (int s = 0; s < 4; ++s) {
      const int axis = (s < 2) ? 0 : 1;
      const double coord = (s == 0 || s == 2) ? tc.ref_lo[axis] : tc.ref_hi[axis];
      if (coord != 0.0 && coord != 1.0) continue;
      if (root_neighbors_[tc.root][s].root >= 0) continue;
      Face f;
      f.kind = FaceKind::boundary;
      f.plus_cell = a;
      f.plus_side = std::int8_t(s);
      f.btag = boundary_tag_for_root_side(tc.root, s);
      add_face(f);
    }
  }
}

// ---------------------------------------------------------------------------
// geometry queries
// ---------------------------------------------------------------------------

Vec2 Mesh::map_point(int active_idx, double xi, double eta) const {
  const auto& bs = basis_for(map_degree_);
  const auto& tc = tree_[active_[active_idx]];
  return {bs.eval2d(tc.geo_x.data(), xi, eta), bs.eval2d(tc.geo_z.data(), xi, eta)};
}

Vec2 Mesh::to_flat(double x, double z) const {
  if (!terrain_) return {x, z};
  const double h = terrain_->h_surface(x);
  return {x, (z - h) / (1.0 - h / terrain_->z_top)};
}

int Mesh::locate(double x, double z, double& xi, double& eta) const {
  const Vec2 flat = to_flat(x, z);
  int root = -1;
  double rx = 0, rz = 0;  // root reference coords
  if (is_cartesian_) {
    const double fx = (flat.x - xmin_) / (xmax_ - xmin_) * cart_nx_;
    const double fz = (flat.z - zmin_) / (zmax_ - zmin_) * cart_nz_;
    if (fx < -1e-9 || fx > cart_nx_ + 1e-9 || fz < -1e-9 || fz > cart_nz_ + 1e-9) return -1;
    const int i = std::clamp(int(fx), 0, cart_nx_ - 1);
    const int j = std::clamp(int(fz), 0, cart_nz_ - 1);
    root = j * cart_nx_ + i;
    rx = std::clamp(fx - i, 0.0, 1.0);
    rz = std::clamp(fz - j, 0.0, 1.0);
  } else {
    for (int r = 0; r < n_roots_ && root < 0; ++r) {
      // Newton inversion of the bilinear root map.
      const Vec2 v00 = vertices_[root_verts_[r][0]];
      const Vec2 v10 = vertices_[root_verts_[r][1]];
      const Vec2 v01 = vertices_[root_verts_[r][2]];
      const Vec2 v11 = vertices_[root_verts_[r][3]];
      double s = 0.5, t = 0.5;
      for (int it = 0; it < 30; ++it) {
        const double w00 = (1 - s) * (1 - t), w10 = s * (1 - t), w01 = (1 - s) * t, w11 = s * t;
        const double fx = w00 * v00.x + w10 * v10.x + w01 * v01.x + w11 * v11.x - flat.x;
        const double fz = w00 * v00.z + w10 * v10.z + w01 * v01.z + w11 * v11.z - flat.z;
        const double jxx = -(1 - t) * v00.x + (1 - t) * v10.x - t * v01.x + t * v11.x;
        const double jxz = -(1 - s) * v00.x - s * v10.x + (1 - s) * v01.x + s * v11.x;
        const double jzx = -(1 - t) * v00.z + (1 - t) * v10.z - t * v01.z + t * v11.z;
        const double jzz = -(1 - s) * v00.z - s * v10.z + (1 - s) * v01.z + s * v11.z;
        const double det = jxx * jzz - jxz * jzx;
        if (det == 0) break;
        const double ds = (fx * jzz - fz * jxz) / det;
        const double dt = (fz * jxx - fx * jzx) / det;
        s -= ds;
        t -= dt;
        if (std::abs(ds) + std::abs(dt) < 1e-14) break;
      }
      if (s > -1e-9 && s < 1 + 1e-9 && t > -1e-9 && t < 1 + 1e-9) {
        root = r;
        rx = std::clamp(s, 0.0, 1.0);
        rz = std::clamp(t, 0.0, 1.0);
      }
    }
    if (root < 0) return -1;
  }
  // Descend the tree.
  int id = root;
  while (!tree_[id].active) {
    const auto& tc = tree_[id];
    if (tc.children[0] < 0) return -1;
    const double mx = 0.5 * (tc.ref_lo[0] + tc.ref_hi[0]);
    const double mz = 0.5 * (tc.ref_lo[1] + tc.ref_hi[1]);
    const int q = (rx >= mx ? 1 : 0) + (rz >= mz ? 2 : 0);
    id = tc.children[q];
  }
  const auto& tc = tree_[id];
  xi = std::clamp((rx - tc.ref_lo[0]) / (tc.ref_hi[0] - tc.ref_lo[0]), 0.0, 1.0);
  eta = std::clamp((rz - tc.ref_lo[1]) / (tc.ref_hi[1] - tc.ref_lo[1]), 0.0, 1.0);
  return active_index_[id];
}

double Mesh::min_edge_length() const {
  const auto& bs = basis_for(map_degree_);
  const Quadrature1D q = gauss_legendre(map_degree_ + 2);
  double best = 1e300;
  for (int a = 0; a < n_active(); ++a) {
    const auto& tc = tree_[active_[a]];
    for (int s = 0; s < 4; ++s) {
      double len = 0.0;
      for (int k = 0; k < q.size(); ++k) {
        const double t = q.points[k];
        double xi, eta, txi, teta;
        switch (s) {
          case 0: xi = 0; eta = t; txi = 0; teta = 1; break;
          case 1: xi = 1; eta = t; txi = 0; teta = 1; break;
          case 2: xi = t; eta = 0; txi = 1; teta = 0; break;
          default: xi = t; eta = 1; txi = 1; teta = 0; break;
        }
        double gx_xi, gx_eta, gz_xi, gz_eta;
        bs.eval2d_grad(tc.geo_x.data(), xi, eta, gx_xi, gx_eta);
        bs.eval2d_grad(tc.geo_z.data(), xi, eta, gz_xi, gz_eta);
        const double tx = gx_xi * txi + gx_eta * teta;
        const double tz = gz_xi * txi + gz_eta * teta;
        len += q.weights[k] * std::hypot(tx, tz);
      }
      best = std::min(best, len);
    }
  }
  return best;
}

double Mesh::min_diameter() const {
  double best = 1e300;
  for (int a = 0; a < n_active(); ++a) {
    const Vec2 c00 = map_point(a, 0, 0), c10 = map_point(a, 1, 0);
    const Vec2 c01 = map_point(a, 0, 1), c11 = map_point(a, 1, 1);
    const double d1 = std::hypot(c11.x - c00.x, c11.z - c00.z);
    const double d2 = std::hypot(c01.x - c10.x, c01.z - c10.z);
    best = std::min(best, std::max(d1, d2));
  }
  return best;
}

int Mesh::max_face_level_diff() const {
  int worst = 0;
  for (const auto& f : faces_) {
    if (f.minus_cell < 0) continue;
    const int lp = cell_level(f.plus_cell);
    const int lm = cell_level(f.minus_cell);
    worst = std::max(worst, std::abs(lp - lm));
  }
  return worst;
}

double Mesh::cell_area(int active_idx) const {
  const auto& bs = basis_for(map_degree_);
  const auto& tc = tree_[active_[active_idx]];
  const Quadrature1D q = gauss_legendre(map_degree_ + 2);
  double area = 0.0;
  for (int j = 0; j < q.size(); ++j) {
    for (int i = 0; i < q.size(); ++i) {
      double xx, xz, zx, zz;
      bs.eval2d_grad(tc.geo_x.data(), q.points[i], q.points[j], xx, xz);
      bs.eval2d_grad(tc.geo_z.data(), q.points[i], q.points[j], zx, zz);
      area += q.weights[i] * q.weights[j] * (xx * zz - xz * zx);
    }
  }
  return area;
}

Vec2 Mesh::face_unit_normal(const Face& f, double t) const {
  const auto& bs = basis_for(map_degree_);
  const auto& tc = tree_[active_[f.plus_cell]];
  const double s = f.a_plus + f.b_plus * t;
  double xi, eta;
  switch (f.plus_side) {
    case 0: xi = 0; eta = s; break;
    case 1: xi = 1; eta = s; break;
    case 2: xi = s; eta = 0; break;
    default: xi = s; eta = 1; break;
  }
  double xx, xz, zx, zz;
  bs.eval2d_grad(tc.geo_x.data(), xi, eta, xx, xz);
  bs.eval2d_grad(tc.geo_z.data(), xi, eta, zx, zz);
  // Tangent along the side parameter direction.
  const bool along_eta = (f.plus_side < 2);
  const double tx = along_eta ? xz : xx;
  const double tz = along_eta ? zz : zx;
  double nx = tz, nz = -tx;
  // Orient outward using the reference normal mapped through adj(J)^T.
  const double rnx = kRefNormal[f.plus_side][0], rnz = kRefNormal[f.plus_side][1];
  const double ox = zz * rnx - zx * rnz;
  const double oz = -xz * rnx + xx * rnz;
  if (nx * ox + nz * oz < 0) {
    nx = -nx;
    nz = -nz;
  }
  const double len = std::hypot(nx, nz);
  return {nx / len, nz / len};
}

// ---------------------------------------------------------------------------
// file I/O
// ---------------------------------------------------------------------------

Mesh Mesh::read_file(const std::string& path, int map_degree) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file: " + path);

  std::string tok;
  if (!(in >> tok) || tok != "NODES") throw MeshError("mesh file: expected NODES header");
  int nn = 0;
  in >> nn;
  if (nn < 4) throw MeshError("mesh file: fewer than 4 nodes");

  Mesh m;
  std::map<long, std::int32_t> node_ids;
  m.vertices_.resize(nn);
  for (int k = 0; k < nn; ++k) {
    long id;
    double x, z;
    if (!(in >> id >> x >> z)) throw MeshError("mesh file: bad node line");
    if (node_ids.count(id)) throw MeshError("mesh file: duplicate node id " + std::to_string(id));
    node_ids[id] = k;
    m.vertices_[k] = {x, z};
  }

  if (!(in >> tok) || tok != "CELLS") throw MeshError("mesh file: expected CELLS header");
  int nc = 0;
  in >> nc;
  if (nc < 1) throw MeshError("mesh file: no cells");
  m.root_verts_.resize(nc);
  std::vector<bool> used(nn, false);
  std::vector<long> cell_ids(nc);
  for (int k = 0; k < nc; ++k) {
    long id, v[4];
    if (!(in >> id >> v[0] >> v[1] >> v[2] >> v[3])) {
      throw MeshError("mesh file: bad cell line (cells must be quadrilaterals)");
    }
    cell_ids[k] = id;
    std::int32_t p[4];
    for (int c = 0; c < 4; ++c) {
      auto it = node_ids.find(v[c]);
      if (it == node_ids.end()) {
        throw MeshError("mesh file: cell " + std::to_string(id) + " references unknown node " +
                        std::to_string(v[c]));
      }
      p[c] = it->second;
      used[p[c]] = true;
    }
    if (p[0] == p[1] || p[0] == p[2] || p[0] == p[3] || p[1] == p[2] || p[1] == p[3] ||
        p[2] == p[3]) {
      throw MeshError("mesh file: cell " + std::to_string(id) + " repeats a node");
    }
    // Normalize to counter-clockwise perimeter order.
    auto cross = [&](std::int32_t a, std::int32_t b, std::int32_t c) {
      const Vec2 A = m.vertices_[a], B = m.vertices_[b], C = m.vertices_[c];
      return (B.x - A.x) * (C.z - A.z) - (B.z - A.z) * (C.x - A.x);
    };
    double area2 = 0.0;
    for (int c = 0; c < 4; ++c) {
      const Vec2 A = m.vertices_[p[c]], B = m.vertices_[p[(c + 1) % 4]];
      area2 += A.x * B.z - B.x * A.z;
    }
    if (area2 < 0) std::swap(p[1], p[3]);
    // All corner turns must be left turns, otherwise the quad is inverted.
    for (int c = 0; c < 4; ++c) {
      if (cross(p[c], p[(c + 1) % 4], p[(c + 3) % 4]) <= 0) {
        throw MeshError("mesh file: inverted element " + std::to_string(id));
      }
    }
    // Perimeter (v0,v1,v2,v3) -> reference corners (v00,v10,v11,v01).
    m.root_verts_[k] = {p[0], p[1], p[3], p[2]};
  }
  for (int k = 0; k < nn; ++k) {
    if (!used[k]) {
      throw MeshError("mesh file: dangling node " + std::to_string(k));
    }
  }
  m.n_roots_ = nc;
  m.init_roots(map_degree);

  // Optional BOUNDARY section: "faceid tag" over boundary sides enumerated in
  // cell order, sides 0..3, counting only sides without a neighbor.
  if (in >> tok) {
    if (tok != "BOUNDARY") throw MeshError("mesh file: unexpected token " + tok);
    int nb = 0;
    in >> nb;
    std::vector<std::pair<int, int>> bsides;  // (root, side)
    for (int r = 0; r < m.n_roots_; ++r) {
      for (int s = 0; s < 4; ++s) {
        if (m.root_neighbors_[r][s].root < 0) bsides.push_back({r, s});
      }
    }
    bool any_periodic = false;
    for (int k = 0; k < nb; ++k) {
      long fid;
      std::string tag;
      if (!(in >> fid >> tag)) throw MeshError("mesh file: bad boundary line");
      if (fid < 0 || fid >= long(bsides.size())) {
        throw MeshError("mesh file: boundary face id out of range");
      }
      if (tag == "wall") {
        // default; classification already treats untagged sides as walls
      } else if (tag == "periodic_x") {
        any_periodic = true;
      } else {
        throw MeshError("mesh file: unknown boundary tag " + tag);
      }
    }
    if (any_periodic) m.set_periodic_x(true);
  }
  return m;
}

void Mesh::write_file(const std::string& path) const {
  for (int a = 0; a < n_active(); ++a) {
    if (cell_level(a) != 0) {
      throw MeshError("mesh write supports conforming root-level meshes only");
    }
  }
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write mesh file: " + path);
  out.precision(17);
  out << "NODES " << vertices_.size() << "\n";
  for (std::size_t k = 0; k < vertices_.size(); ++k) {
    out << k << " " << vertices_[k].x << " " << vertices_[k].z << "\n";
  }
  out << "CELLS " << n_roots_ << "\n";
  for (int r = 0; r < n_roots_; ++r) {
    // reference corners (v00,v10,v01,v11) -> CCW perimeter (v00,v10,v11,v01)
    out << r << " " << root_verts_[r][0] << " " << root_verts_[r][1] << " "
        << root_verts_[r][3] << " " << root_verts_[r][2] << "\n";
  }
}

// ---------------------------------------------------------------------------
// binary serialization (checkpointing)
// ---------------------------------------------------------------------------

namespace {
template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void get(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
template <class T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put(os, std::uint64_t(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), sizeof(T) * v.size());
}
template <class T>
void get_vec(std::istream& is, std::vector<T>& v) {
  std::uint64_t n;
  get(is, n);
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), sizeof(T) * n);
}
} // namespace

void Mesh::save_binary(std::ostream& os) const {
  put(os, std::int32_t(n_roots_));
  put(os, std::int32_t(map_degree_));
  put(os, std::uint8_t(periodic_x_));
  put(os, bc_);
  put(os, std::uint8_t(is_cartesian_));
  put(os, std::int32_t(cart_nx_));
  put(os, std::int32_t(cart_nz_));
  put(os, xmin_);
  put(os, xmax_);
  put(os, zmin_);
  put(os, zmax_);
  put_vec(os, vertices_);
  put_vec(os, root_verts_);
  put(os, std::uint64_t(tree_.size()));
  for (const auto& tc : tree_) {
    put(os, tc.parent);
    put(os, tc.children);
    put(os, tc.root);
    put(os, tc.level);
    put(os, std::uint8_t(tc.active));
    put(os, tc.ref_lo);
    put(os, tc.ref_hi);
    put_vec(os, tc.geo_x);
    put_vec(os, tc.geo_z);
  }
}

Mesh Mesh::load_binary(std::istream& is) {
  Mesh m;
  std::int32_t nr, md, nx, nz;
  std::uint8_t per, cart;
  get(is, nr);
  get(is, md);
  get(is, per);
  get(is, m.bc_);
  get(is, cart);
  get(is, nx);
  get(is, nz);
  get(is, m.xmin_);
  get(is, m.xmax_);
  get(is, m.zmin_);
  get(is, m.zmax_);
  get_vec(is, m.vertices_);
  get_vec(is, m.root_verts_);
  m.n_roots_ = nr;
  m.map_degree_ = md;
  m.is_cartesian_ = cart != 0;
  m.cart_nx_ = nx;
  m.cart_nz_ = nz;
  std::uint64_t nt;
  get(is, nt);
  m.tree_.resize(nt);
  for (auto& tc : m.tree_) {
    std::uint8_t act;
    get(is, tc.parent);
    get(is, tc.children);
    get(is, tc.root);
    get(is, tc.level);
    get(is, act);
    tc.active = act != 0;
    get(is, tc.ref_lo);
    get(is, tc.ref_hi);
    get_vec(is, tc.geo_x);
    get_vec(is, tc.geo_z);
  }
  if (!is) throw MeshError("corrupt mesh checkpoint");
  m.build_root_connectivity();
  m.classify_boundary();
  m.rebuild_active();
  if (per) {
    m.periodic_x_ = false;
    m.set_periodic_x(true);
  } else {
    m.rebuild_faces();
  }
  m.version_ = g_mesh_version.fetch_add(1);
  return m;
}

void Mesh::set_terrain_analytic(const TerrainMap& terrain) { terrain_ = terrain; }

} // namespace atmdg
