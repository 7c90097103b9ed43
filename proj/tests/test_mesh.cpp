#include <cmath>
#include <cstdio>
#include <fstream>

#include "atmdg/mesh.hpp"
#include "doctest.h"

using namespace atmdg;

TEST_CASE("cartesian mesh: cell counts and areas") {
  Mesh m = Mesh::cartesian(0, 300000, 0, 10000, 300, 10);
  CHECK(m.n_active() == 3000);
  for (int a : {0, 1234, 2999}) {
    CHECK(m.cell_area(a) == doctest::Approx(1000.0 * 1000.0).epsilon(1e-12));
  }
}

TEST_CASE("cartesian mesh: degenerate input rejected") {
  CHECK_THROWS_AS(Mesh::cartesian(0, 0, 0, 1, 4, 4), MeshError);
  CHECK_THROWS_AS(Mesh::cartesian(0, 1, 0, 1, 0, 4), MeshError);
}

TEST_CASE("single cell: 4 boundary faces, no interior") {
  Mesh m = Mesh::cartesian(0, 1, 0, 1, 1, 1);
  CHECK(m.n_active() == 1);
  int nb = 0, ni = 0;
  for (const auto& f : m.faces()) {
    (f.kind == FaceKind::boundary ? nb : ni)++;
  }
  CHECK(nb == 4);
  CHECK(ni == 0);
}

TEST_CASE("two cells share one interior face with x-normal") {
  Mesh m = Mesh::cartesian(0, 2, 0, 1, 2, 1);
  const Face* interior = nullptr;
  for (const auto& f : m.faces()) {
    if (f.kind == FaceKind::interior) {
      CHECK(interior == nullptr);
      interior = &f;
    }
  }
  REQUIRE(interior != nullptr);
  const Vec2 n = m.face_unit_normal(*interior, 0.5);
  CHECK(std::abs(std::abs(n.x) - 1.0) < 1e-14);
  CHECK(std::abs(n.z) < 1e-14);
}

TEST_CASE("mesh file round trip preserves connectivity") {
  Mesh m = Mesh::cartesian(0, 3, 0, 2, 3, 2);
  const std::string path = "roundtrip_mesh.txt";
  m.write_file(path);
  Mesh m2 = Mesh::read_file(path);
  REQUIRE(m2.n_active() == m.n_active());
  int nb = 0, ni = 0, nb2 = 0, ni2 = 0;
  for (const auto& f : m.faces()) (f.kind == FaceKind::boundary ? nb : ni)++;
  for (const auto& f : m2.faces()) (f.kind == FaceKind::boundary ? nb2 : ni2)++;
  CHECK(nb == nb2);
  CHECK(ni == ni2);
  for (int a = 0; a < m.n_active(); ++a) {
    CHECK(m2.cell_area(a) == doctest::Approx(m.cell_area(a)).epsilon(1e-14));
  }
  std::remove(path.c_str());
}

TEST_CASE("unit square file equals cartesian 1x1") {
  const std::string path = "unit_mesh.txt";
  {
    std::ofstream out(path);
    out << "NODES 4\n0 0 0\n1 1 0\n2 1 1\n3 0 1\nCELLS 1\n0 0 1 2 3\n";
  }
  Mesh m = Mesh::read_file(path);
  CHECK(m.n_active() == 1);
  CHECK(m.cell_area(0) == doctest::Approx(1.0));
  CHECK(m.faces().size() == 4);
  std::remove(path.c_str());
}

TEST_CASE("inverted (bowtie) element is rejected with its id") {
  const std::string path = "bowtie_mesh.txt";
  {
    std::ofstream out(path);
    // vertices ordered so the quad self-intersects
    out << "NODES 4\n0 0 0\n1 1 0\n2 1 1\n3 0 1\nCELLS 1\n7 0 1 3 2\n";
  }
  try {
    Mesh::read_file(path);
    CHECK(false);
  } catch (const MeshError& e) {
    CHECK(std::string(e.what()).find("7") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("dangling node is rejected") {
  const std::string path = "dangling_mesh.txt";
  {
    std::ofstream out(path);
    out << "NODES 5\n0 0 0\n1 1 0\n2 1 1\n3 0 1\n4 5 5\nCELLS 1\n0 0 1 2 3\n";
  }
  CHECK_THROWS_AS(Mesh::read_file(path), MeshError);
  std::remove(path.c_str());
}

TEST_CASE("clockwise cell order is normalized") {
  const std::string path = "cw_mesh.txt";
  {
    std::ofstream out(path);
    out << "NODES 4\n0 0 0\n1 1 0\n2 1 1\n3 0 1\nCELLS 1\n0 0 3 2 1\n";
  }
  Mesh m = Mesh::read_file(path);
  CHECK(m.cell_area(0) == doctest::Approx(1.0));
  std::remove(path.c_str());
}

TEST_CASE("gal-chen with zero terrain is the identity") {
  Mesh m = Mesh::cartesian(0, 10, 0, 5, 4, 4, 2);
  std::vector<double> before_x, before_z;
  for (int a = 0; a < m.n_active(); ++a) {
    before_x.insert(before_x.end(), m.geo_x(a).begin(), m.geo_x(a).end());
    before_z.insert(before_z.end(), m.geo_z(a).begin(), m.geo_z(a).end());
  }
  TerrainMap t{[](double) { return 0.0; }, 5.0, 2};
  m.apply_terrain(t);
  std::vector<double> after_x, after_z;
  for (int a = 0; a < m.n_active(); ++a) {
    after_x.insert(after_x.end(), m.geo_x(a).begin(), m.geo_x(a).end());
    after_z.insert(after_z.end(), m.geo_z(a).begin(), m.geo_z(a).end());
  }
  CHECK(before_x == after_x);  // bitwise
  CHECK(before_z == after_z);
}

TEST_CASE("gal-chen versiera: mapped heights") {
  // h_m = 1 m, a_c = 10 km, x_c = 120 km on (0,240)x(0,30) km
  Mesh m = Mesh::cartesian(0, 240000, 0, 30000, 24, 10, 2);
  TerrainMap t{agnesi_profile(1.0, 120000.0, 10000.0), 30000.0, 2};
  m.apply_terrain(t);
  double xi, eta;
  int cell = m.locate(120000.0, 100.0, xi, eta);
  REQUIRE(cell >= 0);
  // bottom edge at x_c is at z = h(x_c) = 1 m
  Vec2 p = m.map_point(cell, xi, 0.0);
  // the located cell bottom is the terrain only for the lowest row
  if (m.tree_cell(m.active_tree_id(cell)).ref_lo[1] == 0.0) {
    CHECK(p.z == doctest::Approx(1.0).epsilon(1e-10));
  }
  // top edge unchanged
  int top = m.locate(120000.0, 29999.0, xi, eta);
  REQUIRE(top >= 0);
  Vec2 q = m.map_point(top, 0.5, 1.0);
  CHECK(q.z == doctest::Approx(30000.0).epsilon(1e-12));
}

TEST_CASE("versiera half-width gives half height") {
  auto h = agnesi_profile(800.0, 256000.0, 16000.0);
  CHECK(h(256000.0 + 16000.0) == doctest::Approx(400.0).epsilon(1e-14));
  CHECK(h(256000.0 - 16000.0) == doctest::Approx(400.0).epsilon(1e-14));
}

TEST_CASE("refine_and_balance: all-keep leaves the mesh unchanged") {
  Mesh m = Mesh::cartesian(0, 4, 0, 4, 4, 4);
  const auto ids = m.active_cells();
  m.refine_and_balance(std::vector<int>(m.n_active(), 0));
  CHECK(m.active_cells() == ids);
}

TEST_CASE("refining one cell in a 4x4 grid keeps 2:1 and splits into 4") {
  Mesh m = Mesh::cartesian(0, 4, 0, 4, 4, 4);
  std::vector<int> flags(m.n_active(), 0);
  flags[5] = 1;
  m.refine_and_balance(flags);
  CHECK(m.n_active() == 16 + 3);  // one cell replaced by 4 children
  CHECK(m.max_face_level_diff() <= 1);
}

TEST_CASE("deep refinement cascades to preserve 2:1") {
  Mesh m = Mesh::cartesian(0, 8, 0, 8, 8, 8);
  // Refine one corner cell three times; each pass must stay balanced.
  for (int pass = 0; pass < 3; ++pass) {
    std::vector<int> flags(m.n_active(), 0);
    // refine the active cell containing a point near the corner
    double xi, eta;
    int a = m.locate(0.01, 0.01, xi, eta);
    REQUIRE(a >= 0);
    flags[a] = 1;
    m.refine_and_balance(flags);
    CHECK(m.max_face_level_diff() <= 1);
  }
  double xi, eta;
  const int corner = m.locate(0.01, 0.01, xi, eta);
  CHECK(m.cell_level(corner) == 3);
}

TEST_CASE("child areas sum to parent area") {
  Mesh m = Mesh::cartesian(0, 2, 0, 1, 2, 1);
  const double parent_area = m.cell_area(0);
  std::vector<int> flags(m.n_active(), 0);
  flags[0] = 1;
  m.refine_and_balance(flags);
  double sum = 0.0;
  for (int a = 0; a < m.n_active(); ++a) {
    if (m.cell_level(a) == 1) sum += m.cell_area(a);
  }
  CHECK(sum == doctest::Approx(parent_area).epsilon(1e-12));
}

TEST_CASE("coarsening merges a full sibling group and round-trips") {
  Mesh m = Mesh::cartesian(0, 2, 0, 2, 2, 2);
  std::vector<int> flags(m.n_active(), 0);
  flags[0] = 1;
  m.refine_and_balance(flags);
  CHECK(m.n_active() == 7);
  // coarsen all children of cell 0
  std::vector<int> cflags(m.n_active(), 0);
  for (int a = 0; a < m.n_active(); ++a) {
    if (m.cell_level(a) == 1) cflags[a] = -1;
  }
  const int clamped = m.refine_and_balance(cflags);
  CHECK(clamped == 0);
  CHECK(m.n_active() == 4);
}

TEST_CASE("coarsen flags on roots are clamped") {
  Mesh m = Mesh::cartesian(0, 2, 0, 2, 2, 2);
  const int clamped = m.refine_and_balance(std::vector<int>(4, -1));
  CHECK(clamped == 4);
  CHECK(m.n_active() == 4);
}

TEST_CASE("periodic pairing turns lateral boundaries into interior faces") {
  Mesh m = Mesh::cartesian(0, 4, 0, 1, 4, 1);
  int nb0 = 0;
  for (const auto& f : m.faces()) {
    if (f.kind == FaceKind::boundary) ++nb0;
  }
  CHECK(nb0 == 10);
  m.set_periodic_x(true);
  int nb = 0, ni = 0;
  for (const auto& f : m.faces()) {
    (f.kind == FaceKind::boundary ? nb : ni)++;
  }
  CHECK(nb == 8);
  CHECK(ni == 4);
}

TEST_CASE("hanging faces carry subface indices 0 and 1") {
  Mesh m = Mesh::cartesian(0, 2, 0, 1, 2, 1);
  std::vector<int> flags = {1, 0};
  m.refine_and_balance(flags);
  int nsub = 0;
  bool saw0 = false, saw1 = false;
  for (const auto& f : m.faces()) {
    if (f.kind == FaceKind::subface) {
      ++nsub;
      if (f.subface_index == 0) saw0 = true;
      if (f.subface_index == 1) saw1 = true;
      // plus side is the coarse cell
      CHECK(m.cell_level(f.plus_cell) < m.cell_level(f.minus_cell));
    }
  }
  CHECK(nsub == 2);
  CHECK(saw0);
  CHECK(saw1);
}
