#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cmt/mesh.hpp"
#include "doctest.h"
#include "expect_error.hpp"
#include "phantoms.hpp"

namespace fs = std::filesystem;
using namespace cmt;
using namespace cmt::test;

TEST_CASE("single voxel gives a closed sphere-like surface") {
  LabelMap m(cube_grid(5));
  m.at(2, 2, 2) = 2;
  const TriMesh t = marching_cubes(m, 2, {0.5, 0.0});
  CHECK(t.faces.size() == 8);
  CHECK(euler_characteristic(t) == 2);
  CHECK(connected_components(t) == 1);
}

TEST_CASE("hollow ball has two boundary surfaces") {
  const int n = 21;
  LabelMap m(cube_grid(n));
  const double c = (n - 1) / 2.0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const double r = (Vec3(i, j, k) - Vec3::Constant(c)).norm();
        if (r >= 4.0 && r < 8.0) m.at(i, j, k) = 2;
      }
  const TriMesh t = marching_cubes(m, 2);
  CHECK(connected_components(t) == 2);
  CHECK(euler_characteristic(t) == 4);
}

TEST_CASE("linear field gives a flat iso surface") {
  const Grid g = cube_grid(6);
  ScalarField f(g, 0.0);
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) f.at(i, j, k) = i;
  // the grid is padded with background, so the surface closes outside the domain
  const TriMesh t = marching_cubes(f, 2.25);
  REQUIRE_FALSE(t.vertices.empty());
  int on_plane = 0;
  for (const auto& v : t.vertices) {
    if (v.x() < 2.9) {
      CHECK(v.x() == doctest::Approx(2.25));
      ++on_plane;
    }
  }
  CHECK(on_plane == 36);
  CHECK(euler_characteristic(t) == 2);
}

TEST_CASE("sphere area with smoothing") {
  const double r = 12.0;
  const int n = 2 * static_cast<int>(std::ceil(r)) + 9;
  const LabelMap s = sphere_labels(n, r, 2);
  const TriMesh t = marching_cubes(s, 2, {0.5, 1.0});
  const double truth = 4.0 * M_PI * r * r;
  CHECK(std::abs(surface_area(t) - truth) / truth < 0.03);
  CHECK(euler_characteristic(t) == 2);
}

TEST_CASE("spacing scales the surface") {
  LabelMap a(cube_grid(12, 1.0));
  LabelMap b(cube_grid(12, 2.0));
  for (int k = 3; k < 9; ++k)
    for (int j = 3; j < 9; ++j)
      for (int i = 3; i < 9; ++i) a.at(i, j, k) = b.at(i, j, k) = 2;
  const double aa = surface_area(marching_cubes(a, 2));
  const double ab = surface_area(marching_cubes(b, 2));
  CHECK(ab == doctest::Approx(4.0 * aa).epsilon(1e-9));
}

TEST_CASE("slab thickness") {
  const int n = 32;
  LabelMap m(cube_grid(n));
  for (int k = 4; k < 16; ++k)
    for (int j = 4; j < 28; ++j)
      for (int i = 4; i < 28; ++i) m.at(i, j, k) = k < 10 ? 1 : 2;
  auto mesh = std::make_shared<const TriMesh>(marching_cubes(m, 2, {0.5, 0.0}));
  const InterfaceSplit split = extract_interface(m, 1, mesh);
  const TriMesh th = thickness_map(split.interface, split.outer);
  REQUIRE(th.vertex_scalar.size() == th.vertices.size());
  int central = 0;
  for (std::size_t v = 0; v < th.vertices.size(); ++v) {
    const Vec3& p = th.vertices[v];
    // more than 6 voxels from the side walls
    if (p.x() < 10 || p.x() > 21 || p.y() < 10 || p.y() > 21) continue;
    // bone-side surface sits at z = 9.5, the free surface at z = 15.5
    CHECK(p.z() == doctest::Approx(9.5));
    CHECK(th.vertex_scalar[v] == doctest::Approx(6.0).epsilon(1e-9));
    ++central;
  }
  CHECK(central > 50);
  CHECK(split.interface.area == doctest::Approx(surface_area(split.interface)));
}

TEST_CASE("interface needs bone and thickness needs both patches") {
  LabelMap m(cube_grid(8));
  m.at(4, 4, 4) = 2;
  auto mesh = std::make_shared<const TriMesh>(marching_cubes(m, 2));
  CHECK(error_of([&] { extract_interface(m, 1, mesh); }) == ErrorCode::NoBoneAdjacency);
  CHECK(error_of([&] { thickness_map(SurfacePatch{}, SurfacePatch{}); }) == ErrorCode::EmptyPatch);
  CHECK(error_of([&] { marching_cubes(m, 4); }) == ErrorCode::EmptyLabel);
}

TEST_CASE("closest point on triangle against dense sampling") {
  std::mt19937 rng(12);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 40; ++trial) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng));
    const Vec3 p(2 * u(rng), 2 * u(rng), 2 * u(rng));
    const Vec3 q = closest_point_on_triangle(p, a, b, c);
    double best = std::numeric_limits<double>::infinity();
    const int steps = 300;
    for (int s = 0; s <= steps; ++s)
      for (int t = 0; s + t <= steps; ++t) {
        const Vec3 x = a + (b - a) * (double(s) / steps) + (c - a) * (double(t) / steps);
        best = std::min(best, (x - p).norm());
      }
    CHECK((q - p).norm() <= best + 1e-12);
    CHECK((q - p).norm() == doctest::Approx(best).epsilon(0.02));
  }
}

TEST_CASE("mirror is an involution that preserves area") {
  LabelMap m(cube_grid(10));
  for (int k = 2; k < 6; ++k)
    for (int j = 2; j < 5; ++j)
      for (int i = 1; i < 4; ++i) m.at(i, j, k) = 2;
  const TriMesh t = marching_cubes(m, 2);
  const TriMesh once = mirror_lr(t, m.grid());
  const TriMesh twice = mirror_lr(once, m.grid());
  CHECK(surface_area(once) == doctest::Approx(surface_area(t)));
  for (std::size_t v = 0; v < t.vertices.size(); ++v) {
    CHECK(once.vertices[v].x() == doctest::Approx(9.0 - t.vertices[v].x()));
    CHECK((twice.vertices[v] - t.vertices[v]).norm() < 1e-12);
  }
  CHECK(twice.faces == t.faces);
}

TEST_CASE("ply output") {
  TriMesh t;
  t.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  t.faces = {{0, 1, 2}};
  t.vertex_scalar = {1.0, 2.0, 3.5};
  const fs::path p = fs::temp_directory_path() / "cmt_test_mesh" / "tri.ply";
  write_ply(t, p);
  std::ifstream is(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  REQUIRE(lines.size() == 14);
  CHECK(lines[0] == "ply");
  CHECK(lines[2] == "element vertex 3");
  CHECK(lines[6] == "property float thickness");
  CHECK(lines[9] == "end_header");
  CHECK(lines[12] == "0.000000 1.000000 0.000000 3.500000");
  CHECK(lines[13] == "3 0 1 2");
}
