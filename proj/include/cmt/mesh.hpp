#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cmt/volume.hpp"

namespace cmt {

/// Triangle mesh in world millimetres with an optional per-vertex scalar.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<double> vertex_scalar;  // empty or one value per vertex
  std::string scalar_name = "thickness";

  double face_area(std::size_t f) const;
  Vec3 face_centroid(std::size_t f) const;
};

/// Subset of faces of a parent mesh.
struct SurfacePatch {
  std::shared_ptr<const TriMesh> mesh;
  std::vector<std::size_t> faces;
  double area = 0.0;

  static SurfacePatch from_faces(std::shared_ptr<const TriMesh> mesh, std::vector<std::size_t> faces);
  bool empty() const { return faces.empty(); }
  /// Standalone mesh holding only the patch faces (vertices re-indexed).
  TriMesh extract() const;
};

struct MarchingCubesOptions {
  double iso = 0.5;
  double smoothing_sigma = 0.5;  // voxels; 0 disables
};

/// Isosurface of a scalar grid (inside = value > iso). The grid is zero
/// padded, so surfaces touching the border are closed.
TriMesh marching_cubes(const ScalarField& field, double iso);

/// Surface of one label's indicator, optionally Gaussian pre-smoothed.
TriMesh marching_cubes(const LabelMap& labels, std::uint8_t label, const MarchingCubesOptions& opt = {});
TriMesh marching_cubes(const LabelMap& labels, const std::string& label_name, const MarchingCubesOptions& opt = {});

double surface_area(const TriMesh& m);
double surface_area(const SurfacePatch& p);

/// V - E + F.
long euler_characteristic(const TriMesh& m);

/// Connected components of faces sharing vertices.
int connected_components(const TriMesh& m);

struct InterfaceSplit {
  SurfacePatch interface;
  SurfacePatch outer;
};

/// Faces whose centroid voxel has a bone voxel in its 26-neighbourhood form
/// the interface; the rest are the outer (articular) surface.
InterfaceSplit extract_interface(const LabelMap& labels, std::uint8_t bone_label, std::shared_ptr<const TriMesh> mesh);

/// Interface patch as a mesh whose vertex scalar is the distance (mm) to
/// the nearest point of the outer patch.
TriMesh thickness_map(const SurfacePatch& interface, const SurfacePatch& outer);

/// ASCII PLY; the vertex scalar is written as a float property.
void write_ply(const TriMesh& m, const std::filesystem::path& path);

/// Reflects vertices through the plane x_voxel = (n - 1) / 2 of `grid`;
/// face winding is reversed to keep orientation.
TriMesh mirror_lr(const TriMesh& m, const Grid& grid);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace cmt
