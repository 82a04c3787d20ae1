#include "cmt/mesh.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "cmt/standardize.hpp"
#include "spatial.hpp"

namespace cmt {
namespace {

struct Edge {
  int a;
  int b;
  int axis;
};

constexpr std::array<int, 3> corner_offset(int c) { return {c & 1, (c >> 1) & 1, (c >> 2) & 1}; }

std::array<Edge, 12> cube_edges() {
  std::array<Edge, 12> e{};
  int n = 0;
  for (int axis = 0; axis < 3; ++axis) {
    for (int c = 0; c < 8; ++c) {
      if (c & (1 << axis)) continue;
      e[static_cast<std::size_t>(n++)] = {c, c | (1 << axis), axis};
    }
  }
  return e;
}

int edge_between(const std::array<Edge, 12>& edges, int a, int b) {
  for (int i = 0; i < 12; ++i) {
    const auto& e = edges[static_cast<std::size_t>(i)];
    if ((e.a == a && e.b == b) || (e.a == b && e.b == a)) return i;
  }
  return -1;
}

Vec3 corner_vec(int c) {
  const auto o = corner_offset(c);
  return Vec3(o[0], o[1], o[2]);
}

// Cube faces as corner cycles, counter-clockwise seen from outside.
std::array<std::array<int, 4>, 6> cube_faces() {
  std::array<std::array<int, 4>, 6> faces{};
  int n = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      std::array<int, 4> q{};
      const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      for (int i = 0; i < 4; ++i) q[static_cast<std::size_t>(i)] = (side << axis) | (uv[i][0] << u) | (uv[i][1] << v);
      const Vec3 normal = (corner_vec(q[1]) - corner_vec(q[0])).cross(corner_vec(q[2]) - corner_vec(q[1]));
      Vec3 outward = Vec3::Zero();
      outward[axis] = side ? 1.0 : -1.0;
      if (normal.dot(outward) < 0.0) std::swap(q[1], q[3]);
      faces[static_cast<std::size_t>(n++)] = q;
    }
  }
  return faces;
}

using Triangles = std::vector<std::array<int, 3>>;

// Per-case triangles over cube edge ids. Ambiguous faces keep inside
// corners separated, which makes neighbouring cubes agree.
std::array<Triangles, 256> build_case_table() {
  const auto edges = cube_edges();
  const auto faces = cube_faces();
  std::array<Triangles, 256> table;
  for (int mask = 1; mask < 255; ++mask) {
    auto in = [&](int c) { return (mask >> c) & 1; };
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& q : faces) {
      std::vector<std::pair<int, bool>> crossings;  // edge, leaving-inside
      for (int i = 0; i < 4; ++i) {
        const int a = q[static_cast<std::size_t>(i)];
        const int b = q[static_cast<std::size_t>((i + 1) % 4)];
        if (in(a) != in(b)) crossings.emplace_back(edge_between(edges, a, b), in(a) == 1);
      }
      const std::size_t m = crossings.size();
      for (std::size_t i = 0; i < m; ++i) {
        if (!crossings[i].second) continue;
        const auto& enter = crossings[(i + m - 1) % m];
        next[static_cast<std::size_t>(enter.first)] = crossings[i].first;
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[static_cast<std::size_t>(start)] < 0 || used[static_cast<std::size_t>(start)]) continue;
      std::vector<int> cycle;
      for (int e = start; !used[static_cast<std::size_t>(e)]; e = next[static_cast<std::size_t>(e)]) {
        used[static_cast<std::size_t>(e)] = true;
        cycle.push_back(e);
      }
      for (std::size_t i = 1; i + 1 < cycle.size(); ++i) table[static_cast<std::size_t>(mask)].push_back({cycle[0], cycle[i], cycle[i + 1]});
    }
  }
  // orient so normals point away from the inside corners
  const auto& t = table[1].front();
  auto mid = [&](int e) { return 0.5 * (corner_vec(edges[static_cast<std::size_t>(e)].a) + corner_vec(edges[static_cast<std::size_t>(e)].b)); };
  const Vec3 n = (mid(t[1]) - mid(t[0])).cross(mid(t[2]) - mid(t[0]));
  if (n.dot(Vec3(1, 1, 1)) < 0.0) {
    for (auto& tris : table) {
      for (auto& tri : tris) std::swap(tri[1], tri[2]);
    }
  }
  return table;
}

const std::array<Triangles, 256>& case_table() {
  static const auto table = build_case_table();
  return table;
}

constexpr double kMinFaceArea = 1e-12;
constexpr double kEdgeClamp = 1e-4;

}  // namespace

double TriMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  const Vec3& a = vertices[static_cast<std::size_t>(t[0])];
  const Vec3& b = vertices[static_cast<std::size_t>(t[1])];
  const Vec3& c = vertices[static_cast<std::size_t>(t[2])];
  return 0.5 * (b - a).cross(c - a).norm();
}

Vec3 TriMesh::face_centroid(std::size_t f) const {
  const auto& t = faces[f];
  return (vertices[static_cast<std::size_t>(t[0])] + vertices[static_cast<std::size_t>(t[1])] +
          vertices[static_cast<std::size_t>(t[2])]) /
         3.0;
}

SurfacePatch SurfacePatch::from_faces(std::shared_ptr<const TriMesh> mesh, std::vector<std::size_t> faces) {
  SurfacePatch p;
  p.mesh = std::move(mesh);
  p.faces = std::move(faces);
  for (auto f : p.faces) p.area += p.mesh->face_area(f);
  return p;
}

TriMesh SurfacePatch::extract() const {
  TriMesh out;
  if (!mesh) return out;
  out.scalar_name = mesh->scalar_name;
  std::vector<int> remap(mesh->vertices.size(), -1);
  for (auto f : faces) {
    std::array<int, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      const auto v = static_cast<std::size_t>(mesh->faces[f][static_cast<std::size_t>(k)]);
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh->vertices[v]);
        if (!mesh->vertex_scalar.empty()) out.vertex_scalar.push_back(mesh->vertex_scalar[v]);
      }
      tri[static_cast<std::size_t>(k)] = remap[v];
    }
    out.faces.push_back(tri);
  }
  return out;
}

TriMesh marching_cubes(const ScalarField& field, double iso) {
  const Extents& d0 = field.dims();
  const double pad_value = iso > 0.0 ? 0.0 : iso - 1.0;
  const Extents d{d0[0] + 2, d0[1] + 2, d0[2] + 2};
  std::vector<double> f(static_cast<std::size_t>(d[0]) * d[1] * d[2], pad_value);
  auto idx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k);
  };
  for (int k = 0; k < d0[2]; ++k)
    for (int j = 0; j < d0[1]; ++j)
      for (int i = 0; i < d0[0]; ++i) f[idx(i + 1, j + 1, k + 1)] = field.at(i, j, k);

  const auto edges = cube_edges();
  const auto& table = case_table();
  const Affine4& affine = field.grid().affine;
  TriMesh mesh;
  std::unordered_map<std::uint64_t, int> vertex_of_edge;

  auto vertex = [&](int i, int j, int k, int e) {
    const Edge& edge = edges[static_cast<std::size_t>(e)];
    const auto oa = corner_offset(edge.a);
    const auto ob = corner_offset(edge.b);
    const std::size_t ga = idx(i + oa[0], j + oa[1], k + oa[2]);
    const std::uint64_t key = static_cast<std::uint64_t>(ga) * 3 + static_cast<std::uint64_t>(edge.axis);
    const auto it = vertex_of_edge.find(key);
    if (it != vertex_of_edge.end()) return it->second;
    const double fa = f[ga];
    const double fb = f[idx(i + ob[0], j + ob[1], k + ob[2])];
    const double t = std::clamp((iso - fa) / (fb - fa), kEdgeClamp, 1.0 - kEdgeClamp);
    Vec3 p(i + oa[0] - 1.0, j + oa[1] - 1.0, k + oa[2] - 1.0);
    p[edge.axis] += t;
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(affine.apply(p));
    vertex_of_edge.emplace(key, id);
    return id;
  };

  for (int k = 0; k + 1 < d[2]; ++k) {
    for (int j = 0; j + 1 < d[1]; ++j) {
      for (int i = 0; i + 1 < d[0]; ++i) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          const auto o = corner_offset(c);
          if (f[idx(i + o[0], j + o[1], k + o[2])] > iso) mask |= 1 << c;
        }
        for (const auto& tri : table[static_cast<std::size_t>(mask)]) {
          const std::array<int, 3> face{vertex(i, j, k, tri[0]), vertex(i, j, k, tri[1]), vertex(i, j, k, tri[2])};
          mesh.faces.push_back(face);
          if (mesh.face_area(mesh.faces.size() - 1) <= kMinFaceArea) mesh.faces.pop_back();
        }
      }
    }
  }
  return mesh;
}

TriMesh marching_cubes(const LabelMap& labels, std::uint8_t label, const MarchingCubesOptions& opt) {
  if (label == 0 || labels.count(label) == 0) {
    throw Error(ErrorCode::EmptyLabel, "label " + std::to_string(label) + " is absent");
  }
  const int pad = opt.smoothing_sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * opt.smoothing_sigma)) : 0;
  const Extents& d = labels.dims();
  Grid g;
  g.dims = {d[0] + 2 * pad, d[1] + 2 * pad, d[2] + 2 * pad};
  g.affine = labels.grid().affine * Affine4::diagonal(Vec3::Ones(), Vec3::Constant(-pad));
  ScalarField ind(g, 0.0);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        if (labels.at(i, j, k) == label) ind.at(i + pad, j + pad, k + pad) = 1.0;
      }
  if (opt.smoothing_sigma > 0.0) ind = gaussian_smooth(ind, opt.smoothing_sigma);
  return marching_cubes(ind, opt.iso);
}

TriMesh marching_cubes(const LabelMap& labels, const std::string& label_name, const MarchingCubesOptions& opt) {
  return marching_cubes(labels, static_cast<std::uint8_t>(labels.schema().value(label_name)), opt);
}

double surface_area(const TriMesh& m) {
  double a = 0.0;
  for (std::size_t f = 0; f < m.faces.size(); ++f) a += m.face_area(f);
  return a;
}

double surface_area(const SurfacePatch& p) {
  double a = 0.0;
  for (auto f : p.faces) a += p.mesh->face_area(f);
  return a;
}

long euler_characteristic(const TriMesh& m) {
  std::unordered_set<std::uint64_t> edges;
  std::unordered_set<int> used;
  for (const auto& t : m.faces) {
    for (int k = 0; k < 3; ++k) {
      const auto a = static_cast<std::uint64_t>(std::min(t[static_cast<std::size_t>(k)], t[static_cast<std::size_t>((k + 1) % 3)]));
      const auto b = static_cast<std::uint64_t>(std::max(t[static_cast<std::size_t>(k)], t[static_cast<std::size_t>((k + 1) % 3)]));
      edges.insert(a << 32 | b);
      used.insert(t[static_cast<std::size_t>(k)]);
    }
  }
  return static_cast<long>(used.size()) - static_cast<long>(edges.size()) + static_cast<long>(m.faces.size());
}

int connected_components(const TriMesh& m) {
  std::vector<int> parent(m.vertices.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (const auto& t : m.faces) {
    parent[static_cast<std::size_t>(find(t[1]))] = find(t[0]);
    parent[static_cast<std::size_t>(find(t[2]))] = find(t[0]);
  }
  std::unordered_set<int> roots;
  for (const auto& t : m.faces) roots.insert(find(t[0]));
  return static_cast<int>(roots.size());
}

InterfaceSplit extract_interface(const LabelMap& labels, std::uint8_t bone_label, std::shared_ptr<const TriMesh> mesh) {
  const Grid& g = labels.grid();
  const Affine4 to_voxel = g.affine.inverse();
  std::vector<std::size_t> inner;
  std::vector<std::size_t> outer;
  for (std::size_t f = 0; f < mesh->faces.size(); ++f) {
    const Vec3 p = to_voxel.apply(mesh->face_centroid(f));
    const int ci = static_cast<int>(std::lround(p[0]));
    const int cj = static_cast<int>(std::lround(p[1]));
    const int ck = static_cast<int>(std::lround(p[2]));
    bool touches = false;
    for (int dz = -1; dz <= 1 && !touches; ++dz)
      for (int dy = -1; dy <= 1 && !touches; ++dy)
        for (int dx = -1; dx <= 1 && !touches; ++dx) {
          const int i = ci + dx;
          const int j = cj + dy;
          const int k = ck + dz;
          touches = g.in_bounds(i, j, k) && labels.at(i, j, k) == bone_label;
        }
    (touches ? inner : outer).push_back(f);
  }
  if (inner.empty()) throw Error(ErrorCode::NoBoneAdjacency, "no mesh face is adjacent to bone");
  return {SurfacePatch::from_faces(mesh, std::move(inner)), SurfacePatch::from_faces(mesh, std::move(outer))};
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5)
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

TriMesh thickness_map(const SurfacePatch& interface, const SurfacePatch& outer) {
  if (interface.empty() || outer.empty()) throw Error(ErrorCode::EmptyPatch, "thickness needs both surface patches");
  const TriMesh& om = *outer.mesh;
  std::vector<Vec3> lo;
  std::vector<Vec3> hi;
  double edge_sum = 0.0;
  for (auto f : outer.faces) {
    const auto& t = om.faces[f];
    const Vec3& a = om.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = om.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = om.vertices[static_cast<std::size_t>(t[2])];
    lo.push_back(a.cwiseMin(b).cwiseMin(c));
    hi.push_back(a.cwiseMax(b).cwiseMax(c));
    edge_sum += (b - a).norm();
  }
  const double cell = std::max(2.0 * edge_sum / static_cast<double>(outer.faces.size()), 1e-6);
  const detail::BinIndex index(lo, hi, cell);

  TriMesh out = interface.extract();
  out.scalar_name = "thickness";
  out.vertex_scalar.assign(out.vertices.size(), 0.0);
  for (std::size_t v = 0; v < out.vertices.size(); ++v) {
    const Vec3& p = out.vertices[v];
    out.vertex_scalar[v] = index.nearest(p, [&](int item) {
      const auto& t = om.faces[outer.faces[static_cast<std::size_t>(item)]];
      const Vec3 q = closest_point_on_triangle(p, om.vertices[static_cast<std::size_t>(t[0])],
                                               om.vertices[static_cast<std::size_t>(t[1])],
                                               om.vertices[static_cast<std::size_t>(t[2])]);
      return (q - p).norm();
    });
  }
  return out;
}

void write_ply(const TriMesh& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  const bool scalar = m.vertex_scalar.size() == m.vertices.size() && !m.vertices.empty();
  os << "ply\nformat ascii 1.0\nelement vertex " << m.vertices.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  if (scalar) os << "property float " << m.scalar_name << "\n";
  os << "element face " << m.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  char buf[128];
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    const Vec3& v = m.vertices[i];
    int n = std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f", v.x(), v.y(), v.z());
    os.write(buf, n);
    if (scalar) {
      n = std::snprintf(buf, sizeof(buf), " %.6f", m.vertex_scalar[i]);
      os.write(buf, n);
    }
    os << "\n";
  }
  for (const auto& t : m.faces) os << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!os) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

TriMesh mirror_lr(const TriMesh& m, const Grid& grid) {
  const Affine4 to_voxel = grid.affine.inverse();
  const double axis = (grid.dims[0] - 1) / 2.0;
  TriMesh out = m;
  for (auto& v : out.vertices) {
    Vec3 p = to_voxel.apply(v);
    p[0] = 2.0 * axis - p[0];
    v = grid.affine.apply(p);
  }
  for (auto& t : out.faces) std::swap(t[1], t[2]);
  return out;
}

}  // namespace cmt
