#include "cmt/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "cmt/standardize.hpp"
#include "spatial.hpp"

namespace cmt {
namespace {

LabelMap foreground(const LabelMap& m) {
  LabelMap out(m.grid(), m.schema());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] != 0 ? 1 : 0;
  return out;
}

std::vector<double> nearest_distances(const std::vector<Vec3>& from, const std::vector<Vec3>& to, double cell) {
  const detail::BinIndex index(to, to, cell);
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& p : from) d.push_back(index.nearest(p, [&](int i) { return (to[static_cast<std::size_t>(i)] - p).norm(); }));
  return d;
}

}  // namespace

double dsc(const LabelMap& a, const LabelMap& b, std::uint8_t label) {
  require_same_grid(a.grid(), b.grid(), "dsc");
  std::size_t na = 0;
  std::size_t nb = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] == label;
    const bool y = b[i] == label;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dsc(const LabelMap& a, const LabelMap& b) {
  require_same_grid(a.grid(), b.grid(), "dsc");
  return dsc(foreground(a), foreground(b), 1);
}

std::vector<Vec3> boundary_points(const LabelMap& m, std::uint8_t label) {
  const Grid& g = m.grid();
  std::vector<Vec3> out;
  const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (m.at(i, j, k) != label) continue;
        bool edge = false;
        for (const auto& o : off) {
          const int x = i + o[0];
          const int y = j + o[1];
          const int z = k + o[2];
          if (!g.in_bounds(x, y, z) || m.at(x, y, z) != label) {
            edge = true;
            break;
          }
        }
        if (edge) out.push_back(g.to_world(Vec3(i, j, k)));
      }
  return out;
}

double hd95(const LabelMap& a, const LabelMap& b, std::uint8_t label) {
  require_same_grid(a.grid(), b.grid(), "hd95");
  const auto pa = boundary_points(a, label);
  const auto pb = boundary_points(b, label);
  if (pa.empty() || pb.empty()) throw Error(ErrorCode::EmptyMask, "hd95 needs two nonempty masks");
  const double cell = 2.0 * a.grid().spacing().maxCoeff();
  auto d = nearest_distances(pa, pb, cell);
  const auto back = nearest_distances(pb, pa, cell);
  d.insert(d.end(), back.begin(), back.end());
  return percentile(std::move(d), 95.0);
}

double hd95(const LabelMap& a, const LabelMap& b) {
  require_same_grid(a.grid(), b.grid(), "hd95");
  return hd95(foreground(a), foreground(b), 1);
}

double relative_area_difference(double measured, double pseudo) {
  if (!(pseudo > 0.0)) throw Error(ErrorCode::ZeroPseudoArea, "pseudo-healthy area must be positive");
  return (measured - pseudo) / pseudo;
}

double relative_area_difference(const SurfacePatch& measured, const SurfacePatch& pseudo) {
  return relative_area_difference(measured.area, pseudo.area);
}

}  // namespace cmt
