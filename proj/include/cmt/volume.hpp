#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmt/affine.hpp"
#include "cmt/error.hpp"

namespace cmt {

using Extents = std::array<int, 3>;

/// Sampling lattice of a volume: extents plus voxel-to-world affine.
/// Data is stored x-fastest.
struct Grid {
  Extents dims{0, 0, 0};
  Affine4 affine;

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  Vec3 spacing() const { return affine.spacing(); }
  double voxel_volume() const { return std::abs(affine.linear().determinant()); }
  Vec3 to_world(const Vec3& ijk) const { return affine.apply(ijk); }
  Vec3 to_voxel(const Vec3& world) const { return affine.inverse().apply(world); }

  /// Equal extents and affine entries within tol.
  bool same_as(const Grid& other, double tol = 1e-5) const {
    return dims == other.dims && affine.approx_equal(other.affine, tol);
  }
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_as(b)) {
    throw Error(ErrorCode::GridMismatch, std::string(what) + ": grids differ");
  }
}

template <class T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Grid grid, T fill = T{}) : grid_(std::move(grid)), data_(grid_.size(), fill) {}
  Volume(Grid grid, std::vector<T> data) : grid_(std::move(grid)), data_(std::move(data)) {
    if (data_.size() != grid_.size()) {
      throw Error(ErrorCode::WrongSize, "voxel buffer does not match grid extents");
    }
  }

  const Grid& grid() const noexcept { return grid_; }
  void set_affine(const Affine4& a) { grid_.affine = a; }
  const Extents& dims() const noexcept { return grid_.dims; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int i, int j, int k) { return data_[grid_.index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data_[grid_.index(i, j, k)]; }

  bool operator==(const Volume& other) const {
    return grid_.dims == other.grid_.dims && grid_.affine.matrix() == other.grid_.affine.matrix() &&
           data_ == other.data_;
  }

 private:
  Grid grid_;
  std::vector<T> data_;
};

using ImageVolume = Volume<float>;
/// Double-precision scalar grid used inside the optimizer.
using ScalarField = Volume<double>;

template <class To, class From>
Volume<To> volume_cast(const Volume<From>& v) {
  std::vector<To> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<To>(v[i]);
  return Volume<To>(v.grid(), std::move(out));
}

/// Name -> integer mapping for anatomical labels.
class LabelSchema {
 public:
  static constexpr const char* kFemur = "femur";
  static constexpr const char* kFemoralCartilage = "femoral_cartilage";
  static constexpr const char* kTibia = "tibia";
  static constexpr const char* kTibialCartilage = "tibial_cartilage";
  static constexpr const char* kMedialTibialCartilage = "medial_tibial_cartilage";
  static constexpr const char* kLateralTibialCartilage = "lateral_tibial_cartilage";

  /// femur=1, FC=2, tibia=3, TC=4 (OAI-ZIB convention), MTC=5, LTC=6.
  static LabelSchema knee_default();

  LabelSchema() = default;
  explicit LabelSchema(std::map<std::string, int> mapping);

  int value(const std::string& name) const;
  std::optional<std::string> name_of(int value) const;
  bool contains_value(int value) const { return name_of(value).has_value(); }
  const std::map<std::string, int>& mapping() const noexcept { return mapping_; }
  void set(const std::string& name, int value);

  bool operator==(const LabelSchema&) const = default;

 private:
  void validate() const;
  std::map<std::string, int> mapping_;
};

class LabelMap : public Volume<std::uint8_t> {
 public:
  LabelMap() = default;
  LabelMap(Grid grid, LabelSchema schema = LabelSchema::knee_default())
      : Volume<std::uint8_t>(std::move(grid), 0), schema_(std::move(schema)) {}
  LabelMap(Grid grid, std::vector<std::uint8_t> data, LabelSchema schema = LabelSchema::knee_default())
      : Volume<std::uint8_t>(std::move(grid), std::move(data)), schema_(std::move(schema)) {}
  LabelMap(Volume<std::uint8_t> v, LabelSchema schema)
      : Volume<std::uint8_t>(std::move(v)), schema_(std::move(schema)) {}

  const LabelSchema& schema() const noexcept { return schema_; }
  void set_schema(LabelSchema s) { schema_ = std::move(s); }

  std::size_t count(std::uint8_t label) const;
  /// Sorted distinct nonzero values present in the data.
  std::vector<std::uint8_t> present_labels() const;
  /// Binary map (value 1) of voxels carrying `label`.
  LabelMap indicator(std::uint8_t label) const;

 private:
  LabelSchema schema_ = LabelSchema::knee_default();
};

}  // namespace cmt
