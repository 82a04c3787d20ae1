#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmt/volume.hpp"

namespace cmt {

struct DeformationField;

/// NIfTI-1 datatype codes accepted by the reader.
enum class NiftiDatatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
  Int8 = 256,
  UInt16 = 512,
};

int datatype_size(NiftiDatatype dt);

/// Decoded NIfTI-1 header (the subset of fields this library interprets,
/// plus enough bookkeeping to re-encode it).
struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t intent_code = 0;
  NiftiDatatype datatype = NiftiDatatype::Float32;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0F;
  float scl_slope = 0.0F;
  float scl_inter = 0.0F;
  std::uint8_t xyzt_units = 0;
  std::string descrip;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0.0F;
  float quatern_c = 0.0F;
  float quatern_d = 0.0F;
  float qoffset_x = 0.0F;
  float qoffset_y = 0.0F;
  float qoffset_z = 0.0F;
  std::array<float, 4> srow_x{};
  std::array<float, 4> srow_y{};
  std::array<float, 4> srow_z{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};

  /// True when the source bytes were in the opposite byte order.
  bool byte_swapped = false;

  std::size_t voxel_count() const;
  bool operator==(const NiftiHeader&) const = default;
};

inline constexpr std::size_t kNiftiHeaderSize = 348;

NiftiHeader decode_header(std::span<const std::uint8_t> bytes);
/// Serializes a header; `swap_bytes` emits the non-native byte order.
std::vector<std::uint8_t> encode_header(const NiftiHeader& h, bool swap_bytes = false);

/// sform if sform_code > 0, else qform if qform_code > 0, else diag(pixdim).
Affine4 affine_from_header(const NiftiHeader& h);

struct ImageRead {
  ImageVolume volume;
  NiftiHeader header;
};
struct LabelRead {
  LabelMap labels;
  NiftiHeader header;
};

ImageRead read_volume(const std::filesystem::path& path);
/// Integer-valued volume normalized to uint8 labels.
LabelRead read_labels(const std::filesystem::path& path, const LabelSchema& schema = LabelSchema::knee_default());

/// Writes float32 data, sform_code 1, qform_code 0. ".gz" suffix selects gzip.
void write_volume(const ImageVolume& v, const std::filesystem::path& path);
void write_volume(const ScalarField& v, const std::filesystem::path& path);
void write_labels(const LabelMap& labels, const std::filesystem::path& path);

/// 4D field: three spatial axes plus a 3-component axis, voxel units.
void write_field(const DeformationField& field, const std::filesystem::path& path);
DeformationField read_field(const std::filesystem::path& path);

}  // namespace cmt
