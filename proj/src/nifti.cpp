#include "cmt/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "cmt/warp.hpp"

namespace cmt {
namespace {

#pragma pack(push, 1)
struct RawHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(RawHeader) == kNiftiHeaderSize, "NIfTI-1 header must be 348 bytes");

template <class T>
void swap_in_place(T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<std::uint8_t, sizeof(T)> b{};
  std::memcpy(b.data(), &value, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&value, b.data(), sizeof(T));
}

template <class T, std::size_t N>
void swap_array(T (&arr)[N]) {
  for (auto& v : arr) swap_in_place(v);
}

void swap_header(RawHeader& h) {
  swap_in_place(h.sizeof_hdr);
  swap_in_place(h.extents);
  swap_in_place(h.session_error);
  swap_array(h.dim);
  swap_in_place(h.intent_p1);
  swap_in_place(h.intent_p2);
  swap_in_place(h.intent_p3);
  swap_in_place(h.intent_code);
  swap_in_place(h.datatype);
  swap_in_place(h.bitpix);
  swap_in_place(h.slice_start);
  swap_array(h.pixdim);
  swap_in_place(h.vox_offset);
  swap_in_place(h.scl_slope);
  swap_in_place(h.scl_inter);
  swap_in_place(h.slice_end);
  swap_in_place(h.cal_max);
  swap_in_place(h.cal_min);
  swap_in_place(h.slice_duration);
  swap_in_place(h.toffset);
  swap_in_place(h.glmax);
  swap_in_place(h.glmin);
  swap_in_place(h.qform_code);
  swap_in_place(h.sform_code);
  swap_in_place(h.quatern_b);
  swap_in_place(h.quatern_c);
  swap_in_place(h.quatern_d);
  swap_in_place(h.qoffset_x);
  swap_in_place(h.qoffset_y);
  swap_in_place(h.qoffset_z);
  swap_array(h.srow_x);
  swap_array(h.srow_y);
  swap_array(h.srow_z);
}

bool is_supported(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: case 256: case 512: return true;
    default: return false;
  }
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// gzread passes uncompressed files through unchanged.
std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int errnum = 0;
      const std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw Error(ErrorCode::Io, "read failed for " + path.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (has_suffix(path.string(), ".gz")) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (f == nullptr) throw Error(ErrorCode::Io, "cannot create " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) {
      throw Error(ErrorCode::Io, "write failed for " + path.string());
    }
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

template <class T>
double load_element(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) swap_in_place(v);
  return static_cast<double>(v);
}

struct RawVolume {
  NiftiHeader header;
  std::vector<double> values;
};

RawVolume decode_file(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_all(path);
  if (bytes.size() < kNiftiHeaderSize) {
    throw Error(ErrorCode::Truncated, path.string() + " is shorter than a NIfTI-1 header");
  }
  RawVolume out;
  out.header = decode_header(std::span(bytes).first(kNiftiHeaderSize));
  const NiftiHeader& h = out.header;
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const auto esize = static_cast<std::size_t>(datatype_size(h.datatype));
  const std::size_t n = h.voxel_count();
  if (bytes.size() < offset + n * esize) {
    throw Error(ErrorCode::Truncated, path.string() + ": expected " + std::to_string(offset + n * esize) +
                                          " bytes, found " + std::to_string(bytes.size()));
  }
  out.values.resize(n);
  const std::uint8_t* base = bytes.data() + offset;
  const bool sw = h.byte_swapped;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = base + i * esize;
    switch (h.datatype) {
      case NiftiDatatype::UInt8: out.values[i] = load_element<std::uint8_t>(p, sw); break;
      case NiftiDatatype::Int8: out.values[i] = load_element<std::int8_t>(p, sw); break;
      case NiftiDatatype::Int16: out.values[i] = load_element<std::int16_t>(p, sw); break;
      case NiftiDatatype::UInt16: out.values[i] = load_element<std::uint16_t>(p, sw); break;
      case NiftiDatatype::Int32: out.values[i] = load_element<std::int32_t>(p, sw); break;
      case NiftiDatatype::Float32: out.values[i] = load_element<float>(p, sw); break;
      case NiftiDatatype::Float64: out.values[i] = load_element<double>(p, sw); break;
    }
  }
  const double slope = h.scl_slope;
  const double inter = h.scl_inter;
  if (std::isfinite(slope) && slope != 0.0 && !(slope == 1.0 && inter == 0.0)) {
    for (double& v : out.values) v = v * slope + inter;
  }
  return out;
}

Grid spatial_grid(const NiftiHeader& h) {
  Grid g;
  for (int a = 0; a < 3; ++a) g.dims[a] = a < h.dim[0] ? h.dim[a + 1] : 1;
  g.affine = affine_from_header(h);
  return g;
}

NiftiHeader header_for(const Grid& g, NiftiDatatype dt, int components) {
  NiftiHeader h;
  h.dim = {static_cast<std::int16_t>(components > 1 ? 4 : 3),
           static_cast<std::int16_t>(g.dims[0]),
           static_cast<std::int16_t>(g.dims[1]),
           static_cast<std::int16_t>(g.dims[2]),
           static_cast<std::int16_t>(components),
           1,
           1,
           1};
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] > std::numeric_limits<std::int16_t>::max() || g.dims[a] < 1) {
      throw Error(ErrorCode::InvalidArgument, "extent not representable in NIfTI-1");
    }
  }
  h.datatype = dt;
  h.bitpix = static_cast<std::int16_t>(8 * datatype_size(dt));
  const Vec3 sp = g.spacing();
  h.pixdim = {1.0F, static_cast<float>(sp[0]), static_cast<float>(sp[1]), static_cast<float>(sp[2]), 1.0F, 1.0F, 1.0F,
              1.0F};
  h.xyzt_units = 2;  // mm
  h.sform_code = 1;
  h.qform_code = 0;
  const Mat4& m = g.affine.matrix();
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(m(0, c));
    h.srow_y[c] = static_cast<float>(m(1, c));
    h.srow_z[c] = static_cast<float>(m(2, c));
  }
  return h;
}

template <class T>
void append_values(std::vector<std::uint8_t>& bytes, std::span<const T> values) {
  const std::size_t start = bytes.size();
  bytes.resize(start + values.size() * sizeof(T));
  std::memcpy(bytes.data() + start, values.data(), values.size() * sizeof(T));
}

std::vector<std::uint8_t> file_prefix(const NiftiHeader& h) {
  std::vector<std::uint8_t> bytes = encode_header(h);
  bytes.resize(static_cast<std::size_t>(h.vox_offset), 0);  // 4-byte empty extension block
  return bytes;
}

}  // namespace

int datatype_size(NiftiDatatype dt) {
  switch (dt) {
    case NiftiDatatype::UInt8:
    case NiftiDatatype::Int8: return 1;
    case NiftiDatatype::Int16:
    case NiftiDatatype::UInt16: return 2;
    case NiftiDatatype::Int32:
    case NiftiDatatype::Float32: return 4;
    case NiftiDatatype::Float64: return 8;
  }
  throw Error(ErrorCode::UnsupportedDatatype, "unknown datatype");
}

std::size_t NiftiHeader::voxel_count() const {
  std::size_t n = 1;
  for (int a = 1; a <= dim[0]; ++a) n *= static_cast<std::size_t>(dim[a]);
  return n;
}

NiftiHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kNiftiHeaderSize) {
    throw Error(ErrorCode::WrongSize, "header must be 348 bytes, got " + std::to_string(bytes.size()));
  }
  RawHeader raw;
  std::memcpy(&raw, bytes.data(), kNiftiHeaderSize);
  bool swapped = false;
  if (raw.sizeof_hdr != 348) {
    std::int32_t s = raw.sizeof_hdr;
    swap_in_place(s);
    if (s != 348) throw Error(ErrorCode::WrongSize, "sizeof_hdr is not 348 in either byte order");
    swap_header(raw);
    swapped = true;
  }
  if (std::memcmp(raw.magic, "ni1\0", 4) == 0) {
    throw Error(ErrorCode::BadMagic, "detached-header (ni1) files are not supported");
  }
  if (std::memcmp(raw.magic, "n+1\0", 4) != 0) throw Error(ErrorCode::BadMagic, "magic is not n+1");
  if (raw.dim[0] < 1 || raw.dim[0] > 7) throw Error(ErrorCode::WrongSize, "dim[0] outside [1,7]");
  for (int a = 1; a <= raw.dim[0]; ++a) {
    if (raw.dim[a] < 1) throw Error(ErrorCode::WrongSize, "non-positive extent in dim");
  }
  if (!is_supported(raw.datatype)) {
    throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(raw.datatype));
  }

  NiftiHeader h;
  h.sizeof_hdr = raw.sizeof_hdr;
  std::copy(std::begin(raw.dim), std::end(raw.dim), h.dim.begin());
  h.intent_code = raw.intent_code;
  h.datatype = static_cast<NiftiDatatype>(raw.datatype);
  h.bitpix = raw.bitpix;
  std::copy(std::begin(raw.pixdim), std::end(raw.pixdim), h.pixdim.begin());
  h.vox_offset = raw.vox_offset < 352.0F ? 352.0F : raw.vox_offset;
  h.scl_slope = raw.scl_slope;
  h.scl_inter = raw.scl_inter;
  h.xyzt_units = static_cast<std::uint8_t>(raw.xyzt_units);
  h.descrip.assign(raw.descrip, strnlen(raw.descrip, sizeof(raw.descrip)));
  h.qform_code = raw.qform_code;
  h.sform_code = raw.sform_code;
  h.quatern_b = raw.quatern_b;
  h.quatern_c = raw.quatern_c;
  h.quatern_d = raw.quatern_d;
  h.qoffset_x = raw.qoffset_x;
  h.qoffset_y = raw.qoffset_y;
  h.qoffset_z = raw.qoffset_z;
  std::copy(std::begin(raw.srow_x), std::end(raw.srow_x), h.srow_x.begin());
  std::copy(std::begin(raw.srow_y), std::end(raw.srow_y), h.srow_y.begin());
  std::copy(std::begin(raw.srow_z), std::end(raw.srow_z), h.srow_z.begin());
  std::copy(std::begin(raw.magic), std::end(raw.magic), h.magic.begin());
  h.byte_swapped = swapped;
  return h;
}

std::vector<std::uint8_t> encode_header(const NiftiHeader& h, bool swap_bytes) {
  RawHeader raw;
  std::memset(&raw, 0, sizeof(raw));
  raw.sizeof_hdr = 348;
  raw.regular = 'r';
  std::copy(h.dim.begin(), h.dim.end(), std::begin(raw.dim));
  raw.intent_code = h.intent_code;
  raw.datatype = static_cast<std::int16_t>(h.datatype);
  raw.bitpix = h.bitpix;
  std::copy(h.pixdim.begin(), h.pixdim.end(), std::begin(raw.pixdim));
  raw.vox_offset = h.vox_offset;
  raw.scl_slope = h.scl_slope;
  raw.scl_inter = h.scl_inter;
  raw.xyzt_units = static_cast<char>(h.xyzt_units);
  std::memcpy(raw.descrip, h.descrip.data(), std::min(h.descrip.size(), sizeof(raw.descrip) - 1));
  raw.qform_code = h.qform_code;
  raw.sform_code = h.sform_code;
  raw.quatern_b = h.quatern_b;
  raw.quatern_c = h.quatern_c;
  raw.quatern_d = h.quatern_d;
  raw.qoffset_x = h.qoffset_x;
  raw.qoffset_y = h.qoffset_y;
  raw.qoffset_z = h.qoffset_z;
  std::copy(h.srow_x.begin(), h.srow_x.end(), std::begin(raw.srow_x));
  std::copy(h.srow_y.begin(), h.srow_y.end(), std::begin(raw.srow_y));
  std::copy(h.srow_z.begin(), h.srow_z.end(), std::begin(raw.srow_z));
  std::copy(h.magic.begin(), h.magic.end(), std::begin(raw.magic));
  if (swap_bytes) swap_header(raw);
  std::vector<std::uint8_t> out(kNiftiHeaderSize);
  std::memcpy(out.data(), &raw, kNiftiHeaderSize);
  return out;
}

Affine4 affine_from_header(const NiftiHeader& h) {
  if (h.sform_code > 0) {
    Mat4 m = Mat4::Identity();
    for (int c = 0; c < 4; ++c) {
      m(0, c) = h.srow_x[c];
      m(1, c) = h.srow_y[c];
      m(2, c) = h.srow_z[c];
    }
    return Affine4(m);
  }
  const auto spacing = [&](int a) {
    const double s = h.pixdim[a];
    return s > 0.0 ? s : 1.0;
  };
  if (h.qform_code > 0) {
    const double b = h.quatern_b;
    const double c = h.quatern_c;
    const double d = h.quatern_d;
    const double s = b * b + c * c + d * d;
    if (s > 1.0 + 1e-5) throw Error(ErrorCode::InvalidQuaternion, "b^2+c^2+d^2 exceeds 1");
    const double a = s >= 1.0 ? 0.0 : std::sqrt(1.0 - s);
    Mat3 r;
    r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),  //
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),   //
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    const double qfac = h.pixdim[0] < 0.0F ? -1.0 : 1.0;
    const Vec3 scale(spacing(1), spacing(2), qfac * spacing(3));
    return Affine4::from_linear(r * scale.asDiagonal(), Vec3(h.qoffset_x, h.qoffset_y, h.qoffset_z));
  }
  return Affine4::diagonal(Vec3(spacing(1), spacing(2), spacing(3)));
}

ImageRead read_volume(const std::filesystem::path& path) {
  RawVolume raw = decode_file(path);
  Grid g = spatial_grid(raw.header);
  const std::size_t n = g.size();
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = raw.values[i];
    if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max()) {
      throw Error(ErrorCode::RejectedNonFinite, path.string() + ": voxel value not representable as float32");
    }
    data[i] = static_cast<float>(v);
  }
  return {ImageVolume(std::move(g), std::move(data)), raw.header};
}

LabelRead read_labels(const std::filesystem::path& path, const LabelSchema& schema) {
  RawVolume raw = decode_file(path);
  Grid g = spatial_grid(raw.header);
  const std::size_t n = g.size();
  std::vector<std::uint8_t> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = raw.values[i];
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
      throw Error(ErrorCode::UnsupportedDatatype, path.string() + ": label value outside uint8 range");
    }
    data[i] = static_cast<std::uint8_t>(v);
  }
  return {LabelMap(std::move(g), std::move(data), schema), raw.header};
}

void write_volume(const ImageVolume& v, const std::filesystem::path& path) {
  for (float x : v.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::RejectedNonFinite, "volume contains NaN or Inf");
  }
  const NiftiHeader h = header_for(v.grid(), NiftiDatatype::Float32, 1);
  std::vector<std::uint8_t> bytes = file_prefix(h);
  append_values(bytes, v.data());
  write_all(path, bytes);
}

void write_volume(const ScalarField& v, const std::filesystem::path& path) {
  write_volume(volume_cast<float>(v), path);
}

void write_labels(const LabelMap& labels, const std::filesystem::path& path) {
  const NiftiHeader h = header_for(labels.grid(), NiftiDatatype::UInt8, 1);
  std::vector<std::uint8_t> bytes = file_prefix(h);
  append_values(bytes, labels.data());
  write_all(path, bytes);
}

void write_field(const DeformationField& field, const std::filesystem::path& path) {
  NiftiHeader h = header_for(field.grid, NiftiDatatype::Float32, 3);
  h.intent_code = 1007;  // NIFTI_INTENT_VECTOR
  h.descrip = "displacement, voxel units, component axis 4";
  const std::size_t n = field.grid.size();
  std::vector<float> values(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double x = field.data[i][c];
      if (!std::isfinite(x)) throw Error(ErrorCode::RejectedNonFinite, "field contains NaN or Inf");
      values[static_cast<std::size_t>(c) * n + i] = static_cast<float>(x);
    }
  }
  std::vector<std::uint8_t> bytes = file_prefix(h);
  append_values(bytes, std::span<const float>(values));
  write_all(path, bytes);
}

DeformationField read_field(const std::filesystem::path& path) {
  RawVolume raw = decode_file(path);
  const auto& d = raw.header.dim;
  const bool four_d = d[0] == 4 && d[4] == 3;
  const bool five_d = d[0] == 5 && d[4] == 1 && d[5] == 3;
  if (!four_d && !five_d) throw Error(ErrorCode::WrongSize, path.string() + " is not a 3-component field");
  DeformationField f(spatial_grid(raw.header));
  const std::size_t n = f.grid.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) f.data[i][c] = raw.values[static_cast<std::size_t>(c) * n + i];
  }
  return f;
}

}  // namespace cmt
