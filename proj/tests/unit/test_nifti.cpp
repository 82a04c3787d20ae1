#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "cmt/nifti.hpp"
#include "cmt/warp.hpp"
#include "doctest.h"
#include "expect_error.hpp"
#include "phantoms.hpp"

namespace fs = std::filesystem;
using namespace cmt;
using namespace cmt::test;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cmt_test_nifti";
  fs::create_directories(dir);
  return dir / name;
}

template <class T>
void write_raw(const fs::path& p, NiftiHeader h, const std::vector<T>& values, bool swap) {
  std::vector<std::uint8_t> bytes = encode_header(h, swap);
  bytes.resize(static_cast<std::size_t>(h.vox_offset), 0);
  for (T v : values) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    bytes.insert(bytes.end(), b, b + sizeof(T));
  }
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

NiftiHeader header_3d(int nx, int ny, int nz, NiftiDatatype dt, int bitpix) {
  NiftiHeader h;
  h.dim = {3, static_cast<std::int16_t>(nx), static_cast<std::int16_t>(ny), static_cast<std::int16_t>(nz), 1, 1, 1, 1};
  h.datatype = dt;
  h.bitpix = static_cast<std::int16_t>(bitpix);
  h.pixdim = {1, 1, 1, 1, 1, 1, 1, 1};
  return h;
}

}  // namespace

TEST_CASE("header encode/decode round trip in both byte orders") {
  NiftiHeader h = header_3d(4, 5, 6, NiftiDatatype::Int16, 16);
  h.pixdim = {1, 0.5F, 0.75F, 2.0F, 1, 1, 1, 1};
  h.descrip = "phantom";
  h.sform_code = 1;
  h.srow_x = {0.5F, 0, 0, -10};
  h.srow_y = {0, 0.75F, 0, 4};
  h.srow_z = {0, 0, 2.0F, 8};
  for (bool swap : {false, true}) {
    const auto bytes = encode_header(h, swap);
    REQUIRE(bytes.size() == kNiftiHeaderSize);
    NiftiHeader back = decode_header(bytes);
    CHECK(back.byte_swapped == swap);
    back.byte_swapped = false;
    CHECK(back == h);
  }
}

TEST_CASE("bad magic and short files") {
  std::vector<std::uint8_t> bytes = encode_header(header_3d(2, 2, 2, NiftiDatatype::UInt8, 8));
  bytes[344] = 'x';
  CHECK(error_of([&] { decode_header(bytes); }) == ErrorCode::BadMagic);

  const fs::path p = scratch("short.nii");
  write_raw<std::uint8_t>(p, header_3d(4, 4, 4, NiftiDatatype::UInt8, 8), {1, 2, 3}, false);
  CHECK(error_of([&] { read_volume(p); }) == ErrorCode::Truncated);
}

TEST_CASE("integer data with scaling, swapped byte order") {
  NiftiHeader h = header_3d(3, 2, 1, NiftiDatatype::Int16, 16);
  h.scl_slope = 0.5F;
  h.scl_inter = -1.0F;
  const std::vector<std::int16_t> raw{-4, 0, 2, 100, -300, 7};
  const fs::path p = scratch("scaled.nii");
  write_raw(p, h, raw, true);
  const auto r = read_volume(p);
  REQUIRE(r.volume.size() == raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(r.volume[i] == doctest::Approx(raw[i] * 0.5 - 1.0));
}

TEST_CASE("qform affine when sform is absent") {
  NiftiHeader h = header_3d(2, 2, 2, NiftiDatatype::UInt8, 8);
  h.qform_code = 1;
  h.pixdim = {-1, 1.0F, 2.0F, 3.0F, 1, 1, 1, 1};
  // 90 degrees about z: quaternion (cos 45, 0, 0, sin 45)
  h.quatern_d = static_cast<float>(std::sqrt(0.5));
  h.qoffset_x = 5;
  const Affine4 a = affine_from_header(h);
  Mat3 expect;
  expect << 0, -2, 0, 1, 0, 0, 0, 0, -3;
  CHECK((a.linear() - expect).norm() < 1e-6);
  CHECK((a.offset() - Vec3(5, 0, 0)).norm() < 1e-6);

  h.quatern_b = 0.9F;
  h.quatern_c = 0.9F;
  CHECK(error_of([&] { affine_from_header(h); }) == ErrorCode::InvalidQuaternion);
}

TEST_CASE("float64 values outside float32 range are rejected") {
  const fs::path p = scratch("big.nii");
  write_raw<double>(p, header_3d(1, 1, 2, NiftiDatatype::Float64, 64), {1.0, 1e300}, false);
  CHECK(error_of([&] { read_volume(p); }) == ErrorCode::RejectedNonFinite);
}

TEST_CASE("unsupported datatype") {
  const fs::path p = scratch("complex.nii");
  write_raw<float>(p, header_3d(1, 1, 1, static_cast<NiftiDatatype>(32), 64), {1.0F, 2.0F}, false);
  CHECK(error_of([&] { read_volume(p); }) == ErrorCode::UnsupportedDatatype);
}

TEST_CASE("labels and fields round trip through gzip") {
  LabelMap m(box_grid({5, 4, 3}, Vec3(0.5, 0.5, 1.0), Vec3(1, 2, 3)));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(i % 5);
  const fs::path p = scratch("labels.nii.gz");
  write_labels(m, p);
  const auto r = read_labels(p);
  CHECK(r.labels.values() == m.values());
  CHECK(r.labels.grid().same_as(m.grid()));

  DeformationField f(cube_grid(4));
  std::mt19937 rng(1);
  std::normal_distribution<double> n;
  for (auto& v : f.data) v = Vec3(n(rng), n(rng), n(rng));
  const fs::path q = scratch("field.nii.gz");
  write_field(f, q);
  const DeformationField back = read_field(q);
  REQUIRE(back.size() == f.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, (back[i] - f[i]).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-6);
}

TEST_CASE("missing file is an Io error") {
  CHECK(error_of([] { read_volume("/nonexistent/none.nii"); }) == ErrorCode::Io);
}
