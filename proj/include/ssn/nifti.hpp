#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ssn/tensor.hpp"
#include "ssn/volume.hpp"

namespace ssn {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

namespace detail {

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

template <typename U>
U byteswap_int(U v) {
  U out;
  auto* s = reinterpret_cast<const unsigned char*>(&v);
  auto* d = reinterpret_cast<unsigned char*>(&out);
  for (std::size_t i = 0; i < sizeof(U); ++i) d[i] = s[sizeof(U) - 1 - i];
  return out;
}

struct NiftiReader {
  const unsigned char* bytes;
  bool swapped;

  std::int16_t i16(std::size_t off) const {
    std::int16_t v;
    std::memcpy(&v, bytes + off, 2);
    return swapped ? byteswap_int(v) : v;
  }
  std::int32_t i32(std::size_t off) const {
    std::int32_t v;
    std::memcpy(&v, bytes + off, 4);
    return swapped ? byteswap_int(v) : v;
  }
  float f32(std::size_t off) const {
    std::uint32_t v;
    std::memcpy(&v, bytes + off, 4);
    if (swapped) v = byteswap_int(v);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
};

}  // namespace detail

/// Reads an uncompressed single-file NIfTI-1 (.nii). Supported voxel types:
/// int16 (code 4), float32 (16), float64 (64); everything converts to
/// float32. dim[1]=W, dim[2]=H, dim[3]=D under this library's (D,H,W) axis
/// order, which keeps the on-disk voxel order identical to the in-memory one.
inline Volume read_nifti(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open NIfTI file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < detail::kNiftiHeaderSize)
    throw FormatError("NIfTI file shorter than its 348-byte header: " + path);

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swapped = false;
  if (sizeof_hdr != 348) {
    if (detail::byteswap_int(sizeof_hdr) == 348)
      swapped = true;
    else
      throw FormatError("bad sizeof_hdr field (not 348 in either byte order): " +
                        path);
  }
  detail::NiftiReader rd{bytes.data(), swapped};

  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0)
    throw FormatError("bad magic field (want \"n+1\" single-file NIfTI-1): " +
                      path);

  const std::int16_t ndim = rd.i16(40);
  if (ndim < 1 || ndim > 7)
    throw FormatError("bad dim[0] field " + std::to_string(ndim) + ": " + path);
  std::size_t dims[3] = {1, 1, 1};
  for (int i = 1; i <= 3 && i <= ndim; ++i) {
    const std::int16_t e = rd.i16(40 + 2 * i);
    if (e < 1)
      throw FormatError("bad dim[" + std::to_string(i) + "] field " +
                        std::to_string(e) + ": " + path);
    dims[i - 1] = static_cast<std::size_t>(e);
  }
  for (int i = 4; i <= ndim; ++i)
    if (rd.i16(40 + 2 * i) > 1)
      throw FormatError("dim[" + std::to_string(i) +
                        "] field > 1: only 3-D volumes are supported: " + path);

  const std::int16_t datatype = rd.i16(70);
  const std::int16_t bitpix = rd.i16(72);
  std::size_t voxel_bytes;
  switch (datatype) {
    case 4: voxel_bytes = 2; break;    // int16
    case 16: voxel_bytes = 4; break;   // float32
    case 64: voxel_bytes = 8; break;   // float64
    default:
      throw FormatError("unsupported datatype field (code " +
                        std::to_string(datatype) + "): " + path);
  }
  if (static_cast<std::size_t>(bitpix) != voxel_bytes * 8)
    throw FormatError("bitpix field disagrees with datatype: " + path);

  const float vox_offset_f = rd.f32(108);
  if (!(vox_offset_f >= 348.0f))
    throw FormatError("bad vox_offset field: " + path);
  const std::size_t vox_offset = static_cast<std::size_t>(vox_offset_f);

  Volume vol;
  vol.w = dims[0];
  vol.h = dims[1];
  vol.d = dims[2];
  for (int i = 1; i <= 3; ++i) {
    const double p = static_cast<double>(rd.f32(76 + 4 * i));
    vol.spacing[3 - i] = p > 0.0 ? p : 1.0;
  }

  const std::size_t n = vol.numel();
  if (bytes.size() < vox_offset + n * voxel_bytes)
    throw FormatError("truncated voxel data: " + path);
  vol.data.resize(n);
  const unsigned char* src = bytes.data() + vox_offset;
  for (std::size_t i = 0; i < n; ++i) {
    switch (datatype) {
      case 4: {
        std::int16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        if (swapped) v = detail::byteswap_int(v);
        vol.data[i] = static_cast<float>(v);
        break;
      }
      case 16: {
        std::uint32_t v;
        std::memcpy(&v, src + 4 * i, 4);
        if (swapped) v = detail::byteswap_int(v);
        std::memcpy(&vol.data[i], &v, 4);
        break;
      }
      case 64: {
        std::uint64_t v;
        std::memcpy(&v, src + 8 * i, 8);
        if (swapped) v = detail::byteswap_int(v);
        double dv;
        std::memcpy(&dv, &v, 8);
        vol.data[i] = static_cast<float>(dv);
        break;
      }
    }
  }
  return vol;
}

/// Writes a float32 single-file NIfTI-1 with vox_offset 352.
inline void write_nifti(const Volume& vol, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open NIfTI file for writing: " + path);

  unsigned char hdr[detail::kNiftiVoxOffset] = {0};
  auto put_i32 = [&](std::size_t off, std::int32_t v) {
    std::memcpy(hdr + off, &v, 4);
  };
  auto put_i16 = [&](std::size_t off, std::int16_t v) {
    std::memcpy(hdr + off, &v, 2);
  };
  auto put_f32 = [&](std::size_t off, float v) { std::memcpy(hdr + off, &v, 4); };

  put_i32(0, 348);
  put_i16(40, 3);  // dim[0]
  put_i16(42, static_cast<std::int16_t>(vol.w));
  put_i16(44, static_cast<std::int16_t>(vol.h));
  put_i16(46, static_cast<std::int16_t>(vol.d));
  for (std::size_t i = 4; i <= 7; ++i)
    put_i16(40 + 2 * i, 1);
  put_i16(70, 16);  // datatype float32
  put_i16(72, 32);  // bitpix
  put_f32(76, 1.0f);  // pixdim[0]
  put_f32(80, static_cast<float>(vol.spacing[2]));
  put_f32(84, static_cast<float>(vol.spacing[1]));
  put_f32(88, static_cast<float>(vol.spacing[0]));
  put_f32(108, static_cast<float>(detail::kNiftiVoxOffset));
  hdr[123] = 2;  // xyzt_units: millimetres
  std::memcpy(hdr + 344, "n+1\0", 4);

  out.write(reinterpret_cast<const char*>(hdr), detail::kNiftiVoxOffset);
  out.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
  if (!out) throw FormatError("NIfTI write failed: " + path);
}

}  // namespace ssn
