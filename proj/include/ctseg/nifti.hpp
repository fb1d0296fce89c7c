#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ctseg/volume.hpp"

namespace ctseg {

namespace nifti {

// NIfTI-1 header, 348 bytes. Field offsets per the reference definition.
#pragma pack(push, 1)
struct Header {
  int32_t sizeof_hdr;     // 0: must be 348
  char data_type[10];     // 4
  char db_name[18];       // 14
  int32_t extents;        // 32
  int16_t session_error;  // 36
  char regular;           // 38
  char dim_info;          // 39
  int16_t dim[8];         // 40
  float intent_p1;        // 56
  float intent_p2;        // 60
  float intent_p3;        // 64
  int16_t intent_code;    // 68
  int16_t datatype;       // 70
  int16_t bitpix;         // 72
  int16_t slice_start;    // 74
  float pixdim[8];        // 76
  float vox_offset;       // 108
  float scl_slope;        // 112
  float scl_inter;        // 116
  int16_t slice_end;      // 120
  char slice_code;        // 122
  char xyzt_units;        // 123
  float cal_max;          // 124
  float cal_min;          // 128
  float slice_duration;   // 132
  float toffset;          // 136
  int32_t glmax;          // 140
  int32_t glmin;          // 144
  char descrip[80];       // 148
  char aux_file[24];      // 228
  int16_t qform_code;     // 252
  int16_t sform_code;     // 254
  float quatern_b;        // 256
  float quatern_c;        // 260
  float quatern_d;        // 264
  float qoffset_x;        // 268
  float qoffset_y;        // 272
  float qoffset_z;        // 276
  float srow_x[4];        // 280
  float srow_y[4];        // 292
  float srow_z[4];        // 304
  char intent_name[16];   // 320
  char magic[4];          // 344: "n+1\0"
};
#pragma pack(pop)
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t DT_UINT8 = 2;
constexpr int16_t DT_INT16 = 4;
constexpr int16_t DT_FLOAT32 = 16;

// Direction columns (our LPS convention) from the header. sform wins when
// sform_code > 0, else the qform quaternion; anything else is unsupported.
inline std::array<double, 9> direction_from_header(const Header& h) {
  std::array<double, 9> ras{};  // column c = RAS direction of voxel axis c
  if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int c = 0; c < 3; ++c) {
      double norm = 0;
      for (int r = 0; r < 3; ++r) norm += rows[r][c] * rows[r][c];
      norm = std::sqrt(norm);
      if (norm <= 0)
        throw unsupported_format_error("NIfTI: srow column " + std::to_string(c) + " is zero");
      for (int r = 0; r < 3; ++r) ras[static_cast<size_t>(r * 3 + c)] = rows[r][c] / norm;
    }
  } else if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double sq = 1.0 - (b * b + c * c + d * d);
    const double a = sq < 0 ? 0.0 : std::sqrt(sq);
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    ras = {a * a + b * b - c * c - d * d, 2 * (b * c - a * d),       2 * (b * d + a * c) * qfac,
           2 * (b * c + a * d),           a * a + c * c - b * b - d * d, 2 * (c * d - a * b) * qfac,
           2 * (b * d - a * c),           2 * (c * d + a * b),       (a * a + d * d - b * b - c * c) * qfac};
  } else {
    throw unsupported_format_error(
        "NIfTI: neither sform_code nor qform_code is set (sform_code = 0, qform_code = 0)");
  }
  // RAS -> LPS: negate the x and y patient components
  for (int c = 0; c < 3; ++c) {
    ras[static_cast<size_t>(0 * 3 + c)] = -ras[static_cast<size_t>(0 * 3 + c)];
    ras[static_cast<size_t>(1 * 3 + c)] = -ras[static_cast<size_t>(1 * 3 + c)];
  }
  return ras;
}

}  // namespace nifti

struct NiftiVolume {
  Volume volume;
  std::vector<char> header_bytes;  // original 348-byte header
};

// Reads a single-file uncompressed NIfTI-1 volume. Accepted datatypes:
// uint8, int16, float32. Import only.
inline NiftiVolume read_nifti(const std::filesystem::path& path, VolumeKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open NIfTI file: " + path.string());
  nifti::Header h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!in) throw unsupported_format_error("NIfTI: file shorter than the 348-byte header");
  if (h.sizeof_hdr != 348) {
    if (h.sizeof_hdr == 1543569408)
      throw unsupported_format_error("NIfTI: byte-swapped file (sizeof_hdr), not supported");
    throw unsupported_format_error("NIfTI: sizeof_hdr = " + std::to_string(h.sizeof_hdr) +
                                   ", expected 348");
  }
  if (std::strncmp(h.magic, "n+1", 4) != 0)
    throw unsupported_format_error("NIfTI: magic is not \"n+1\" (single-file .nii required)");
  if (h.dim[0] < 3 || h.dim[0] > 7)
    throw unsupported_format_error("NIfTI: dim[0] = " + std::to_string(h.dim[0]));
  for (int d = 4; d <= h.dim[0]; ++d)
    if (h.dim[d] > 1)
      throw unsupported_format_error("NIfTI: dim[" + std::to_string(d) +
                                     "] > 1, only scalar 3D volumes are supported");

  const int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  if (nx < 1 || ny < 1 || nz < 1)
    throw unsupported_format_error("NIfTI: non-positive dim extents");
  size_t elem = 0;
  switch (h.datatype) {
    case nifti::DT_UINT8: elem = 1; break;
    case nifti::DT_INT16: elem = 2; break;
    case nifti::DT_FLOAT32: elem = 4; break;
    default:
      throw unsupported_format_error("NIfTI: datatype = " + std::to_string(h.datatype) +
                                     ", accepted: uint8 (2), int16 (4), float32 (16)");
  }
  const int64_t voxels = nx * ny * nz;
  const int64_t offset = static_cast<int64_t>(h.vox_offset);
  if (offset < 348)
    throw unsupported_format_error("NIfTI: vox_offset = " + std::to_string(offset));
  in.seekg(offset);
  std::vector<char> raw(static_cast<size_t>(voxels) * elem);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw unsupported_format_error("NIfTI: payload truncated");

  NiftiVolume out;
  out.header_bytes.assign(reinterpret_cast<const char*>(&h),
                          reinterpret_cast<const char*>(&h) + sizeof(h));
  Volume& v = out.volume;
  v.kind = kind;
  v.extents = {nx, ny, nz};  // our axis 0 is the NIfTI i axis
  for (int axis = 0; axis < 3; ++axis) {
    const float p = h.pixdim[axis + 1];
    v.spacing[static_cast<size_t>(axis)] = p > 0 ? p : 1.0;
  }
  v.direction = nifti::direction_from_header(h);

  const float slope = (h.scl_slope == 0.f) ? 1.f : h.scl_slope;
  const float inter = (h.scl_slope == 0.f) ? 0.f : h.scl_inter;
  auto value_at = [&](int64_t i) -> float {
    switch (h.datatype) {
      case nifti::DT_UINT8:
        return static_cast<float>(static_cast<uint8_t>(raw[static_cast<size_t>(i)]));
      case nifti::DT_INT16: {
        int16_t s;
        std::memcpy(&s, raw.data() + i * 2, 2);
        return static_cast<float>(s);
      }
      default: {
        float f;
        std::memcpy(&f, raw.data() + i * 4, 4);
        return f;
      }
    }
  };
  // NIfTI stores i fastest; our layout is z fastest.
  if (kind == VolumeKind::image) {
    v.image.resize(static_cast<size_t>(voxels));
    for (int64_t k = 0; k < nz; ++k)
      for (int64_t j = 0; j < ny; ++j)
        for (int64_t i = 0; i < nx; ++i)
          v.image[static_cast<size_t>(v.index(i, j, k))] =
              value_at(i + nx * (j + ny * k)) * slope + inter;
  } else {
    if (h.scl_slope != 0.f && (h.scl_slope != 1.f || h.scl_inter != 0.f))
      throw unsupported_format_error("NIfTI: scl_slope/scl_inter scaling on a mask");
    v.labels.resize(static_cast<size_t>(voxels));
    for (int64_t k = 0; k < nz; ++k)
      for (int64_t j = 0; j < ny; ++j)
        for (int64_t i = 0; i < nx; ++i) {
          const float raw_value = value_at(i + nx * (j + ny * k));
          v.labels[static_cast<size_t>(v.index(i, j, k))] = static_cast<uint8_t>(raw_value);
        }
  }
  return out;
}

// Writes a label volume as uint8 .nii, mirroring the grid fields of the
// original input header.
inline void write_nifti_mask(const std::filesystem::path& path, const Volume& mask,
                             const std::vector<char>& original_header) {
  require(mask.kind == VolumeKind::mask, "write_nifti_mask: mask volumes only");
  require(original_header.size() == sizeof(nifti::Header),
          "write_nifti_mask: need the original 348-byte header");
  nifti::Header h{};
  std::memcpy(&h, original_header.data(), sizeof(h));
  require(h.dim[1] == mask.extents[0] && h.dim[2] == mask.extents[1] &&
              h.dim[3] == mask.extents[2],
          "write_nifti_mask: mask extents do not match the source header");
  h.dim[0] = 3;
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = nifti::DT_UINT8;
  h.bitpix = 8;
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.scl_inter = 0.f;
  h.cal_max = 0.f;
  h.cal_min = 0.f;
  std::memcpy(h.magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char pad[4] = {0, 0, 0, 0};
  out.write(pad, 4);
  const int64_t nx = mask.extents[0], ny = mask.extents[1], nz = mask.extents[2];
  std::vector<uint8_t> payload(static_cast<size_t>(mask.voxel_count()));
  for (int64_t k = 0; k < nz; ++k)
    for (int64_t j = 0; j < ny; ++j)
      for (int64_t i = 0; i < nx; ++i)
        payload[static_cast<size_t>(i + nx * (j + ny * k))] =
            mask.labels[static_cast<size_t>(mask.index(i, j, k))];
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace ctseg
