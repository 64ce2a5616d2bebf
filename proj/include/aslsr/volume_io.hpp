#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aslsr/volume.hpp"

namespace aslsr {

namespace detail {

// The fixed 348-byte NIfTI-1 header. Only the fields this pipeline reads are
// given real names; everything else is padding.
#pragma pack(push, 1)
struct Nifti1Header {
  int32_t sizeof_hdr;       // byte 0; must be 348
  char pad0[36];            // data_type .. dim_info
  int16_t dim[8];           // byte 40
  char pad1[14];            // intent_p1 .. intent_code
  int16_t datatype;         // byte 70
  int16_t bitpix;           // byte 72
  int16_t slice_start;      // byte 74
  float pixdim[8];          // byte 76
  float vox_offset;         // byte 108
  float scl_slope;          // byte 112
  float scl_inter;          // byte 116
  char pad2[28];            // slice_end .. glmin
  char descrip[80];         // byte 148
  char aux_file[24];        // byte 228
  int16_t qform_code;       // byte 252
  int16_t sform_code;       // byte 254
  float quatern[6];         // byte 256: quatern_b..d, qoffset_x..z
  float srow_x[4];          // byte 280
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];     // byte 328
  char magic[4];            // byte 344
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiDatatype : int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
};

template <class T>
void byteswap_inplace(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Nifti1Header& h) {
  byteswap_inplace(h.sizeof_hdr);
  for (auto& d : h.dim) byteswap_inplace(d);
  byteswap_inplace(h.datatype);
  byteswap_inplace(h.bitpix);
  for (auto& p : h.pixdim) byteswap_inplace(p);
  byteswap_inplace(h.vox_offset);
  byteswap_inplace(h.scl_slope);
  byteswap_inplace(h.scl_inter);
  byteswap_inplace(h.qform_code);
  byteswap_inplace(h.sform_code);
  for (auto& q : h.quatern) byteswap_inplace(q);
  for (auto& s : h.srow_x) byteswap_inplace(s);
  for (auto& s : h.srow_y) byteswap_inplace(s);
  for (auto& s : h.srow_z) byteswap_inplace(s);
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline std::vector<char> read_file_maybe_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open file: " + path.string());
  std::vector<char> bytes;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw IoError("decompression failed: " + path.string());
  return bytes;
}

template <class S, class T>
void convert_samples(const char* raw, Index count, bool swap, float slope, float inter, S* out) {
  for (Index i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, raw + i * static_cast<Index>(sizeof(T)), sizeof(T));
    if (swap) byteswap_inplace(v);
    double x = static_cast<double>(v);
    if (slope != 0.0f && !(slope == 1.0f && inter == 0.0f)) x = x * slope + inter;
    out[i] = static_cast<S>(x);
  }
}

template <class S>
Volume3<S> load_nifti(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file_maybe_gz(path);
  if (bytes.size() < sizeof(Nifti1Header))
    throw FormatError("NIfTI header truncated (" + std::to_string(bytes.size()) + " bytes): " +
                      path.string());
  Nifti1Header h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    byteswap_inplace(h.sizeof_hdr);
    if (h.sizeof_hdr != 348)
      throw FormatError("NIfTI field sizeof_hdr is not 348: " + path.string());
    swap = true;
    byteswap_inplace(h.sizeof_hdr);
    swap_header(h);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0) {
    if (std::strncmp(h.magic, "ni1", 3) == 0)
      throw FormatError("NIfTI field magic: two-file (.hdr/.img) layout not supported: " +
                        path.string());
    throw FormatError("NIfTI field magic is invalid: " + path.string());
  }
  int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7)
    throw FormatError("NIfTI field dim[0]: expected a 3D image, got " + std::to_string(ndim) +
                      "D: " + path.string());
  for (int d = 4; d <= ndim; ++d)
    if (h.dim[d] > 1)
      throw FormatError("NIfTI field dim[" + std::to_string(d) +
                        "]: expected a 3D image, got non-singleton extent " +
                        std::to_string(h.dim[d]) + ": " + path.string());
  Shape3 sh{h.dim[1], h.dim[2], h.dim[3]};
  for (int ax = 0; ax < 3; ++ax)
    if (sh[ax] < 1)
      throw FormatError("NIfTI field dim[" + std::to_string(ax + 1) + "] is not positive: " +
                        path.string());

  Eigen::Vector3d spacing(h.pixdim[1], h.pixdim[2], h.pixdim[3]);
  for (int ax = 0; ax < 3; ++ax)
    if (!(spacing[ax] > 0.0)) spacing[ax] = 1.0;
  Eigen::Vector3d origin(0, 0, 0);
  if (h.sform_code > 0) {
    origin = Eigen::Vector3d(h.srow_x[3], h.srow_y[3], h.srow_z[3]);
  } else if (h.qform_code > 0) {
    origin = Eigen::Vector3d(h.quatern[3], h.quatern[4], h.quatern[5]);
  }

  const Index count = shape_size(sh);
  size_t elem = 0;
  switch (h.datatype) {
    case DT_UINT8: elem = 1; break;
    case DT_INT16: elem = 2; break;
    case DT_INT32: elem = 4; break;
    case DT_FLOAT32: elem = 4; break;
    case DT_FLOAT64: elem = 8; break;
    default:
      throw FormatError("NIfTI field datatype " + std::to_string(h.datatype) +
                        " not supported: " + path.string());
  }
  size_t offset = static_cast<size_t>(h.vox_offset);
  if (offset < 348) offset = 352;
  if (bytes.size() < offset + elem * static_cast<size_t>(count))
    throw FormatError("NIfTI data truncated (need " +
                      std::to_string(offset + elem * static_cast<size_t>(count)) + " bytes, have " +
                      std::to_string(bytes.size()) + "): " + path.string());

  // NIfTI stores x fastest; transpose into the z-fastest layout used here.
  std::vector<S> linear(static_cast<size_t>(count));
  const char* raw = bytes.data() + offset;
  switch (h.datatype) {
    case DT_UINT8: convert_samples<S, uint8_t>(raw, count, swap, h.scl_slope, h.scl_inter, linear.data()); break;
    case DT_INT16: convert_samples<S, int16_t>(raw, count, swap, h.scl_slope, h.scl_inter, linear.data()); break;
    case DT_INT32: convert_samples<S, int32_t>(raw, count, swap, h.scl_slope, h.scl_inter, linear.data()); break;
    case DT_FLOAT32: convert_samples<S, float>(raw, count, swap, h.scl_slope, h.scl_inter, linear.data()); break;
    case DT_FLOAT64: convert_samples<S, double>(raw, count, swap, h.scl_slope, h.scl_inter, linear.data()); break;
    default: break;
  }
  Volume3<S> v(sh, spacing, origin);
  Index idx = 0;
  for (Index k = 0; k < sh[2]; ++k)
    for (Index j = 0; j < sh[1]; ++j)
      for (Index i = 0; i < sh[0]; ++i) v.at(i, j, k) = linear[static_cast<size_t>(idx++)];
  if (!v.all_finite()) throw FormatError("NIfTI data contains NaN/Inf: " + path.string());
  return v;
}

template <class S>
void save_nifti(const Volume3<S>& v, const std::filesystem::path& path) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(v.shape[0]);
  h.dim[2] = static_cast<int16_t>(v.shape[1]);
  h.dim[3] = static_cast<int16_t>(v.shape[2]);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = DT_FLOAT32;
  h.bitpix = 32;
  h.pixdim[0] = 1.0f;
  for (int ax = 0; ax < 3; ++ax) h.pixdim[ax + 1] = static_cast<float>(v.spacing[ax]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.qform_code = 0;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(v.spacing[0]);
  h.srow_y[1] = static_cast<float>(v.spacing[1]);
  h.srow_z[2] = static_cast<float>(v.spacing[2]);
  h.srow_x[3] = static_cast<float>(v.origin[0]);
  h.srow_y[3] = static_cast<float>(v.origin[1]);
  h.srow_z[3] = static_cast<float>(v.origin[2]);
  std::memcpy(h.magic, "n+1", 4);

  // x-fastest sample order, float32.
  std::vector<float> linear(static_cast<size_t>(v.size()));
  Index idx = 0;
  for (Index k = 0; k < v.shape[2]; ++k)
    for (Index j = 0; j < v.shape[1]; ++j)
      for (Index i = 0; i < v.shape[0]; ++i)
        linear[static_cast<size_t>(idx++)] = static_cast<float>(v.at(i, j, k));

  const char zeros[4] = {0, 0, 0, 0};
  if (has_suffix(path.string(), ".nii.gz")) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path.string());
    bool ok = gzwrite(f, &h, sizeof(h)) == sizeof(h) && gzwrite(f, zeros, 4) == 4;
    const unsigned nbytes = static_cast<unsigned>(linear.size() * sizeof(float));
    ok = ok && gzwrite(f, linear.data(), nbytes) == static_cast<int>(nbytes);
    gzclose(f);
    if (!ok) throw IoError("write failed: " + path.string());
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(&h), sizeof(h));
    f.write(zeros, 4);
    f.write(reinterpret_cast<const char*>(linear.data()),
            static_cast<std::streamsize>(linear.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path.string());
  }
}

// Plain fallback format: <name>.f32 holds the raw float32 samples in this
// library's native z-fastest order; <name>.f32.hdr is a text sidecar with
// shape, spacing, and origin. Round trips are bit exact.
template <class S>
Volume3<S> load_raw(const std::filesystem::path& path) {
  const std::filesystem::path hdr_path = path.string() + ".hdr";
  std::ifstream hdr(hdr_path);
  if (!hdr) throw IoError("cannot open sidecar header: " + hdr_path.string());
  Shape3 sh{0, 0, 0};
  Eigen::Vector3d spacing(1, 1, 1), origin(0, 0, 0);
  bool have_shape = false;
  std::string line;
  while (std::getline(hdr, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "shape") {
      ss >> sh[0] >> sh[1] >> sh[2];
      have_shape = !ss.fail();
    } else if (key == "spacing") {
      ss >> spacing[0] >> spacing[1] >> spacing[2];
    } else if (key == "origin") {
      ss >> origin[0] >> origin[1] >> origin[2];
    } else if (!key.empty() && key[0] != '#') {
      throw FormatError("sidecar header field '" + key + "' unknown: " + hdr_path.string());
    }
  }
  if (!have_shape) throw FormatError("sidecar header field 'shape' missing: " + hdr_path.string());
  for (int ax = 0; ax < 3; ++ax)
    if (sh[ax] < 1) throw FormatError("sidecar header field 'shape' is not positive: " +
                                      hdr_path.string());

  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path.string());
  Volume3<S> v(sh, spacing, origin);
  std::vector<float> buf(static_cast<size_t>(v.size()));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * 4))
    throw FormatError("raw data size does not match header shape: " + path.string());
  for (Index i = 0; i < v.size(); ++i) v.data[i] = static_cast<S>(buf[static_cast<size_t>(i)]);
  if (!v.all_finite()) throw FormatError("raw data contains NaN/Inf: " + path.string());
  return v;
}

template <class S>
void save_raw(const Volume3<S>& v, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  std::vector<float> buf(static_cast<size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(v.data[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!f) throw IoError("write failed: " + path.string());

  const std::filesystem::path hdr_path = path.string() + ".hdr";
  std::ofstream hdr(hdr_path);
  if (!hdr) throw IoError("cannot open for writing: " + hdr_path.string());
  hdr.precision(17);
  hdr << "shape " << v.shape[0] << " " << v.shape[1] << " " << v.shape[2] << "\n";
  hdr << "spacing " << v.spacing[0] << " " << v.spacing[1] << " " << v.spacing[2] << "\n";
  hdr << "origin " << v.origin[0] << " " << v.origin[1] << " " << v.origin[2] << "\n";
  if (!hdr) throw IoError("write failed: " + hdr_path.string());
}

}  // namespace detail

/// Load a volume; format chosen by extension (.nii / .nii.gz / .f32).
template <class S = float>
Volume3<S> load_volume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("file does not exist: " + path.string());
  const std::string s = path.string();
  if (detail::has_suffix(s, ".nii") || detail::has_suffix(s, ".nii.gz"))
    return detail::load_nifti<S>(path);
  if (detail::has_suffix(s, ".f32")) return detail::load_raw<S>(path);
  throw FormatError("unsupported volume extension (expected .nii, .nii.gz, or .f32): " + s);
}

/// Save a volume; format chosen by extension (.nii / .nii.gz / .f32).
template <class S>
void save_volume(const Volume3<S>& v, const std::filesystem::path& path) {
  v.require_finite("save_volume");
  const std::string s = path.string();
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (detail::has_suffix(s, ".nii") || detail::has_suffix(s, ".nii.gz"))
    return detail::save_nifti(v, path);
  if (detail::has_suffix(s, ".f32")) return detail::save_raw(v, path);
  throw FormatError("unsupported volume extension (expected .nii, .nii.gz, or .f32): " + s);
}

}  // namespace aslsr
