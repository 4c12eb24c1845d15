#include "vfseg/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "vfseg/error.hpp"

namespace fs = std::filesystem;

namespace vfseg {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax;
  int32_t glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code;
  int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);
static_assert(offsetof(Nifti1Header, dim) == 40);
static_assert(offsetof(Nifti1Header, datatype) == 70);
static_assert(offsetof(Nifti1Header, pixdim) == 76);
static_assert(offsetof(Nifti1Header, vox_offset) == 108);
static_assert(offsetof(Nifti1Header, descrip) == 148);
static_assert(offsetof(Nifti1Header, magic) == 344);

constexpr int16_t kDtU8 = 2;
constexpr int16_t kDtI16 = 4;
constexpr int16_t kDtI32 = 8;
constexpr int16_t kDtF32 = 16;
constexpr int16_t kDtF64 = 64;
constexpr int16_t kDtI8 = 256;
constexpr int16_t kDtU16 = 512;

template <typename T>
T byteswap_value(T v) {
  auto* b = reinterpret_cast<unsigned char*>(&v);
  std::reverse(b, b + sizeof(T));
  return v;
}

template <typename T>
void swap_inplace(T& v) {
  v = byteswap_value(v);
}

void swap_header(Nifti1Header& h) {
  swap_inplace(h.sizeof_hdr);
  swap_inplace(h.extents);
  swap_inplace(h.session_error);
  for (auto& d : h.dim) swap_inplace(d);
  swap_inplace(h.intent_p1);
  swap_inplace(h.intent_p2);
  swap_inplace(h.intent_p3);
  swap_inplace(h.intent_code);
  swap_inplace(h.datatype);
  swap_inplace(h.bitpix);
  swap_inplace(h.slice_start);
  for (auto& p : h.pixdim) swap_inplace(p);
  swap_inplace(h.vox_offset);
  swap_inplace(h.scl_slope);
  swap_inplace(h.scl_inter);
  swap_inplace(h.slice_end);
  swap_inplace(h.cal_max);
  swap_inplace(h.cal_min);
  swap_inplace(h.slice_duration);
  swap_inplace(h.toffset);
  swap_inplace(h.glmax);
  swap_inplace(h.glmin);
  swap_inplace(h.qform_code);
  swap_inplace(h.sform_code);
}

size_t nifti_scalar_size(int16_t datatype) {
  switch (datatype) {
    case kDtU8:
    case kDtI8: return 1;
    case kDtI16:
    case kDtU16: return 2;
    case kDtI32:
    case kDtF32: return 4;
    case kDtF64: return 8;
    default: return 0;
  }
}

// Decodes `count` scalars of the given NIfTI datatype into doubles.
std::vector<double> decode_scalars(const std::vector<unsigned char>& bytes, int16_t datatype, size_t count,
                                   bool swap) {
  std::vector<double> out(count);
  auto read = [&]<typename T>(T) {
    for (size_t i = 0; i < count; ++i) {
      T v;
      std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
      if (swap) v = byteswap_value(v);
      out[i] = static_cast<double>(v);
    }
  };
  switch (datatype) {
    case kDtU8: read(uint8_t{}); break;
    case kDtI8: read(int8_t{}); break;
    case kDtI16: read(int16_t{}); break;
    case kDtU16: read(uint16_t{}); break;
    case kDtI32: read(int32_t{}); break;
    case kDtF32: read(float{}); break;
    case kDtF64: read(double{}); break;
    default: throw Error(ErrorCode::MalformedHeader, "unsupported NIfTI datatype " + std::to_string(datatype));
  }
  return out;
}

bool has_suffix(const fs::path& p, std::string_view suffix) {
  const std::string s = p.string();
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string stem_id(const fs::path& p) {
  std::string name = p.filename().string();
  for (std::string_view ext : {".nii.gz", ".nii", ".raw", ".meta"}) {
    if (name.size() > ext.size() && name.ends_with(ext)) return name.substr(0, name.size() - ext.size());
  }
  return name;
}

struct RawGrid {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<double> values;
  std::string description;
  int32_t num_classes = 0;
  float slope = 0.0f;
  float inter = 0.0f;
};

void check_spacing(const Spacing& s) {
  for (double v : s) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::NonPositiveSpacing, "spacing components must be strictly positive");
    }
  }
}

// ---------------------------------------------------------------- NIfTI

RawGrid read_nifti(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileMissing, path.string());
  gzFile gz = gzopen(path.string().c_str(), "rb");
  if (gz == nullptr) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  struct Closer {
    gzFile f;
    ~Closer() { gzclose(f); }
  } closer{gz};

  Nifti1Header hdr{};
  if (gzread(gz, &hdr, sizeof(hdr)) != static_cast<int>(sizeof(hdr))) {
    throw Error(ErrorCode::MalformedHeader, "truncated NIfTI header in " + path.string());
  }
  bool swap = false;
  if (hdr.sizeof_hdr != 348) {
    if (byteswap_value(hdr.sizeof_hdr) != 348) {
      throw Error(ErrorCode::MalformedHeader, "not a NIfTI-1 file: " + path.string());
    }
    swap = true;
    swap_header(hdr);
  }
  if (std::memcmp(hdr.magic, "n+1", 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "only single-file NIfTI-1 (n+1) is supported");
  }
  const int ndim = hdr.dim[0];
  if (ndim < 1 || ndim > 7) throw Error(ErrorCode::MalformedHeader, "dim[0] out of range");
  for (int i = 4; i <= ndim; ++i) {
    if (hdr.dim[i] != 1) throw Error(ErrorCode::MalformedHeader, "only 3D volumes are supported");
  }
  // Disk axes are (x, y, z) with x fastest, which is exactly (D, H, W) C-order
  // once z is read as depth and x as width.
  RawGrid g;
  auto extent = [&](int i) -> int64_t { return i <= ndim ? hdr.dim[i] : 1; };
  g.shape = Shape3{extent(3), extent(2), extent(1)};
  if (g.shape.d <= 0 || g.shape.h <= 0 || g.shape.w <= 0) {
    throw Error(ErrorCode::MalformedHeader, "non-positive dimension");
  }
  auto pix = [&](int i) -> double { return i <= ndim ? static_cast<double>(hdr.pixdim[i]) : 1.0; };
  g.spacing = Spacing{pix(3), pix(2), pix(1)};
  check_spacing(g.spacing);

  const size_t scalar = nifti_scalar_size(hdr.datatype);
  if (scalar == 0) throw Error(ErrorCode::MalformedHeader, "unsupported datatype " + std::to_string(hdr.datatype));
  const auto offset = static_cast<int64_t>(hdr.vox_offset);
  if (offset < 348) throw Error(ErrorCode::MalformedHeader, "vox_offset before end of header");
  if (gzseek(gz, offset, SEEK_SET) != offset) throw Error(ErrorCode::MalformedHeader, "payload offset past EOF");

  const size_t count = static_cast<size_t>(g.shape.numel());
  std::vector<unsigned char> bytes(count * scalar);
  size_t got = 0;
  while (got < bytes.size()) {
    const unsigned chunk = static_cast<unsigned>(std::min<size_t>(bytes.size() - got, 1u << 30));
    const int n = gzread(gz, bytes.data() + got, chunk);
    if (n <= 0) break;
    got += static_cast<size_t>(n);
  }
  if (got != bytes.size()) {
    throw Error(ErrorCode::MalformedHeader, "payload shorter than header shape " + g.shape.str());
  }
  g.values = decode_scalars(bytes, hdr.datatype, count, swap);
  g.slope = hdr.scl_slope;
  g.inter = hdr.scl_inter;
  g.description.assign(hdr.descrip, strnlen(hdr.descrip, sizeof(hdr.descrip)));
  constexpr std::string_view kKey = "num_classes=";
  if (auto pos = g.description.find(kKey); pos != std::string::npos) {
    g.num_classes = std::stoi(g.description.substr(pos + kKey.size()));
  }
  return g;
}

void write_bytes(const fs::path& path, const void* data, size_t size, bool gzip) {
  const fs::path tmp = path.string() + ".tmp";
  if (gzip) {
    gzFile gz = gzopen(tmp.string().c_str(), "wb6");
    if (gz == nullptr) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    const int n = gzwrite(gz, data, static_cast<unsigned>(size));
    if (gzclose(gz) != Z_OK || n != static_cast<int>(size)) {
      throw Error(ErrorCode::IoFailure, "short write to " + path.string());
    }
  } else {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!os) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "rename failed for " + path.string() + ": " + ec.message());
}

template <typename T>
void write_nifti(const fs::path& path, const Shape3& shape, const Spacing& spacing, std::span<const T> payload,
                 int16_t datatype, const std::string& descrip) {
  Nifti1Header hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<int16_t>(shape.w);
  hdr.dim[2] = static_cast<int16_t>(shape.h);
  hdr.dim[3] = static_cast<int16_t>(shape.d);
  for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
  hdr.datatype = datatype;
  hdr.bitpix = static_cast<int16_t>(sizeof(T) * 8);
  hdr.pixdim[0] = 1.0f;
  hdr.pixdim[1] = static_cast<float>(spacing[2]);
  hdr.pixdim[2] = static_cast<float>(spacing[1]);
  hdr.pixdim[3] = static_cast<float>(spacing[0]);
  for (int i = 4; i < 8; ++i) hdr.pixdim[i] = 1.0f;
  hdr.vox_offset = 352.0f;
  hdr.xyzt_units = 2;  // mm
  std::strncpy(hdr.descrip, descrip.c_str(), sizeof(hdr.descrip) - 1);
  hdr.sform_code = 1;
  hdr.srow_x[0] = hdr.pixdim[1];
  hdr.srow_y[1] = hdr.pixdim[2];
  hdr.srow_z[2] = hdr.pixdim[3];
  std::memcpy(hdr.magic, "n+1", 4);
  if (shape.d > 32767 || shape.h > 32767 || shape.w > 32767) {
    throw Error(ErrorCode::IoFailure, "NIfTI-1 dimensions are limited to 32767");
  }

  std::vector<unsigned char> buffer(352 + payload.size_bytes(), 0);
  std::memcpy(buffer.data(), &hdr, sizeof(hdr));
  std::memcpy(buffer.data() + 352, payload.data(), payload.size_bytes());
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  write_bytes(path, buffer.data(), buffer.size(), has_suffix(path, ".gz"));
}

// ------------------------------------------------------------- raw+meta

struct RawMetaPaths {
  fs::path raw;
  fs::path meta;
};

RawMetaPaths raw_meta_paths(const fs::path& path) {
  fs::path base = path;
  if (has_suffix(path, ".raw") || has_suffix(path, ".meta")) base.replace_extension();
  return {fs::path(base.string() + ".raw"), fs::path(base.string() + ".meta")};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

RawGrid read_raw_meta(const fs::path& path) {
  const auto paths = raw_meta_paths(path);
  if (!fs::exists(paths.meta)) throw Error(ErrorCode::FileMissing, paths.meta.string());
  if (!fs::exists(paths.raw)) throw Error(ErrorCode::FileMissing, paths.raw.string());

  std::ifstream ms(paths.meta);
  std::string line;
  RawGrid g;
  bool have_shape = false;
  std::string dtype = "f32";
  std::string endianness = "little";
  while (std::getline(ms, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::MalformedHeader, "bad meta line '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "shape") {
        auto parts = split(value, ',');
        if (parts.size() != 3) throw Error(ErrorCode::MalformedHeader, "shape needs three components");
        g.shape = Shape3{std::stoll(parts[0]), std::stoll(parts[1]), std::stoll(parts[2])};
        have_shape = true;
      } else if (key == "spacing") {
        auto parts = split(value, ',');
        if (parts.size() != 3) throw Error(ErrorCode::MalformedHeader, "spacing needs three components");
        g.spacing = Spacing{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
      } else if (key == "dtype") {
        dtype = value;
      } else if (key == "endianness") {
        endianness = value;
      } else if (key == "num_classes") {
        g.num_classes = std::stoi(value);
      } else if (key == "id") {
        g.description = value;
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::MalformedHeader, "unparsable value for '" + key + "'");
    }
  }
  if (!have_shape || g.shape.d <= 0 || g.shape.h <= 0 || g.shape.w <= 0) {
    throw Error(ErrorCode::MalformedHeader, "meta file lacks a valid shape");
  }
  check_spacing(g.spacing);
  int16_t nifti_type = 0;
  if (dtype == "f32") {
    nifti_type = kDtF32;
  } else if (dtype == "u8") {
    nifti_type = kDtU8;
  } else if (dtype == "i16") {
    nifti_type = kDtI16;
  } else {
    throw Error(ErrorCode::MalformedHeader, "unknown dtype '" + dtype + "'");
  }
  if (endianness != "little" && endianness != "big") {
    throw Error(ErrorCode::MalformedHeader, "unknown endianness '" + endianness + "'");
  }
  const size_t count = static_cast<size_t>(g.shape.numel());
  const size_t expected = count * nifti_scalar_size(nifti_type);
  const auto actual = fs::file_size(paths.raw);
  if (actual != expected) {
    throw Error(ErrorCode::MalformedHeader, "payload is " + std::to_string(actual) + " bytes, shape " +
                                                g.shape.str() + " needs " + std::to_string(expected));
  }
  std::vector<unsigned char> bytes(expected);
  std::ifstream rs(paths.raw, std::ios::binary);
  rs.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (!rs) throw Error(ErrorCode::IoFailure, "short read from " + paths.raw.string());
  const bool swap = (endianness == "big") == (std::endian::native == std::endian::little);
  g.values = decode_scalars(bytes, nifti_type, count, swap);
  return g;
}

template <typename T>
void write_raw_meta(const fs::path& path, const Shape3& shape, const Spacing& spacing, std::span<const T> payload,
                    std::string_view dtype, const std::string& extra) {
  const auto paths = raw_meta_paths(path);
  if (!paths.raw.parent_path().empty() && !fs::exists(paths.raw.parent_path())) {
    throw Error(ErrorCode::IoFailure, "directory does not exist: " + paths.raw.parent_path().string());
  }
  write_bytes(paths.raw, payload.data(), payload.size_bytes(), false);
  std::ostringstream meta;
  meta.precision(17);
  meta << "shape=" << shape.d << "," << shape.h << "," << shape.w << "\n";
  meta << "spacing=" << spacing[0] << "," << spacing[1] << "," << spacing[2] << "\n";
  meta << "dtype=" << dtype << "\n";
  meta << "endianness=little\n";
  meta << extra;
  const std::string text = meta.str();
  write_bytes(paths.meta, text.data(), text.size(), false);
}

void check_parent(const fs::path& path) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw Error(ErrorCode::IoFailure, "directory does not exist: " + parent.string());
  }
}

RawGrid read_grid(const fs::path& path, VolumeFormat format) {
  return format == VolumeFormat::Nifti ? read_nifti(path) : read_raw_meta(path);
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
  if (has_suffix(path, ".nii") || has_suffix(path, ".nii.gz")) return VolumeFormat::Nifti;
  if (has_suffix(path, ".raw") || has_suffix(path, ".meta")) return VolumeFormat::RawMeta;
  throw Error(ErrorCode::IoFailure, "cannot infer volume format from '" + path.string() + "'");
}

Volume load_volume(const fs::path& path, VolumeFormat format) {
  RawGrid g = read_grid(path, format);
  Volume v(g.shape, g.spacing, stem_id(path));
  const bool scaled = format == VolumeFormat::Nifti && g.slope != 0.0f && std::isfinite(g.slope) &&
                      !(g.slope == 1.0f && g.inter == 0.0f);
  for (size_t i = 0; i < g.values.size(); ++i) {
    const double x = scaled ? g.values[i] * g.slope + g.inter : g.values[i];
    v.voxels[i] = static_cast<float>(x);
  }
  return v;
}

Volume load_volume(const fs::path& path) { return load_volume(path, format_from_path(path)); }

LabelVolume load_labels(const fs::path& path, VolumeFormat format) {
  RawGrid g = read_grid(path, format);
  LabelVolume lv(g.shape, 1, g.spacing);
  int32_t max_label = 0;
  for (size_t i = 0; i < g.values.size(); ++i) {
    const double x = g.values[i];
    if (x < 0 || x != std::floor(x)) {
      throw Error(ErrorCode::LabelOutOfRange, "label file contains a non-integer or negative value");
    }
    lv.labels[i] = static_cast<int32_t>(x);
    max_label = std::max(max_label, lv.labels[i]);
  }
  lv.num_classes = g.num_classes > 0 ? g.num_classes : max_label + 1;
  lv.validate();
  return lv;
}

LabelVolume load_labels(const fs::path& path) { return load_labels(path, format_from_path(path)); }

void save_volume(const Volume& v, const fs::path& path, VolumeFormat format) {
  check_parent(path);
  if (format == VolumeFormat::Nifti) {
    write_nifti<float>(path, v.shape, v.spacing, v.voxels, kDtF32, "id=" + v.id);
  } else {
    write_raw_meta<float>(path, v.shape, v.spacing, v.voxels, "f32", "id=" + v.id + "\n");
  }
}

void save_volume(const Volume& v, const fs::path& path) { save_volume(v, path, format_from_path(path)); }

void save_labels(const LabelVolume& v, const fs::path& path, VolumeFormat format) {
  check_parent(path);
  v.validate();
  const std::string classes = "num_classes=" + std::to_string(v.num_classes);
  if (v.num_classes <= 256) {
    std::vector<uint8_t> payload(v.labels.begin(), v.labels.end());
    if (format == VolumeFormat::Nifti) {
      write_nifti<uint8_t>(path, v.shape, v.spacing, payload, kDtU8, classes);
    } else {
      write_raw_meta<uint8_t>(path, v.shape, v.spacing, payload, "u8", classes + "\n");
    }
  } else {
    std::vector<int16_t> payload(v.labels.begin(), v.labels.end());
    if (format == VolumeFormat::Nifti) {
      write_nifti<int16_t>(path, v.shape, v.spacing, payload, kDtI16, classes);
    } else {
      write_raw_meta<int16_t>(path, v.shape, v.spacing, payload, "i16", classes + "\n");
    }
  }
}

void save_labels(const LabelVolume& v, const fs::path& path) { save_labels(v, path, format_from_path(path)); }

Volume normalize_intensity(const Volume& v, IntensityWindow window) {
  if (!(window.low < window.high)) {
    throw Error(ErrorCode::DegenerateWindow, "window low must be below high");
  }
  Volume out = v;
  const double range = window.high - window.low;
  for (float& x : out.voxels) {
    const double t = (static_cast<double>(x) - window.low) / range;
    x = static_cast<float>(std::clamp(t, 0.0, 1.0));
  }
  return out;
}

}  // namespace vfseg
