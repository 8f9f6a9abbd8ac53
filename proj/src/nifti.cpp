#include "bapm/nifti.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "bapm/byte_io.hpp"

namespace bapm {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

using Kind = NiftiError::Kind;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NiftiError(Kind::Io, "path", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T field(const std::vector<unsigned char>& buf, std::size_t offset) {
  return bytes::get<T>(std::span<const unsigned char>(buf), offset);
}

struct Decoded {
  Grid grid;
  std::vector<double> values;
};

Decoded decode(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  const std::string name = path.string();
  if (buf.size() < kHeaderSize) {
    throw NiftiError(Kind::Truncated, "sizeof_hdr",
                     name + ": file shorter than the 348-byte header");
  }
  const auto sizeof_hdr = field<std::int32_t>(buf, 0);
  if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    throw NiftiError(Kind::BadHeader, "sizeof_hdr",
                     name + ": sizeof_hdr is " + std::to_string(sizeof_hdr) +
                         " (big-endian or not NIfTI-1)");
  }
  const char* magic = reinterpret_cast<const char*>(buf.data() + 344);
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    const bool two_file = std::memcmp(magic, "ni1\0", 4) == 0;
    throw NiftiError(Kind::BadMagic, "magic",
                     name + (two_file ? ": two-file NIfTI (ni1) is not supported"
                                      : ": magic is not \"n+1\""));
  }

  const auto ndim = field<std::int16_t>(buf, 40);
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = field<std::int16_t>(buf, 40 + 2 * i);
  if (ndim < 3 || ndim > 7) {
    throw NiftiError(Kind::UnsupportedFeature, "dim[0]",
                     name + ": dim[0] = " + std::to_string(ndim) + ", need a 3D volume");
  }
  for (int i = 4; i <= ndim; ++i) {
    if (dim[i] != 1) {
      throw NiftiError(Kind::UnsupportedFeature, "dim[" + std::to_string(i) + "]",
                       name + ": only single 3D volumes are supported");
    }
  }
  Grid grid;
  for (int a = 0; a < 3; ++a) {
    if (dim[a + 1] <= 0) {
      throw NiftiError(Kind::BadHeader, "dim[" + std::to_string(a + 1) + "]",
                       name + ": non-positive dimension");
    }
    grid.dims[a] = dim[a + 1];
    const double px = std::fabs(field<float>(buf, 76 + 4 * (a + 1)));
    if (!(px > 0.0) || !std::isfinite(px)) {
      throw NiftiError(Kind::BadHeader, "pixdim[" + std::to_string(a + 1) + "]",
                       name + ": voxel spacing must be positive");
    }
    grid.spacing[a] = px;
  }

  const auto datatype = field<std::int16_t>(buf, 70);
  const auto bitpix = field<std::int16_t>(buf, 72);
  std::size_t width = 0;
  switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::UInt8: width = 1; break;
    case NiftiDatatype::Int16: width = 2; break;
    case NiftiDatatype::Float32: width = 4; break;
    default:
      throw NiftiError(Kind::UnsupportedDatatype, "datatype",
                       name + ": datatype " + std::to_string(datatype) +
                           " unsupported (uint8, int16, float32 only)");
  }
  if (bitpix != static_cast<std::int16_t>(8 * width)) {
    throw NiftiError(Kind::BadHeader, "bitpix",
                     name + ": bitpix " + std::to_string(bitpix) + " disagrees with datatype");
  }

  const double vox_offset = field<float>(buf, 108);
  if (vox_offset < static_cast<double>(kVoxOffset) || vox_offset != std::floor(vox_offset)) {
    throw NiftiError(Kind::BadHeader, "vox_offset",
                     name + ": vox_offset must be an integer >= 352");
  }
  if (buf.size() >= kVoxOffset && buf[348] != 0) {
    throw NiftiError(Kind::UnsupportedFeature, "extension",
                     name + ": header extensions are not supported");
  }
  const auto offset = static_cast<std::size_t>(vox_offset);
  const std::size_t count = grid.size();
  if (buf.size() < offset + count * width) {
    throw NiftiError(Kind::Truncated, "payload",
                     name + ": payload holds " +
                         std::to_string(buf.size() > offset ? buf.size() - offset : 0) +
                         " bytes, expected " + std::to_string(count * width));
  }

  double slope = field<float>(buf, 112);
  double inter = field<float>(buf, 116);
  const bool scaled = std::isfinite(slope) && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
  if (!scaled) {
    slope = 1.0;
    inter = 0.0;
  }

  Decoded out;
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset + i * width;
    double v = 0.0;
    switch (width) {
      case 1: v = buf[at]; break;
      case 2: v = field<std::int16_t>(buf, at); break;
      default: v = field<float>(buf, at); break;
    }
    out.values[i] = scaled ? v * slope + inter : v;
  }

  if (field<std::int16_t>(buf, 254) > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) grid.affine[r][c] = field<float>(buf, 280 + 16 * r + 4 * c);
  } else {
    grid.affine = identity_affine();
    for (int a = 0; a < 3; ++a) grid.affine[a][a] = grid.spacing[a];
  }
  out.grid = grid;
  return out;
}

std::vector<unsigned char> header(const Grid& grid, NiftiDatatype datatype) {
  grid.validate();
  std::vector<unsigned char> buf(kVoxOffset, 0);
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] > 32767) throw NiftiError(Kind::BadHeader, "dim", "dimension exceeds int16");
  }
  const std::int16_t width = datatype == NiftiDatatype::UInt8 ? 1 : datatype == NiftiDatatype::Int16 ? 2 : 4;
  bytes::put<std::int32_t>(buf, 0, static_cast<std::int32_t>(kHeaderSize));
  buf[39] = 0;  // dim_info
  bytes::put<std::int16_t>(buf, 40, 3);
  for (int a = 0; a < 3; ++a) bytes::put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(grid.dims[a]));
  for (int a = 3; a < 7; ++a) bytes::put<std::int16_t>(buf, 42 + 2 * a, 1);
  bytes::put<std::int16_t>(buf, 70, static_cast<std::int16_t>(datatype));
  bytes::put<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * width));
  bytes::put<float>(buf, 76, 1.0f);  // qfac
  for (int a = 0; a < 3; ++a) bytes::put<float>(buf, 80 + 4 * a, static_cast<float>(grid.spacing[a]));
  for (int a = 3; a < 7; ++a) bytes::put<float>(buf, 80 + 4 * a, 1.0f);
  bytes::put<float>(buf, 108, static_cast<float>(kVoxOffset));
  bytes::put<float>(buf, 112, 1.0f);
  bytes::put<float>(buf, 116, 0.0f);
  buf[123] = 2;  // xyzt_units: mm
  bytes::put<std::int16_t>(buf, 252, 0);
  bytes::put<std::int16_t>(buf, 254, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) bytes::put<float>(buf, 280 + 16 * r + 4 * c, static_cast<float>(grid.affine[r][c]));
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  return buf;
}

void flush(const std::vector<unsigned char>& buf, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NiftiError(Kind::Io, "path", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw NiftiError(Kind::Io, "path", "write failed for " + path.string());
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
  auto decoded = decode(path);
  Volume v(decoded.grid);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(decoded.values[i]);
  return v;
}

LabelVolume read_nifti_labels(const std::filesystem::path& path) {
  auto decoded = decode(path);
  LabelVolume v(decoded.grid);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const double x = decoded.values[i];
    if (x != std::floor(x) || x < 0 || x >= kTissueClasses) {
      throw NiftiError(Kind::BadLabels, "payload",
                       path.string() + ": voxel " + std::to_string(i) + " holds " +
                           std::to_string(x) + ", not a tissue label in {0,1,2,3}");
    }
    v.data[i] = static_cast<std::uint8_t>(x);
  }
  return v;
}

void write_nifti(const Volume& volume, const std::filesystem::path& path) {
  if (volume.data.size() != volume.grid.size()) {
    throw NiftiError(Kind::BadHeader, "dim", "volume data length does not match dims");
  }
  auto buf = header(volume.grid, NiftiDatatype::Float32);
  buf.reserve(kVoxOffset + 4 * volume.data.size());
  for (float v : volume.data) bytes::append(buf, v);
  flush(buf, path);
}

void write_nifti(const LabelVolume& labels, const std::filesystem::path& path) {
  if (labels.data.size() != labels.grid.size()) {
    throw NiftiError(Kind::BadHeader, "dim", "volume data length does not match dims");
  }
  validate_labels(labels);
  auto buf = header(labels.grid, NiftiDatatype::UInt8);
  buf.insert(buf.end(), labels.data.begin(), labels.data.end());
  flush(buf, path);
}

}  // namespace bapm
