#include "m3ae/volume_io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

static_assert(std::endian::native == std::endian::little, "volume files assume a little-endian host");

void put_u32(std::vector<char>& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<char> gunzip_all(const std::filesystem::path& path) {
  gzFile gz = gzopen(path.c_str(), "rb");
  if (!gz) throw IngestError("cannot open " + path.string());
  std::vector<char> out;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(gz, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(gz, &err);
  std::string what = msg ? msg : "";
  gzclose(gz);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END))
    throw IngestError("corrupt gzip stream in " + path.string() + ": " + what);
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
T get(const std::vector<char>& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

void write_volume_file(const std::filesystem::path& path, const torch::Tensor& volume) {
  torch::Tensor v = volume;
  if (v.dim() == 3) v = v.unsqueeze(0);
  if (v.dim() != 4) throw ShapeError("volume files hold 3-D or 4-D tensors");
  if (v.scalar_type() != torch::kFloat32 && v.scalar_type() != torch::kUInt8)
    throw ShapeError("volume files hold float32 or uint8 voxels");
  v = v.contiguous().cpu();

  std::vector<char> header(kVolumeMagic, kVolumeMagic + 8);
  for (int d = 0; d < 4; ++d) put_u32(header, static_cast<std::uint32_t>(v.size(d)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(v.data_ptr()), static_cast<std::streamsize>(v.nbytes()));
  if (!out) throw IngestError("short write to " + path.string());
}

torch::Tensor read_volume_file(const std::filesystem::path& path, torch::ScalarType dtype) {
  const auto bytes = read_all(path);
  if (bytes.size() < kVolumeHeaderBytes || std::memcmp(bytes.data(), kVolumeMagic, 8) != 0)
    throw IngestError("bad volume header in " + path.string());
  std::array<std::int64_t, 4> dims{};
  for (int d = 0; d < 4; ++d) dims[d] = get<std::uint32_t>(bytes, 8 + 4 * d);
  const std::size_t elem = dtype == torch::kUInt8 ? 1 : 4;
  if (dtype != torch::kUInt8 && dtype != torch::kFloat32)
    throw IngestError("unsupported volume dtype requested for " + path.string());
  const std::size_t expected = kVolumeHeaderBytes + elem * dims[0] * dims[1] * dims[2] * dims[3];
  if (bytes.size() != expected)
    throw IngestError("volume payload size mismatch in " + path.string());
  auto out = torch::empty({dims[0], dims[1], dims[2], dims[3]}, torch::TensorOptions().dtype(dtype));
  std::memcpy(out.data_ptr(), bytes.data() + kVolumeHeaderBytes, out.nbytes());
  return out;
}

NiftiImage read_nifti(const std::filesystem::path& path) {
  const auto name = path.filename().string();
  const auto bytes = ends_with(name, ".gz") ? gunzip_all(path) : read_all(path);
  if (bytes.size() < 352) throw IngestError("truncated NIfTI header in " + path.string());
  if (get<std::int32_t>(bytes, 0) != 348)
    throw IngestError("bad NIfTI header (sizeof_hdr != 348) in " + path.string());
  if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0 && std::memcmp(bytes.data() + 344, "ni1", 3) != 0)
    throw IngestError("bad NIfTI magic in " + path.string());

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(bytes, 40 + 2 * i);
  if (dim[0] < 3 || dim[0] > 7) throw IngestError("unsupported NIfTI rank in " + path.string());
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw IngestError("multi-volume NIfTI not supported: " + path.string());
  const std::int64_t nx = dim[1], ny = dim[2], nz = dim[3];
  if (nx <= 0 || ny <= 0 || nz <= 0) throw IngestError("bad NIfTI dimensions in " + path.string());

  const auto datatype = get<std::int16_t>(bytes, 70);
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(bytes, 76 + 4 * i);
  const auto vox_offset = static_cast<std::size_t>(get<float>(bytes, 108));
  float slope = get<float>(bytes, 112);
  const float inter = get<float>(bytes, 116);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

  const std::int64_t count = nx * ny * nz;
  std::size_t elem = 0;
  switch (datatype) {
    case 2: case 256: elem = 1; break;          // uint8, int8
    case 4: case 512: elem = 2; break;          // int16, uint16
    case 8: case 16: case 768: elem = 4; break; // int32, float32, uint32
    case 64: elem = 8; break;                   // float64
    default: throw IngestError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }
  if (bytes.size() < vox_offset + elem * count)
    throw IngestError("truncated NIfTI payload in " + path.string());

  auto out = torch::empty({nz, ny, nx}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  const char* src = bytes.data() + vox_offset;
  for (std::int64_t i = 0; i < count; ++i) {
    double v = 0.0;
    const char* p = src + i * elem;
    switch (datatype) {
      case 2: v = static_cast<std::uint8_t>(*p); break;
      case 256: v = static_cast<std::int8_t>(*p); break;
      case 4: { std::int16_t t; std::memcpy(&t, p, 2); v = t; break; }
      case 512: { std::uint16_t t; std::memcpy(&t, p, 2); v = t; break; }
      case 8: { std::int32_t t; std::memcpy(&t, p, 4); v = t; break; }
      case 768: { std::uint32_t t; std::memcpy(&t, p, 4); v = t; break; }
      case 16: { float t; std::memcpy(&t, p, 4); v = t; break; }
      case 64: { double t; std::memcpy(&t, p, 8); v = t; break; }
    }
    dst[i] = static_cast<float>(v * slope + inter);
  }
  NiftiImage img;
  img.data = out;
  img.spacing = {pixdim[3] > 0 ? pixdim[3] : 1.0, pixdim[2] > 0 ? pixdim[2] : 1.0,
                 pixdim[1] > 0 ? pixdim[1] : 1.0};
  return img;
}

void write_nifti(const std::filesystem::path& path, const torch::Tensor& data,
                 const std::array<double, 3>& spacing) {
  if (data.dim() != 3) throw ShapeError("write_nifti expects a D x H x W tensor");
  auto v = data.to(torch::kFloat32).contiguous();
  std::vector<char> hdr(352, 0);
  auto put = [&hdr](std::size_t off, auto value) { std::memcpy(hdr.data() + off, &value, sizeof(value)); };
  put(0, std::int32_t{348});
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.size(2)), static_cast<std::int16_t>(v.size(1)),
                                static_cast<std::int16_t>(v.size(0)), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * i, dims[i]);
  put(70, std::int16_t{16});
  put(72, std::int16_t{32});
  const float pix[8] = {1.0f, static_cast<float>(spacing[2]), static_cast<float>(spacing[1]),
                        static_cast<float>(spacing[0]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(76 + 4 * i, pix[i]);
  put(108, 352.0f);
  put(112, 1.0f);
  std::memcpy(hdr.data() + 344, "n+1\0", 4);

  const auto name = path.filename().string();
  if (ends_with(name, ".gz")) {
    gzFile gz = gzopen(path.c_str(), "wb");
    if (!gz) throw IngestError("cannot write " + path.string());
    gzwrite(gz, hdr.data(), static_cast<unsigned>(hdr.size()));
    gzwrite(gz, v.data_ptr(), static_cast<unsigned>(v.nbytes()));
    gzclose(gz);
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestError("cannot write " + path.string());
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    out.write(static_cast<const char*>(v.data_ptr()), static_cast<std::streamsize>(v.nbytes()));
  }
}

}  // namespace m3ae
