#include "m3ae/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

void write_png(const std::filesystem::path& path, const torch::Tensor& image, int color_type, int channels) {
  auto img = image.to(torch::kUInt8).contiguous();
  const auto height = static_cast<png_uint_32>(img.size(0));
  const auto width = static_cast<png_uint_32>(img.size(1));
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IngestError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IngestError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* base = img.data_ptr<std::uint8_t>();
  for (png_uint_32 y = 0; y < height; ++y) png_write_row(png, base + static_cast<std::size_t>(y) * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 2) throw ShapeError("grayscale PNG needs an H x W tensor");
  write_png(path, image, PNG_COLOR_TYPE_GRAY, 1);
}

void write_png_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(2) != 3) throw ShapeError("RGB PNG needs an H x W x 3 tensor");
  write_png(path, image, PNG_COLOR_TYPE_RGB, 3);
}

torch::Tensor orthogonal_montage(const torch::Tensor& volume) {
  if (volume.dim() != 4) throw ShapeError("montage needs an N x D x H x W volume");
  const auto v = volume.detach().to(torch::kFloat32);
  const auto n = v.size(0), d = v.size(1), h = v.size(2), w = v.size(3);
  const auto side = std::max({d, h, w});
  auto canvas = torch::zeros({n * side, 3 * side}, torch::kUInt8);
  for (std::int64_t m = 0; m < n; ++m) {
    auto ch = v[m];
    const double lo = ch.min().item<double>();
    const double hi = ch.max().item<double>();
    auto scaled = hi > lo ? (ch - lo) / (hi - lo) : torch::zeros_like(ch);
    scaled = (scaled * 255.0).round().to(torch::kUInt8);
    const std::array<torch::Tensor, 3> slices = {scaled.select(0, d / 2), scaled.select(1, h / 2),
                                                 scaled.select(2, w / 2)};
    for (int s = 0; s < 3; ++s) {
      const auto& sl = slices[s];
      canvas.narrow(0, m * side, sl.size(0)).narrow(1, s * side, sl.size(1)).copy_(sl);
    }
  }
  return canvas;
}

}  // namespace m3ae
