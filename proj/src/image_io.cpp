#include "tcsa/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "tcsa/common.hpp"

namespace tcsa::image_io {

void write_png(const std::filesystem::path& path, const torch::Tensor& pixels) {
  auto px = pixels.to(torch::kUInt8).contiguous().to(torch::kCPU);
  if (px.dim() != 2 && !(px.dim() == 3 && px.size(2) == 3)) throw ConfigError("write_png: expected H x W or H x W x 3");
  const auto h = static_cast<png_uint_32>(px.size(0));
  const auto w = static_cast<png_uint_32>(px.size(1));
  const int channels = px.dim() == 3 ? 3 : 1;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IngestError("cannot open " + path.string() + " for writing");
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
  png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* base = px.data_ptr<uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r) png_write_row(png, base + static_cast<size_t>(r) * w * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor heatmap_overlay(const torch::Tensor& image, const torch::Tensor& heatmap, double alpha) {
  auto gray = ((image.squeeze().to(torch::kFloat32).clamp(-1, 1) + 1.0) * 0.5).unsqueeze(-1).expand({-1, -1, 3});
  auto v = heatmap.to(torch::kFloat32).clamp(0, 1);
  auto r = (1.5 - (4 * v - 3).abs()).clamp(0, 1);
  auto g = (1.5 - (4 * v - 2).abs()).clamp(0, 1);
  auto b = (1.5 - (4 * v - 1).abs()).clamp(0, 1);
  auto colour = torch::stack({r, g, b}, -1);
  auto blend = (1 - alpha) * gray + alpha * colour;
  return (blend * 255.0).round().clamp(0, 255).to(torch::kUInt8);
}

}  // namespace tcsa::image_io
