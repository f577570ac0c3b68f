#include "segres/image_io.hpp"

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <png.h>

namespace segres {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any 8-bit PNG into packed RGB rows.
std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, int& width, int& height) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open image file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("16-bit PNG not supported: " + path.string());
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<std::uint8_t> data(std::size_t(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (int i = 0; i < height; ++i) rows[i] = data.data() + std::size_t(i) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& data, int width,
               int height, bool gray) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot write image file: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8,
               gray ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int stride = gray ? width : width * 3;
  std::vector<png_bytep> rows(height);
  for (int i = 0; i < height; ++i)
    rows[i] = const_cast<png_bytep>(data.data() + std::size_t(i) * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(double v) {
  return std::uint8_t(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
}

}  // namespace

Image load_image_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto rgb = read_png_rgb(path, w, h);
  Image img(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        img.chan[c](i, j) = rgb[(std::size_t(i) * w + j) * 3 + c] / 255.0;
  return img;
}

void save_image_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> rgb(std::size_t(img.height) * img.width * 3);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < 3; ++c)
        rgb[(std::size_t(i) * img.width + j) * 3 + c] = to_byte(img.chan[c](i, j));
  write_png(path, rgb, img.width, img.height, /*gray=*/false);
}

LabelMap load_label_png(const std::filesystem::path& path, int num_classes) {
  int w = 0, h = 0;
  const auto rgb = read_png_rgb(path, w, h);  // gray files expand to r=g=b
  LabelMap labels(h, w, num_classes);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int v = rgb[(std::size_t(i) * w + j) * 3];
      if (v >= num_classes)
        throw RangeError("label file " + path.string() + ": value " + std::to_string(v) +
                         " at pixel (" + std::to_string(i) + "," + std::to_string(j) +
                         ") >= K=" + std::to_string(num_classes));
      labels.data(i, j) = v;
    }
  return labels;
}

void save_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  if (labels.num_classes > 256) throw DomainError("label maps support at most 256 classes");
  const int h = labels.height(), w = labels.width();
  std::vector<std::uint8_t> gray(std::size_t(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) gray[std::size_t(i) * w + j] = std::uint8_t(labels.data(i, j));
  write_png(path, gray, w, h, /*gray=*/true);
}

Image colorize_labels(const LabelMap& labels) {
  static const std::array<std::array<double, 3>, 16> palette = {{
      {0.15, 0.15, 0.15}, {0.90, 0.25, 0.20}, {0.25, 0.55, 0.95}, {0.30, 0.80, 0.35},
      {0.95, 0.80, 0.20}, {0.70, 0.35, 0.85}, {0.20, 0.80, 0.80}, {0.95, 0.55, 0.15},
      {0.60, 0.60, 0.60}, {0.55, 0.30, 0.15}, {0.85, 0.45, 0.65}, {0.45, 0.65, 0.25},
      {0.30, 0.35, 0.70}, {0.75, 0.75, 0.40}, {0.40, 0.20, 0.50}, {0.90, 0.90, 0.90},
  }};
  Image img(labels.height(), labels.width());
  for (int i = 0; i < labels.height(); ++i)
    for (int j = 0; j < labels.width(); ++j) {
      const auto& rgb = palette[labels.data(i, j) % 16];
      for (int c = 0; c < 3; ++c) img.chan[c](i, j) = rgb[c];
    }
  return img;
}

Image hstack_grid(const std::vector<Image>& panels, int separator) {
  if (panels.empty()) throw DomainError("hstack_grid: no panels");
  const int h = panels[0].height, w = panels[0].width;
  for (const auto& p : panels)
    if (p.height != h || p.width != w) throw ShapeError("hstack_grid: panel size mismatch");
  const int total_w = int(panels.size()) * w + (int(panels.size()) - 1) * separator;
  Image grid = Image::constant(h, total_w, 1.0);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const int x0 = int(p) * (w + separator);
    for (int c = 0; c < 3; ++c) grid.chan[c].block(0, x0, h, w) = panels[p].chan[c];
  }
  return grid;
}

}  // namespace segres
