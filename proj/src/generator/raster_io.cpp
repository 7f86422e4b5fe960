#include "latentdrag/generator/raster_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "latentdrag/error.hpp"

namespace latentdrag::generator {

namespace {

constexpr std::array<unsigned char, 4> kRawMagic{'L', 'D', 'R', '1'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::OutputUnwritable, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::OutputUnwritable, "short write to " + path.string());
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void png_noop_flush(png_structp) {}

}  // namespace

std::vector<unsigned char> encode_raw(const Raster& r) {
  std::vector<unsigned char> out(kRawMagic.begin(), kRawMagic.end());
  put_u32(out, static_cast<std::uint32_t>(r.channels));
  put_u32(out, static_cast<std::uint32_t>(r.height));
  put_u32(out, static_cast<std::uint32_t>(r.width));
  out.reserve(16 + r.values.size() * 8);
  for (double v : r.values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  return out;
}

Raster decode_raw(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16 || !std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin())) {
    throw Error(ErrorCode::IoError, "not a raw raster dump");
  }
  Raster r(get_u32(bytes, 4), get_u32(bytes, 8), get_u32(bytes, 12));
  if (bytes.size() != 16 + r.values.size() * 8) throw Error(ErrorCode::IoError, "raw dump size mismatch");
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[16 + 8 * i + k]) << (8 * k);
    r.values[i] = std::bit_cast<double>(bits);
  }
  return r;
}

void write_raw(const std::filesystem::path& path, const Raster& r) { write_file(path, encode_raw(r)); }

Raster read_raw(const std::filesystem::path& path) { return decode_raw(read_file(path)); }

std::vector<unsigned char> encode_png(const Raster& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::BadShape, "PNG export supports 1 or 3 channels");
  }
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  std::vector<unsigned char> rowbuf(img.width * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "PNG encode failed");
  }
  png_set_write_fn(png, &out, png_append, png_noop_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) rowbuf[x * img.channels + c] = to_byte(img.at(c, y, x));
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const Raster& img) { write_file(path, encode_png(img)); }

Raster decode_png(std::span<const unsigned char> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::IoError, std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::IoError, std::string("PNG decode failed: ") + image.message);
  }
  Raster r(3, image.height, image.width);
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) r.at(c, y, x) = buf[(y * r.width + x) * 3 + c] / 255.0;
  return r;
}

Raster read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Raster resample_nearest(const Raster& src, std::size_t channels, std::size_t height, std::size_t width) {
  if (src.channels == 0 || src.height == 0 || src.width == 0) throw Error(ErrorCode::ShapeMismatch, "empty raster");
  if (src.channels != channels && src.channels != 1 && channels != 1) {
    throw Error(ErrorCode::ShapeMismatch, "cannot map channel counts");
  }
  Raster out(channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(src.height - 1, y * src.height / height);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(src.width - 1, x * src.width / width);
      for (std::size_t c = 0; c < channels; ++c) {
        if (src.channels == channels) {
          out.at(c, y, x) = src.at(c, sy, sx);
        } else if (src.channels == 1) {
          out.at(c, y, x) = src.at(0, sy, sx);
        } else {
          double s = 0.0;
          for (std::size_t k = 0; k < src.channels; ++k) s += src.at(k, sy, sx);
          out.at(c, y, x) = s / static_cast<double>(src.channels);
        }
      }
    }
  }
  for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void draw_dot(Raster& img, double x, double y, double radius, const Rgb& color) {
  const auto lo_y = static_cast<long>(std::floor(y - radius));
  const auto hi_y = static_cast<long>(std::ceil(y + radius));
  const auto lo_x = static_cast<long>(std::floor(x - radius));
  const auto hi_x = static_cast<long>(std::ceil(x + radius));
  for (long py = lo_y; py <= hi_y; ++py) {
    if (py < 0 || py >= static_cast<long>(img.height)) continue;
    for (long px = lo_x; px <= hi_x; ++px) {
      if (px < 0 || px >= static_cast<long>(img.width)) continue;
      const double dx = px - x;
      const double dy = py - y;
      if (dx * dx + dy * dy > radius * radius) continue;
      for (std::size_t c = 0; c < img.channels; ++c) {
        img.at(c, py, px) = img.channels == 3 ? color[c] : (color[0] + color[1] + color[2]) / 3.0;
      }
    }
  }
}

Raster side_by_side(std::span<const Raster> panels, std::size_t gutter) {
  if (panels.empty()) throw Error(ErrorCode::BadShape, "no panels");
  const Raster& first = panels.front();
  std::size_t width = 0;
  for (const auto& p : panels) {
    if (p.channels != first.channels || p.height != first.height) {
      throw Error(ErrorCode::BadShape, "panels must share channels and height");
    }
    width += p.width;
  }
  width += gutter * (panels.size() - 1);
  Raster out(first.channels, first.height, width, 1.0);
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t c = 0; c < p.channels; ++c)
      for (std::size_t y = 0; y < p.height; ++y)
        for (std::size_t x = 0; x < p.width; ++x) out.at(c, y, x0 + x) = p.at(c, y, x);
    x0 += p.width + gutter;
  }
  return out;
}

}  // namespace latentdrag::generator
