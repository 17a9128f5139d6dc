#include "freqclick/image_io.h"

#include <png.h>

#include <fstream>
#include <iterator>

#include "freqclick/errors.h"

namespace freqclick {

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  if (img.pixels.size() != img.height * img.width || img.height == 0 || img.width == 0) {
    throw ContractError("image buffer does not match its extents");
  }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + pi.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + pi.message);
  }
  out.resize(size);
  return out;
}

GrayImage decode_png(const std::uint8_t* data, std::size_t size) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, data, size)) {
    throw FormatError(std::string("png decode failed: ") + pi.message);
  }
  pi.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.height = pi.height;
  img.width = pi.width;
  img.pixels.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw FormatError(std::string("png decode failed: ") + pi.message);
  }
  return img;
}

GrayImage decode_png(const std::vector<std::uint8_t>& bytes) { return decode_png(bytes.data(), bytes.size()); }

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

GrayImage read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

}  // namespace freqclick
