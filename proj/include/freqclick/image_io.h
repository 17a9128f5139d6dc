#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace freqclick {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

// PNG codec over libpng's simplified API. Colour inputs are converted to
// grayscale on decode. Decoding failures throw FormatError.
std::vector<std::uint8_t> encode_png(const GrayImage& img);
GrayImage decode_png(const std::uint8_t* data, std::size_t size);
GrayImage decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_png(const std::filesystem::path& path);

}  // namespace freqclick
