#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace txir {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint8_t maxval = 255;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Binary PGM (P5). Header comments are skipped; maxval must be 1..255.
GrayImage read_pgm(std::istream& in);
GrayImage load_pgm(const std::string& path);
/// Writes "P5\n<w> <h>\n<maxval>\n" followed by the raw bytes.
void write_pgm(std::ostream& out, const GrayImage& img);
void save_pgm(const std::string& path, const GrayImage& img);

}  // namespace txir
