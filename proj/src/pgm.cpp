#include "txir/pgm.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>

#include "txir/tensor.hpp"

namespace txir {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t header_number(std::istream& in, const char* what) {
  const std::string tok = header_token(in);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    throw FormatError(std::string("PGM: bad ") + what + " \"" + tok + "\"");
  }
  return std::stoul(tok);
}

}  // namespace

GrayImage read_pgm(std::istream& in) {
  if (header_token(in) != "P5") throw FormatError("PGM: expected magic P5");
  GrayImage img;
  img.width = header_number(in, "width");
  img.height = header_number(in, "height");
  const std::size_t maxval = header_number(in, "maxval");
  if (img.width == 0 || img.height == 0) throw FormatError("PGM: zero dimension");
  if (maxval == 0 || maxval > 255) throw FormatError("PGM: maxval " + std::to_string(maxval) + " unsupported, need 1..255");
  img.maxval = static_cast<std::uint8_t>(maxval);
  img.pixels.resize(img.width * img.height);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw FormatError("PGM: truncated pixel data");
  }
  for (const auto v : img.pixels)
    if (v > img.maxval) throw FormatError("PGM: pixel value exceeds maxval");
  return img;
}

GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return read_pgm(in);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_pgm(std::ostream& out, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height || img.pixels.empty()) throw FormatError("PGM: inconsistent image");
  out << "P5\n" << img.width << ' ' << img.height << '\n' << static_cast<int>(img.maxval) << '\n';
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw FormatError("PGM: write failed");
}

void save_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_pgm(out, img);
}

}  // namespace txir
