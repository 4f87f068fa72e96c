#include "txir/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace txir {

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'X', 'I', 'R'};
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

namespace detail {

void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("unexpected end of stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  out.write(kMagic.data(), kMagic.size());
  detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::write_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::write_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError("failed writing tensor");
}

Tensor<float> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size())) throw FormatError("unexpected end of stream reading magic");
  if (magic != kMagic) throw FormatError("bad tensor magic, expected \"TXIR\"");
  const std::uint32_t rank = detail::read_u32(in);
  if (rank == 0 || rank > kMaxRank) throw FormatError("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::read_u32(in);
    if (d == 0) throw FormatError("zero tensor dimension");
  }
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = std::bit_cast<float>(detail::read_u32(in));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor<float> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_tensor(in);
}

}  // namespace txir
