#pragma once

#include <iosfwd>
#include <string>

#include "txir/tensor.hpp"

namespace txir {

// TXIR tensor record, all integers little-endian:
//   "TXIR" | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
void write_tensor(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::string& path);

namespace detail {
void write_u32(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32(std::istream& in);
}  // namespace detail

}  // namespace txir
