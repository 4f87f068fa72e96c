#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "txir/rng.hpp"
#include "txir/tensor.hpp"

namespace txir {

/// Weights take decoupled weight decay; biases do not.
enum class ParamKind { kWeight, kBias };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
  ParamKind kind;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Convolution weight [Cout,Cin,k,k] and optional bias [Cout] (empty when absent).
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;

  bool has_bias() const noexcept { return !bias.empty(); }
};

/// Affine map: weight [Dout,Din], bias [Dout].
template <typename T>
struct DenseParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Dense -> ReLU -> Dense.
template <typename T>
struct TwoLayerParams {
  DenseParams<T> first;
  DenseParams<T> second;
};

/// Kaiming-uniform (ReLU gain): U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, SplitMix64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
ConvParams<T> make_conv(std::size_t cin, std::size_t cout, std::size_t k, bool bias, SplitMix64& rng) {
  ConvParams<T> p;
  p.weight = kaiming_uniform<T>({cout, cin, k, k}, cin * k * k, rng);
  if (bias) p.bias = Tensor<T>({cout});
  return p;
}

template <typename T>
DenseParams<T> make_dense(std::size_t din, std::size_t dout, SplitMix64& rng) {
  return {kaiming_uniform<T>({dout, din}, din, rng), Tensor<T>({dout})};
}

template <typename T>
TwoLayerParams<T> make_two_layer(std::size_t din, std::size_t hidden, std::size_t dout, SplitMix64& rng) {
  return {make_dense<T>(din, hidden, rng), make_dense<T>(hidden, dout, rng)};
}

template <typename T>
void collect(ConvParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &p.weight, ParamKind::kWeight});
  if (p.has_bias()) out.push_back({prefix + ".bias", &p.bias, ParamKind::kBias});
}

template <typename T>
void collect(DenseParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &p.weight, ParamKind::kWeight});
  out.push_back({prefix + ".bias", &p.bias, ParamKind::kBias});
}

template <typename T>
void collect(TwoLayerParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  collect(p.first, prefix + ".0", out);
  collect(p.second, prefix + ".1", out);
}

}  // namespace txir
