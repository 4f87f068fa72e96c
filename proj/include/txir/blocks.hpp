#pragma once

#include <utility>

#include "txir/graph.hpp"
#include "txir/params.hpp"

namespace txir {

/// Detail perception module. The expand/fuse path is bias-free, so the
/// multi-scale map is linear in its input.
template <typename T>
struct DpmParams {
  ConvParams<T> expand;  // 1x1, C -> mu*C
  Tensor<T> dw3;         // [mu*C/2, 1, 3, 3]
  Tensor<T> dw5;         // [mu*C/2, 1, 5, 5]
  ConvParams<T> fuse;    // 1x1, mu*C -> C
  ConvParams<T> pw1;     // 1x1, C -> C/4
  ConvParams<T> pw2;     // 1x1, C/4 -> C
};

/// Squeeze-excitation channel attention: fc1 C -> C/r, ReLU, fc2 C/r -> C.
template <typename T>
struct ChannelAttentionParams {
  DenseParams<T> fc1;
  DenseParams<T> fc2;
};

/// Text-guided feature aggregation for a low-level map with `low` channels
/// and a high-level map with `high` channels at half resolution. The text
/// MLP emits low + high values: the first `low` gate F_l, the rest gate F_h
/// (two equal halves when low == high).
template <typename T>
struct TgfaParams {
  std::size_t low = 0;
  std::size_t high = 0;
  TwoLayerParams<T> mlp;
  DpmParams<T> dpm;
  ChannelAttentionParams<T> ca;
  ConvParams<T> merge_proj;  // 1x1, high -> low
};

enum class TgsiFusion { kAffine, kConcat };

/// Text-guided semantic interaction. The FFN emits 2C values split into the
/// gain alpha (first C) and offset beta (last C).
template <typename T>
struct TgsiParams {
  std::size_t channels = 0;
  TwoLayerParams<T> ffn;
  ConvParams<T> concat_proj;  // 1x1, 3C -> C; only for TgsiFusion::kConcat
};

struct BlockDims {
  std::size_t text_dim = 512;
  std::size_t text_hidden = 64;
  std::size_t mu = 2;
  std::size_t reduction = 4;
};

template <typename T>
DpmParams<T> make_dpm_params(std::size_t channels, std::size_t mu, SplitMix64& rng);
template <typename T>
ChannelAttentionParams<T> make_ca_params(std::size_t channels, std::size_t reduction, SplitMix64& rng);
template <typename T>
TgfaParams<T> make_tgfa_params(std::size_t low, std::size_t high, const BlockDims& dims, SplitMix64& rng);
template <typename T>
TgsiParams<T> make_tgsi_params(std::size_t channels, const BlockDims& dims, TgsiFusion fusion, SplitMix64& rng);

template <typename T>
void collect(DpmParams<T>& p, const std::string& prefix, ParamList<T>& out);
template <typename T>
void collect(ChannelAttentionParams<T>& p, const std::string& prefix, ParamList<T>& out);
template <typename T>
void collect(TgfaParams<T>& p, const std::string& prefix, ParamList<T>& out);
template <typename T>
void collect(TgsiParams<T>& p, const std::string& prefix, ParamList<T>& out);

/// Gate maps recorded during a forward pass, or replayed as constants.
template <typename T>
struct TgfaGates {
  Tensor<T> dpm;  // sigmoid gate on F_ms
  Tensor<T> ca;   // sigmoid gate on F_f^h, [N,C,1,1]
};

struct TgfaOptions {
  bool text = true;
  bool dpm = true;
  bool ca = true;
};

enum class TgsiMode { kFull, kNoAlpha, kNoBeta, kConcat, kIdentity };

/// Conv with optional bias.
template <typename T>
Var conv(Graph<T>& g, Var x, const ConvParams<T>& p, std::size_t stride = 1, std::size_t pad = 0);
template <typename T>
Var dense(Graph<T>& g, Var x, const DenseParams<T>& p);
template <typename T>
Var two_layer(Graph<T>& g, Var x, const TwoLayerParams<T>& p);

/// MLP(E_text) split into per-channel gates, returned as [N,low,1,1] and
/// [N,high,1,1]. `text` is [N, text_dim].
template <typename T>
std::pair<Var, Var> text_split(Graph<T>& g, Var text, const TgfaParams<T>& p);

/// F_f^l = F_l * F_t1, F_f^h = F_h * F_t2, gates broadcast over space.
template <typename T>
std::pair<Var, Var> text_modulate(Graph<T>& g, Var low, Var high, Var gate_low, Var gate_high);

/// Detail perception: F_ms = fuse(concat(dw3(A), dw5(B))) with (A, B) =
/// split(expand(x)); returns sigmoid(pw2(relu(pw1(F_ms)))) * F_ms.
template <typename T>
Var dpm_forward(Graph<T>& g, Var x, const DpmParams<T>& p, const Tensor<T>* frozen_gate = nullptr,
                Tensor<T>* gate_out = nullptr);

/// sigmoid(fc2(relu(fc1(gap(x))))) * x.
template <typename T>
Var channel_attention(Graph<T>& g, Var x, const ChannelAttentionParams<T>& p, const Tensor<T>* frozen_gate = nullptr,
                      Tensor<T>* gate_out = nullptr);

/// M = DPM(F_f^l) + upsample2x(merge_proj(CA(F_f^h))). F_h must be at half
/// the spatial size of F_l. Passing `frozen` replays recorded gates as
/// constants; `capture` records them.
template <typename T>
Var tgfa_forward(Graph<T>& g, Var low, Var high, Var text, const TgfaParams<T>& p, const TgfaOptions& options = {},
                 const TgfaGates<T>* frozen = nullptr, TgfaGates<T>* capture = nullptr);

/// Plain fusion used when the whole TGFA block is ablated:
/// M = F_l + upsample2x(merge_proj(F_h)).
template <typename T>
Var plain_fusion(Graph<T>& g, Var low, Var high, const TgfaParams<T>& p);

/// M_hat = (1 + alpha) * M + beta with (alpha, beta) = FFN(E_text) split per
/// channel. kConcat replaces the modulation with a 1x1 conv over
/// concat(M, broadcast FFN(E_text)).
template <typename T>
Var tgsi_forward(Graph<T>& g, Var m, Var text, const TgsiParams<T>& p, TgsiMode mode = TgsiMode::kFull);

}  // namespace txir
