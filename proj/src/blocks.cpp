#include "txir/blocks.hpp"

#include <stdexcept>
#include <tuple>

namespace txir {

template <typename T>
DpmParams<T> make_dpm_params(std::size_t channels, std::size_t mu, SplitMix64& rng) {
  const std::size_t wide = mu * channels;
  if (wide % 2 != 0) throw ShapeError("DPM needs mu*C even, got mu=" + std::to_string(mu) + " C=" + std::to_string(channels));
  if (channels % 4 != 0) throw ShapeError("DPM needs C divisible by 4, got " + std::to_string(channels));
  DpmParams<T> p;
  p.expand = make_conv<T>(channels, wide, 1, false, rng);
  p.dw3 = kaiming_uniform<T>({wide / 2, 1, 3, 3}, 9, rng);
  p.dw5 = kaiming_uniform<T>({wide / 2, 1, 5, 5}, 25, rng);
  p.fuse = make_conv<T>(wide, channels, 1, false, rng);
  p.pw1 = make_conv<T>(channels, channels / 4, 1, true, rng);
  p.pw2 = make_conv<T>(channels / 4, channels, 1, true, rng);
  return p;
}

template <typename T>
ChannelAttentionParams<T> make_ca_params(std::size_t channels, std::size_t reduction, SplitMix64& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ShapeError("channel attention needs C divisible by r, got C=" + std::to_string(channels) +
                     " r=" + std::to_string(reduction));
  }
  return {make_dense<T>(channels, channels / reduction, rng), make_dense<T>(channels / reduction, channels, rng)};
}

template <typename T>
TgfaParams<T> make_tgfa_params(std::size_t low, std::size_t high, const BlockDims& dims, SplitMix64& rng) {
  TgfaParams<T> p;
  p.low = low;
  p.high = high;
  p.mlp = make_two_layer<T>(dims.text_dim, dims.text_hidden, low + high, rng);
  p.dpm = make_dpm_params<T>(low, dims.mu, rng);
  p.ca = make_ca_params<T>(high, dims.reduction, rng);
  p.merge_proj = make_conv<T>(high, low, 1, true, rng);
  return p;
}

template <typename T>
TgsiParams<T> make_tgsi_params(std::size_t channels, const BlockDims& dims, TgsiFusion fusion, SplitMix64& rng) {
  TgsiParams<T> p;
  p.channels = channels;
  p.ffn = make_two_layer<T>(dims.text_dim, dims.text_hidden, 2 * channels, rng);
  if (fusion == TgsiFusion::kConcat) p.concat_proj = make_conv<T>(3 * channels, channels, 1, true, rng);
  return p;
}

template <typename T>
void collect(DpmParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  collect(p.expand, prefix + ".expand", out);
  out.push_back({prefix + ".dw3.weight", &p.dw3, ParamKind::kWeight});
  out.push_back({prefix + ".dw5.weight", &p.dw5, ParamKind::kWeight});
  collect(p.fuse, prefix + ".fuse", out);
  collect(p.pw1, prefix + ".pw1", out);
  collect(p.pw2, prefix + ".pw2", out);
}

template <typename T>
void collect(ChannelAttentionParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  collect(p.fc1, prefix + ".fc1", out);
  collect(p.fc2, prefix + ".fc2", out);
}

template <typename T>
void collect(TgfaParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  collect(p.mlp, prefix + ".mlp", out);
  collect(p.dpm, prefix + ".dpm", out);
  collect(p.ca, prefix + ".ca", out);
  collect(p.merge_proj, prefix + ".merge_proj", out);
}

template <typename T>
void collect(TgsiParams<T>& p, const std::string& prefix, ParamList<T>& out) {
  collect(p.ffn, prefix + ".ffn", out);
  if (!p.concat_proj.weight.empty()) collect(p.concat_proj, prefix + ".concat_proj", out);
}

template <typename T>
Var conv(Graph<T>& g, Var x, const ConvParams<T>& p, std::size_t stride, std::size_t pad) {
  const Var bias = p.has_bias() ? g.param(p.bias) : Var{};
  return g.conv2d(x, g.param(p.weight), bias, stride, pad);
}

template <typename T>
Var dense(Graph<T>& g, Var x, const DenseParams<T>& p) {
  return g.linear(x, g.param(p.weight), g.param(p.bias));
}

template <typename T>
Var two_layer(Graph<T>& g, Var x, const TwoLayerParams<T>& p) {
  return dense(g, g.relu(dense(g, x, p.first)), p.second);
}

namespace {

template <typename T>
Var as_channel_gate(Graph<T>& g, Var v) {
  const Shape& s = g.shape(v);
  return g.reshape(v, {s[0], s[1], 1, 1});
}

}  // namespace

template <typename T>
std::pair<Var, Var> text_split(Graph<T>& g, Var text, const TgfaParams<T>& p) {
  const Shape& ts = g.shape(text);
  if (ts.size() != 2 || ts[1] != p.mlp.first.weight.dim(1)) {
    throw ShapeError("text_split: text must be [N," + std::to_string(p.mlp.first.weight.dim(1)) + "], got " +
                     shape_to_string(ts));
  }
  const Var out = two_layer(g, text, p.mlp);
  return {as_channel_gate(g, g.slice_channels(out, 0, p.low)),
          as_channel_gate(g, g.slice_channels(out, p.low, p.low + p.high))};
}

template <typename T>
std::pair<Var, Var> text_modulate(Graph<T>& g, Var low, Var high, Var gate_low, Var gate_high) {
  auto check = [&](Var map, Var gate, const char* which) {
    const Shape& ms = g.shape(map);
    const Shape& gs = g.shape(gate);
    if (ms.size() != 4 || gs.size() != 4 || gs[0] != ms[0] || gs[1] != ms[1] || gs[2] != 1 || gs[3] != 1) {
      throw ShapeError(std::string("text_modulate: ") + which + " gate " + shape_to_string(gs) +
                       " does not match feature map " + shape_to_string(ms));
    }
  };
  check(low, gate_low, "low-level");
  check(high, gate_high, "high-level");
  return {g.mul(low, gate_low), g.mul(high, gate_high)};
}

template <typename T>
Var dpm_forward(Graph<T>& g, Var x, const DpmParams<T>& p, const Tensor<T>* frozen_gate, Tensor<T>* gate_out) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4 || xs[1] != p.expand.weight.dim(1)) {
    throw ShapeError("dpm_forward: expected " + std::to_string(p.expand.weight.dim(1)) + " channels, got " +
                     shape_to_string(xs));
  }
  const auto [a, b] = g.split(conv(g, x, p.expand));
  const Var branches[] = {g.dwconv2d(a, g.param(p.dw3)), g.dwconv2d(b, g.param(p.dw5))};
  const Var ms = conv(g, g.concat(branches), p.fuse);
  const Var gate = frozen_gate ? g.constant(*frozen_gate) : g.sigmoid(conv(g, g.relu(conv(g, ms, p.pw1)), p.pw2));
  if (gate_out) *gate_out = g.value(gate);
  return g.mul(gate, ms);
}

template <typename T>
Var channel_attention(Graph<T>& g, Var x, const ChannelAttentionParams<T>& p, const Tensor<T>* frozen_gate,
                      Tensor<T>* gate_out) {
  const Shape& xs = g.shape(x);
  if (xs.size() != 4 || xs[1] != p.fc1.weight.dim(1)) {
    throw ShapeError("channel_attention: expected " + std::to_string(p.fc1.weight.dim(1)) + " channels, got " +
                     shape_to_string(xs));
  }
  Var gate;
  if (frozen_gate) {
    gate = g.constant(*frozen_gate);
  } else {
    const Var z = g.reshape(g.gap(x), {xs[0], xs[1]});
    gate = as_channel_gate(g, g.sigmoid(dense(g, g.relu(dense(g, z, p.fc1)), p.fc2)));
  }
  if (gate_out) *gate_out = g.value(gate);
  return g.mul(x, gate);
}

namespace {

template <typename T>
void check_pair(const Graph<T>& g, Var low, Var high, const TgfaParams<T>& p, const char* op) {
  const Shape& ls = g.shape(low);
  const Shape& hs = g.shape(high);
  if (ls.size() != 4 || hs.size() != 4 || ls[0] != hs[0]) {
    throw ShapeError(std::string(op) + ": expected two [N,C,H,W] maps, got " + shape_to_string(ls) + " and " +
                     shape_to_string(hs));
  }
  if (ls[1] != p.low || hs[1] != p.high) {
    throw ShapeError(std::string(op) + ": channel counts " + std::to_string(ls[1]) + "/" + std::to_string(hs[1]) +
                     " do not match block " + std::to_string(p.low) + "/" + std::to_string(p.high));
  }
  if (hs[2] * 2 != ls[2] || hs[3] * 2 != ls[3]) {
    throw ShapeError(std::string(op) + ": high-level map " + shape_to_string(hs) +
                     " must be half the resolution of " + shape_to_string(ls));
  }
}

}  // namespace

template <typename T>
Var tgfa_forward(Graph<T>& g, Var low, Var high, Var text, const TgfaParams<T>& p, const TgfaOptions& options,
                 const TgfaGates<T>* frozen, TgfaGates<T>* capture) {
  check_pair(g, low, high, p, "tgfa_forward");
  Var fl = low, fh = high;
  if (options.text) {
    const auto [gl, gh] = text_split(g, text, p);
    std::tie(fl, fh) = text_modulate(g, low, high, gl, gh);
  }
  const Var dp = options.dpm ? dpm_forward(g, fl, p.dpm, frozen ? &frozen->dpm : nullptr, capture ? &capture->dpm : nullptr)
                             : fl;
  const Var ca = options.ca ? channel_attention(g, fh, p.ca, frozen ? &frozen->ca : nullptr,
                                                capture ? &capture->ca : nullptr)
                            : fh;
  return g.add(dp, g.upsample2x(conv(g, ca, p.merge_proj)));
}

template <typename T>
Var plain_fusion(Graph<T>& g, Var low, Var high, const TgfaParams<T>& p) {
  check_pair(g, low, high, p, "plain_fusion");
  return g.add(low, g.upsample2x(conv(g, high, p.merge_proj)));
}

template <typename T>
Var tgsi_forward(Graph<T>& g, Var m, Var text, const TgsiParams<T>& p, TgsiMode mode) {
  const Shape& ms = g.shape(m);
  if (ms.size() != 4 || ms[1] != p.channels) {
    throw ShapeError("tgsi_forward: expected " + std::to_string(p.channels) + " channels, got " + shape_to_string(ms));
  }
  if (mode == TgsiMode::kIdentity) return m;
  const Shape& ts = g.shape(text);
  if (ts.size() != 2 || ts[0] != ms[0] || ts[1] != p.ffn.first.weight.dim(1)) {
    throw ShapeError("tgsi_forward: text must be [" + std::to_string(ms[0]) + "," +
                     std::to_string(p.ffn.first.weight.dim(1)) + "], got " + shape_to_string(ts));
  }
  const std::size_t c = p.channels;
  const Var out = two_layer(g, text, p.ffn);

  if (mode == TgsiMode::kConcat) {
    if (p.concat_proj.weight.empty()) throw std::logic_error("tgsi_forward: concat fusion without concat_proj params");
    const Var t = g.reshape(out, {ms[0], 2 * c, 1, 1});
    const Var spread = g.add(g.constant(Tensor<T>({ms[0], 2 * c, ms[2], ms[3]})), t);
    const Var parts[] = {m, spread};
    return conv(g, g.concat(parts), p.concat_proj);
  }

  const Var alpha = as_channel_gate(g, g.slice_channels(out, 0, c));
  const Var beta = as_channel_gate(g, g.slice_channels(out, c, 2 * c));
  switch (mode) {
    case TgsiMode::kNoAlpha:
      return g.add(m, beta);
    case TgsiMode::kNoBeta:
      return g.mul(m, g.add_scalar(alpha, T{1}));
    default:
      return g.add(g.mul(m, g.add_scalar(alpha, T{1})), beta);
  }
}

#define TXIR_INSTANTIATE_BLOCKS(T)                                                                                  \
  template DpmParams<T> make_dpm_params<T>(std::size_t, std::size_t, SplitMix64&);                                 \
  template ChannelAttentionParams<T> make_ca_params<T>(std::size_t, std::size_t, SplitMix64&);                     \
  template TgfaParams<T> make_tgfa_params<T>(std::size_t, std::size_t, const BlockDims&, SplitMix64&);              \
  template TgsiParams<T> make_tgsi_params<T>(std::size_t, const BlockDims&, TgsiFusion, SplitMix64&);               \
  template void collect<T>(DpmParams<T>&, const std::string&, ParamList<T>&);                                     \
  template void collect<T>(ChannelAttentionParams<T>&, const std::string&, ParamList<T>&);                        \
  template void collect<T>(TgfaParams<T>&, const std::string&, ParamList<T>&);                                    \
  template void collect<T>(TgsiParams<T>&, const std::string&, ParamList<T>&);                                    \
  template Var conv<T>(Graph<T>&, Var, const ConvParams<T>&, std::size_t, std::size_t);                            \
  template Var dense<T>(Graph<T>&, Var, const DenseParams<T>&);                                                    \
  template Var two_layer<T>(Graph<T>&, Var, const TwoLayerParams<T>&);                                             \
  template std::pair<Var, Var> text_split<T>(Graph<T>&, Var, const TgfaParams<T>&);                                \
  template std::pair<Var, Var> text_modulate<T>(Graph<T>&, Var, Var, Var, Var);                                    \
  template Var dpm_forward<T>(Graph<T>&, Var, const DpmParams<T>&, const Tensor<T>*, Tensor<T>*);                  \
  template Var channel_attention<T>(Graph<T>&, Var, const ChannelAttentionParams<T>&, const Tensor<T>*, Tensor<T>*); \
  template Var tgfa_forward<T>(Graph<T>&, Var, Var, Var, const TgfaParams<T>&, const TgfaOptions&,                 \
                               const TgfaGates<T>*, TgfaGates<T>*);                                                \
  template Var plain_fusion<T>(Graph<T>&, Var, Var, const TgfaParams<T>&);                                         \
  template Var tgsi_forward<T>(Graph<T>&, Var, Var, const TgsiParams<T>&, TgsiMode);

TXIR_INSTANTIATE_BLOCKS(float)
TXIR_INSTANTIATE_BLOCKS(double)

}  // namespace txir
