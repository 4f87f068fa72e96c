#include "txir/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "kernels.hpp"

namespace txir {

// ---------------------------------------------------------------------------
// Gradients

template <typename T>
const Tensor<T>* Gradients<T>::find(Var v) const {
  auto it = by_var_.find(v.id);
  return it == by_var_.end() ? nullptr : &it->second;
}

template <typename T>
const Tensor<T>* Gradients<T>::find(const Tensor<T>& param) const {
  auto it = param_to_var_.find(&param);
  return it == param_to_var_.end() ? nullptr : find(Var{it->second});
}

template <typename T>
const Tensor<T>& Gradients<T>::of(Var v) const {
  if (const auto* g = find(v)) return *g;
  throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id));
}

template <typename T>
const Tensor<T>& Gradients<T>::of(const Tensor<T>& param) const {
  if (const auto* g = find(param)) return *g;
  throw std::out_of_range("no gradient recorded for parameter of shape " + shape_to_string(param.shape()));
}

// ---------------------------------------------------------------------------
// Graph plumbing

namespace {

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Broadcast layout of operand b against a full-size operand a.
struct Broadcast {
  enum Kind { kSame, kScalar, kChannel } kind = kSame;
  std::size_t batch = 1, channels = 1, inner = 1;
  bool per_sample = false;

  std::size_t b_index(std::size_t n, std::size_t c) const { return (per_sample ? n * channels : 0) + c; }
};

std::optional<Broadcast> plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) return p;
  if (shape_numel(b) == 1) {
    p.kind = Broadcast::kScalar;
    return p;
  }
  if (a.size() < 2) return std::nullopt;
  p.kind = Broadcast::kChannel;
  p.batch = a[0];
  p.channels = a[1];
  for (std::size_t i = 2; i < a.size(); ++i) p.inner *= a[i];
  if (b.size() == 1 && b[0] == p.channels) return p;
  const bool tail_ones = b.size() == a.size() && std::all_of(b.begin() + 2, b.end(), [](std::size_t d) { return d == 1; });
  if (tail_ones && b[1] == p.channels && (b[0] == p.batch || b[0] == 1)) {
    p.per_sample = b[0] == p.batch && p.batch > 1;
    return p;
  }
  return std::nullopt;
}

// Calls fn(i_a, i_b) for every element of a.
template <typename F>
void for_each_pair(const Broadcast& p, std::size_t numel, F&& fn) {
  switch (p.kind) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < numel; ++i) fn(i, i);
      break;
    case Broadcast::kScalar:
      for (std::size_t i = 0; i < numel; ++i) fn(i, std::size_t{0});
      break;
    case Broadcast::kChannel:
      for (std::size_t n = 0; n < p.batch; ++n) {
        for (std::size_t c = 0; c < p.channels; ++c) {
          const std::size_t base = (n * p.channels + c) * p.inner;
          const std::size_t bi = p.b_index(n, c);
          for (std::size_t j = 0; j < p.inner; ++j) fn(base + j, bi);
        }
      }
      break;
  }
}

// Rank-agnostic view of axis 1: [outer, axis, inner].
struct AxisView {
  std::size_t outer, axis, inner;
};

AxisView axis1_view(const Shape& s) {
  if (s.size() < 2) throw ShapeError("channel-axis op needs rank >= 2, got " + shape_to_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

struct UpsampleTap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<UpsampleTap> upsample_taps(std::size_t in_size) {
  std::vector<UpsampleTap> taps(2 * in_size);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = std::min(i0 + 1, in_size - 1);
    const double lambda = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - lambda, lambda};
  }
  return taps;
}

std::string dim_error(std::string_view op, const std::string& what) {
  return std::string(op) + ": " + what;
}

}  // namespace

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::input(Tensor<T> value) {
  Node n;
  n.op = "input";
  n.owned = std::move(value);
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::param(const Tensor<T>& value) {
  Node n;
  n.op = "param";
  n.external = &value;
  n.leaf = true;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid graph handle");
  return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
std::vector<std::string_view> Graph<T>::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n.op);
  return names;
}

template <typename T>
Var Graph<T>::record(std::string_view op, Tensor<T> out, std::vector<std::uint32_t> inputs, BackwardFn fn) {
  if (!out.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value (output shape " +
                       shape_to_string(out.shape()) + ")");
  }
  Node n;
  n.op = op;
  n.owned = std::move(out);
  n.inputs = std::move(inputs);
  n.requires_grad = grad_enabled_ && std::any_of(n.inputs.begin(), n.inputs.end(),
                                                 [this](std::uint32_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>* Graph<T>::grad_for(std::uint32_t id) {
  if (!nodes_[id].requires_grad) return nullptr;
  Tensor<T>& g = grads_[id];
  if (g.empty()) g = Tensor<T>(nodes_[id].value().shape());
  return &g;
}

template <typename T>
Gradients<T> Graph<T>::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value().numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_to_string(root.value().shape()));
  }
  grads_.assign(nodes_.size(), Tensor<T>{});
  if (root.requires_grad) grads_[loss.id] = Tensor<T>(root.value().shape(), T{1});

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.backward || grads_[i].empty()) continue;
    if (!grads_[i].all_finite()) {
      throw NumericError("non-finite gradient reaching " + std::string(n.op));
    }
    n.backward(*this, n, grads_[i]);
  }

  Gradients<T> out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.leaf || !n.requires_grad) continue;
    Tensor<T> g = grads_[i].empty() ? Tensor<T>(n.value().shape()) : std::move(grads_[i]);
    if (!g.all_finite()) throw NumericError("non-finite gradient for leaf " + std::to_string(i));
    if (n.external) {
      auto [it, inserted] = out.param_to_var_.emplace(n.external, i);
      if (!inserted) {
        // Same parameter bound twice: fold into the first binding.
        auto& first = out.by_var_.at(it->second);
        for (std::size_t k = 0; k < g.numel(); ++k) first[k] += g[k];
        continue;
      }
    }
    out.by_var_.emplace(i, std::move(g));
  }
  clear();
  return out;
}

template <typename T>
void Graph<T>::clear() {
  nodes_.clear();
  grads_.clear();
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var Graph<T>::conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  if (xs.size() != 4) throw ShapeError(dim_error("conv2d", "input must be [N,C,H,W], got " + shape_to_string(xs)));
  if (ws.size() != 4 || ws[2] != ws[3]) {
    throw ShapeError(dim_error("conv2d", "weight must be [Cout,Cin,k,k], got " + shape_to_string(ws)));
  }
  if (ws[1] != xs[1]) {
    throw ShapeError(dim_error("conv2d", "weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                                             std::to_string(xs[1])));
  }
  const std::size_t k = ws[2];
  if (k % 2 == 0) throw ShapeError(dim_error("conv2d", "kernel size must be odd, got " + std::to_string(k)));
  if (stride == 0) throw ShapeError(dim_error("conv2d", "stride must be positive"));
  if (xs[2] + 2 * pad < k || xs[3] + 2 * pad < k) {
    throw ShapeError(dim_error("conv2d", "kernel " + std::to_string(k) + " larger than padded input " +
                                             shape_to_string(xs)));
  }
  if (bias.valid() && shape(bias) != Shape{ws[0]}) {
    throw ShapeError(dim_error("conv2d", "bias must be [" + std::to_string(ws[0]) + "], got " +
                                             shape_to_string(shape(bias))));
  }

  const kernels::ConvGeometry geo{xs[1], xs[2], xs[3], k, stride, pad,
                                  (xs[2] + 2 * pad - k) / stride + 1, (xs[3] + 2 * pad - k) / stride + 1};
  const std::size_t N = xs[0], Cout = ws[0], K = xs[1] * k * k, P = geo.out_h * geo.out_w;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  Tensor<T> out({N, Cout, geo.out_h, geo.out_w});
  const T* xd = value(x).data().data();
  const T* wd = value(w).data().data();
  std::vector<T> col(pointwise ? 0 : K * P);
  for (std::size_t n = 0; n < N; ++n) {
    const T* xn = xd + n * xs[1] * xs[2] * xs[3];
    const T* cn = xn;
    if (!pointwise) {
      kernels::im2col(geo, xn, col.data());
      cn = col.data();
    }
    T* on = out.data().data() + n * Cout * P;
    if (bias.valid()) {
      const auto& bd = value(bias);
      for (std::size_t o = 0; o < Cout; ++o) std::fill_n(on + o * P, P, bd[o]);
    }
    kernels::gemm_nn(Cout, P, K, wd, cn, on);
  }

  std::vector<std::uint32_t> inputs{x.id, w.id};
  if (bias.valid()) inputs.push_back(bias.id);
  return record("conv2d", std::move(out), std::move(inputs),
                [geo, N, Cout, K, P, pointwise](Graph& g, const Node& self, const Tensor<T>& gout) {
                  const auto& xv = g.nodes_[self.inputs[0]].value();
                  const auto& wv = g.nodes_[self.inputs[1]].value();
                  Tensor<T>* gx = g.grad_for(self.inputs[0]);
                  Tensor<T>* gw = g.grad_for(self.inputs[1]);
                  Tensor<T>* gb = self.inputs.size() > 2 ? g.grad_for(self.inputs[2]) : nullptr;
                  const std::size_t in_stride = geo.channels * geo.height * geo.width;
                  std::vector<T> col(pointwise ? 0 : K * P);
                  std::vector<T> gcol(pointwise || !gx ? 0 : K * P);
                  for (std::size_t n = 0; n < N; ++n) {
                    const T* go = gout.data().data() + n * Cout * P;
                    if (gb) {
                      for (std::size_t o = 0; o < Cout; ++o) {
                        T s{0};
                        for (std::size_t p = 0; p < P; ++p) s += go[o * P + p];
                        (*gb)[o] += s;
                      }
                    }
                    if (gw) {
                      const T* xn = xv.data().data() + n * in_stride;
                      const T* cn = xn;
                      if (!pointwise) {
                        kernels::im2col(geo, xn, col.data());
                        cn = col.data();
                      }
                      kernels::gemm_nt(Cout, K, P, go, cn, gw->data().data());
                    }
                    if (gx) {
                      T* gxn = gx->data().data() + n * in_stride;
                      if (pointwise) {
                        kernels::gemm_tn(K, P, Cout, wv.data().data(), go, gxn);
                      } else {
                        std::fill(gcol.begin(), gcol.end(), T{0});
                        kernels::gemm_tn(K, P, Cout, wv.data().data(), go, gcol.data());
                        kernels::col2im(geo, gcol.data(), gxn);
                      }
                    }
                  }
                });
}

template <typename T>
Var Graph<T>::dwconv2d(Var x, Var w) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  if (xs.size() != 4) throw ShapeError(dim_error("dwconv2d", "input must be [N,C,H,W], got " + shape_to_string(xs)));
  if (ws.size() != 4 || ws[1] != 1 || ws[2] != ws[3]) {
    throw ShapeError(dim_error("dwconv2d", "weight must be [C,1,k,k], got " + shape_to_string(ws)));
  }
  if (ws[0] != xs[1]) {
    throw ShapeError(dim_error("dwconv2d", "weight has " + std::to_string(ws[0]) + " channels, input has " +
                                               std::to_string(xs[1])));
  }
  const std::size_t k = ws[2];
  if (k != 3 && k != 5) throw ShapeError(dim_error("dwconv2d", "kernel size must be 3 or 5, got " + std::to_string(k)));
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], pad = k / 2;

  // Visits every (output row, input row, column range) tap of channel-plane
  // convolution for offset (ky, kx).
  auto for_taps = [H, W, k, pad](auto&& fn) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      std::size_t ylo, yhi;
      kernels::tap_range(static_cast<long>(ky) - static_cast<long>(pad), H, ylo, yhi);
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::size_t xlo, xhi;
        kernels::tap_range(static_cast<long>(kx) - static_cast<long>(pad), W, xlo, xhi);
        fn(ky, kx, ylo, yhi, xlo, xhi);
      }
    }
  };

  Tensor<T> out(xs);
  const auto& xv = value(x);
  const auto& wv = value(w);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* in = xv.data().data() + (n * C + c) * H * W;
      T* o = out.data().data() + (n * C + c) * H * W;
      const T* kw = wv.data().data() + c * k * k;
      for_taps([&](std::size_t ky, std::size_t kx, std::size_t ylo, std::size_t yhi, std::size_t xlo, std::size_t xhi) {
        const T wk = kw[ky * k + kx];
        const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t y = ylo; y < yhi; ++y) {
          const T* src = in + static_cast<std::ptrdiff_t>((y + ky - pad) * W) + dx;
          T* dst = o + y * W;
#pragma omp simd
          for (std::size_t xx = xlo; xx < xhi; ++xx) dst[xx] += wk * src[xx];
        }
      });
    }
  }

  return record("dwconv2d", std::move(out), {x.id, w.id},
                [N, C, H, W, k, pad, for_taps](Graph& g, const Node& self, const Tensor<T>& gout) {
                  const auto& xv = g.nodes_[self.inputs[0]].value();
                  const auto& wv = g.nodes_[self.inputs[1]].value();
                  Tensor<T>* gx = g.grad_for(self.inputs[0]);
                  Tensor<T>* gw = g.grad_for(self.inputs[1]);
                  for (std::size_t n = 0; n < N; ++n) {
                    for (std::size_t c = 0; c < C; ++c) {
                      const std::size_t plane = (n * C + c) * H * W;
                      const T* in = xv.data().data() + plane;
                      const T* go = gout.data().data() + plane;
                      for_taps([&](std::size_t ky, std::size_t kx, std::size_t ylo, std::size_t yhi, std::size_t xlo,
                                   std::size_t xhi) {
                        const std::size_t tap = c * k * k + ky * k + kx;
                        T acc{0};
                        const auto dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t y = ylo; y < yhi; ++y) {
                          const std::ptrdiff_t src_row = static_cast<std::ptrdiff_t>((y + ky - pad) * W) + dx;
                          const T* grow = go + y * W;
                          if (gw) {
                            const T* src = in + src_row;
#pragma omp simd reduction(+ : acc)
                            for (std::size_t xx = xlo; xx < xhi; ++xx) acc += grow[xx] * src[xx];
                          }
                          if (gx) {
                            T* dst = gx->data().data() + plane + src_row;
                            const T wk = wv[tap];
#pragma omp simd
                            for (std::size_t xx = xlo; xx < xhi; ++xx) dst[xx] += wk * grow[xx];
                          }
                        }
                        if (gw) (*gw)[tap] += acc;
                      });
                    }
                  }
                });
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var bias) {
  const auto& xs = shape(x);
  const auto& ws = shape(w);
  if (xs.size() != 2) throw ShapeError(dim_error("linear", "input must be [N,Din], got " + shape_to_string(xs)));
  if (ws.size() != 2) throw ShapeError(dim_error("linear", "weight must be [Dout,Din], got " + shape_to_string(ws)));
  if (ws[1] != xs[1]) {
    throw ShapeError(dim_error("linear", "inner dimension mismatch: input " + shape_to_string(xs) + " vs weight " +
                                             shape_to_string(ws)));
  }
  if (bias.valid() && shape(bias) != Shape{ws[0]}) {
    throw ShapeError(dim_error("linear", "bias must be [" + std::to_string(ws[0]) + "], got " +
                                             shape_to_string(shape(bias))));
  }
  const std::size_t N = xs[0], Din = xs[1], Dout = ws[0];
  Tensor<T> out({N, Dout});
  if (bias.valid()) {
    const auto& bd = value(bias);
    for (std::size_t n = 0; n < N; ++n) std::copy(bd.data().begin(), bd.data().end(), out.data().begin() + n * Dout);
  }
  kernels::gemm_nt(N, Dout, Din, value(x).data().data(), value(w).data().data(), out.data().data());

  std::vector<std::uint32_t> inputs{x.id, w.id};
  if (bias.valid()) inputs.push_back(bias.id);
  return record("linear", std::move(out), std::move(inputs),
                [N, Din, Dout](Graph& g, const Node& self, const Tensor<T>& gout) {
                  const auto& xv = g.nodes_[self.inputs[0]].value();
                  const auto& wv = g.nodes_[self.inputs[1]].value();
                  if (auto* gx = g.grad_for(self.inputs[0])) {
                    kernels::gemm_nn(N, Din, Dout, gout.data().data(), wv.data().data(), gx->data().data());
                  }
                  if (auto* gw = g.grad_for(self.inputs[1])) {
                    kernels::gemm_tn(Dout, Din, N, gout.data().data(), xv.data().data(), gw->data().data());
                  }
                  if (self.inputs.size() > 2) {
                    if (auto* gb = g.grad_for(self.inputs[2])) {
                      for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t o = 0; o < Dout; ++o) (*gb)[o] += gout[n * Dout + o];
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Pointwise and reductions

template <typename T>
Var Graph<T>::gap(Var x) {
  const auto& xs = shape(x);
  if (xs.size() != 4) throw ShapeError(dim_error("gap", "input must be [N,C,H,W], got " + shape_to_string(xs)));
  const std::size_t NC = xs[0] * xs[1], HW = xs[2] * xs[3];
  Tensor<T> out({xs[0], xs[1], 1, 1});
  const auto& xv = value(x);
  for (std::size_t i = 0; i < NC; ++i) {
    T s{0};
    for (std::size_t j = 0; j < HW; ++j) s += xv[i * HW + j];
    out[i] = s / static_cast<T>(HW);
  }
  return record("gap", std::move(out), {x.id}, [NC, HW](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0])) {
      for (std::size_t i = 0; i < NC; ++i) {
        const T v = gout[i] / static_cast<T>(HW);
        for (std::size_t j = 0; j < HW; ++j) (*gx)[i * HW + j] += v;
      }
    }
  });
}

template <typename T>
Var Graph<T>::sigmoid(Var x) {
  const auto& xv = value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(xv[i]);
  return record("sigmoid", std::move(out), {x.id}, [](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0])) {
      const auto& y = self.value();
      for (std::size_t i = 0; i < y.numel(); ++i) (*gx)[i] += gout[i] * y[i] * (T{1} - y[i]);
    }
  });
}

template <typename T>
Var Graph<T>::relu(Var x) {
  const auto& xv = value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > T{0} ? xv[i] : T{0};
  return record("relu", std::move(out), {x.id}, [](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0])) {
      const auto& in = g.nodes_[self.inputs[0]].value();
      for (std::size_t i = 0; i < in.numel(); ++i)
        if (in[i] > T{0}) (*gx)[i] += gout[i];
    }
  });
}

template <typename T>
Var Graph<T>::binary(std::string_view op, Var a, Var b) {
  const bool commutative = op == "add" || op == "mul";
  auto plan = plan_broadcast(shape(a), shape(b));
  if (!plan && commutative && plan_broadcast(shape(b), shape(a))) std::swap(a, b), plan = plan_broadcast(shape(a), shape(b));
  if (!plan) {
    throw ShapeError(dim_error(op, "shapes " + shape_to_string(shape(a)) + " and " + shape_to_string(shape(b)) +
                                       " are not broadcast-compatible"));
  }
  const Broadcast p = *plan;
  const auto& av = value(a);
  const auto& bv = value(b);
  Tensor<T> out(av.shape());
  enum class Kind { kAdd, kSub, kMul, kDiv };
  const Kind kind = op == "add" ? Kind::kAdd : op == "sub" ? Kind::kSub : op == "mul" ? Kind::kMul : Kind::kDiv;
  for_each_pair(p, out.numel(), [&](std::size_t i, std::size_t j) {
    switch (kind) {
      case Kind::kAdd: out[i] = av[i] + bv[j]; break;
      case Kind::kSub: out[i] = av[i] - bv[j]; break;
      case Kind::kMul: out[i] = av[i] * bv[j]; break;
      case Kind::kDiv: out[i] = av[i] / bv[j]; break;
    }
  });
  return record(op, std::move(out), {a.id, b.id}, [p, kind](Graph& g, const Node& self, const Tensor<T>& gout) {
    const auto& av = g.nodes_[self.inputs[0]].value();
    const auto& bv = g.nodes_[self.inputs[1]].value();
    Tensor<T>* ga = g.grad_for(self.inputs[0]);
    Tensor<T>* gb = g.grad_for(self.inputs[1]);
    for_each_pair(p, gout.numel(), [&](std::size_t i, std::size_t j) {
      const T go = gout[i];
      switch (kind) {
        case Kind::kAdd:
          if (ga) (*ga)[i] += go;
          if (gb) (*gb)[j] += go;
          break;
        case Kind::kSub:
          if (ga) (*ga)[i] += go;
          if (gb) (*gb)[j] -= go;
          break;
        case Kind::kMul:
          if (ga) (*ga)[i] += go * bv[j];
          if (gb) (*gb)[j] += go * av[i];
          break;
        case Kind::kDiv:
          if (ga) (*ga)[i] += go / bv[j];
          if (gb) (*gb)[j] -= go * av[i] / (bv[j] * bv[j]);
          break;
      }
    });
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  return binary("add", a, b);
}
template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return binary("sub", a, b);
}
template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  return binary("mul", a, b);
}
template <typename T>
Var Graph<T>::div(Var a, Var b) {
  return binary("div", a, b);
}

template <typename T>
Var Graph<T>::scale(Var x, T factor) {
  const auto& xv = value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * factor;
  return record("scale", std::move(out), {x.id}, [factor](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0]))
      for (std::size_t i = 0; i < gout.numel(); ++i) (*gx)[i] += gout[i] * factor;
  });
}

template <typename T>
Var Graph<T>::add_scalar(Var x, T offset) {
  const auto& xv = value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] + offset;
  return record("add_scalar", std::move(out), {x.id}, [](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0]))
      for (std::size_t i = 0; i < gout.numel(); ++i) (*gx)[i] += gout[i];
  });
}

template <typename T>
Var Graph<T>::sum(Var x) {
  const auto& xv = value(x);
  T s{0};
  for (T v : xv.data()) s += v;
  return record("sum", Tensor<T>::scalar(s), {x.id}, [](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0]))
      for (auto& v : gx->data()) v += gout[0];
  });
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename T>
Var Graph<T>::concat(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = shape(xs[0]);
  axis1_view(first);
  Shape out_shape = first;
  out_shape[1] = 0;
  std::vector<std::size_t> widths;
  for (Var v : xs) {
    const Shape& s = shape(v);
    if (s.size() != first.size() || s[0] != first[0] || !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
      throw ShapeError("concat: shape " + shape_to_string(s) + " incompatible with " + shape_to_string(first));
    }
    widths.push_back(s[1]);
    out_shape[1] += s[1];
  }
  const AxisView view = axis1_view(out_shape);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  std::vector<std::uint32_t> ids;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& v = value(xs[k]);
    const std::size_t block = widths[k] * view.inner;
    for (std::size_t n = 0; n < view.outer; ++n) {
      std::copy_n(v.data().begin() + n * block, block,
                  out.data().begin() + n * view.axis * view.inner + offset * view.inner);
    }
    offset += widths[k];
    ids.push_back(xs[k].id);
  }
  return record("concat", std::move(out), std::move(ids),
                [view, widths](Graph& g, const Node& self, const Tensor<T>& gout) {
                  std::size_t offset = 0;
                  for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                    const std::size_t block = widths[k] * view.inner;
                    if (auto* gx = g.grad_for(self.inputs[k])) {
                      for (std::size_t n = 0; n < view.outer; ++n) {
                        const T* src = gout.data().data() + n * view.axis * view.inner + offset * view.inner;
                        T* dst = gx->data().data() + n * block;
                        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                      }
                    }
                    offset += widths[k];
                  }
                });
}

template <typename T>
Var Graph<T>::slice_channels(Var x, std::size_t begin, std::size_t end) {
  const Shape& xs = shape(x);
  const AxisView view = axis1_view(xs);
  if (begin >= end || end > view.axis) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_to_string(xs));
  }
  Shape out_shape = xs;
  out_shape[1] = end - begin;
  const std::size_t block = (end - begin) * view.inner;
  Tensor<T> out(out_shape);
  const auto& xv = value(x);
  for (std::size_t n = 0; n < view.outer; ++n) {
    std::copy_n(xv.data().begin() + (n * view.axis + begin) * view.inner, block, out.data().begin() + n * block);
  }
  return record("slice", std::move(out), {x.id}, [view, begin, block](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0])) {
      for (std::size_t n = 0; n < view.outer; ++n) {
        T* dst = gx->data().data() + (n * view.axis + begin) * view.inner;
        const T* src = gout.data().data() + n * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
std::pair<Var, Var> Graph<T>::split(Var x) {
  const Shape& xs = shape(x);
  const std::size_t c = axis1_view(xs).axis;
  if (c % 2 != 0) {
    throw ShapeError("split: channel count " + std::to_string(c) + " is odd in shape " + shape_to_string(xs));
  }
  return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c)};
}

template <typename T>
Var Graph<T>::upsample2x(Var x) {
  const Shape& xs = shape(x);
  if (xs.size() != 4) throw ShapeError(dim_error("upsample2x", "input must be [N,C,H,W], got " + shape_to_string(xs)));
  const std::size_t NC = xs[0] * xs[1], H = xs[2], W = xs[3];
  const auto rows = upsample_taps(H);
  const auto cols = upsample_taps(W);
  Tensor<T> out({xs[0], xs[1], 2 * H, 2 * W});
  const auto& xv = value(x);
  for (std::size_t p = 0; p < NC; ++p) {
    const T* in = xv.data().data() + p * H * W;
    T* o = out.data().data() + p * 4 * H * W;
    for (std::size_t oy = 0; oy < 2 * H; ++oy) {
      const auto& r = rows[oy];
      for (std::size_t ox = 0; ox < 2 * W; ++ox) {
        const auto& c = cols[ox];
        const T top = static_cast<T>(c.w0) * in[r.i0 * W + c.i0] + static_cast<T>(c.w1) * in[r.i0 * W + c.i1];
        const T bot = static_cast<T>(c.w0) * in[r.i1 * W + c.i0] + static_cast<T>(c.w1) * in[r.i1 * W + c.i1];
        o[oy * 2 * W + ox] = static_cast<T>(r.w0) * top + static_cast<T>(r.w1) * bot;
      }
    }
  }
  return record("upsample2x", std::move(out), {x.id},
                [NC, H, W, rows, cols](Graph& g, const Node& self, const Tensor<T>& gout) {
                  auto* gx = g.grad_for(self.inputs[0]);
                  if (!gx) return;
                  for (std::size_t p = 0; p < NC; ++p) {
                    T* gi = gx->data().data() + p * H * W;
                    const T* go = gout.data().data() + p * 4 * H * W;
                    for (std::size_t oy = 0; oy < 2 * H; ++oy) {
                      const auto& r = rows[oy];
                      for (std::size_t ox = 0; ox < 2 * W; ++ox) {
                        const auto& c = cols[ox];
                        const T v = go[oy * 2 * W + ox];
                        const T top = static_cast<T>(r.w0) * v;
                        const T bot = static_cast<T>(r.w1) * v;
                        gi[r.i0 * W + c.i0] += static_cast<T>(c.w0) * top;
                        gi[r.i0 * W + c.i1] += static_cast<T>(c.w1) * top;
                        gi[r.i1 * W + c.i0] += static_cast<T>(c.w0) * bot;
                        gi[r.i1 * W + c.i1] += static_cast<T>(c.w1) * bot;
                      }
                    }
                  }
                });
}

template <typename T>
Var Graph<T>::reshape(Var x, Shape new_shape) {
  Tensor<T> out = value(x).reshaped(std::move(new_shape));
  return record("reshape", std::move(out), {x.id}, [](Graph& g, const Node& self, const Tensor<T>& gout) {
    if (auto* gx = g.grad_for(self.inputs[0]))
      for (std::size_t i = 0; i < gout.numel(); ++i) (*gx)[i] += gout[i];
  });
}

template class Gradients<float>;
template class Gradients<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace txir
