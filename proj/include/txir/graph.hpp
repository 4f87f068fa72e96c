#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "txir/tensor.hpp"

namespace txir {

/// Handle to a value recorded in a Graph. Only meaningful for the graph
/// that produced it, and only until that graph is cleared.
struct Var {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kNone;

  bool valid() const noexcept { return id != kNone; }
  friend bool operator==(Var, Var) = default;
};

template <typename T>
class Graph;

/// Gradients produced by Graph::backward, addressable by leaf handle or by
/// the external parameter tensor a leaf was bound to.
template <typename T>
class Gradients {
 public:
  const Tensor<T>* find(Var v) const;
  const Tensor<T>* find(const Tensor<T>& param) const;
  const Tensor<T>& of(Var v) const;
  const Tensor<T>& of(const Tensor<T>& param) const;
  std::size_t size() const noexcept { return by_var_.size(); }

 private:
  friend class Graph<T>;
  std::unordered_map<std::uint32_t, Tensor<T>> by_var_;
  std::unordered_map<const Tensor<T>*, std::uint32_t> param_to_var_;
};

/// Reverse-mode tape. Every op appends a node in execution order; backward
/// walks the nodes in exact reverse and then clears the tape.
///
/// Broadcasting in add/mul/sub/div is limited to three patterns against a
/// [N,C,H,W] (or [N,C]) operand: a scalar, a [C] vector, or a [N,C,1,1] map.
/// add and mul accept the broadcast operand on either side.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // Leaves.
  Var constant(Tensor<T> value);
  Var input(Tensor<T> value);
  /// Binds an external tensor without copying. The tensor must outlive the
  /// graph; gradcheck perturbs it in place between forwards.
  Var param(const Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const;
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<std::string_view> op_names() const;

  /// Cross-correlation. w is [Cout,Cin,k,k] with k odd; bias may be an
  /// invalid Var. Output size is floor((H + 2*pad - k) / stride) + 1.
  Var conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad);
  /// Depthwise k x k convolution (k = 3 or 5), padding k/2, stride 1.
  Var dwconv2d(Var x, Var w);
  /// x [N,Din], w [Dout,Din], bias [Dout] (optional).
  Var linear(Var x, Var w, Var bias);
  /// Global average pooling to [N,C,1,1].
  Var gap(Var x);
  Var sigmoid(Var x);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var x, T factor);
  Var add_scalar(Var x, T offset);
  /// Concatenation along axis 1.
  Var concat(std::span<const Var> xs);
  /// Two equal halves along axis 1.
  std::pair<Var, Var> split(Var x);
  /// Channels [begin, end) along axis 1.
  Var slice_channels(Var x, std::size_t begin, std::size_t end);
  /// Bilinear x2, align_corners = false: output index o samples source
  /// coordinate (o + 0.5) / 2 - 0.5, clamped below at 0 and neighbours
  /// clamped at the last row/column. Interior weights are exactly 0.25/0.75.
  Var upsample2x(Var x);
  Var reshape(Var x, Shape shape);
  /// Sum of all elements, shape [1].
  Var sum(Var x);

  /// Gradients of a scalar loss for every leaf that requires grad. Clears
  /// the tape afterwards.
  Gradients<T> backward(Var loss);
  void clear();

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::vector<std::uint32_t> inputs;
    std::function<void(Graph&, const Node&, const Tensor<T>&)> backward;
    bool requires_grad = false;
    bool leaf = false;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };
  using BackwardFn = std::function<void(Graph&, const Node&, const Tensor<T>&)>;

  Var record(std::string_view op, Tensor<T> out, std::vector<std::uint32_t> inputs, BackwardFn fn);
  const Node& node(Var v) const;
  /// Gradient accumulator for node id, or nullptr when it needs no gradient.
  Tensor<T>* grad_for(std::uint32_t id);
  Var binary(std::string_view op, Var a, Var b);

  std::deque<Node> nodes_;  // references stay valid across appends
  std::vector<Tensor<T>> grads_;
  bool grad_enabled_ = true;
};

extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace txir
