#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "txir/graph.hpp"

namespace txir {

struct GradcheckOptions {
  double eps = 1e-5;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Entries sampled per tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss on a fresh graph. Must bind each checked tensor via
/// Graph::param so that in-place perturbations are seen.
using LossBuilder = std::function<Var(Graph<double>&)>;

/// Compares reverse-mode gradients w.r.t. each tensor in `wrt` against
/// central differences (f(x+eps) - f(x-eps)) / (2 eps).
GradcheckResult gradcheck(const LossBuilder& loss, std::span<Tensor<double>* const> wrt,
                          const GradcheckOptions& options = {});

/// Single-input convenience form: f receives the bound input handle.
GradcheckResult gradcheck(const std::function<Var(Graph<double>&, Var)>& f, Tensor<double> x, double eps = 1e-5);

}  // namespace txir
