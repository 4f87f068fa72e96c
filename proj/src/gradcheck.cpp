#include "txir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "txir/rng.hpp"

namespace txir {

namespace {

double evaluate(const LossBuilder& loss) {
  Graph<double> g(false);
  return g.value(loss(g)).item();
}

std::vector<std::size_t> pick_entries(std::size_t numel, std::size_t limit, SplitMix64& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= numel) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(numel - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckResult gradcheck(const LossBuilder& loss, std::span<Tensor<double>* const> wrt,
                          const GradcheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    const Var out = loss(g);
    const Gradients<double> grads = g.backward(out);
    for (const Tensor<double>* t : wrt) {
      const Tensor<double>* gt = grads.find(*t);
      analytic.push_back(gt ? *gt : Tensor<double>(t->shape()));
    }
  }

  GradcheckResult result;
  SplitMix64 rng(options.seed);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor<double>& t = *wrt[ti];
    for (std::size_t i : pick_entries(t.numel(), options.max_entries_per_tensor, rng)) {
      const double saved = t[i];
      t[i] = saved + options.eps;
      const double up = evaluate(loss);
      t[i] = saved - options.eps;
      const double down = evaluate(loss);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[ti][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_tensor = ti;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradcheckResult gradcheck(const std::function<Var(Graph<double>&, Var)>& f, Tensor<double> x, double eps) {
  LossBuilder loss = [&](Graph<double>& g) { return f(g, g.param(x)); };
  Tensor<double>* wrt[] = {&x};
  GradcheckOptions options;
  options.eps = eps;
  return gradcheck(loss, wrt, options);
}

}  // namespace txir
