#include "txir/battery.hpp"

#include <chrono>
#include <optional>

#include "txir/gradcheck.hpp"
#include "txir/network.hpp"
#include "txir/train.hpp"

namespace txir {

namespace {

using TensorD = Tensor<double>;

// Entries with |v| < min_abs are redrawn so ReLU kinks stay out of reach of eps.
TensorD random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0, double min_abs = 0.05) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    do v = rng.uniform(lo, hi);
    while (std::abs(v) < min_abs);
  }
  return t;
}

std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

// sum(out * R) with a fixed random R, so gradients differ per entry.
class WeightedSum {
 public:
  explicit WeightedSum(std::uint64_t seed) : rng_(seed) {}
  Var operator()(Graph<double>& g, Var out) {
    if (!weights_) weights_ = random_tensor(g.shape(out), rng_);
    return g.sum(g.mul(out, g.constant(*weights_)));
  }

 private:
  SplitMix64 rng_;
  std::optional<TensorD> weights_;
};

void jitter_biases(ParamList<double>& params, SplitMix64& rng) {
  for (auto& p : params)
    if (p.kind == ParamKind::kBias)
      for (auto& v : p.tensor->data()) v = rng.uniform(-0.1, 0.1);
}

std::vector<TensorD*> tensors_of(ParamList<double>& params) {
  std::vector<TensorD*> out;
  for (auto& p : params) out.push_back(p.tensor);
  return out;
}

using Trial = std::function<GradcheckResult(SplitMix64&, std::size_t)>;

struct Check {
  std::string name;
  double tolerance;
  bool block;
  Trial run;
};

constexpr BlockDims kSmallDims{12, 6, 2, 4};

GradcheckResult check(const LossBuilder& loss, std::vector<TensorD*> wrt, std::size_t sample = 0,
                      std::uint64_t seed = 0) {
  GradcheckOptions opt;
  opt.max_entries_per_tensor = sample;
  opt.seed = seed;
  return gradcheck(loss, wrt, opt);
}

GradcheckResult unary(SplitMix64& rng, const std::function<Var(Graph<double>&, Var)>& op, double lo = -2,
                      double hi = 2) {
  TensorD x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)}, rng, lo, hi);
  WeightedSum ws(rng.next());
  return check([&](Graph<double>& g) { return ws(g, op(g, g.param(x))); }, {&x});
}

// Shapes for the three broadcast patterns plus the plain same-shape case.
std::pair<Shape, Shape> binary_shapes(SplitMix64& rng, std::size_t trial) {
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
  const Shape full{n, c, h, w};
  switch (trial % 4) {
    case 0: return {full, full};
    case 1: return {full, Shape{c}};
    case 2: return {full, Shape{n, c, 1, 1}};
    default: return {full, Shape{1}};
  }
}

GradcheckResult binary(SplitMix64& rng, std::size_t trial, Var (Graph<double>::*op)(Var, Var), bool swap_sides,
                       double b_lo = -1, double b_hi = 1) {
  const auto [sa, sb] = binary_shapes(rng, trial);
  TensorD a = random_tensor(sa, rng);
  TensorD b = random_tensor(sb, rng, b_lo, b_hi);
  WeightedSum ws(rng.next());
  const bool swapped = swap_sides && (trial / 4) % 2 == 1;
  return check(
      [&](Graph<double>& g) {
        const Var va = g.param(a), vb = g.param(b);
        return ws(g, swapped ? (g.*op)(vb, va) : (g.*op)(va, vb));
      },
      {&a, &b});
}

std::vector<Check> op_checks() {
  std::vector<Check> c;
  c.push_back({"op.conv2d", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const std::size_t k = 1 + 2 * pick(rng, 0, 2);
                 const std::size_t pad = pick(rng, 0, k / 2), stride = pick(rng, 1, 2);
                 const std::size_t lo = k > 2 * pad ? k - 2 * pad : 1;
                 const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                 TensorD x = random_tensor({pick(rng, 1, 2), cin, pick(rng, lo, lo + 3), pick(rng, lo, lo + 3)}, rng);
                 TensorD w = random_tensor({cout, cin, k, k}, rng);
                 TensorD b = random_tensor({cout}, rng);
                 const bool bias = rng.below(2) == 1;
                 WeightedSum ws(rng.next());
                 LossBuilder loss = [&](Graph<double>& g) {
                   return ws(g, g.conv2d(g.param(x), g.param(w), bias ? g.param(b) : Var{}, stride, pad));
                 };
                 return bias ? check(loss, {&x, &w, &b}) : check(loss, {&x, &w});
               }});
  c.push_back({"op.dwconv2d", kGradTolerance, false, [](SplitMix64& rng, std::size_t trial) {
                 const std::size_t k = trial % 2 == 0 ? 3 : 5, ch = pick(rng, 1, 3);
                 TensorD x = random_tensor({pick(rng, 1, 2), ch, pick(rng, 2, 6), pick(rng, 2, 6)}, rng);
                 TensorD w = random_tensor({ch, 1, k, k}, rng);
                 WeightedSum ws(rng.next());
                 return check([&](Graph<double>& g) { return ws(g, g.dwconv2d(g.param(x), g.param(w))); }, {&x, &w});
               }});
  c.push_back({"op.linear", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const std::size_t n = pick(rng, 1, 3), din = pick(rng, 1, 6), dout = pick(rng, 1, 5);
                 TensorD x = random_tensor({n, din}, rng), w = random_tensor({dout, din}, rng), b = random_tensor({dout}, rng);
                 WeightedSum ws(rng.next());
                 return check([&](Graph<double>& g) { return ws(g, g.linear(g.param(x), g.param(w), g.param(b))); },
                              {&x, &w, &b});
               }});
  c.push_back({"op.gap", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 return unary(rng, [](Graph<double>& g, Var x) { return g.gap(x); });
               }});
  c.push_back({"op.sigmoid", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 return unary(rng, [](Graph<double>& g, Var x) { return g.sigmoid(x); }, -6, 6);
               }});
  c.push_back({"op.sigmoid_sum", 1e-6, false, [](SplitMix64& rng, std::size_t) {
                 TensorD x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -4, 4);
                 return check([&](Graph<double>& g) { return g.sum(g.sigmoid(g.param(x))); }, {&x});
               }});
  c.push_back({"op.relu", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 return unary(rng, [](Graph<double>& g, Var x) { return g.relu(x); });
               }});
  c.push_back({"op.add", kGradTolerance, false, [](SplitMix64& rng, std::size_t t) {
                 return binary(rng, t, &Graph<double>::add, true);
               }});
  c.push_back({"op.sub", kGradTolerance, false, [](SplitMix64& rng, std::size_t t) {
                 return binary(rng, t, &Graph<double>::sub, false);
               }});
  c.push_back({"op.mul", kGradTolerance, false, [](SplitMix64& rng, std::size_t t) {
                 return binary(rng, t, &Graph<double>::mul, true);
               }});
  c.push_back({"op.div", kGradTolerance, false, [](SplitMix64& rng, std::size_t t) {
                 return binary(rng, t, &Graph<double>::div, false, 0.5, 1.5);
               }});
  c.push_back({"op.scale", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const double f = rng.uniform(-3, 3);
                 return unary(rng, [f](Graph<double>& g, Var x) { return g.scale(x, f); });
               }});
  c.push_back({"op.add_scalar", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const double f = rng.uniform(-3, 3);
                 return unary(rng, [f](Graph<double>& g, Var x) { return g.add_scalar(x, f); });
               }});
  c.push_back({"op.concat", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
                 TensorD a = random_tensor({n, pick(rng, 1, 3), h, w}, rng);
                 TensorD b = random_tensor({n, pick(rng, 1, 3), h, w}, rng);
                 TensorD d = random_tensor({n, pick(rng, 1, 3), h, w}, rng);
                 WeightedSum ws(rng.next());
                 return check(
                     [&](Graph<double>& g) {
                       const Var xs[] = {g.param(a), g.param(b), g.param(d)};
                       return ws(g, g.concat(xs));
                     },
                     {&a, &b, &d});
               }});
  c.push_back({"op.split", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 TensorD x = random_tensor({pick(rng, 1, 2), 2 * pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
                 WeightedSum w1(rng.next()), w2(rng.next());
                 return check(
                     [&](Graph<double>& g) {
                       const auto [lo, hi] = g.split(g.param(x));
                       return g.add(w1(g, lo), w2(g, hi));
                     },
                     {&x});
               }});
  c.push_back({"op.slice_channels", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const std::size_t ch = pick(rng, 2, 5), begin = pick(rng, 0, ch - 1), end = pick(rng, begin + 1, ch);
                 TensorD x = random_tensor({pick(rng, 1, 2), ch, pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
                 WeightedSum ws(rng.next());
                 return check([&](Graph<double>& g) { return ws(g, g.slice_channels(g.param(x), begin, end)); }, {&x});
               }});
  c.push_back({"op.upsample2x", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 return unary(rng, [](Graph<double>& g, Var x) { return g.upsample2x(x); });
               }});
  c.push_back({"op.reshape", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 return unary(rng, [](Graph<double>& g, Var x) {
                   const Shape& s = g.shape(x);
                   return g.reshape(x, {s[0], s[1] * s[2] * s[3]});
                 });
               }});
  c.push_back({"op.sum", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 TensorD x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
                 const double f = rng.uniform(0.5, 2.0);
                 return check([&](Graph<double>& g) { return g.scale(g.sum(g.param(x)), f); }, {&x});
               }});
  c.push_back({"op.soft_iou_loss", kGradTolerance, false, [](SplitMix64& rng, std::size_t) {
                 const Shape s{pick(rng, 1, 2), 1, pick(rng, 2, 5), pick(rng, 2, 5)};
                 TensorD p = random_tensor(s, rng, 0.05, 0.95);
                 TensorD gt(s);
                 for (auto& v : gt.data()) v = rng.below(2) == 1 ? 1.0 : 0.0;
                 return check([&](Graph<double>& g) { return soft_iou_loss(g, g.param(p), g.constant(gt)); }, {&p});
               }});
  return c;
}

std::vector<Check> block_checks() {
  std::vector<Check> c;
  c.push_back({"block.text_split", kGradTolerance, true, [](SplitMix64& rng, std::size_t) {
                 TgfaParams<double> p = make_tgfa_params<double>(4, 8, kSmallDims, rng);
                 ParamList<double> list;
                 collect(p.mlp, "mlp", list);
                 jitter_biases(list, rng);
                 TensorD text = random_tensor({pick(rng, 1, 2), kSmallDims.text_dim}, rng);
                 WeightedSum w1(rng.next()), w2(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.push_back(&text);
                 return check(
                     [&](Graph<double>& g) {
                       const auto [a, b] = text_split(g, g.param(text), p);
                       return g.add(w1(g, a), w2(g, b));
                     },
                     wrt);
               }});
  c.push_back({"block.dpm", kGradTolerance, true, [](SplitMix64& rng, std::size_t trial) {
                 const std::size_t ch = trial % 2 == 0 ? 4 : 8;
                 DpmParams<double> p = make_dpm_params<double>(ch, 2, rng);
                 ParamList<double> list;
                 collect(p, "dpm", list);
                 jitter_biases(list, rng);
                 TensorD x = random_tensor({pick(rng, 1, 2), ch, pick(rng, 3, 6), pick(rng, 3, 6)}, rng);
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.push_back(&x);
                 return check([&](Graph<double>& g) { return ws(g, dpm_forward(g, g.param(x), p)); }, wrt);
               }});
  c.push_back({"block.channel_attention", kGradTolerance, true, [](SplitMix64& rng, std::size_t) {
                 ChannelAttentionParams<double> p = make_ca_params<double>(8, 4, rng);
                 ParamList<double> list;
                 collect(p, "ca", list);
                 jitter_biases(list, rng);
                 TensorD x = random_tensor({pick(rng, 1, 2), 8, pick(rng, 2, 5), pick(rng, 2, 5)}, rng);
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.push_back(&x);
                 return check([&](Graph<double>& g) { return ws(g, channel_attention(g, g.param(x), p)); }, wrt);
               }});
  c.push_back({"block.tgfa", kGradTolerance, true, [](SplitMix64& rng, std::size_t trial) {
                 TgfaParams<double> p = make_tgfa_params<double>(4, 8, kSmallDims, rng);
                 ParamList<double> list;
                 collect(p, "tgfa", list);
                 jitter_biases(list, rng);
                 const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 3), w = pick(rng, 2, 3);
                 TensorD low = random_tensor({n, 4, 2 * h, 2 * w}, rng);
                 TensorD high = random_tensor({n, 8, h, w}, rng);
                 TensorD text = random_tensor({n, kSmallDims.text_dim}, rng);
                 const TgfaOptions variants[] = {{true, true, true}, {false, true, true}, {true, false, true}, {true, true, false}};
                 const TgfaOptions opt = variants[trial % 4];
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.insert(wrt.end(), {&low, &high, &text});
                 return check(
                     [&](Graph<double>& g) {
                       return ws(g, tgfa_forward(g, g.param(low), g.param(high), g.param(text), p, opt));
                     },
                     wrt);
               }});
  c.push_back({"block.plain_fusion", kGradTolerance, true, [](SplitMix64& rng, std::size_t) {
                 TgfaParams<double> p = make_tgfa_params<double>(4, 8, kSmallDims, rng);
                 ParamList<double> list;
                 collect(p.merge_proj, "merge_proj", list);
                 jitter_biases(list, rng);
                 TensorD low = random_tensor({1, 4, 4, 6}, rng), high = random_tensor({1, 8, 2, 3}, rng);
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.insert(wrt.end(), {&low, &high});
                 return check([&](Graph<double>& g) { return ws(g, plain_fusion(g, g.param(low), g.param(high), p)); },
                              wrt);
               }});
  c.push_back({"block.tgsi", kGradTolerance, true, [](SplitMix64& rng, std::size_t trial) {
                 const TgsiMode modes[] = {TgsiMode::kFull, TgsiMode::kNoAlpha, TgsiMode::kNoBeta, TgsiMode::kConcat};
                 const TgsiMode mode = modes[trial % 4];
                 TgsiParams<double> p = make_tgsi_params<double>(
                     4, kSmallDims, mode == TgsiMode::kConcat ? TgsiFusion::kConcat : TgsiFusion::kAffine, rng);
                 ParamList<double> list;
                 collect(p, "tgsi", list);
                 jitter_biases(list, rng);
                 const std::size_t n = pick(rng, 1, 2);
                 TensorD m = random_tensor({n, 4, pick(rng, 2, 5), pick(rng, 2, 5)}, rng);
                 TensorD text = random_tensor({n, kSmallDims.text_dim}, rng);
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.insert(wrt.end(), {&m, &text});
                 return check([&](Graph<double>& g) { return ws(g, tgsi_forward(g, g.param(m), g.param(text), p, mode)); },
                              wrt);
               }});
  c.push_back({"network.encoder_two_stages", kGradTolerance, true, [](SplitMix64& rng, std::size_t trial) {
                 ModelConfig cfg;
                 cfg.base_channels = 8;
                 cfg.input_size = 8;
                 cfg.seed = rng.next();
                 ModelParams<double> p = ModelParams<double>::init(cfg);
                 ParamList<double> list;
                 collect(p.stem, "stem", list);
                 for (std::size_t s = 0; s < 2; ++s) {
                   for (auto& b : p.encoder[s]) {
                     collect(b.conv1, "c1", list);
                     collect(b.conv2, "c2", list);
                     if (!b.skip.weight.empty()) collect(b.skip, "skip", list);
                   }
                 }
                 jitter_biases(list, rng);
                 TensorD img = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0, 0.0);
                 WeightedSum ws(rng.next());
                 auto wrt = tensors_of(list);
                 wrt.push_back(&img);
                 return check([&](Graph<double>& g) { return ws(g, encoder_forward(g, g.param(img), p)[1]); }, wrt, 12,
                              trial);
               }});
  c.push_back({"network.head_soft_iou", kGradTolerance, true, [](SplitMix64& rng, std::size_t) {
                 ModelConfig cfg;
                 cfg.base_channels = 8;
                 cfg.input_size = 8;
                 cfg.seed = rng.next();
                 ModelParams<double> p = ModelParams<double>::init(cfg);
                 ParamList<double> list;
                 collect(p.head, "head", list);
                 jitter_biases(list, rng);
                 TensorD d = random_tensor({2, 8, 8, 8}, rng);
                 TensorD gt({2, 1, 8, 8});
                 for (auto& v : gt.data()) v = rng.below(4) == 0 ? 1.0 : 0.0;
                 auto wrt = tensors_of(list);
                 wrt.push_back(&d);
                 return check(
                     [&](Graph<double>& g) { return soft_iou_loss(g, head_forward(g, g.param(d), p), g.constant(gt)); },
                     wrt);
               }});
  c.push_back({"network.full_model_8x8", kGradTolerance, true, [](SplitMix64& rng, std::size_t trial) {
                 ModelConfig cfg;
                 cfg.base_channels = 8;
                 cfg.input_size = 8;
                 cfg.seed = rng.next();
                 ModelParams<double> p = ModelParams<double>::init(cfg);
                 ParamList<double> list = p.params();
                 jitter_biases(list, rng);
                 TensorD img = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0, 0.0);
                 TensorD text = random_tensor({1, cfg.text_dim}, rng, -0.1, 0.1, 0.0);
                 TensorD gt({1, 1, 8, 8});
                 for (auto& v : gt.data()) v = rng.below(4) == 0 ? 1.0 : 0.0;
                 auto wrt = tensors_of(list);
                 wrt.insert(wrt.end(), {&img, &text});
                 return check(
                     [&](Graph<double>& g) {
                       return soft_iou_loss(g, model_forward(g, g.param(img), g.param(text), p), g.constant(gt));
                     },
                     wrt, 3, trial);
               }});
  return c;
}

}  // namespace

std::vector<CheckOutcome> run_gradcheck_battery(const BatteryOptions& options) {
  std::vector<Check> checks = op_checks();
  for (auto& b : block_checks()) checks.push_back(std::move(b));

  std::vector<CheckOutcome> out;
  for (const auto& chk : checks) {
    if (!options.filter.empty() && chk.name.find(options.filter) == std::string::npos) continue;
    CheckOutcome o;
    o.name = chk.name;
    o.tolerance = chk.tolerance;
    o.trials = chk.block ? options.block_trials : options.op_trials;
    const auto start = std::chrono::steady_clock::now();
    SplitMix64 rng(options.seed ^ fnv1a64(chk.name));
    for (std::size_t t = 0; t < o.trials; ++t) {
      const GradcheckResult r = chk.run(rng, t);
      o.entries += r.checked;
      if (r.max_rel_error >= o.max_rel_error) {
        o.max_rel_error = r.max_rel_error;
        o.worst = "trial " + std::to_string(t) + " tensor " + std::to_string(r.worst_tensor) + " entry " +
                  std::to_string(r.worst_index) + " analytic " + std::to_string(r.worst_analytic) + " numeric " +
                  std::to_string(r.worst_numeric);
      }
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.on_result) options.on_result(o);
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace txir
