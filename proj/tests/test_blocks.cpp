#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "test_util.hpp"
#include "txir/blocks.hpp"
#include "txir/embedding.hpp"

using namespace txir;
using txir::testing::random_tensor;
namespace o = txir::oracle;

namespace {

constexpr BlockDims kDims{16, 8, 2, 4};

template <typename P>
void jitter_biases(P& p, std::uint64_t seed) {
  ParamList<double> list;
  collect(p, "p", list);
  SplitMix64 rng(seed);
  for (auto& np : list)
    if (np.kind == ParamKind::kBias)
      for (double& v : np.tensor->data()) v = rng.uniform(-0.2, 0.2);
}

template <typename P>
void zero_all(P& p) {
  ParamList<double> list;
  collect(p, "p", list);
  for (auto& np : list) std::fill(np.tensor->data().begin(), np.tensor->data().end(), 0.0);
}

Tensor<double> ones(Shape s) { return Tensor<double>::full(std::move(s), 1.0); }

Tensor<double> text_tensor(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Tensor<double> t({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = toy_embed("prompt number " + std::to_string(seed + i), dim);
    for (std::size_t j = 0; j < dim; ++j) t[i * dim + j] = e.vector[j];
  }
  return t;
}

o::Vec row(const Tensor<double>& t, std::size_t n) {
  const std::size_t d = t.dim(1);
  return o::Vec(t.data().begin() + static_cast<long>(n * d), t.data().begin() + static_cast<long>((n + 1) * d));
}

// DPM reference for sample n: returns (F_ms, F_DP).
std::pair<std::vector<o::Vec>, std::vector<o::Vec>> dpm_oracle(const Tensor<double>& x, std::size_t n,
                                                               const DpmParams<double>& p) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  const auto e = o::conv1x1(p.expand.weight, p.expand.bias, o::planes(x, n));
  const std::size_t half = e.size() / 2;
  std::vector<o::Vec> cat;
  for (std::size_t c = 0; c < half; ++c) cat.push_back(o::dw_plane(e[c], h, w, &p.dw3[c * 9], 3));
  for (std::size_t c = 0; c < half; ++c) cat.push_back(o::dw_plane(e[half + c], h, w, &p.dw5[c * 25], 5));
  const auto ms = o::conv1x1(p.fuse.weight, p.fuse.bias, cat);
  auto hidden = o::conv1x1(p.pw1.weight, p.pw1.bias, ms);
  for (auto& pl : hidden) pl = o::relu(pl);
  auto gate = o::conv1x1(p.pw2.weight, p.pw2.bias, hidden);
  auto out = ms;
  for (std::size_t c = 0; c < out.size(); ++c)
    for (std::size_t q = 0; q < out[c].size(); ++q) out[c][q] = o::sigmoid(gate[c][q]) * ms[c][q];
  return {ms, out};
}

}  // namespace

TEST(TextSplit, ZeroMlpGivesZeroGates) {
  SplitMix64 rng(1);
  auto p = make_tgfa_params<double>(8, 16, kDims, rng);
  zero_all(p.mlp);
  Graph<double> g(false);
  const auto [a, b] = text_split(g, g.constant(text_tensor(2, 16, 0)), p);
  EXPECT_EQ(g.shape(a), (Shape{2, 8, 1, 1}));
  EXPECT_EQ(g.shape(b), (Shape{2, 16, 1, 1}));
  for (double v : g.value(a).data()) EXPECT_EQ(v, 0.0);
  for (double v : g.value(b).data()) EXPECT_EQ(v, 0.0);
}

TEST(TextSplit, HandAffineCase) {
  SplitMix64 rng(2);
  BlockDims dims{2, 2, 2, 4};
  auto p = make_tgfa_params<double>(4, 4, dims, rng);
  // first layer = identity on 2 inputs, second places [x0, x1, 2 x0, 3 x1 ...] plus bias 1.
  zero_all(p.mlp);
  p.mlp.first.weight = Tensor<double>({2, 2}, {1, 0, 0, 1});
  for (std::size_t o = 0; o < 8; ++o) {
    p.mlp.second.weight[o * 2 + (o % 2)] = static_cast<double>(o / 2 + 1);
    p.mlp.second.bias[o] = 1.0;
  }
  Graph<double> g(false);
  const auto [a, b] = text_split(g, g.constant(Tensor<double>({1, 2}, {0.6, 0.8})), p);
  const double expect_low[] = {1.6, 1.8, 2.2, 2.6};
  const double expect_high[] = {2.8, 3.4, 3.4, 4.2};
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(g.value(a)[c], expect_low[c], 1e-15);
    EXPECT_NEAR(g.value(b)[c], expect_high[c], 1e-15);
  }
  EXPECT_THROW(text_split(g, g.constant(Tensor<double>({1, 3})), p), ShapeError);
}

TEST(TextSplit, MatchesTwoMatmulOracle) {
  SplitMix64 rng(3);
  auto p = make_tgfa_params<double>(8, 16, kDims, rng);
  jitter_biases(p.mlp, 4);
  const auto text = text_tensor(3, 16, 10);
  Graph<double> g(false);
  const auto [a, b] = text_split(g, g.constant(text), p);
  for (std::size_t n = 0; n < 3; ++n) {
    const auto ref =
        o::affine(p.mlp.second.weight, p.mlp.second.bias, o::relu(o::affine(p.mlp.first.weight, p.mlp.first.bias, row(text, n))));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(g.value(a)[n * 8 + c], ref[c], 1e-12);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_NEAR(g.value(b)[n * 16 + c], ref[8 + c], 1e-12);
  }
}

TEST(TextModulate, OnesZerosAndBroadcast) {
  Graph<double> g(false);
  const auto low = random_tensor({1, 2, 3, 3}, 5), high = random_tensor({1, 4, 2, 2}, 6);
  const Var vl = g.constant(low), vh = g.constant(high);
  const auto [l1, h1] = text_modulate(g, vl, vh, g.constant(ones({1, 2, 1, 1})), g.constant(ones({1, 4, 1, 1})));
  EXPECT_EQ(g.value(l1), low);
  EXPECT_EQ(g.value(h1), high);
  const auto [l0, h0] =
      text_modulate(g, vl, vh, g.constant(Tensor<double>({1, 2, 1, 1})), g.constant(Tensor<double>({1, 4, 1, 1})));
  for (double v : g.value(l0).data()) EXPECT_EQ(v, 0.0);
  for (double v : g.value(h0).data()) EXPECT_EQ(v, 0.0);
  const auto [l2, h2] = text_modulate(g, g.constant(ones({1, 2, 3, 3})), vh,
                                      g.constant(Tensor<double>({1, 2, 1, 1}, {2, 3})), g.constant(ones({1, 4, 1, 1})));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(g.value(l2)[i], 2.0);
  for (std::size_t i = 9; i < 18; ++i) EXPECT_EQ(g.value(l2)[i], 3.0);
  EXPECT_THROW(text_modulate(g, vl, vh, g.constant(ones({1, 3, 1, 1})), g.constant(ones({1, 4, 1, 1}))), ShapeError);
}

TEST(Dpm, ShapesZeroInputAndGateBound) {
  for (std::size_t c : {4u, 8u, 12u}) {
    for (std::size_t mu : {1u, 2u, 3u}) {
      if ((mu * c) % 2) {
        SplitMix64 rng(7);
        EXPECT_THROW(make_dpm_params<double>(c, mu, rng), ShapeError);
        continue;
      }
      SplitMix64 rng(7 + c + mu);
      auto p = make_dpm_params<double>(c, mu, rng);
      jitter_biases(p, 8);
      Graph<double> g(false);
      const auto x = random_tensor({2, c, 5, 6}, 9);
      const Var y = dpm_forward(g, g.constant(x), p);
      EXPECT_EQ(g.shape(y), x.shape());
      const auto [ms, dp] = dpm_oracle(x, 1, p);
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t q = 0; q < 30; ++q) EXPECT_LE(std::abs(dp[k][q]), std::abs(ms[k][q]));
      EXPECT_LT(o::max_abs_diff(g.value(y), 1, dp), 1e-12);
      const Var z = dpm_forward(g, g.constant(Tensor<double>({1, c, 4, 4})), p);
      for (double v : g.value(z).data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(ChannelAttention, ZeroWeightsHalveAndOracle) {
  SplitMix64 rng(10);
  auto p = make_ca_params<double>(8, 4, rng);
  Graph<double> g(false);
  auto zp = p;
  zero_all(zp);
  const Var half = channel_attention(g, g.constant(Tensor<double>::full({1, 8, 3, 3}, 0.7)), zp);
  for (double v : g.value(half).data()) EXPECT_DOUBLE_EQ(v, 0.35);

  jitter_biases(p, 11);
  const auto x = random_tensor({2, 8, 4, 3}, 12);
  const auto& y = g.value(channel_attention(g, g.constant(x), p));
  for (std::size_t n = 0; n < 2; ++n) {
    const auto pl = o::planes(x, n);
    o::Vec z(8);
    for (std::size_t c = 0; c < 8; ++c) {
      for (double v : pl[c]) z[c] += v;
      z[c] /= 12.0;
    }
    const auto s = o::affine(p.fc2.weight, p.fc2.bias, o::relu(o::affine(p.fc1.weight, p.fc1.bias, z)));
    auto ref = pl;
    for (std::size_t c = 0; c < 8; ++c)
      for (double& v : ref[c]) v *= o::sigmoid(s[c]);
    EXPECT_LT(o::max_abs_diff(y, n, ref), 1e-12);
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t q = 0; q < 12; ++q) EXPECT_LE(std::abs(ref[c][q]), std::abs(pl[c][q]));
  }
  SplitMix64 bad(1);
  EXPECT_THROW(make_ca_params<double>(6, 4, bad), ShapeError);
}

TEST(Tgfa, ZeroTextGivesZero) {
  SplitMix64 rng(13);
  auto p = make_tgfa_params<double>(8, 16, kDims, rng);
  for (double& v : p.merge_proj.bias.data()) v = 0;  // no offset from the high path
  Graph<double> g(false);
  const Var m = tgfa_forward(g, g.constant(random_tensor({1, 8, 8, 8}, 14)), g.constant(random_tensor({1, 16, 4, 4}, 15)),
                             g.constant(Tensor<double>({1, 16})), p);
  for (double v : g.value(m).data()) EXPECT_EQ(v, 0.0);
}

TEST(Tgfa, ShapeContract) {
  SplitMix64 rng(16);
  BlockDims dims{32, 8, 2, 4};
  auto p = make_tgfa_params<double>(16, 32, dims, rng);
  Graph<double> g(false);
  const Var text = g.constant(text_tensor(1, 32, 0));
  const Var m = tgfa_forward(g, g.constant(random_tensor({1, 16, 32, 32}, 17)),
                             g.constant(random_tensor({1, 32, 16, 16}, 18)), text, p);
  EXPECT_EQ(g.shape(m), (Shape{1, 16, 32, 32}));
  EXPECT_THROW(tgfa_forward(g, g.constant(Tensor<double>({1, 16, 32, 32})), g.constant(Tensor<double>({1, 32, 8, 8})),
                            text, p),
               ShapeError);
  EXPECT_THROW(tgfa_forward(g, g.constant(Tensor<double>({1, 16, 8, 8})), g.constant(Tensor<double>({1, 16, 4, 4})),
                            text, p),
               ShapeError);
}

TEST(Tgfa, RecomposesFromSubOps) {
  SplitMix64 rng(19);
  auto p = make_tgfa_params<double>(8, 16, kDims, rng);
  jitter_biases(p, 20);
  const auto low = random_tensor({2, 8, 6, 6}, 21), high = random_tensor({2, 16, 3, 3}, 22);
  const auto text = text_tensor(2, 16, 3);
  Graph<double> g(false);
  const auto& full = g.value(tgfa_forward(g, g.constant(low), g.constant(high), g.constant(text), p));

  Graph<double> h(false);
  const auto [gl, gh] = text_split(h, h.constant(text), p);
  const auto [fl, fh] = text_modulate(h, h.constant(low), h.constant(high), gl, gh);
  const Var ref = h.add(dpm_forward(h, fl, p.dpm), h.upsample2x(conv(h, channel_attention(h, fh, p.ca), p.merge_proj)));
  EXPECT_EQ(full, h.value(ref));

  // Options switch off sub-blocks.
  Graph<double> k(false);
  const auto& bare = k.value(tgfa_forward(k, k.constant(low), k.constant(high), k.constant(text), p, {false, false, false}));
  EXPECT_EQ(bare, k.value(plain_fusion(k, k.constant(low), k.constant(high), p)));
}

TEST(Tgfa, LinearInLowWithFrozenGates) {
  SplitMix64 rng(23);
  auto p = make_tgfa_params<double>(8, 16, kDims, rng);
  jitter_biases(p, 24);
  const auto high = random_tensor({1, 16, 4, 4}, 25);
  const auto text = text_tensor(1, 16, 4);
  const auto x1 = random_tensor({1, 8, 8, 8}, 26), x2 = random_tensor({1, 8, 8, 8}, 27);
  TgfaGates<double> gates;
  {
    Graph<double> g(false);
    tgfa_forward(g, g.constant(x1), g.constant(high), g.constant(text), p, TgfaOptions{}, static_cast<const TgfaGates<double>*>(nullptr), &gates);
  }
  auto run = [&](const Tensor<double>& x) {
    Graph<double> g(false);
    return g.value(tgfa_forward(g, g.constant(x), g.constant(high), g.constant(text), p, TgfaOptions{}, &gates));
  };
  const double a = 0.7, b = -1.3;
  Tensor<double> mix(x1.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x1[i] + b * x2[i];
  const auto m0 = run(Tensor<double>(x1.shape()));
  const auto m1 = run(x1), m2 = run(x2), mm = run(mix);
  for (std::size_t i = 0; i < mm.numel(); ++i)
    EXPECT_NEAR(mm[i] - m0[i], a * (m1[i] - m0[i]) + b * (m2[i] - m0[i]), 1e-12);
}

TEST(Tgsi, ZeroIsIdentityAndMinusOneOverrides) {
  SplitMix64 rng(28);
  auto p = make_tgsi_params<double>(8, kDims, TgsiFusion::kAffine, rng);
  const auto m = random_tensor({2, 8, 4, 4}, 29);
  const auto text = text_tensor(2, 16, 5);
  auto zp = p;
  zero_all(zp.ffn);
  Graph<double> g(false);
  EXPECT_EQ(g.value(tgsi_forward(g, g.constant(m), g.constant(text), zp)), m);

  // alpha = -1, beta = channel index.
  zp.ffn.second.bias = Tensor<double>({16});
  for (std::size_t c = 0; c < 8; ++c) {
    zp.ffn.second.bias[c] = -1.0;
    zp.ffn.second.bias[8 + c] = static_cast<double>(c);
  }
  const auto& y = g.value(tgsi_forward(g, g.constant(m), g.constant(text), zp));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t q = 0; q < 16; ++q) EXPECT_EQ(y[(n * 8 + c) * 16 + q], static_cast<double>(c));
}

TEST(Tgsi, AffineOracleAndModes) {
  SplitMix64 rng(30);
  auto p = make_tgsi_params<double>(8, kDims, TgsiFusion::kAffine, rng);
  jitter_biases(p, 31);
  const auto m = random_tensor({2, 8, 3, 3}, 32);
  const auto text = text_tensor(2, 16, 6);
  for (TgsiMode mode : {TgsiMode::kFull, TgsiMode::kNoAlpha, TgsiMode::kNoBeta}) {
    Graph<double> g(false);
    const auto& y = g.value(tgsi_forward(g, g.constant(m), g.constant(text), p, mode));
    for (std::size_t n = 0; n < 2; ++n) {
      const auto ab = o::affine(p.ffn.second.weight, p.ffn.second.bias,
                                o::relu(o::affine(p.ffn.first.weight, p.ffn.first.bias, row(text, n))));
      auto ref = o::planes(m, n);
      for (std::size_t c = 0; c < 8; ++c) {
        const double alpha = mode == TgsiMode::kNoAlpha ? 0.0 : ab[c];
        const double beta = mode == TgsiMode::kNoBeta ? 0.0 : ab[8 + c];
        for (double& v : ref[c]) v = (1 + alpha) * v + beta;
      }
      EXPECT_LT(o::max_abs_diff(y, n, ref), 1e-12);
    }
  }
  Graph<double> g(false);
  EXPECT_EQ(g.value(tgsi_forward(g, g.constant(m), g.constant(text), p, TgsiMode::kIdentity)), m);
  EXPECT_THROW(tgsi_forward(g, g.constant(m), g.constant(Tensor<double>({2, 5})), p), ShapeError);
  EXPECT_THROW(tgsi_forward(g, g.constant(m), g.constant(text), p, TgsiMode::kConcat), std::logic_error);
}

TEST(Tgsi, ConcatFusionKeepsShape) {
  SplitMix64 rng(33);
  auto p = make_tgsi_params<double>(8, kDims, TgsiFusion::kConcat, rng);
  Graph<double> g(false);
  const Var y = tgsi_forward(g, g.constant(random_tensor({2, 8, 4, 4}, 34)), g.constant(text_tensor(2, 16, 7)), p,
                             TgsiMode::kConcat);
  EXPECT_EQ(g.shape(y), (Shape{2, 8, 4, 4}));
}

TEST(Tgsi, TextSensitivity) {
  SplitMix64 rng(35);
  auto p = make_tgsi_params<double>(8, kDims, TgsiFusion::kAffine, rng);
  const auto m = random_tensor({1, 8, 3, 3}, 36);
  Graph<double> g(false);
  const auto a = g.value(tgsi_forward(g, g.constant(m), g.constant(text_tensor(1, 16, 1)), p));
  const auto b = g.value(tgsi_forward(g, g.constant(m), g.constant(text_tensor(1, 16, 2)), p));
  EXPECT_NE(a, b);
  auto q = make_tgfa_params<double>(8, 16, kDims, rng);
  const auto low = random_tensor({1, 8, 4, 4}, 37), high = random_tensor({1, 16, 2, 2}, 38);
  const auto c = g.value(tgfa_forward(g, g.constant(low), g.constant(high), g.constant(text_tensor(1, 16, 1)), q));
  const auto d = g.value(tgfa_forward(g, g.constant(low), g.constant(high), g.constant(text_tensor(1, 16, 2)), q));
  EXPECT_NE(c, d);
}
