#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "txir/embedding.hpp"
#include "txir/prompt.hpp"
#include "txir/tensor.hpp"

using namespace txir;

namespace {

double cosine(const TextEmbedding& a, const TextEmbedding& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += static_cast<double>(a.vector[i]) * b.vector[i];
  return s / (l2_norm(a.vector) * l2_norm(b.vector));
}

}  // namespace

TEST(Prompt, RenderExamples) {
  EXPECT_EQ(render_prompt({"sky", "sky and ground"}), "A photo of a sky target in the sky and ground background");
  EXPECT_EQ(render_prompt({"ground", "ocean-sky"}), "A photo of a ground target in the ocean-sky background");
  EXPECT_THROW(render_prompt({"", "sky"}), PromptError);
  EXPECT_THROW(render_prompt({"sky", ""}), PromptError);
  EXPECT_THROW(render_prompt({"Sky", "sky"}), PromptError);
  EXPECT_THROW(render_prompt({"sky  blue", "sky"}), PromptError);
}

TEST(Prompt, ParseExamples) {
  EXPECT_EQ(parse_prompt("A photo of a sky target in the sky and ground background"),
            (PromptSpec{"sky", "sky and ground"}));
  EXPECT_EQ(parse_prompt("  A photo  of a\tsky target in   the sky and ground background  "),
            (PromptSpec{"sky", "sky and ground"}));
  EXPECT_THROW(parse_prompt(kGenericPrompt), PromptError);
  EXPECT_THROW(parse_prompt("A picture of a sky target in the sky background"), PromptError);
  EXPECT_THROW(parse_prompt("A photo of a sky target in the sky"), PromptError);
  EXPECT_THROW(parse_prompt(""), PromptError);
}

TEST(Prompt, ParseErrorNamesDivergence) {
  try {
    parse_prompt("A photo of the sky target in the sky background");
    FAIL();
  } catch (const PromptError& e) {
    EXPECT_NE(std::string(e.what()).find("the"), std::string::npos) << e.what();
  }
}

TEST(Prompt, RandomRoundTrip) {
  SplitMix64 rng(3);
  const char* words[] = {"sky", "ground", "sea", "cloud", "and", "dark", "urban", "ocean-sky", "bright"};
  for (int trial = 0; trial < 300; ++trial) {
    auto pick = [&] {
      std::string s;
      const auto n = rng.between(1, 4);
      for (std::int64_t i = 0; i < n; ++i) s += (i ? " " : "") + std::string(words[rng.below(9)]);
      return s;
    };
    const PromptSpec spec{pick(), pick()};
    EXPECT_EQ(parse_prompt(render_prompt(spec)), spec);
  }
}

TEST(ToyEmbed, GoldenSkyVector) {
  // From an independent FNV-1a + splitmix64 reimplementation (tests/fixtures/make_fixture.py).
  const auto e = toy_embed("sky", 512, 0);
  EXPECT_EQ(e.vector[0], 0.07165620476007462f);
  EXPECT_EQ(e.vector[1], 5.04121562698856e-05f);
  EXPECT_EQ(e.vector[2], -0.009755902923643589f);
  EXPECT_EQ(e.vector[3], 0.03508421778678894f);
  EXPECT_EQ(e.source, EmbeddingSource::kToy);
  EXPECT_EQ(e.prompt, "sky");
}

TEST(ToyEmbed, NormDeterminismBagOfWords) {
  const auto a = toy_embed("a sky target", 64, 5);
  EXPECT_NEAR(l2_norm(a.vector), 1.0, 1e-6);
  EXPECT_EQ(a.vector, toy_embed("a sky target", 64, 5).vector);
  EXPECT_EQ(a.vector, toy_embed("target SKY a", 64, 5).vector);
  EXPECT_NE(a.vector, toy_embed("a sky target", 64, 6).vector);
  EXPECT_THROW(toy_embed("   ", 64), std::invalid_argument);
  EXPECT_THROW(toy_embed("sky", 7), std::invalid_argument);
}

TEST(ToyEmbed, SharedWordsCorrelate) {
  const auto sky = toy_embed("A photo of a sky target in the sky and ground background");
  const auto ground = toy_embed("A photo of a ground target in the sky and ground background");
  const auto other = toy_embed("the quick brown fox jumps over a lazy dog");
  const double c = cosine(sky, ground);
  EXPECT_LT(c, 1.0);
  EXPECT_GT(c, cosine(sky, other));
}

TEST(EmbeddingTable, RoundTripBitExact) {
  EmbeddingTable t(16);
  t.insert(toy_embed("A photo of a sky target in the sky background", 16));
  std::stringstream s;
  t.write(s);
  EXPECT_EQ(s.str().substr(0, 11), "TXEMB 1 16\n");
  std::stringstream in(s.str());
  const auto back = EmbeddingTable::parse(in);
  ASSERT_EQ(back.size(), 1u);
  const auto& e = back.lookup("A photo of a sky target in the sky background");
  EXPECT_EQ(e.vector, t.lookup("A photo of a sky target in the sky background").vector);
  EXPECT_EQ(e.source, EmbeddingSource::kFile);
  std::stringstream again;
  back.write(again);
  EXPECT_EQ(again.str(), s.str());
}

TEST(EmbeddingTable, RenormalizesOnLoad) {
  std::stringstream in("TXEMB 1 2\nhello\n3 4\n");
  const auto t = EmbeddingTable::parse(in);
  EXPECT_FLOAT_EQ(t.lookup("hello").vector[0], 0.6f);
  EXPECT_FLOAT_EQ(t.lookup("hello").vector[1], 0.8f);
}

TEST(EmbeddingTable, FormatErrors) {
  auto parse = [](const std::string& text) {
    std::stringstream in(text);
    return EmbeddingTable::parse(in);
  };
  EXPECT_THROW(parse(""), FormatError);
  EXPECT_THROW(parse("TXEMX 1 2\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 2 2\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n1 2 3\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n1 x\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n0 0\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n"), FormatError);
  EXPECT_THROW(parse("TXEMB 1 2\nhello\n1 0\nhello\n0 1\n"), FormatError);
}

TEST(EmbeddingTable, UnknownPromptNamesNearest) {
  EmbeddingTable t(8);
  t.insert(toy_embed("A photo of a sky target in the sky background", 8));
  t.insert(toy_embed("A photo of a ground target in the ground background", 8));
  try {
    t.lookup("A photo of a sky target in the sky backgrounds");
    FAIL();
  } catch (const UnknownPromptError& e) {
    EXPECT_EQ(e.nearest(), "A photo of a sky target in the sky background");
    EXPECT_NE(std::string(e.what()).find("unknown prompt"), std::string::npos);
  }
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
}

TEST(EmbeddingTable, ExternalFixtureLoads) {
  const auto t = EmbeddingTable::load(std::string(TXIR_FIXTURE_DIR) + "/toy3.txemb");
  EXPECT_EQ(t.dim(), 512u);
  ASSERT_EQ(t.size(), 3u);
  for (const auto& p : t.prompts()) {
    const auto& e = t.lookup(p);
    EXPECT_NEAR(l2_norm(e.vector), 1.0, 1e-6);
    EXPECT_EQ(e.vector, toy_embed(p).vector) << p;
  }
  FileEmbedder fe(t);
  EXPECT_EQ(fe.dim(), 512u);
  EXPECT_THROW(fe.embed("nope"), UnknownPromptError);
}
