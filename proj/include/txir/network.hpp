#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "txir/blocks.hpp"
#include "txir/embedding.hpp"

namespace txir {

/// Architecture variants; each one mirrors a row of the ablation tables.
enum class Ablation { kFull, kNoText, kNoTgfa, kNoTgsi, kNoDpm, kNoCa, kNoAlpha, kNoBeta, kConcatFusion };

/// What the text-free baseline feeds to the text branch.
enum class DefaultPromptMode { kGenericPrompt, kZeroVector };

std::string_view to_string(Ablation a);
Ablation parse_ablation(std::string_view name);
std::string_view to_string(DefaultPromptMode m);
DefaultPromptMode parse_default_prompt_mode(std::string_view name);

struct ModelConfig {
  std::size_t base_channels = 16;
  std::size_t encoder_stages = 4;
  std::size_t decoder_stages = 3;
  std::size_t blocks_per_stage = 1;
  std::size_t text_dim = kDefaultTextDim;
  std::size_t text_hidden = 64;
  std::size_t mu = 2;
  std::size_t reduction = 4;
  std::size_t input_size = 64;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kFull;
  DefaultPromptMode default_prompt_mode = DefaultPromptMode::kGenericPrompt;

  /// Channels of encoder level 1..4.
  std::size_t channels(std::size_t level) const { return base_channels << (level - 1); }
  BlockDims block_dims() const { return {text_dim, text_hidden, mu, reduction}; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Two-conv residual block: relu(conv2(relu(conv1(x))) + skip(x)). `skip` is
/// a strided 1x1 projection when the shape changes, empty otherwise.
template <typename T>
struct ResidualBlockParams {
  std::size_t stride = 1;
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  ConvParams<T> skip;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  ConvParams<T> stem;
  std::vector<std::vector<ResidualBlockParams<T>>> encoder;  // [stage][block]
  DpmParams<T> bottleneck;
  std::array<TgfaParams<T>, 3> tgfa;  // index l-1 fuses E_l with the level above
  std::array<TgsiParams<T>, 3> tgsi;
  ConvParams<T> head;

  /// Kaiming-uniform weights, zero biases, seeded by config.seed.
  static ModelParams init(const ModelConfig& config);
  /// Every tensor zero.
  static ModelParams zeros(const ModelConfig& config);

  /// Stable, named view of every parameter (checkpoint and optimizer order).
  ParamList<T> params();
  std::size_t parameter_count();
};

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& src);

/// Returns E_1..E_4 with channels C0 * 2^(i-1) at H / 2^(i-1).
template <typename T>
std::array<Var, 4> encoder_forward(Graph<T>& g, Var image, const ModelParams<T>& p);

/// B = DPM(E_4); D_3 = TGSI(TGFA(E_3, B)); D_2 = TGSI(TGFA(E_2, D_3));
/// D_1 = TGSI(TGFA(E_1, D_2)). Returns D_cm = D_1.
template <typename T>
Var pcsid_forward(Graph<T>& g, const std::array<Var, 4>& pyramid, Var text, const ModelParams<T>& p);

/// sigmoid(1x1 conv(D_cm)).
template <typename T>
Var head_forward(Graph<T>& g, Var decoded, const ModelParams<T>& p);

/// image [N,1,H,W], text [N,text_dim] -> O_cm [N,1,H,W].
template <typename T>
Var model_forward(Graph<T>& g, Var image, Var text, const ModelParams<T>& p);

/// Inference without gradient bookkeeping.
template <typename T>
Tensor<T> predict(const ModelParams<T>& p, const Tensor<T>& image, const Tensor<T>& text);

/// Stacks embedding vectors into [N, dim].
template <typename T>
Tensor<T> embedding_batch(std::span<const TextEmbedding> embeddings);

/// The embedding the text-free baseline substitutes for every prompt.
TextEmbedding default_text_embedding(const ModelConfig& config, const EmbeddingProvider& provider);

// Checkpoint container, integers little-endian:
//   "TXCK" | u32 version (1) | u32 config_len | config JSON (UTF-8)
//   | u32 tensor_count | tensor_count x (u32 name_len | name | TXIR record)
void save_checkpoint(const ModelParams<float>& params, const std::string& path);
void write_checkpoint(const ModelParams<float>& params, std::ostream& out);
/// Refuses files whose config differs from `expected` when one is given,
/// or whose tensors do not match the architecture the config describes.
ModelParams<float> load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);
ModelParams<float> read_checkpoint(std::istream& in, const ModelConfig* expected = nullptr);

}  // namespace txir
