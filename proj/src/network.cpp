#include "txir/network.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "txir/prompt.hpp"
#include "txir/serialize.hpp"

namespace txir {

namespace {

constexpr std::array<std::pair<Ablation, std::string_view>, 9> kAblationNames = {{
    {Ablation::kFull, "full"},
    {Ablation::kNoText, "no_text"},
    {Ablation::kNoTgfa, "no_tgfa"},
    {Ablation::kNoTgsi, "no_tgsi"},
    {Ablation::kNoDpm, "no_dpm"},
    {Ablation::kNoCa, "no_ca"},
    {Ablation::kNoAlpha, "no_alpha"},
    {Ablation::kNoBeta, "no_beta"},
    {Ablation::kConcatFusion, "concat_fusion"},
}};

}  // namespace

std::string_view to_string(Ablation a) {
  for (const auto& [value, name] : kAblationNames)
    if (value == a) return name;
  return "?";
}

Ablation parse_ablation(std::string_view name) {
  for (const auto& [value, n] : kAblationNames)
    if (n == name) return value;
  throw std::invalid_argument("unknown ablation \"" + std::string(name) + "\"");
}

std::string_view to_string(DefaultPromptMode m) {
  return m == DefaultPromptMode::kGenericPrompt ? "generic_prompt" : "zero_vector";
}

DefaultPromptMode parse_default_prompt_mode(std::string_view name) {
  if (name == "generic_prompt") return DefaultPromptMode::kGenericPrompt;
  if (name == "zero_vector") return DefaultPromptMode::kZeroVector;
  throw std::invalid_argument("unknown default_prompt_mode \"" + std::string(name) + "\"");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
  if (encoder_stages != 4) fail("encoder_stages must be 4");
  if (decoder_stages != 3) fail("decoder_stages must be 3");
  if (base_channels < 4 || base_channels % 4 != 0) fail("base_channels must be a positive multiple of 4");
  if (reduction == 0 || channels(2) % reduction != 0) fail("2*base_channels must be divisible by reduction");
  if (mu == 0 || (mu * base_channels) % 2 != 0) fail("mu*base_channels must be even");
  if (blocks_per_stage == 0) fail("blocks_per_stage must be positive");
  if (text_dim == 0 || text_hidden == 0) fail("text_dim and text_hidden must be positive");
  if (input_size == 0 || input_size % 8 != 0) fail("input_size must be a positive multiple of 8");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"base_channels", c.base_channels},
      {"encoder_stages", c.encoder_stages},
      {"decoder_stages", c.decoder_stages},
      {"blocks_per_stage", c.blocks_per_stage},
      {"text_dim", c.text_dim},
      {"text_hidden", c.text_hidden},
      {"mu", c.mu},
      {"reduction", c.reduction},
      {"input_size", c.input_size},
      {"seed", c.seed},
      {"ablation", std::string(to_string(c.ablation))},
      {"default_prompt_mode", std::string(to_string(c.default_prompt_mode))},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "base_channels") c.base_channels = value.get<std::size_t>();
    else if (key == "encoder_stages") c.encoder_stages = value.get<std::size_t>();
    else if (key == "decoder_stages") c.decoder_stages = value.get<std::size_t>();
    else if (key == "blocks_per_stage") c.blocks_per_stage = value.get<std::size_t>();
    else if (key == "text_dim") c.text_dim = value.get<std::size_t>();
    else if (key == "text_hidden") c.text_hidden = value.get<std::size_t>();
    else if (key == "mu") c.mu = value.get<std::size_t>();
    else if (key == "reduction") c.reduction = value.get<std::size_t>();
    else if (key == "input_size") c.input_size = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "ablation") c.ablation = parse_ablation(value.get<std::string>());
    else if (key == "default_prompt_mode") c.default_prompt_mode = parse_default_prompt_mode(value.get<std::string>());
    else throw std::invalid_argument("unknown model config key \"" + key + "\"");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  ModelParams p;
  p.config = config;
  p.stem = make_conv<T>(1, config.channels(1), 3, true, rng);
  p.encoder.resize(config.encoder_stages);
  for (std::size_t s = 1; s <= config.encoder_stages; ++s) {
    std::size_t cin = s == 1 ? config.channels(1) : config.channels(s - 1);
    const std::size_t cout = config.channels(s);
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      ResidualBlockParams<T> block;
      block.stride = (s > 1 && b == 0) ? 2 : 1;
      block.conv1 = make_conv<T>(cin, cout, 3, true, rng);
      block.conv2 = make_conv<T>(cout, cout, 3, true, rng);
      if (block.stride != 1 || cin != cout) block.skip = make_conv<T>(cin, cout, 1, true, rng);
      p.encoder[s - 1].push_back(std::move(block));
      cin = cout;
    }
  }
  const BlockDims dims = config.block_dims();
  const TgsiFusion fusion = config.ablation == Ablation::kConcatFusion ? TgsiFusion::kConcat : TgsiFusion::kAffine;
  p.bottleneck = make_dpm_params<T>(config.channels(4), config.mu, rng);
  for (std::size_t l = 1; l <= 3; ++l) {
    p.tgfa[l - 1] = make_tgfa_params<T>(config.channels(l), config.channels(l + 1), dims, rng);
    p.tgsi[l - 1] = make_tgsi_params<T>(config.channels(l), dims, fusion, rng);
  }
  p.head = make_conv<T>(config.channels(1), 1, 1, true, rng);
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  ModelParams p = init(config);
  for (auto& named : p.params()) std::fill(named.tensor->data().begin(), named.tensor->data().end(), T{0});
  return p;
}

template <typename T>
ParamList<T> ModelParams<T>::params() {
  ParamList<T> out;
  collect(stem, "stem", out);
  for (std::size_t s = 0; s < encoder.size(); ++s) {
    for (std::size_t b = 0; b < encoder[s].size(); ++b) {
      const std::string prefix = "encoder." + std::to_string(s + 1) + "." + std::to_string(b);
      collect(encoder[s][b].conv1, prefix + ".conv1", out);
      collect(encoder[s][b].conv2, prefix + ".conv2", out);
      if (!encoder[s][b].skip.weight.empty()) collect(encoder[s][b].skip, prefix + ".skip", out);
    }
  }
  collect(bottleneck, "bottleneck", out);
  for (std::size_t l = 0; l < 3; ++l) {
    collect(tgfa[l], "tgfa." + std::to_string(l + 1), out);
    collect(tgsi[l], "tgsi." + std::to_string(l + 1), out);
  }
  collect(head, "head", out);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.tensor->numel();
  return n;
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& src) {
  ModelParams<U> dst = ModelParams<U>::zeros(src.config);
  auto from = const_cast<ModelParams<T>&>(src).params();
  auto to = dst.params();
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].tensor = from[i].tensor->template cast<U>();
  return dst;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
std::array<Var, 4> encoder_forward(Graph<T>& g, Var image, const ModelParams<T>& p) {
  const Shape& s = g.shape(image);
  if (s.size() != 4 || s[1] != 1) throw ShapeError("encoder_forward: image must be [N,1,H,W], got " + shape_to_string(s));
  if (s[2] % 8 != 0 || s[3] % 8 != 0) {
    throw ShapeError("encoder_forward: spatial size " + shape_to_string(s) + " must be divisible by 8");
  }
  std::array<Var, 4> levels;
  Var x = g.relu(conv(g, image, p.stem, 1, 1));
  for (std::size_t stage = 0; stage < p.encoder.size(); ++stage) {
    for (const auto& block : p.encoder[stage]) {
      const Var y = conv(g, g.relu(conv(g, x, block.conv1, block.stride, 1)), block.conv2, 1, 1);
      const Var skip = block.skip.weight.empty() ? x : conv(g, x, block.skip, block.stride, 0);
      x = g.relu(g.add(y, skip));
    }
    levels[stage] = x;
  }
  return levels;
}

namespace {

TgsiMode tgsi_mode(Ablation a) {
  switch (a) {
    case Ablation::kNoTgsi: return TgsiMode::kIdentity;
    case Ablation::kNoAlpha: return TgsiMode::kNoAlpha;
    case Ablation::kNoBeta: return TgsiMode::kNoBeta;
    case Ablation::kConcatFusion: return TgsiMode::kConcat;
    default: return TgsiMode::kFull;
  }
}

}  // namespace

template <typename T>
Var pcsid_forward(Graph<T>& g, const std::array<Var, 4>& pyramid, Var text, const ModelParams<T>& p) {
  const ModelConfig& c = p.config;
  for (std::size_t l = 1; l <= 4; ++l) {
    const Shape& s = g.shape(pyramid[l - 1]);
    if (s.size() != 4 || s[1] != c.channels(l)) {
      throw ShapeError("pcsid_forward: level " + std::to_string(l) + " has shape " + shape_to_string(s) +
                       ", expected " + std::to_string(c.channels(l)) + " channels");
    }
  }
  const TgfaOptions options{true, c.ablation != Ablation::kNoDpm, c.ablation != Ablation::kNoCa};
  const TgsiMode mode = tgsi_mode(c.ablation);
  Var d = dpm_forward(g, pyramid[3], p.bottleneck);
  for (std::size_t l = 3; l >= 1; --l) {
    const Var m = c.ablation == Ablation::kNoTgfa ? plain_fusion(g, pyramid[l - 1], d, p.tgfa[l - 1])
                                                  : tgfa_forward(g, pyramid[l - 1], d, text, p.tgfa[l - 1], options);
    d = tgsi_forward(g, m, text, p.tgsi[l - 1], mode);
  }
  return d;
}

template <typename T>
Var head_forward(Graph<T>& g, Var decoded, const ModelParams<T>& p) {
  return g.sigmoid(conv(g, decoded, p.head));
}

template <typename T>
Var model_forward(Graph<T>& g, Var image, Var text, const ModelParams<T>& p) {
  const Shape& ts = g.shape(text);
  const Shape& is = g.shape(image);
  if (ts.size() != 2 || ts[1] != p.config.text_dim || is.empty() || ts[0] != is[0]) {
    throw ShapeError("model_forward: text must be [N," + std::to_string(p.config.text_dim) + "] matching image batch, got " +
                     shape_to_string(ts));
  }
  return head_forward(g, pcsid_forward(g, encoder_forward(g, image, p), text, p), p);
}

template <typename T>
Tensor<T> predict(const ModelParams<T>& p, const Tensor<T>& image, const Tensor<T>& text) {
  Graph<T> g(false);
  const Var out = model_forward(g, g.param(image), g.param(text), p);
  return g.value(out);
}

template <typename T>
Tensor<T> embedding_batch(std::span<const TextEmbedding> embeddings) {
  if (embeddings.empty()) throw ShapeError("embedding_batch: no embeddings");
  const std::size_t dim = embeddings[0].dim();
  Tensor<T> out({embeddings.size(), dim});
  for (std::size_t n = 0; n < embeddings.size(); ++n) {
    if (embeddings[n].dim() != dim) throw ShapeError("embedding_batch: mixed embedding dimensions");
    std::transform(embeddings[n].vector.begin(), embeddings[n].vector.end(), out.data().begin() + n * dim,
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

TextEmbedding default_text_embedding(const ModelConfig& config, const EmbeddingProvider& provider) {
  if (config.default_prompt_mode == DefaultPromptMode::kZeroVector) {
    return zero_embedding(config.text_dim, std::string(kGenericPrompt));
  }
  return provider.embed(std::string(kGenericPrompt));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'T', 'X', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string describe_config_diff(const ModelConfig& a, const ModelConfig& b) {
  const auto ja = to_json(a);
  const auto jb = to_json(b);
  for (const auto& [key, value] : ja.items()) {
    if (jb.at(key) != value) return key + " is " + value.dump() + " in the file but " + jb.at(key).dump() + " is expected";
  }
  return "configs differ";
}

}  // namespace

void write_checkpoint(const ModelParams<float>& params, std::ostream& out) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_u32(out, kCheckpointVersion);
  const std::string config = to_json(params.config).dump();
  detail::write_u32(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  const auto list = const_cast<ModelParams<float>&>(params).params();
  detail::write_u32(out, static_cast<std::uint32_t>(list.size()));
  for (const auto& p : list) {
    detail::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_tensor(out, *p.tensor);
  }
  if (!out) throw FormatError("failed writing checkpoint");
}

void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(params, out);
}

ModelParams<float> read_checkpoint(std::istream& in, const ModelConfig* expected) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("not a checkpoint: bad magic, expected \"TXCK\"");
  }
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t len = detail::read_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("truncated checkpoint config");
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(text));
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }
  if (expected && !(*expected == config)) {
    throw FormatError("checkpoint config mismatch: " + describe_config_diff(config, *expected));
  }

  ModelParams<float> params = ModelParams<float>::zeros(config);
  auto list = params.params();
  const std::uint32_t count = detail::read_u32(in);
  if (count != list.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(list.size()));
  }
  for (auto& p : list) {
    const std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("truncated checkpoint tensor name");
    if (name != p.name) throw FormatError("checkpoint tensor \"" + name + "\" found where \"" + p.name + "\" was expected");
    Tensor<float> t = read_tensor(in);
    if (t.shape() != p.tensor->shape()) {
      throw FormatError("checkpoint tensor \"" + name + "\" has shape " + shape_to_string(t.shape()) + ", expected " +
                        shape_to_string(p.tensor->shape()));
    }
    *p.tensor = std::move(t);
  }
  return params;
}

ModelParams<float> load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint(in, expected);
}

#define TXIR_INSTANTIATE_NETWORK(T)                                                              \
  template struct ModelParams<T>;                                                                \
  template std::array<Var, 4> encoder_forward<T>(Graph<T>&, Var, const ModelParams<T>&);          \
  template Var pcsid_forward<T>(Graph<T>&, const std::array<Var, 4>&, Var, const ModelParams<T>&); \
  template Var head_forward<T>(Graph<T>&, Var, const ModelParams<T>&);                           \
  template Var model_forward<T>(Graph<T>&, Var, Var, const ModelParams<T>&);                     \
  template Tensor<T> predict<T>(const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> embedding_batch<T>(std::span<const TextEmbedding>);

TXIR_INSTANTIATE_NETWORK(float)
TXIR_INSTANTIATE_NETWORK(double)

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace txir
