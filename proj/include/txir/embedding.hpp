#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace txir {

enum class EmbeddingSource { kToy, kFile, kZero };

/// Fixed-length text feature. Toy and file embeddings are unit-norm; the
/// zero embedding (text-free baseline) is the only exception.
struct TextEmbedding {
  std::vector<float> vector;
  EmbeddingSource source = EmbeddingSource::kToy;
  std::string prompt;

  std::size_t dim() const noexcept { return vector.size(); }
};

class UnknownPromptError : public std::out_of_range {
 public:
  UnknownPromptError(const std::string& prompt, const std::string& nearest);
  const std::string& nearest() const noexcept { return nearest_; }

 private:
  std::string nearest_;
};

inline constexpr std::size_t kDefaultTextDim = 512;

/// Hashed bag-of-words embedding. Tokens are whitespace-split and ASCII
/// lowercased; each token seeds splitmix64 with fnv1a64(token) ^ seed and
/// contributes dim draws mapped to uniform(-1, 1). The summed vector is
/// L2-normalized.
TextEmbedding toy_embed(std::string_view prompt, std::size_t dim = kDefaultTextDim, std::uint64_t seed = 0);

/// Embedding of `dim` zeros, tagged kZero.
TextEmbedding zero_embedding(std::size_t dim, std::string prompt = {});

/// Prompt-keyed embedding set backed by the TXEMB interchange file:
///
///   TXEMB 1 <dim>
///   <exact prompt string>
///   <dim space-separated decimal floats>
///   ...
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = kDefaultTextDim) : dim_(dim) {}

  /// Vectors whose norm is off unit by more than 1e-6 are renormalized;
  /// others are kept verbatim so that write/read round-trips bit-exactly.
  static EmbeddingTable load(const std::string& path);
  static EmbeddingTable parse(std::istream& in);
  void save(const std::string& path) const;
  void write(std::ostream& out) const;

  void insert(TextEmbedding e);
  bool contains(const std::string& prompt) const { return entries_.count(prompt) != 0; }
  const TextEmbedding& lookup(const std::string& prompt) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return order_.size(); }
  const std::vector<std::string>& prompts() const noexcept { return order_; }

 private:
  std::size_t dim_;
  std::map<std::string, TextEmbedding> entries_;
  std::vector<std::string> order_;
};

/// Source of prompt embeddings for training and evaluation.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual TextEmbedding embed(const std::string& prompt) const = 0;
  virtual std::size_t dim() const = 0;
};

class ToyEmbedder final : public EmbeddingProvider {
 public:
  explicit ToyEmbedder(std::size_t dim = kDefaultTextDim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  TextEmbedding embed(const std::string& prompt) const override { return toy_embed(prompt, dim_, seed_); }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

class FileEmbedder final : public EmbeddingProvider {
 public:
  explicit FileEmbedder(EmbeddingTable table) : table_(std::move(table)) {}
  TextEmbedding embed(const std::string& prompt) const override { return table_.lookup(prompt); }
  std::size_t dim() const override { return table_.dim(); }

 private:
  EmbeddingTable table_;
};

/// Edit distance, used to suggest the nearest known prompt.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// L2 norm computed in double.
double l2_norm(const std::vector<float>& v);

}  // namespace txir
