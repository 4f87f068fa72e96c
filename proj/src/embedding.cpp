#include "txir/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "txir/rng.hpp"
#include "txir/tensor.hpp"

namespace txir {

UnknownPromptError::UnknownPromptError(const std::string& prompt, const std::string& nearest)
    : std::out_of_range("unknown prompt \"" + prompt + "\"" +
                        (nearest.empty() ? std::string(" (table is empty)") : "; nearest key is \"" + nearest + "\"")),
      nearest_(nearest) {}

double l2_norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

TextEmbedding toy_embed(std::string_view prompt, std::size_t dim, std::uint64_t seed) {
  if (dim < 8) throw std::invalid_argument("toy embedding dimension must be at least 8");
  std::istringstream is{std::string(prompt)};
  std::string token;
  std::vector<double> acc(dim, 0.0);
  std::size_t count = 0;
  while (is >> token) {
    std::transform(token.begin(), token.end(), token.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    SplitMix64 rng(fnv1a64(token) ^ seed);
    for (double& a : acc) a += 2.0 * rng.uniform() - 1.0;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cannot embed an empty prompt");
  double norm = 0.0;
  for (double a : acc) norm += a * a;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw NumericError("toy embedding of \"" + std::string(prompt) + "\" has zero norm");

  TextEmbedding e;
  e.vector.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) e.vector[i] = static_cast<float>(acc[i] / norm);
  e.source = EmbeddingSource::kToy;
  e.prompt = std::string(prompt);
  return e;
}

TextEmbedding zero_embedding(std::size_t dim, std::string prompt) {
  TextEmbedding e;
  e.vector.assign(dim, 0.0f);
  e.source = EmbeddingSource::kZero;
  e.prompt = std::move(prompt);
  return e;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void EmbeddingTable::insert(TextEmbedding e) {
  if (e.vector.size() != dim_) {
    throw FormatError("embedding for \"" + e.prompt + "\" has dimension " + std::to_string(e.vector.size()) +
                      ", table expects " + std::to_string(dim_));
  }
  if (entries_.count(e.prompt)) throw FormatError("duplicate prompt \"" + e.prompt + "\"");
  order_.push_back(e.prompt);
  std::string key = e.prompt;
  entries_.emplace(std::move(key), std::move(e));
}

const TextEmbedding& EmbeddingTable::lookup(const std::string& prompt) const {
  auto it = entries_.find(prompt);
  if (it != entries_.end()) return it->second;
  std::string nearest;
  std::size_t best = SIZE_MAX;
  for (const auto& key : order_) {
    const std::size_t d = levenshtein(prompt, key);
    if (d < best) best = d, nearest = key;
  }
  throw UnknownPromptError(prompt, nearest);
}

void EmbeddingTable::write(std::ostream& out) const {
  out << "TXEMB 1 " << dim_ << '\n';
  char buf[64];
  for (const auto& prompt : order_) {
    out << prompt << '\n';
    const auto& v = entries_.at(prompt).vector;
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), v[i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw FormatError("failed writing embedding table");
}

void EmbeddingTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write(out);
}

EmbeddingTable EmbeddingTable::parse(std::istream& in) {
  std::string line;
  auto next_line = [&](std::string& dst) {
    if (!std::getline(in, dst)) return false;
    if (!dst.empty() && dst.back() == '\r') dst.pop_back();
    return true;
  };
  if (!next_line(line)) throw FormatError("empty embedding file");
  std::istringstream header(line);
  std::string magic;
  int version = 0;
  std::size_t dim = 0;
  if (!(header >> magic >> version >> dim) || magic != "TXEMB") {
    throw FormatError("bad embedding header \"" + line + "\", expected \"TXEMB 1 <dim>\"");
  }
  if (version != 1) throw FormatError("unsupported TXEMB version " + std::to_string(version));
  if (dim == 0) throw FormatError("TXEMB dimension must be positive");

  EmbeddingTable table(dim);
  std::string prompt, values;
  std::size_t entry = 0;
  while (next_line(prompt)) {
    ++entry;
    if (prompt.empty()) throw FormatError("entry " + std::to_string(entry) + ": empty prompt line");
    if (!next_line(values)) throw FormatError("entry " + std::to_string(entry) + ": missing vector line");
    TextEmbedding e;
    e.prompt = prompt;
    e.source = EmbeddingSource::kFile;
    const char* p = values.data();
    const char* end = values.data() + values.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      float v = 0.0f;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc{}) {
        throw FormatError("entry " + std::to_string(entry) + " (\"" + prompt + "\"): malformed number");
      }
      e.vector.push_back(v);
      p = res.ptr;
    }
    if (e.vector.empty()) throw FormatError("entry " + std::to_string(entry) + " (\"" + prompt + "\"): zero-length vector");
    if (e.vector.size() != dim) {
      throw FormatError("entry " + std::to_string(entry) + " (\"" + prompt + "\"): " + std::to_string(e.vector.size()) +
                        " values, header declares " + std::to_string(dim));
    }
    const double norm = l2_norm(e.vector);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw FormatError("entry " + std::to_string(entry) + " (\"" + prompt + "\"): vector cannot be normalized");
    }
    if (std::abs(norm - 1.0) > 1e-6) {
      for (float& v : e.vector) v = static_cast<float>(v / norm);
    }
    table.insert(std::move(e));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embedding file " + path);
  return parse(in);
}

}  // namespace txir
