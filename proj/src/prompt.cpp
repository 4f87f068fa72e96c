#include "txir/prompt.hpp"

#include <array>
#include <cctype>
#include <sstream>
#include <vector>

namespace txir {

namespace {

constexpr std::array<std::string_view, 4> kLead = {"A", "photo", "of", "a"};
constexpr std::array<std::string_view, 3> kMiddle = {"target", "in", "the"};
constexpr std::string_view kTail = "background";

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) s += ' ';
    s += tokens[i];
  }
  return s;
}

bool middle_at(const std::vector<std::string>& tokens, std::size_t i) {
  if (i + kMiddle.size() > tokens.size()) return false;
  for (std::size_t k = 0; k < kMiddle.size(); ++k)
    if (tokens[i + k] != kMiddle[k]) return false;
  return true;
}

void validate_field(std::string_view name, const std::string& value) {
  if (value.empty()) throw PromptError(std::string(name) + " is empty");
  if (normalize_whitespace(value) != value) {
    throw PromptError(std::string(name) + " \"" + value + "\" must be single-space separated words");
  }
  for (char c : value) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      throw PromptError(std::string(name) + " \"" + value + "\" must be lowercase");
    }
  }
}

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  const auto tokens = tokenize(text);
  return join(tokens, 0, tokens.size());
}

std::string render_prompt(const PromptSpec& spec) {
  validate_field("region", spec.region);
  validate_field("scene", spec.scene);
  const auto region = tokenize(spec.region);
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (middle_at(region, i)) throw PromptError("region \"" + spec.region + "\" contains \"target in the\"");
  }
  return "A photo of a " + spec.region + " target in the " + spec.scene + " background";
}

PromptSpec parse_prompt(std::string_view text) {
  const auto tokens = tokenize(text);
  auto diverge = [&](std::size_t at, std::string_view expected) -> PromptError {
    const std::string got = at < tokens.size() ? "\"" + tokens[at] + "\"" : "end of text";
    return PromptError("prompt diverges from template at word " + std::to_string(at + 1) + ": expected " +
                       std::string(expected) + ", got " + got);
  };

  for (std::size_t i = 0; i < kLead.size(); ++i) {
    if (i >= tokens.size() || tokens[i] != kLead[i]) throw diverge(i, "\"" + std::string(kLead[i]) + "\"");
  }
  const std::size_t region_begin = kLead.size();
  if (middle_at(tokens, region_begin)) throw diverge(region_begin, "a non-empty [Interested Region]");
  std::size_t mid = region_begin + 1;
  while (mid < tokens.size() && !middle_at(tokens, mid)) ++mid;
  if (mid >= tokens.size()) throw diverge(tokens.size(), "\"target in the\"");

  const std::size_t scene_begin = mid + kMiddle.size();
  if (tokens.empty() || tokens.back() != kTail) throw diverge(tokens.size() - 1, "\"background\" as the last word");
  const std::size_t scene_end = tokens.size() - 1;
  if (scene_begin >= scene_end) throw diverge(scene_begin, "a non-empty [Scene]");

  PromptSpec spec{join(tokens, region_begin, mid), join(tokens, scene_begin, scene_end)};
  validate_field("region", spec.region);
  validate_field("scene", spec.scene);
  return spec;
}

}  // namespace txir
