#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace txir {

class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fuzzy semantic prompt: which region holds the targets, and what the
/// scene looks like. Both fields are single-space-joined lowercase words.
struct PromptSpec {
  std::string region;
  std::string scene;

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// "A photo of a <region> target in the <scene> background"
std::string render_prompt(const PromptSpec& spec);

/// Inverse of render_prompt after whitespace normalization. Errors name the
/// first token where the text departs from the template.
PromptSpec parse_prompt(std::string_view text);

/// Prompt used for the text-free baseline.
inline constexpr std::string_view kGenericPrompt = "A photo of a target in the background";

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

}  // namespace txir
