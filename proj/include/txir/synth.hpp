#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "txir/pgm.hpp"
#include "txir/prompt.hpp"

namespace txir {

/// Synthetic IR scenes. Every image has a smooth sky band above a textured
/// ground band, with the horizon between 45% and 55% of the height. Blobs of
/// the same intensity distribution appear on both sides; the prompt region
/// decides which side holds the targets and which side holds decoys.
struct SynthSpec {
  std::size_t count = 300;
  std::size_t size = 64;
  std::vector<std::string> scenes = {"sky", "ground"};  // target regions, cycled per sample
  std::size_t targets_min = 1, targets_max = 3;
  double sigma_min = 0.7, sigma_max = 1.5;
  std::size_t decoys_min = 0, decoys_max = 4;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  /// Explicit train/val/test counts in sample order; absent means the
  /// annotations carry no split and the loader applies 6:2:2.
  std::optional<std::array<std::size_t, 3>> splits;

  void validate() const;
};

inline constexpr std::string_view kSyntheticScene = "sky and ground";

/// Field names as in the struct, with ranges as two-element arrays:
/// {"count", "size", "scenes", "targets_per_image": [lo, hi],
///  "target_sigma": [lo, hi], "decoys_per_image": [lo, hi], "noise_sigma",
///  "seed", "splits": [train, val, test]}.
SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& s);

struct Blob {
  double row = 0;
  double col = 0;
  double sigma = 1;
  double amplitude = 0;
  bool target = false;
};

struct SynthSample {
  PromptSpec prompt;
  std::size_t horizon = 0;  // first ground row
  std::vector<Blob> blobs;
  GrayImage image;
  GrayImage mask;  // 0 / 255
};

/// Radius where a blob's profile falls to half its peak.
inline double mask_radius(double sigma) { return sigma * 1.1774100225154747; }
/// Radius where it falls to 1% of its peak.
inline double support_radius(double sigma) { return sigma * 3.0348542587702925; }

/// Sample `index` of the set; depends only on (spec, index).
SynthSample synthesize_sample(const SynthSpec& spec, std::size_t index);

/// Writes images/NNNN.pgm, masks/NNNN.pgm and annotations.json under out_dir.
/// Returns the number of samples written.
std::size_t generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

}  // namespace txir
