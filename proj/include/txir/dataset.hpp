#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "txir/metrics.hpp"
#include "txir/pgm.hpp"
#include "txir/prompt.hpp"
#include "txir/tensor.hpp"

namespace txir {

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleRecord {
  std::string id;          // image file stem
  std::string image_path;  // absolute or relative to the working directory
  std::string mask_path;
  PromptSpec prompt;
  Split split = Split::kTrain;

  std::string prompt_text() const { return render_prompt(prompt); }
};

struct Dataset {
  std::string root;
  std::vector<SampleRecord> samples;

  std::vector<SampleRecord> subset(Split s) const;
};

/// Reads <root>/annotations.json:
///   {"samples":[{"image":…, "mask":…, "region":…, "scene":…, "split":…}]}
/// Paths are relative to root. Every image and mask is opened and checked:
/// equal dimensions, mask values in {0, maxval}. When no sample carries a
/// split, a seeded shuffle assigns floor(0.6n) train, floor(0.2n) val and the
/// rest test.
Dataset load_dataset(const std::string& root, std::uint64_t split_seed = 0);

/// Seeded 6:2:2 assignment over n items, in item order.
std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed);

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t size = 0;
};

/// Seeded random window when `seed` is set (top = below(H - size + 1), then
/// left = below(W - size + 1) from one splitmix64 stream), centered otherwise.
CropWindow crop_window(std::size_t height, std::size_t width, std::size_t size, std::optional<std::uint64_t> seed);

/// Pixel values divided by maxval, cropped to [1,1,size,size].
Tensor<float> normalize_and_crop(const GrayImage& img, std::size_t size, std::optional<std::uint64_t> seed);
Tensor<float> normalize_crop(const GrayImage& img, const CropWindow& win);
BinaryMask mask_from_image(const GrayImage& img);
BinaryMask crop_mask(const BinaryMask& mask, const CropWindow& win);

struct LoadedSample {
  const SampleRecord* record = nullptr;
  GrayImage image;
  BinaryMask mask;
};

LoadedSample load_sample(const SampleRecord& record);

}  // namespace txir
