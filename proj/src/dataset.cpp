#include "txir/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "txir/rng.hpp"

namespace txir {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split \"" + std::string(name) + "\" (expected train, val or test)");
}

std::vector<SampleRecord> Dataset::subset(Split s) const {
  std::vector<SampleRecord> out;
  for (const auto& r : samples)
    if (r.split == s) out.push_back(r);
  return out;
}

std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_train = n * 6 / 10, n_val = n * 2 / 10;
  std::vector<Split> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[order[k]] = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
  }
  return out;
}

BinaryMask mask_from_image(const GrayImage& img) {
  BinaryMask m(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = img.pixels[i];
    if (v != 0 && v != img.maxval) {
      throw DatasetError("non-binary mask: value " + std::to_string(v) + " at pixel (" + std::to_string(i / img.width) +
                         ", " + std::to_string(i % img.width) + ")");
    }
    m.data[i] = v != 0 ? 1 : 0;
  }
  return m;
}

LoadedSample load_sample(const SampleRecord& record) {
  LoadedSample s;
  s.record = &record;
  s.image = load_pgm(record.image_path);
  GrayImage mask;
  try {
    mask = load_pgm(record.mask_path);
    s.mask = mask_from_image(mask);
  } catch (const std::exception& e) {
    throw DatasetError("sample " + record.id + ": mask: " + e.what());
  }
  if (mask.height != s.image.height || mask.width != s.image.width) {
    throw DatasetError("sample " + record.id + ": image is " + std::to_string(s.image.width) + "x" +
                       std::to_string(s.image.height) + " but mask is " + std::to_string(mask.width) + "x" +
                       std::to_string(mask.height));
  }
  return s;
}

Dataset load_dataset(const std::string& root, std::uint64_t split_seed) {
  const fs::path base(root);
  const fs::path ann = base / "annotations.json";
  std::ifstream in(ann);
  if (!in) throw DatasetError("missing " + ann.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw DatasetError(ann.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("samples") || !j["samples"].is_array()) {
    throw DatasetError(ann.string() + ": expected an object with a \"samples\" array");
  }

  Dataset ds;
  ds.root = root;
  std::size_t with_split = 0;
  const auto& items = j["samples"];
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& e = items[i];
    const std::string where = "sample " + std::to_string(i);
    auto field = [&](const char* key) -> std::string {
      if (!e.contains(key) || !e[key].is_string()) throw DatasetError(where + ": missing string field \"" + key + "\"");
      return e[key].get<std::string>();
    };
    SampleRecord r;
    const std::string image = field("image");
    r.id = fs::path(image).stem().string();
    r.image_path = (base / image).string();
    if (!e.contains("mask")) throw DatasetError("sample " + r.id + ": missing mask field");
    r.mask_path = (base / field("mask")).string();
    try {
      r.prompt = {normalize_whitespace(field("region")), normalize_whitespace(field("scene"))};
      render_prompt(r.prompt);
    } catch (const PromptError& err) {
      throw DatasetError("sample " + r.id + ": unparsable prompt: " + err.what());
    }
    if (e.contains("split")) {
      try {
        r.split = parse_split(field("split"));
      } catch (const std::invalid_argument& err) {
        throw DatasetError("sample " + r.id + ": " + err.what());
      }
      ++with_split;
    }
    if (!fs::exists(r.image_path)) throw DatasetError("sample " + r.id + ": missing image " + r.image_path);
    if (!fs::exists(r.mask_path)) throw DatasetError("sample " + r.id + ": missing mask " + r.mask_path);
    load_sample(r);
    ds.samples.push_back(std::move(r));
  }
  if (with_split != 0 && with_split != ds.samples.size()) {
    throw DatasetError(ann.string() + ": split given for " + std::to_string(with_split) + " of " +
                       std::to_string(ds.samples.size()) + " samples; give it for all or none");
  }
  if (with_split == 0) {
    const auto splits = assign_splits(ds.samples.size(), split_seed);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) ds.samples[i].split = splits[i];
  }
  return ds;
}

CropWindow crop_window(std::size_t height, std::size_t width, std::size_t size, std::optional<std::uint64_t> seed) {
  if (size == 0 || size > height || size > width) {
    throw ShapeError("crop of " + std::to_string(size) + " does not fit a " + std::to_string(width) + "x" +
                     std::to_string(height) + " image");
  }
  CropWindow win{(height - size) / 2, (width - size) / 2, size};
  if (seed) {
    SplitMix64 rng(*seed);
    win.top = rng.below(height - size + 1);
    win.left = rng.below(width - size + 1);
  }
  return win;
}

Tensor<float> normalize_crop(const GrayImage& img, const CropWindow& win) {
  Tensor<float> out({1, 1, win.size, win.size});
  const float scale = 1.0f / static_cast<float>(img.maxval);
  auto d = out.data();
  for (std::size_t r = 0; r < win.size; ++r)
    for (std::size_t c = 0; c < win.size; ++c)
      d[r * win.size + c] = static_cast<float>(img.at(win.top + r, win.left + c)) * scale;
  return out;
}

Tensor<float> normalize_and_crop(const GrayImage& img, std::size_t size, std::optional<std::uint64_t> seed) {
  return normalize_crop(img, crop_window(img.height, img.width, size, seed));
}

BinaryMask crop_mask(const BinaryMask& mask, const CropWindow& win) {
  BinaryMask out(win.size, win.size);
  for (std::size_t r = 0; r < win.size; ++r)
    for (std::size_t c = 0; c < win.size; ++c) out.at(r, c) = mask.at(win.top + r, win.left + c);
  return out;
}

}  // namespace txir
