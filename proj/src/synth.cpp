#include "txir/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "txir/dataset.hpp"
#include "txir/rng.hpp"

namespace txir {

namespace fs = std::filesystem;

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid synth spec: " + what); };
  if (count == 0) fail("count must be positive");
  if (size < 24) fail("size must be at least 24");
  if (scenes.empty()) fail("scenes must not be empty");
  for (const auto& s : scenes)
    if (s != "sky" && s != "ground") fail("scene \"" + s + "\" is not one of sky, ground");
  if (targets_min == 0 || targets_min > targets_max) fail("targets_per_image must satisfy 1 <= lo <= hi");
  if (decoys_min > decoys_max) fail("decoys_per_image must satisfy lo <= hi");
  if (!(sigma_min > 0) || sigma_min > sigma_max) fail("target_sigma must satisfy 0 < lo <= hi");
  if (!(noise_sigma >= 0)) fail("noise_sigma must be non-negative");
  if (splits && (*splits)[0] + (*splits)[1] + (*splits)[2] != count) fail("splits must sum to count");
}

namespace {

template <typename U>
std::pair<U, U> range_field(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument("synth spec: \"" + key + "\" must be [lo, hi]");
  return {v[0].get<U>(), v[1].get<U>()};
}

}  // namespace

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth spec must be a JSON object");
  SynthSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "count") s.count = v.get<std::size_t>();
    else if (key == "size") s.size = v.get<std::size_t>();
    else if (key == "scenes") s.scenes = v.get<std::vector<std::string>>();
    else if (key == "targets_per_image") std::tie(s.targets_min, s.targets_max) = range_field<std::size_t>(v, key);
    else if (key == "target_sigma") std::tie(s.sigma_min, s.sigma_max) = range_field<double>(v, key);
    else if (key == "decoys_per_image") std::tie(s.decoys_min, s.decoys_max) = range_field<std::size_t>(v, key);
    else if (key == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else if (key == "splits") {
      const auto counts = v.get<std::vector<std::size_t>>();
      if (counts.size() != 3) throw std::invalid_argument("synth spec: \"splits\" must be [train, val, test]");
      s.splits = std::array<std::size_t, 3>{counts[0], counts[1], counts[2]};
    } else {
      throw std::invalid_argument("unknown synth spec key \"" + key + "\"");
    }
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const SynthSpec& s) {
  nlohmann::json j = {
      {"count", s.count},
      {"size", s.size},
      {"scenes", s.scenes},
      {"targets_per_image", {s.targets_min, s.targets_max}},
      {"target_sigma", {s.sigma_min, s.sigma_max}},
      {"decoys_per_image", {s.decoys_min, s.decoys_max}},
      {"noise_sigma", s.noise_sigma},
      {"seed", s.seed},
  };
  if (s.splits) j["splits"] = *s.splits;
  return j;
}

namespace {

constexpr int kHorizonGap = 4;  // blob centres stay this far from the horizon
constexpr int kPlacementTries = 500;

// Bilinear value noise on a coarse lattice.
std::vector<double> value_noise(std::size_t h, std::size_t w, std::size_t cell, double amp, SplitMix64& rng) {
  const std::size_t gh = h / cell + 2, gw = w / cell + 2;
  std::vector<double> grid(gh * gw);
  for (auto& v : grid) v = amp * rng.normal();
  std::vector<double> out(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const double fy = static_cast<double>(r) / static_cast<double>(cell);
    const auto y0 = static_cast<std::size_t>(fy);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < w; ++c) {
      const double fx = static_cast<double>(c) / static_cast<double>(cell);
      const auto x0 = static_cast<std::size_t>(fx);
      const double tx = fx - static_cast<double>(x0);
      const double a = grid[y0 * gw + x0], b = grid[y0 * gw + x0 + 1];
      const double cc = grid[(y0 + 1) * gw + x0], d = grid[(y0 + 1) * gw + x0 + 1];
      out[r * w + c] = (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * cc + tx * d);
    }
  }
  return out;
}

bool place_blob(Blob& blob, bool in_sky, std::size_t size, std::size_t horizon, const std::vector<Blob>& placed,
                const SynthSpec& spec, SplitMix64& rng) {
  for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
    blob.sigma = rng.uniform(spec.sigma_min, spec.sigma_max);
    const double r = support_radius(blob.sigma);
    const double margin = std::ceil(r);
    const double hi_edge = static_cast<double>(size - 1) - margin;
    double row_lo, row_hi;
    if (in_sky) {
      row_lo = margin;
      row_hi = static_cast<double>(horizon) - kHorizonGap;
    } else {
      row_lo = static_cast<double>(horizon) + kHorizonGap;
      row_hi = hi_edge;
    }
    if (row_lo > row_hi || margin > hi_edge) continue;
    blob.row = rng.uniform(row_lo, row_hi);
    blob.col = rng.uniform(margin, hi_edge);
    bool clear = true;
    for (const auto& other : placed) {
      const double dr = blob.row - other.row, dc = blob.col - other.col;
      const double gap = r + support_radius(other.sigma) + 1.0;
      if (dr * dr + dc * dc <= gap * gap) {
        clear = false;
        break;
      }
    }
    if (clear) return true;
  }
  return false;
}

}  // namespace

SynthSample synthesize_sample(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  SplitMix64 rng(SplitMix64(spec.seed ^ (0xD1B54A32D192ED03ull * (index + 1))).next());
  const std::size_t n = spec.size;

  SynthSample s;
  s.prompt = {spec.scenes[index % spec.scenes.size()], std::string(kSyntheticScene)};
  const bool targets_in_sky = s.prompt.region == "sky";
  s.horizon = static_cast<std::size_t>(std::lround(static_cast<double>(n) * rng.uniform(0.45, 0.55)));

  std::vector<double> bg(n * n);
  const double sky_top = rng.uniform(0.10, 0.25);
  const double sky_bottom = sky_top + rng.uniform(0.05, 0.15);
  const double tilt = rng.uniform(-0.03, 0.03);
  const double ground_level = rng.uniform(0.25, 0.40);
  const std::vector<double> coarse = value_noise(n, n, 4, 0.05, rng);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c) / static_cast<double>(n) - 0.5;
      if (r < s.horizon) {
        const double t = static_cast<double>(r) / static_cast<double>(s.horizon);
        bg[r * n + c] = sky_top + (sky_bottom - sky_top) * t + tilt * x;
      } else {
        bg[r * n + c] = ground_level + coarse[r * n + c] + rng.uniform(-0.04, 0.04);
      }
    }
  }

  const auto n_targets = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(spec.targets_min), static_cast<std::int64_t>(spec.targets_max)));
  const auto n_decoys = static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(spec.decoys_min), static_cast<std::int64_t>(spec.decoys_max)));
  for (std::size_t k = 0; k < n_targets + n_decoys; ++k) {
    Blob b;
    b.target = k < n_targets;
    b.amplitude = rng.uniform(0.30, 0.55);
    const bool in_sky = b.target == targets_in_sky;
    if (!place_blob(b, in_sky, n, s.horizon, s.blobs, spec, rng)) {
      throw std::runtime_error("synthetic sample " + std::to_string(index) + ": infeasible blob placement after " +
                               std::to_string(kPlacementTries) + " tries");
    }
    s.blobs.push_back(b);
  }

  s.image = {n, n, 255, std::vector<std::uint8_t>(n * n)};
  s.mask = {n, n, 255, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double v = bg[r * n + c];
      for (const auto& b : s.blobs) {
        const double dr = static_cast<double>(r) - b.row, dc = static_cast<double>(c) - b.col;
        const double d2 = dr * dr + dc * dc;
        v += b.amplitude * std::exp(-d2 / (2 * b.sigma * b.sigma));
        const double mr = mask_radius(b.sigma);
        if (b.target && d2 <= mr * mr) s.mask.pixels[r * n + c] = 255;
      }
      v += spec.noise_sigma * rng.normal();
      s.image.pixels[r * n + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return s;
}

std::size_t generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  const fs::path base(out_dir);
  fs::create_directories(base / "images");
  fs::create_directories(base / "masks");
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.count; ++i) {
    const SynthSample s = synthesize_sample(spec, i);
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.pgm", i);
    save_pgm((base / "images" / name).string(), s.image);
    save_pgm((base / "masks" / name).string(), s.mask);
    nlohmann::json e = {
        {"image", std::string("images/") + name},
        {"mask", std::string("masks/") + name},
        {"region", s.prompt.region},
        {"scene", s.prompt.scene},
    };
    if (spec.splits) {
      const auto& c = *spec.splits;
      e["split"] = std::string(to_string(i < c[0] ? Split::kTrain : (i < c[0] + c[1] ? Split::kVal : Split::kTest)));
    }
    samples.push_back(std::move(e));
  }
  std::ofstream out(base / "annotations.json");
  if (!out) throw std::runtime_error("cannot write " + (base / "annotations.json").string());
  out << nlohmann::json{{"samples", samples}}.dump(2) << '\n';
  return spec.count;
}

}  // namespace txir
