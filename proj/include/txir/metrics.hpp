#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "txir/tensor.hpp"

namespace txir {

/// Row-major 0/1 raster.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

  std::size_t area() const noexcept { return height * width; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  std::size_t count() const;
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kMatchRadius = 3.0;

/// Strict rule: a pixel is foreground iff prob > tau.
BinaryMask binarize(std::span<const float> prob, std::size_t height, std::size_t width, double tau = kDefaultThreshold);
/// One mask per batch entry of a [N,1,H,W] map.
std::vector<BinaryMask> binarize(const Tensor<float>& prob, double tau = kDefaultThreshold);

struct Component {
  std::vector<std::uint32_t> pixels;  // flat indices, ascending
  double row = 0;                     // centroid
  double col = 0;

  std::size_t size() const noexcept { return pixels.size(); }
};

/// 8-connected components numbered by their first pixel in row-major order.
std::vector<Component> connected_components(const BinaryMask& mask);

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  /// tp / (tp + fp + fn); 1 when both masks are empty.
  double iou() const noexcept;
  /// 2tp / (2tp + fp + fn); 1 when both masks are empty.
  double f1() const noexcept;
  ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept;
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

struct PixelScores {
  double iou = 0;
  double f1 = 0;
};

PixelScores pixel_scores(const BinaryMask& pred, const BinaryMask& gt);

struct TargetMatch {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gt index, pred index)
  std::size_t gt_count = 0;
  std::size_t pred_count = 0;
  std::uint64_t false_pixels = 0;  // pixels of unmatched predicted components

  std::size_t detected() const noexcept { return pairs.size(); }
};

/// One-to-one matching of components whose centroids lie within `radius`
/// (Euclidean, inclusive). Maximizes the number of matches, then the matched
/// predicted area (equivalently, minimizes false pixels). Independent groups
/// of mutually reachable components are solved exhaustively; groups too large
/// for that fall back to augmenting paths, which still maximizes the count.
TargetMatch match_targets(const std::vector<Component>& gt, const std::vector<Component>& pred,
                          double radius = kMatchRadius);

struct PdFa {
  double pd = 0;  // NaN when there are no gt components
  bool pd_defined = false;
  double fa = 0;  // false pixels / image area

  double fa_e6() const noexcept { return fa * 1e6; }
};

PdFa pd_fa(const std::vector<Component>& pred, const std::vector<Component>& gt, std::size_t image_area,
           double radius = kMatchRadius);

/// Target-level counts accumulated over a set.
struct TargetCounts {
  std::uint64_t detected = 0;
  std::uint64_t gt_targets = 0;
  std::uint64_t false_pixels = 0;
  std::uint64_t pixels = 0;

  TargetCounts& operator+=(const TargetCounts& o) noexcept;
};

struct SampleMetrics {
  std::string sample;
  ConfusionCounts pixels;
  TargetCounts targets;
};

SampleMetrics evaluate_masks(std::string sample, const BinaryMask& pred, const BinaryMask& gt);

/// Set-level report; every ratio is formed from the summed counts.
class EvalReport {
 public:
  void add(SampleMetrics m);
  /// Appends another report's rows after this one's.
  void merge(const EvalReport& other);

  double iou() const noexcept { return pixels_.iou(); }
  double f1() const noexcept { return pixels_.f1(); }
  bool pd_defined() const noexcept { return targets_.gt_targets > 0; }
  /// NaN unless pd_defined().
  double pd() const noexcept;
  double fa() const noexcept;
  double fa_e6() const noexcept { return fa() * 1e6; }

  const ConfusionCounts& pixels() const noexcept { return pixels_; }
  const TargetCounts& targets() const noexcept { return targets_; }
  const std::vector<SampleMetrics>& rows() const noexcept { return rows_; }

  /// Header "sample,iou,f1,pd_hit,gt_targets,false_pixels".
  void write_csv(std::ostream& out) const;
  nlohmann::json summary() const;

 private:
  ConfusionCounts pixels_;
  TargetCounts targets_;
  std::vector<SampleMetrics> rows_;
};

}  // namespace txir
