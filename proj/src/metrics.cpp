#include "txir/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace txir {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

BinaryMask binarize(std::span<const float> prob, std::size_t height, std::size_t width, double tau) {
  if (prob.size() != height * width) {
    throw ShapeError("binarize: " + std::to_string(prob.size()) + " values for a " + std::to_string(height) + "x" +
                     std::to_string(width) + " mask");
  }
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < prob.size(); ++i) m.data[i] = static_cast<double>(prob[i]) > tau ? 1 : 0;
  return m;
}

std::vector<BinaryMask> binarize(const Tensor<float>& prob, double tau) {
  if (prob.rank() != 4 || prob.dim(1) != 1) throw ShapeError("binarize: expected [N,1,H,W], got " + shape_to_string(prob.shape()));
  const std::size_t h = prob.dim(2), w = prob.dim(3);
  std::vector<BinaryMask> out;
  for (std::size_t n = 0; n < prob.dim(0); ++n) out.push_back(binarize(prob.data().subspan(n * h * w, h * w), h, w, tau));
  return out;
}

std::vector<Component> connected_components(const BinaryMask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<std::uint8_t> seen(mask.area(), 0);
  std::vector<Component> out;
  std::vector<std::uint32_t> stack;
  for (std::size_t start = 0; start < mask.area(); ++start) {
    if (!mask.data[start] || seen[start]) continue;
    Component comp;
    seen[start] = 1;
    stack.assign(1, static_cast<std::uint32_t>(start));
    while (!stack.empty()) {
      const std::uint32_t idx = stack.back();
      stack.pop_back();
      comp.pixels.push_back(idx);
      const std::size_t r = idx / w, c = idx % w;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t n = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
          if (mask.data[n] && !seen[n]) {
            seen[n] = 1;
            stack.push_back(static_cast<std::uint32_t>(n));
          }
        }
      }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    double sr = 0, sc = 0;
    for (const auto idx : comp.pixels) {
      sr += static_cast<double>(idx / w);
      sc += static_cast<double>(idx % w);
    }
    comp.row = sr / static_cast<double>(comp.size());
    comp.col = sc / static_cast<double>(comp.size());
    out.push_back(std::move(comp));
  }
  return out;
}

double ConfusionCounts::iou() const noexcept {
  const std::uint64_t d = tp + fp + fn;
  return d == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(d);
}

double ConfusionCounts::f1() const noexcept {
  const std::uint64_t d = 2 * tp + fp + fn;
  return d == 0 ? 1.0 : static_cast<double>(2 * tp) / static_cast<double>(d);
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.area(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PixelScores pixel_scores(const BinaryMask& pred, const BinaryMask& gt) {
  const ConfusionCounts c = confusion(pred, gt);
  return {c.iou(), c.f1()};
}

namespace {

struct Score {
  std::size_t matches = 0;
  std::uint64_t matched_pixels = 0;
  bool operator>(const Score& o) const {
    return matches != o.matches ? matches > o.matches : matched_pixels > o.matched_pixels;
  }
};

// Exhaustive search over one group. gts index into adj; adj holds local pred ids.
class GroupSolver {
 public:
  GroupSolver(const std::vector<std::vector<std::size_t>>& adj, const std::vector<std::uint64_t>& pred_size,
              std::size_t pred_count)
      : adj_(adj), pred_size_(pred_size), used_(pred_count, 0), assign_(adj.size(), kNone), best_assign_(assign_) {}

  std::vector<std::size_t> solve() {
    dfs(0, {});
    return best_assign_;
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

 private:
  void dfs(std::size_t i, Score s) {
    if (i == adj_.size()) {
      if (s > best_ || first_) {
        best_ = s;
        best_assign_ = assign_;
        first_ = false;
      }
      return;
    }
    for (const std::size_t p : adj_[i]) {
      if (used_[p]) continue;
      used_[p] = 1;
      assign_[i] = p;
      dfs(i + 1, {s.matches + 1, s.matched_pixels + pred_size_[p]});
      used_[p] = 0;
      assign_[i] = kNone;
    }
    dfs(i + 1, s);
  }

  const std::vector<std::vector<std::size_t>>& adj_;
  const std::vector<std::uint64_t>& pred_size_;
  std::vector<std::uint8_t> used_;
  std::vector<std::size_t> assign_;
  std::vector<std::size_t> best_assign_;
  Score best_;
  bool first_ = true;
};

// Kuhn's augmenting paths: maximum cardinality only.
std::vector<std::size_t> max_cardinality(const std::vector<std::vector<std::size_t>>& adj, std::size_t pred_count) {
  constexpr std::size_t kNone = GroupSolver::kNone;
  std::vector<std::size_t> owner(pred_count, kNone);
  std::vector<std::uint8_t> visited;
  auto augment = [&](auto&& self, std::size_t g) -> bool {
    for (const std::size_t p : adj[g]) {
      if (visited[p]) continue;
      visited[p] = 1;
      if (owner[p] == kNone || self(self, owner[p])) {
        owner[p] = g;
        return true;
      }
    }
    return false;
  };
  for (std::size_t g = 0; g < adj.size(); ++g) {
    visited.assign(pred_count, 0);
    augment(augment, g);
  }
  std::vector<std::size_t> assign(adj.size(), kNone);
  for (std::size_t p = 0; p < pred_count; ++p)
    if (owner[p] != kNone) assign[owner[p]] = p;
  return assign;
}

constexpr double kExhaustiveBudget = 2e5;

}  // namespace

TargetMatch match_targets(const std::vector<Component>& gt, const std::vector<Component>& pred, double radius) {
  TargetMatch result;
  result.gt_count = gt.size();
  result.pred_count = pred.size();
  const std::size_t ng = gt.size(), np = pred.size();

  // Candidate graph with gt nodes 0..ng-1 and pred nodes ng..ng+np-1.
  std::vector<std::vector<std::size_t>> edges(ng);
  const double r2 = radius * radius;
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t p = 0; p < np; ++p) {
      const double dr = gt[g].row - pred[p].row, dc = gt[g].col - pred[p].col;
      if (dr * dr + dc * dc <= r2) edges[g].push_back(p);
    }
  }

  std::vector<std::size_t> parent(ng + np);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t g = 0; g < ng; ++g)
    for (const std::size_t p : edges[g]) parent[find(g)] = find(ng + p);

  std::vector<std::uint8_t> pred_matched(np, 0);
  std::vector<std::uint8_t> done(ng, 0);
  for (std::size_t seed = 0; seed < ng; ++seed) {
    if (done[seed] || edges[seed].empty()) continue;
    const std::size_t root = find(seed);
    std::vector<std::size_t> gts, preds;
    for (std::size_t g = seed; g < ng; ++g)
      if (find(g) == root) gts.push_back(g), done[g] = 1;
    for (std::size_t p = 0; p < np; ++p)
      if (find(ng + p) == root) preds.push_back(p);

    std::vector<std::size_t> local(np, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) local[preds[i]] = i;
    std::vector<std::vector<std::size_t>> adj(gts.size());
    std::vector<std::uint64_t> sizes(preds.size());
    double branches = 1;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (const std::size_t p : edges[gts[i]]) adj[i].push_back(local[p]);
      branches *= static_cast<double>(adj[i].size() + 1);
    }
    for (std::size_t i = 0; i < preds.size(); ++i) sizes[i] = pred[preds[i]].size();

    const std::vector<std::size_t> assign = branches <= kExhaustiveBudget
                                                ? GroupSolver(adj, sizes, preds.size()).solve()
                                                : max_cardinality(adj, preds.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (assign[i] == GroupSolver::kNone) continue;
      result.pairs.emplace_back(gts[i], preds[assign[i]]);
      pred_matched[preds[assign[i]]] = 1;
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  for (std::size_t p = 0; p < np; ++p)
    if (!pred_matched[p]) result.false_pixels += pred[p].size();
  return result;
}

PdFa pd_fa(const std::vector<Component>& pred, const std::vector<Component>& gt, std::size_t image_area, double radius) {
  if (image_area == 0) throw std::invalid_argument("pd_fa: image area must be positive");
  const TargetMatch m = match_targets(gt, pred, radius);
  PdFa out;
  out.pd_defined = !gt.empty();
  out.pd = out.pd_defined ? static_cast<double>(m.detected()) / static_cast<double>(gt.size())
                          : std::numeric_limits<double>::quiet_NaN();
  out.fa = static_cast<double>(m.false_pixels) / static_cast<double>(image_area);
  return out;
}

TargetCounts& TargetCounts::operator+=(const TargetCounts& o) noexcept {
  detected += o.detected;
  gt_targets += o.gt_targets;
  false_pixels += o.false_pixels;
  pixels += o.pixels;
  return *this;
}

SampleMetrics evaluate_masks(std::string sample, const BinaryMask& pred, const BinaryMask& gt) {
  SampleMetrics m;
  m.sample = std::move(sample);
  m.pixels = confusion(pred, gt);
  const TargetMatch match = match_targets(connected_components(gt), connected_components(pred));
  m.targets = {match.detected(), match.gt_count, match.false_pixels, gt.area()};
  return m;
}

void EvalReport::add(SampleMetrics m) {
  pixels_ += m.pixels;
  targets_ += m.targets;
  rows_.push_back(std::move(m));
}

void EvalReport::merge(const EvalReport& other) {
  for (const auto& row : other.rows_) add(row);
}

double EvalReport::pd() const noexcept {
  if (!pd_defined()) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(targets_.detected) / static_cast<double>(targets_.gt_targets);
}

double EvalReport::fa() const noexcept {
  return targets_.pixels == 0 ? 0.0 : static_cast<double>(targets_.false_pixels) / static_cast<double>(targets_.pixels);
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
  return std::string(buf, res.ptr);
}

}  // namespace

void EvalReport::write_csv(std::ostream& out) const {
  out << "sample,iou,f1,pd_hit,gt_targets,false_pixels\n";
  for (const auto& r : rows_) {
    out << r.sample << ',' << fixed6(r.pixels.iou()) << ',' << fixed6(r.pixels.f1()) << ',' << r.targets.detected << ','
        << r.targets.gt_targets << ',' << r.targets.false_pixels << '\n';
  }
}

nlohmann::json EvalReport::summary() const {
  nlohmann::json j;
  j["samples"] = rows_.size();
  j["iou"] = iou();
  j["f1"] = f1();
  j["pd"] = pd_defined() ? nlohmann::json(pd()) : nlohmann::json(nullptr);
  j["pd_defined"] = pd_defined();
  j["fa"] = fa();
  j["fa_e6"] = fa_e6();
  return j;
}

}  // namespace txir
