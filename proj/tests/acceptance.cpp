// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 100).
//
//   acceptance [--only <substring>]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "test_util.hpp"
#include "txir/battery.hpp"
#include "txir/embedding.hpp"
#include "txir/metrics.hpp"
#include "txir/network.hpp"
#include "txir/prompt.hpp"
#include "txir/synth.hpp"
#include "txir/train.hpp"

using namespace txir;
namespace fs = std::filesystem;
using txir::testing::TempDir;

namespace {

// Pinned tolerances and bounds.
constexpr double kGradTol = 1e-4;
constexpr double kBatteryBudgetSeconds = 120.0;
constexpr std::size_t kGateTrials = 1000;
constexpr std::size_t kMetricTrials = 600;
constexpr double kMinTestIou = 0.50;
constexpr double kTrainBudgetSeconds = 15 * 60.0;
constexpr std::size_t kLossCheckEpoch = 30;
constexpr double kMaxLossAtCheckEpoch = 0.5;
// Frozen from the first validated run of this exact configuration.
constexpr double kFrozenTestIou = 0.7843;
constexpr double kFrozenTestIouTolerance = 0.03;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.pass) ++g_failures;
}

// --- 1. gradient battery ---------------------------------------------------

Outcome gradient_battery() {
  const auto start = Clock::now();
  const auto results = run_gradcheck_battery({});
  const double secs = seconds_since(start);
  double worst = 0;
  std::string worst_name, failed;
  for (const auto& r : results) {
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
    if (!(r.max_rel_error < std::min(kGradTol, r.tolerance))) failed += " " + r.name;
  }
  bool covered = true;
  for (const char* need : {"block.tgfa", "block.dpm", "block.channel_attention", "block.tgsi", "network.full_model_8x8"})
    covered = covered && std::any_of(results.begin(), results.end(), [&](const CheckOutcome& r) { return r.name == need; });
  const bool pass = failed.empty() && covered && secs < kBatteryBudgetSeconds;
  return {pass, std::to_string(results.size()) + " checks, worst " + worst_name + " rel " + fmt(worst * 1e6, 3) +
                    "e-6 (tol 1e-4), " + fmt(secs, 1) + " s (budget 120 s)" + (failed.empty() ? "" : "; failing:" + failed) +
                    (covered ? "" : "; missing block coverage")};
}

// --- 2. TGSI identity and gate bounds ---------------------------------------

template <typename T>
Tensor<T> rand_tensor(Shape s, SplitMix64& rng, double lo = -2, double hi = 2) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

Outcome tgsi_identity_and_gates() {
  SplitMix64 rng(2024);
  std::size_t identity_bad = 0, dpm_bad = 0, ca_bad = 0;
  for (std::size_t trial = 0; trial < kGateTrials; ++trial) {
    const std::size_t c = 4 * (1 + rng.below(4)), h = 2 + rng.below(6), w = 2 + rng.below(6), n = 1 + rng.below(2);
    const BlockDims dims{32, 8, 2 * (1 + rng.below(2)), 4};
    // TGSI with zero FFN parameters is the identity, bit for bit.
    auto tp = make_tgsi_params<float>(c, dims, TgsiFusion::kAffine, rng);
    for (auto* t : {&tp.ffn.first.weight, &tp.ffn.first.bias, &tp.ffn.second.weight, &tp.ffn.second.bias})
      std::fill(t->data().begin(), t->data().end(), 0.0f);
    const auto m = rand_tensor<float>({n, c, h, w}, rng, -50, 50);
    std::vector<TextEmbedding> te(n, toy_embed("prompt " + std::to_string(trial), 32));
    Graph<float> g(false);
    if (!(g.value(tgsi_forward(g, g.constant(m), g.constant(embedding_batch<float>(te)), tp)) == m)) ++identity_bad;

    // DPM: recompute F_ms on the same graph and bound the gated output.
    auto dp = make_dpm_params<double>(c, dims.mu, rng);
    for (auto* b : {&dp.pw1.bias, &dp.pw2.bias})
      for (auto& v : b->data()) v = rng.uniform(-1, 1);
    const auto x = rand_tensor<double>({n, c, h, w}, rng);
    Graph<double> gd(false);
    const Var vx = gd.constant(x);
    const Var out = dpm_forward(gd, vx, dp);
    const auto [a, b] = gd.split(conv(gd, vx, dp.expand));
    const Var br[] = {gd.dwconv2d(a, gd.constant(dp.dw3)), gd.dwconv2d(b, gd.constant(dp.dw5))};
    const auto& ms = gd.value(conv(gd, gd.concat(br), dp.fuse));
    const auto& ov = gd.value(out);
    for (std::size_t i = 0; i < ms.numel(); ++i)
      if (std::abs(ov[i]) > std::abs(ms[i])) {
        ++dpm_bad;
        break;
      }

    auto cp = make_ca_params<double>(c, 4, rng);
    for (auto* bb : {&cp.fc1.bias, &cp.fc2.bias})
      for (auto& v : bb->data()) v = rng.uniform(-1, 1);
    const auto& cv = gd.value(channel_attention(gd, vx, cp));
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (std::abs(cv[i]) > std::abs(x[i])) {
        ++ca_bad;
        break;
      }
  }
  const bool pass = identity_bad == 0 && dpm_bad == 0 && ca_bad == 0;
  return {pass, std::to_string(kGateTrials) + " random inputs; identity violations " + std::to_string(identity_bad) +
                    ", DPM bound violations " + std::to_string(dpm_bad) + ", CA bound violations " + std::to_string(ca_bad)};
}

// --- 3. metric oracles ------------------------------------------------------

void stamp(BinaryMask& m, long r, long c, int shape) {
  for (long dr = -1; dr <= 1; ++dr)
    for (long dc = -1; dc <= 1; ++dc) {
      if (shape == 0 && (dr || dc)) continue;
      if (shape == 1 && dr && dc) continue;
      const long rr = r + dr, cc = c + dc;
      if (rr >= 0 && cc >= 0 && rr < static_cast<long>(m.height) && cc < static_cast<long>(m.width))
        m.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)) = 1;
    }
}

std::pair<std::size_t, std::uint64_t> brute_match(const std::vector<Component>& gt, const std::vector<Component>& pred) {
  std::pair<std::size_t, std::uint64_t> best{0, 0};
  std::vector<bool> used(pred.size(), false);
  std::function<void(std::size_t, std::size_t, std::uint64_t)> rec = [&](std::size_t i, std::size_t k, std::uint64_t px) {
    if (i == gt.size()) {
      best = std::max(best, std::make_pair(k, px));
      return;
    }
    rec(i + 1, k, px);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (used[j] || std::hypot(gt[i].row - pred[j].row, gt[i].col - pred[j].col) > kMatchRadius) continue;
      used[j] = true;
      rec(i + 1, k + 1, px + pred[j].size());
      used[j] = false;
    }
  };
  rec(0, 0, 0);
  return best;
}

Outcome metric_oracles() {
  SplitMix64 rng(77);
  std::size_t trials = 0, mismatches = 0;
  while (trials < kMetricTrials) {
    const std::size_t size = 16 + rng.below(24);
    BinaryMask gt(size, size), pred(size, size);
    const auto ng = rng.between(0, 5), np = rng.between(0, 5);
    for (std::int64_t k = 0; k < ng; ++k)
      stamp(gt, static_cast<long>(rng.below(size)), static_cast<long>(rng.below(size)), static_cast<int>(rng.below(3)));
    for (std::int64_t k = 0; k < np; ++k)
      stamp(pred, static_cast<long>(rng.below(size)), static_cast<long>(rng.below(size)), static_cast<int>(rng.below(3)));
    const auto gc = connected_components(gt), pc = connected_components(pred);
    if (gc.size() > 5 || pc.size() > 5) continue;
    ++trials;
    // pixel oracle by direct count
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.area(); ++i) {
      tp += pred.data[i] && gt.data[i];
      fp += pred.data[i] && !gt.data[i];
      fn += !pred.data[i] && gt.data[i];
    }
    const double iou = tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    const double f1 = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    const auto s = pixel_scores(pred, gt);
    const auto [count, px] = brute_match(gc, pc);
    std::uint64_t total = 0;
    for (const auto& c : pc) total += c.size();
    const auto r = pd_fa(pc, gc, gt.area());
    const double pd = gc.empty() ? std::nan("") : static_cast<double>(count) / static_cast<double>(gc.size());
    const double fa = static_cast<double>(total - px) / static_cast<double>(gt.area());
    const bool pd_ok = gc.empty() ? (!r.pd_defined && std::isnan(r.pd)) : r.pd == pd;
    if (s.iou != iou || s.f1 != f1 || !pd_ok || r.fa != fa) ++mismatches;
  }

  // hand cases
  bool hand = true;
  BinaryMask p2(2, 2), g2(2, 2);
  p2.at(0, 0) = p2.at(0, 1) = 1;
  g2.at(0, 0) = g2.at(1, 0) = 1;
  const auto cc = confusion(p2, g2);
  hand = hand && cc.iou() == 1.0 / 3.0 && cc.f1() == 0.5;
  BinaryMask gt(16, 16), pred(16, 16);
  stamp(gt, 3, 3, 2);
  stamp(gt, 12, 12, 2);
  stamp(pred, 3, 3, 2);
  hand = hand && pd_fa(connected_components(pred), connected_components(gt), 256).pd == 0.5;
  BinaryMask big(256, 256), none(256, 256);
  big.at(10, 10) = big.at(10, 11) = big.at(11, 10) = 1;
  hand = hand && pd_fa(connected_components(big), connected_components(none), 65536).fa == 3.0 / 65536.0;

  return {mismatches == 0 && hand, std::to_string(trials) + " randomized instances (<= 5 components), " +
                                       std::to_string(mismatches) + " mismatches vs brute force; hand cases " +
                                       (hand ? "exact" : "WRONG")};
}

// --- 4-5. training experiments --------------------------------------------

struct Experiment {
  TempDir dir{"accept"};
  Dataset data;
  std::vector<SampleRecord> test_records;
  std::vector<LoadedSample> test_set;
  TrainConfig config;
  ToyEmbedder toy{kDefaultTextDim};
  SynthSpec spec;
};

SynthSpec experiment_spec() {
  SynthSpec s;
  s.count = 300;
  s.size = 64;
  s.seed = 7;
  s.splits = {{200, 50, 50}};
  return s;
}

TrainConfig experiment_config() {
  TrainConfig c;
  c.lr = 1e-4;
  c.epochs = 50;
  c.batch = 4;
  c.seed = 1;
  c.model.base_channels = 8;
  return c;
}

struct VariantRun {
  TrainResult result;
  EvalReport test;
  double seconds = 0;
};

VariantRun run_variant(Experiment& ex, Ablation a) {
  TrainConfig c = ex.config;
  c.ablation = a;
  VariantRun v;
  TrainOptions o;
  o.on_epoch = [&](const EpochLog& e) {
    std::cerr << "  [" << to_string(a) << "] epoch " << e.epoch << " loss " << fmt(e.loss) << " val_iou " << fmt(e.val_iou)
              << '\n';
  };
  const auto start = Clock::now();
  v.result = train(c, ex.data, ex.toy, o);
  v.seconds = seconds_since(start);
  v.test = evaluate_loaded(v.result.best, ex.toy, ex.test_set);
  return v;
}

Outcome end_to_end(const VariantRun& full, const TrainConfig& cfg) {
  const double iou = full.test.iou();
  const auto& log = full.result.log;
  const double loss30 = log.size() >= kLossCheckEpoch ? log[kLossCheckEpoch - 1].loss : NAN;
  const bool frozen_ok = kFrozenTestIou <= 0 || std::abs(iou - kFrozenTestIou) <= kFrozenTestIouTolerance;
  const bool pass = iou >= kMinTestIou && full.seconds < kTrainBudgetSeconds && loss30 < kMaxLossAtCheckEpoch && frozen_ok;
  return {pass, "200/50/50 at 64x64, " + std::to_string(cfg.epochs) + " epochs: test IoU " + fmt(iou) + " (>= 0.50; frozen " +
                    fmt(kFrozenTestIou) + " +- " + fmt(kFrozenTestIouTolerance, 2) + "), Pd " + fmt(full.test.pd()) +
                    ", Fa " + fmt(full.test.fa_e6(), 2) + "e-6, train loss at epoch 30 " + fmt(loss30) +
                    " (< 0.5), training " + fmt(full.seconds, 0) + " s (budget 900 s)"};
}

Outcome text_ablation(const VariantRun& full, const std::vector<std::pair<Ablation, VariantRun>>& others) {
  bool pass = true;
  std::string detail = "test IoU full " + fmt(full.test.iou());
  for (const auto& [a, v] : others) {
    const bool below = v.test.iou() < full.test.iou();
    pass = pass && below;
    detail += std::string(", ") + std::string(to_string(a)) + " " + fmt(v.test.iou()) + (below ? "" : " (NOT below full)");
  }
  return {pass, detail};
}

// --- 6. determinism ---------------------------------------------------------

Outcome determinism(Experiment& ex) {
  TempDir a("det_a"), b("det_b");
  generate_synthetic(ex.spec, a.str());
  generate_synthetic(ex.spec, b.str());
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path other = b.path() / fs::relative(entry.path(), a.path());
    if (txir::testing::slurp(entry.path().string()) != txir::testing::slurp(other.string())) ++differ;
  }
  TrainConfig c = ex.config;
  c.epochs = 3;
  TrainOptions o1, o2;
  o1.out_dir = a.str("run");
  o2.out_dir = b.str("run");
  train(c, ex.data, ex.toy, o1);
  train(c, ex.data, ex.toy, o2);
  const std::string l1 = txir::testing::slurp(a.str("run/train_log.csv")), l2 = txir::testing::slurp(b.str("run/train_log.csv"));
  const bool logs_equal = !l1.empty() && l1 == l2;
  return {differ == 0 && files > 0 && logs_equal,
          std::to_string(files) + " generated files, " + std::to_string(differ) + " differ; two 3-epoch runs: loss logs " +
              (logs_equal ? "identical" : "DIFFER")};
}

// --- 7. round trips ---------------------------------------------------------

Outcome round_trips(const ModelParams<float>& model, Experiment& ex) {
  SplitMix64 rng(5);
  const char* words[] = {"sky", "ground", "sea", "and", "dark", "ocean-sky", "urban"};
  std::size_t prompt_bad = 0;
  for (int i = 0; i < 500; ++i) {
    auto pick = [&] {
      std::string s;
      for (std::int64_t k = 0, n = rng.between(1, 4); k < n; ++k) s += (k ? " " : "") + std::string(words[rng.below(7)]);
      return s;
    };
    const PromptSpec p{pick(), pick()};
    if (!(parse_prompt(render_prompt(p)) == p)) ++prompt_bad;
  }

  EmbeddingTable table(kDefaultTextDim);
  table.insert(toy_embed(render_prompt({"sky", std::string(kSyntheticScene)})));
  table.insert(toy_embed(render_prompt({"ground", std::string(kSyntheticScene)})));
  std::stringstream s1;
  table.write(s1);
  std::stringstream in(s1.str());
  const auto back = EmbeddingTable::parse(in);
  bool emb_ok = back.size() == table.size();
  for (const auto& p : table.prompts()) emb_ok = emb_ok && back.lookup(p).vector == table.lookup(p).vector;

  const std::string a = ex.dir.str("rt_a.ckpt"), b = ex.dir.str("rt_b.ckpt");
  save_checkpoint(model, a);
  const auto loaded = load_checkpoint(a, &model.config);
  save_checkpoint(loaded, b);
  const bool bytes_ok = txir::testing::slurp(a) == txir::testing::slurp(b);
  const auto& sample = ex.test_set.front();
  Tensor<float> img({1, 1, sample.image.height, sample.image.width});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(sample.image.pixels[i]) / 255.0f;
  const TextEmbedding e = ex.toy.embed(sample.record->prompt_text());
  const auto text = embedding_batch<float>(std::span<const TextEmbedding>(&e, 1));
  const bool fwd_ok = predict(model, img, text) == predict(loaded, img, text);

  return {prompt_bad == 0 && emb_ok && bytes_ok && fwd_ok,
          "prompt render/parse 500 random specs, " + std::to_string(prompt_bad) + " failures; TXEMB write/read " +
              (emb_ok ? "bit-exact" : "MISMATCH") + "; checkpoint save/load/save " + (bytes_ok ? "byte-identical" : "DIFFERS") +
              ", forward " + (fwd_ok ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only = argv[i + 1];
  auto want = [&](const std::string& name) { return only.empty() || name.find(only) != std::string::npos; };

  try {
    if (want("gradient")) report("gradient-battery", gradient_battery());
    if (want("tgsi")) report("tgsi-identity-and-gate-bounds", tgsi_identity_and_gates());
    if (want("metric")) report("metric-oracles", metric_oracles());

    const bool need_training = want("end-to-end") || want("ablation") || want("determinism") || want("round-trips");
    if (need_training) {
      Experiment ex;
      ex.spec = experiment_spec();
      ex.config = experiment_config();
      generate_synthetic(ex.spec, ex.dir.str("data"));
      ex.data = load_dataset(ex.dir.str("data"));
      ex.test_records = ex.data.subset(Split::kTest);
      for (const auto& r : ex.test_records) ex.test_set.push_back(load_sample(r));
      for (std::size_t i = 0; i < ex.test_set.size(); ++i) ex.test_set[i].record = &ex.test_records[i];

      std::optional<VariantRun> full;
      if (want("end-to-end") || want("ablation") || want("round-trips")) full = run_variant(ex, Ablation::kFull);
      if (want("end-to-end")) report("end-to-end-synthetic", end_to_end(*full, ex.config));
      if (want("ablation")) {
        std::vector<std::pair<Ablation, VariantRun>> others;
        for (Ablation a : {Ablation::kNoText, Ablation::kNoAlpha, Ablation::kNoBeta, Ablation::kConcatFusion})
          others.emplace_back(a, run_variant(ex, a));
        report("text-ablation-ordering", text_ablation(*full, others));
      }
      if (want("determinism")) report("determinism", determinism(ex));
      if (want("round-trips")) report("round-trips", round_trips(full->result.best, ex));
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance-harness: " << e.what() << std::endl;
    ++g_failures;
  }
  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return std::min(g_failures, 100);
}
