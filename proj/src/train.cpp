#include "txir/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <thread>

#include "txir/rng.hpp"

namespace txir {

namespace fs = std::filesystem;

template <typename T>
Var soft_iou_loss(Graph<T>& g, Var pred, Var gt, T eps) {
  if (g.shape(pred) != g.shape(gt)) {
    throw ShapeError("soft_iou_loss: prediction " + shape_to_string(g.shape(pred)) + " vs target " +
                     shape_to_string(g.shape(gt)));
  }
  const Var inter = g.sum(g.mul(pred, gt));
  const Var union_ = g.sub(g.add(g.sum(pred), g.sum(gt)), inter);
  const Var ratio = g.div(g.add_scalar(inter, eps), g.add_scalar(union_, eps));
  return g.add_scalar(g.scale(ratio, T(-1)), T(1));
}

template Var soft_iou_loss<float>(Graph<float>&, Var, Var, float);
template Var soft_iou_loss<double>(Graph<double>&, Var, Var, double);

// ---------------------------------------------------------------------------

AdamW::AdamW(ParamList<float> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor->numel(), 0.0f);
    v_.emplace_back(p.tensor->numel(), 0.0f);
  }
}

void AdamW::step(const Gradients<float>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>* g = grads.find(*params_[i].tensor);
    if (!g) continue;
    auto w = params_[i].tensor->data();
    const auto gd = g->data();
    const double decay = params_[i].kind == ParamKind::kWeight ? 1.0 - config_.lr * config_.weight_decay : 1.0;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = gd[k];
      m[k] = static_cast<float>(config_.beta1 * m[k] + (1.0 - config_.beta1) * gk);
      v[k] = static_cast<float>(config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk);
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      w[k] = static_cast<float>(w[k] * decay - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid train config: " + what); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (batch == 0) fail("batch must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m = model;
  m.seed = seed;
  m.ablation = ablation;
  m.default_prompt_mode = default_prompt_mode;
  return m;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json model = to_json(c.model_config());
  model.erase("seed");
  model.erase("ablation");
  model.erase("default_prompt_mode");
  return {
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"batch", c.batch},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"betas", {c.beta1, c.beta2}},
      {"eps", c.eps},
      {"ablation", std::string(to_string(c.ablation))},
      {"default_prompt_mode", std::string(to_string(c.default_prompt_mode))},
      {"model", model},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") c.lr = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "batch") c.batch = v.get<std::size_t>();
    else if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "betas") {
      const auto b = v.get<std::vector<double>>();
      if (b.size() != 2) throw std::invalid_argument("train config: \"betas\" must be [beta1, beta2]");
      c.beta1 = b[0];
      c.beta2 = b[1];
    } else if (key == "eps") c.eps = v.get<double>();
    else if (key == "ablation") c.ablation = parse_ablation(v.get<std::string>());
    else if (key == "default_prompt_mode") c.default_prompt_mode = parse_default_prompt_mode(v.get<std::string>());
    else if (key == "model") {
      for (const char* owned : {"seed", "ablation", "default_prompt_mode"}) {
        if (v.contains(owned)) {
          throw std::invalid_argument(std::string("train config: set \"") + owned + "\" at the top level, not in \"model\"");
        }
      }
      c.model = model_config_from_json(v);
    } else {
      throw std::invalid_argument("unknown train config key \"" + key + "\"");
    }
  }
  c.validate();
  return c;
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(*this).dump())));
  return buf;
}

// ---------------------------------------------------------------------------

std::size_t default_threads() {
  if (const char* env = std::getenv("TXIR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class EmbeddingCache {
 public:
  EmbeddingCache(const EmbeddingProvider& provider, const ModelConfig& config) : provider_(provider), config_(config) {}

  const TextEmbedding& get(const std::string& prompt, bool default_text) {
    if (default_text) {
      if (!fallback_) fallback_ = checked(default_text_embedding(config_, provider_));
      return *fallback_;
    }
    auto it = cache_.find(prompt);
    if (it == cache_.end()) it = cache_.emplace(prompt, checked(provider_.embed(prompt))).first;
    return it->second;
  }

 private:
  TextEmbedding checked(TextEmbedding e) const {
    if (e.dim() != config_.text_dim) {
      throw ShapeError("embedding for \"" + e.prompt + "\" has dimension " + std::to_string(e.dim()) +
                       " but the model expects " + std::to_string(config_.text_dim));
    }
    return e;
  }

  const EmbeddingProvider& provider_;
  const ModelConfig& config_;
  std::map<std::string, TextEmbedding> cache_;
  std::optional<TextEmbedding> fallback_;
};

struct PreparedSample {
  std::string id;
  Tensor<float> image;  // [1,1,S,S]
  BinaryMask mask;
  const TextEmbedding* text = nullptr;
};

std::vector<PreparedSample> prepare_eval(const std::vector<LoadedSample>& samples, const ModelConfig& config,
                                         EmbeddingCache& cache, bool without_text) {
  const bool default_text = without_text || config.ablation == Ablation::kNoText;
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const CropWindow win = crop_window(s.image.height, s.image.width, config.input_size, std::nullopt);
    out.push_back({s.record->id, normalize_crop(s.image, win), crop_mask(s.mask, win),
                   &cache.get(s.record->prompt_text(), default_text)});
  }
  return out;
}

EvalReport evaluate_prepared(const ModelParams<float>& params, const std::vector<PreparedSample>& samples,
                             std::size_t threads, double threshold) {
  std::vector<SampleMetrics> results(samples.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < samples.size(); i += stride) {
      const auto& s = samples[i];
      const Tensor<float> text = embedding_batch<float>(std::span<const TextEmbedding>(s.text, 1));
      const Tensor<float> prob = predict(params, s.image, text);
      const auto mask = binarize(prob, threshold);
      results[i] = evaluate_masks(s.id, mask[0], s.mask);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads == 0 ? default_threads() : threads, samples.size()));
  if (n_threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, n_threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  EvalReport report;
  for (auto& r : results) report.add(std::move(r));
  return report;
}

std::vector<LoadedSample> load_all(const std::vector<SampleRecord>& records) {
  std::vector<LoadedSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_sample(r));
  return out;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return SplitMix64(a ^ (0x9E3779B97F4A7C15ull * (b + 1))).next(); }

double grad_norm(ParamList<float>& params, const Gradients<float>& grads) {
  double s = 0;
  for (const auto& p : params)
    if (const auto* g = grads.find(*p.tensor))
      for (const float v : g->data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace

EvalReport evaluate_loaded(const ModelParams<float>& params, const EmbeddingProvider& provider,
                           const std::vector<LoadedSample>& samples, const EvalOptions& options) {
  EmbeddingCache cache(provider, params.config);
  const auto prepared = prepare_eval(samples, params.config, cache, options.without_text);
  return evaluate_prepared(params, prepared, options.threads, options.threshold);
}

EvalReport evaluate_dataset(const ModelParams<float>& params, const EmbeddingProvider& provider,
                            const std::vector<SampleRecord>& samples, const EvalOptions& options) {
  return evaluate_loaded(params, provider, load_all(samples), options);
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log, const TrainConfig& config) {
  const std::string hash = config.hash();
  out << "epoch,loss,val_iou,val_pd,val_fa_e6,val_f1,seed,config_hash\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << shortest(e.loss) << ',' << shortest(e.val_iou) << ',' << shortest(e.val_pd) << ','
        << shortest(e.val_fa_e6) << ',' << shortest(e.val_f1) << ',' << config.seed << ',' << hash << '\n';
  }
}

TrainResult train(const TrainConfig& config, const Dataset& data, const EmbeddingProvider& provider,
                  const TrainOptions& options) {
  config.validate();
  const ModelConfig mc = config.model_config();
  const auto train_records = data.subset(Split::kTrain);
  const auto val_records = data.subset(Split::kVal);
  if (train_records.empty()) throw DatasetError("dataset has no train samples");
  const auto train_set = load_all(train_records);
  const auto val_set = load_all(val_records);

  EmbeddingCache cache(provider, mc);
  const bool default_text = mc.ablation == Ablation::kNoText;
  const auto val_prepared = prepare_eval(val_set, mc, cache, false);
  const std::size_t threads = options.threads == 0 ? default_threads() : options.threads;

  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    std::ofstream(fs::path(*options.out_dir) / "config.json") << to_json(config).dump(2) << '\n';
  }

  TrainResult result;
  ModelParams<float> params = ModelParams<float>::init(mc);
  ParamList<float> plist = params.params();
  AdamW opt(plist, config.adamw());
  const std::size_t s = mc.input_size;
  double last_norm = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 shuffle(mix(config.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch) {
      const std::size_t nb = std::min(config.batch, order.size() - b0);
      Tensor<float> images({nb, 1, s, s});
      Tensor<float> masks({nb, 1, s, s});
      std::vector<TextEmbedding> texts;
      for (std::size_t k = 0; k < nb; ++k) {
        const LoadedSample& ls = train_set[order[b0 + k]];
        const CropWindow win =
            crop_window(ls.image.height, ls.image.width, s, mix(mix(config.seed, epoch), order[b0 + k]));
        const Tensor<float> img = normalize_crop(ls.image, win);
        const BinaryMask m = crop_mask(ls.mask, win);
        std::copy(img.data().begin(), img.data().end(), images.data().begin() + k * s * s);
        for (std::size_t p = 0; p < s * s; ++p) masks.data()[k * s * s + p] = m.data[p] ? 1.0f : 0.0f;
        texts.push_back(cache.get(ls.record->prompt_text(), default_text));
      }
      const Tensor<float> text = embedding_batch<float>(texts);

      double loss_value = 0;
      try {
        Graph<float> g;
        const Var pred = model_forward(g, g.constant(images), g.constant(text), params);
        const Var loss = soft_iou_loss(g, pred, g.constant(masks));
        loss_value = g.value(loss).item();
        const Gradients<float> grads = g.backward(loss);
        last_norm = grad_norm(plist, grads);
        opt.step(grads);
      } catch (const NumericError& e) {
        char diag[160];
        std::snprintf(diag, sizeof diag, " (epoch %zu, batch %zu, lr %g, last grad norm %g)", epoch,
                      b0 / config.batch + 1, config.lr, last_norm);
        throw NumericError(std::string("training aborted: ") + e.what() + diag);
      }
      loss_sum += loss_value;
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(batches);
    if (!val_prepared.empty()) {
      const EvalReport val = evaluate_prepared(params, val_prepared, threads, kDefaultThreshold);
      entry.val_iou = val.iou();
      entry.val_pd = val.pd();
      entry.val_fa_e6 = val.fa_e6();
      entry.val_f1 = val.f1();
    }
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);

    const bool improved = entry.val_iou > result.best_val_iou;
    if (improved) {
      result.best_val_iou = entry.val_iou;
      result.best_epoch = epoch;
      result.best = params;
    }
    if (options.out_dir) {
      const fs::path dir(*options.out_dir);
      if (improved) save_checkpoint(params, (dir / "best.ckpt").string());
      std::ofstream log(dir / "train_log.csv");
      write_train_log(log, result.log, config);
      std::ofstream timing(dir / "timing.csv");
      timing << "epoch,seconds\n";
      for (const auto& e : result.log) timing << e.epoch << ',' << shortest(e.seconds) << '\n';
    }
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.last = params;
  if (options.out_dir) save_checkpoint(params, (fs::path(*options.out_dir) / "last.ckpt").string());
  return result;
}

// ---------------------------------------------------------------------------

AblationSuite ablation_suite_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("ablation suite must be a JSON object");
  AblationSuite s;
  for (const auto& [key, v] : j.items()) {
    if (key == "data") s.data = v.get<std::string>();
    else if (key == "out") s.out = v.get<std::string>();
    else if (key == "variants") {
      for (const auto& name : v.get<std::vector<std::string>>()) s.variants.push_back(parse_ablation(name));
    } else if (key == "train") s.train = train_config_from_json(v);
    else if (key == "embeddings") s.embeddings = v.get<std::string>();
    else throw std::invalid_argument("unknown ablation suite key \"" + key + "\"");
  }
  if (s.data.empty()) throw std::invalid_argument("ablation suite: \"data\" is required");
  if (s.out.empty()) throw std::invalid_argument("ablation suite: \"out\" is required");
  if (s.variants.empty()) throw std::invalid_argument("ablation suite: \"variants\" must not be empty");
  return s;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,iou,pd,fa_e6,f1,best_epoch,best_val_iou\n";
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << shortest(r.test.iou()) << ',' << shortest(r.test.pd()) << ','
        << shortest(r.test.fa_e6()) << ',' << shortest(r.test.f1()) << ',' << r.best_epoch << ','
        << shortest(r.best_val_iou) << '\n';
  }
}

std::vector<AblationRow> run_ablation(const AblationSuite& suite, const EmbeddingProvider& provider,
                                      const std::function<void(const AblationRow&)>& on_row) {
  const Dataset data = load_dataset(suite.data, suite.train.seed);
  const auto test_records = data.subset(Split::kTest);
  const auto test_set = load_all(test_records);
  fs::create_directories(suite.out);
  std::vector<AblationRow> rows;
  for (const Ablation variant : suite.variants) {
    TrainConfig cfg = suite.train;
    cfg.ablation = variant;
    TrainOptions opts;
    opts.out_dir = (fs::path(suite.out) / std::string(to_string(variant))).string();
    const TrainResult run = train(cfg, data, provider, opts);
    AblationRow row;
    row.variant = variant;
    row.test = evaluate_loaded(run.best, provider, test_set);
    row.best_epoch = run.best_epoch;
    row.best_val_iou = run.best_val_iou;
    rows.push_back(row);
    std::ofstream csv(fs::path(suite.out) / "ablation.csv");
    write_ablation_csv(csv, rows);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace txir
