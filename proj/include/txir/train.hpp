#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "txir/dataset.hpp"
#include "txir/embedding.hpp"
#include "txir/metrics.hpp"
#include "txir/network.hpp"

namespace txir {

/// 1 - (I + eps) / (P + G - I + eps) with I = sum(pred * gt), P = sum(pred),
/// G = sum(gt), every sum taken over the whole batch. Result is [1].
template <typename T>
Var soft_iou_loss(Graph<T>& g, Var pred, Var gt, T eps = T(1e-6));

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled weight decay: p *= 1 - lr * wd (weights only), then the
/// bias-corrected Adam step. Parameters without a gradient are left alone.
class AdamW {
 public:
  AdamW(ParamList<float> params, AdamWConfig config);

  void step(const Gradients<float>& grads);
  std::uint64_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }

 private:
  ParamList<float> params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  std::size_t batch = 4;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Ablation ablation = Ablation::kFull;
  DefaultPromptMode default_prompt_mode = DefaultPromptMode::kGenericPrompt;
  /// Architecture; its seed, ablation and prompt mode are overwritten from
  /// the fields above by model_config().
  ModelConfig model;

  void validate() const;
  ModelConfig model_config() const;
  AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
  /// FNV-1a of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

/// Keys mirror the struct fields; "betas" is [beta1, beta2] and "model" holds
/// ModelConfig keys. Unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;
  double val_iou = 0;
  double val_pd = 0;
  double val_fa_e6 = 0;
  double val_f1 = 0;
  double seconds = 0;  // wall time, kept out of the deterministic log
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_iou = -1;
  ModelParams<float> best;
  ModelParams<float> last;
};

struct TrainOptions {
  /// When set, writes train_log.csv, timing.csv, best.ckpt, last.ckpt, config.json.
  std::optional<std::string> out_dir;
  std::function<void(const EpochLog&)> on_epoch;
  std::size_t threads = 0;  // validation workers; 0 = default_threads()
};

/// Trains on the train split, validates each epoch on the val split, keeps
/// the best-val-IoU parameters (earliest epoch wins ties).
TrainResult train(const TrainConfig& config, const Dataset& data, const EmbeddingProvider& provider,
                  const TrainOptions& options = {});

/// Deterministic CSV row format: epoch,loss,val_iou,val_pd,val_fa_e6,val_f1,seed,config_hash
void write_train_log(std::ostream& out, const std::vector<EpochLog>& log, const TrainConfig& config);

struct EvalOptions {
  std::size_t threads = 0;     // 0 = default_threads()
  bool without_text = false;   // feed the default embedding to every sample
  double threshold = kDefaultThreshold;
};

/// TXIR_THREADS when set and positive, else hardware concurrency.
std::size_t default_threads();

/// Centre-cropped forward per sample with the sample's prompt embedding.
/// Models trained as no_text always receive the default embedding.
EvalReport evaluate_dataset(const ModelParams<float>& params, const EmbeddingProvider& provider,
                            const std::vector<SampleRecord>& samples, const EvalOptions& options = {});
EvalReport evaluate_loaded(const ModelParams<float>& params, const EmbeddingProvider& provider,
                           const std::vector<LoadedSample>& samples, const EvalOptions& options = {});

struct AblationSuite {
  std::string data;
  std::string out;
  std::vector<Ablation> variants;
  TrainConfig train;
  std::optional<std::string> embeddings;  // TXEMB path; toy embedder otherwise
};

/// {"data", "out", "variants": [names], "train": {...}, "embeddings"?}
AblationSuite ablation_suite_from_json(const nlohmann::json& j);

struct AblationRow {
  Ablation variant = Ablation::kFull;
  EvalReport test;
  std::size_t best_epoch = 0;
  double best_val_iou = 0;
};

/// Trains every variant with the same seed and data and reports test metrics
/// of each best checkpoint. Writes <out>/ablation.csv and one run directory
/// per variant.
std::vector<AblationRow> run_ablation(const AblationSuite& suite, const EmbeddingProvider& provider,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// Header "variant,iou,pd,fa_e6,f1,best_epoch,best_val_iou".
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace txir
