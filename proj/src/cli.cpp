#include "txir/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "txir/battery.hpp"
#include "txir/dataset.hpp"
#include "txir/embedding.hpp"
#include "txir/network.hpp"
#include "txir/pgm.hpp"
#include "txir/prompt.hpp"
#include "txir/synth.hpp"
#include "txir/train.hpp"

namespace txir {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << v;
  return s.str();
}

struct ProviderFlags {
  std::string embeddings;
  bool toy = false;

  void add(CLI::App* cmd) {
    auto* e = cmd->add_option("--embeddings", embeddings, "TXEMB file with prompt embeddings");
    auto* t = cmd->add_flag("--toy", toy, "Use the hashed bag-of-words embedder (default)");
    e->excludes(t);
  }

  std::unique_ptr<EmbeddingProvider> make(std::size_t dim) const {
    if (embeddings.empty()) return std::make_unique<ToyEmbedder>(dim);
    EmbeddingTable table = EmbeddingTable::load(embeddings);
    if (table.dim() != dim) {
      throw UsageError(embeddings + " holds " + std::to_string(table.dim()) + "-d vectors, the model expects " +
                       std::to_string(dim));
    }
    return std::make_unique<FileEmbedder>(std::move(table));
  }
};

void print_report(std::ostream& out, const EvalReport& r) {
  out << "samples=" << r.rows().size() << '\n'
      << "iou=" << num(r.iou()) << '\n'
      << "f1=" << num(r.f1()) << '\n'
      << "pd=" << num(r.pd()) << '\n'
      << "pd_defined=" << (r.pd_defined() ? "true" : "false") << '\n'
      << "fa_e6=" << num(r.fa_e6()) << '\n';
}

std::string checked_prompt(const std::string& text) {
  const std::string norm = normalize_whitespace(text);
  if (norm != kGenericPrompt) parse_prompt(norm);
  return norm;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-guided infrared small target detection toolkit", "txir"};
  app.require_subcommand(1, 1);

  // synth
  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", synth_spec, "SynthSpec JSON")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  std::string train_cfg, train_data, train_out;
  std::optional<std::size_t> train_epochs;
  ProviderFlags train_provider;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train_cfg, "TrainConfig JSON")->required();
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Run directory")->required();
  train_cmd->add_option("--epochs", train_epochs, "Override the epoch count");
  train_provider.add(train_cmd);

  // eval
  std::string eval_ckpt, eval_data, eval_split = "test", eval_csv, eval_summary;
  bool eval_without_text = false;
  ProviderFlags eval_provider;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--csv", eval_csv, "Per-sample CSV output");
  eval->add_option("--summary", eval_summary, "Summary JSON output");
  eval->add_flag("--without-text", eval_without_text, "Feed the default text embedding to every sample");
  eval_provider.add(eval);

  // predict
  std::string pred_ckpt, pred_image, pred_prompt, pred_out;
  ProviderFlags pred_provider;
  auto* predict_cmd = app.add_subcommand("predict", "Write a probability map for one image");
  predict_cmd->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--image", pred_image, "Input PGM")->required();
  predict_cmd->add_option("--prompt", pred_prompt, "Text prompt")->required();
  predict_cmd->add_option("--out", pred_out, "Output PGM (probability x 255)")->required();
  pred_provider.add(predict_cmd);

  // ablate
  std::string suite_path;
  ProviderFlags ablate_provider;
  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  ablate->add_option("--suite", suite_path, "Ablation suite JSON")->required();
  ablate_provider.add(ablate);

  // gradcheck
  BatteryOptions battery;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient battery");
  gradcheck_cmd->add_option("--seed", battery.seed, "Battery seed");
  gradcheck_cmd->add_option("--filter", battery.filter, "Only checks whose name contains this");
  gradcheck_cmd->add_option("--op-trials", battery.op_trials, "Random shapes per op")->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--block-trials", battery.block_trials, "Random configs per block")->check(CLI::PositiveNumber);

  // embed
  std::string embed_prompts, embed_out;
  bool embed_toy = false;
  std::size_t embed_dim = kDefaultTextDim;
  std::uint64_t embed_seed = 0;
  auto* embed = app.add_subcommand("embed", "Write a TXEMB file for a prompt list");
  embed->add_option("--prompts", embed_prompts, "Text file, one prompt per line")->required();
  embed->add_flag("--toy", embed_toy, "Use the hashed bag-of-words embedder")->required();
  embed->add_option("--out", embed_out, "Output TXEMB file")->required();
  embed->add_option("--dim", embed_dim, "Embedding dimension");
  embed->add_option("--seed", embed_seed, "Embedder seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitValidation;
  }

  try {
    if (synth->parsed()) {
      const SynthSpec spec = synth_spec_from_json(read_json(synth_spec));
      const std::size_t n = generate_synthetic(spec, synth_out);
      out << "samples=" << n << "\nout=" << synth_out << '\n';
    } else if (train_cmd->parsed()) {
      TrainConfig cfg = train_config_from_json(read_json(train_cfg));
      if (train_epochs) {
        cfg.epochs = *train_epochs;
        cfg.validate();
      }
      const auto provider = train_provider.make(cfg.model.text_dim);
      const Dataset data = load_dataset(train_data, cfg.seed);
      TrainOptions opts;
      opts.out_dir = train_out;
      opts.on_epoch = [&](const EpochLog& e) {
        out << "epoch=" << e.epoch << " loss=" << num(e.loss) << " val_iou=" << num(e.val_iou)
            << " val_pd=" << num(e.val_pd) << " val_fa_e6=" << num(e.val_fa_e6) << " val_f1=" << num(e.val_f1) << '\n';
        out.flush();
      };
      const TrainResult r = train(cfg, data, *provider, opts);
      out << "best_epoch=" << r.best_epoch << "\nbest_val_iou=" << num(r.best_val_iou)
          << "\ncheckpoint=" << (fs::path(train_out) / "best.ckpt").string() << "\nconfig_hash=" << cfg.hash() << '\n';
    } else if (eval->parsed()) {
      const ModelParams<float> params = load_checkpoint(eval_ckpt);
      const auto provider = eval_provider.make(params.config.text_dim);
      const Dataset data = load_dataset(eval_data, params.config.seed);
      EvalOptions opts;
      opts.without_text = eval_without_text;
      const EvalReport report = evaluate_dataset(params, *provider, data.subset(parse_split(eval_split)), opts);
      print_report(out, report);
      if (!eval_csv.empty()) {
        std::ofstream csv(eval_csv);
        report.write_csv(csv);
      }
      if (!eval_summary.empty()) std::ofstream(eval_summary) << report.summary().dump(2) << '\n';
    } else if (predict_cmd->parsed()) {
      const ModelParams<float> params = load_checkpoint(pred_ckpt);
      const auto provider = pred_provider.make(params.config.text_dim);
      const GrayImage img = load_pgm(pred_image);
      if (img.height % 8 != 0 || img.width % 8 != 0) {
        throw UsageError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         "; both sides must be multiples of 8");
      }
      const std::string prompt = checked_prompt(pred_prompt);
      const TextEmbedding e = params.config.ablation == Ablation::kNoText
                                  ? default_text_embedding(params.config, *provider)
                                  : provider->embed(prompt);
      Tensor<float> input({1, 1, img.height, img.width});
      for (std::size_t i = 0; i < img.pixels.size(); ++i)
        input[i] = static_cast<float>(img.pixels[i]) / static_cast<float>(img.maxval);
      const Tensor<float> prob = predict(params, input, embedding_batch<float>(std::span<const TextEmbedding>(&e, 1)));
      GrayImage map{img.height, img.width, 255, std::vector<std::uint8_t>(img.pixels.size())};
      for (std::size_t i = 0; i < map.pixels.size(); ++i)
        map.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(prob[i], 0.0f, 1.0f) * 255.0f));
      save_pgm(pred_out, map);
      out << "out=" << pred_out << "\nheight=" << map.height << "\nwidth=" << map.width << '\n';
    } else if (ablate->parsed()) {
      const AblationSuite suite = ablation_suite_from_json(read_json(suite_path));
      ProviderFlags flags = ablate_provider;
      if (flags.embeddings.empty() && !flags.toy && suite.embeddings) flags.embeddings = *suite.embeddings;
      const auto provider = flags.make(suite.train.model.text_dim);
      run_ablation(suite, *provider, [&](const AblationRow& r) {
        out << "variant=" << to_string(r.variant) << " iou=" << num(r.test.iou()) << " pd=" << num(r.test.pd())
            << " fa_e6=" << num(r.test.fa_e6()) << " f1=" << num(r.test.f1()) << " best_epoch=" << r.best_epoch << '\n';
        out.flush();
      });
      out << "csv=" << (fs::path(suite.out) / "ablation.csv").string() << '\n';
    } else if (gradcheck_cmd->parsed()) {
      std::size_t failed = 0;
      battery.on_result = [&](const CheckOutcome& o) {
        if (!o.passed()) ++failed;
        out << "check=" << o.name << " max_rel_error=" << o.max_rel_error << " tolerance=" << o.tolerance
            << " trials=" << o.trials << " entries=" << o.entries << " seconds=" << num(o.seconds)
            << " status=" << (o.passed() ? "pass" : "FAIL") << '\n';
        out.flush();
      };
      const auto results = run_gradcheck_battery(battery);
      if (results.empty()) throw UsageError("no gradient checks match filter \"" + battery.filter + "\"");
      out << "checks=" << results.size() << "\nfailed=" << failed << '\n';
      return failed == 0 ? kExitOk : kExitRuntime;
    } else if (embed->parsed()) {
      std::ifstream in(embed_prompts);
      if (!in) throw UsageError("cannot open " + embed_prompts);
      EmbeddingTable table(embed_dim);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (normalize_whitespace(line).empty()) continue;
        table.insert(toy_embed(line, embed_dim, embed_seed));
      }
      if (table.size() == 0) throw UsageError(embed_prompts + " contains no prompts");
      table.save(embed_out);
      out << "prompts=" << table.size() << "\ndim=" << embed_dim << "\nout=" << embed_out << '\n';
    }
    return kExitOk;
  } catch (const std::invalid_argument& e) {  // config, shape, prompt and usage errors
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {  // unknown prompt
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace txir
