// aveloc: synthesize data, train, evaluate, post-process, gradient-check and ablate.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aveloc/config.h"
#include "aveloc/data.h"
#include "aveloc/errors.h"
#include "aveloc/harness.h"
#include "aveloc/postproc.h"

namespace fs = std::filesystem;
using namespace aveloc;

namespace {

// A data block is either {"dir": "..."} or a synthetic generator config.
Dataset load_data_block(const Json& j, const fs::path& base) {
  if (j.is_string()) return read_dataset(base / j.get<std::string>());
  if (j.contains("dir")) return read_dataset(base / j.at("dir").get<std::string>());
  return synth_dataset(synth_config_from_json(j));
}

struct DataPair {
  Dataset train;
  Dataset val;
};

DataPair load_data(const Json& root, const fs::path& base, const std::string& train_dir,
                   const std::string& val_dir) {
  DataPair d;
  const Json data = root.value("data", Json::object());
  if (!train_dir.empty()) {
    d.train = read_dataset(train_dir);
  } else if (data.contains("train")) {
    d.train = load_data_block(data.at("train"), base);
  } else {
    throw ConfigError("no training data: pass --train or set data.train in the config");
  }
  if (!val_dir.empty()) {
    d.val = read_dataset(val_dir);
  } else if (data.contains("val")) {
    d.val = load_data_block(data.at("val"), base);
  }
  return d;
}

std::optional<std::size_t> window_opt(std::size_t w) {
  return w == 0 ? std::nullopt : std::optional<std::size_t>(w);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual event localization with multi-window temporal fusion"};
  app.require_subcommand(1);

  std::string synth_cfg, synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
  synth->add_option("--config", synth_cfg, "Synthetic generator JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string train_cfg, train_out, train_metrics, train_dir, val_dir;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", train_cfg, "Pipeline JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--metrics", train_metrics, "Per-epoch metrics CSV (default: <out>.metrics.csv)");
  train_cmd->add_option("--train", train_dir, "Training dataset directory (overrides config)");
  train_cmd->add_option("--val", val_dir, "Validation dataset directory (overrides config)");

  std::string eval_ckpt, eval_data, eval_preds;
  std::size_t eval_window = 0;
  bool eval_use_cfg_window = false;
  auto* eval_cmd = app.add_subcommand("eval", "Per-segment accuracy of a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  auto* post_opt = eval_cmd->add_option("--post-window", eval_window, "Locality filter window (0 = off)");
  eval_cmd->add_flag("--config-window", eval_use_cfg_window, "Use the checkpoint's configured window")
      ->excludes(post_opt);
  eval_cmd->add_option("--predictions", eval_preds, "Write raw predictions CSV");

  std::string pp_in, pp_out;
  std::size_t pp_window = 3;
  std::string pp_kind = "locality";
  auto* pp_cmd = app.add_subcommand("postproc", "Filter a predictions CSV");
  pp_cmd->add_option("--in", pp_in, "Input CSV")->required()->check(CLI::ExistingFile);
  pp_cmd->add_option("--out", pp_out, "Output CSV")->required();
  pp_cmd->add_option("--window", pp_window, "Window W >= 1")->required();
  pp_cmd->add_option("--filter", pp_kind, "locality or majority")
      ->check(CLI::IsMember({"locality", "majority"}));

  std::string gc_cfg;
  double gc_eps = 1e-6;
  std::size_t gc_index = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full loss");
  gc_cmd->add_option("--config", gc_cfg, "Pipeline JSON")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--eps", gc_eps, "Central difference step");
  gc_cmd->add_option("--sequence", gc_index, "Index of the synthetic sequence to use");

  std::string ab_grid, ab_out, ab_train, ab_val;
  auto* ab_cmd = app.add_subcommand("ablate", "Train and evaluate a configuration grid");
  ab_cmd->add_option("--grid", ab_grid, "Grid JSON")->required()->check(CLI::ExistingFile);
  ab_cmd->add_option("--out", ab_out, "Results CSV")->required();
  ab_cmd->add_option("--train", ab_train, "Training dataset directory (overrides grid)");
  ab_cmd->add_option("--val", ab_val, "Validation dataset directory (overrides grid)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const SynthConfig cfg = synth_config_from_json(read_json_file(synth_cfg));
      const Dataset data = synth_dataset(cfg);
      write_dataset(synth_out, data);
      std::cout << "wrote " << data.size() << " sequences to " << synth_out << "\n";
    } else if (*train_cmd) {
      const Json root = read_json_file(train_cfg);
      const PipelineConfig cfg = pipeline_config_from_json(root);
      const DataPair data = load_data(root, fs::path(train_cfg).parent_path(), train_dir, val_dir);
      const TrainResult result = train(data.train, data.val, cfg, [](const EpochMetrics& m) {
        std::printf("epoch %3zu  loss %.6f  train_acc %.4f  val_acc %.4f\n", m.epoch, m.train_loss,
                    m.train_accuracy, m.val_accuracy);
        std::fflush(stdout);
      });
      save_checkpoint(train_out, result.checkpoint);
      write_metrics_csv(train_metrics.empty() ? train_out + ".metrics.csv" : train_metrics,
                        result.metrics);
      std::cout << "saved " << train_out << "\n";
    } else if (*eval_cmd) {
      Checkpoint ckpt = load_checkpoint(eval_ckpt);
      const Dataset data = read_dataset(eval_data);
      const auto preds = predict_labels(ckpt.model, data);
      const std::size_t w = eval_use_cfg_window ? ckpt.model.config().post_window : eval_window;
      const double acc = segment_accuracy(preds, data, window_opt(w));
      if (!eval_preds.empty()) {
        std::vector<PredictionRow> rows;
        for (std::size_t i = 0; i < data.size(); ++i) {
          for (std::size_t t = 0; t < preds[i].size(); ++t) rows.push_back({data[i].id, t, preds[i][t]});
        }
        write_predictions_csv(eval_preds, rows);
      }
      std::printf("accuracy %.6f  (%zu sequences, post window %s)\n", acc, data.size(),
                  w == 0 ? "off" : std::to_string(w).c_str());
    } else if (*pp_cmd) {
      const auto rows = read_predictions_csv(pp_in);
      const FilterKind kind = pp_kind == "majority" ? FilterKind::centered_majority : FilterKind::run_locality;
      const auto filtered = filter_predictions(rows, pp_window, kind);
      write_predictions_csv(pp_out, filtered);
      std::cout << "filtered " << filtered.size() << " rows\n";
    } else if (*gc_cmd) {
      const Json root = read_json_file(gc_cfg);
      const PipelineConfig cfg = pipeline_config_from_json(root);
      SynthConfig sc;
      sc.steps = cfg.shape.steps;
      sc.num_classes = cfg.shape.num_classes;
      sc.video_width = cfg.shape.video_width;
      sc.audio_width = cfg.shape.audio_width;
      sc.regions = cfg.shape.regions;
      sc.background_class = cfg.shape.background_class;
      sc.max_span = cfg.shape.steps;
      sc.min_span = std::min<std::size_t>(sc.min_span, sc.max_span);
      sc.n_sequences = gc_index + 1;
      const Dataset data = synth_dataset(sc);
      ParamStore params = init_params(cfg);
      const AveSequence& seq = data.at(gc_index);
      const GradCheckReport report = grad_check(
          [&](Tape& tape) { return sequence_loss(tape, seq, params, cfg); }, params, gc_eps);
      for (const GradCheckEntry& e : report.tensors) {
        std::printf("%-32s max_rel_err %.3e  (analytic %+.6e, numeric %+.6e)\n", e.name.c_str(),
                    e.max_rel_error, e.analytic, e.numeric);
      }
      std::printf("loss %.10f  overall max_rel_err %.3e\n", report.loss, report.max_rel_error());
      return report.max_rel_error() < 1e-3 ? 0 : 1;
    } else if (*ab_cmd) {
      const Json root = read_json_file(ab_grid);
      const AblationGrid grid = ablation_grid_from_json(root);
      const DataPair data = load_data(root, fs::path(ab_grid).parent_path(), ab_train, ab_val);
      if (data.val.empty()) throw ConfigError("ablation needs validation data (data.val or --val)");
      const auto rows = ablate(
          grid, data.train, data.val, [](const std::string& w) { std::cerr << "warning: " << w << "\n"; },
          [](const AblationRow& r) {
            std::printf("%-12s %-28s %-11s sup=%-3s post=%-3zu acc %.4f\n", to_string(r.mode),
                        layouts_str(r.layouts).c_str(), r.shared_weights ? "shared" : "independent",
                        r.egta_supervision ? "on" : "off", r.post_window, r.val_accuracy);
            std::fflush(stdout);
          });
      write_ablation_csv(ab_out, rows);
      std::cout << "wrote " << rows.size() << " rows to " << ab_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
