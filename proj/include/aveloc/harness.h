#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aveloc/autodiff.h"
#include "aveloc/config.h"
#include "aveloc/data.h"
#include "aveloc/postproc.h"

namespace aveloc {

// Configuration plus the parameters it shapes. Vars bound from a Model point
// into its store, so a Model must outlive (and not move during) any Tape using it.
class Model {
 public:
  // Fresh Xavier-initialized parameters drawn from cfg.seed.
  explicit Model(PipelineConfig cfg);
  // Adopts `params`; throws FormatError on missing names, DimensionError on shape conflicts.
  Model(PipelineConfig cfg, ParamStore params);

  const PipelineConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  PipelineConfig cfg_;
  ParamStore params_;
};

// Parameters for `cfg` in canonical order, initialized from cfg.seed.
ParamStore init_params(const PipelineConfig& cfg);

struct ForwardResult {
  Var alpha;  // T × 1
  Var probs;  // T × C
};

// AGVA -> BiLSTM(video), BiLSTM(audio) -> F -> MWTF -> EGTA -> mask -> refine.
// Shape errors are rethrown as DimensionError prefixed with the failing stage.
ForwardResult forward(Tape& tape, const AveSequence& seq, ParamStore& params,
                      const PipelineConfig& cfg);
ForwardResult forward(Tape& tape, const AveSequence& seq, Model& model);

// λ1·BCE(α, E) + λ2·CE(y^p, y) for one sequence.
Var sequence_loss(Tape& tape, const AveSequence& seq, ParamStore& params,
                  const PipelineConfig& cfg);

struct Prediction {
  Tensor alpha;
  Tensor probs;
  std::vector<std::size_t> labels;  // argmax per segment, first max wins
};
Prediction predict(Model& model, const AveSequence& seq);

std::vector<std::vector<std::size_t>> predict_labels(Model& model, const Dataset& data);

// Correct segments / total segments; `post_window` applies locality_filter first.
double segment_accuracy(std::span<const std::vector<std::size_t>> predictions,
                        const Dataset& data, std::optional<std::size_t> post_window);
double evaluate(Model& model, const Dataset& data, std::optional<std::size_t> post_window);

class Adam {
 public:
  Adam(const ParamStore& params, const OptimizerConfig& cfg);
  // θ -= lr · m̂ / (√v̂ + ε) using the gradients currently in `params`.
  void step(ParamStore& params);
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainingState {
  std::size_t epochs_completed = 0;
  std::vector<double> loss_history;  // mean train loss per epoch
};

struct Checkpoint {
  Model model;
  TrainingState state;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // running, over the epoch's own forward passes
  double val_accuracy = 0.0;    // post-filter off
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Adam over shuffled mini-batches (gradients averaged within a batch).
// Throws TrainingError naming the step when a loss or activation goes non-finite.
TrainResult train(const Dataset& train_data, const Dataset& val_data, const PipelineConfig& cfg,
                  const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics);

// "AVEC", u32 version, u32 JSON length + JSON (config, training state), u32
// tensor count, then per tensor: u16 name length, name, u8 ndims, u32 dims,
// float64 payload. Little-endian throughout.
constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// With `expected`, a checkpoint of a different architecture raises ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<PipelineConfig>& expected = std::nullopt);

struct AblationGrid {
  PipelineConfig base;
  std::vector<AttentionMode> modes;
  std::vector<std::vector<WindowLayout>> layouts;
  std::vector<bool> shared_weights;
  std::vector<bool> egta_supervision;  // false trains with λ1 = 0
  std::vector<std::vector<WindowLayout>> refiner_layouts;
  std::vector<std::size_t> post_windows;  // 0 = off
};

// Axes left empty in JSON default to the base config's single value.
AblationGrid ablation_grid_from_json(const Json& j);

struct AblationRow {
  AttentionMode mode = AttentionMode::multi_domain;
  std::vector<WindowLayout> layouts;
  bool shared_weights = true;
  bool egta_supervision = true;
  std::vector<WindowLayout> refiner_layouts;
  std::size_t post_window = 0;
  double val_accuracy = 0.0;
  double final_train_loss = 0.0;
};

using WarningFn = std::function<void(const std::string&)>;

// Trains once per (mode, layouts, shared, supervision, refiner) with the base
// seed and scores every post window. Combinations whose config fails
// validation are skipped through `warn`.
std::vector<AblationRow> ablate(const AblationGrid& grid, const Dataset& train_data,
                                const Dataset& val_data, const WarningFn& warn = {},
                                const std::function<void(const AblationRow&)>& on_row = {});

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace aveloc
