#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "aveloc/data.h"
#include "aveloc/losses.h"
#include "aveloc/mwtf.h"
#include "json.hpp"

namespace aveloc {

struct ShapeConfig {
  std::size_t steps = 10;
  std::size_t num_classes = 6;
  std::size_t video_width = 64;
  std::size_t audio_width = 64;
  std::size_t regions = 4;
  std::size_t background_class = 0;

  bool operator==(const ShapeConfig&) const = default;
};

struct ModelWidths {
  std::size_t lstm_hidden = 16;  // H of the video/audio encoders; F width is 4H
  std::size_t agva_hidden = 32;
  std::size_t egta_width = 32;        // d'
  std::size_t classifier_width = 32;  // d''

  bool operator==(const ModelWidths&) const = default;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 1;
};

struct PipelineConfig {
  std::string preset = "desk";
  ShapeConfig shape;
  ModelWidths widths;
  FusionConfig fusion;
  FusionConfig refiner;
  LossWeights loss;
  OptimizerConfig optimizer;
  std::size_t post_window = 3;  // 0 disables post-processing
  std::uint64_t seed = 42;

  // T=10, C=6, Dv=Da=64, R=4, H=16, d=32, four shared windows.
  static PipelineConfig desk();
  // T=10, C=29, Dv=Da=1024, R=1, H=128, d=256, d'=d''=256.
  static PipelineConfig full();
  static PipelineConfig preset_named(const std::string& name);

  std::size_t fused_width() const { return 4 * widths.lstm_hidden; }
  void validate() const;
  // Extents and widths that determine parameter shapes.
  bool same_architecture(const PipelineConfig& other) const;
};

using Json = nlohmann::json;

Json to_json(const PipelineConfig& cfg);
// Unspecified fields fall back to the named preset ("desk" by default).
PipelineConfig pipeline_config_from_json(const Json& j);
// Overlays `j` on `defaults`; "preset" is kept as a label and not looked up.
PipelineConfig pipeline_config_from_json(const Json& j, const PipelineConfig& defaults);

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& j);

Json to_json(const FusionConfig& cfg);
FusionConfig fusion_config_from_json(const Json& j, const FusionConfig& defaults);

std::string layouts_str(const std::vector<WindowLayout>& layouts);

Json read_json_file(const std::string& path);

}  // namespace aveloc
