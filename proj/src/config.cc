#include "aveloc/config.h"

#include <fstream>
#include <sstream>

#include "aveloc/errors.h"

namespace aveloc {

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.preset = "desk";
  c.fusion.width = 32;
  c.refiner = FusionConfig{{{10}}, 32, true, AttentionMode::multi_domain};
  return c;
}

PipelineConfig PipelineConfig::full() {
  PipelineConfig c;
  c.preset = "full";
  c.shape = ShapeConfig{10, 29, 1024, 1024, 1, 0};
  c.widths = ModelWidths{128, 128, 256, 256};
  c.fusion.width = 256;
  c.refiner = FusionConfig{{{10}}, 256, true, AttentionMode::multi_domain};
  return c;
}

PipelineConfig PipelineConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ConfigError("unknown preset '" + name + "'");
}

void PipelineConfig::validate() const {
  const ShapeConfig& s = shape;
  if (!s.steps || !s.num_classes || !s.video_width || !s.audio_width || !s.regions) {
    throw ConfigError("shape extents must be positive");
  }
  if (s.num_classes < 2) throw ConfigError("need at least two classes");
  if (s.background_class >= s.num_classes) throw ConfigError("background class out of range");
  if (!widths.lstm_hidden || !widths.agva_hidden) throw ConfigError("widths must be positive");
  if (widths.egta_width == 0 || widths.egta_width % 2 || widths.classifier_width == 0 ||
      widths.classifier_width % 2) {
    throw ConfigError("EGTA and classifier widths must be positive and even (BiLSTM outputs)");
  }
  fusion.validate(s.steps);
  refiner.validate(s.steps);
  loss.validate();
  if (!(optimizer.learning_rate > 0.0) || optimizer.batch_size == 0) {
    throw ConfigError("optimizer needs a positive learning rate and batch size");
  }
}

bool PipelineConfig::same_architecture(const PipelineConfig& o) const {
  return shape == o.shape && widths == o.widths && fusion.layouts == o.fusion.layouts &&
         fusion.width == o.fusion.width && fusion.shared_weights == o.fusion.shared_weights &&
         refiner.layouts == o.refiner.layouts && refiner.width == o.refiner.width &&
         refiner.shared_weights == o.refiner.shared_weights;
}

Json to_json(const FusionConfig& f) {
  return Json{{"layouts", f.layouts},
              {"width", f.width},
              {"shared_weights", f.shared_weights},
              {"attention", to_string(f.mode)}};
}

FusionConfig fusion_config_from_json(const Json& j, const FusionConfig& defaults) {
  FusionConfig f = defaults;
  f.layouts = j.value("layouts", f.layouts);
  f.width = j.value("width", f.width);
  f.shared_weights = j.value("shared_weights", f.shared_weights);
  if (j.contains("attention")) f.mode = attention_mode_from_string(j.at("attention").get<std::string>());
  return f;
}

Json to_json(const PipelineConfig& c) {
  return Json{
      {"preset", c.preset},
      {"shape",
       {{"T", c.shape.steps},
        {"C", c.shape.num_classes},
        {"Dv", c.shape.video_width},
        {"Da", c.shape.audio_width},
        {"R", c.shape.regions},
        {"background_class", c.shape.background_class}}},
      {"widths",
       {{"lstm_hidden", c.widths.lstm_hidden},
        {"agva_hidden", c.widths.agva_hidden},
        {"egta_width", c.widths.egta_width},
        {"classifier_width", c.widths.classifier_width}}},
      {"fusion", to_json(c.fusion)},
      {"refiner", to_json(c.refiner)},
      {"loss", {{"lambda_event", c.loss.event}, {"lambda_class", c.loss.category}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"epochs", c.optimizer.epochs},
        {"batch_size", c.optimizer.batch_size}}},
      {"post_window", c.post_window},
      {"seed", c.seed},
  };
}

PipelineConfig pipeline_config_from_json(const Json& j) {
  PipelineConfig base;
  try {
    base = PipelineConfig::preset_named(j.value("preset", std::string("desk")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return pipeline_config_from_json(j, base);
}

PipelineConfig pipeline_config_from_json(const Json& j, const PipelineConfig& defaults) {
  try {
    PipelineConfig c = defaults;
    c.preset = j.value("preset", c.preset);
    if (j.contains("shape")) {
      const Json& s = j.at("shape");
      c.shape.steps = s.value("T", c.shape.steps);
      c.shape.num_classes = s.value("C", c.shape.num_classes);
      c.shape.video_width = s.value("Dv", c.shape.video_width);
      c.shape.audio_width = s.value("Da", c.shape.audio_width);
      c.shape.regions = s.value("R", c.shape.regions);
      c.shape.background_class = s.value("background_class", c.shape.background_class);
    }
    if (j.contains("widths")) {
      const Json& w = j.at("widths");
      c.widths.lstm_hidden = w.value("lstm_hidden", c.widths.lstm_hidden);
      c.widths.agva_hidden = w.value("agva_hidden", c.widths.agva_hidden);
      c.widths.egta_width = w.value("egta_width", c.widths.egta_width);
      c.widths.classifier_width = w.value("classifier_width", c.widths.classifier_width);
    }
    if (j.contains("fusion")) c.fusion = fusion_config_from_json(j.at("fusion"), c.fusion);
    // The refiner follows the fusion width unless given its own.
    c.refiner.width = c.fusion.width;
    if (j.contains("refiner")) c.refiner = fusion_config_from_json(j.at("refiner"), c.refiner);
    if (j.contains("loss")) {
      const Json& l = j.at("loss");
      c.loss.event = l.value("lambda_event", c.loss.event);
      c.loss.category = l.value("lambda_class", c.loss.category);
    }
    if (j.contains("optimizer")) {
      const Json& o = j.at("optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
      c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
      c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    }
    c.post_window = j.value("post_window", c.post_window);
    c.seed = j.value("seed", c.seed);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
}

Json to_json(const SynthConfig& s) {
  return Json{{"T", s.steps},
              {"C", s.num_classes},
              {"Dv", s.video_width},
              {"Da", s.audio_width},
              {"R", s.regions},
              {"background_class", s.background_class},
              {"n_sequences", s.n_sequences},
              {"noise_sigma", s.noise_sigma},
              {"min_span", s.min_span},
              {"max_span", s.max_span},
              {"signature_seed", s.signature_seed},
              {"seed", s.seed},
              {"id_prefix", s.id_prefix}};
}

SynthConfig synth_config_from_json(const Json& j) {
  try {
    SynthConfig s;
    s.steps = j.value("T", s.steps);
    s.num_classes = j.value("C", s.num_classes);
    s.video_width = j.value("Dv", s.video_width);
    s.audio_width = j.value("Da", s.audio_width);
    s.regions = j.value("R", s.regions);
    s.background_class = j.value("background_class", s.background_class);
    s.n_sequences = j.value("n_sequences", s.n_sequences);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.min_span = j.value("min_span", s.min_span);
    s.max_span = j.value("max_span", std::min(s.max_span, s.steps));
    s.signature_seed = j.value("signature_seed", s.signature_seed);
    s.seed = j.value("seed", s.seed);
    s.id_prefix = j.value("id_prefix", s.id_prefix);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
}

std::string layouts_str(const std::vector<WindowLayout>& layouts) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    if (i) os << '+';
    os << '[';
    for (std::size_t k = 0; k < layouts[i].size(); ++k) {
      if (k) os << ' ';
      os << layouts[i][k];
    }
    os << ']';
  }
  return os.str();
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace aveloc
