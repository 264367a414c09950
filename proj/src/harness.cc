#include "aveloc/harness.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "aveloc/errors.h"
#include "aveloc/layers.h"
#include "aveloc/losses.h"
#include "aveloc/mwtf.h"
#include "aveloc/refine.h"
#include "binary_io.h"

namespace aveloc {

namespace {

struct Architecture {
  AgvaParams agva;
  BiLstmParams video_lstm;
  BiLstmParams audio_lstm;
  MwtfParams fusion;
  RefineParams refine;
};

Architecture architecture(const PipelineConfig& cfg) {
  const ShapeConfig& s = cfg.shape;
  const std::size_t h = cfg.widths.lstm_hidden;
  Architecture a{
      AgvaParams{"agva", s.video_width, s.audio_width, cfg.widths.agva_hidden},
      BiLstmParams{"video.lstm", s.video_width, h},
      BiLstmParams{"audio.lstm", s.audio_width, h},
      MwtfParams{"fusion", cfg.fused_width(), cfg.fusion},
      RefineParams{cfg.fusion.output_width(), cfg.widths.egta_width, cfg.refiner,
                   cfg.widths.classifier_width, s.num_classes},
  };
  return a;
}

template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const DimensionError& e) {
    throw DimensionError(std::string("forward: ") + name + ": " + e.what());
  } catch (const LayoutError& e) {
    throw LayoutError(std::string("forward: ") + name + ": " + e.what());
  }
}

void check_input(const AveSequence& seq, const PipelineConfig& cfg) {
  stage("input", [&] {
    seq.validate();
    const ShapeConfig& s = cfg.shape;
    if (seq.steps() != s.steps || seq.regions() != s.regions ||
        seq.video_width() != s.video_width || seq.audio_width() != s.audio_width ||
        seq.labels.num_classes() != s.num_classes) {
      throw DimensionError("sequence '" + seq.id + "' has T=" + std::to_string(seq.steps()) +
                           " R=" + std::to_string(seq.regions()) +
                           " Dv=" + std::to_string(seq.video_width()) +
                           " Da=" + std::to_string(seq.audio_width()) +
                           " C=" + std::to_string(seq.labels.num_classes()) +
                           ", config expects T=" + std::to_string(s.steps) +
                           " R=" + std::to_string(s.regions) +
                           " Dv=" + std::to_string(s.video_width) +
                           " Da=" + std::to_string(s.audio_width) +
                           " C=" + std::to_string(s.num_classes));
    }
    return 0;
  });
}

std::size_t argmax_row(const Tensor& m, std::size_t r) {
  const double* p = m.row(r);
  return static_cast<std::size_t>(std::max_element(p, p + m.cols()) - p);
}

}  // namespace

ParamStore init_params(const PipelineConfig& cfg) {
  cfg.validate();
  const Architecture a = architecture(cfg);
  ParamStore store(cfg.seed);
  Rng rng(cfg.seed);
  a.agva.init(store, rng);
  a.video_lstm.init(store, rng);
  a.audio_lstm.init(store, rng);
  a.fusion.init(store, rng);
  a.refine.init(store, rng);
  return store;
}

Model::Model(PipelineConfig cfg) : cfg_(std::move(cfg)), params_(init_params(cfg_)) {}

Model::Model(PipelineConfig cfg, ParamStore params) : cfg_(std::move(cfg)) {
  const ParamStore reference = init_params(cfg_);
  ParamStore ordered(params.seed());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const std::string& name = reference.name(i);
    if (!params.contains(name)) throw FormatError("missing tensor '" + name + "'");
    const Tensor& value = params.get(name).value;
    if (value.shape() != reference.at(i).value.shape()) {
      throw DimensionError("tensor '" + name + "' has shape " + shape_str(value.shape()) +
                           ", config expects " + shape_str(reference.at(i).value.shape()));
    }
    ordered.add(name, value);
  }
  if (params.size() != reference.size()) {
    for (const std::string& name : params.names()) {
      if (!reference.contains(name)) throw FormatError("unexpected tensor '" + name + "'");
    }
  }
  params_ = std::move(ordered);
}

ForwardResult forward(Tape& tape, const AveSequence& seq, ParamStore& params,
                      const PipelineConfig& cfg) {
  check_input(seq, cfg);
  const Architecture a = architecture(cfg);
  const Var video = tape.constant(seq.video);
  const Var audio = tape.constant(seq.audio);

  const Var fused_av = stage("agva", [&] {
    return agva(video, audio, a.agva.bind(tape, params)).pooled;
  });
  const Var features = stage("encoders", [&] {
    const Var v = bilstm(fused_av, a.video_lstm.bind(tape, params));
    const Var au = bilstm(audio, a.audio_lstm.bind(tape, params));
    return concat_cols({v, au});
  });
  const Var fused = stage("fusion", [&] {
    return mwtf_forward(features, cfg.fusion, a.fusion.bind(tape, params)).fused;
  });
  const RefineVars rv = stage("refine", [&] { return a.refine.bind(tape, params); });
  const Var alpha = stage("egta", [&] { return egta(fused, rv); });
  const Var probs = stage("classifier", [&] {
    return refine_classify(apply_mask(fused, alpha), rv, cfg.refiner);
  });
  return ForwardResult{alpha, probs};
}

ForwardResult forward(Tape& tape, const AveSequence& seq, Model& model) {
  return forward(tape, seq, model.params(), model.config());
}

Var sequence_loss(Tape& tape, const AveSequence& seq, ParamStore& params,
                  const PipelineConfig& cfg) {
  const ForwardResult r = forward(tape, seq, params, cfg);
  return hybrid_loss(r.alpha, seq.labels.events, r.probs, seq.labels.y, cfg.loss);
}

Prediction predict(Model& model, const AveSequence& seq) {
  Tape tape;
  tape.set_recording(false);
  const ForwardResult r = forward(tape, seq, model);
  Prediction p{r.alpha.value(), r.probs.value(), {}};
  for (std::size_t t = 0; t < p.probs.rows(); ++t) p.labels.push_back(argmax_row(p.probs, t));
  return p;
}

std::vector<std::vector<std::size_t>> predict_labels(Model& model, const Dataset& data) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(data.size());
  for (const AveSequence& seq : data) out.push_back(predict(model, seq).labels);
  return out;
}

double segment_accuracy(std::span<const std::vector<std::size_t>> predictions,
                        const Dataset& data, std::optional<std::size_t> post_window) {
  if (predictions.size() != data.size()) {
    throw DimensionError("got predictions for " + std::to_string(predictions.size()) +
                         " sequences, dataset has " + std::to_string(data.size()));
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::vector<std::size_t> truth = data[i].labels.classes();
    std::vector<std::size_t> pred = predictions[i];
    if (pred.size() != truth.size()) {
      throw DimensionError("sequence '" + data[i].id + "': " + std::to_string(pred.size()) +
                           " predictions for " + std::to_string(truth.size()) + " segments");
    }
    if (post_window && !pred.empty()) pred = locality_filter(pred, *post_window);
    for (std::size_t t = 0; t < truth.size(); ++t) correct += pred[t] == truth[t];
    total += truth.size();
  }
  if (total == 0) throw PreconditionError("cannot score an empty dataset");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate(Model& model, const Dataset& data, std::optional<std::size_t> post_window) {
  return segment_accuracy(predict_labels(model, data), data, post_window);
}

Adam::Adam(const ParamStore& params, const OptimizerConfig& cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).value.shape());
    v_.emplace_back(params.at(i).value.shape());
  }
}

void Adam::step(ParamStore& params) {
  if (params.size() != m_.size()) throw ConfigError("optimizer state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    auto theta = p.value.data();
    const auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      theta[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
    }
  }
}

TrainResult train(const Dataset& train_data, const Dataset& val_data, const PipelineConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (train_data.empty()) throw PreconditionError("training set is empty");
  cfg.validate();
  TrainResult result{Checkpoint{Model(cfg), {}}, {}};
  Model& model = result.checkpoint.model;
  ParamStore& params = model.params();
  Adam adam(params, cfg.optimizer);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = cfg.optimizer.batch_size;

  for (std::size_t epoch = 1; epoch <= cfg.optimizer.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.index(0, i)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      params.zero_grad();
      for (std::size_t b = begin; b < end; ++b) {
        const AveSequence& seq = train_data[order[b]];
        const auto fail = [&](const std::string& what) {
          return TrainingError("non-finite value at step " + std::to_string(adam.steps() + 1) +
                               " (epoch " + std::to_string(epoch) + ", sequence '" + seq.id +
                               "'): " + what);
        };
        Tape tape;
        try {
          const ForwardResult r = forward(tape, seq, params, cfg);
          const Var loss = hybrid_loss(r.alpha, seq.labels.events, r.probs, seq.labels.y, cfg.loss);
          const double value = loss.value()[0];
          if (!std::isfinite(value)) throw fail("loss");
          tape.backward(loss);
          loss_sum += value;
          const std::vector<std::size_t> truth = seq.labels.classes();
          for (std::size_t t = 0; t < truth.size(); ++t) {
            correct += argmax_row(r.probs.value(), t) == truth[t];
          }
          total += truth.size();
        } catch (const NumericError& e) {
          throw fail(e.what());
        }
      }
      if (end - begin > 1) {
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (std::size_t i = 0; i < params.size(); ++i) {
          for (double& g : params.at(i).grad.data()) g *= inv;
        }
      }
      adam.step(params);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train_data.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    m.val_accuracy = val_data.empty() ? std::nan("") : evaluate(model, val_data, std::nullopt);
    result.metrics.push_back(m);
    result.checkpoint.state.epochs_completed = epoch;
    result.checkpoint.state.loss_history.push_back(m.train_loss);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.precision(17);
  out << "epoch,train_loss,train_accuracy,val_accuracy\n";
  for (const EpochMetrics& m : metrics) {
    out << m.epoch << ',' << m.train_loss << ',' << m.train_accuracy << ',' << m.val_accuracy
        << '\n';
  }
}

namespace {

constexpr char kCheckpointMagic[4] = {'A', 'V', 'E', 'C'};
constexpr std::size_t kMaxRank = 8;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ParamStore& params = ckpt.model.params();
  const Json meta{{"config", to_json(ckpt.model.config())},
                  {"param_seed", params.seed()},
                  {"training",
                   {{"epochs_completed", ckpt.state.epochs_completed},
                    {"loss_history", ckpt.state.loss_history}}}};
  const std::string meta_str = meta.dump();

  binio::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta_str.size()));
  w.bytes(meta_str.data(), meta_str.size());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Tensor& value = params.at(i).value;
    if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(value.rank()));
    for (std::size_t d : value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double x : value.data()) w.f64(x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  const auto& buf = w.buffer();
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<PipelineConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  binio::Reader r(buf, path.string());

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError(path.string() + ": bad magic (not a checkpoint)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
  const std::uint32_t meta_len = r.u32("metadata length");
  r.need(meta_len, "metadata");
  std::string meta_str(meta_len, '\0');
  r.bytes(meta_str.data(), meta_len, "metadata");

  Json meta;
  try {
    meta = Json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": metadata is not valid JSON: " + e.what());
  }
  if (!meta.is_object() || !meta.contains("config")) {
    throw FormatError(path.string() + ": metadata lacks a config");
  }
  // Saved configs are complete, so the preset name need not be a known one.
  const PipelineConfig cfg = pipeline_config_from_json(meta.at("config"), PipelineConfig::desk());
  if (expected && !expected->same_architecture(cfg)) {
    throw ConfigError(path.string() + ": checkpoint config " + to_json(cfg).dump() +
                      " conflicts with requested " + to_json(*expected).dump());
  }

  TrainingState state;
  std::uint64_t seed = cfg.seed;
  try {
    seed = meta.value("param_seed", seed);
    if (meta.contains("training")) {
      const Json& t = meta.at("training");
      state.epochs_completed = t.value("epochs_completed", std::size_t{0});
      state.loss_history = t.value("loss_history", std::vector<double>{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad training metadata: " + e.what());
  }

  ParamStore params(seed);
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("tensor name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "tensor name");
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError(path.string() + ": tensor '" + name + "' has invalid rank " +
                        std::to_string(rank));
    }
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32("tensor dims");
      if (d == 0) throw FormatError(path.string() + ": tensor '" + name + "' has a zero extent");
      if (n > r.remaining() / d) {
        throw FormatError(path.string() + ": tensor '" + name + "' dimensions exceed the file");
      }
      n *= d;
      shape.push_back(d);
    }
    if (n > r.remaining() / 8) {
      throw FormatError(path.string() + ": truncated payload while reading tensor '" + name + "'");
    }
    std::vector<double> data(n);
    for (double& x : data) x = r.f64("tensor payload");
    if (params.contains(name)) throw FormatError(path.string() + ": duplicate tensor '" + name + "'");
    params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after tensors");

  try {
    return Checkpoint{Model(cfg, std::move(params)), std::move(state)};
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

template <class T>
std::vector<T> axis(const Json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  auto v = j.at(key).get<std::vector<T>>();
  if (v.empty()) throw ConfigError(std::string("ablation axis '") + key + "' is empty");
  return v;
}

}  // namespace

AblationGrid ablation_grid_from_json(const Json& j) {
  try {
    AblationGrid g;
    g.base = pipeline_config_from_json(j.value("base", Json::object()));
    std::vector<std::string> modes = axis<std::string>(j, "modes", {to_string(g.base.fusion.mode)});
    for (const std::string& m : modes) g.modes.push_back(attention_mode_from_string(m));
    g.layouts = axis<std::vector<WindowLayout>>(j, "layouts", {g.base.fusion.layouts});
    g.shared_weights = axis<bool>(j, "shared_weights", {g.base.fusion.shared_weights});
    g.egta_supervision = axis<bool>(j, "egta_supervision", {g.base.loss.event > 0.0});
    g.refiner_layouts = axis<std::vector<WindowLayout>>(j, "refiner_layouts", {g.base.refiner.layouts});
    g.post_windows = axis<std::size_t>(j, "post_windows", {g.base.post_window});
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation grid: ") + e.what());
  }
}

std::vector<AblationRow> ablate(const AblationGrid& grid, const Dataset& train_data,
                                const Dataset& val_data, const WarningFn& warn,
                                const std::function<void(const AblationRow&)>& on_row) {
  if (val_data.empty()) throw PreconditionError("ablation needs a validation set");
  std::vector<AblationRow> rows;
  for (AttentionMode mode : grid.modes) {
    for (const auto& layouts : grid.layouts) {
      for (bool shared : grid.shared_weights) {
        for (bool supervised : grid.egta_supervision) {
          for (const auto& refiner_layouts : grid.refiner_layouts) {
            PipelineConfig cfg = grid.base;
            cfg.fusion.mode = mode;
            cfg.fusion.layouts = layouts;
            cfg.fusion.shared_weights = shared;
            cfg.refiner.layouts = refiner_layouts;
            if (!supervised) cfg.loss.event = 0.0;
            AblationRow proto{mode, layouts, shared, supervised, refiner_layouts, 0, 0.0, 0.0};
            try {
              cfg.validate();
            } catch (const std::invalid_argument& e) {
              if (warn) {
                warn(std::string("skipping ") + to_string(mode) + " " + layouts_str(layouts) +
                     (shared ? " shared" : " independent") + ": " + e.what());
              }
              continue;
            }
            TrainResult trained = train(train_data, {}, cfg);
            Model& model = trained.checkpoint.model;
            proto.final_train_loss = trained.metrics.empty() ? std::nan("")
                                                             : trained.metrics.back().train_loss;
            const auto preds = predict_labels(model, val_data);
            for (std::size_t w : grid.post_windows) {
              AblationRow row = proto;
              row.post_window = w;
              row.val_accuracy = segment_accuracy(
                  preds, val_data, w == 0 ? std::nullopt : std::optional<std::size_t>(w));
              rows.push_back(row);
              if (on_row) on_row(row);
            }
          }
        }
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.precision(17);
  out << "mode,layouts,shared_weights,egta_supervision,refiner_layouts,post_window,val_accuracy,"
         "final_train_loss\n";
  for (const AblationRow& r : rows) {
    out << to_string(r.mode) << ',' << layouts_str(r.layouts) << ','
        << (r.shared_weights ? "shared" : "independent") << ','
        << (r.egta_supervision ? "on" : "off") << ',' << layouts_str(r.refiner_layouts) << ','
        << (r.post_window == 0 ? std::string("off") : std::to_string(r.post_window)) << ','
        << r.val_accuracy << ',' << r.final_train_loss << '\n';
  }
}

}  // namespace aveloc
