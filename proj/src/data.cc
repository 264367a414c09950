#include "aveloc/data.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>

#include "aveloc/errors.h"
#include "binary_io.h"

namespace aveloc {

AveLabels AveLabels::from_classes(std::span<const std::size_t> classes, std::size_t num_classes,
                                  std::size_t background_class) {
  if (classes.empty()) throw PreconditionError("labels: empty sequence");
  if (background_class >= num_classes) {
    throw PreconditionError("labels: background class " + std::to_string(background_class) +
                            " out of range for C=" + std::to_string(num_classes));
  }
  AveLabels out;
  out.y = Tensor({classes.size(), num_classes});
  out.background_class = background_class;
  for (std::size_t t = 0; t < classes.size(); ++t) {
    if (classes[t] >= num_classes) {
      throw PreconditionError("labels: class " + std::to_string(classes[t]) + " at t=" +
                              std::to_string(t) + " out of range");
    }
    out.y(t, classes[t]) = 1.0;
  }
  out.events = derive_event_labels(out.y, background_class);
  return out;
}

std::vector<std::size_t> AveLabels::classes() const {
  std::vector<std::size_t> out(y.rows());
  for (std::size_t t = 0; t < y.rows(); ++t) {
    const double* r = y.row(t);
    out[t] = static_cast<std::size_t>(std::max_element(r, r + y.cols()) - r);
  }
  return out;
}

void AveSequence::validate() const {
  if (video.rank() != 3) throw DimensionError(id + ": video must be T×R×Dv");
  if (audio.rank() != 2) throw DimensionError(id + ": audio must be T×Da");
  const std::size_t t = audio.rows();
  if (video.shape()[0] != t || labels.y.rows() != t || labels.events.size() != t) {
    throw DimensionError(id + ": video " + shape_str(video.shape()) + ", audio " +
                         shape_str(audio.shape()) + " and labels disagree on T");
  }
}

std::vector<int> derive_event_labels(const Tensor& y, std::size_t background_class) {
  if (y.rank() != 2) throw PreconditionError("derive_event_labels: labels must be T×C");
  if (background_class >= y.cols()) throw PreconditionError("background class out of range");
  std::vector<int> events(y.rows());
  for (std::size_t t = 0; t < y.rows(); ++t) {
    std::size_t ones = 0, cls = 0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
      if (y(t, c) == 1.0) {
        ++ones;
        cls = c;
      } else if (y(t, c) != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) throw PreconditionError("label row " + std::to_string(t) + " is not one-hot");
    events[t] = cls != background_class ? 1 : 0;
  }
  return events;
}

Tensor mean_segment_features(std::span<const Tensor> frame_feats) {
  if (frame_feats.empty()) throw PreconditionError("mean_segment_features: no segments");
  const std::size_t d = frame_feats.front().cols();
  Tensor out({frame_feats.size(), d});
  for (std::size_t t = 0; t < frame_feats.size(); ++t) {
    const Tensor& f = frame_feats[t];
    if (f.empty() || f.rank() != 2) {
      throw PreconditionError("mean_segment_features: segment " + std::to_string(t) +
                              " has no frames");
    }
    if (f.cols() != d) {
      throw DimensionError("mean_segment_features: segment " + std::to_string(t) + " width " +
                           std::to_string(f.cols()) + ", expected " + std::to_string(d));
    }
    for (std::size_t p = 0; p < f.rows(); ++p) {
      for (std::size_t j = 0; j < d; ++j) out(t, j) += f(p, j);
    }
    for (std::size_t j = 0; j < d; ++j) out(t, j) /= static_cast<double>(f.rows());
  }
  return out;
}

void SynthConfig::validate() const {
  if (steps == 0 || video_width == 0 || audio_width == 0 || regions == 0) {
    throw ConfigError("synth: extents must be positive");
  }
  if (num_classes < 2) throw ConfigError("synth: need background plus at least one event class");
  if (background_class >= num_classes) throw ConfigError("synth: background class out of range");
  if (min_span < 1 || min_span > max_span || max_span > steps) {
    throw ConfigError("synth: infeasible span lengths [" + std::to_string(min_span) + ", " +
                      std::to_string(max_span) + "] for T=" + std::to_string(steps));
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
}

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Signatures and noise are both unit normal before scaling, so this keeps every
// feature coordinate at unit variance whatever noise_sigma is.
double feature_scale(const SynthConfig& cfg) {
  return 1.0 / std::sqrt(1.0 + cfg.noise_sigma * cfg.noise_sigma);
}

}  // namespace

Signatures synth_signatures(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.signature_seed);
  Signatures s{rng.normal_tensor({cfg.num_classes, cfg.video_width}),
               rng.normal_tensor({cfg.num_classes, cfg.audio_width})};
  const double k = feature_scale(cfg);
  for (double& v : s.video.data()) v = f32(k * v);
  for (double& v : s.audio.data()) v = f32(k * v);
  return s;
}

Dataset synth_dataset(const SynthConfig& cfg) {
  const Signatures sig = synth_signatures(cfg);
  Rng rng(cfg.seed);
  const double noise = cfg.noise_sigma * feature_scale(cfg);
  const std::size_t T = cfg.steps, R = cfg.regions, C = cfg.num_classes;
  const std::size_t dv = cfg.video_width, da = cfg.audio_width;
  Dataset data;
  data.reserve(cfg.n_sequences);
  for (std::size_t n = 0; n < cfg.n_sequences; ++n) {
    // Event classes are the non-background indices; draw one by rank.
    std::size_t event = rng.index(0, C - 2);
    if (event >= cfg.background_class) ++event;
    std::size_t other = rng.index(0, C - 2);
    if (other >= event) ++other;
    const std::size_t span = rng.index(cfg.min_span, cfg.max_span);
    const std::size_t start = rng.index(0, T - span);

    std::vector<std::size_t> classes(T, cfg.background_class);
    for (std::size_t t = start; t < start + span; ++t) classes[t] = event;

    AveSequence seq;
    std::ostringstream id;
    id << cfg.id_prefix << '_' << std::setw(5) << std::setfill('0') << n;
    seq.id = id.str();
    seq.video = Tensor({T, R, dv});
    seq.audio = Tensor({T, da});
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t shown = classes[t] == event ? event : other;
      for (std::size_t r = 0; r < R; ++r) {
        double* row = seq.video.data().data() + (t * R + r) * dv;
        for (std::size_t j = 0; j < dv; ++j) {
          row[j] = f32(sig.video(shown, j) + noise * rng.normal());
        }
      }
      for (std::size_t j = 0; j < da; ++j) {
        seq.audio(t, j) = f32(sig.audio(event, j) + noise * rng.normal());
      }
    }
    seq.labels = AveLabels::from_classes(classes, C, cfg.background_class);
    data.push_back(std::move(seq));
  }
  return data;
}

namespace {

std::size_t nearest_row(const Tensor& sig, const double* x, std::size_t skip) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < sig.rows(); ++c) {
    if (c == skip) continue;
    double d = 0.0;
    for (std::size_t j = 0; j < sig.cols(); ++j) d += (sig(c, j) - x[j]) * (sig(c, j) - x[j]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

double nearest_signature_accuracy(const Dataset& data, const Signatures& sig,
                                  std::size_t background_class) {
  std::size_t correct = 0, total = 0;
  for (const AveSequence& seq : data) {
    const auto truth = seq.labels.classes();
    const std::size_t R = seq.regions(), dv = seq.video_width();
    std::vector<double> mean(dv);
    for (std::size_t t = 0; t < seq.steps(); ++t) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t r = 0; r < R; ++r) {
        const double* row = seq.video.data().data() + (t * R + r) * dv;
        for (std::size_t j = 0; j < dv; ++j) mean[j] += row[j] / static_cast<double>(R);
      }
      const std::size_t heard = nearest_row(sig.audio, seq.audio.row(t), background_class);
      const std::size_t seen = nearest_row(sig.video, mean.data(), sig.video.rows());
      const std::size_t pred = heard == seen ? heard : background_class;
      correct += pred == truth[t];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

constexpr char kFeatureMagic[4] = {'A', 'V', 'E', 'F'};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError(std::string("feature file: ") + what + " exceeds u32");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_features(const std::filesystem::path& path, const AveSequence& seq) {
  seq.validate();
  const std::size_t T = seq.steps(), R = seq.regions(), dv = seq.video_width(),
                    da = seq.audio_width(), C = seq.labels.num_classes();
  binio::Writer w;
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureFormatVersion);
  for (auto [v, what] : {std::pair{T, "T"}, {R, "R"}, {dv, "Dv"}, {da, "Da"}, {C, "C"},
                         {seq.labels.background_class, "background"}}) {
    w.u32(to_u32(v, what));
  }
  for (double v : seq.video.data()) w.f32(static_cast<float>(v));
  for (double v : seq.audio.data()) w.f32(static_cast<float>(v));
  if (C > std::numeric_limits<std::uint16_t>::max()) throw FormatError("feature file: C exceeds u16");
  for (std::size_t c : seq.labels.classes()) w.u16(static_cast<std::uint16_t>(c));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(w.buffer().data()),
            static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

AveSequence read_features(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  binio::Reader r(buf, path.string());
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic (not an AVEF feature file)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFormatVersion) {
    throw FormatError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  const std::uint64_t T = r.u32("T"), R = r.u32("R"), dv = r.u32("Dv"), da = r.u32("Da"),
                      C = r.u32("C"), bg = r.u32("background");
  if (T == 0 || R == 0 || dv == 0 || da == 0 || C == 0) {
    throw FormatError(path.string() + ": zero extent in header");
  }
  if (bg >= C) throw FormatError(path.string() + ": background class out of range");
  // Each factor is < 2^32; guard the products against the payload size before allocating.
  const long double need = static_cast<long double>(T) * R * dv * 4 +
                           static_cast<long double>(T) * da * 4 + static_cast<long double>(T) * 2;
  if (need > static_cast<long double>(r.remaining())) {
    if (need > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) {
      throw FormatError(path.string() + ": dimension overflow in header");
    }
    throw FormatError(path.string() + ": truncated payload");
  }
  AveSequence seq;
  seq.id = path.stem().string();
  seq.video = Tensor({T, R, dv});
  for (double& v : seq.video.data()) v = r.f32("video");
  seq.audio = Tensor({T, da});
  for (double& v : seq.audio.data()) v = r.f32("audio");
  std::vector<std::size_t> classes(T);
  for (auto& c : classes) {
    c = r.u16("labels");
    if (c >= C) throw FormatError(path.string() + ": label " + std::to_string(c) + " out of range");
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after payload");
  seq.labels = AveLabels::from_classes(classes, C, bg);
  return seq;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw FormatError((dir / "manifest.txt").string() + ": cannot open for writing");
  for (const AveSequence& seq : data) {
    const std::string file = seq.id + ".avef";
    write_features(dir / file, seq);
    manifest << file << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError((dir / "manifest.txt").string() + ": cannot open");
  Dataset data;
  std::string line;
  while (std::getline(manifest, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    const std::filesystem::path p(line);
    data.push_back(read_features(p.is_absolute() ? p : dir / p));
  }
  return data;
}

}  // namespace aveloc
