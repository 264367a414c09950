#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aveloc/tensor.h"

namespace aveloc {

// Per-segment one-hot classes plus the derived event/background vector.
struct AveLabels {
  Tensor y;  // T × C, one 1 per row
  std::size_t background_class = 0;
  std::vector<int> events;  // E[t] = 1 iff class(t) != background

  static AveLabels from_classes(std::span<const std::size_t> classes, std::size_t num_classes,
                                std::size_t background_class);
  std::vector<std::size_t> classes() const;
  std::size_t num_classes() const { return y.cols(); }
};

struct AveSequence {
  std::string id;
  Tensor video;  // T × R × Dv
  Tensor audio;  // T × Da
  AveLabels labels;

  std::size_t steps() const { return audio.rows(); }
  std::size_t regions() const { return video.shape().at(1); }
  std::size_t video_width() const { return video.shape().at(2); }
  std::size_t audio_width() const { return audio.cols(); }
  // Throws DimensionError when the arrays disagree on T or ranks are off.
  void validate() const;
};

using Dataset = std::vector<AveSequence>;

// E from a one-hot label matrix. Throws PreconditionError on non one-hot rows.
std::vector<int> derive_event_labels(const Tensor& y, std::size_t background_class);

// Row t = mean over the P frames of segment t (each frame_feats[t] is P×D).
Tensor mean_segment_features(std::span<const Tensor> frame_feats);

struct SynthConfig {
  std::size_t steps = 10;  // T
  std::size_t num_classes = 6;  // C, background included
  std::size_t video_width = 64;
  std::size_t audio_width = 64;
  std::size_t regions = 4;
  std::size_t background_class = 0;
  std::size_t n_sequences = 100;
  double noise_sigma = 1.0;
  std::size_t min_span = 3;
  std::size_t max_span = 10;
  std::uint64_t signature_seed = 7;  // class signatures
  std::uint64_t seed = 1;            // spans, classes, noise
  std::string id_prefix = "seq";

  void validate() const;
};

// Class signature rows (C × Dv and C × Da), already scaled, shared by every
// dataset with the same signature_seed, noise_sigma and extents.
struct Signatures {
  Tensor video;
  Tensor audio;
};
Signatures synth_signatures(const SynthConfig& cfg);

// One event class and one contiguous span per sequence. Inside the span video
// regions and audio carry that class's signature; outside it the audio still
// carries it but the video shows a different class's signature. Gaussian noise
// of noise_sigma on every value, then everything is scaled by 1/sqrt(1 + σ²) so
// features have unit variance; values are float32-exact.
Dataset synth_dataset(const SynthConfig& cfg);

// Per-segment accuracy of the noise-free decision rule: nearest audio signature
// among event classes, nearest video signature (region mean) among all classes;
// event if they agree, background otherwise.
double nearest_signature_accuracy(const Dataset& data, const Signatures& sig,
                                  std::size_t background_class);

// Binary feature file: "AVEF", u32 version, u32 T R Dv Da C background, then
// float32 video (T·R·Dv), float32 audio (T·Da), u16 labels (T); little-endian.
constexpr std::uint32_t kFeatureFormatVersion = 1;
void write_features(const std::filesystem::path& path, const AveSequence& seq);
AveSequence read_features(const std::filesystem::path& path);

// Directory of .avef files plus manifest.txt (one relative path per line).
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace aveloc
