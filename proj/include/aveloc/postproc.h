#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aveloc {

// Maximal stretch of one label.
struct LabelRun {
  std::size_t label = 0;
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const LabelRun&) const = default;
};

std::vector<LabelRun> decompose_runs(std::span<const std::size_t> labels);

// Run-based locality correction. Runs shorter than `window` are anomalies and
// take the prevailing label: the most recent run of length >= window (or, for
// leading short runs, the first such run). When no run reaches the window the
// majority label wins, ties going to the label whose first run is earliest.
// Throws std::invalid_argument on window < 1 or an empty sequence.
std::vector<std::size_t> locality_filter(std::span<const std::size_t> pred, std::size_t window);

// Alternative for comparison: centered majority vote over `window` neighbours,
// ties keep the original label.
std::vector<std::size_t> majority_filter(std::span<const std::size_t> pred, std::size_t window);

enum class FilterKind { run_locality, centered_majority };

std::vector<std::size_t> apply_filter(FilterKind kind, std::span<const std::size_t> pred,
                                      std::size_t window);

// One row of a prediction CSV: sequence_id,t,class_index
struct PredictionRow {
  std::string sequence_id;
  std::size_t t = 0;
  std::size_t class_index = 0;

  bool operator==(const PredictionRow&) const = default;
};

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);
void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows);

// Groups rows per sequence (first-appearance order), orders by t, filters
// each sequence, and returns rows in the same grouping. Throws FormatError on
// gaps or duplicates in t.
std::vector<PredictionRow> filter_predictions(std::span<const PredictionRow> rows,
                                              std::size_t window,
                                              FilterKind kind = FilterKind::run_locality);

}  // namespace aveloc
