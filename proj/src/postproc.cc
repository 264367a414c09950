#include "aveloc/postproc.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "aveloc/errors.h"

namespace aveloc {

std::vector<LabelRun> decompose_runs(std::span<const std::size_t> labels) {
  std::vector<LabelRun> runs;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (runs.empty() || runs.back().label != labels[t]) {
      runs.push_back(LabelRun{labels[t], t, 1});
    } else {
      ++runs.back().length;
    }
  }
  return runs;
}

namespace {

void check_args(std::span<const std::size_t> pred, std::size_t window) {
  if (window < 1) throw std::invalid_argument("filter window must be >= 1");
  if (pred.empty()) throw std::invalid_argument("cannot filter an empty prediction sequence");
}

std::size_t majority_label(const std::vector<LabelRun>& runs) {
  // Runs are scanned in order, so the first label to reach a count is the
  // earliest-appearing one; only a strictly larger total replaces it.
  std::map<std::size_t, std::size_t> totals;
  for (const LabelRun& r : runs) totals[r.label] += r.length;
  std::size_t best = runs.front().label;
  for (const LabelRun& r : runs) {
    if (totals[r.label] > totals[best]) best = r.label;
  }
  return best;
}

}  // namespace

std::vector<std::size_t> locality_filter(std::span<const std::size_t> pred, std::size_t window) {
  check_args(pred, window);
  const auto runs = decompose_runs(pred);
  const auto first_long = std::find_if(runs.begin(), runs.end(),
                                       [window](const LabelRun& r) { return r.length >= window; });
  std::size_t prevailing = first_long != runs.end() ? first_long->label : majority_label(runs);
  std::vector<std::size_t> out;
  out.reserve(pred.size());
  for (const LabelRun& r : runs) {
    if (r.length >= window) prevailing = r.label;
    out.insert(out.end(), r.length, prevailing);
  }
  return out;
}

std::vector<std::size_t> majority_filter(std::span<const std::size_t> pred, std::size_t window) {
  check_args(pred, window);
  const std::size_t n = pred.size(), half = window / 2;
  std::vector<std::size_t> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, lo + window);
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t k = lo; k < hi; ++k) ++counts[pred[k]];
    std::size_t best = pred[t];
    for (const auto& [label, count] : counts) {
      if (count > counts[best]) best = label;
    }
    out[t] = best;
  }
  return out;
}

std::vector<std::size_t> apply_filter(FilterKind kind, std::span<const std::size_t> pred,
                                      std::size_t window) {
  return kind == FilterKind::run_locality ? locality_filter(pred, window)
                                          : majority_filter(pred, window);
}

std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::vector<PredictionRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("sequence_id", 0) == 0) continue;
    std::istringstream ss(line);
    std::string id, t, c;
    if (!std::getline(ss, id, ',') || !std::getline(ss, t, ',') || !std::getline(ss, c)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    try {
      std::size_t used_t = 0, used_c = 0;
      PredictionRow row{id, std::stoul(t, &used_t), std::stoul(c, &used_c)};
      if (used_t != t.size() || used_c != c.size() || t.front() == '-' || c.front() == '-') {
        throw std::invalid_argument("trailing characters");
      }
      rows.push_back(std::move(row));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed integer");
    }
  }
  return rows;
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << "sequence_id,t,class_index\n";
  for (const PredictionRow& r : rows) {
    // Ids are written unquoted, so separators would not survive a reread.
    if (r.sequence_id.find_first_of(",\r\n") != std::string::npos) {
      throw FormatError(path.string() + ": sequence id '" + r.sequence_id + "' contains a separator");
    }
    out << r.sequence_id << ',' << r.t << ',' << r.class_index << '\n';
  }
}

std::vector<PredictionRow> filter_predictions(std::span<const PredictionRow> rows,
                                              std::size_t window, FilterKind kind) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const PredictionRow*>> groups;
  for (const PredictionRow& r : rows) {
    auto [it, inserted] = groups.try_emplace(r.sequence_id);
    if (inserted) order.push_back(r.sequence_id);
    it->second.push_back(&r);
  }
  std::vector<PredictionRow> out;
  out.reserve(rows.size());
  for (const std::string& id : order) {
    auto& g = groups[id];
    std::sort(g.begin(), g.end(), [](const auto* a, const auto* b) { return a->t < b->t; });
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i]->t != i) {
        throw FormatError("sequence '" + id + "': time steps must be 0..T-1 without gaps");
      }
      labels.push_back(g[i]->class_index);
    }
    const auto filtered = apply_filter(kind, labels, window);
    for (std::size_t i = 0; i < filtered.size(); ++i) out.push_back(PredictionRow{id, i, filtered[i]});
  }
  return out;
}

}  // namespace aveloc
