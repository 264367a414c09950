#include "aveloc/mwtf.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aveloc/errors.h"

namespace aveloc {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::temporal: return "temporal";
    case AttentionMode::feature: return "feature";
    case AttentionMode::multi_domain: return "multi_domain";
  }
  return "?";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "temporal") return AttentionMode::temporal;
  if (s == "feature") return AttentionMode::feature;
  if (s == "multi_domain" || s == "multi-domain") return AttentionMode::multi_domain;
  throw ConfigError("unknown attention mode '" + s + "'");
}

void FusionConfig::validate(std::size_t steps) const {
  if (layouts.empty()) throw LayoutError("fusion config has no sub-modules");
  if (width == 0) throw ConfigError("fusion width must be >= 1");
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    const WindowLayout& l = layouts[i];
    std::size_t total = 0;
    for (std::size_t w : l) {
      if (w == 0) {
        throw LayoutError("sub-module " + std::to_string(i) + ": zero-length window");
      }
      total += w;
    }
    if (total != steps) {
      throw LayoutError("sub-module " + std::to_string(i) + ": windows sum to " +
                        std::to_string(total) + ", expected " + std::to_string(steps));
    }
  }
}

std::vector<std::string> MwtfParams::param_set_prefixes() const {
  if (config.shared_weights) return {prefix + ".shared"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < config.submodules(); ++i) out.push_back(prefix + "." + std::to_string(i));
  return out;
}

void MwtfParams::init(ParamStore& store, Rng& rng) const {
  const std::size_t d = config.width;
  for (const std::string& p : param_set_prefixes()) {
    for (std::size_t j = 0; j < 6; ++j) {
      const std::size_t fan_in = j % 2 == 0 ? input_width : d;
      store.add(p + ".w" + std::to_string(j + 1), xavier_uniform(rng, d, fan_in));
    }
  }
}

std::vector<FusionVars> MwtfParams::bind(Tape& tape, ParamStore& store) const {
  std::vector<FusionVars> out;
  for (const std::string& p : param_set_prefixes()) {
    FusionVars v;
    for (std::size_t j = 0; j < 6; ++j) v.w[j] = tape.parameter(store, p + ".w" + std::to_string(j + 1));
    out.push_back(v);
  }
  return out;
}

std::vector<Var> split(const Var& features, const std::vector<WindowLayout>& layouts,
                       std::size_t submodule) {
  if (submodule >= layouts.size()) {
    throw LayoutError("sub-module " + std::to_string(submodule) + " out of range");
  }
  const WindowLayout& layout = layouts[submodule];
  const std::size_t total = std::accumulate(layout.begin(), layout.end(), std::size_t{0});
  if (total != features.rows() || std::count(layout.begin(), layout.end(), 0u) > 0) {
    throw LayoutError("sub-module " + std::to_string(submodule) + ": windows sum to " +
                      std::to_string(total) + ", expected " + std::to_string(features.rows()));
  }
  std::vector<Var> blocks;
  blocks.reserve(layout.size());
  std::size_t begin = 0;
  for (std::size_t w : layout) {
    blocks.push_back(w == features.rows() ? features : slice_rows(features, begin, w));
    begin += w;
  }
  return blocks;
}

Qkv qkv_project(const Var& block, const FusionVars& p) {
  const Var x = layer_norm(block);
  return Qkv{linear(activation(linear(x, p.w[0]), Activation::tanh), p.w[1]),
             linear(activation(linear(x, p.w[2]), Activation::tanh), p.w[3]),
             linear(activation(linear(x, p.w[4]), Activation::relu), p.w[5])};
}

AttentionMaps attention_maps(const Var& q, const Var& k, AttentionMode mode) {
  if (q.shape() != k.shape()) {
    throw DimensionError("attention_maps: Q " + shape_str(q.shape()) + " and K " +
                         shape_str(k.shape()) + " differ");
  }
  const double w = static_cast<double>(q.rows());
  const double d = static_cast<double>(q.cols());
  AttentionMaps maps;
  if (mode != AttentionMode::feature) {
    maps.temporal = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d)), Axis::rows);
  }
  if (mode != AttentionMode::temporal) {
    maps.feature = softmax(scale(matmul(transpose(k), q), 1.0 / std::sqrt(w)), Axis::cols);
  }
  return maps;
}

Var apply_attention(const AttentionMaps& maps, const Var& v, AttentionMode mode) {
  const bool need_t = mode != AttentionMode::feature;
  const bool need_f = mode != AttentionMode::temporal;
  if ((need_t && !maps.temporal) || (need_f && !maps.feature)) {
    throw DimensionError(std::string("apply_attention: missing map for mode ") + to_string(mode));
  }
  Var out = v;
  if (need_f) out = matmul(out, *maps.feature);
  if (need_t) out = matmul(*maps.temporal, out);
  return out;
}

Var fuse_block(const Var& block, const FusionVars& p, AttentionMode mode) {
  const Qkv qkv = qkv_project(block, p);
  return apply_attention(attention_maps(qkv.q, qkv.k, mode), qkv.v, mode);
}

MwtfOutput mwtf_forward(const Var& features, const FusionConfig& config,
                        const std::vector<FusionVars>& params) {
  if (features.value().rank() != 2) {
    throw DimensionError("mwtf: features must be T×D, got " + shape_str(features.shape()));
  }
  config.validate(features.rows());
  const std::size_t sets = config.shared_weights ? 1 : config.submodules();
  if (params.size() != sets) {
    throw ConfigError("mwtf: expected " + std::to_string(sets) + " parameter sets, got " +
                      std::to_string(params.size()));
  }
  // Norm and the projections act row by row, so projecting all of F once and
  // slicing per block equals projecting each block separately.
  std::vector<Qkv> projected;
  projected.reserve(sets);
  for (const FusionVars& p : params) projected.push_back(qkv_project(features, p));

  MwtfOutput out;
  for (std::size_t i = 0; i < config.submodules(); ++i) {
    const Qkv& full = projected[config.shared_weights ? 0 : i];
    const auto qs = split(full.q, config.layouts, i);
    const auto ks = split(full.k, config.layouts, i);
    const auto vs = split(full.v, config.layouts, i);
    std::vector<Var> blocks;
    blocks.reserve(qs.size());
    for (std::size_t b = 0; b < qs.size(); ++b) {
      blocks.push_back(apply_attention(attention_maps(qs[b], ks[b], config.mode), vs[b], config.mode));
    }
    out.submodules.push_back(blocks.size() == 1 ? blocks.front() : concat_rows(blocks));
  }
  out.fused = out.submodules.size() == 1 ? out.submodules.front() : concat_cols(out.submodules);
  return out;
}

}  // namespace aveloc
