#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "aveloc/autodiff.h"

namespace aveloc {

// Block lengths of one fusion sub-module, in temporal order. Must sum to T.
using WindowLayout = std::vector<std::size_t>;

enum class AttentionMode { temporal, feature, multi_domain };

const char* to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& s);

struct FusionConfig {
  std::vector<WindowLayout> layouts{{10}, {5, 5}, {3, 3, 4}, {2, 2, 2, 2, 2}};
  std::size_t width = 256;  // d
  bool shared_weights = true;
  AttentionMode mode = AttentionMode::multi_domain;

  std::size_t submodules() const { return layouts.size(); }
  std::size_t output_width() const { return layouts.size() * width; }
  // Throws LayoutError naming the first sub-module whose layout does not tile [0, T).
  void validate(std::size_t steps) const;
};

// W1..W6 of one fusion sub-module: W1, W3, W5 are d×Din; W2, W4, W6 are d×d.
struct FusionVars {
  std::array<Var, 6> w;
};

// Parameter set(s) of a multi-window fusion stage: one set when weights are
// shared, one per sub-module otherwise.
struct MwtfParams {
  std::string prefix;
  std::size_t input_width = 0;
  FusionConfig config;

  std::vector<std::string> param_set_prefixes() const;
  void init(ParamStore& store, Rng& rng) const;
  std::vector<FusionVars> bind(Tape& tape, ParamStore& store) const;
};

// Contiguous row blocks of `features` per the layout of sub-module `submodule`.
std::vector<Var> split(const Var& features, const std::vector<WindowLayout>& layouts,
                       std::size_t submodule);

struct Qkv {
  Var q, k, v;
};

// Q = W2·tanh(W1·Norm(x)), K = W4·tanh(W3·Norm(x)), V = W6·relu(W5·Norm(x)), row-wise.
Qkv qkv_project(const Var& block, const FusionVars& p);

struct AttentionMaps {
  std::optional<Var> temporal;  // w×w, row-stochastic
  std::optional<Var> feature;   // d×d, column-stochastic
};

// A_t = softmax_rows(Q·Kᵀ/√d), A_f = softmax_cols(Kᵀ·Q/√w); only the maps the mode uses.
AttentionMaps attention_maps(const Var& q, const Var& k, AttentionMode mode);

// multi_domain: A_t·(V·A_f); temporal: A_t·V; feature: V·A_f.
Var apply_attention(const AttentionMaps& maps, const Var& v, AttentionMode mode);

// Norm -> QKV -> maps -> apply for one block.
Var fuse_block(const Var& block, const FusionVars& p, AttentionMode mode);

struct MwtfOutput {
  Var fused;                    // T × N·d
  std::vector<Var> submodules;  // G_i, each T × d
};

MwtfOutput mwtf_forward(const Var& features, const FusionConfig& config,
                        const std::vector<FusionVars>& params);

}  // namespace aveloc
