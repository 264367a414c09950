#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "aveloc/autodiff.h"

namespace aveloc {

// Gate order used for every per-gate array below.
enum LstmGate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };

struct LstmDirectionVars {
  std::array<Var, 4> weight;  // each H × (Din + H), columns [x | h]
  std::array<Var, 4> bias;    // each H
};

struct BiLstmVars {
  LstmDirectionVars forward;
  LstmDirectionVars backward;
};

// Single-layer bidirectional LSTM, zero initial states, output width 2H.
struct BiLstmParams {
  std::string prefix;
  std::size_t input_width = 0;
  std::size_t hidden = 0;

  std::size_t output_width() const { return 2 * hidden; }
  // Xavier-uniform gate weights, zero biases except the forget gate (1.0).
  void init(ParamStore& store, Rng& rng) const;
  BiLstmVars bind(Tape& tape, ParamStore& store) const;
};

// Row t of the output is [h_fwd(t) | h_bwd(t)].
Var bilstm(const Var& x, const BiLstmVars& p);

struct AgvaVars {
  Var video_proj;  // h × Dv
  Var audio_proj;  // h × Da
  Var score;       // 1 × h
};

// Audio-guided spatial attention over video regions.
struct AgvaParams {
  std::string prefix;
  std::size_t video_width = 0;
  std::size_t audio_width = 0;
  std::size_t hidden = 128;

  void init(ParamStore& store, Rng& rng) const;
  AgvaVars bind(Tape& tape, ParamStore& store) const;
};

struct AgvaOutput {
  Var pooled;   // T × Dv
  Var weights;  // T × R, rows sum to 1
};

// scores(t, r) = score · tanh(Uv·v(t,r) + Ua·a(t)), softmax over regions,
// pooled(t) = Σ_r weight(t, r) · v(t, r).
// `video` is T×R×Dv, `audio` is T×Da.
AgvaOutput agva(const Var& video, const Var& audio, const AgvaVars& p);

}  // namespace aveloc
