#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "aveloc/layers.h"
#include "aveloc/mwtf.h"

namespace aveloc {

struct RefineVars {
  BiLstmVars egta_lstm;
  Var egta_score;  // W7, 1 × d'
  std::vector<FusionVars> refiner;
  BiLstmVars classifier_lstm;
  Var classifier;  // W8, C × d''
};

// Event-guided temporal attention head, refiner fusion and classifier.
struct RefineParams {
  std::size_t input_width = 0;       // N·d
  std::size_t egta_width = 256;      // d', even (BiLSTM output)
  FusionConfig refiner;              // default single window [T]
  std::size_t classifier_width = 256;  // d'', even
  std::size_t num_classes = 0;

  void init(ParamStore& store, Rng& rng) const;
  RefineVars bind(Tape& tape, ParamStore& store) const;

  BiLstmParams egta_lstm() const;
  MwtfParams refiner_fusion() const;
  BiLstmParams classifier_lstm() const;
};

// α = sigmoid(W7 · BiLSTM(Norm(O))), T × 1.
Var egta(const Var& fused, const RefineVars& p);

// Row t of O scaled by α[t].
Var apply_mask(const Var& fused, const Var& alpha);

// y^p = softmax_rows(W8 · BiLSTM(Norm(MWTF_refiner(O')))), T × C.
Var refine_classify(const Var& masked, const RefineVars& p, const FusionConfig& refiner);

}  // namespace aveloc
