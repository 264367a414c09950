#include "aveloc/refine.h"

#include "aveloc/errors.h"

namespace aveloc {

BiLstmParams RefineParams::egta_lstm() const {
  if (egta_width % 2) throw ConfigError("EGTA width must be even");
  return BiLstmParams{"egta.lstm", input_width, egta_width / 2};
}

MwtfParams RefineParams::refiner_fusion() const {
  return MwtfParams{"refiner", input_width, refiner};
}

BiLstmParams RefineParams::classifier_lstm() const {
  if (classifier_width % 2) throw ConfigError("classifier width must be even");
  return BiLstmParams{"classifier.lstm", refiner.output_width(), classifier_width / 2};
}

void RefineParams::init(ParamStore& store, Rng& rng) const {
  if (num_classes < 2) throw ConfigError("need at least two classes");
  egta_lstm().init(store, rng);
  store.add("egta.w7", xavier_uniform(rng, 1, egta_width));
  refiner_fusion().init(store, rng);
  classifier_lstm().init(store, rng);
  store.add("classifier.w8", xavier_uniform(rng, num_classes, classifier_width));
}

RefineVars RefineParams::bind(Tape& tape, ParamStore& store) const {
  RefineVars v;
  v.egta_lstm = egta_lstm().bind(tape, store);
  v.egta_score = tape.parameter(store, "egta.w7");
  v.refiner = refiner_fusion().bind(tape, store);
  v.classifier_lstm = classifier_lstm().bind(tape, store);
  v.classifier = tape.parameter(store, "classifier.w8");
  return v;
}

Var egta(const Var& fused, const RefineVars& p) {
  const Var gamma = bilstm(layer_norm(fused), p.egta_lstm);
  return activation(linear(gamma, p.egta_score), Activation::sigmoid);
}

Var apply_mask(const Var& fused, const Var& alpha) { return row_scale(fused, alpha); }

Var refine_classify(const Var& masked, const RefineVars& p, const FusionConfig& refiner) {
  const Var refined = mwtf_forward(masked, refiner, p.refiner).fused;
  const Var logits = linear(bilstm(layer_norm(refined), p.classifier_lstm), p.classifier);
  return softmax(logits, Axis::rows);
}

}  // namespace aveloc
