#pragma once

#include <span>
#include <vector>

#include "aveloc/autodiff.h"

namespace aveloc {

// Floor applied to probabilities inside logs.
constexpr double kProbClamp = 1e-12;

// Initial contrastive temperature.
constexpr double kInitialTemperature = 0.07;

// Paired image/audio embeddings; every row L2-normalized. τ = exp(log_tau).
struct ContrastiveBatch {
  Tensor image;  // B × De
  Tensor audio;  // B × De
  double log_tau = 0.0;
};

// Symmetric InfoNCE: with S = Z_I·Z_Aᵀ / τ,
// L_I = mean_i −log softmax_row(S)[i, i], L_A = mean_j −log softmax_col(S)[j, j],
// returns L_I + L_A. Throws PreconditionError on unnormalized rows.
Var infonce(const Var& image, const Var& audio, const Var& log_tau);
double infonce(const ContrastiveBatch& batch);

// Mean binary cross-entropy of α (T×1, in (0,1)) against E ∈ {0,1}^T.
Var bce(const Var& alpha, std::span<const int> events);

// Mean over T of −log probs[t, true class]; `onehot` is T×C.
Var ce(const Var& probs, const Tensor& onehot);

struct LossWeights {
  double event = 0.3;     // λ1 on the BCE term
  double category = 0.7;  // λ2 on the CE term

  void validate() const;
};

// λ1·bce + λ2·ce.
Var hybrid_loss(const Var& alpha, std::span<const int> events, const Var& probs,
                const Tensor& onehot, const LossWeights& weights);
double hybrid_loss(double bce_value, double ce_value, const LossWeights& weights);

}  // namespace aveloc
