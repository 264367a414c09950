#include "aveloc/losses.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "aveloc/errors.h"

namespace aveloc {

namespace {

void require_unit_rows(const Tensor& z, const char* what) {
  if (z.rank() != 2) throw DimensionError(std::string(what) + ": embeddings must be B×De");
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) n2 += z(i, j) * z(i, j);
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw PreconditionError(std::string(what) + ": row " + std::to_string(i) +
                              " is not L2-normalized (norm " + std::to_string(std::sqrt(n2)) + ")");
    }
  }
}

// Row-wise one-hot check; returns the true class of every row.
std::vector<std::size_t> onehot_classes(const Tensor& y) {
  if (y.rank() != 2) throw PreconditionError("labels must be T×C");
  std::vector<std::size_t> cls(y.rows());
  for (std::size_t t = 0; t < y.rows(); ++t) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
      const double v = y(t, c);
      if (v == 1.0) {
        ++ones;
        cls[t] = c;
      } else if (v != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) {
      throw PreconditionError("label row " + std::to_string(t) + " is not one-hot");
    }
  }
  return cls;
}

}  // namespace

Var infonce(const Var& image, const Var& audio, const Var& log_tau) {
  require_unit_rows(image.value(), "infonce image");
  require_unit_rows(audio.value(), "infonce audio");
  if (image.shape() != audio.shape()) {
    throw DimensionError("infonce: image " + shape_str(image.shape()) + " and audio " +
                         shape_str(audio.shape()) + " differ");
  }
  Tape& t = image.tape();
  const std::size_t b = image.rows();
  const Var logits = scale(matmul(image, transpose(audio)), exp(scale(log_tau, -1.0)));
  const Var diag = t.constant(Tensor::identity(b));
  const double inv_b = -1.0 / static_cast<double>(b);
  const Var image_to_audio = scale(sum(mul(log_softmax(logits, Axis::rows), diag)), inv_b);
  const Var audio_to_image = scale(sum(mul(log_softmax(logits, Axis::cols), diag)), inv_b);
  return add(image_to_audio, audio_to_image);
}

double infonce(const ContrastiveBatch& batch) {
  Tape t;
  t.set_recording(false);
  return infonce(t.constant(batch.image), t.constant(batch.audio),
                 t.constant(Tensor({1, 1}, batch.log_tau)))
      .value()[0];
}

Var bce(const Var& alpha, std::span<const int> events) {
  const Tensor& a = alpha.value();
  if (a.size() != events.size()) {
    throw DimensionError("bce: " + std::to_string(a.size()) + " predictions for " +
                         std::to_string(events.size()) + " event labels");
  }
  const std::size_t n = a.size();
  double loss = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const int e = events[t];
    if (e != 0 && e != 1) throw PreconditionError("bce: event labels must be 0 or 1");
    const double p = e ? a[t] : 1.0 - a[t];
    loss -= std::log(std::max(p, kProbClamp));
  }
  loss /= static_cast<double>(n);
  std::vector<int> ev(events.begin(), events.end());
  return alpha.tape().record("bce", Tensor({1, 1}, loss), {alpha}, [alpha, ev](const Tensor& g) {
    const Tensor& a = alpha.value();
    const double scale = g[0] / static_cast<double>(a.size());
    Tensor ga(a.shape());
    for (std::size_t t = 0; t < a.size(); ++t) {
      const double p = ev[t] ? a[t] : 1.0 - a[t];
      if (p <= kProbClamp) continue;
      ga[t] = ev[t] ? -scale / p : scale / p;
    }
    alpha.tape().accumulate(alpha, ga);
  });
}

Var ce(const Var& probs, const Tensor& onehot) {
  const Tensor& p = probs.value();
  if (p.shape() != onehot.shape()) {
    throw DimensionError("ce: predictions " + shape_str(p.shape()) + " vs labels " +
                         shape_str(onehot.shape()));
  }
  const auto cls = onehot_classes(onehot);
  double loss = 0.0;
  for (std::size_t t = 0; t < cls.size(); ++t) loss -= std::log(std::max(p(t, cls[t]), kProbClamp));
  loss /= static_cast<double>(cls.size());
  return probs.tape().record("ce", Tensor({1, 1}, loss), {probs}, [probs, cls](const Tensor& g) {
    const Tensor& p = probs.value();
    const double scale = g[0] / static_cast<double>(cls.size());
    Tensor gp(p.shape());
    for (std::size_t t = 0; t < cls.size(); ++t) {
      const double pt = p(t, cls[t]);
      if (pt > kProbClamp) gp(t, cls[t]) = -scale / pt;
    }
    probs.tape().accumulate(probs, gp);
  });
}

void LossWeights::validate() const {
  if (!(event >= 0.0) || !(category >= 0.0)) {
    throw ConfigError("loss weights must be non-negative, got (" + std::to_string(event) + ", " +
                      std::to_string(category) + ")");
  }
}

Var hybrid_loss(const Var& alpha, std::span<const int> events, const Var& probs,
                const Tensor& onehot, const LossWeights& weights) {
  weights.validate();
  return add(scale(bce(alpha, events), weights.event), scale(ce(probs, onehot), weights.category));
}

double hybrid_loss(double bce_value, double ce_value, const LossWeights& weights) {
  weights.validate();
  return weights.event * bce_value + weights.category * ce_value;
}

}  // namespace aveloc
