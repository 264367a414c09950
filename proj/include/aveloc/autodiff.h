#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "aveloc/tensor.h"

namespace aveloc {

// A trainable tensor and its accumulated gradient (same shape).
struct Parameter {
  Tensor value;
  Tensor grad;
};

// Named trainable tensors in insertion order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Parameter& add(std::string name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t num_values() const;
  std::uint64_t seed() const { return seed_; }

  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Parameter& at(std::size_t i) { return entries_[i].param; }
  const Parameter& at(std::size_t i) const { return entries_[i].param; }
  std::vector<std::string> names() const;

  void zero_grad();

 private:
  struct Entry {
    std::string name;
    Parameter param;
  };
  std::uint64_t seed_;
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Xavier/Glorot uniform init: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Rng& rng, std::size_t fan_out, std::size_t fan_in);

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Tape::backward; empty if nothing flowed here.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording. Nodes are appended in evaluation order, so the
// reverse of creation order is a valid topological order for backward.
class Tape {
 public:
  // Receives the gradient of the node's output.
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (readable via Var::grad).
  Var variable(Tensor value);
  // Leaf bound to a stored parameter; backward adds into Parameter::grad.
  Var parameter(ParamStore& store, std::string_view name);

  // For op implementations: record an output computed from `inputs`.
  // Throws NumericError if `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  void accumulate(const Var& v, const Tensor& g);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(const Var& loss);

  // When off, ops record values only (no closures); used for forward-only
  // evaluation such as finite differences.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
    const Tensor* ref = nullptr;  // set instead of `value` for parameter leaves

    const Tensor& get() const { return ref != nullptr ? *ref : value; }
  };
  Var push(Node node);

  std::deque<Node> nodes_;
  bool recording_ = true;
};

// Axis over which a softmax normalizes: rows -> each row sums to 1,
// cols -> each column sums to 1.
enum class Axis { rows, cols };

enum class Activation { tanh, relu, sigmoid };

constexpr double kLayerNormEps = 1e-5;

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// X·Wᵀ (+ b per row). W is Dout×Din, b has Dout values.
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a * s with s a single-value Var.
Var scale(const Var& a, const Var& s);
Var exp(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var softmax(const Var& x, Axis axis);
Var log_softmax(const Var& x, Axis axis);
// Per-row normalization over the feature axis, non-learnable.
Var layer_norm(const Var& x, double eps = kLayerNormEps);
Var activation(const Var& x, Activation kind);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var reshape(const Var& x, Shape shape);
// Row t of x repeated `times` times consecutively.
Var repeat_rows(const Var& x, std::size_t times);
// Row t of x scaled by alpha[t] (alpha is T×1).
Var row_scale(const Var& x, const Var& alpha);
// out[t] = Σ_r weights[t, r] · regions[t·R + r] with weights T×R, regions (T·R)×D.
Var region_pool(const Var& weights, const Var& regions);

// Per-tensor finite-difference comparison.
struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double loss = 0.0;
  double max_rel_error() const;
};

// Builds a scalar loss on the given tape, reading parameters via
// Tape::parameter on the store it closes over.
using LossFn = std::function<Var(Tape&)>;

// Central differences (f(θ+ε) − f(θ−ε)) / 2ε for every entry of every
// parameter, compared to backprop with |a−b| / max(|a|, |b|, floor), where
// floor = max(1e-8, 1000·ε_mach·|L| / eps) sits above the rounding noise of L.
// Restores parameter values and leaves the backprop gradient in the store.
GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, double eps = 1e-6);

}  // namespace aveloc
