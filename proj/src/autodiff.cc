#include "aveloc/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "aveloc/errors.h"

namespace aveloc {

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  Tensor grad(init.shape());
  entries_.push_back(Entry{std::move(name), Parameter{std::move(init), std::move(grad)}});
  return entries_.back().param;
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].param;
}

const Parameter& ParamStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].param;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.param.grad.fill(0.0);
}

Tensor xavier_uniform(Rng& rng, std::size_t fan_out, std::size_t fan_in) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.uniform_tensor({fan_out, fan_in}, -a, a);
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->nodes_[id_].get(); }
const Tensor& Var::grad() const { return tape_->nodes_[id_].grad; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  return push(Node{std::move(value), {}, {}, nullptr, false});
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("variable: non-finite value");
  return push(Node{std::move(value), {}, {}, nullptr, true});
}

Var Tape::parameter(ParamStore& store, std::string_view name) {
  Parameter& p = store.get(name);
  if (!p.value.all_finite()) {
    throw NumericError("parameter '" + std::string(name) + "' holds non-finite values");
  }
  // The node reads the stored tensor in place; parameters stay fixed while a tape is alive.
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw DimensionError(std::string(op) + ": operand from another tape");
    needs = needs || nodes_[v.id_].needs_grad;
  }
  needs = needs && recording_;
  return push(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw DimensionError(std::string(op) + ": operand from another tape");
    needs = needs || nodes_[v.id_].needs_grad;
  }
  needs = needs && recording_;
  return push(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_[v.id_];
  if (!n.needs_grad) return;
  if (n.grad.empty()) {
    const Tensor& value = n.get();
    if (g.size() != value.size()) {
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " for value " +
                           shape_str(value.shape()));
    }
    n.grad = g.reshaped(value.shape());
  } else {
    kernels::add_inplace(n.grad, g);
  }
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw DimensionError("backward: loss from another tape");
  Node& root = nodes_[loss.id_];
  if (root.get().size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(root.get().shape()));
  }
  if (!root.needs_grad) return;
  accumulate(loss, Tensor(root.get().shape(), 1.0));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param != nullptr) kernels::add_inplace(n.param->grad, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw DimensionError("operation on an unbound Var");
  return v.tape();
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Forward-only tapes drop closures, so the copy a backward pass would read is skipped.
std::shared_ptr<const Tensor> keep_for_backward(const Tape& t, const Tensor& y) {
  return t.recording() ? std::make_shared<const Tensor>(y) : nullptr;
}

// Softmax along rows (each row normalized) of an m×n buffer.
Tensor softmax_rows(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    const double mx = *std::max_element(xi, xi + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yi[j] /= s;
  }
  return y;
}

// Column-wise softmax; every column accumulates over rows in ascending order,
// exactly as softmax_rows does on the transpose.
Tensor softmax_cols(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> mx(x.row(0), x.row(0) + n), s(n, 0.0);
  for (std::size_t i = 1; i < m; ++i) {
    const double* xi = x.row(i);
    for (std::size_t j = 0; j < n; ++j) mx[j] = std::max(mx[j], xi[j]);
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) s[j] += (yi[j] = std::exp(xi[j] - mx[j]));
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) yi[j] /= s[j];
  }
  return y;
}

Tensor log_softmax_rows(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    const double mx = *std::max_element(xi, xi + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xi[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) yi[j] = xi[j] - lse;
  }
  return y;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  Tensor out = kernels::matmul(a.value(), b.value());
  return t.record("matmul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(g, b.value()));
    if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(a.value(), g));
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record("transpose", kernels::transpose(a.value()), {a},
                  [a](const Tensor& g) { a.tape().accumulate(a, kernels::transpose(g)); });
}

Var linear(const Var& x, const Var& w) {
  Tape& t = tape_of(x);
  require_rank2("linear", x.value());
  require_rank2("linear", w.value());
  if (x.cols() != w.cols()) {
    throw DimensionError("linear: input width " + std::to_string(x.cols()) +
                         " does not match weight " + shape_str(w.shape()));
  }
  Tensor out = kernels::matmul_nt(x.value(), w.value());
  return t.record("linear", std::move(out), {x, w}, [x, w](const Tensor& g) {
    Tape& t = x.tape();
    if (t.needs_grad(x)) t.accumulate(x, kernels::matmul(g, w.value()));
    if (t.needs_grad(w)) t.accumulate(w, kernels::matmul_tn(g, x.value()));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var xw = linear(x, w);
  Tape& t = xw.tape();
  if (b.value().size() != xw.cols()) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " for output width " +
                         std::to_string(xw.cols()));
  }
  Tensor out = xw.value();
  const std::size_t n = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) += b.value()[j];
  }
  return t.record("linear_bias", std::move(out), {xw, b}, [xw, b](const Tensor& g) {
    Tape& t = xw.tape();
    t.accumulate(xw, g);
    if (t.needs_grad(b)) {
      Tensor gb(b.shape());
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      }
      t.accumulate(b, gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  kernels::add_inplace(out, b.value());
  return t.record("add", std::move(out), {a, b}, [a, b](const Tensor& g) {
    a.tape().accumulate(a, g);
    b.tape().accumulate(b, g);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tape& t = a.tape();
    if (t.needs_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      t.accumulate(a, ga);
    }
    if (t.needs_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      t.accumulate(b, gb);
    }
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return t.record("scale", std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor ga = g;
    for (double& v : ga.data()) v *= s;
    a.tape().accumulate(a, ga);
  });
}

Var scale(const Var& a, const Var& s) {
  Tape& t = tape_of(a);
  if (s.value().size() != 1) throw DimensionError("scale: factor must be a single value");
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.data()) v *= sv;
  return t.record("scale_var", std::move(out), {a, s}, [a, s](const Tensor& g) {
    Tape& t = a.tape();
    const double sv = s.value()[0];
    if (t.needs_grad(a)) {
      Tensor ga = g;
      for (double& v : ga.data()) v *= sv;
      t.accumulate(a, ga);
    }
    if (t.needs_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.value()[i];
      t.accumulate(s, Tensor(s.shape(), acc));
    }
  });
}

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  auto kept = keep_for_backward(t, out);
  return t.record("exp", std::move(out), {a}, [a, kept](const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= (*kept)[i];
    a.tape().accumulate(a, ga);
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record("sum", Tensor({1, 1}, s), {a}, [a](const Tensor& g) {
    a.tape().accumulate(a, Tensor(a.shape(), g[0]));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax(const Var& x, Axis axis) {
  Tape& t = tape_of(x);
  require_rank2("softmax", x.value());
  Tensor y = axis == Axis::rows ? softmax_rows(x.value()) : softmax_cols(x.value());
  auto kept = keep_for_backward(t, y);
  return t.record("softmax", std::move(y), {x}, [x, kept, axis](const Tensor& g) {
    const Tensor& y = *kept;
    Tensor gx(y.shape());
    const std::size_t m = y.rows(), n = y.cols();
    if (axis == Axis::rows) {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < n; ++j) gx(i, j) = y(i, j) * (g(i, j) - dot);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += g(i, j) * y(i, j);
        for (std::size_t i = 0; i < m; ++i) gx(i, j) = y(i, j) * (g(i, j) - dot);
      }
    }
    x.tape().accumulate(x, gx);
  });
}

Var log_softmax(const Var& x, Axis axis) {
  Tape& t = tape_of(x);
  require_rank2("log_softmax", x.value());
  Tensor y = axis == Axis::rows
                 ? log_softmax_rows(x.value())
                 : kernels::transpose(log_softmax_rows(kernels::transpose(x.value())));
  auto kept = keep_for_backward(t, y);
  return t.record("log_softmax", std::move(y), {x}, [x, kept, axis](const Tensor& g) {
    const Tensor& y = *kept;
    Tensor gx(y.shape());
    const std::size_t m = y.rows(), n = y.cols();
    if (axis == Axis::rows) {
      for (std::size_t i = 0; i < m; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += g(i, j);
        for (std::size_t j = 0; j < n; ++j) gx(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        double gs = 0.0;
        for (std::size_t i = 0; i < m; ++i) gs += g(i, j);
        for (std::size_t i = 0; i < m; ++i) gx(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
      }
    }
    x.tape().accumulate(x, gx);
  });
}

Var layer_norm(const Var& x, double eps) {
  Tape& t = tape_of(x);
  require_rank2("layer_norm", x.value());
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor y(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xv.row(i);
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = r;
    for (std::size_t j = 0; j < n; ++j) y(i, j) = (xi[j] - mu) * r;
  }
  auto kept = keep_for_backward(t, y);
  return t.record("layer_norm", std::move(y), {x}, [x, kept, inv_std](const Tensor& g) {
    const Tensor& y = *kept;
    const std::size_t m = y.rows(), n = y.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor gx(y.shape());
    for (std::size_t i = 0; i < m; ++i) {
      double g_mean = 0.0, gy_mean = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        g_mean += g(i, j);
        gy_mean += g(i, j) * y(i, j);
      }
      g_mean *= inv_n;
      gy_mean *= inv_n;
      const double r = (*inv_std)[i];
      for (std::size_t j = 0; j < n; ++j) gx(i, j) = r * (g(i, j) - g_mean - y(i, j) * gy_mean);
    }
    x.tape().accumulate(x, gx);
  });
}

Var activation(const Var& x, Activation kind) {
  Tape& t = tape_of(x);
  Tensor y = x.value();
  switch (kind) {
    case Activation::tanh:
      for (double& v : y.data()) v = std::tanh(v);
      break;
    case Activation::relu:
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::sigmoid:
      for (double& v : y.data()) v = sigmoid(v);
      break;
  }
  auto kept = keep_for_backward(t, y);
  return t.record("activation", std::move(y), {x}, [x, kept, kind](const Tensor& g) {
    const Tensor& y = *kept;
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      switch (kind) {
        case Activation::tanh: gx[i] *= 1.0 - y[i] * y[i]; break;
        case Activation::relu: gx[i] = y[i] > 0.0 ? gx[i] : 0.0; break;
        case Activation::sigmoid: gx[i] *= y[i] * (1.0 - y[i]); break;
      }
    }
    x.tape().accumulate(x, gx);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    require_rank2("concat_cols", p.value());
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts " + std::to_string(m) + " and " +
                           std::to_string(p.rows()) + " differ");
    }
    n += p.cols();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.value().row(i), w, out.row(i) + off);
    off += w;
  }
  return t.record("concat_cols", std::move(out), parts, [parts](const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (p.tape().needs_grad(p)) {
        Tensor gp({p.rows(), w});
        for (std::size_t i = 0; i < p.rows(); ++i) std::copy_n(g.row(i) + off, w, gp.row(i));
        p.tape().accumulate(p, gp);
      }
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    require_rank2("concat_rows", p.value());
    if (p.cols() != n) {
      throw DimensionError("concat_rows: widths " + std::to_string(n) + " and " +
                           std::to_string(p.cols()) + " differ");
    }
    m += p.rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return t.record("concat_rows", Tensor({m, n}, std::move(data)), parts, [parts](const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t len = p.value().size();
      if (p.tape().needs_grad(p)) {
        std::vector<double> gp(g.data().begin() + off, g.data().begin() + off + len);
        p.tape().accumulate(p, Tensor(p.shape(), std::move(gp)));
      }
      off += len;
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  require_rank2("slice_rows", x.value());
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  std::vector<double> data(x.value().row(begin), x.value().row(begin) + count * n);
  return t.record("slice_rows", Tensor({count, n}, std::move(data)), {x},
                  [x, begin, count](const Tensor& g) {
                    Tensor gx(x.shape());
                    std::copy(g.data().begin(), g.data().end(), gx.row(begin));
                    x.tape().accumulate(x, gx);
                  });
}

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x}, [x](const Tensor& g) {
    x.tape().accumulate(x, g.reshaped(x.shape()));
  });
}

Var repeat_rows(const Var& x, std::size_t times) {
  Tape& t = tape_of(x);
  require_rank2("repeat_rows", x.value());
  if (times == 0) throw DimensionError("repeat_rows: zero repetitions");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m * times, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = 0; r < times; ++r) std::copy_n(x.value().row(i), n, out.row(i * times + r));
  }
  return t.record("repeat_rows", std::move(out), {x}, [x, times](const Tensor& g) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor gx({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < times; ++r) {
        const double* gr = g.row(i * times + r);
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += gr[j];
      }
    }
    x.tape().accumulate(x, gx);
  });
}

Var row_scale(const Var& x, const Var& alpha) {
  Tape& t = tape_of(x);
  require_rank2("row_scale", x.value());
  if (alpha.value().size() != x.rows()) {
    throw DimensionError("row_scale: mask " + shape_str(alpha.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t n = out.cols();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const double a = alpha.value()[i];
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= a;
  }
  return t.record("row_scale", std::move(out), {x, alpha}, [x, alpha](const Tensor& g) {
    Tape& t = x.tape();
    const std::size_t m = g.rows(), n = g.cols();
    if (t.needs_grad(x)) {
      Tensor gx = g;
      for (std::size_t i = 0; i < m; ++i) {
        const double a = alpha.value()[i];
        for (std::size_t j = 0; j < n; ++j) gx(i, j) *= a;
      }
      t.accumulate(x, gx);
    }
    if (t.needs_grad(alpha)) {
      Tensor ga(alpha.shape());
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += g(i, j) * x.value()(i, j);
        ga[i] = s;
      }
      t.accumulate(alpha, ga);
    }
  });
}

Var region_pool(const Var& weights, const Var& regions) {
  Tape& t = tape_of(weights);
  require_rank2("region_pool", weights.value());
  require_rank2("region_pool", regions.value());
  const std::size_t steps = weights.rows(), r = weights.cols(), d = regions.cols();
  if (regions.rows() != steps * r) {
    throw DimensionError("region_pool: weights " + shape_str(weights.shape()) +
                         " do not match regions " + shape_str(regions.shape()));
  }
  Tensor out({steps, d});
  for (std::size_t s = 0; s < steps; ++s) {
    double* o = out.row(s);
    for (std::size_t k = 0; k < r; ++k) {
      const double w = weights.value()(s, k);
      const double* v = regions.value().row(s * r + k);
      for (std::size_t j = 0; j < d; ++j) o[j] += w * v[j];
    }
  }
  return t.record("region_pool", std::move(out), {weights, regions},
                  [weights, regions](const Tensor& g) {
                    Tape& t = weights.tape();
                    const std::size_t steps = weights.rows(), r = weights.cols(),
                                      d = regions.cols();
                    if (t.needs_grad(weights)) {
                      Tensor gw(weights.shape());
                      for (std::size_t s = 0; s < steps; ++s) {
                        for (std::size_t k = 0; k < r; ++k) {
                          const double* v = regions.value().row(s * r + k);
                          double acc = 0.0;
                          for (std::size_t j = 0; j < d; ++j) acc += g(s, j) * v[j];
                          gw(s, k) = acc;
                        }
                      }
                      t.accumulate(weights, gw);
                    }
                    if (t.needs_grad(regions)) {
                      Tensor gr(regions.shape());
                      for (std::size_t s = 0; s < steps; ++s) {
                        for (std::size_t k = 0; k < r; ++k) {
                          const double w = weights.value()(s, k);
                          double* o = gr.row(s * r + k);
                          for (std::size_t j = 0; j < d; ++j) o[j] = w * g(s, j);
                        }
                      }
                      t.accumulate(regions, gr);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Gradient check

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : tensors) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

double eval_loss(const LossFn& loss_fn) {
  Tape tape;
  tape.set_recording(false);
  const Var loss = loss_fn(tape);
  if (loss.value().size() != 1) throw DimensionError("grad_check: loss must be scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params, double eps) {
  GradCheckReport report;
  params.zero_grad();
  {
    Tape tape;
    const Var loss = loss_fn(tape);
    if (loss.value().size() != 1) throw DimensionError("grad_check: loss must be scalar");
    report.loss = loss.value()[0];
    if (!std::isfinite(report.loss)) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
  }
  // Rounding in the loss shifts a central difference by about ulp(L)/eps, so
  // gradients below a thousand times that are compared absolutely.
  const double floor =
      std::max(1e-8, 1e3 * std::numeric_limits<double>::epsilon() * std::abs(report.loss) / eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params.at(p);
    GradCheckEntry entry;
    entry.name = params.name(p);
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + eps;
      const double up = eval_loss(loss_fn);
      param.value[i] = saved - eps;
      const double down = eval_loss(loss_fn);
      param.value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = param.grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > entry.max_rel_error || i == 0) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.tensors.push_back(std::move(entry));
  }
  return report;
}

}  // namespace aveloc
