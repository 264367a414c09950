#include "aveloc/layers.h"

#include <cmath>
#include <memory>
#include <vector>

#include "aveloc/errors.h"

namespace aveloc {

namespace {

constexpr std::array<const char*, 4> kGateNames = {"input", "forget", "cell", "output"};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// The four gates of one direction stacked into a 4H × Z matrix.
struct StackedGates {
  std::size_t hidden = 0;
  std::size_t z_width = 0;
  std::vector<double> wt;  // Z × 4H: column r is row r of the stacked gate weights
  std::vector<double> b;   // 4H

  explicit StackedGates(const LstmDirectionVars& d) {
    hidden = d.weight[0].rows();
    z_width = d.weight[0].cols();
    const std::size_t rows = 4 * hidden;
    wt.resize(rows * z_width);
    b.reserve(rows);
    for (std::size_t g = 0; g < 4; ++g) {
      const Tensor& wg = d.weight[g].value();
      const Tensor& bg = d.bias[g].value();
      if (wg.rows() != hidden || wg.cols() != z_width || bg.size() != hidden) {
        throw DimensionError("bilstm: inconsistent gate shapes " + shape_str(wg.shape()) + " / " +
                             shape_str(bg.shape()));
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        const double* src = wg.row(j);
        for (std::size_t k = 0; k < z_width; ++k) wt[k * rows + g * hidden + j] = src[k];
      }
      b.insert(b.end(), bg.data().begin(), bg.data().end());
    }
  }
};

// Per-step activations of one direction, indexed by sequence position.
struct DirectionTrace {
  std::vector<double> gates;   // T × 4H, post-activation
  std::vector<double> cell;    // T × H
  std::vector<double> tanh_c;  // T × H
  std::vector<double> hidden;  // T × H
};

std::size_t step_time(std::size_t step, std::size_t steps, bool reverse) {
  return reverse ? steps - 1 - step : step;
}

void run_direction(const Tensor& x, const StackedGates& p, bool reverse, Tensor& out,
                   std::size_t out_offset, DirectionTrace& tr) {
  const std::size_t steps = x.rows(), din = x.cols(), hd = p.hidden, zw = p.z_width;
  tr.gates.assign(steps * 4 * hd, 0.0);
  tr.cell.assign(steps * hd, 0.0);
  tr.tanh_c.assign(steps * hd, 0.0);
  tr.hidden.assign(steps * hd, 0.0);
  std::vector<double> h(hd, 0.0), c(hd, 0.0), z(zw), pre(4 * hd);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = step_time(s, steps, reverse);
    std::copy_n(x.row(t), din, z.begin());
    std::copy(h.begin(), h.end(), z.begin() + static_cast<std::ptrdiff_t>(din));
    std::copy(p.b.begin(), p.b.end(), pre.begin());
    // Four inputs per pass; each preactivation still sums over k in order.
    const std::size_t g4 = 4 * hd;
    double* __restrict pr = pre.data();
    std::size_t k = 0;
    for (; k + 4 <= zw; k += 4) {
      const double z0 = z[k], z1 = z[k + 1], z2 = z[k + 2], z3 = z[k + 3];
      const double* __restrict w0 = p.wt.data() + k * g4;
      const double* __restrict w1 = w0 + g4;
      const double* __restrict w2 = w1 + g4;
      const double* __restrict w3 = w2 + g4;
      for (std::size_t r = 0; r < g4; ++r) {
        double v = pr[r];
        v += w0[r] * z0;
        v += w1[r] * z1;
        v += w2[r] * z2;
        v += w3[r] * z3;
        pr[r] = v;
      }
    }
    for (; k < zw; ++k) {
      const double zk = z[k];
      const double* __restrict wk = p.wt.data() + k * g4;
      for (std::size_t r = 0; r < g4; ++r) pr[r] += wk[r] * zk;
    }
    double* gates = tr.gates.data() + t * 4 * hd;
    for (std::size_t j = 0; j < hd; ++j) {
      const double ig = sigmoid(pre[j]);
      const double fg = sigmoid(pre[hd + j]);
      const double gg = std::tanh(pre[2 * hd + j]);
      const double og = sigmoid(pre[3 * hd + j]);
      gates[j] = ig;
      gates[hd + j] = fg;
      gates[2 * hd + j] = gg;
      gates[3 * hd + j] = og;
      c[j] = fg * c[j] + ig * gg;
      const double tc = std::tanh(c[j]);
      h[j] = og * tc;
      tr.cell[t * hd + j] = c[j];
      tr.tanh_c[t * hd + j] = tc;
      tr.hidden[t * hd + j] = h[j];
      out(t, out_offset + j) = h[j];
    }
  }
}

void backprop_direction(const Tensor& x, const StackedGates& p, bool reverse, const Tensor& g_out,
                        std::size_t out_offset, const DirectionTrace& tr, Tensor& gx,
                        std::vector<double>& gw, std::vector<double>& gb) {
  const std::size_t steps = x.rows(), din = x.cols(), hd = p.hidden, zw = p.z_width;
  std::vector<double> dh_next(hd, 0.0), dc_next(hd, 0.0), z(zw), da(4 * hd), dz(zw);
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t t = step_time(s, steps, reverse);
    const bool has_prev = s > 0;
    const std::size_t tp = has_prev ? step_time(s - 1, steps, reverse) : 0;
    const double* gates = tr.gates.data() + t * 4 * hd;
    std::copy_n(x.row(t), din, z.begin());
    for (std::size_t j = 0; j < hd; ++j) {
      z[din + j] = has_prev ? tr.hidden[tp * hd + j] : 0.0;
    }
    for (std::size_t j = 0; j < hd; ++j) {
      const double ig = gates[j], fg = gates[hd + j], gg = gates[2 * hd + j],
                   og = gates[3 * hd + j];
      const double tc = tr.tanh_c[t * hd + j];
      const double c_prev = has_prev ? tr.cell[tp * hd + j] : 0.0;
      const double dh = g_out(t, out_offset + j) + dh_next[j];
      const double d_o = dh * tc;
      const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
      dc_next[j] = dc * fg;
      da[j] = dc * gg * ig * (1.0 - ig);
      da[hd + j] = dc * c_prev * fg * (1.0 - fg);
      da[2 * hd + j] = dc * ig * (1.0 - gg * gg);
      da[3 * hd + j] = d_o * og * (1.0 - og);
    }
    for (std::size_t r = 0; r < 4 * hd; ++r) gb[r] += da[r];
    for (std::size_t k = 0; k < zw; ++k) {
      const double zk = z[k];
      const double* wk = p.wt.data() + k * 4 * hd;
      double* gk = gw.data() + k * 4 * hd;
      double acc = 0.0;
      for (std::size_t r = 0; r < 4 * hd; ++r) {
        gk[r] += da[r] * zk;
        acc += da[r] * wk[r];
      }
      dz[k] = acc;
    }
    for (std::size_t k = 0; k < din; ++k) gx(t, k) += dz[k];
    for (std::size_t j = 0; j < hd; ++j) dh_next[j] = dz[din + j];
  }
}

// `gw` is laid out like StackedGates::wt (Z × 4H).
void accumulate_direction(const LstmDirectionVars& d, const std::vector<double>& gw,
                          const std::vector<double>& gb) {
  const std::size_t hd = d.weight[0].rows(), zw = d.weight[0].cols();
  for (std::size_t g = 0; g < 4; ++g) {
    Tape& t = d.weight[g].tape();
    if (t.needs_grad(d.weight[g])) {
      Tensor gwg({hd, zw});
      for (std::size_t j = 0; j < hd; ++j)
        for (std::size_t k = 0; k < zw; ++k) gwg(j, k) = gw[k * 4 * hd + g * hd + j];
      t.accumulate(d.weight[g], gwg);
    }
    if (t.needs_grad(d.bias[g])) {
      std::vector<double> slice(gb.begin() + static_cast<std::ptrdiff_t>(g * hd),
                                gb.begin() + static_cast<std::ptrdiff_t>((g + 1) * hd));
      t.accumulate(d.bias[g], Tensor(d.bias[g].shape(), std::move(slice)));
    }
  }
}

std::string gate_name(const std::string& prefix, const char* dir, const char* kind,
                      std::size_t g) {
  return prefix + "." + dir + "." + kind + "_" + kGateNames[g];
}

}  // namespace

void BiLstmParams::init(ParamStore& store, Rng& rng) const {
  if (input_width == 0 || hidden == 0) throw ConfigError(prefix + ": zero BiLSTM width");
  for (const char* dir : {"fwd", "bwd"}) {
    for (std::size_t g = 0; g < 4; ++g) {
      store.add(gate_name(prefix, dir, "w", g), xavier_uniform(rng, hidden, input_width + hidden));
    }
    for (std::size_t g = 0; g < 4; ++g) {
      store.add(gate_name(prefix, dir, "b", g), Tensor({hidden}, g == kForgetGate ? 1.0 : 0.0));
    }
  }
}

BiLstmVars BiLstmParams::bind(Tape& tape, ParamStore& store) const {
  BiLstmVars v;
  for (std::size_t g = 0; g < 4; ++g) {
    v.forward.weight[g] = tape.parameter(store, gate_name(prefix, "fwd", "w", g));
    v.forward.bias[g] = tape.parameter(store, gate_name(prefix, "fwd", "b", g));
    v.backward.weight[g] = tape.parameter(store, gate_name(prefix, "bwd", "w", g));
    v.backward.bias[g] = tape.parameter(store, gate_name(prefix, "bwd", "b", g));
  }
  return v;
}

Var bilstm(const Var& x, const BiLstmVars& p) {
  if (!x.valid() || x.value().rank() != 2) throw DimensionError("bilstm: input must be T×Din");
  auto fwd = std::make_shared<StackedGates>(p.forward);
  auto bwd = std::make_shared<StackedGates>(p.backward);
  const std::size_t hd = fwd->hidden;
  if (bwd->hidden != hd || fwd->z_width != x.cols() + hd || bwd->z_width != fwd->z_width) {
    throw DimensionError("bilstm: input width " + std::to_string(x.cols()) +
                         " does not match gate weights " +
                         shape_str(p.forward.weight[0].shape()));
  }
  Tensor out({x.rows(), 2 * hd});
  auto traces = std::make_shared<std::array<DirectionTrace, 2>>();
  run_direction(x.value(), *fwd, false, out, 0, (*traces)[0]);
  run_direction(x.value(), *bwd, true, out, hd, (*traces)[1]);

  std::vector<Var> inputs{x};
  for (const auto* d : {&p.forward, &p.backward}) {
    inputs.insert(inputs.end(), d->weight.begin(), d->weight.end());
    inputs.insert(inputs.end(), d->bias.begin(), d->bias.end());
  }
  return x.tape().record("bilstm", std::move(out), inputs,
                         [x, p, fwd, bwd, traces](const Tensor& g) {
                           const std::size_t hd = fwd->hidden;
                           Tensor gx(x.shape());
                           std::vector<double> gw(fwd->wt.size()), gb(fwd->b.size());
                           backprop_direction(x.value(), *fwd, false, g, 0, (*traces)[0], gx, gw, gb);
                           accumulate_direction(p.forward, gw, gb);
                           std::fill(gw.begin(), gw.end(), 0.0);
                           std::fill(gb.begin(), gb.end(), 0.0);
                           backprop_direction(x.value(), *bwd, true, g, hd, (*traces)[1], gx, gw, gb);
                           accumulate_direction(p.backward, gw, gb);
                           x.tape().accumulate(x, gx);
                         });
}

void AgvaParams::init(ParamStore& store, Rng& rng) const {
  if (hidden == 0) throw ConfigError(prefix + ": AGVA hidden width must be >= 1");
  store.add(prefix + ".video_proj", xavier_uniform(rng, hidden, video_width));
  store.add(prefix + ".audio_proj", xavier_uniform(rng, hidden, audio_width));
  store.add(prefix + ".score", xavier_uniform(rng, 1, hidden));
}

AgvaVars AgvaParams::bind(Tape& tape, ParamStore& store) const {
  return AgvaVars{tape.parameter(store, prefix + ".video_proj"),
                  tape.parameter(store, prefix + ".audio_proj"),
                  tape.parameter(store, prefix + ".score")};
}

AgvaOutput agva(const Var& video, const Var& audio, const AgvaVars& p) {
  const Shape& vs = video.shape();
  if (vs.size() != 3) throw DimensionError("agva: video must be T×R×Dv, got " + shape_str(vs));
  const std::size_t steps = vs[0], regions = vs[1], dv = vs[2];
  if (audio.value().rank() != 2 || audio.rows() != steps) {
    throw DimensionError("agva: audio " + shape_str(audio.shape()) + " does not match video " +
                         shape_str(vs));
  }
  const Var flat = reshape(video, {steps * regions, dv});
  const Var joint = activation(
      add(linear(flat, p.video_proj), repeat_rows(linear(audio, p.audio_proj), regions)),
      Activation::tanh);
  const Var scores = reshape(linear(joint, p.score), {steps, regions});
  const Var weights = softmax(scores, Axis::rows);
  return AgvaOutput{region_pool(weights, flat), weights};
}

}  // namespace aveloc
