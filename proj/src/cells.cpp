// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/cells.hpp"

#include <cmath>
#include <fmt/format.h>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

using ag::Var;

Tensor uniform(Tensor::Dims dims, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor kernel(int64_t out, int64_t in, int64_t k, std::mt19937_64& rng) {
  return uniform({out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in * k * k)), rng);
}

void expect_dims(const Tensor& t, const Tensor::Dims& want, const char* name) {
  if (t.dims() != want) {
    throw ShapeError(fmt::format("cell parameter {} has shape {}, expected {}", name, t.shape_str(),
                                 dims_str(want)));
  }
}

void check_state(const Tensor& c, const Tensor& h) {
  if (!c.same_shape(h)) {
    throw ShapeError("cell state c " + c.shape_str() + " and h " + h.shape_str() + " differ");
  }
}

void check_spatial(const Tensor& x, const Tensor& state) {
  if (x.rank() != 4 || state.rank() != 4 || x.batch() != state.batch() ||
      x.height() != state.height() || x.width() != state.width()) {
    throw ShapeError("input " + x.shape_str() + " does not match cell state " + state.shape_str());
  }
}

Var zeros_like_state(ag::Tape& tape, const Tensor& x, int64_t channels) {
  return tape.constant(Tensor({x.batch(), channels, x.height(), x.width()}));
}

// Bias-free affine map for FC-LSTM rows: x (N, D) times w (D, K).
Var matmul(Var x, Var w) {
  return ag::dense(x, w, x.tape().constant(Tensor({w.value().dim(1)})));
}

CellState<Var> bind_state(ag::Tape& tape, const CellState<Tensor>& s) {
  check_state(s.c, s.h);
  return {tape.constant(s.c), tape.constant(s.h)};
}

CellState<Tensor> values(const CellState<Var>& s) { return {s.c.value(), s.h.value()}; }

StepTrace<Tensor> values(const StepTrace<Var>& t) {
  return {t.attn.value(),       t.x_hat.value(),       t.bottleneck.value(),
          t.input_gate.value(), t.forget_gate.value(), t.output_gate.value()};
}

}  // namespace

// --- parameter construction -------------------------------------------------

AttnConvLstmParams zero_attn_cell(const AttnCellShape& s) {
  const int64_t k = s.kernel;
  AttnConvLstmParams p;
  p.w_b = Tensor({s.bottleneck_channels, s.input_channels + s.cell_channels, k, k});
  p.bias_b = Tensor({s.bottleneck_channels});
  for (Tensor* w : {&p.w_i, &p.w_f, &p.w_o, &p.w_b2}) {
    *w = Tensor({s.cell_channels, s.bottleneck_channels, k, k});
  }
  for (Tensor* b : {&p.bias_i, &p.bias_f, &p.bias_o, &p.bias_f2, &p.bias_b2}) {
    *b = Tensor({s.cell_channels});
  }
  p.w_h = Tensor({s.attn_channels, 2 * s.cell_channels, k, k});
  p.w_x = Tensor({s.attn_channels, s.input_channels, k, k});
  p.bias_y = Tensor({2 * s.attn_channels});
  p.w_z = Tensor({1, 2 * s.attn_channels, k, k});
  return p;
}

AttnConvLstmParams init_attn_cell(const AttnCellShape& s, std::mt19937_64& rng) {
  if (s.kernel % 2 == 0) throw ValidationError("cell kernel size must be odd");
  AttnConvLstmParams p = zero_attn_cell(s);
  const int64_t k = s.kernel;
  p.w_b = kernel(s.bottleneck_channels, s.input_channels + s.cell_channels, k, rng);
  p.w_i = kernel(s.cell_channels, s.bottleneck_channels, k, rng);
  p.w_f = kernel(s.cell_channels, s.bottleneck_channels, k, rng);
  p.w_o = kernel(s.cell_channels, s.bottleneck_channels, k, rng);
  p.w_b2 = kernel(s.cell_channels, s.bottleneck_channels, k, rng);
  p.w_h = kernel(s.attn_channels, 2 * s.cell_channels, k, rng);
  p.w_x = kernel(s.attn_channels, s.input_channels, k, rng);
  p.w_z = kernel(1, 2 * s.attn_channels, k, rng);
  p.bias_f2 = Tensor({s.cell_channels}, 1.0);
  return p;
}

AttnCellShape shape_of(const AttnConvLstmParams& p) {
  if (p.w_b.rank() != 4 || p.w_i.rank() != 4 || p.w_h.rank() != 4) {
    throw ShapeError("cell kernels must be rank 4");
  }
  AttnCellShape s;
  s.bottleneck_channels = p.w_b.dim(0);
  s.cell_channels = p.w_i.dim(0);
  s.input_channels = p.w_b.dim(1) - s.cell_channels;
  s.attn_channels = p.w_h.dim(0);
  s.kernel = p.w_b.dim(2);
  return s;
}

void validate(const AttnConvLstmParams& p) {
  const AttnCellShape s = shape_of(p);
  if (s.input_channels < 1) throw ShapeError("cell w_b has too few input channels");
  if (s.kernel % 2 == 0) throw ShapeError("cell kernel size must be odd");
  const AttnConvLstmParams want = zero_attn_cell(s);
  AttnConvLstmParams::fields(p, [&](const char* name, const Tensor& t) {
    const Tensor* ref = nullptr;
    AttnConvLstmParams::fields(want, [&](const char* n2, const Tensor& t2) {
      if (std::string_view(n2) == name) ref = &t2;
    });
    expect_dims(t, ref->dims(), name);
  });
}

FcLstmParams init_fc_lstm(int64_t input_size, int64_t hidden_size, std::mt19937_64& rng) {
  FcLstmParams p;
  const double sx = 1.0 / std::sqrt(static_cast<double>(input_size));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  for (Tensor* w : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo}) *w = uniform({input_size, hidden_size}, sx, rng);
  for (Tensor* w : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho}) *w = uniform({hidden_size, hidden_size}, sh, rng);
  for (Tensor* w : {&p.w_ci, &p.w_cf, &p.w_co}) *w = uniform({1, hidden_size}, sh, rng);
  return p;
}

ConvLstmParams init_conv_lstm(int64_t input_channels, int64_t cell_channels, int64_t k, int64_t height,
                              int64_t width, std::mt19937_64& rng) {
  ConvLstmParams p;
  for (Tensor* w : {&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo}) *w = kernel(cell_channels, input_channels, k, rng);
  for (Tensor* w : {&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho}) *w = kernel(cell_channels, cell_channels, k, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(cell_channels));
  for (Tensor* w : {&p.w_ci, &p.w_cf, &p.w_co}) *w = uniform({1, cell_channels, height, width}, s, rng);
  return p;
}

// --- taped steps -------------------------------------------------------------

CellState<Var> fc_lstm_step(const FcLstmWeights<Var>& p, Var x, const CellState<Var>& prev) {
  check_state(prev.c.value(), prev.h.value());
  const int64_t hidden = p.w_hi.value().dim(0);
  if (x.value().rank() != 2 || prev.c.value().rank() != 2 || prev.c.value().dim(1) != hidden ||
      x.value().dim(0) != prev.c.value().dim(0)) {
    throw ShapeError("fc_lstm_step: input " + x.value().shape_str() + " / state " +
                     prev.c.value().shape_str() + " do not fit hidden size " + std::to_string(hidden));
  }
  auto gate = [&](Var wx, Var wh, Var wc, Var c) {
    return ag::sigmoid(ag::add(ag::add(matmul(x, wx), matmul(prev.h, wh)), ag::hadamard(c, wc)));
  };
  Var i = gate(p.w_xi, p.w_hi, p.w_ci, prev.c);
  Var f = gate(p.w_xf, p.w_hf, p.w_cf, prev.c);
  Var cand = ag::tanh(ag::add(matmul(x, p.w_xc), matmul(prev.h, p.w_hc)));
  Var c = ag::add(ag::hadamard(f, prev.c), ag::hadamard(i, cand));
  Var o = gate(p.w_xo, p.w_ho, p.w_co, c);
  return {c, ag::hadamard(o, ag::tanh(c))};
}

CellState<Var> convlstm_step(const ConvLstmWeights<Var>& p, Var x, const CellState<Var>& prev) {
  check_state(prev.c.value(), prev.h.value());
  check_spatial(x.value(), prev.c.value());
  auto gate = [&](Var wx, Var wh, Var wc, Var c) {
    return ag::sigmoid(ag::add(ag::add(ag::conv2d(x, wx), ag::conv2d(prev.h, wh)), ag::hadamard(c, wc)));
  };
  Var i = gate(p.w_xi, p.w_hi, p.w_ci, prev.c);
  Var f = gate(p.w_xf, p.w_hf, p.w_cf, prev.c);
  Var cand = ag::tanh(ag::add(ag::conv2d(x, p.w_xc), ag::conv2d(prev.h, p.w_hc)));
  Var c = ag::add(ag::hadamard(f, prev.c), ag::hadamard(i, cand));
  Var o = gate(p.w_xo, p.w_ho, p.w_co, c);
  return {c, ag::hadamard(o, ag::tanh(c))};
}

Attended attend(const AttnConvLstmWeights<Var>& p, Var x, const CellState<Var>& prev,
                const CellOptions& opts, Var wx_x) {
  const Tensor& xv = x.value();
  check_state(prev.c.value(), prev.h.value());
  check_spatial(xv, prev.c.value());
  ag::Tape& tape = x.tape();
  Var attn;
  if (opts.uniform_attention) {
    const double u = 1.0 / static_cast<double>(xv.height() * xv.width());
    attn = tape.constant(Tensor({xv.batch(), 1, xv.height(), xv.width()}, u));
  } else {
    Var state_part = ag::conv2d(ag::concat_channels(prev.c, prev.h), p.w_h);
    Var input_part = wx_x.valid() ? wx_x : ag::conv2d(x, p.w_x);
    Var h_y = ag::add_channel_bias(ag::concat_channels(state_part, input_part), p.bias_y);
    Var z = ag::conv2d(ag::tanh(h_y), p.w_z);
    attn = ag::spatial_softmax(z);
  }
  return {ag::hadamard(x, attn), attn};
}

std::pair<CellState<Var>, StepTrace<Var>> faclstm_step(const AttnConvLstmWeights<Var>& p, Var x,
                                                       const CellState<Var>& prev, const CellOptions& opts,
                                                       Var wx_x) {
  Attended a = attend(p, x, prev, opts, wx_x);
  Var b = ag::relu(ag::conv2d(ag::concat_channels(a.x_hat, prev.h), p.w_b, p.bias_b));
  Var i = ag::conv2d(b, p.w_i, p.bias_i);
  Var f = ag::conv2d(b, p.w_f, p.bias_f);
  Var o = ag::conv2d(b, p.w_o, p.bias_o);
  Var forget = ag::sigmoid(ag::add_channel_bias(f, p.bias_f2));
  Var input = ag::sigmoid(i);
  Var cand = ag::relu(ag::conv2d(b, p.w_b2, p.bias_b2));
  Var c = ag::add(ag::hadamard(forget, prev.c), ag::hadamard(input, cand));
  Var out = ag::sigmoid(o);
  Var h = ag::hadamard(ag::relu(c), out);
  return {{c, h}, {a.attn, a.x_hat, b, input, forget, out}};
}

UnrollVars unroll(const AttnConvLstmWeights<Var>& p, Var x, int steps, const CellOptions& opts) {
  if (steps < 1) throw ValidationError("unroll: step count must be >= 1");
  const int64_t cell = p.w_i.value().dim(0);
  ag::Tape& tape = x.tape();
  CellState<Var> state{zeros_like_state(tape, x.value(), cell), zeros_like_state(tape, x.value(), cell)};
  Var wx_x = opts.uniform_attention ? Var() : ag::conv2d(x, p.w_x);
  UnrollVars out;
  out.states.reserve(static_cast<size_t>(steps));
  out.traces.reserve(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    auto [next, trace] = faclstm_step(p, x, state, opts, wx_x);
    out.states.push_back(next);
    out.traces.push_back(trace);
    state = next;
  }
  return out;
}

// --- plain evaluation ----------------------------------------------------------

CellState<Tensor> fc_lstm_step(const FcLstmParams& p, const Tensor& x, const CellState<Tensor>& prev) {
  ag::Tape tape;
  auto w = bind<FcLstmWeights>(tape, p, "", false);
  return values(fc_lstm_step(w, tape.constant(x), bind_state(tape, prev)));
}

CellState<Tensor> convlstm_step(const ConvLstmParams& p, const Tensor& x, const CellState<Tensor>& prev) {
  ag::Tape tape;
  auto w = bind<ConvLstmWeights>(tape, p, "", false);
  return values(convlstm_step(w, tape.constant(x), bind_state(tape, prev)));
}

std::pair<Tensor, Tensor> attend(const AttnConvLstmParams& p, const Tensor& x, const CellState<Tensor>& prev,
                                 const CellOptions& opts) {
  validate(p);
  ag::Tape tape;
  auto w = bind<AttnConvLstmWeights>(tape, p, "", false);
  Attended a = attend(w, tape.constant(x), bind_state(tape, prev), opts);
  return {a.x_hat.value(), a.attn.value()};
}

std::pair<CellState<Tensor>, StepTrace<Tensor>> faclstm_step(const AttnConvLstmParams& p, const Tensor& x,
                                                             const CellState<Tensor>& prev,
                                                             const CellOptions& opts) {
  validate(p);
  ag::Tape tape;
  auto w = bind<AttnConvLstmWeights>(tape, p, "", false);
  auto [state, trace] = faclstm_step(w, tape.constant(x), bind_state(tape, prev), opts);
  return {values(state), values(trace)};
}

Unrolled unroll(const AttnConvLstmParams& p, const Tensor& x, int steps, const CellOptions& opts) {
  validate(p);
  ag::Tape tape;
  auto w = bind<AttnConvLstmWeights>(tape, p, "", false);
  UnrollVars vars = unroll(w, tape.constant(x), steps, opts);
  Unrolled out;
  for (const auto& s : vars.states) out.states.push_back(values(s));
  for (const auto& t : vars.traces) out.traces.push_back(values(t));
  return out;
}

}  // namespace facl
