// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "faclstm/autograd.hpp"
#include "faclstm/tensor.hpp"

namespace facl {

// Parameter records are templated on the value type so the same layout serves
// plain evaluation (Tensor) and taped evaluation (ag::Var). Each exposes
// fields(self, f) calling f(name, member) in a fixed order.

// Classic peephole LSTM over feature vectors. Input weights are (D_x, D_h),
// recurrent weights (D_h, D_h), peepholes (1, D_h). No biases.
template <class T>
struct FcLstmWeights {
  T w_xi, w_hi, w_ci;
  T w_xf, w_hf, w_cf;
  T w_xc, w_hc;
  T w_xo, w_ho, w_co;

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w_xi", s.w_xi); f("w_hi", s.w_hi); f("w_ci", s.w_ci);
    f("w_xf", s.w_xf); f("w_hf", s.w_hf); f("w_cf", s.w_cf);
    f("w_xc", s.w_xc); f("w_hc", s.w_hc);
    f("w_xo", s.w_xo); f("w_ho", s.w_ho); f("w_co", s.w_co);
  }
};

// Peephole ConvLSTM. Input kernels are (C_cell, C_x, k, k), recurrent kernels
// (C_cell, C_cell, k, k), peepholes (1, C_cell, H, W).
template <class T>
struct ConvLstmWeights {
  T w_xi, w_hi, w_ci;
  T w_xf, w_hf, w_cf;
  T w_xc, w_hc;
  T w_xo, w_ho, w_co;

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w_xi", s.w_xi); f("w_hi", s.w_hi); f("w_ci", s.w_ci);
    f("w_xf", s.w_xf); f("w_hf", s.w_hf); f("w_cf", s.w_cf);
    f("w_xc", s.w_xc); f("w_hc", s.w_hc);
    f("w_xo", s.w_xo); f("w_ho", s.w_ho); f("w_co", s.w_co);
  }
};

// Attention-equipped bottleneck ConvLSTM.
//   w_b   (N_b, C_x + C_cell, k, k)      bias_b  (N_b)
//   w_i, w_f, w_o, w_b2 (C_cell, N_b, k, k) with biases (C_cell)
//   bias_f2 (C_cell)                      extra forget bias
//   w_h   (C_attn, 2*C_cell, k, k)       w_x (C_attn, C_x, k, k)
//   bias_y (2*C_attn)                     w_z (1, 2*C_attn, k, k)
template <class T>
struct AttnConvLstmWeights {
  T w_b, bias_b;
  T w_i, bias_i;
  T w_f, bias_f;
  T w_o, bias_o;
  T bias_f2;
  T w_b2, bias_b2;
  T w_h, w_x, bias_y, w_z;

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w_b", s.w_b); f("bias_b", s.bias_b);
    f("w_i", s.w_i); f("bias_i", s.bias_i);
    f("w_f", s.w_f); f("bias_f", s.bias_f);
    f("w_o", s.w_o); f("bias_o", s.bias_o);
    f("bias_f2", s.bias_f2);
    f("w_b2", s.w_b2); f("bias_b2", s.bias_b2);
    f("w_h", s.w_h); f("w_x", s.w_x); f("bias_y", s.bias_y); f("w_z", s.w_z);
  }
};

using FcLstmParams = FcLstmWeights<Tensor>;
using ConvLstmParams = ConvLstmWeights<Tensor>;
using AttnConvLstmParams = AttnConvLstmWeights<Tensor>;

struct AttnCellShape {
  int64_t input_channels = 33;      // C_x
  int64_t cell_channels = 32;       // C_cell
  int64_t bottleneck_channels = 32; // N_b
  int64_t attn_channels = 16;       // C_attn
  int64_t kernel = 3;
};

template <class T>
struct CellState {
  T c;
  T h;
};

template <class T>
struct StepTrace {
  T attn;         // (N, 1, H, W)
  T x_hat;        // attended input
  T bottleneck;   // b_t
  T input_gate;   // S(i_t)
  T forget_gate;  // S(f_t + bias_f2)
  T output_gate;  // S(o_t)
};

struct CellOptions {
  // Replace the learned attention map with the uniform 1/(H*W) map.
  bool uniform_attention = false;
};

// Copies every field of `p` onto the tape, as parameters named prefix+field
// when trainable, as constants otherwise.
template <template <class> class P>
P<ag::Var> bind(ag::Tape& tape, const P<Tensor>& p, const std::string& prefix, bool trainable = true) {
  P<ag::Var> out;
  std::vector<ag::Var*> slots;
  P<ag::Var>::fields(out, [&](const char*, ag::Var& v) { slots.push_back(&v); });
  size_t i = 0;
  P<Tensor>::fields(p, [&](const char* name, const Tensor& t) {
    *slots[i++] = trainable ? tape.parameter(prefix + name, t) : tape.constant(t);
  });
  return out;
}

// Random init, uniform(-s, s) with s = 1/sqrt(fan_in); biases zero and bias_f2 = 1.
AttnConvLstmParams init_attn_cell(const AttnCellShape& shape, std::mt19937_64& rng);
// Every tensor of the right shape, filled with zeros.
AttnConvLstmParams zero_attn_cell(const AttnCellShape& shape);
void validate(const AttnConvLstmParams& p);
AttnCellShape shape_of(const AttnConvLstmParams& p);

FcLstmParams init_fc_lstm(int64_t input_size, int64_t hidden_size, std::mt19937_64& rng);
ConvLstmParams init_conv_lstm(int64_t input_channels, int64_t cell_channels, int64_t kernel,
                              int64_t height, int64_t width, std::mt19937_64& rng);

// --- taped steps -----------------------------------------------------------

CellState<ag::Var> fc_lstm_step(const FcLstmWeights<ag::Var>& p, ag::Var x, const CellState<ag::Var>& prev);
CellState<ag::Var> convlstm_step(const ConvLstmWeights<ag::Var>& p, ag::Var x,
                                 const CellState<ag::Var>& prev);

struct Attended {
  ag::Var x_hat;
  ag::Var attn;
};

// wx_x, when valid, is a precomputed w_x * x (constant across an unroll).
Attended attend(const AttnConvLstmWeights<ag::Var>& p, ag::Var x, const CellState<ag::Var>& prev,
                const CellOptions& opts = {}, ag::Var wx_x = {});

std::pair<CellState<ag::Var>, StepTrace<ag::Var>> faclstm_step(const AttnConvLstmWeights<ag::Var>& p,
                                                               ag::Var x,
                                                               const CellState<ag::Var>& prev,
                                                               const CellOptions& opts = {},
                                                               ag::Var wx_x = {});

struct UnrollVars {
  std::vector<CellState<ag::Var>> states;
  std::vector<StepTrace<ag::Var>> traces;
};

// T steps from a zero state, feeding the same x at every step.
UnrollVars unroll(const AttnConvLstmWeights<ag::Var>& p, ag::Var x, int steps, const CellOptions& opts = {});

// --- plain evaluation --------------------------------------------------------

CellState<Tensor> fc_lstm_step(const FcLstmParams& p, const Tensor& x, const CellState<Tensor>& prev);
CellState<Tensor> convlstm_step(const ConvLstmParams& p, const Tensor& x, const CellState<Tensor>& prev);
std::pair<Tensor, Tensor> attend(const AttnConvLstmParams& p, const Tensor& x, const CellState<Tensor>& prev,
                                 const CellOptions& opts = {});  // (x_hat, attn)
std::pair<CellState<Tensor>, StepTrace<Tensor>> faclstm_step(const AttnConvLstmParams& p, const Tensor& x,
                                                             const CellState<Tensor>& prev,
                                                             const CellOptions& opts = {});

struct Unrolled {
  std::vector<CellState<Tensor>> states;
  std::vector<StepTrace<Tensor>> traces;
};
Unrolled unroll(const AttnConvLstmParams& p, const Tensor& x, int steps, const CellOptions& opts = {});

}  // namespace facl
