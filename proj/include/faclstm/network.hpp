// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "faclstm/autograd.hpp"
#include "faclstm/cells.hpp"
#include "faclstm/optim.hpp"
#include "faclstm/tensor.hpp"

namespace facl {

inline constexpr int64_t kNumClasses = 39;

// Everything that fixes the parameter shapes and the forward graph.
struct NetworkShape {
  int64_t image_height = 64;
  int64_t image_width = 256;
  int64_t enc_channels[3] = {16, 32, 64};
  int64_t feat_channels = 32;        // C_f
  int64_t cell_channels = 32;        // C_cell
  int64_t bottleneck_channels = 32;  // N_b
  int64_t attn_channels = 16;        // C_attn
  int64_t reduce_channels = 16;      // channels after the 1x1 head reduction
  int64_t kernel = 3;
  int steps = 20;                    // T
  bool use_mask_branch = true;
  bool uniform_attention = false;

  int64_t map_height() const { return image_height / 4; }
  int64_t map_width() const { return image_width / 4; }
  int64_t fused_channels() const { return feat_channels + (use_mask_branch ? 1 : 0); }
  AttnCellShape cell_shape() const {
    return {fused_channels(), cell_channels, bottleneck_channels, attn_channels, kernel};
  }
  void validate() const;
};

template <class T>
struct EncoderWeights {
  T s1_w, s1_b, s2_w, s2_b, s3_w, s3_b;

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("s1.w", s.s1_w); f("s1.b", s.s1_b);
    f("s2.w", s.s2_w); f("s2.b", s.s2_b);
    f("s3.w", s.s3_w); f("s3.b", s.s3_b);
  }
};

// One decoder branch: upsample the 1/8 stage, project to the 1/4 stage's
// channels, add the skip, then an output conv.
template <class T>
struct DecoderWeights {
  T up_w, up_b, out_w, out_b;

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("up.w", s.up_w); f("up.b", s.up_b);
    f("out.w", s.out_w); f("out.b", s.out_b);
  }
};

template <class T>
struct HeadWeights {
  T reduce_w, reduce_b;  // 1x1 conv, C_cell -> reduce_channels
  T fc_w, fc_b;          // (reduce_channels * H/4 * W/4, 39), shared over steps

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("reduce.w", s.reduce_w); f("reduce.b", s.reduce_b);
    f("fc.w", s.fc_w); f("fc.b", s.fc_b);
  }
};

using EncoderParams = EncoderWeights<Tensor>;
using DecoderParams = DecoderWeights<Tensor>;
using HeadParams = HeadWeights<Tensor>;

struct ModelParams {
  EncoderParams enc;
  DecoderParams feat;
  std::optional<DecoderParams> mask;
  AttnConvLstmParams cell;
  HeadParams head;
};

// Stable checkpoint names: "enc.s1.w", "dec.feat.up.w", "dec.mask.out.b",
// "cell.w_b", "head.fc.w", ...
NamedTensors to_named(const ModelParams& p);
// Throws ShapeError listing every missing, unexpected or mis-shaped tensor.
ModelParams from_named(const NamedTensors& named, const NetworkShape& shape);

ModelParams init_model(const NetworkShape& shape, uint64_t seed);
ModelParams zero_model(const NetworkShape& shape);

struct BoundModel {
  EncoderWeights<ag::Var> enc;
  DecoderWeights<ag::Var> feat;
  std::optional<DecoderWeights<ag::Var>> mask;
  AttnConvLstmWeights<ag::Var> cell;
  HeadWeights<ag::Var> head;
};

BoundModel bind_model(ag::Tape& tape, const ModelParams& p, bool trainable);

struct Stages {
  ag::Var half, quarter, eighth;
};

struct ForwardVars {
  Stages stages;
  ag::Var features;
  ag::Var mask;  // invalid when the mask branch is disabled
  ag::Var fused;
  UnrollVars cell;
  std::vector<ag::Var> logits;  // T entries of (N, 39)
};

Stages encode(const EncoderWeights<ag::Var>& p, ag::Var image);
ag::Var decode_features(const DecoderWeights<ag::Var>& p, const Stages& s);
ag::Var decode_mask(const DecoderWeights<ag::Var>& p, const Stages& s);
ag::Var fuse(ag::Var features, ag::Var mask);
std::vector<ag::Var> transcribe_logits(const HeadWeights<ag::Var>& head, const UnrollVars& cell);
ForwardVars forward(const BoundModel& m, ag::Var image, const NetworkShape& shape);

struct ForwardResult {
  Tensor features;             // (N, C_f, H/4, W/4)
  std::optional<Tensor> mask;  // (N, 1, H/4, W/4), values in (0, 1)
  Tensor fused;
  Tensor logits;               // (T, N, 39)
  Tensor probs;                // (T, N, 39)
  std::vector<StepTrace<Tensor>> traces;
  std::vector<CellState<Tensor>> states;
};

// Plain inference entry point. image is (N, 1, H, W).
ForwardResult forward(const ModelParams& p, const Tensor& image, const NetworkShape& shape);

// Greedy decode: argmax class per step for batch item n.
std::vector<int> argmax_indices(const Tensor& probs, int64_t n);

}  // namespace facl
