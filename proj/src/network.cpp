// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/network.hpp"

#include <cmath>
#include <fmt/format.h>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

using ag::Var;

constexpr const char* kEnc = "enc.";
constexpr const char* kFeat = "dec.feat.";
constexpr const char* kMask = "dec.mask.";
constexpr const char* kCell = "cell.";
constexpr const char* kHead = "head.";

template <template <class> class P>
void put(NamedTensors& out, const P<Tensor>& p, const std::string& prefix) {
  P<Tensor>::fields(p, [&](const char* name, const Tensor& t) { out.emplace(prefix + name, t); });
}

// Copies tensors for P out of `named`, checking each against the shapes in `want`.
template <template <class> class P>
P<Tensor> take(const NamedTensors& named, const P<Tensor>& want, const std::string& prefix,
               std::vector<std::string>& problems) {
  P<Tensor> out = want;
  P<Tensor>::fields(out, [&](const char* name, Tensor& t) {
    const std::string key = prefix + name;
    auto it = named.find(key);
    if (it == named.end()) {
      problems.push_back(fmt::format("missing {} {}", key, t.shape_str()));
    } else if (!it->second.same_shape(t)) {
      problems.push_back(fmt::format("{}: checkpoint {} vs config {}", key, it->second.shape_str(),
                                     t.shape_str()));
    } else {
      t = it->second;
    }
  });
  return out;
}

Tensor uniform(Tensor::Dims dims, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor conv_kernel(int64_t out, int64_t in, int64_t k, std::mt19937_64* rng) {
  if (!rng) return Tensor({out, in, k, k});
  return uniform({out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in * k * k)), *rng);
}

ModelParams build(const NetworkShape& s, std::mt19937_64* rng) {
  s.validate();
  const int64_t k = s.kernel;
  const auto& ec = s.enc_channels;
  ModelParams p;
  p.enc.s1_w = conv_kernel(ec[0], 1, k, rng);
  p.enc.s1_b = Tensor({ec[0]});
  p.enc.s2_w = conv_kernel(ec[1], ec[0], k, rng);
  p.enc.s2_b = Tensor({ec[1]});
  p.enc.s3_w = conv_kernel(ec[2], ec[1], k, rng);
  p.enc.s3_b = Tensor({ec[2]});

  auto branch = [&](int64_t out_channels) {
    DecoderParams d;
    d.up_w = conv_kernel(ec[1], ec[2], k, rng);
    d.up_b = Tensor({ec[1]});
    d.out_w = conv_kernel(out_channels, ec[1], k, rng);
    d.out_b = Tensor({out_channels});
    return d;
  };
  p.feat = branch(s.feat_channels);
  if (s.use_mask_branch) p.mask = branch(1);

  p.cell = rng ? init_attn_cell(s.cell_shape(), *rng) : zero_attn_cell(s.cell_shape());

  const int64_t flat = s.reduce_channels * s.map_height() * s.map_width();
  p.head.reduce_w = conv_kernel(s.reduce_channels, s.cell_channels, 1, rng);
  p.head.reduce_b = Tensor({s.reduce_channels});
  p.head.fc_w = rng ? uniform({flat, kNumClasses}, 1.0 / std::sqrt(static_cast<double>(flat)), *rng)
                    : Tensor({flat, kNumClasses});
  p.head.fc_b = Tensor({kNumClasses});
  return p;
}

}  // namespace

void NetworkShape::validate() const {
  if (image_height < 8 || image_width < 8 || image_height % 8 != 0 || image_width % 8 != 0) {
    throw ValidationError(fmt::format("image size {}x{} must be positive multiples of 8",
                                      image_height, image_width));
  }
  for (int64_t c : enc_channels) {
    if (c < 1) throw ValidationError("encoder channels must be positive");
  }
  if (feat_channels < 1 || cell_channels < 1 || bottleneck_channels < 1 || attn_channels < 1 ||
      reduce_channels < 1) {
    throw ValidationError("channel counts must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("kernel size must be odd and positive");
  if (steps < 1) throw ValidationError("step count T must be >= 1");
}

NamedTensors to_named(const ModelParams& p) {
  NamedTensors out;
  put<EncoderWeights>(out, p.enc, kEnc);
  put<DecoderWeights>(out, p.feat, kFeat);
  if (p.mask) put<DecoderWeights>(out, *p.mask, kMask);
  put<AttnConvLstmWeights>(out, p.cell, kCell);
  put<HeadWeights>(out, p.head, kHead);
  return out;
}

ModelParams from_named(const NamedTensors& named, const NetworkShape& shape) {
  const ModelParams want = zero_model(shape);
  std::vector<std::string> problems;
  ModelParams p;
  p.enc = take<EncoderWeights>(named, want.enc, kEnc, problems);
  p.feat = take<DecoderWeights>(named, want.feat, kFeat, problems);
  if (want.mask) p.mask = take<DecoderWeights>(named, *want.mask, kMask, problems);
  p.cell = take<AttnConvLstmWeights>(named, want.cell, kCell, problems);
  p.head = take<HeadWeights>(named, want.head, kHead, problems);
  const NamedTensors expected = to_named(want);
  for (const auto& [name, t] : named) {
    const bool model_tensor = name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0 ||
                              name.rfind("cell.", 0) == 0 || name.rfind("head.", 0) == 0;
    if (model_tensor && !expected.contains(name)) problems.push_back("unexpected " + name);
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match configuration:";
    for (const auto& s : problems) msg += "\n  " + s;
    throw ShapeError(msg);
  }
  return p;
}

ModelParams init_model(const NetworkShape& shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build(shape, &rng);
}

ModelParams zero_model(const NetworkShape& shape) { return build(shape, nullptr); }

BoundModel bind_model(ag::Tape& tape, const ModelParams& p, bool trainable) {
  BoundModel m;
  m.enc = bind<EncoderWeights>(tape, p.enc, kEnc, trainable);
  m.feat = bind<DecoderWeights>(tape, p.feat, kFeat, trainable);
  if (p.mask) m.mask = bind<DecoderWeights>(tape, *p.mask, kMask, trainable);
  m.cell = bind<AttnConvLstmWeights>(tape, p.cell, kCell, trainable);
  m.head = bind<HeadWeights>(tape, p.head, kHead, trainable);
  return m;
}

Stages encode(const EncoderWeights<Var>& p, Var image) {
  const Tensor& img = image.value();
  if (img.rank() != 4 || img.channels() != 1) {
    throw ShapeError("encode: expected a (N,1,H,W) image, got " + img.shape_str());
  }
  if (img.height() % 8 != 0 || img.width() % 8 != 0) {
    throw ShapeError("encode: image extents must be divisible by 8, got " + img.shape_str());
  }
  Stages s;
  s.half = ag::relu(ag::conv2d(image, p.s1_w, p.s1_b, 2));
  s.quarter = ag::relu(ag::conv2d(s.half, p.s2_w, p.s2_b, 2));
  s.eighth = ag::relu(ag::conv2d(s.quarter, p.s3_w, p.s3_b, 2));
  return s;
}

namespace {

Var decode_trunk(const DecoderWeights<Var>& p, const Stages& s) {
  Var up = ag::conv2d(ag::upsample_nearest2(s.eighth), p.up_w, p.up_b);
  Var merged = ag::relu(ag::add(up, s.quarter));
  return ag::conv2d(merged, p.out_w, p.out_b);
}

}  // namespace

Var decode_features(const DecoderWeights<Var>& p, const Stages& s) { return ag::relu(decode_trunk(p, s)); }

Var decode_mask(const DecoderWeights<Var>& p, const Stages& s) {
  if (p.out_w.value().dim(0) != 1) {
    throw ShapeError("mask branch must emit one channel, got " + p.out_w.value().shape_str());
  }
  return ag::sigmoid(decode_trunk(p, s));
}

Var fuse(Var features, Var mask) { return ag::concat_channels(features, mask); }

std::vector<Var> transcribe_logits(const HeadWeights<Var>& head, const UnrollVars& cell) {
  std::vector<Var> logits;
  logits.reserve(cell.states.size());
  for (const auto& state : cell.states) {
    Var reduced = ag::conv2d(state.h, head.reduce_w, head.reduce_b);
    logits.push_back(ag::dense(ag::flatten(reduced), head.fc_w, head.fc_b));
  }
  return logits;
}

ForwardVars forward(const BoundModel& m, Var image, const NetworkShape& shape) {
  const Tensor& img = image.value();
  if (img.rank() != 4 || img.height() != shape.image_height || img.width() != shape.image_width) {
    throw ShapeError(fmt::format("forward: image {} does not match configured {}x{}", img.shape_str(),
                                 shape.image_height, shape.image_width));
  }
  ForwardVars f;
  f.stages = encode(m.enc, image);
  f.features = decode_features(m.feat, f.stages);
  if (m.mask) {
    f.mask = decode_mask(*m.mask, f.stages);
    f.fused = fuse(f.features, f.mask);
  } else {
    f.fused = f.features;
  }
  CellOptions opts;
  opts.uniform_attention = shape.uniform_attention;
  f.cell = unroll(m.cell, f.fused, shape.steps, opts);
  f.logits = transcribe_logits(m.head, f.cell);
  return f;
}

ForwardResult forward(const ModelParams& p, const Tensor& image, const NetworkShape& shape) {
  ag::Tape tape;
  BoundModel m = bind_model(tape, p, false);
  ForwardVars f = forward(m, tape.constant(image), shape);
  ForwardResult r;
  r.features = f.features.value();
  if (f.mask.valid()) r.mask = f.mask.value();
  r.fused = f.fused.value();
  const int64_t steps = static_cast<int64_t>(f.logits.size());
  const int64_t n = image.batch();
  r.logits = Tensor({steps, n, kNumClasses});
  r.probs = Tensor({steps, n, kNumClasses});
  for (int64_t t = 0; t < steps; ++t) {
    const Tensor& z = f.logits[static_cast<size_t>(t)].value();
    const Tensor p_t = softmax_rows(z);
    std::copy(z.data().begin(), z.data().end(), r.logits.data().begin() + t * n * kNumClasses);
    std::copy(p_t.data().begin(), p_t.data().end(), r.probs.data().begin() + t * n * kNumClasses);
  }
  for (const auto& s : f.cell.states) r.states.push_back({s.c.value(), s.h.value()});
  for (const auto& t : f.cell.traces) {
    r.traces.push_back({t.attn.value(), t.x_hat.value(), t.bottleneck.value(), t.input_gate.value(),
                        t.forget_gate.value(), t.output_gate.value()});
  }
  return r;
}

std::vector<int> argmax_indices(const Tensor& probs, int64_t n) {
  const int64_t steps = probs.dim(0), batch = probs.dim(1), k = probs.dim(2);
  std::vector<int> out;
  for (int64_t t = 0; t < steps; ++t) {
    const double* row = probs.data().data() + (t * batch + n) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace facl
