// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <iostream>

#include "faclstm/errors.hpp"

namespace facl {

std::vector<double> label_smooth(int hot, double epsilon, int classes) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ValidationError(fmt::format("label smoothing epsilon must be in [0, 1], got {}", epsilon));
  }
  if (hot < 0 || hot >= classes) throw ValidationError(fmt::format("class index {} out of range", hot));
  std::vector<double> out(static_cast<size_t>(classes), epsilon / classes);
  out[static_cast<size_t>(hot)] += 1.0 - epsilon;
  return out;
}

Tensor smoothed_targets(std::span<const std::vector<int>> sequences, double epsilon) {
  if (sequences.empty()) throw ValidationError("smoothed_targets: empty batch");
  const int64_t steps = static_cast<int64_t>(sequences.front().size());
  const int64_t n = static_cast<int64_t>(sequences.size());
  Tensor out({steps, n, kNumClasses});
  for (int64_t b = 0; b < n; ++b) {
    const auto& seq = sequences[static_cast<size_t>(b)];
    if (static_cast<int64_t>(seq.size()) != steps) {
      throw ShapeError("smoothed_targets: sequences differ in length");
    }
    for (int64_t t = 0; t < steps; ++t) {
      const auto row = label_smooth(seq[static_cast<size_t>(t)], epsilon);
      std::copy(row.begin(), row.end(), out.data().begin() + (t * n + b) * kNumClasses);
    }
  }
  return out;
}

Box shrink_box(const Box& b, double r) {
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) {
    throw ValidationError(fmt::format("degenerate box ({}, {}, {}, {})", b.x_min, b.y_min, b.x_max, b.y_max));
  }
  if (!(r > 0.0 && r <= 1.0)) throw ValidationError(fmt::format("shrink ratio must be in (0, 1], got {}", r));
  const double w = b.x_max - b.x_min;
  const double h = b.y_max - b.y_min;
  return {(b.x_min + b.x_max - w * r) / 2, (b.y_min + b.y_max - h * r) / 2,
          (b.x_min + b.x_max + w * r) / 2, (b.y_min + b.y_max + h * r) / 2};
}

MaskGt rasterize_masks(std::span<const Box> boxes, int64_t image_height, int64_t image_width,
                       double shrink_ratio) {
  if (image_height % 4 != 0 || image_width % 4 != 0 || image_height < 4 || image_width < 4) {
    throw ValidationError(fmt::format("image {}x{} is not divisible by 4", image_height, image_width));
  }
  const int64_t mh = image_height / 4, mw = image_width / 4;
  MaskGt gt;
  gt.mask = Tensor({1, 1, mh, mw});
  gt.shrink_ratio = shrink_ratio;
  for (Box b : boxes) {
    const Box orig = b;
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image_width));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image_width));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image_height));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image_height));
    if (!(b == orig)) {
      ++gt.clamped_boxes;
      std::cerr << fmt::format("warning: box ({}, {}, {}, {}) clipped to the {}x{} image\n", orig.x_min,
                               orig.y_min, orig.x_max, orig.y_max, image_height, image_width);
    }
    if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) continue;
    const Box scaled{b.x_min / 4, b.y_min / 4, b.x_max / 4, b.y_max / 4};
    const Box g = shrink_box(scaled, shrink_ratio);
    bool any = false;
    for (int64_t y = 0; y < mh; ++y) {
      const double cy = static_cast<double>(y) + 0.5;
      if (cy < g.y_min || cy > g.y_max) continue;
      for (int64_t x = 0; x < mw; ++x) {
        const double cx = static_cast<double>(x) + 0.5;
        if (cx < g.x_min || cx > g.x_max) continue;
        gt.mask.at(0, 0, y, x) = 1.0;
        any = true;
      }
    }
    if (!any) {
      const double cx = (g.x_min + g.x_max) / 2, cy = (g.y_min + g.y_max) / 2;
      const int64_t x = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cx)), 0, mw - 1);
      const int64_t y = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cy)), 0, mh - 1);
      gt.mask.at(0, 0, y, x) = 1.0;
    }
  }
  return gt;
}

double mask_loss(const Tensor& truth, const Tensor& pred) {
  if (!truth.same_shape(pred)) {
    throw ShapeError("mask_loss: truth " + truth.shape_str() + " vs prediction " + pred.shape_str());
  }
  double inter = 0.0, m_sum = 0.0, p_sum = 0.0;
  for (int64_t i = 0; i < truth.numel(); ++i) {
    inter += truth[i] * pred[i];
    m_sum += truth[i];
    p_sum += pred[i];
  }
  if (m_sum + p_sum == 0.0) return 0.0;
  return 0.01 * (1.0 - 2.0 * inter / (m_sum + p_sum));
}

double sequence_loss(const Tensor& probs, const Tensor& targets, int64_t* floor_hits) {
  if (probs.rank() != 3 || !probs.same_shape(targets)) {
    throw ShapeError("sequence_loss: probs " + probs.shape_str() + " vs targets " + targets.shape_str());
  }
  const int64_t rows = probs.dim(0) * probs.dim(1);
  double loss = 0.0;
  for (int64_t i = 0; i < probs.numel(); ++i) {
    if (targets[i] == 0.0) continue;
    double p = probs[i];
    if (p < 1e-12) {
      p = 1e-12;
      if (floor_hits) ++*floor_hits;
    }
    loss -= targets[i] * std::log(p);
  }
  return loss / static_cast<double>(rows);
}

double total_loss(double seq_loss, double msk_loss, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  return seq_loss + lambda * msk_loss;
}

LossVars training_loss(const ForwardVars& f, const Tensor& targets, const Tensor& mask_truth, double lambda,
                       int64_t* floor_hits) {
  const int64_t steps = static_cast<int64_t>(f.logits.size());
  if (targets.rank() != 3 || targets.dim(0) != steps) {
    throw ShapeError(fmt::format("training_loss: targets {} for {} steps", targets.shape_str(), steps));
  }
  const int64_t n = targets.dim(1);
  LossVars out;
  ag::Var seq;
  for (int64_t t = 0; t < steps; ++t) {
    Tensor row({n, kNumClasses});
    std::copy_n(targets.data().begin() + t * n * kNumClasses, n * kNumClasses, row.data().begin());
    ag::Var term = ag::softmax_cross_entropy(f.logits[static_cast<size_t>(t)], row, floor_hits);
    seq = seq.valid() ? ag::add(seq, term) : term;
  }
  out.sequence = ag::scale(seq, 1.0 / static_cast<double>(steps));
  out.total = out.sequence;
  if (f.mask.valid()) {
    out.mask = ag::dice_mask_loss(mask_truth, f.mask);
    out.total = ag::add(out.sequence, ag::scale(out.mask, lambda));
  }
  return out;
}

}  // namespace facl
