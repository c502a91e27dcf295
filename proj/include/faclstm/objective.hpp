// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "faclstm/autograd.hpp"
#include "faclstm/network.hpp"
#include "faclstm/tensor.hpp"

namespace facl {

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  friend bool operator==(const Box&, const Box&) = default;
};

// (1 - eps) * one_hot(hot, classes) + eps / classes. Requires 0 <= eps <= 1
// (eps = 1 gives the uniform distribution).
std::vector<double> label_smooth(int hot, double epsilon, int classes = static_cast<int>(kNumClasses));

// Smoothed targets for a batch of index sequences, as a (T, N, 39) tensor.
// Every sequence must have length T.
Tensor smoothed_targets(std::span<const std::vector<int>> sequences, double epsilon);

// Shrinks a box about its center so each side is r times as long, 0 < r <= 1.
Box shrink_box(const Box& b, double r);

struct MaskGt {
  Tensor mask;  // (1, 1, H/4, W/4), entries 0 or 1
  double shrink_ratio = 0.25;
  int clamped_boxes = 0;  // boxes that had to be clipped to the image
};

// Character-center ground truth at quarter resolution. Each box is scaled by
// 1/4, shrunk by r, and every cell whose center lies inside the shrunk box is
// set. A box that covers no cell center marks the cell holding its center.
// Out-of-image boxes are clipped with a warning on stderr.
MaskGt rasterize_masks(std::span<const Box> boxes, int64_t image_height, int64_t image_width,
                       double shrink_ratio = 0.25);

// 0.01 * (1 - 2*sum(m*p) / (sum(m) + sum(p) + 1e-8)).
double mask_loss(const Tensor& truth, const Tensor& pred);

// Mean over steps and batch of -sum_k target_k * log p_k; probs and targets
// are (T, N, 39). Probabilities below 1e-12 are floored; each floor hit on a
// positive target increments *floor_hits.
double sequence_loss(const Tensor& probs, const Tensor& targets, int64_t* floor_hits = nullptr);

double total_loss(double seq_loss, double msk_loss, double lambda = 1.0);

struct LossVars {
  ag::Var sequence;
  ag::Var mask;  // invalid without a mask branch
  ag::Var total;
};

// Taped training objective for one forward pass. `targets` is (T, N, 39);
// `mask_truth` is (N, 1, H/4, W/4) and ignored when the mask branch is off.
LossVars training_loss(const ForwardVars& f, const Tensor& targets, const Tensor& mask_truth,
                       double lambda, int64_t* floor_hits = nullptr);

}  // namespace facl
