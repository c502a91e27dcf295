// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faclstm/config.hpp"
#include "faclstm/network.hpp"
#include "faclstm/optim.hpp"
#include "faclstm/synthdata.hpp"

namespace facl {

// Model parameters plus optimizer state; the unit that checkpoints hold.
struct TrainState {
  ModelParams params;
  AdamState adam;
};

TrainState fresh_state(const Config& cfg);

// Parameters under their model names, Adam moments under "adam.m.<name>" and
// "adam.v.<name>", and the step counter as "train.step".
NamedTensors state_to_named(const TrainState& s);
TrainState state_from_named(const NamedTensors& named, const Config& cfg);

struct StepMetrics {
  int64_t step = 0;  // 1-based index of the finished step
  double sequence_loss = 0;
  double mask_loss = 0;
  double loss = 0;
  double sequence_accuracy = 0;  // on the step's batch
};

// Per-sample inputs the objective needs.
struct PreparedSample {
  Tensor image;  // (1, 1, H, W)
  Tensor targets;  // (T, 1, 39), smoothed
  Tensor mask;     // (1, 1, H/4, W/4)
  std::string truth;  // decoded ground truth
};

PreparedSample prepare(const Sample& s, const Config& cfg);

struct BatchGradient {
  NamedTensors grads;  // mean over the batch
  StepMetrics metrics;
  int64_t floor_hits = 0;
};

// Forward and backward over a batch, one tape per sample, spread over
// cfg.threads workers. Results do not depend on the thread count.
BatchGradient batch_gradient(const ModelParams& params, std::span<const PreparedSample* const> batch,
                             const Config& cfg);

// Batch composition for a global step: epoch-wise shuffles seeded from cfg.seed.
std::vector<size_t> batch_indices(const Config& cfg, size_t dataset_size, int64_t step);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(int64_t epoch, const TrainState&)> on_epoch;
};

// Runs from state.adam.step up to cfg.total_steps(). Throws NumericError on a
// non-finite loss or gradient, naming the step.
void train(const Config& cfg, std::span<const Sample> data, TrainState& state, const TrainHooks& hooks = {});

struct EvalReport {
  int64_t count = 0;
  double sequence_accuracy = 0;
  double char_accuracy = 0;
  std::vector<std::string> predictions;
};

// Greedy argmax decoding; sequence accuracy is exact match after case folding.
EvalReport evaluate(const ModelParams& params, const Config& cfg, std::span<const Sample> data);

std::string recognize(const ModelParams& params, const Config& cfg, const Tensor& image);

struct GradGroup {
  std::string name;
  int64_t checked = 0;
  int64_t retried = 0;  // entries re-probed at a smaller step
  double max_rel_error = 0;
  double tolerance = 0;
  std::string worst;  // entry with the largest error
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradGroup> groups;
  double seconds = 0;
  bool passed() const;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;       // network groups
  double cell_tolerance = 1e-4;  // cell group and standalone unroll
  int64_t max_entries = 0;       // per tensor, 0 = every entry
  bool corrupt_backward = false; // negative control
};

// Central finite differences of the total loss against the taped gradient,
// grouped by parameter prefix (enc, dec.feat, dec.mask, cell, head), plus a
// standalone 3-step cell unroll check.
GradcheckReport gradcheck(const Config& cfg, uint64_t seed, const GradcheckOptions& opts = {});

struct VisualizeResult {
  std::string decoded;
  std::vector<std::filesystem::path> files;
};

// Writes mask.pgm (when the mask branch exists) and attn_NN.pgm per step.
VisualizeResult visualize(const ModelParams& params, const Config& cfg, const Tensor& image,
                          const std::filesystem::path& out_dir);

}  // namespace facl
