// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "faclstm/tensor.hpp"

namespace facl {

using NamedTensors = std::map<std::string, Tensor>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NamedTensors first_moment;
  NamedTensors second_moment;
  int64_t step = 0;
};

// One bias-corrected Adam update of every tensor in `params`. A parameter
// with no entry in `grads` is treated as having a zero gradient. Throws
// NumericError naming the parameter if any gradient entry is not finite;
// nothing is modified in that case.
void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

}  // namespace facl
