// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "faclstm/network.hpp"
#include "faclstm/optim.hpp"
#include "faclstm/synthdata.hpp"

namespace facl {

struct LrStage {
  int64_t steps = 0;
  double lr = 0.0;
};

// Everything a command needs. Read from a line-oriented `key = value` file;
// '#' starts a comment. Unknown keys are errors.
struct Config {
  NetworkShape net;
  double epsilon = 0.1;       // label smoothing
  double lambda = 1.0;        // mask loss weight
  double shrink_ratio = 0.25;
  // Five-stage staircase with ratios 1 : 1 : 0.5 : 0.1 : 0.01.
  std::vector<LrStage> schedule = {{1000, 1e-4}, {1000, 1e-4}, {1000, 5e-5}, {1000, 1e-5}, {1000, 1e-6}};
  int batch_size = 8;
  uint64_t seed = 0;
  int threads = 1;
  AdamConfig adam;

  // dataset generation
  int dataset_count = 64;
  int min_length = 3;
  int max_length = 5;
  double noise = 0.05;

  int64_t total_steps() const;
  double lr_at(int64_t step) const;  // staircase; last stage's rate past the end
  DatasetSpec dataset_spec(uint64_t seed) const;

  void set(std::string_view key, std::string_view value);
  void validate() const;
  std::string to_string() const;
};

Config parse_config(std::string_view text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

// 16x32 images, encoder 4/8/16, C_cell 8, T 3: small enough for exhaustive
// finite-difference checks.
Config tiny_config();

// 32x64 canvas, 3-5 character words, desk channel plan.
Config desk_config();

}  // namespace facl
