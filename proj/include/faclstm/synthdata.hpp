// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faclstm/objective.hpp"
#include "faclstm/tensor.hpp"

namespace facl {

// 39 symbols: 'a'-'z' -> 0..25, '0'-'9' -> 26..35, then START, EOS, OTHER.
struct CharsetCodec {
  static constexpr int kStart = 36;
  static constexpr int kEos = 37;
  static constexpr int kOther = 38;
  static constexpr int kSize = 39;

  // Case-folded index; anything outside [a-z0-9] maps to kOther.
  static int index_of(char c);
  // Printable symbol for a character index (0..35); throws otherwise.
  static char symbol(int index);

  // [START, c_1..c_k, EOS, EOS, ...] padded to `steps`. Requires
  // text.size() <= steps - 2.
  static std::vector<int> encode_target(std::string_view text, int steps);

  // Skips START, stops at the first EOS, drops OTHER.
  static std::string decode_prediction(std::span<const int> indices);
};

struct Sample {
  Tensor image;  // (1, 1, H, W), values k/255
  std::string text;
  std::vector<Box> boxes;  // one per character, image pixels, max edges exclusive
  std::vector<int> target;
};

// Explicit glyph placement. Glyph cells are 5*scale wide and 7*scale tall;
// gaps[i] is the spacing after glyph i and y_offsets[i] its top edge.
struct TextLayout {
  int scale = 2;
  int x0 = 0;
  std::vector<int> gaps;
  std::vector<int> y_offsets;
  double background = 0.0;
  double ink = 1.0;
};

// 5x7 bitmap for a character in [a-z0-9] (case-folded); rows top to bottom.
// Throws ValidationError for characters without a glyph.
const std::array<std::string_view, 7>& glyph(char c);

// Draws text with the given layout and no noise. Fills image and boxes.
Sample render_text(std::string_view text, const TextLayout& layout, int64_t height, int64_t width);

// Random layout, intensities and additive Gaussian noise, all drawn from `seed`.
// Throws ValidationError when the text cannot fit at the minimum glyph scale.
Sample render_sample(uint64_t seed, std::string_view text, int64_t height, int64_t width, double noise,
                     int steps);

struct DatasetSpec {
  uint64_t seed = 0;
  int count = 64;
  int min_length = 3;
  int max_length = 5;
  int64_t height = 32;
  int64_t width = 64;
  double noise = 0.05;
  int steps = 20;
};

// Per-sample seed derived from the dataset seed and the sample index.
uint64_t sample_seed(uint64_t seed, uint64_t index);

std::vector<Sample> generate_samples(const DatasetSpec& spec);

// Writes images/NNNNNN.pgm and manifest.jsonl under `dir` (created if needed).
void save_dataset(const std::filesystem::path& dir, std::span<const Sample> samples);
std::vector<Sample> make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec);
// Reads a dataset directory; targets are encoded for `steps`.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, int steps);

// Binary PGM (P5). read_pgm returns (1, 1, H, W) scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);
// Writes a (.., H, W) tensor with values in [0, 1], rounded to 8 bits.
void write_pgm(const std::filesystem::path& path, const Tensor& image);
// Min-max normalizes to 0..255 first; a constant map is written as all zeros.
void write_pgm_normalized(const std::filesystem::path& path, const Tensor& map);

}  // namespace facl
