// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

using Glyph = std::array<std::string_view, 7>;

// Public-domain style 5x7 bitmaps, '#' = ink.
constexpr std::array<Glyph, 36> kGlyphs = {{
    // a-z
    {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"},
    {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."},
    {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."},
    {"....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"},
    {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."},
    {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."},
    {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."},
    {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"},
    {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."},
    {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."},
    {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."},
    {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"},
    {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"},
    {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."},
    {".....", "####.", "#...#", "#...#", "####.", "#....", "#...."},
    {".....", ".####", "#...#", "#...#", ".####", "....#", "....#"},
    {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."},
    {".....", ".....", ".###.", "#....", ".###.", "....#", "####."},
    {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."},
    {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"},
    {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."},
    {".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."},
    {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"},
    {".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."},
    {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"},
    // 0-9
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
}};

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;
constexpr int kMinScale = 2;
constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";

struct InkBox {
  int col0 = kGlyphW, row0 = kGlyphH, col1 = -1, row1 = -1;  // inclusive
};

InkBox ink_box(const Glyph& g) {
  InkBox b;
  for (int r = 0; r < kGlyphH; ++r) {
    for (int c = 0; c < kGlyphW; ++c) {
      if (g[static_cast<size_t>(r)][static_cast<size_t>(c)] != '#') continue;
      b.col0 = std::min(b.col0, c);
      b.col1 = std::max(b.col1, c);
      b.row0 = std::min(b.row0, r);
      b.row1 = std::max(b.row1, r);
    }
  }
  return b;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

int text_width(size_t length, int scale, std::span<const int> gaps) {
  int w = static_cast<int>(length) * kGlyphW * scale;
  for (size_t i = 0; i + 1 < length && i < gaps.size(); ++i) w += gaps[i];
  return w;
}

std::string line_context(const std::filesystem::path& file, size_t line) {
  return fmt::format("{}:{}", file.string(), line);
}

}  // namespace

int CharsetCodec::index_of(char c) {
  const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower >= 'a' && lower <= 'z') return lower - 'a';
  if (lower >= '0' && lower <= '9') return 26 + (lower - '0');
  return kOther;
}

char CharsetCodec::symbol(int index) {
  if (index < 0 || index >= 36) throw ValidationError(fmt::format("index {} has no printable symbol", index));
  return kAlphabet[static_cast<size_t>(index)];
}

std::vector<int> CharsetCodec::encode_target(std::string_view text, int steps) {
  if (steps < 2 || static_cast<int64_t>(text.size()) > steps - 2) {
    throw ValidationError(fmt::format("text \"{}\" ({} chars) does not fit in {} steps", text, text.size(), steps));
  }
  std::vector<int> out(static_cast<size_t>(steps), kEos);
  out[0] = kStart;
  for (size_t i = 0; i < text.size(); ++i) out[i + 1] = index_of(text[i]);
  return out;
}

std::string CharsetCodec::decode_prediction(std::span<const int> indices) {
  std::string out;
  for (int idx : indices) {
    if (idx == kStart) continue;
    if (idx == kEos) break;
    if (idx < 0 || idx >= kOther) continue;
    out.push_back(symbol(idx));
  }
  return out;
}

const Glyph& glyph(char c) {
  const int idx = CharsetCodec::index_of(c);
  if (idx >= 36) throw ValidationError(fmt::format("character '{}' has no glyph", c));
  return kGlyphs[static_cast<size_t>(idx)];
}

Sample render_text(std::string_view text, const TextLayout& layout, int64_t height, int64_t width) {
  const int s = layout.scale;
  if (s < 1) throw ValidationError("glyph scale must be >= 1");
  if (layout.y_offsets.size() < text.size() || layout.gaps.size() + 1 < text.size()) {
    throw ValidationError("layout has fewer offsets than characters");
  }
  Sample out;
  out.text = std::string(text);
  out.image = Tensor({1, 1, height, width}, quantize(layout.background));
  const double ink = quantize(layout.ink);
  int x = layout.x0;
  for (size_t i = 0; i < text.size(); ++i) {
    const Glyph& g = glyph(text[i]);
    const int y = layout.y_offsets[i];
    if (x < 0 || y < 0 || x + kGlyphW * s > width || y + kGlyphH * s > height) {
      throw ValidationError(fmt::format("glyph {} of \"{}\" falls outside the {}x{} canvas", i, text, height, width));
    }
    for (int r = 0; r < kGlyphH; ++r) {
      for (int c = 0; c < kGlyphW; ++c) {
        if (g[static_cast<size_t>(r)][static_cast<size_t>(c)] != '#') continue;
        for (int dy = 0; dy < s; ++dy) {
          for (int dx = 0; dx < s; ++dx) out.image.at(0, 0, y + r * s + dy, x + c * s + dx) = ink;
        }
      }
    }
    const InkBox b = ink_box(g);
    out.boxes.push_back({static_cast<double>(x + b.col0 * s), static_cast<double>(y + b.row0 * s),
                         static_cast<double>(x + (b.col1 + 1) * s), static_cast<double>(y + (b.row1 + 1) * s)});
    x += kGlyphW * s + (i + 1 < text.size() ? layout.gaps[i] : 0);
  }
  return out;
}

Sample render_sample(uint64_t seed, std::string_view text, int64_t height, int64_t width, double noise,
                     int steps) {
  if (text.empty()) throw ValidationError("cannot render an empty string");
  const int n = static_cast<int>(text.size());
  // Largest scale at which the text fits with unit-scale gaps.
  int max_scale = 0;
  for (int s = kMinScale;; ++s) {
    const int w = n * kGlyphW * s + (n - 1) * s;
    if (w > width || kGlyphH * s > height) break;
    max_scale = s;
  }
  if (max_scale == 0) {
    throw ValidationError(fmt::format("text \"{}\" does not fit a {}x{} canvas at glyph scale {}", text, height,
                                      width, kMinScale));
  }
  std::mt19937_64 rng(seed);
  TextLayout layout;
  layout.scale = std::uniform_int_distribution<int>(kMinScale, max_scale)(rng);
  const int s = layout.scale;
  for (int i = 0; i + 1 < n; ++i) layout.gaps.push_back(std::uniform_int_distribution<int>(1, s)(rng));
  const int total = text_width(text.size(), s, layout.gaps);
  layout.x0 = std::uniform_int_distribution<int>(0, static_cast<int>(width) - total)(rng);
  const int y_span = static_cast<int>(height) - kGlyphH * s;
  const int base = std::uniform_int_distribution<int>(0, y_span)(rng);
  for (int i = 0; i < n; ++i) {
    const int jitter = std::uniform_int_distribution<int>(-1, 1)(rng);
    layout.y_offsets.push_back(std::clamp(base + jitter, 0, y_span));
  }
  layout.background = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
  layout.ink = std::uniform_real_distribution<double>(0.7, 1.0)(rng);

  Sample out = render_text(text, layout, height, width);
  if (noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise);
    for (auto& v : out.image.data()) v = quantize(v + gauss(rng));
  }
  out.target = CharsetCodec::encode_target(text, steps);
  return out;
}

uint64_t sample_seed(uint64_t seed, uint64_t index) {
  // splitmix64 finalizer over the combined value
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Sample> generate_samples(const DatasetSpec& spec) {
  if (spec.count < 0) throw ValidationError("sample count must be non-negative");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) {
    throw ValidationError(fmt::format("bad word length range [{}, {}]", spec.min_length, spec.max_length));
  }
  if (spec.max_length > spec.steps - 2) {
    throw ValidationError(fmt::format("max word length {} exceeds T-2 = {}", spec.max_length, spec.steps - 2));
  }
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    const uint64_t s = sample_seed(spec.seed, static_cast<uint64_t>(i));
    std::mt19937_64 rng(s ^ 0xA5A5A5A5A5A5A5A5ULL);
    const int len = std::uniform_int_distribution<int>(spec.min_length, spec.max_length)(rng);
    std::string text;
    for (int k = 0; k < len; ++k) {
      text.push_back(kAlphabet[std::uniform_int_distribution<size_t>(0, kAlphabet.size() - 1)(rng)]);
    }
    out.push_back(render_sample(s, text, spec.height, spec.width, spec.noise, spec.steps));
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, std::span<const Sample> samples) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string rel = fmt::format("images/{:06d}.pgm", i);
    write_pgm(dir / rel, s.image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : s.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    nlohmann::json line = {{"image", rel}, {"text", s.text}, {"boxes", boxes}};
    manifest << line.dump() << '\n';
  }
  if (!manifest) throw IoError("failed writing " + (dir / "manifest.jsonl").string());
}

std::vector<Sample> make_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
  std::vector<Sample> samples = generate_samples(spec);
  save_dataset(dir, samples);
  return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir, int steps) {
  const auto manifest_path = dir / "manifest.jsonl";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset manifest " + manifest_path.string());
  std::vector<Sample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = line_context(manifest_path, line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("image") || !j["image"].is_string() || !j.contains("text") ||
        !j["text"].is_string() || !j.contains("boxes") || !j["boxes"].is_array()) {
      throw ValidationError(where + ": expected {\"image\": str, \"text\": str, \"boxes\": [[x0,y0,x1,y1],...]}");
    }
    Sample s;
    s.text = j["text"].get<std::string>();
    for (const auto& b : j["boxes"]) {
      if (!b.is_array() || b.size() != 4 || !std::all_of(b.begin(), b.end(), [](const auto& v) { return v.is_number(); })) {
        throw ValidationError(where + ": each box must be four numbers");
      }
      s.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
    }
    if (s.boxes.size() != s.text.size()) {
      throw ValidationError(fmt::format("{}: {} boxes for {} characters", where, s.boxes.size(), s.text.size()));
    }
    try {
      s.target = CharsetCodec::encode_target(s.text, steps);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    s.image = read_pgm(dir / j["image"].get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  auto fail = [&](const std::string& why) { return IoError("bad PGM file " + path.string() + ": " + why); };
  std::string magic;
  in >> magic;
  if (magic != "P5") throw fail("expected P5 magic");
  auto next_int = [&]() {
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      long v = -1;
      if (!(in >> v)) throw fail("truncated header");
      return v;
    }
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw fail("invalid header values");
  in.get();  // single whitespace before the raster
  const size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(w * h) * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw fail("truncated raster");
  Tensor img({1, 1, h, w});
  for (long i = 0; i < w * h; ++i) {
    const unsigned v = bytes_per == 1 ? raw[static_cast<size_t>(i)]
                                      : (unsigned{raw[2 * static_cast<size_t>(i)]} << 8) | raw[2 * static_cast<size_t>(i) + 1];
    img[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

namespace {

void write_bytes(const std::filesystem::path& path, int64_t h, int64_t w, const std::vector<unsigned char>& px) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<int64_t, int64_t> plane_of(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("image tensor must have at least 2 axes, got " + t.shape_str());
  const int64_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  if (h * w != t.numel()) throw ShapeError("image tensor must hold a single plane, got " + t.shape_str());
  return {h, w};
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const auto [h, w] = plane_of(image);
  std::vector<unsigned char> px(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) {
    px[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  write_bytes(path, h, w, px);
}

void write_pgm_normalized(const std::filesystem::path& path, const Tensor& map) {
  const auto [h, w] = plane_of(map);
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double range = *hi - *lo;
  std::vector<unsigned char> px(static_cast<size_t>(h * w), 0);
  if (range > 0.0) {
    for (int64_t i = 0; i < h * w; ++i) {
      px[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround((map[i] - *lo) / range * 255.0));
    }
  }
  write_bytes(path, h, w, px);
}

}  // namespace facl
