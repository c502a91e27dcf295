// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/config.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  for (;;) {
    const size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError(fmt::format("config key {}: cannot parse \"{}\"", key, v));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(fmt::format("config key {}: expected true/false, got \"{}\"", key, v));
}

}  // namespace

int64_t Config::total_steps() const {
  int64_t total = 0;
  for (const auto& s : schedule) total += s.steps;
  return total;
}

double Config::lr_at(int64_t step) const {
  int64_t end = 0;
  for (const auto& s : schedule) {
    end += s.steps;
    if (step < end) return s.lr;
  }
  return schedule.empty() ? 0.0 : schedule.back().lr;
}

DatasetSpec Config::dataset_spec(uint64_t s) const {
  DatasetSpec d;
  d.seed = s;
  d.count = dataset_count;
  d.min_length = min_length;
  d.max_length = max_length;
  d.height = net.image_height;
  d.width = net.image_width;
  d.noise = noise;
  d.steps = net.steps;
  return d;
}

void Config::set(std::string_view key, std::string_view value) {
  const auto i64 = [&] { return parse_number<int64_t>(key, value); };
  const auto i32 = [&] { return parse_number<int>(key, value); };
  const auto f64 = [&] { return parse_number<double>(key, value); };
  if (key == "image_height") net.image_height = i64();
  else if (key == "image_width") net.image_width = i64();
  else if (key == "steps") net.steps = i32();
  else if (key == "enc_channels") {
    const auto parts = split(value, ',');
    if (parts.size() != 3) throw ValidationError("config key enc_channels: expected three comma-separated counts");
    for (size_t i = 0; i < 3; ++i) net.enc_channels[i] = parse_number<int64_t>(key, parts[i]);
  }
  else if (key == "feat_channels") net.feat_channels = i64();
  else if (key == "cell_channels") net.cell_channels = i64();
  else if (key == "bottleneck_channels") net.bottleneck_channels = i64();
  else if (key == "attn_channels") net.attn_channels = i64();
  else if (key == "reduce_channels") net.reduce_channels = i64();
  else if (key == "kernel") net.kernel = i64();
  else if (key == "use_mask_branch") net.use_mask_branch = parse_bool(key, value);
  else if (key == "uniform_attention") net.uniform_attention = parse_bool(key, value);
  else if (key == "epsilon") epsilon = f64();
  else if (key == "lambda") lambda = f64();
  else if (key == "shrink_ratio") shrink_ratio = f64();
  else if (key == "lr_schedule") {
    schedule.clear();
    for (auto stage : split(value, ',')) {
      const auto parts = split(stage, ':');
      if (parts.size() != 2) throw ValidationError("config key lr_schedule: expected steps:lr pairs, got \"" + std::string(stage) + "\"");
      schedule.push_back({parse_number<int64_t>(key, parts[0]), parse_number<double>(key, parts[1])});
    }
  }
  else if (key == "batch_size") batch_size = i32();
  else if (key == "seed") seed = parse_number<uint64_t>(key, value);
  else if (key == "threads") threads = i32();
  else if (key == "adam_beta1") adam.beta1 = f64();
  else if (key == "adam_beta2") adam.beta2 = f64();
  else if (key == "adam_epsilon") adam.epsilon = f64();
  else if (key == "dataset_count") dataset_count = i32();
  else if (key == "min_length") min_length = i32();
  else if (key == "max_length") max_length = i32();
  else if (key == "noise") noise = f64();
  else throw ValidationError(fmt::format("unknown config key \"{}\"", key));
}

void Config::validate() const {
  net.validate();
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("epsilon must be in [0, 1)");
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
  if (!(shrink_ratio > 0.0 && shrink_ratio <= 1.0)) throw ValidationError("shrink_ratio must be in (0, 1]");
  if (schedule.empty()) throw ValidationError("lr_schedule must have at least one stage");
  for (const auto& s : schedule) {
    if (s.steps < 1 || !(s.lr >= 0.0)) throw ValidationError("lr_schedule stages need steps >= 1 and lr >= 0");
  }
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (threads < 1) throw ValidationError("threads must be >= 1");
  if (dataset_count < 0) throw ValidationError("dataset_count must be non-negative");
  if (min_length < 1 || max_length < min_length) throw ValidationError("need 1 <= min_length <= max_length");
  if (max_length > net.steps - 2) {
    throw ValidationError(fmt::format("max_length {} exceeds steps - 2 = {}", max_length, net.steps - 2));
  }
  if (!(noise >= 0.0)) throw ValidationError("noise must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0)) {
    throw ValidationError("adam parameters out of range");
  }
}

std::string Config::to_string() const {
  std::string sched;
  for (const auto& s : schedule) sched += fmt::format("{}{}:{}", sched.empty() ? "" : ",", s.steps, s.lr);
  return fmt::format(
      "image_height = {}\nimage_width = {}\nsteps = {}\nenc_channels = {},{},{}\nfeat_channels = {}\n"
      "cell_channels = {}\nbottleneck_channels = {}\nattn_channels = {}\nreduce_channels = {}\nkernel = {}\n"
      "use_mask_branch = {}\nuniform_attention = {}\nepsilon = {}\nlambda = {}\nshrink_ratio = {}\n"
      "lr_schedule = {}\nbatch_size = {}\nseed = {}\nthreads = {}\nadam_beta1 = {}\nadam_beta2 = {}\n"
      "adam_epsilon = {}\ndataset_count = {}\nmin_length = {}\nmax_length = {}\nnoise = {}\n",
      net.image_height, net.image_width, net.steps, net.enc_channels[0], net.enc_channels[1],
      net.enc_channels[2], net.feat_channels, net.cell_channels, net.bottleneck_channels, net.attn_channels,
      net.reduce_channels, net.kernel, net.use_mask_branch, net.uniform_attention, epsilon, lambda,
      shrink_ratio, sched, batch_size, seed, threads, adam.beta1, adam.beta2, adam.epsilon, dataset_count,
      min_length, max_length, noise);
}

Config parse_config(std::string_view text, const std::string& origin) {
  Config cfg;
  size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(fmt::format("{}:{}: expected key = value", origin, line_no));
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}:{}: {}", origin, line_no, e.what()));
    }
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

Config tiny_config() {
  Config c;
  c.net.image_height = 16;
  c.net.image_width = 32;
  c.net.enc_channels[0] = 4;
  c.net.enc_channels[1] = 8;
  c.net.enc_channels[2] = 16;
  c.net.feat_channels = 8;
  c.net.cell_channels = 8;
  c.net.bottleneck_channels = 8;
  c.net.attn_channels = 4;
  c.net.reduce_channels = 4;
  c.net.steps = 3;
  c.min_length = 1;
  c.max_length = 1;
  c.dataset_count = 4;
  c.batch_size = 2;
  c.schedule = {{2, 1e-3}};
  return c;
}

Config desk_config() {
  Config c;
  c.net.image_height = 32;
  c.net.image_width = 64;
  c.net.enc_channels[0] = 8;
  c.net.enc_channels[1] = 16;
  c.net.enc_channels[2] = 32;
  c.net.feat_channels = 16;
  c.net.cell_channels = 16;
  c.net.bottleneck_channels = 16;
  c.net.attn_channels = 8;
  c.net.reduce_channels = 8;
  c.net.steps = 7;
  c.min_length = 3;
  c.max_length = 5;
  c.dataset_count = 64;
  c.batch_size = 8;
  c.schedule = {{300, 1e-3}, {300, 1e-3}, {300, 5e-4}, {300, 1e-4}, {300, 1e-5}};
  return c;
}

}  // namespace facl
