// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "faclstm.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("facl_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(FACL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("config handles and error reporting") {
  facl_config* cfg = nullptr;
  REQUIRE(facl_config_tiny(&cfg) == FACL_OK);
  CHECK(facl_config_steps(cfg) == 3);
  CHECK(facl_config_set(cfg, "steps", "5") == FACL_OK);
  CHECK(facl_config_steps(cfg) == 5);
  CHECK(facl_config_set(cfg, "nope", "1") == FACL_ERR_VALIDATION);
  CHECK(std::string(facl_last_error()).find("nope") != std::string::npos);
  CHECK(facl_config_set(cfg, "image_height", "12") == FACL_ERR_VALIDATION);
  CHECK(facl_config_steps(cfg) == 5);

  size_t needed = 0;
  CHECK(facl_config_to_string(cfg, nullptr, 0, &needed) == FACL_OK);
  std::string text(needed + 1, '\0');
  CHECK(facl_config_to_string(cfg, text.data(), text.size(), nullptr) == FACL_OK);
  text.resize(needed);
  facl_config* copy = nullptr;
  CHECK(facl_config_parse(text.c_str(), &copy) == FACL_OK);
  CHECK(facl_config_steps(copy) == 5);
  facl_config_free(copy);

  CHECK(facl_config_load("/nonexistent.conf", &copy) == FACL_ERR_IO);
  CHECK(facl_config_parse("steps = x", &copy) == FACL_ERR_VALIDATION);
  CHECK(facl_config_parse(nullptr, &copy) == FACL_ERR_VALIDATION);
  facl_config_free(cfg);
}

TEST_CASE("generate, train, resume, evaluate through the C API") {
  const fs::path dir = scratch("flow");
  facl_config* cfg = nullptr;
  REQUIRE(facl_config_tiny(&cfg) == FACL_OK);
  facl_dataset* ds = nullptr;
  REQUIRE(facl_dataset_generate(cfg, 3, (dir / "data").c_str(), &ds) == FACL_OK);
  CHECK(facl_dataset_size(ds) == 4);
  char text[16];
  CHECK(facl_dataset_text(ds, 0, text, sizeof text, nullptr) == FACL_OK);
  CHECK(std::string(text).size() == 1);

  facl_model* model = nullptr;
  REQUIRE(facl_model_create(cfg, 1, &model) == FACL_OK);
  const std::string ckpt = (dir / "m.ckpt").string(), metrics = (dir / "m.jsonl").string();
  REQUIRE(facl_train(cfg, model, ds, ckpt.c_str(), metrics.c_str(), nullptr, nullptr) == FACL_OK);
  CHECK(facl_model_step(model) == 2);
  auto lines = read_jsonl(metrics);
  REQUIRE(lines.size() == 2);
  for (const char* key : {"step", "Ls", "Lm", "L", "seq_acc"}) CHECK(lines[0].contains(key));
  CHECK(lines[1]["step"] == 2);

  facl_model* loaded = nullptr;
  REQUIRE(facl_model_load(cfg, ckpt.c_str(), &loaded) == FACL_OK);
  CHECK(facl_model_step(loaded) == 2);
  facl_eval_report a{}, b{};
  CHECK(facl_eval(cfg, model, ds, &a) == FACL_OK);
  CHECK(facl_eval(cfg, loaded, ds, &b) == FACL_OK);
  CHECK(a.sequence_accuracy == b.sequence_accuracy);
  CHECK(a.char_accuracy == b.char_accuracy);

  REQUIRE(facl_config_set(cfg, "lr_schedule", "2:1e-3,2:1e-4") == FACL_OK);
  int calls = 0;
  auto cb = [](const facl_step_metrics* m, void* user) {
    ++*static_cast<int*>(user);
    CHECK(m->step >= 3);
  };
  REQUIRE(facl_train(cfg, loaded, ds, ckpt.c_str(), metrics.c_str(), cb, &calls) == FACL_OK);
  CHECK(calls == 2);
  lines = read_jsonl(metrics);
  REQUIRE(lines.size() == 4);
  for (size_t i = 0; i < lines.size(); ++i) CHECK(lines[i]["step"] == static_cast<int>(i + 1));

  facl_config* wrong = nullptr;
  REQUIRE(facl_config_tiny(&wrong) == FACL_OK);
  REQUIRE(facl_config_set(wrong, "cell_channels", "6") == FACL_OK);
  facl_model* bad = nullptr;
  CHECK(facl_model_load(wrong, ckpt.c_str(), &bad) == FACL_ERR_VALIDATION);
  CHECK(std::string(facl_last_error()).find("cell.") != std::string::npos);

  facl_config_free(wrong);
  facl_model_free(loaded);
  facl_model_free(model);
  facl_dataset_free(ds);
  facl_config_free(cfg);
  fs::remove_all(dir);
}

TEST_CASE("visualize through the C API") {
  const fs::path dir = scratch("vis");
  facl_config* cfg = nullptr;
  REQUIRE(facl_config_tiny(&cfg) == FACL_OK);
  REQUIRE(facl_dataset_generate(cfg, 8, (dir / "data").c_str(), nullptr) == FACL_OK);
  facl_model* model = nullptr;
  REQUIRE(facl_model_create(cfg, 2, &model) == FACL_OK);
  char decoded[64];
  size_t files = 0;
  CHECK(facl_visualize(cfg, model, (dir / "data" / "images" / "000000.pgm").c_str(), (dir / "out").c_str(), decoded,
                       sizeof decoded, nullptr, &files) == FACL_OK);
  CHECK(files == 4);
  CHECK(facl_visualize(cfg, model, (dir / "missing.pgm").c_str(), (dir / "out").c_str(), decoded, sizeof decoded,
                       nullptr, &files) == FACL_ERR_IO);
  CHECK(facl_recognize(cfg, model, (dir / "data" / "images" / "000001.pgm").c_str(), decoded, sizeof decoded,
                       nullptr) == FACL_OK);
  facl_model_free(model);
  facl_config_free(cfg);
  fs::remove_all(dir);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  const std::string d = dir.string();
  const std::string tiny = std::string(FACL_CONFIGS) + "/tiny.conf";
  CHECK(run("generate --config " + tiny + " --out " + d + "/data") == 0);
  CHECK(fs::exists(dir / "data" / "manifest.jsonl"));
  CHECK(run("train --config " + tiny + " --data " + d + "/data --out " + d + "/m.ckpt") == 0);
  CHECK(read_jsonl(dir / "m.ckpt.metrics.jsonl").size() == 2);
  CHECK(run("eval --config " + tiny + " --data " + d + "/data --checkpoint " + d + "/m.ckpt") == 0);
  CHECK(run("visualize --config " + tiny + " --data " + d + "/data/images/000000.pgm --checkpoint " + d +
            "/m.ckpt --out " + d + "/vis") == 0);
  CHECK(fs::exists(dir / "vis" / "attn_03.pgm"));

  // validation failures
  CHECK(run("train --config " + tiny + " --data " + d + "/missing --out " + d + "/x.ckpt") == 1);
  CHECK(run("eval --config " + tiny + " --data " + d + "/data") == 1);
  {
    std::ofstream bad(dir / "bad.conf");
    bad << "steps = banana\n";
  }
  CHECK(run("generate --config " + d + "/bad.conf --out " + d + "/g") == 1);
  {
    std::ofstream other(dir / "other.conf");
    other << "image_height = 16\nimage_width = 32\nsteps = 3\nenc_channels = 4,8,16\nfeat_channels = 8\n"
             "cell_channels = 6\nmin_length = 1\nmax_length = 1\n";
  }
  CHECK(run("eval --config " + d + "/other.conf --data " + d + "/data --checkpoint " + d + "/m.ckpt") == 1);
  CHECK(run("frobnicate") == 1);

  // numeric failure: a huge learning rate drives the loss non-finite
  {
    std::ifstream in(tiny);
    std::ofstream hot(dir / "hot.conf");
    hot << in.rdbuf() << "lr_schedule = 40:1e300\n";
  }
  CHECK(run("train --config " + d + "/hot.conf --data " + d + "/data --out " + d + "/hot.ckpt") == 2);
  fs::remove_all(dir);
}
