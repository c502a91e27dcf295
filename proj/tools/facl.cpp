// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.
//
// facl generate|train|eval|gradcheck|visualize

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "faclstm.h"

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::optional<uint64_t> seed;
};

// Exit codes: 0 ok, 1 validation or I/O, 2 numeric.
int exit_code(facl_status s) {
  switch (s) {
    case FACL_OK: return 0;
    case FACL_ERR_NUMERIC: return 2;
    case FACL_ERR_INTERNAL: return 3;
    default: return 1;
  }
}

struct Failure {
  facl_status status;
};

void check(facl_status s, const char* what) {
  if (s != FACL_OK) {
    std::fprintf(stderr, "facl: %s: %s\n", what, facl_last_error());
    throw Failure{s};
  }
}

void need(const std::string& value, const char* flag, const char* cmd) {
  if (value.empty()) {
    std::fprintf(stderr, "facl %s: %s is required\n", cmd, flag);
    throw Failure{FACL_ERR_VALIDATION};
  }
}

using ConfigPtr = std::unique_ptr<facl_config, decltype(&facl_config_free)>;
using DatasetPtr = std::unique_ptr<facl_dataset, decltype(&facl_dataset_free)>;
using ModelPtr = std::unique_ptr<facl_model, decltype(&facl_model_free)>;

ConfigPtr load_config(const Options& o, bool tiny_default) {
  facl_config* cfg = nullptr;
  if (!o.config.empty()) {
    check(facl_config_load(o.config.c_str(), &cfg), "config");
  } else {
    check(tiny_default ? facl_config_tiny(&cfg) : facl_config_default(&cfg), "config");
  }
  ConfigPtr p(cfg, facl_config_free);
  if (o.seed) check(facl_config_set(cfg, "seed", std::to_string(*o.seed).c_str()), "seed");
  return p;
}

uint64_t seed_of(const Options& o, const facl_config* cfg) {
  if (o.seed) return *o.seed;
  char buf[4096];
  check(facl_config_to_string(cfg, buf, sizeof buf, nullptr), "config");
  const char* s = std::strstr(buf, "\nseed = ");
  return s ? std::strtoull(s + 8, nullptr, 10) : 0;
}

DatasetPtr load_dataset(const facl_config* cfg, const std::string& dir) {
  facl_dataset* ds = nullptr;
  check(facl_dataset_load(cfg, dir.c_str(), &ds), "dataset");
  return DatasetPtr(ds, facl_dataset_free);
}

ModelPtr load_model(const facl_config* cfg, const std::string& path) {
  facl_model* m = nullptr;
  check(facl_model_load(cfg, path.c_str(), &m), "checkpoint");
  return ModelPtr(m, facl_model_free);
}

void cmd_generate(const Options& o) {
  need(o.out, "--out", "generate");
  auto cfg = load_config(o, false);
  facl_dataset* ds = nullptr;
  check(facl_dataset_generate(cfg.get(), seed_of(o, cfg.get()), o.out.c_str(), &ds), "generate");
  DatasetPtr keep(ds, facl_dataset_free);
  std::printf("wrote %zu samples to %s\n", facl_dataset_size(ds), o.out.c_str());
}

void print_step(const facl_step_metrics* m, void*) {
  if (m->step % 50 == 0 || m->step == 1) {
    std::fprintf(stderr, "step %lld  Ls %.5f  Lm %.5f  L %.5f  seq_acc %.3f\n", static_cast<long long>(m->step),
                 m->sequence_loss, m->mask_loss, m->loss, m->sequence_accuracy);
  }
}

void cmd_train(const Options& o) {
  need(o.data, "--data", "train");
  need(o.out, "--out", "train");
  auto cfg = load_config(o, false);
  auto ds = load_dataset(cfg.get(), o.data);
  ModelPtr model(nullptr, facl_model_free);
  if (!o.checkpoint.empty()) {
    model = load_model(cfg.get(), o.checkpoint);
  } else {
    facl_model* m = nullptr;
    check(facl_model_create(cfg.get(), seed_of(o, cfg.get()), &m), "model");
    model.reset(m);
  }
  const std::string metrics = o.out + ".metrics.jsonl";
  check(facl_train(cfg.get(), model.get(), ds.get(), o.out.c_str(), metrics.c_str(), print_step, nullptr), "train");
  std::printf("trained to step %lld; checkpoint %s, metrics %s\n",
              static_cast<long long>(facl_model_step(model.get())), o.out.c_str(), metrics.c_str());
}

void cmd_eval(const Options& o) {
  need(o.data, "--data", "eval");
  need(o.checkpoint, "--checkpoint", "eval");
  auto cfg = load_config(o, false);
  auto model = load_model(cfg.get(), o.checkpoint);
  auto ds = load_dataset(cfg.get(), o.data);
  facl_eval_report rep{};
  check(facl_eval(cfg.get(), model.get(), ds.get(), &rep), "eval");
  std::printf("{\"count\": %lld, \"sequence_accuracy\": %.6f, \"char_accuracy\": %.6f}\n",
              static_cast<long long>(rep.count), rep.sequence_accuracy, rep.char_accuracy);
}

void cmd_gradcheck(const Options& o, bool corrupt) {
  auto cfg = load_config(o, true);
  facl_gradcheck_report* rep = nullptr;
  check(facl_gradcheck(cfg.get(), seed_of(o, cfg.get()), corrupt ? 1 : 0, &rep), "gradcheck");
  std::unique_ptr<facl_gradcheck_report, decltype(&facl_gradcheck_free)> keep(rep, facl_gradcheck_free);
  std::printf("%-12s %8s %8s %14s %10s  %s\n", "group", "checked", "retried", "max_rel_err", "tolerance", "result");
  for (size_t i = 0; i < facl_gradcheck_group_count(rep); ++i) {
    facl_grad_group g{};
    check(facl_gradcheck_group(rep, i, &g), "gradcheck");
    std::printf("%-12s %8lld %8lld %14.3e %10.0e  %s\n", g.name, static_cast<long long>(g.checked),
                static_cast<long long>(g.retried), g.max_rel_error,
                g.tolerance, g.passed ? "PASS" : "FAIL");
    if (!g.passed) std::printf("  worst: %s\n", g.worst);
  }
  std::printf("%.1f s\n", facl_gradcheck_seconds(rep));
  if (!facl_gradcheck_passed(rep)) throw Failure{FACL_ERR_NUMERIC};
}

void cmd_visualize(const Options& o) {
  need(o.checkpoint, "--checkpoint", "visualize");
  need(o.data, "--data", "visualize");
  need(o.out, "--out", "visualize");
  auto cfg = load_config(o, false);
  auto model = load_model(cfg.get(), o.checkpoint);
  char decoded[256];
  size_t files = 0;
  check(facl_visualize(cfg.get(), model.get(), o.data.c_str(), o.out.c_str(), decoded, sizeof decoded, nullptr,
                       &files),
        "visualize");
  std::fprintf(stderr, "wrote %zu PGM files to %s\n", files, o.out.c_str());
  std::printf("%s\n", decoded);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FACLSTM text recognition kit"};
  app.require_subcommand(1);
  Options o;
  bool corrupt = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "config file (key = value lines)");
    cmd->add_option("--seed", o.seed, "seed override");
  };
  auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", o.out, "dataset directory");
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", o.data, "dataset directory");
  train->add_option("--out", o.out, "checkpoint to write");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint to resume from");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval);
  eval->add_option("--data", o.data, "dataset directory");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint");
  auto* grad = app.add_subcommand("gradcheck", "compare taped gradients with finite differences");
  add_common(grad);
  grad->add_flag("--corrupt-backward", corrupt, "perturb the conv backward pass (negative control)");
  auto* vis = app.add_subcommand("visualize", "write mask and attention maps as PGM");
  add_common(vis);
  vis->add_option("--data", o.data, "input image (P5 PGM)");
  vis->add_option("--checkpoint", o.checkpoint, "checkpoint");
  vis->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    if (gen->parsed()) cmd_generate(o);
    else if (train->parsed()) cmd_train(o);
    else if (eval->parsed()) cmd_eval(o);
    else if (grad->parsed()) cmd_gradcheck(o, corrupt);
    else if (vis->parsed()) cmd_visualize(o);
  } catch (const Failure& f) {
    return exit_code(f.status);
  }
  return 0;
}
