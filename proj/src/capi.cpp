// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm.h"

#include <cstring>
#include <fstream>
#include <new>
#include <json.hpp>

#include "faclstm/checkpoint.hpp"
#include "faclstm/config.hpp"
#include "faclstm/errors.hpp"
#include "faclstm/trainer.hpp"

struct facl_config {
  facl::Config cfg;
};

struct facl_dataset {
  std::vector<facl::Sample> samples;
};

struct facl_model {
  facl::TrainState state;
};

struct facl_gradcheck_report {
  facl::GradcheckReport rep;
};

namespace {

thread_local std::string g_last_error;

template <class F>
facl_status guard(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return FACL_OK;
  } catch (const facl::IoError& e) {
    g_last_error = e.what();
    return FACL_ERR_IO;
  } catch (const facl::ValidationError& e) {
    g_last_error = e.what();
    return FACL_ERR_VALIDATION;
  } catch (const facl::NumericError& e) {
    g_last_error = e.what();
    return FACL_ERR_NUMERIC;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return FACL_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FACL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return FACL_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw facl::ValidationError(std::string(what) + " is null");
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size();
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

facl_status new_config(facl::Config cfg, facl_config** out) {
  return guard([&] {
    require(out, "out");
    cfg.validate();
    *out = new facl_config{std::move(cfg)};
  });
}

}  // namespace

extern "C" {

const char* facl_last_error(void) { return g_last_error.c_str(); }

const char* facl_version(void) { return "1.0.0"; }

facl_status facl_config_default(facl_config** out) { return new_config(facl::Config{}, out); }
facl_status facl_config_tiny(facl_config** out) { return new_config(facl::tiny_config(), out); }
facl_status facl_config_desk(facl_config** out) { return new_config(facl::desk_config(), out); }

facl_status facl_config_parse(const char* text, facl_config** out) {
  return guard([&] {
    require(text, "text");
    require(out, "out");
    *out = new facl_config{facl::parse_config(text)};
  });
}

facl_status facl_config_load(const char* path, facl_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new facl_config{facl::load_config(path)};
  });
}

facl_status facl_config_set(facl_config* cfg, const char* key, const char* value) {
  return guard([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    facl::Config next = cfg->cfg;
    next.set(key, value);
    next.validate();
    cfg->cfg = std::move(next);
  });
}

facl_status facl_config_to_string(const facl_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    require(cfg, "config");
    copy_out(cfg->cfg.to_string(), buf, cap, needed);
  });
}

int facl_config_steps(const facl_config* cfg) { return cfg ? cfg->cfg.net.steps : 0; }

void facl_config_free(facl_config* cfg) { delete cfg; }

facl_status facl_dataset_generate(const facl_config* cfg, uint64_t seed, const char* dir, facl_dataset** out) {
  return guard([&] {
    require(cfg, "config");
    require(dir, "dir");
    auto samples = facl::make_dataset(dir, cfg->cfg.dataset_spec(seed));
    if (out) *out = new facl_dataset{std::move(samples)};
  });
}

facl_status facl_dataset_load(const facl_config* cfg, const char* dir, facl_dataset** out) {
  return guard([&] {
    require(cfg, "config");
    require(dir, "dir");
    require(out, "out");
    *out = new facl_dataset{facl::load_dataset(dir, cfg->cfg.net.steps)};
  });
}

size_t facl_dataset_size(const facl_dataset* ds) { return ds ? ds->samples.size() : 0; }

facl_status facl_dataset_text(const facl_dataset* ds, size_t index, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    require(ds, "dataset");
    if (index >= ds->samples.size()) throw facl::ValidationError("dataset index out of range");
    copy_out(ds->samples[index].text, buf, cap, needed);
  });
}

void facl_dataset_free(facl_dataset* ds) { delete ds; }

facl_status facl_model_create(const facl_config* cfg, uint64_t seed, facl_model** out) {
  return guard([&] {
    require(cfg, "config");
    require(out, "out");
    cfg->cfg.validate();
    *out = new facl_model{{facl::init_model(cfg->cfg.net, seed), {}}};
  });
}

facl_status facl_model_load(const facl_config* cfg, const char* path, facl_model** out) {
  return guard([&] {
    require(cfg, "config");
    require(path, "path");
    require(out, "out");
    *out = new facl_model{facl::state_from_named(facl::load_checkpoint(path), cfg->cfg)};
  });
}

facl_status facl_model_save(const facl_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    facl::save_checkpoint(path, facl::state_to_named(model->state));
  });
}

int64_t facl_model_step(const facl_model* model) { return model ? model->state.adam.step : 0; }

void facl_model_free(facl_model* model) { delete model; }

facl_status facl_train(const facl_config* cfg, facl_model* model, const facl_dataset* ds,
                       const char* checkpoint_path, const char* metrics_path, facl_step_callback callback,
                       void* user) {
  return guard([&] {
    require(cfg, "config");
    require(model, "model");
    require(ds, "dataset");
    std::ofstream metrics;
    if (metrics_path) {
      const auto mode = model->state.adam.step == 0 ? std::ios::trunc : std::ios::app;
      metrics.open(metrics_path, std::ios::out | mode);
      if (!metrics) throw facl::IoError(std::string("cannot write metrics ") + metrics_path);
    }
    facl::TrainHooks hooks;
    hooks.on_step = [&](const facl::StepMetrics& m) {
      if (metrics.is_open()) {
        nlohmann::json line = {{"step", m.step},
                               {"Ls", m.sequence_loss},
                               {"Lm", m.mask_loss},
                               {"L", m.loss},
                               {"seq_acc", m.sequence_accuracy}};
        metrics << line.dump() << '\n' << std::flush;
      }
      if (callback) {
        const facl_step_metrics c{m.step, m.sequence_loss, m.mask_loss, m.loss, m.sequence_accuracy};
        callback(&c, user);
      }
    };
    if (checkpoint_path) {
      hooks.on_epoch = [&](int64_t, const facl::TrainState& s) {
        facl::save_checkpoint(checkpoint_path, facl::state_to_named(s));
      };
    }
    facl::train(cfg->cfg, ds->samples, model->state, hooks);
    if (checkpoint_path) facl::save_checkpoint(checkpoint_path, facl::state_to_named(model->state));
  });
}

facl_status facl_eval(const facl_config* cfg, const facl_model* model, const facl_dataset* ds,
                      facl_eval_report* out) {
  return guard([&] {
    require(cfg, "config");
    require(model, "model");
    require(ds, "dataset");
    require(out, "out");
    const auto rep = facl::evaluate(model->state.params, cfg->cfg, ds->samples);
    *out = {rep.count, rep.sequence_accuracy, rep.char_accuracy};
  });
}

facl_status facl_recognize(const facl_config* cfg, const facl_model* model, const char* image_path, char* buf,
                           size_t cap, size_t* needed) {
  return guard([&] {
    require(cfg, "config");
    require(model, "model");
    require(image_path, "image_path");
    copy_out(facl::recognize(model->state.params, cfg->cfg, facl::read_pgm(image_path)), buf, cap, needed);
  });
}

facl_status facl_gradcheck(const facl_config* cfg, uint64_t seed, int corrupt_backward,
                           facl_gradcheck_report** out) {
  return guard([&] {
    require(cfg, "config");
    require(out, "out");
    facl::GradcheckOptions opts;
    opts.corrupt_backward = corrupt_backward != 0;
    *out = new facl_gradcheck_report{facl::gradcheck(cfg->cfg, seed, opts)};
  });
}

size_t facl_gradcheck_group_count(const facl_gradcheck_report* rep) { return rep ? rep->rep.groups.size() : 0; }

facl_status facl_gradcheck_group(const facl_gradcheck_report* rep, size_t index, facl_grad_group* out) {
  return guard([&] {
    require(rep, "report");
    require(out, "out");
    if (index >= rep->rep.groups.size()) throw facl::ValidationError("group index out of range");
    const auto& g = rep->rep.groups[index];
    *out = {g.name.c_str(), g.checked, g.retried, g.max_rel_error, g.tolerance, g.passed() ? 1 : 0, g.worst.c_str()};
  });
}

int facl_gradcheck_passed(const facl_gradcheck_report* rep) { return rep && rep->rep.passed() ? 1 : 0; }

double facl_gradcheck_seconds(const facl_gradcheck_report* rep) { return rep ? rep->rep.seconds : 0.0; }

void facl_gradcheck_free(facl_gradcheck_report* rep) { delete rep; }

facl_status facl_visualize(const facl_config* cfg, const facl_model* model, const char* image_path,
                           const char* out_dir, char* buf, size_t cap, size_t* needed, size_t* files_written) {
  return guard([&] {
    require(cfg, "config");
    require(model, "model");
    require(image_path, "image_path");
    require(out_dir, "out_dir");
    const auto r = facl::visualize(model->state.params, cfg->cfg, facl::read_pgm(image_path), out_dir);
    copy_out(r.decoded, buf, cap, needed);
    if (files_written) *files_written = r.files.size();
  });
}

}  // extern "C"
