/* Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License. */

#ifndef FACLSTM_H_
#define FACLSTM_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FACL_API __declspec(dllexport)
#else
#define FACL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum facl_status {
  FACL_OK = 0,
  FACL_ERR_VALIDATION = 1, /* bad config, shape mismatch, malformed file */
  FACL_ERR_NUMERIC = 2,    /* non-finite loss or gradient */
  FACL_ERR_IO = 3,
  FACL_ERR_INTERNAL = 4
} facl_status;

typedef struct facl_config facl_config;
typedef struct facl_dataset facl_dataset;
typedef struct facl_model facl_model;
typedef struct facl_gradcheck_report facl_gradcheck_report;

/* Message for the last failed call on this thread; "" when none. */
FACL_API const char* facl_last_error(void);
FACL_API const char* facl_version(void);

/* String outputs: writes at most cap bytes including the terminator and
   stores the full length (without terminator) in *needed when non-null. */

FACL_API facl_status facl_config_default(facl_config** out);
FACL_API facl_status facl_config_tiny(facl_config** out);
FACL_API facl_status facl_config_desk(facl_config** out);
FACL_API facl_status facl_config_parse(const char* text, facl_config** out);
FACL_API facl_status facl_config_load(const char* path, facl_config** out);
FACL_API facl_status facl_config_set(facl_config* cfg, const char* key, const char* value);
FACL_API facl_status facl_config_to_string(const facl_config* cfg, char* buf, size_t cap, size_t* needed);
FACL_API int facl_config_steps(const facl_config* cfg);
FACL_API void facl_config_free(facl_config* cfg);

/* Renders cfg's dataset_count samples from seed into dir (images/ + manifest.jsonl).
   out may be null. */
FACL_API facl_status facl_dataset_generate(const facl_config* cfg, uint64_t seed, const char* dir,
                                           facl_dataset** out);
FACL_API facl_status facl_dataset_load(const facl_config* cfg, const char* dir, facl_dataset** out);
FACL_API size_t facl_dataset_size(const facl_dataset* ds);
FACL_API facl_status facl_dataset_text(const facl_dataset* ds, size_t index, char* buf, size_t cap,
                                       size_t* needed);
FACL_API void facl_dataset_free(facl_dataset* ds);

/* A model carries parameters and optimizer state. */
FACL_API facl_status facl_model_create(const facl_config* cfg, uint64_t seed, facl_model** out);
FACL_API facl_status facl_model_load(const facl_config* cfg, const char* path, facl_model** out);
FACL_API facl_status facl_model_save(const facl_model* model, const char* path);
FACL_API int64_t facl_model_step(const facl_model* model);
FACL_API void facl_model_free(facl_model* model);

typedef struct facl_step_metrics {
  int64_t step;
  double sequence_loss;
  double mask_loss;
  double loss;
  double sequence_accuracy;
} facl_step_metrics;

typedef void (*facl_step_callback)(const facl_step_metrics* metrics, void* user);

/* Trains from the model's step counter to the end of the schedule. When
   checkpoint_path is set the model is saved there after every epoch and at
   the end. When metrics_path is set one JSON line per step is written there;
   the file is truncated for a fresh model and appended to on resume. */
FACL_API facl_status facl_train(const facl_config* cfg, facl_model* model, const facl_dataset* ds,
                                const char* checkpoint_path, const char* metrics_path,
                                facl_step_callback callback, void* user);

typedef struct facl_eval_report {
  int64_t count;
  double sequence_accuracy;
  double char_accuracy;
} facl_eval_report;

FACL_API facl_status facl_eval(const facl_config* cfg, const facl_model* model, const facl_dataset* ds,
                               facl_eval_report* out);

/* Decodes a single P5 image. */
FACL_API facl_status facl_recognize(const facl_config* cfg, const facl_model* model, const char* image_path,
                                    char* buf, size_t cap, size_t* needed);

typedef struct facl_grad_group {
  const char* name; /* owned by the report */
  int64_t checked;
  int64_t retried; /* entries re-probed at a smaller step */
  double max_rel_error;
  double tolerance;
  int passed;
  const char* worst; /* owned by the report */
} facl_grad_group;

FACL_API facl_status facl_gradcheck(const facl_config* cfg, uint64_t seed, int corrupt_backward,
                                    facl_gradcheck_report** out);
FACL_API size_t facl_gradcheck_group_count(const facl_gradcheck_report* rep);
FACL_API facl_status facl_gradcheck_group(const facl_gradcheck_report* rep, size_t index, facl_grad_group* out);
FACL_API int facl_gradcheck_passed(const facl_gradcheck_report* rep);
FACL_API double facl_gradcheck_seconds(const facl_gradcheck_report* rep);
FACL_API void facl_gradcheck_free(facl_gradcheck_report* rep);

/* Writes mask.pgm and attn_01.pgm .. attn_TT.pgm into out_dir and returns the
   decoded string in buf. */
FACL_API facl_status facl_visualize(const facl_config* cfg, const facl_model* model, const char* image_path,
                                    const char* out_dir, char* buf, size_t cap, size_t* needed,
                                    size_t* files_written);

#ifdef __cplusplus
}
#endif

#endif /* FACLSTM_H_ */
