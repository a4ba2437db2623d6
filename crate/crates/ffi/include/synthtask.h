#ifndef SYNTHTASK_H
#define SYNTHTASK_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_ARGUMENT = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_INVALID_JSON = 3,
  ST_STATUS_TEMPLATE_SYNTAX = 4,
  ST_STATUS_RENDER_FAILED = 5,
  ST_STATUS_UNPARSABLE = 6,
  ST_STATUS_EMPTY_SIDE = 7,
  ST_STATUS_FRAMING_FAILED = 8,
  ST_STATUS_UNKNOWN_TASK_TYPE = 9,
  ST_STATUS_METRIC_FAILED = 10,
  ST_STATUS_REGISTRY_FAILED = 11,
  ST_STATUS_OUT_OF_RANGE = 12,
  ST_STATUS_PANIC = 13,
} StStatus;

/*
 Loaded meta-template registry.
 */
typedef struct StRegistry StRegistry;

/*
 Parsed template.
 */
typedef struct StTemplate StTemplate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message from the most recent call on this thread if it failed,
 otherwise null. Valid until the next call on the same thread.
 */
const char *st_last_error_message(void);

/*
 Library version as a static string.
 */
const char *st_version(void);

/*
 # Safety
 `s` must come from this library, or be null.
 */
void st_string_free(char *s);

/*
 # Safety
 `source` must be a nul-terminated string; `out` must be writable.
 */
enum StStatus st_template_parse(const char *source, struct StTemplate **out);

/*
 # Safety
 `template` must come from [`st_template_parse`], or be null.
 */
void st_template_free(struct StTemplate *template_);

/*
 Whether the template declares answer choices.

 # Safety
 `template` must be a live handle, or null.
 */
bool st_template_has_choices(const struct StTemplate *template_);

/*
 Renders with variables taken from a JSON object.

 # Safety
 `template` must be a live handle, `bindings_json` a nul-terminated
 string and `out` writable.
 */
enum StStatus st_template_render(const struct StTemplate *template_,
                                 const char *bindings_json,
                                 uint64_t seed,
                                 char **out);

/*
 Renders the answer choices as a JSON array of strings.

 # Safety
 As for [`st_template_render`].
 */
enum StStatus st_template_render_choices(const struct StTemplate *template_,
                                         const char *bindings_json,
                                         uint64_t seed,
                                         char **out_json);

/*
 Splits generator output on its `<|pipe|>` line and substitutes `context`.

 # Safety
 String arguments must be nul-terminated; out-pointers writable.
 */
enum StStatus st_parse_generation(const char *raw,
                                  const char *context,
                                  char **out_instruction,
                                  char **out_response);

/*
 Frames one example for generator training.

 # Safety
 String arguments must be nul-terminated; out-pointers writable.
 */
enum StStatus st_serialize_generator_pair(const char *task_type,
                                          const char *context,
                                          const char *instruction,
                                          const char *response,
                                          char **out_input,
                                          char **out_output);

/*
 Maximum token-overlap F1 of `prediction` against `n_golds` answers.

 # Safety
 `golds` must point to `n_golds` nul-terminated strings.
 */
enum StStatus st_squad_f1(const char *prediction,
                          const char *const *golds,
                          size_t n_golds,
                          double *out);

/*
 Macro-averaged F1 over labels `0..n_labels`.

 # Safety
 `preds` and `golds` must each point to `n` values.
 */
enum StStatus st_macro_f1(const size_t *preds,
                          const size_t *golds,
                          size_t n,
                          size_t n_labels,
                          double *out);

/*
 Micro-averaged F1 over labels `0..n_labels`.

 # Safety
 As for [`st_macro_f1`].
 */
enum StStatus st_micro_f1(const size_t *preds,
                          const size_t *golds,
                          size_t n,
                          size_t n_labels,
                          double *out);

/*
 Mean and standard error of `n` values (n >= 2).

 # Safety
 `values` must point to `n` doubles.
 */
enum StStatus st_mean_stderr(const double *values, size_t n, double *out_mean, double *out_stderr);

/*
 # Safety
 `path` must be nul-terminated; `out` writable.
 */
enum StStatus st_registry_load(const char *path, struct StRegistry **out);

/*
 # Safety
 `registry` must be a live handle, or null.
 */
size_t st_registry_len(const struct StRegistry *registry);

/*
 Entry `index` as a JSON object with its id, dataset, task type, context
 field and template sources.

 # Safety
 `registry` must be a live handle; `out_json` writable.
 */
enum StStatus st_registry_entry_json(const struct StRegistry *registry,
                                     size_t index,
                                     char **out_json);

/*
 # Safety
 `registry` must come from [`st_registry_load`], or be null.
 */
void st_registry_free(struct StRegistry *registry);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYNTHTASK_H */
