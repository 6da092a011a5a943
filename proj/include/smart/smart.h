/* C interface to the SMArT captioning library. */
#ifndef SMART_SMART_H
#define SMART_SMART_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SMART_API __declspec(dllexport)
#else
#define SMART_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum smart_status {
  SMART_OK = 0,
  SMART_ERR_USAGE = 1,
  SMART_ERR_CONFIG = 2,
  SMART_ERR_SHAPE = 3,
  SMART_ERR_INPUT = 4,
  SMART_ERR_IO = 5,
  SMART_ERR_NUMERIC = 6,
  SMART_ERR_CHECK_FAILED = 7, /* a verification command ran and reported failure */
  SMART_ERR_INTERNAL = 8
} smart_status;

/* Message of the last failure on the calling thread ("" if none). */
SMART_API const char* smart_last_error(void);
SMART_API const char* smart_status_name(smart_status status);
SMART_API const char* smart_version(void);

/* Frees strings returned through char** out-parameters. */
SMART_API void smart_string_free(char* s);

/* Resolves a run configuration: defaults, then the optional JSON file, then
 * "section.key=value" overrides, then the SMART_SEED environment variable.
 * Writes the effective configuration as JSON. */
SMART_API smart_status smart_config_resolve(const char* config_path, const char* const* overrides,
                                            size_t n_overrides, char** out_json);

typedef struct smart_model smart_model;

/* model_config_json may be NULL or "" for the default configuration. */
SMART_API smart_status smart_model_create(const char* model_config_json, uint64_t seed,
                                          smart_model** out);
SMART_API smart_status smart_model_load(const char* checkpoint_path, smart_model** out);
SMART_API smart_status smart_model_save(const smart_model* model, const char* checkpoint_path);
SMART_API void smart_model_destroy(smart_model* model);
SMART_API smart_status smart_model_param_count(const smart_model* model, size_t* out);
SMART_API smart_status smart_model_config(const smart_model* model, char** out_json);

/* Decodes one region set (n_regions x feature_dim, row-major). Writes up to
 * `capacity` generated token ids (EOS included, BOS excluded). */
SMART_API smart_status smart_model_generate(const smart_model* model, const double* regions,
                                            size_t n_regions, size_t feature_dim,
                                            size_t beam_size, size_t max_len, int* out_tokens,
                                            size_t capacity, size_t* out_len,
                                            double* out_logprob);

/* Subcommands. Run-config commands take the JSON produced by
 * smart_config_resolve; the others take a JSON options object. Each writes a
 * JSON summary to *out_summary (may be NULL) on success, and also on
 * SMART_ERR_CHECK_FAILED. */
SMART_API smart_status smart_cmd_generate_data(const char* run_config_json, char** out_summary);
SMART_API smart_status smart_cmd_train(const char* run_config_json, int resume,
                                       char** out_summary);
SMART_API smart_status smart_cmd_finetune_scst(const char* run_config_json, char** out_summary);
SMART_API smart_status smart_cmd_generate(const char* options_json, char** out_summary);
SMART_API smart_status smart_cmd_evaluate(const char* options_json, char** out_summary);
SMART_API smart_status smart_cmd_coverage(const char* options_json, char** out_summary);
SMART_API smart_status smart_cmd_bench(const char* options_json, char** out_summary);
SMART_API smart_status smart_cmd_gradcheck(const char* options_json, char** out_summary);

#ifdef __cplusplus
}
#endif

#endif
