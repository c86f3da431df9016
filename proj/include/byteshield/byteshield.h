#ifndef BYTESHIELD_H
#define BYTESHIELD_H

/* Stable C interface to the byteshield library.
 *
 * Conventions:
 *  - Every fallible call returns bs_status. On failure, bs_last_error()
 *    returns a message for the calling thread, valid until that thread's
 *    next failing call.
 *  - Strings and byte buffers returned through out-parameters are owned by
 *    the caller and released with bs_string_free / bs_bytes_free.
 *  - Structured options and reports travel as JSON text. Unknown option keys
 *    are rejected so typos do not silently fall back to defaults.
 *  - Handles are immutable after creation and safe to share across threads,
 *    except bs_donors, which must not be modified while an attack reads it. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(BYTESHIELD_BUILDING)
#define BS_API __declspec(dllexport)
#else
#define BS_API __declspec(dllimport)
#endif
#else
#define BS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bs_status {
  BS_OK = 0,
  BS_ERR_INVALID_ARGUMENT = 1,
  BS_ERR_OUT_OF_RANGE = 2,
  BS_ERR_IO = 3,
  BS_ERR_PE_FORMAT = 4,
  BS_ERR_MODEL_FORMAT = 5,
  BS_ERR_MANIFEST = 6,
  BS_ERR_NOT_DETECTED = 7,
  BS_ERR_INTERNAL = 99
} bs_status;

typedef struct bs_model bs_model;
typedef struct bs_detector bs_detector;
typedef struct bs_donors bs_donors;

BS_API const char* bs_version(void);
BS_API const char* bs_status_name(bs_status status);
BS_API const char* bs_last_error(void);
BS_API void bs_string_free(char* s);
BS_API void bs_bytes_free(uint8_t* bytes);

/* ---- windows ---- */

/* Planned window count for a file of `length` bytes (M, S in percent). */
BS_API bs_status bs_plan_windows(size_t length, int mask_percent, int stride_percent, size_t* out_windows,
                                 size_t* out_nominal_count);

/* ---- corpus ---- */

/* options: count_per_class, min_size, max_size, signature_count,
 * signature_length, marker_count, marker_length, marker_spacing,
 * signature_spacing, months, start, drift_rate, seed, jobs.
 * Writes files, manifest.csv and corpus.json into out_dir. */
BS_API bs_status bs_gen_corpus(const char* options_json, const char* out_dir, char** out_report_json);

/* Validated manifest rows as a JSON array of {path, label, timestamp,
 * family}; paths are resolved against the manifest's directory. */
BS_API bs_status bs_manifest_load(const char* manifest_path, char** out_json);

/* ---- models ---- */

/* options: arch ("toy" | "full"), noise ("none" | "mask" | "delete" |
 * "chunk"), mask_percent, delete_prob, chunks, epochs, batch_size,
 * learning_rate, momentum, seed, init_seed.
 * Trains on every row of the manifest. The report holds the loss trace. */
BS_API bs_status bs_train(const char* manifest_path, const char* options_json, bs_model** out_model,
                          char** out_report_json);
BS_API bs_status bs_model_load(const char* path, bs_model** out_model);
BS_API bs_status bs_model_save(const bs_model* model, const char* path);
BS_API bs_status bs_model_info(const bs_model* model, char** out_json);
BS_API void bs_model_free(bs_model* model);

/* ---- detectors ---- */

/* options: defense ("none" | "byteshield" | "drs" | "rsdel"), mask, stride,
 * threshold, chunks, pdel, nsamples, seed, label_only, jobs. */
BS_API bs_status bs_detector_create(const bs_model* model, const char* options_json, bs_detector** out_detector);
BS_API void bs_detector_free(bs_detector* detector);

/* out_malicious receives 1 or 0. out_explain_json may be NULL; otherwise it
 * receives the vote tally and pass count. */
BS_API bs_status bs_predict(const bs_detector* detector, const uint8_t* data, size_t length, int* out_malicious,
                            char** out_explain_json);

/* ---- attacks ---- */

BS_API bs_status bs_donors_create(bs_donors** out_donors);
BS_API bs_status bs_donors_add(bs_donors* donors, const char* name, const uint8_t* data, size_t length);
BS_API void bs_donors_free(bs_donors* donors);

/* options: strategy, budget_percent, init, opt_budget, seed,
 * max_new_sections, stop_on_evasion. Returns BS_ERR_NOT_DETECTED when the
 * detector already calls the sample benign. out_bytes may be NULL. */
BS_API bs_status bs_attack(const bs_detector* detector, const bs_donors* donors, const uint8_t* data, size_t length,
                           const char* sample_id, const char* options_json, char** out_result_json,
                           uint8_t** out_bytes, size_t* out_length);

/* ---- evaluation ---- */

/* options: detectors (array of detector option objects, each with a "name"),
 * jobs, and optionally "sweep": {strategies, budgets, attack options,
 * donors_manifest, samples}. Clean metrics cover every manifest row; the
 * sweep attacks the malicious rows. out_sweep_csv may be NULL and stays
 * NULL when no sweep was requested. */
BS_API bs_status bs_evaluate(const bs_model* model, const char* manifest_path, const char* options_json,
                             char** out_json, char** out_metrics_csv, char** out_sweep_csv);

BS_API bs_status bs_temporal_eval(const bs_detector* detector, const char* manifest_path, int jobs, char** out_json,
                                  char** out_csv);

/* Exhaustive masking certificate with mask_percent of the file length. */
BS_API bs_status bs_certify(const bs_model* model, const uint8_t* data, size_t length, int mask_percent, int jobs,
                            char** out_json);

#ifdef __cplusplus
}
#endif

#endif
