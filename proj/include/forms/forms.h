#ifndef FORMS_FORMS_H
#define FORMS_FORMS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define FORMS_API __declspec(dllexport)
#else
#define FORMS_API __attribute__((visibility("default")))
#endif

/* Values double as CLI exit codes. */
typedef enum forms_status {
  FORMS_OK = 0,
  FORMS_INVALID_ARGUMENT = 1,
  FORMS_CONFIG_ERROR = 2,
  FORMS_CONSTRAINT_VIOLATION = 3,
  FORMS_ORACLE_MISMATCH = 4,
  FORMS_IO_ERROR = 5,
  FORMS_STAGE_ORDER = 6,
  FORMS_CORRUPT_ARTIFACT = 7,
  FORMS_DIVERGENCE = 8,
  FORMS_INTERNAL = 9
} forms_status;

typedef struct forms_pipeline forms_pipeline;

typedef void (*forms_log_fn)(const char* message, void* user);

/* Message of the last failed call on this thread; "" if none. */
FORMS_API const char* forms_last_error(void);
FORMS_API const char* forms_version(void);
FORMS_API const char* forms_status_name(forms_status status);

/* config_path may be NULL for the built-in defaults. Artifacts go to
   <out_dir>/<config hash>/. */
FORMS_API forms_status forms_pipeline_create(const char* config_path, const char* out_dir, forms_pipeline** out);
FORMS_API forms_status forms_pipeline_create_from_json(const char* config_json, const char* out_dir,
                                                       forms_pipeline** out);
FORMS_API void forms_pipeline_destroy(forms_pipeline* p);

/* key: seed, fragment-size, quant-bits, adc-bits, no-skip, sigma, baseline.
   value is ignored for no-skip. Changes the config hash. */
FORMS_API forms_status forms_pipeline_set_option(forms_pipeline* p, const char* key, const char* value);
FORMS_API forms_status forms_pipeline_set_logger(forms_pipeline* p, forms_log_fn fn, void* user);

/* stage: compress, map, simulate, eic, report, or all. */
FORMS_API forms_status forms_pipeline_run_stage(forms_pipeline* p, const char* stage);

/* String getters copy into buf (NUL-terminated). *needed, if non-NULL,
   receives the full length including the terminator; a short buffer gives
   FORMS_INVALID_ARGUMENT. buf == NULL with needed != NULL is a size query. */
FORMS_API forms_status forms_pipeline_config_hash(const forms_pipeline* p, char* buf, size_t len, size_t* needed);
FORMS_API forms_status forms_pipeline_artifact_dir(const forms_pipeline* p, char* buf, size_t len, size_t* needed);
FORMS_API forms_status forms_pipeline_config_json(const forms_pipeline* p, char* buf, size_t len, size_t* needed);

/* Runs the invariant suites. Returns FORMS_ORACLE_MISMATCH if any check
   fails; report (optional) receives one "PASS|FAIL name: detail" line per check. */
FORMS_API forms_status forms_selftest(uint64_t seed, char* report, size_t len, size_t* needed);

/* Kernels. */
FORMS_API double forms_cycle_time_ns(double cols_per_adc, double adc_freq_ghz);
FORMS_API unsigned forms_effective_bits(uint32_t x);
FORMS_API unsigned forms_fragment_eic(const uint16_t* inputs, size_t n);
/* +1 or -1. */
FORMS_API int forms_fragment_sign(const double* weights, size_t n);
/* Writes ceil(quant_bits / cell_bits) digits, least significant first. */
FORMS_API forms_status forms_bit_slice(uint32_t magnitude, unsigned quant_bits, unsigned cell_bits, uint8_t* out,
                                       size_t len);

#ifdef __cplusplus
}
#endif

#endif
