#ifndef APFL_APFL_H
#define APFL_APFL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define APFL_API __declspec(dllexport)
#else
#define APFL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible call. 0 is success. */
typedef enum apfl_status {
  APFL_OK = 0,
  APFL_INVALID_ARGUMENT = 1,
  APFL_SHAPE_MISMATCH = 2,
  APFL_LENGTH_MISMATCH = 3,
  APFL_NAME_TOO_LONG = 4,
  APFL_TRUNCATED = 5,
  APFL_BAD_DTYPE_TAG = 6,
  APFL_TRAILING_BYTES = 7,
  APFL_EMPTY_DATASET = 8,
  APFL_INFEASIBLE_PARTITION = 9,
  APFL_EMPTY_UPDATE_LIST = 10,
  APFL_NEGATIVE_STALENESS = 11,
  APFL_DUPLICATE_UPDATE = 12,
  APFL_INVALID_BOUNDS = 13,
  APFL_UNKNOWN_CLIENT = 14,
  APFL_NOT_CLIPPED = 15,
  APFL_NON_FINITE_VALUE = 16,
  APFL_CORRUPT_BLOB = 17,
  APFL_CHECKSUM_MISMATCH = 18,
  APFL_BAD_MAGIC = 19,
  APFL_UNSUPPORTED_VERSION = 20,
  APFL_OVERSIZED_PAYLOAD = 21,
  APFL_UNAUTHENTICATED = 22,
  APFL_UNKNOWN_CONNECTOR = 23,
  APFL_MISSING_KEY = 24,
  APFL_UNKNOWN_TYPE = 25,
  APFL_MISSING_LEAF_UPDATE = 26,
  APFL_DIM_MISMATCH = 27,
  APFL_PARSE_ERROR = 28,
  APFL_UNKNOWN_KEY = 29,
  APFL_MISSING_REQUIRED = 30,
  APFL_UNKNOWN_STRATEGY_NAME = 31,
  APFL_CONFIG_ERROR = 32,
  APFL_NON_TERMINATING = 33,
  APFL_CONNECTION_REFUSED = 34,
  APFL_PROTOCOL_ERROR = 35,
  APFL_IO_ERROR = 36,
  APFL_NOT_IMPLEMENTED = 37,
  APFL_INTERNAL = 99
} apfl_status;

typedef struct apfl_experiment apfl_experiment;
typedef struct apfl_result apfl_result;

APFL_API const char* apfl_version(void);

/* Message of the last failure on the calling thread; empty when none. */
APFL_API const char* apfl_last_error(void);

/* Short name of a status code, e.g. "UnknownKey". */
APFL_API const char* apfl_status_name(int status);

/* trace, debug, info, warn, error, off */
APFL_API int apfl_set_log_level(const char* level);

/* ---- experiments ---------------------------------------------------------- */

/* Server file plus optional per-client files (may be NULL when n == 0). */
APFL_API int apfl_experiment_load(const char* server_yaml, const char* const* client_yamls, size_t n,
                                  apfl_experiment** out);
APFL_API void apfl_experiment_free(apfl_experiment* exp);
APFL_API size_t apfl_experiment_client_count(const apfl_experiment* exp);

/* Resolved configuration as YAML. Writes at most `cap` bytes including the
   terminator; `needed` (optional) receives the full length plus one. */
APFL_API int apfl_experiment_describe(const apfl_experiment* exp, char* buf, size_t cap, size_t* needed);

/* Virtual-clock simulation (star) or round-based run (other topologies). */
APFL_API int apfl_simulate(const apfl_experiment* exp, apfl_result** out);

/* Serves the experiment over TCP; port < 0 keeps the configured bind port. */
APFL_API int apfl_run_server(const apfl_experiment* exp, int port, apfl_result** out);

/* One client process. host may be NULL and port < 0 to use the file's values;
   token may be NULL to use $APFL_TOKEN or the file. `rounds` is optional. */
APFL_API int apfl_run_client(const char* client_yaml, const char* host, int port, const char* token, int* rounds);

/* ---- results ---------------------------------------------------------------- */

APFL_API void apfl_result_free(apfl_result* res);
APFL_API int apfl_result_write_run_dir(const apfl_experiment* exp, const apfl_result* res, const char* dir);
APFL_API size_t apfl_result_record_count(const apfl_result* res);
/* Strings stay valid until the result is freed. */
APFL_API int apfl_result_record(const apfl_result* res, size_t i, double* timestamp, const char** entity,
                                const char** kind, double* value);
/* Value of the last server record of the given kind (e.g. "val_accuracy"). */
APFL_API int apfl_result_last_server_metric(const apfl_result* res, const char* kind, double* value);
APFL_API double apfl_result_end_time(const apfl_result* res);
APFL_API int64_t apfl_result_aggregations(const apfl_result* res);
APFL_API uint64_t apfl_result_updates(const apfl_result* res);
APFL_API size_t apfl_result_client_count(const apfl_result* res);
APFL_API int apfl_result_utilization(const apfl_result* res, size_t i, const char** client, double* compute_seconds,
                                     double* total_seconds, double* utilization);
APFL_API int apfl_result_save_model(const apfl_result* res, const char* path);

/* ---- benchmarks ------------------------------------------------------------- */

/* transports: comma list of inproc,tcp. Writes a CSV table. */
APFL_API int apfl_bench_comm(const uint64_t* sizes, size_t n_sizes, const char* transports, int trials,
                             uint64_t inline_limit, const char* out_csv);

/* models: comma list of reference names (fc1x1,cnn,resnet18,resnet50,resnet101,vit)
   or "all"; codecs: comma list of qz[:eb],deflate,rle,none. */
APFL_API int apfl_bench_compress(const char* models, const char* codecs, uint64_t seed, const char* out_csv);

/* Parameter count of a reference model, 0 when unknown. */
APFL_API uint64_t apfl_reference_model_params(const char* name);

/* Reads <run_dir>/gantt.csv, writes <run_dir>/utilization_report.csv. */
APFL_API int apfl_report_utilization(const char* run_dir, size_t* n_clients);

#ifdef __cplusplus
}
#endif

#endif
