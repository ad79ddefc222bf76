/* screenkit C API: opaque handles, integer status codes, JSON results. */
#ifndef SCREENKIT_H
#define SCREENKIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SK_API __attribute__((visibility("default")))
#else
#define SK_API
#endif

typedef enum sk_status {
  SK_OK = 0,
  SK_ERR_INVALID_ARGUMENT = 1,
  SK_ERR_IO = 2,
  SK_ERR_CONFIG_VALIDATION = 3,
  SK_ERR_UNKNOWN_SUBCOMMAND = 4,
  SK_ERR_MISSING_TITLE_COLUMN = 5,
  SK_ERR_DUPLICATE_RECORD_ID = 6,
  SK_ERR_EMPTY_CORPUS = 7,
  SK_ERR_LABEL_CONFLICT = 8,
  SK_ERR_EMPTY_CRITERIA = 9,
  SK_ERR_ALREADY_BIASED = 10,
  SK_ERR_TOKEN_COLLISION = 11,
  SK_ERR_RUN_DIR_LOCKED = 12,
  SK_ERR_PROVIDER_AUTH = 13,
  SK_ERR_CORRUPT_LEDGER = 14,
  SK_ERR_UNKNOWN_MODEL_PRICE = 15,
  SK_ERR_MISSING_DECISION_LINE = 16,
  SK_ERR_MISSING_CONFIDENCE_LINE = 17,
  SK_ERR_UNKNOWN_DECISION_TOKEN = 18,
  SK_ERR_CONFIDENCE_OUT_OF_RANGE = 19,
  SK_ERR_MIXED_RECORD_IDS = 20,
  SK_ERR_MISSING_CRITIC_DECISION = 21,
  SK_ERR_NO_LABELED_RECORDS = 22,
  SK_ERR_EMPTY_TARGET_SET = 23,
  SK_ERR_DEGENERATE_LABELS = 24,
  SK_ERR_EMPTY_SAMPLE = 25,
  SK_ERR_DEGENERATE_MARGINS = 26,
  SK_ERR_CLIENT_UNREACHABLE = 27,
  SK_ERR_INTERNAL = 100
} sk_status;

typedef struct sk_context sk_context;
typedef struct sk_server sk_server;

SK_API const char* sk_version(void);
SK_API const char* sk_status_name(sk_status status);
/* 1 when the status reports bad input, 0 for runtime failures and SK_OK. */
SK_API int sk_status_is_validation(sk_status status);

SK_API sk_context* sk_context_new(void);
SK_API void sk_context_free(sk_context* ctx);
/* Message of the last failed call on ctx; "" after a success. */
SK_API const char* sk_last_error(const sk_context* ctx);
/* JSON document produced by the last successful call on ctx. */
SK_API const char* sk_result_json(const sk_context* ctx);

/* Normalizes a corpus CSV into out_dir/corpus.csv and out_dir/corpus_stats.json.
   column_map_json may be NULL. */
SK_API sk_status sk_ingest(sk_context* ctx, const char* corpus_path, const char* column_map_json,
                           const char* out_dir);

/* Writes the actor request file for a run config. */
SK_API sk_status sk_build_requests(sk_context* ctx, const char* config_path, const char* out_path);

/* Executes a request file into run_dir, or continues it when resume is non-zero.
   model_id NULL takes the model named in the request file; budget_json may be NULL. */
SK_API sk_status sk_run_batch(sk_context* ctx, const char* request_path, const char* model_id,
                              const char* budget_json, const char* run_dir, int resume);

/* Full pipeline for a run config file. */
SK_API sk_status sk_screen(sk_context* ctx, const char* config_path, const char* run_dir);

/* Evaluates a screened run directory. excludes_path may be NULL; level is
   "fulltext" or "final". */
SK_API sk_status sk_evaluate(sk_context* ctx, const char* run_dir, const char* includes_path,
                             const char* excludes_path, const char* level);

/* Compares two corpora. options_json may be NULL or hold label_a, label_b and,
   for open-access lookup, oa_email, oa_cache, unpaywall_base, doaj_base. */
SK_API sk_status sk_diagnose(sk_context* ctx, const char* corpus_a, const char* corpus_b,
                             const char* options_json);

SK_API sk_status sk_fisher_exact(sk_context* ctx, uint64_t a, uint64_t b, uint64_t c, uint64_t d,
                                 double* odds_ratio, double* p_value);
SK_API sk_status sk_mann_whitney(sk_context* ctx, const double* x, size_t nx, const double* y,
                                 size_t ny, double* u_statistic, double* p_value, int* exact);
/* Tokens may be NULL for the INCLUDE/EXCLUDE defaults. */
SK_API sk_status sk_parse_decision(sk_context* ctx, const char* raw_text, const char* include_token,
                                   const char* exclude_token, int* include, double* confidence);

/* Starts the HTTP service on a background thread; port 0 picks a free port. */
SK_API sk_status sk_server_start(sk_context* ctx, const char* runs_root, const char* host, int port,
                                 sk_server** server, int* bound_port);
SK_API void sk_server_stop(sk_server* server);
/* Serves on the calling thread until the process is stopped. */
SK_API sk_status sk_server_run(sk_context* ctx, const char* runs_root, const char* host, int port);

#ifdef __cplusplus
}
#endif

#endif /* SCREENKIT_H */
