#ifndef TIERKITE_H
#define TIERKITE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Use adaptive fusion weighting instead of the fixed weight.
 */
#define TK_QUERY_ADAPTIVE 1

/**
 * Bypass the semantic cache.
 */
#define TK_QUERY_NO_CACHE (1 << 1)

/**
 * Search the dense channel only.
 */
#define TK_QUERY_DENSE_ONLY (1 << 2)

/**
 * Search the sparse channel only.
 */
#define TK_QUERY_SPARSE_ONLY (1 << 3)

/**
 * Result code of every fallible call.
 */
typedef enum TkStatus {
  TK_STATUS_OK = 0,
  TK_STATUS_INVALID_ARGUMENT = 1,
  TK_STATUS_NOT_READY = 2,
  TK_STATUS_WOULD_BLOCK = 3,
  TK_STATUS_BUDGET_EXCEEDED = 4,
  TK_STATUS_IO = 5,
  TK_STATUS_CORRUPT = 6,
  TK_STATUS_INTERNAL = 7,
  TK_STATUS_PANIC = 8,
} TkStatus;

/**
 * Opaque engine handle.
 */
typedef struct TkEngine TkEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tk_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next library call on the same thread.
 */
const char *tk_last_error(void);

/**
 * Open (or create) an engine directory.
 *
 * With `config_path` and `profile` both NULL the configuration comes from
 * `TIERKITE_CONFIG` and `TIERKITE_PROFILE`.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum TkStatus tk_engine_open(const char *dir,
                             const char *config_path,
                             const char *profile,
                             struct TkEngine **out);

/**
 * Release an engine. NULL is ignored.
 *
 * # Safety
 * `engine` must come from [`tk_engine_open`] and not be used afterwards.
 */
void tk_engine_free(struct TkEngine *engine);

/**
 * Run a query and return `{"hits": [...], "cache_hit", "alpha", "timings"}`
 * as JSON in `*out_json`. A not-ready engine returns [`TkStatus::NotReady`].
 *
 * # Safety
 * `engine` must be live, `query` NUL-terminated and `out_json` writable.
 */
enum TkStatus tk_engine_query(const struct TkEngine *engine,
                              const char *query,
                              uint32_t k,
                              uint32_t flags,
                              char **out_json);

/**
 * Ingest a corpus directory synchronously and return the job report as
 * JSON. Fails with [`TkStatus::WouldBlock`] while another write job runs.
 *
 * # Safety
 * `engine` must be live, `corpus_dir` NUL-terminated, `out_json` NULL or
 * writable.
 */
enum TkStatus tk_engine_ingest(const struct TkEngine *engine,
                               const char *corpus_dir,
                               char **out_json);

/**
 * Engine statistics as JSON.
 *
 * # Safety
 * `engine` must be live and `out_json` writable.
 */
enum TkStatus tk_engine_stats(const struct TkEngine *engine, char **out_json);

/**
 * Number of chunks in the current snapshot, or 0 for NULL.
 *
 * # Safety
 * `engine` must be NULL or live.
 */
uint64_t tk_engine_chunk_count(const struct TkEngine *engine);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void tk_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIERKITE_H */
