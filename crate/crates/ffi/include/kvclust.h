#ifndef KVCLUST_H
#define KVCLUST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KvcStatus {
  KVC_STATUS_OK = 0,
  KVC_STATUS_NULL_POINTER = 1,
  KVC_STATUS_INVALID_ARGUMENT = 2,
  KVC_STATUS_CONFIG = 3,
  KVC_STATUS_DIMENSION = 4,
  KVC_STATUS_NON_CONVERGENCE = 5,
  KVC_STATUS_IO = 6,
  KVC_STATUS_FORMAT = 7,
  KVC_STATUS_VERIFICATION_FAILED = 8,
  KVC_STATUS_PANIC = 9,
} KvcStatus;

/**
 * One head's compressed key/value cache.
 */
typedef struct KvcCache KvcCache;

/**
 * Compression settings.
 */
typedef struct KvcConfig KvcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the last failed call on this thread, or "".
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *kvc_last_error(void);

/**
 * Default settings: ratio 0.2, 16 sinks, 64 recent, chunk 256. Never null.
 */
struct KvcConfig *kvc_config_default(void);

/**
 * Parses a flat `key = value` config document.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KvcStatus kvc_config_parse(const char *text, struct KvcConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards. Null is ignored.
 */
void kvc_config_free(struct KvcConfig *cfg);

/**
 * Sets the cache ratio `R` in `(0, 1]`.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum KvcStatus kvc_config_set_ratio(struct KvcConfig *cfg, double ratio);

/**
 * Sets the decode allowance used in the budget, `max_decode`.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum KvcStatus kvc_config_set_max_decode(struct KvcConfig *cfg, size_t max_decode);

/**
 * Writes the cache budget for a prompt of `prompt_len` tokens.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` a valid pointer.
 */
enum KvcStatus kvc_config_budget(const struct KvcConfig *cfg, size_t prompt_len, size_t *out);

/**
 * Runs the prompt through exact causal attention and seeds a cache.
 *
 * `q`, `k`, `v` hold `n * d` values each. `outputs` may be null; otherwise it
 * receives `n * d` attention outputs.
 *
 * # Safety
 * All non-null pointers must be valid for the stated lengths.
 */
enum KvcStatus kvc_prefill(const struct KvcConfig *cfg,
                           const double *q,
                           const double *k,
                           const double *v,
                           size_t n,
                           size_t d,
                           double *outputs,
                           struct KvcCache **out_cache);

/**
 * Appends one token, writes its `d` attention outputs and compresses if due.
 *
 * `compressed` may be null; otherwise it is set to 1 when compression ran.
 *
 * # Safety
 * `cache` and `cfg` must be live handles; buffers must hold `d` values.
 */
enum KvcStatus kvc_decode(struct KvcCache *cache,
                          const struct KvcConfig *cfg,
                          const double *q,
                          const double *k,
                          const double *v,
                          double *out,
                          uint8_t *compressed);

/**
 * Number of cached rows, or 0 for a null handle.
 *
 * # Safety
 * `cache` must be null or a live handle.
 */
size_t kvc_cache_len(const struct KvcCache *cache);

/**
 * Total degree, i.e. tokens represented by the cache, or 0 for a null handle.
 *
 * # Safety
 * `cache` must be null or a live handle.
 */
uint64_t kvc_cache_degree_sum(const struct KvcCache *cache);

/**
 * # Safety
 * `cache` must come from this library and not be used afterwards. Null is ignored.
 */
void kvc_cache_free(struct KvcCache *cache);

/**
 * Checks the alternating partition against `trials` random valid score
 * functions of size `n` (1..=8). Writes the number of failing trials.
 *
 * # Safety
 * `failures` must be null or a valid pointer.
 */
enum KvcStatus kvc_verify_theorem(size_t n, size_t trials, uint64_t seed, size_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KVCLUST_H */
