/* Copyright 2026 The zonewaf Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef ZONEWAF_H
#define ZONEWAF_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZwStatus {
  ZW_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  ZW_STATUS_NULL_ARG = 1,
  /**
   * Bad key, value or configuration.
   */
  ZW_STATUS_CONFIG = 2,
  /**
   * The simulation broke one of its own invariants.
   */
  ZW_STATUS_INVARIANT = 3,
  ZW_STATUS_IO = 4,
  /**
   * A string argument was not UTF-8.
   */
  ZW_STATUS_UTF8 = 5,
  /**
   * Results were requested before a successful run.
   */
  ZW_STATUS_NOT_RUN = 6,
  ZW_STATUS_PANIC = 7,
} ZwStatus;

/**
 * Opaque experiment handle.
 */
typedef struct ZwExperiment ZwExperiment;

/**
 * Headline numbers of the last run.
 */
typedef struct ZwResult {
  uint64_t evicted_pages;
  uint64_t user_pages;
  uint64_t dwb_pages;
  uint64_t db_gc_pages;
  uint64_t comp_pages;
  uint64_t ssd_gc_pages;
  double db_waf;
  double ssd_waf;
  double total_waf;
  double hit_ratio;
  double logical_bytes_per_op;
  double physical_bytes_per_op;
} ZwResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *zw_last_error(void);

/**
 * New experiment with default settings. Free with [`zw_experiment_free`].
 */
struct ZwExperiment *zw_experiment_new(void);

/**
 * # Safety
 * `h` must come from [`zw_experiment_new`] and not be used afterwards.
 */
void zw_experiment_free(struct ZwExperiment *h);

/**
 * Sets one config key, using the same names as config files.
 *
 * # Safety
 * `h` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum ZwStatus zw_experiment_set(struct ZwExperiment *h, const char *key, const char *value);

/**
 * Replaces the config with one parsed from `key = value` text.
 *
 * # Safety
 * `h` must be a live handle; `config` a NUL-terminated string.
 */
enum ZwStatus zw_experiment_load_config(struct ZwExperiment *h, const char *config);

/**
 * Runs the experiment. Blocks until the measurement window closes.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ZwStatus zw_experiment_run(struct ZwExperiment *h);

/**
 * Copies the last run's numbers into `out`.
 *
 * # Safety
 * `h` must be a live handle; `out` writable.
 */
enum ZwStatus zw_experiment_result(const struct ZwExperiment *h, struct ZwResult *out);

/**
 * Renders the last run as JSON (`as_csv` false) or as CSV with header.
 * On success `*out` owns a string to release with [`zw_string_free`].
 *
 * # Safety
 * `h` must be a live handle; `out` writable.
 */
enum ZwStatus zw_experiment_report(const struct ZwExperiment *h, bool as_csv, char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void zw_string_free(char *s);

/**
 * Infers a standard device's GC unit from zone overwrite tests.
 * `candidates` must be ascending. `*found` is false when no candidate
 * passed, in which case `*unit_pages` is `ceiling`.
 *
 * # Safety
 * `candidates` must point at `len` values; `unit_pages` and `found` writable.
 */
enum ZwStatus zw_infer_gc_unit(uint64_t capacity_pages,
                               uint32_t superblock_pages,
                               const uint32_t *candidates,
                               size_t len,
                               uint64_t ceiling,
                               uint64_t seed,
                               uint64_t *unit_pages,
                               bool *found);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZONEWAF_H */
