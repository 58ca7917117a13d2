#ifndef SPAMCLUSTER_H
#define SPAMCLUSTER_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  SC_STATUS_CONFIG = 3,
  SC_STATUS_IO = 4,
  SC_STATUS_FORMAT = 5,
  SC_STATUS_SNAPSHOT = 6,
  SC_STATUS_DOMAIN = 7,
  SC_STATUS_INTERNAL = 8,
  SC_STATUS_PANIC = 9,
} ScStatus;

typedef enum ScDecision {
  SC_DECISION_SPAM = 0,
  SC_DECISION_LEGITIMATE = 1,
  SC_DECISION_DEFERRED = 2,
} ScDecision;

/**
 * Opaque engine handle.
 */
typedef struct ScEngine ScEngine;

/**
 * Engine parameters. Obtain defaults from `sc_config_default`.
 */
typedef struct ScConfig {
  double tau;
  double omega;
  /**
   * Use the full sender address instead of its domain.
   */
  bool full_sender_identity;
  bool assign_before_update;
  bool score_before_update;
} ScConfig;

/**
 * Per-message result.
 */
typedef struct ScVerdict {
  double p_s;
  double p_r;
  double spam_rank;
  enum ScDecision decision;
  /**
   * Final label: the decision when classified, else the auxiliary label.
   */
  bool effective_is_spam;
} ScVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

struct ScConfig sc_config_default(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *sc_last_error_message(void);

/**
 * Creates an engine. `config` may be NULL for defaults.
 *
 * # Safety
 * `config` is NULL or points to a valid `ScConfig`; `out` is a valid
 * pointer to writable storage.
 */
enum ScStatus sc_engine_new(const struct ScConfig *config, struct ScEngine **out);

/**
 * Releases an engine. NULL is ignored.
 *
 * # Safety
 * `engine` is NULL or a handle from this library not yet freed.
 */
void sc_engine_free(struct ScEngine *engine);

/**
 * Processes one message given as raw addresses. `msg_id` may be NULL.
 *
 * # Safety
 * `engine` is a live handle; `sender` and each of the `n_recipients`
 * entries of `recipients` are NUL-terminated strings; `out` is NULL or
 * writable.
 */
enum ScStatus sc_engine_process(struct ScEngine *engine,
                                const char *msg_id,
                                const char *sender,
                                const char *const *recipients,
                                size_t n_recipients,
                                bool aux_is_spam,
                                struct ScVerdict *out);

/**
 * Processes one JSON log line.
 *
 * # Safety
 * `engine` is a live handle; `line` is a NUL-terminated string; `out` is
 * NULL or writable.
 */
enum ScStatus sc_engine_process_json(struct ScEngine *engine,
                                     const char *line,
                                     struct ScVerdict *out);

/**
 * # Safety
 * `engine` is NULL or a live handle.
 */
uint64_t sc_engine_messages_processed(const struct ScEngine *engine);

/**
 * Current number of sender and recipient clusters.
 *
 * # Safety
 * `engine` is a live handle; the output pointers are NULL or writable.
 */
enum ScStatus sc_engine_cluster_counts(const struct ScEngine *engine,
                                       size_t *senders,
                                       size_t *recipients);

/**
 * Writes the engine state to `path`.
 *
 * # Safety
 * `engine` is a live handle; `path` is a NUL-terminated string.
 */
enum ScStatus sc_engine_save(const struct ScEngine *engine, const char *path);

/**
 * Loads an engine saved by `sc_engine_save` or the command-line tool.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum ScStatus sc_engine_load(const char *path, struct ScEngine **out);

/**
 * Spam rank of a (P_s, P_r) pair; both must lie in [0, 1].
 *
 * # Safety
 * `out` is writable.
 */
enum ScStatus sc_spam_rank(double p_s, double p_r, double *out);

/**
 * Normalized sender identity of `address`. The result is freed with
 * `sc_string_free`.
 *
 * # Safety
 * `address` is a NUL-terminated string; `out` is writable.
 */
enum ScStatus sc_normalize_sender(const char *address, bool full_identity, char **out);

/**
 * # Safety
 * `s` is NULL or a string returned by this library and not yet freed.
 */
void sc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPAMCLUSTER_H */
