#ifndef LUCBRANK_H
#define LUCBRANK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum LucbStatus {
  LUCB_STATUS_OK = 0,
  LUCB_STATUS_NULL_POINTER = 1,
  LUCB_STATUS_INVALID_ARGUMENT = 2,
  // A numeric argument lies outside the function's domain.
  LUCB_STATUS_DOMAIN = 3,
  // An output buffer is too small.
  LUCB_STATUS_BUFFER_TOO_SMALL = 4,
  LUCB_STATUS_SERIALIZATION = 5,
  // A panic was caught at the boundary. The handle involved should be freed.
  LUCB_STATUS_PANIC = 6,
} LucbStatus;

// Opaque engine handle.
typedef struct LucbEngine LucbEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// The pointer stays valid until the next failing call on this thread.
const char *lucb_last_error_message(void);

// Creates an engine from cluster boundaries and one initial reward per arm.
//
// `boundaries` lists cumulative cluster sizes; the final entry (the number
// of arms) may be omitted. Rewards must lie in `[0, 1]`.
//
// # Safety
// `boundaries` and `first_rewards` must be valid for the given lengths and
// `out` valid for one write.
enum LucbStatus lucb_engine_new(const size_t *boundaries,
                                size_t n_boundaries,
                                double epsilon,
                                double delta,
                                const double *first_rewards,
                                size_t n_arms,
                                struct LucbEngine **out);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` must be null or a handle not yet freed.
void lucb_engine_free(struct LucbEngine *engine);

// Arms to sample this round, in the order rewards are expected by
// [`lucb_engine_apply_round`]. `boundaries_out` may be null; otherwise it
// receives the 0-based inner boundary each sample serves.
//
// Writes the request count to `len_out`. If `capacity` is smaller, nothing
// else is written and `BufferTooSmall` is returned; pass a capacity of 0 to
// query the length.
//
// # Safety
// Output buffers must be valid for `capacity` writes, `len_out` for one.
enum LucbStatus lucb_engine_round_requests(const struct LucbEngine *engine,
                                           size_t *arms_out,
                                           size_t *boundaries_out,
                                           size_t capacity,
                                           size_t *len_out);

// Feeds one reward per request of the current round.
//
// # Safety
// `rewards` must be valid for `len` reads.
enum LucbStatus lucb_engine_apply_round(struct LucbEngine *engine,
                                        const double *rewards,
                                        size_t len);

// # Safety
// `engine` must be a live handle and `out` valid for one write.
enum LucbStatus lucb_engine_is_done(const struct LucbEngine *engine, bool *out);

// # Safety
// `engine` must be a live handle and `out` valid for one write.
enum LucbStatus lucb_engine_num_arms(const struct LucbEngine *engine, size_t *out);

// # Safety
// `engine` must be a live handle and `out` valid for one write.
enum LucbStatus lucb_engine_total_samples(const struct LucbEngine *engine, uint64_t *out);

// Current 1-based rank of each arm (by empirical mean). Needs `capacity`
// of at least the number of arms.
//
// # Safety
// `ranks_out` must be valid for `capacity` writes.
enum LucbStatus lucb_engine_ranks(const struct LucbEngine *engine,
                                  size_t *ranks_out,
                                  size_t capacity);

// Current 0-based cluster of each arm. Needs `capacity` of at least the
// number of arms.
//
// # Safety
// `labels_out` must be valid for `capacity` writes.
enum LucbStatus lucb_engine_cluster_labels(const struct LucbEngine *engine,
                                           size_t *labels_out,
                                           size_t capacity);

// Serializes the engine state as JSON. Free the string with
// [`lucb_string_free`].
//
// # Safety
// `engine` must be a live handle and `out` valid for one write.
enum LucbStatus lucb_engine_to_json(const struct LucbEngine *engine, char **out);

// Restores an engine from [`lucb_engine_to_json`] output. The state is
// checked for internal consistency.
//
// # Safety
// `json` must be a NUL-terminated string and `out` valid for one write.
enum LucbStatus lucb_engine_from_json(const char *json, struct LucbEngine **out);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void lucb_string_free(char *s);

// `d(x, y)` between Bernoulli distributions. Infinite divergences are
// reported as `Domain`.
//
// # Safety
// `out` must be valid for one write.
enum LucbStatus lucb_kl_bernoulli(double x, double y, double *out);

// Largest `q >= p_hat` with `n d(p_hat, q) <= beta`.
//
// # Safety
// `out` must be valid for one write.
enum LucbStatus lucb_kl_ucb_upper(double p_hat, uint64_t n, double beta, double *out);

// Smallest `q <= p_hat` with `n d(p_hat, q) <= beta`.
//
// # Safety
// `out` must be valid for one write.
enum LucbStatus lucb_kl_ucb_lower(double p_hat, uint64_t n, double beta, double *out);

// Chernoff information between `Bernoulli(x)` and `Bernoulli(y)`.
//
// # Safety
// `out` must be valid for one write.
enum LucbStatus lucb_chernoff_information(double x, double y, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUCBRANK_H */
