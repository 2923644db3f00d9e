#ifndef GROUPID_H
#define GROUPID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function.
typedef enum GidStatus {
  GID_STATUS_OK = 0,
  GID_STATUS_NULL_POINTER = 1,
  GID_STATUS_INVALID_UTF8 = 2,
  GID_STATUS_IO = 3,
  GID_STATUS_PARSE = 4,
  GID_STATUS_INVALID_ARGUMENT = 5,
  GID_STATUS_COUNT_MISMATCH = 6,
  GID_STATUS_OUT_OF_RANGE = 7,
  GID_STATUS_BUFFER_TOO_SMALL = 8,
  GID_STATUS_NUMERICAL = 9,
  GID_STATUS_PANIC = 99,
} GidStatus;

// A loaded prepared directory.
typedef struct GidDataset GidDataset;

// A checkpoint bound to its prepared split, ready for scoring.
typedef struct GidSession GidSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *gid_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *gid_version(void);

// Loads a prepared directory.
//
// # Safety
// `prepared_dir` must be a NUL-terminated string; `out` must be writable.
enum GidStatus gid_dataset_open(const char *prepared_dir, struct GidDataset **out);

// Entity counts of a dataset. Any output pointer may be null.
//
// # Safety
// `ds` must come from [`gid_dataset_open`]; non-null outputs must be writable.
enum GidStatus gid_dataset_counts(const struct GidDataset *ds,
                                  size_t *users,
                                  size_t *groups,
                                  size_t *items);

// Number of training user-group edges.
//
// # Safety
// `ds` must come from [`gid_dataset_open`]; `out` must be writable.
enum GidStatus gid_dataset_train_edges(const struct GidDataset *ds, size_t *out);

// # Safety
// `ds` must come from [`gid_dataset_open`] and not be used afterwards.
void gid_dataset_free(struct GidDataset *ds);

// Opens a checkpoint against the prepared split it was trained on.
//
// # Safety
// Both paths must be NUL-terminated strings; `out` must be writable.
enum GidStatus gid_session_open(const char *prepared_dir,
                                const char *checkpoint_path,
                                struct GidSession **out);

// # Safety
// `s` must come from [`gid_session_open`].
size_t gid_session_num_groups(const struct GidSession *s);

// # Safety
// `s` must come from [`gid_session_open`].
size_t gid_session_num_users(const struct GidSession *s);

// Writes the score of every group for `user` into `out_scores`, which
// must hold at least `gid_session_num_groups` values.
//
// # Safety
// `s` must come from [`gid_session_open`]; `out_scores` must be valid for
// `len` writes.
enum GidStatus gid_score_user(const struct GidSession *s,
                              size_t user,
                              double *out_scores,
                              size_t len);

// Best `k` groups for `user`, excluding groups joined in training. Writes
// up to `k` ids (and scores, if `out_scores` is non-null) and the count
// actually written to `out_len`.
//
// # Safety
// `s` must come from [`gid_session_open`]; `out_ids` and non-null
// `out_scores` must be valid for `k` writes; `out_len` must be writable.
enum GidStatus gid_top_k(const struct GidSession *s,
                         size_t user,
                         size_t k,
                         size_t *out_ids,
                         double *out_scores,
                         size_t *out_len);

// # Safety
// `s` must come from [`gid_session_open`] and not be used afterwards.
void gid_session_free(struct GidSession *s);

// Trains on a prepared directory and writes the run artifacts to
// `output_dir`. `config_json` is an optional flat JSON object of config
// overrides and may be null.
//
// # Safety
// String arguments must be NUL-terminated; `config_json` may be null.
enum GidStatus gid_train_prepared(const char *prepared_dir,
                                  const char *config_json,
                                  const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROUPID_H */
