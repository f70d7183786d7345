/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef VBANK_H
#define VBANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * What an insert did to the category.
 */
typedef enum {
  VB_ACTION_FILLED = 0,
  VB_ACTION_MERGED = 1,
  VB_ACTION_REPLACED = 2,
} vb_action;

typedef enum {
  VB_POLICY_AVERAGING = 0,
  VB_POLICY_FIFO = 1,
} vb_policy;

/**
 * Result codes shared by every entry point.
 */
typedef enum {
  VB_STATUS_OK = 0,
  VB_STATUS_NULL_POINTER = 1,
  VB_STATUS_INVALID_ARGUMENT = 2,
  VB_STATUS_DIMENSION_MISMATCH = 3,
  VB_STATUS_ZERO_NORM = 4,
  VB_STATUS_NON_FINITE = 5,
  VB_STATUS_UNKNOWN_CATEGORY = 6,
  VB_STATUS_EMPTY_CATEGORY = 7,
  VB_STATUS_BUFFER_TOO_SMALL = 8,
  VB_STATUS_BAD_FORMAT = 9,
  VB_STATUS_IO = 10,
  VB_STATUS_PANIC = 11,
} vb_status;

/**
 * Opaque bank handle.
 */
typedef struct vb_bank vb_bank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vb_last_error_message(void);

/**
 * Create an empty bank of `categories × slots × dim`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
vb_status vb_bank_new(size_t categories, size_t slots, size_t dim, vb_policy policy, vb_bank **out);

/**
 * Release a bank. Null is ignored.
 *
 * # Safety
 * `bank` must be null or a handle not yet freed.
 */
void vb_bank_free(vb_bank *bank);

/**
 * Shape of a bank. Any output pointer may be null.
 *
 * # Safety
 * `bank` must be a live handle; non-null outputs must be writable.
 */
vb_status vb_bank_shape(const vb_bank *bank, size_t *categories, size_t *slots, size_t *dim);

/**
 * Insert one prompt feature of length `len` under the bank's policy.
 * `out_slot` and `out_action` may be null.
 *
 * # Safety
 * `bank` must be a live, unaliased handle; `feature` must point to `len`
 * floats; non-null outputs must be writable.
 */
vb_status vb_bank_insert(vb_bank *bank,
                         size_t category,
                         const float *feature,
                         size_t len,
                         size_t *out_slot,
                         vb_action *out_action);

/**
 * Append an empty category; its id is written to `out_id`.
 *
 * # Safety
 * `bank` must be a live, unaliased handle; `out_id` must be writable.
 */
vb_status vb_bank_add_category(vb_bank *bank, size_t *out_id);

/**
 * # Safety
 * `bank` must be a live handle; `out` must be writable.
 */
vb_status vb_bank_occupancy(const vb_bank *bank, size_t category, size_t *out);

/**
 * Mean of the occupied slots of `category`, written to `out[0..len]`.
 * `len` must equal the bank's dimension.
 *
 * # Safety
 * `bank` must be a live handle; `out` must point to `len` writable floats.
 */
vb_status vb_bank_category_mean(const vb_bank *bank, size_t category, float *out, size_t len);

/**
 * Serialize into `buf`. The encoded size is always written to `out_len`;
 * if `cap` is smaller, nothing else is written and `VB_STATUS_BUFFER_TOO_SMALL`
 * is returned, so a call with `buf = NULL, cap = 0` queries the size.
 *
 * # Safety
 * `bank` must be a live handle; `buf` must point to `cap` writable bytes when
 * `cap > 0`; `out_len` must be writable.
 */
vb_status vb_bank_encode(const vb_bank *bank, uint8_t *buf, size_t cap, size_t *out_len);

/**
 * Parse a bank from `len` bytes.
 *
 * # Safety
 * `buf` must point to `len` readable bytes; `out` must be writable.
 */
vb_status vb_bank_decode(const uint8_t *buf, size_t len, vb_bank **out);

/**
 * # Safety
 * `bank` must be a live handle; `path` must be a NUL-terminated UTF-8 string.
 */
vb_status vb_bank_export(const vb_bank *bank, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
vb_status vb_bank_import(const char *path, vb_bank **out);

/**
 * Cosine similarity of two vectors of length `len`, accumulated in double
 * precision and clamped to [-1, 1].
 *
 * # Safety
 * `a` and `b` must point to `len` readable floats; `out` must be writable.
 */
vb_status vb_cosine_similarity(const float *a, const float *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VBANK_H */
