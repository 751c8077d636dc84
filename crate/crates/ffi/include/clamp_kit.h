#ifndef CLAMP_KIT_H
#define CLAMP_KIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CkStatus {
  CK_STATUS_OK = 0,
  CK_STATUS_NULL_POINTER = 1,
  CK_STATUS_INVALID_UTF8 = 2,
  CK_STATUS_INVALID_ARGUMENT = 3,
  CK_STATUS_DIMENSION_MISMATCH = 4,
  CK_STATUS_PARSE_ERROR = 5,
  CK_STATUS_IO_ERROR = 6,
  CK_STATUS_CORRUPT_FILE = 7,
  CK_STATUS_DIVERGENCE = 8,
  CK_STATUS_BUFFER_TOO_SMALL = 9,
  CK_STATUS_PANIC = 10,
} CkStatus;

/**
 * A loaded checkpoint with all three encoders.
 */
typedef struct CkModel CkModel;

/**
 * An embedding store.
 */
typedef struct CkStore CkStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ck_last_error(void);

/**
 * Loads a checkpoint directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CkStatus ck_model_load(const char *dir, struct CkModel **out);

/**
 * # Safety
 * `model` must come from [`ck_model_load`] and not be used afterwards.
 */
void ck_model_free(struct CkModel *model);

/**
 * Embedding length of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ck_model_out_dim(const struct CkModel *model);

/**
 * Embeds UTF-8 text with the text encoder into `out[0..out_dim]`.
 *
 * # Safety
 * `model` must be live, `text` NUL-terminated, `out` valid for `out_len` floats.
 */
enum CkStatus ck_embed_text(const struct CkModel *model,
                            const char *text,
                            int normalize,
                            float *out,
                            size_t out_len);

/**
 * Embeds an ABC document with the symbolic encoder.
 *
 * # Safety
 * As for [`ck_embed_text`].
 */
enum CkStatus ck_embed_abc(const struct CkModel *model,
                           const char *abc,
                           int normalize,
                           float *out,
                           size_t out_len);

/**
 * Embeds an MTF document with the symbolic encoder.
 *
 * # Safety
 * As for [`ck_embed_text`].
 */
enum CkStatus ck_embed_mtf(const struct CkModel *model,
                           const char *mtf,
                           int normalize,
                           float *out,
                           size_t out_len);

/**
 * Embeds `rows x cols` row-major clip features with the audio encoder.
 *
 * # Safety
 * `features` must hold `rows * cols` floats; otherwise as for [`ck_embed_text`].
 */
enum CkStatus ck_embed_audio(const struct CkModel *model,
                             const float *features,
                             size_t rows,
                             size_t cols,
                             int normalize,
                             float *out,
                             size_t out_len);

/**
 * InfoNCE loss of `n` paired rows of width `d` (row `i` of `text` matches row
 * `i` of `music`) at temperature `tau`.
 *
 * # Safety
 * `text` and `music` must hold `n * d` floats and `loss_out` be valid.
 */
enum CkStatus ck_info_nce(const float *text,
                          const float *music,
                          size_t n,
                          size_t d,
                          double tau,
                          int cosine,
                          int symmetric,
                          double *loss_out);

/**
 * Reads a `.cme` embedding store into `*out`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum CkStatus ck_store_read(const char *path, struct CkStore **out);

/**
 * # Safety
 * `store` must come from [`ck_store_read`] and not be used afterwards.
 */
void ck_store_free(struct CkStore *store);

/**
 * Number of items, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t ck_store_len(const struct CkStore *store);

/**
 * Embedding width, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t ck_store_dim(const struct CkStore *store);

/**
 * MRR of queries against the gallery, pairing items with equal ids.
 *
 * # Safety
 * Both handles must be live and `mrr_out` valid.
 */
enum CkStatus ck_mrr(const struct CkStore *queries,
                     const struct CkStore *gallery,
                     int cosine,
                     double *mrr_out);

/**
 * Expected MRR of a random ranking over `n` items.
 *
 * # Safety
 * `out` must be valid.
 */
enum CkStatus ck_random_baseline_mrr(size_t n, double *out);

/**
 * Number of patches the ABC document segments into (before truncation).
 *
 * # Safety
 * `abc` must be NUL-terminated and `n_out` valid.
 */
enum CkStatus ck_segment_abc(const char *abc, size_t *n_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAMP_KIT_H */
