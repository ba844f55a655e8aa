/* C interface to the qspca weight-compression library. */

#ifndef QSPCA_H
#define QSPCA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every FFI call.
 */
typedef enum QspcaStatus {
  QSPCA_STATUS_OK = 0,
  QSPCA_STATUS_NULL_ARGUMENT = 1,
  QSPCA_STATUS_INVALID_UTF8 = 2,
  QSPCA_STATUS_INVALID_ARGUMENT = 3,
  QSPCA_STATUS_IO_ERROR = 4,
  QSPCA_STATUS_BAD_FORMAT = 5,
  QSPCA_STATUS_SOLVE_FAILED = 6,
  QSPCA_STATUS_BUFFER_TOO_SMALL = 7,
  QSPCA_STATUS_INTERNAL_PANIC = 8,
} QspcaStatus;

/**
 * Opaque handle to a parsed compressed layer.
 */
typedef struct QspcaLayer QspcaLayer;

/**
 * Compression settings. Sentinels: `fixed_iterations < 0` selects
 * validation-patience stopping; `stride`/`padding < 0` defer to the
 * calibration archive (then 1 and 0).
 */
typedef struct QspcaCompressOptions {
  uint32_t d;
  uint32_t k;
  uint32_t b_c;
  uint32_t b_z;
  /**
   * 0 = one-shot thresholding, 1 = iterative.
   */
  uint32_t iterative;
  int64_t fixed_iterations;
  double extra_sparsity;
  /**
   * 0 = unsigned clamp range, 1 = symmetric signed.
   */
  uint32_t signed_quant;
  int64_t stride;
  int64_t padding;
  uint64_t seed;
} QspcaCompressOptions;

/**
 * Size accounting mirrored into a plain C struct.
 */
typedef struct QspcaSizeReport {
  uint64_t l_o_bits;
  uint64_t l_c_bits;
  uint64_t l_q_bits;
  uint64_t nonzeros;
  uint64_t latent_elements;
  uint64_t weight_elements;
  uint64_t codebook_elements;
  uint64_t tiles;
  uint64_t payload_bytes;
  uint64_t centering_bytes;
  double sparsity;
  double compression_ratio;
  /**
   * 1 when the mask + nonzero encoding beats dense latent codes.
   */
  uint32_t sparse_payoff;
} QspcaSizeReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *qspca_version(void);

/**
 * Message for the most recent failure on this thread. Valid until the next
 * FFI call from the same thread.
 */
const char *qspca_last_error_message(void);

/**
 * Library defaults (one-shot thresholding, validation-patience stopping)
 * at rank `k`.
 */
struct QspcaCompressOptions qspca_compress_options_default(uint32_t k);

/**
 * Runs the full factorization pipeline on QSPT archives and writes a QSPC
 * container to `out_path`.
 */
enum QspcaStatus qspca_compress_file(const char *weights_path,
                                     const char *calib_path,
                                     const struct QspcaCompressOptions *options,
                                     const char *out_path);

/**
 * Reconstructs the weight tensor from a QSPC container into a QSPT archive.
 */
enum QspcaStatus qspca_decompress_file(const char *input_path, const char *out_path);

/**
 * Opens a QSPC container. On success the handle must be released with
 * [`qspca_layer_free`].
 */
enum QspcaStatus qspca_layer_open(const char *path, struct QspcaLayer **out_layer);

void qspca_layer_free(struct QspcaLayer *layer);

/**
 * Writes `(f_out, f_in, h, w)` into `out_shape`.
 */
enum QspcaStatus qspca_layer_shape(const struct QspcaLayer *layer, uint32_t *out_shape);

/**
 * Number of elements in the reconstructed weight tensor.
 */
enum QspcaStatus qspca_layer_element_count(const struct QspcaLayer *layer, uint64_t *out_count);

enum QspcaStatus qspca_layer_size_report(const struct QspcaLayer *layer,
                                         struct QspcaSizeReport *out_report);

/**
 * Reconstructs the weight tensor into `buffer` (row-major over
 * `(f_out, f_in, h, w)`). `len` must equal the element count.
 */
enum QspcaStatus qspca_layer_reconstruct(const struct QspcaLayer *layer, float *buffer, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSPCA_H */
