#ifndef TONEPROBE_H
#define TONEPROBE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every `tp_*` call.
typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_IO = 3,
  TP_STATUS_PARSE = 4,
  TP_STATUS_FORMAT = 5,
  TP_STATUS_TRAINING = 6,
  // The requested span contains no frame center.
  TP_STATUS_NO_FRAMES = 7,
  TP_STATUS_BUFFER_TOO_SMALL = 8,
  TP_STATUS_PANIC = 99,
} TpStatus;

// Embedding file held in memory.
typedef struct TpEmbedding TpEmbedding;

// One-vs-rest linear SVM.
typedef struct TpSvmModel TpSvmModel;

// Parsed TextGrid.
typedef struct TpTextGrid TpTextGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next `tp_*` call on the same thread.
const char *tp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *tp_version(void);

// Parse a TextGrid (long or short format, UTF-8 or UTF-16 with BOM).
enum TpStatus tp_textgrid_parse(const uint8_t *bytes, size_t len, struct TpTextGrid **out);

enum TpStatus tp_textgrid_tier_count(const struct TpTextGrid *grid, size_t *out);

// Number of intervals in the first tier named `tier`.
enum TpStatus tp_textgrid_interval_count(const struct TpTextGrid *grid,
                                         const char *tier,
                                         size_t *out);

void tp_textgrid_free(struct TpTextGrid *grid);

// Frames whose center lies in `[start, end)`. Writes the first index and
// one past the last; `NoFrames` when the span holds no frame center.
enum TpStatus tp_frame_range(double start,
                             double end,
                             double stride,
                             double offset,
                             size_t num_frames,
                             size_t *out_first,
                             size_t *out_last_exclusive);

// Read a `.tpeb` embedding file.
enum TpStatus tp_embedding_read(const char *path, struct TpEmbedding **out);

enum TpStatus tp_embedding_dim(const struct TpEmbedding *emb, size_t *out);

enum TpStatus tp_embedding_num_frames(const struct TpEmbedding *emb, size_t *out);

// Mean of one layer's frames over `[start, end)` into `out` (`out_len`
// floats, at least the file's dim).
enum TpStatus tp_embedding_pool(const struct TpEmbedding *emb,
                                uint32_t layer,
                                double start,
                                double end,
                                float *out,
                                size_t out_len);

void tp_embedding_free(struct TpEmbedding *emb);

// Train a one-vs-rest linear SVM on row-major `x` (`rows` x `cols`) with one
// NUL-terminated label per row. Classes are the distinct labels in
// lexicographic order.
enum TpStatus tp_svm_train(const double *x,
                           size_t rows,
                           size_t cols,
                           const char *const *labels,
                           double c,
                           double tolerance,
                           size_t max_epochs,
                           uint64_t seed,
                           bool standardize,
                           struct TpSvmModel **out);

enum TpStatus tp_svm_class_count(const struct TpSvmModel *model, size_t *out);

// Name of class `index`, owned by the model. Null when out of range.
const char *tp_svm_class_name(const struct TpSvmModel *model, size_t index);

// Predicted class index for every row of `x` into `out` (`rows` entries).
enum TpStatus tp_svm_predict(const struct TpSvmModel *model,
                             const double *x,
                             size_t rows,
                             size_t cols,
                             size_t *out);

void tp_svm_free(struct TpSvmModel *model);

// Macro-averaged F1 of integer labels in `0..num_classes`.
enum TpStatus tp_macro_f1(const uint32_t *truth,
                          const uint32_t *predicted,
                          size_t n,
                          size_t num_classes,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TONEPROBE_H */
