#ifndef XLZERO_H
#define XLZERO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum XlzStatus {
  XLZ_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an out-of-range argument.
   */
  XLZ_STATUS_INVALID_ARGUMENT = 1,
  XLZ_STATUS_IO = 2,
  XLZ_STATUS_PARSE = 3,
  XLZ_STATUS_CONFIG = 4,
  /**
   * Degenerate input such as an empty batch.
   */
  XLZ_STATUS_DEGENERATE = 5,
  XLZ_STATUS_SHAPE = 6,
  XLZ_STATUS_COMPATIBILITY = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  XLZ_STATUS_PANIC = 8,
  XLZ_STATUS_INTERNAL = 9,
} XlzStatus;

/**
 * Bilingual lexicon handle.
 */
typedef struct XlzLexicon XlzLexicon;

/**
 * Trained model handle. Read-only; safe to share across threads.
 */
typedef struct XlzModel XlzModel;

/**
 * Library version, static storage.
 */
const char *xlz_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *xlz_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void xlz_string_free(char *s);

/**
 * Loads a `source target` per line lexicon. Tags accept `en` or `<En>`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum XlzStatus xlz_lexicon_load(const char *path,
                                const char *source,
                                const char *target,
                                struct XlzLexicon **out);

/**
 * Number of source entries, or 0 for null.
 *
 * # Safety
 * `lex` must be null or a live handle.
 */
size_t xlz_lexicon_len(const struct XlzLexicon *lex);

/**
 * # Safety
 * `lex` must be null or a handle from [`xlz_lexicon_load`], freed once.
 */
void xlz_lexicon_free(struct XlzLexicon *lex);

/**
 * Builds the source, pseudo-target and code-switched views of one dialogue
 * and returns them as JSON lines in `out_json`. History turns are separated
 * by newlines.
 *
 * # Safety
 * `lex` must be a live handle; strings NUL-terminated; `out_json` writable.
 */
enum XlzStatus xlz_build_views(const struct XlzLexicon *lex,
                               const char *id,
                               const char *history,
                               const char *response,
                               const char *source,
                               uint32_t k,
                               double tau,
                               uint64_t seed,
                               char **out_json);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` writable.
 */
enum XlzStatus xlz_model_load(const char *dir, struct XlzModel **out);

/**
 * Vocabulary size, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t xlz_model_vocab_size(const struct XlzModel *model);

/**
 * # Safety
 * `model` must be null or a handle from [`xlz_model_load`], freed once.
 */
void xlz_model_free(struct XlzModel *model);

/**
 * Beam-search response to a history (turns separated by newlines), decoded
 * under `tag`. Placeholders are left in place. `out_json` receives one
 * generation record.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out_json` writable.
 */
enum XlzStatus xlz_generate(const struct XlzModel *model,
                            const char *history,
                            const char *decode_tag,
                            uint32_t beam_size,
                            uint32_t max_len,
                            char **out_json);

/**
 * Corpus BLEU up to `max_n` over `n` whitespace-tokenized candidate and
 * reference strings.
 *
 * # Safety
 * `candidates` and `references` must point to `n` NUL-terminated strings;
 * `out` must be writable.
 */
enum XlzStatus xlz_bleu(const char *const *candidates,
                        const char *const *references,
                        size_t n,
                        uint32_t max_n,
                        bool smoothing,
                        double *out);

#endif  /* XLZERO_H */
