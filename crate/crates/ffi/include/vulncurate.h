#ifndef VULNCURATE_H
#define VULNCURATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum VcStatus {
  VC_STATUS_OK = 0,
  VC_STATUS_NULL_POINTER = 1,
  VC_STATUS_INVALID_UTF8 = 2,
  VC_STATUS_INVALID_ARGUMENT = 3,
  VC_STATUS_PARSE = 4,
  VC_STATUS_IO = 5,
  VC_STATUS_BAD_RATIOS = 6,
  VC_STATUS_EMPTY = 7,
  VC_STATUS_PANIC = 99,
} VcStatus;

/**
 * Opaque collection of function pairs.
 */
typedef struct VcCorpus VcCorpus;

/**
 * Per-stage counts of one deduplication run.
 */
typedef struct VcDedupCounts {
  size_t initial;
  size_t complete_pair_removed;
  size_t self_identical_removed;
  size_t cross_matched_removed;
  size_t remaining;
} VcDedupCounts;

/**
 * One review verdict's three criteria.
 */
typedef struct VcVerdictFlags {
  bool genuine;
  bool self_contained;
  bool cwe_correct;
} VcVerdictFlags;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vc_version(void);

/**
 * Copy of the calling thread's last error message, or NULL if the last call
 * succeeded. Release with `vc_string_free`.
 */
char *vc_last_error_message(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void vc_string_free(char *s);

/**
 * Whitespace-normalized form of `code`.
 *
 * # Safety
 * `code` must be a valid C string and `out` a writable pointer.
 */
enum VcStatus vc_normalize_code(const char *code, char **out);

/**
 * Hex SHA-256 record id of a pair.
 *
 * # Safety
 * All string arguments must be valid C strings and `out` writable.
 */
enum VcStatus vc_derive_id(const char *source,
                           const char *vuln_code,
                           const char *fixed_code,
                           char **out);

/**
 * Pair fingerprint rendered `<vuln digest>:<fixed digest>`.
 *
 * # Safety
 * All string arguments must be valid C strings and `out` writable.
 */
enum VcStatus vc_fingerprint(const char *vuln_code, const char *fixed_code, char **out);

/**
 * New empty corpus. Never NULL.
 */
struct VcCorpus *vc_corpus_new(void);

/**
 * Releases a corpus. NULL is ignored.
 *
 * # Safety
 * `corpus` must come from this library and not have been freed already.
 */
void vc_corpus_free(struct VcCorpus *corpus);

/**
 * Number of pairs in `corpus` (0 for NULL).
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t vc_corpus_len(const struct VcCorpus *corpus);

/**
 * Loads a unified JSONL file.
 *
 * # Safety
 * `path` must be a valid C string and `out` writable.
 */
enum VcStatus vc_corpus_read_jsonl(const char *path, struct VcCorpus **out);

/**
 * Parses unified JSONL held in memory.
 *
 * # Safety
 * `text` must be a valid C string and `out` writable.
 */
enum VcStatus vc_corpus_parse_jsonl(const char *text, struct VcCorpus **out);

/**
 * Writes the corpus as unified JSONL.
 *
 * # Safety
 * `corpus` must be a live handle and `path` a valid C string.
 */
enum VcStatus vc_corpus_write_jsonl(const struct VcCorpus *corpus, const char *path);

/**
 * Appends a real pair. `cwes` is a comma-separated list or NULL. The new
 * record id is written to `out_id` when it is not NULL.
 *
 * # Safety
 * `corpus` must be a live handle; string arguments valid C strings.
 */
enum VcStatus vc_corpus_add_pair(struct VcCorpus *corpus,
                                 const char *source,
                                 const char *vuln_code,
                                 const char *fixed_code,
                                 const char *cwes,
                                 char **out_id);

/**
 * Runs the three deduplication stages. Survivors go to a new corpus in
 * `out`; per-stage counts to `counts` when it is not NULL.
 *
 * # Safety
 * `corpus` must be a live handle and `out` writable.
 */
enum VcStatus vc_dedup(const struct VcCorpus *corpus,
                       struct VcCorpus **out,
                       struct VcDedupCounts *counts);

/**
 * Share of `row`'s distinct pairs also present in `col` (divides by |row|).
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum VcStatus vc_overlap_fraction(const struct VcCorpus *row,
                                  const struct VcCorpus *col,
                                  double *out);

/**
 * Renders `round(max / min)` over positive counts as "N:1".
 *
 * # Safety
 * `counts` must point to `len` readable values and `out` be writable.
 */
enum VcStatus vc_imbalance_ratio(const uint64_t *counts, size_t len, char **out);

/**
 * Fraction of verdicts meeting all three criteria.
 *
 * # Safety
 * `verdicts` must point to `len` readable values and `out` be writable.
 */
enum VcStatus vc_correctness(const struct VcVerdictFlags *verdicts, size_t len, double *out);

/**
 * Stratified split into three new corpora.
 *
 * # Safety
 * `corpus` must be a live handle and all out-pointers writable.
 */
enum VcStatus vc_split(const struct VcCorpus *corpus,
                       double train_ratio,
                       double validation_ratio,
                       double test_ratio,
                       uint64_t seed,
                       struct VcCorpus **out_train,
                       struct VcCorpus **out_validation,
                       struct VcCorpus **out_test);

/**
 * Training pairs whose fingerprint is absent from `benchmark`.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum VcStatus vc_remove_leakage(const struct VcCorpus *training,
                                const struct VcCorpus *benchmark,
                                struct VcCorpus **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VULNCURATE_H */
