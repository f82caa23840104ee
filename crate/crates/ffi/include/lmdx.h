#ifndef LMDX_H
#define LMDX_H

#include <stddef.h>
#include <stdint.h>

typedef enum LmdxStatus {
  LMDX_STATUS_OK = 0,
  LMDX_STATUS_NULL_ARGUMENT = 1,
  LMDX_STATUS_INVALID_UTF8 = 2,
  LMDX_STATUS_INVALID_ARGUMENT = 3,
  LMDX_STATUS_DOCUMENT = 4,
  LMDX_STATUS_SCHEMA = 5,
  LMDX_STATUS_CHUNK = 6,
  LMDX_STATUS_PROMPT = 7,
  LMDX_STATUS_PANIC = 99,
} LmdxStatus;

// A validated document.
typedef struct LmdxDocument LmdxDocument;

// A validated extraction schema.
typedef struct LmdxSchema LmdxSchema;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string. Never free it.
const char *lmdx_version(void);

// Message of the last failed call on this thread, or null after a success.
// Valid until the next call into this library on the same thread.
const char *lmdx_last_error(void);

// # Safety
// `s` is null or a string returned by this library and not yet freed.
void lmdx_string_free(char *s);

// Parses and validates a document from its JSON file format.
//
// # Safety
// `json` is a NUL-terminated string; `out` is writable.
enum LmdxStatus lmdx_document_from_json(const char *json, struct LmdxDocument **out);

// # Safety
// `doc` is null or a handle from [`lmdx_document_from_json`] not yet freed.
void lmdx_document_free(struct LmdxDocument *doc);

// Page count, or 0 for a null handle.
//
// # Safety
// `doc` is null or a live document handle.
size_t lmdx_document_page_count(const struct LmdxDocument *doc);

// Line count over all pages, or 0 for a null handle.
//
// # Safety
// `doc` is null or a live document handle.
size_t lmdx_document_segment_count(const struct LmdxDocument *doc);

// Parses and validates an extraction schema.
//
// # Safety
// `json` is a NUL-terminated string; `out` is writable.
enum LmdxStatus lmdx_schema_from_json(const char *json, struct LmdxSchema **out);

// # Safety
// `schema` is null or a handle from [`lmdx_schema_from_json`] not yet freed.
void lmdx_schema_free(struct LmdxSchema *schema);

// Chunks the document and renders one prompt per chunk.
//
// `scheme` may be null for the default scheme; `limit` 0 selects the
// default token budget. Writes a JSON array of
// `{"chunk_index", "page", "prompt_sha256", "text"}` to `out`.
//
// # Safety
// Handles are live, `scheme` is null or NUL-terminated, `out` is writable.
enum LmdxStatus lmdx_build_prompts(const struct LmdxDocument *doc,
                                   const struct LmdxSchema *schema,
                                   const char *scheme,
                                   size_t limit,
                                   char **out);

// Decodes sampled completions into a grounded extraction.
//
// `completions_json` is an array with one entry per chunk, in chunk order,
// each an array of completion strings. Chunking repeats
// [`lmdx_build_prompts`] with the same `scheme` and `limit`. Writes the
// extraction record JSON to `out`.
//
// # Safety
// Handles are live, strings are null or NUL-terminated, `out` is writable.
enum LmdxStatus lmdx_decode(const struct LmdxDocument *doc,
                            const struct LmdxSchema *schema,
                            const char *scheme,
                            size_t limit,
                            const char *completions_json,
                            char **out);

// Bucket index of a normalized coordinate.
//
// # Safety
// `out` is writable.
enum LmdxStatus lmdx_quantize(double value, uint32_t buckets, uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMDX_H */
