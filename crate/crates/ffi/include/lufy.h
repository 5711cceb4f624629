#ifndef LUFY_H
#define LUFY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LufyStatus {
  LUFY_STATUS_OK = 0,
  LUFY_STATUS_INVALID_INPUT = 1,
  LUFY_STATUS_PROVIDER_UNAVAILABLE = 2,
  LUFY_STATUS_PARSE = 3,
  LUFY_STATUS_GENERATION = 4,
  LUFY_STATUS_CONSISTENCY = 5,
  LUFY_STATUS_LIFECYCLE = 6,
  LUFY_STATUS_PERSISTENCE = 7,
  LUFY_STATUS_CONFIG = 8,
  LUFY_STATUS_NULL_POINTER = 9,
  LUFY_STATUS_PANIC = 10,
} LufyStatus;

// Opaque engine handle.
typedef struct LufyEngine LufyEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create an engine from a JSON config. `config_json` may be null for the
// defaults (in-memory store, stub providers).
//
// # Safety
// `config_json` is null or a NUL-terminated string; `out_engine` is writable.
enum LufyStatus lufy_engine_new(const char *config_json, struct LufyEngine **out_engine);

// Release an engine. Null is ignored.
//
// # Safety
// `engine` came from [`lufy_engine_new`] and is not used afterwards.
void lufy_engine_free(struct LufyEngine *engine);

// Open the next session and write its index to `out_session`.
//
// # Safety
// `engine` is a live handle; `out_session` is writable.
enum LufyStatus lufy_session_open(struct LufyEngine *engine, uint32_t *out_session);

// Run one turn. `out_json` receives the turn result.
//
// # Safety
// `engine` is a live handle; `user_text` is NUL-terminated; `out_json` is writable.
enum LufyStatus lufy_turn(struct LufyEngine *engine,
                          uint32_t session,
                          const char *user_text,
                          char **out_json);

// Close a session. `out_json` receives the forgetting report.
//
// # Safety
// `engine` is a live handle; `out_json` is writable.
enum LufyStatus lufy_session_close(struct LufyEngine *engine, uint32_t session, char **out_json);

// All memories with their breakdowns, as a JSON array.
//
// # Safety
// `engine` is a live handle; `out_json` is writable.
enum LufyStatus lufy_memories(struct LufyEngine *engine, char **out_json);

// Answer a question without recording anything.
//
// # Safety
// `engine` is a live handle; `question` is NUL-terminated; `out_json` is writable.
enum LufyStatus lufy_answer(struct LufyEngine *engine, const char *question, char **out_json);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` came from this library and is not used afterwards.
void lufy_string_free(char *s);

// Message of the last failed call on this thread, or an empty string.
// Valid until the next call into this library on the same thread.
const char *lufy_last_error(void);

// Strength from metrics `[A, P, L, R1, R2]` and weights
// `[w_A, w_P, w_L, w_R1, w_R2]`.
//
// # Safety
// `metrics` and `weights` point to 5 doubles; `out_strength` is writable.
enum LufyStatus lufy_compute_strength(const double *metrics,
                                      const double *weights,
                                      double *out_strength);

// `exp(-delta_t / strength)`, zero for non-positive strength.
//
// # Safety
// `out_importance` is writable.
enum LufyStatus lufy_compute_importance(double strength, double delta_t, double *out_importance);

// Cosine similarity of two `len`-element vectors.
//
// # Safety
// `a` and `b` point to `len` floats; `out_cos` is writable.
enum LufyStatus lufy_cosine_similarity(const float *a, const float *b, size_t len, double *out_cos);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUFY_H */
