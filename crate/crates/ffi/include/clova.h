#ifndef CLOVA_H
#define CLOVA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every exported function.
 */
typedef enum ClovaStatus {
  CLOVA_STATUS_OK = 0,
  CLOVA_STATUS_NULL_ARGUMENT = 1,
  CLOVA_STATUS_INVALID_UTF8 = 2,
  CLOVA_STATUS_MALFORMED_SPEC = 3,
  CLOVA_STATUS_OUTPUT_EXISTS = 4,
  CLOVA_STATUS_BACKEND = 5,
  CLOVA_STATUS_MISSING_STATE = 6,
  CLOVA_STATUS_IO = 7,
  CLOVA_STATUS_INVALID_PROGRAM = 8,
  CLOVA_STATUS_INTERNAL = 9,
} ClovaStatus;

/*
 Opaque handle: a loaded bundle, its backend and the current state.
 */
typedef struct ClovaRunner ClovaRunner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, static storage.
 */
const char *clova_version(void);

/*
 Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *clova_last_error(void);

/*
 Frees a string returned by this library. Null is ignored.

 # Safety
 `s` is null or was returned by this library and not yet freed.
 */
void clova_string_free(char *s);

/*
 Generates a benchmark bundle with its initial state in `out_dir`.
 `spec_json` may be null for the desk preset; `seed` overrides the spec seed.

 # Safety
 String arguments are null or NUL-terminated.
 */
enum ClovaStatus clova_generate_bundle(const char *spec_json, uint64_t seed, const char *out_dir);

/*
 Opens a bundle. `state_dir` may be null for the bundle's initial state.
 The backend follows the environment selector, else the bundle rules.

 # Safety
 String arguments are null or NUL-terminated; `out` is writable.
 */
enum ClovaStatus clova_runner_open(const char *bundle_dir,
                                   const char *state_dir,
                                   struct ClovaRunner **out);

/*
 Releases a runner. Null is ignored.

 # Safety
 `runner` is null or came from [`clova_runner_open`] and is not used afterwards.
 */
void clova_runner_free(struct ClovaRunner *runner);

/*
 Runs learning episodes over the training split. `out_episodes` may be null.

 # Safety
 `runner` is a live handle; `out_episodes` is null or writable.
 */
enum ClovaStatus clova_runner_train(struct ClovaRunner *runner, size_t *out_episodes);

/*
 Evaluates the current state on the test split with `jobs` threads.
 Writes the accuracy, or NaN when the split is empty.

 # Safety
 `runner` is a live handle; `out_accuracy` is writable.
 */
enum ClovaStatus clova_runner_eval(struct ClovaRunner *runner, size_t jobs, double *out_accuracy);

/*
 Writes the current state checkpoint to `dir`.

 # Safety
 `runner` is a live handle; `dir` is NUL-terminated.
 */
enum ClovaStatus clova_runner_save_state(struct ClovaRunner *runner, const char *dir);

/*
 Hex SHA-256 of the current state. Free the string with [`clova_string_free`].

 # Safety
 `runner` is a live handle; `out` is writable.
 */
enum ClovaStatus clova_runner_state_hash(struct ClovaRunner *runner, char **out);

/*
 Parses and validates a program, returning its canonical text.

 # Safety
 `source` is NUL-terminated; `out` is writable.
 */
enum ClovaStatus clova_program_canonicalize(const char *source, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLOVA_H */
