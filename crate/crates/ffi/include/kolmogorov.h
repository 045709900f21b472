#ifndef KOLMOGOROV_H
#define KOLMOGOROV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The non-zero values match the command-line exit codes where
// they overlap.
typedef enum KmStatus {
  KM_STATUS_OK = 0,
  // Invalid configuration or unsupported dimension.
  KM_STATUS_CONFIG = 1,
  // Malformed input data, model or identifiers, or an I/O failure.
  KM_STATUS_INPUT = 2,
  // A solver produced non-finite values or received an asymmetric matrix.
  KM_STATUS_NUMERICAL = 3,
  KM_STATUS_NULL_POINTER = 4,
  KM_STATUS_INVALID_UTF8 = 5,
  // A Rust panic was caught at the boundary.
  KM_STATUS_PANIC = 6,
} KmStatus;

// Opaque trained model.
typedef struct KmModel KmModel;

// Opaque set of `(user, item, probability)` observations.
typedef struct KmObservations KmObservations;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *km_last_error(void);

// # Safety
// `s` is null or a string returned by this library and not yet freed.
void km_string_free(char *s);

// Loads a whitespace-separated `user item rating [timestamp]` file,
// mapping ratings to `rating / r_max`.
//
// # Safety
// `path` is a nul-terminated string; `out` is a valid pointer.
enum KmStatus km_observations_load(const char *path, uint32_t r_max, struct KmObservations **out);

// Builds an observation set from `n` parallel arrays. Probabilities must
// lie in [0, 1] and `(user, item)` pairs must be unique.
//
// # Safety
// Each array holds at least `n` elements; `out` is a valid pointer.
enum KmStatus km_observations_from_arrays(const uint64_t *users,
                                          const uint64_t *items,
                                          const double *probs,
                                          size_t n,
                                          struct KmObservations **out);

// Number of records, or 0 for null.
//
// # Safety
// `obs` is null or a live handle.
size_t km_observations_len(const struct KmObservations *obs);

// # Safety
// `obs` is null or a live handle, which is invalid afterwards.
void km_observations_free(struct KmObservations *obs);

// Trains a model. `config_toml` uses the command-line configuration format
// and may be null for defaults.
//
// # Safety
// `obs` is a live handle, `config_toml` is null or nul-terminated, `out`
// is a valid pointer.
enum KmStatus km_train(const struct KmObservations *obs,
                       const char *config_toml,
                       struct KmModel **out);

// Parses a model document.
//
// # Safety
// `json` is nul-terminated; `out` is a valid pointer.
enum KmStatus km_model_from_json(const char *json, struct KmModel **out);

// Serializes a model; free the result with `km_string_free`.
//
// # Safety
// `model` is a live handle; `out` is a valid pointer.
enum KmStatus km_model_to_json(const struct KmModel *model, char **out);

// Number of elementary events, or 0 for null.
//
// # Safety
// `model` is null or a live handle.
size_t km_model_dim(const struct KmModel *model);

// Probability that `user` likes `item`. Unknown ids are an error.
//
// # Safety
// `model` is a live handle; `out` is a valid pointer.
enum KmStatus km_predict(const struct KmModel *model, uint64_t user, uint64_t item, double *out);

// Mined rules as a JSON document; free with `km_string_free`.
//
// # Safety
// `model` is a live handle; `out` is a valid pointer.
enum KmStatus km_rules_json(const struct KmModel *model, double min_beta, char **out);

// # Safety
// `model` is null or a live handle, which is invalid afterwards.
void km_model_free(struct KmModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOLMOGOROV_H */
