#ifndef SIMASSOC_H
#define SIMASSOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_ARGUMENT = 2,
  SA_STATUS_CONFIG = 3,
  SA_STATUS_MODEL = 4,
  SA_STATUS_TRACKING = 5,
  SA_STATUS_BUFFER_TOO_SMALL = 6,
  SA_STATUS_PANIC = 7,
} SaStatus;

typedef enum SaCost {
  SA_COST_EUCLIDEAN = 0,
  SA_COST_MANHATTAN = 1,
  SA_COST_BHATTACHARYYA = 2,
  SA_COST_CHI_SQUARE = 3,
  SA_COST_SIM_NET = 4,
} SaCost;

typedef enum SaSolver {
  SA_SOLVER_ASSOC_NET = 0,
  SA_SOLVER_HUNGARIAN = 1,
  SA_SOLVER_GREEDY = 2,
} SaSolver;

// Opaque run configuration.
typedef struct SaConfig SaConfig;

// Opaque tracker with its networks.
typedef struct SaTracker SaTracker;

// Box in the ego frame: centre, `l, w, h` and yaw.
typedef struct SaBox {
  double cx;
  double cy;
  double cz;
  double l;
  double w;
  double h;
  double yaw;
} SaBox;

typedef struct SaDetection {
  struct SaBox bbox;
  double score;
} SaDetection;

typedef struct SaPose {
  double x;
  double y;
  double z;
  double yaw;
} SaPose;

// A reported track.
typedef struct SaTrack {
  uint64_t id;
  struct SaBox bbox;
  double existence;
} SaTrack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call on the same thread.
const char *sa_last_error(void);

// Library version as a static NUL-terminated string.
const char *sa_version(void);

// New configuration with default values.
struct SaConfig *sa_config_new(void);

// Parses a TOML configuration into `*out`.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum SaStatus sa_config_from_toml(const char *toml, struct SaConfig **out);

// Applies a `key.path=value` override.
//
// # Safety
// `cfg` must come from this library; `assignment` must be NUL-terminated.
enum SaStatus sa_config_set(struct SaConfig *cfg, const char *assignment);

// Number of `f32` values in one appearance tensor under `cfg`.
//
// # Safety
// `cfg` must come from this library or be null (returns 0).
size_t sa_config_appearance_len(const struct SaConfig *cfg);

// # Safety
// `cfg` must come from this library or be null.
void sa_config_free(struct SaConfig *cfg);

// Creates a tracker. `models_dir` holds `simnet.ckpt` and
// `assocnet.ckpt`; it may be null when neither network is needed.
//
// # Safety
// `cfg` must come from this library, `models_dir` must be null or
// NUL-terminated, and `out` a valid pointer.
enum SaStatus sa_tracker_new(const struct SaConfig *cfg,
                             const char *models_dir,
                             enum SaCost cost,
                             enum SaSolver solver,
                             struct SaTracker **out);

// Processes one frame. `appearance` holds `n` consecutive tensors of
// `sa_config_appearance_len` values each (`H×W×C`, row-major); it may be
// null when `n` is 0.
//
// # Safety
// Pointers must be valid for `n` detections and `n` appearance tensors.
enum SaStatus sa_tracker_step(struct SaTracker *tracker,
                              const struct SaDetection *detections,
                              const float *appearance,
                              size_t n,
                              struct SaPose pose,
                              double dt);

// Number of tracks currently reported.
//
// # Safety
// `tracker` must come from this library or be null (returns 0).
size_t sa_tracker_reported_count(const struct SaTracker *tracker);

// Copies reported tracks into `out` (capacity `cap`) and their count into
// `*written`. Returns `BufferTooSmall` (with `*written` set to the needed
// count) when `cap` is insufficient.
//
// # Safety
// `out` must be valid for `cap` elements; `written` must be valid.
enum SaStatus sa_tracker_reported(const struct SaTracker *tracker,
                                  struct SaTrack *out,
                                  size_t cap,
                                  size_t *written);

// # Safety
// `tracker` must come from this library or be null.
void sa_tracker_free(struct SaTracker *tracker);

// Minimum-cost assignment of a row-major `rows × cols` matrix; NaN marks
// forbidden cells. Writes the assigned column of each row (or -1) into
// `row_to_col`.
//
// # Safety
// `costs` must hold `rows·cols` values and `row_to_col` room for `rows`.
enum SaStatus sa_hungarian(const double *costs, size_t rows, size_t cols, int64_t *row_to_col);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMASSOC_H */
