#ifndef OBJRELOC_H
#define OBJRELOC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum ObjrelocStatus {
  OBJRELOC_STATUS_OK = 0,
  // A required pointer argument was null.
  OBJRELOC_STATUS_NULL_ARGUMENT = 1,
  // A string was not UTF-8 or a JSON argument did not parse.
  OBJRELOC_STATUS_INVALID_ARGUMENT = 2,
  // Parameters failed validation.
  OBJRELOC_STATUS_CONFIG = 3,
  // A file could not be read or written, or its contents were malformed.
  OBJRELOC_STATUS_IO = 4,
  // The data admits no solution (too few pairs, degenerate geometry).
  OBJRELOC_STATUS_DEGENERATE = 5,
  // An internal invariant was violated.
  OBJRELOC_STATUS_INVARIANT = 6,
  // A Rust panic was caught at the boundary.
  OBJRELOC_STATUS_PANIC = 7,
} ObjrelocStatus;

// A finalized object map with its surface model. Opaque to C.
typedef struct ObjrelocMap ObjrelocMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next call into this library from the same thread.
const char *objreloc_last_error(void);

// Library version, a static string.
const char *objreloc_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void objreloc_string_free(char *s);

// Loads a map JSON file and a surface file into a new handle.
//
// # Safety
// Paths must be NUL-terminated; `out` must be writable.
enum ObjrelocStatus objreloc_map_load(const char *map_path,
                                      const char *surface_path,
                                      struct ObjrelocMap **out);

// Releases a map handle. Null is ignored.
//
// # Safety
// `map` must come from [`objreloc_map_load`] and not have been freed.
void objreloc_map_free(struct ObjrelocMap *map);

// Number of objects in the map, 0 for null.
//
// # Safety
// `map` must be null or a live handle.
size_t objreloc_map_object_count(const struct ObjrelocMap *map);

// Relocalises one frame given as a detection record (one line of a
// detection file). `params_json` may be null for defaults. On success
// `*out_json` receives the result record.
//
// A frame that cannot be relocalised is reported in the result's status,
// not as an error.
//
// # Safety
// `map` must be a live handle, strings NUL-terminated, `out_json` writable.
enum ObjrelocStatus objreloc_relocalise(const struct ObjrelocMap *map,
                                        const char *frame_json,
                                        const char *params_json,
                                        char **out_json);

// Closed-form absolute orientation of `n` point pairs, `n >= 3`.
//
// `frame_points` and `map_points` hold `3n` doubles, xyz per point. On
// success the pose mapping frame to map is written as a row-major rotation
// (9 doubles) and a translation (3 doubles).
//
// # Safety
// Input arrays must hold `3n` doubles; output arrays 9 and 3.
enum ObjrelocStatus objreloc_horn_ao(const double *frame_points,
                                     const double *map_points,
                                     size_t n,
                                     double *out_rotation,
                                     double *out_translation);

// Runs a benchmark from a config JSON document. On success `*out_json`
// receives the report.
//
// # Safety
// `config_json` NUL-terminated, `out_json` writable.
enum ObjrelocStatus objreloc_bench(const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBJRELOC_H */
