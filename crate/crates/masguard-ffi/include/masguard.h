#ifndef MASGUARD_H
#define MASGUARD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_UTF8 = 2,
  /**
   * Transcript text is not valid JSONL or lacks its summary line.
   */
  MG_STATUS_PARSE = 3,
  MG_STATUS_GRAPH = 4,
  MG_STATUS_JUDGE = 5,
  MG_STATUS_CONTRIBUTION = 6,
  /**
   * Invalid options or campaign config.
   */
  MG_STATUS_CONFIG = 7,
  MG_STATUS_SIMULATION = 8,
  MG_STATUS_INTERNAL = 9,
} MgStatus;

typedef enum {
  MG_METHOD_BACKPROP = 0,
  MG_METHOD_NO_BP = 1,
} MgMethod;

/**
 * Quarantine state plus the policy used to advance it.
 */
typedef struct MgQuarantine MgQuarantine;

/**
 * Parsed transcript.
 */
typedef struct MgTranscript MgTranscript;

/**
 * Options for `mg_analyze`. Only the synthetic judge is reachable from C.
 */
typedef struct {
  double epsilon;
  double judge_noise;
  uint64_t judge_seed;
  MgMethod method;
} MgAnalyzeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mg_version(void);

/**
 * Message for the most recent failure on this thread, or NULL.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *mg_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void mg_string_free(char *s);

/**
 * Parses a JSONL transcript (events followed by the summary line).
 *
 * # Safety
 * `jsonl` must be a NUL-terminated string and `out` a writable pointer.
 */
MgStatus mg_transcript_parse(const char *jsonl, MgTranscript **out);

/**
 * # Safety
 * `t` must come from `mg_transcript_parse` and not be used afterwards.
 */
void mg_transcript_free(MgTranscript *t);

/**
 * Number of agents in the transcript; 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
uint32_t mg_transcript_agent_count(const MgTranscript *t);

/**
 * epsilon 1.5, noise-free synthetic judge with seed 0, backpropagation.
 */
MgAnalyzeOptions mg_analyze_options_default(void);

/**
 * Scores the transcript and writes the detection report as JSON to `out_json`.
 *
 * # Safety
 * `t` must be a live handle, `options` NULL or valid, `out_json` writable.
 */
MgStatus mg_analyze(const MgTranscript *t, const MgAnalyzeOptions *options, char **out_json);

/**
 * Runs a campaign from TOML text (NULL selects the bundled default) and
 * writes the full report as JSON to `out_json`.
 *
 * # Safety
 * `config_toml` must be NULL or NUL-terminated; `out_json` writable.
 */
MgStatus mg_campaign_run(const char *config_toml, char **out_json);

/**
 * Empty quarantine with the given restore policy (both at least 1).
 *
 * # Safety
 * `out` must be writable.
 */
MgStatus mg_quarantine_new(uint32_t base, uint32_t backoff, MgQuarantine **out);

/**
 * Advances the quarantine by one episode in which `flagged` were detected.
 *
 * # Safety
 * `q` must be a live handle; `flagged` must point to `len` values (NULL is
 * allowed when `len` is 0).
 */
MgStatus mg_quarantine_step(MgQuarantine *q, const uint32_t *flagged, size_t len);

/**
 * Episodes of quarantine left for `agent`; 0 when free or `q` is NULL.
 *
 * # Safety
 * `q` must be NULL or a live handle.
 */
uint32_t mg_quarantine_remaining(const MgQuarantine *q, uint32_t agent);

/**
 * Whether `agent` is currently quarantined.
 *
 * # Safety
 * `q` must be NULL or a live handle.
 */
bool mg_quarantine_is_quarantined(const MgQuarantine *q, uint32_t agent);

/**
 * Writes the state (remaining episodes and strikes per agent) as JSON.
 *
 * # Safety
 * `q` must be a live handle and `out_json` writable.
 */
MgStatus mg_quarantine_to_json(const MgQuarantine *q, char **out_json);

/**
 * # Safety
 * `q` must come from `mg_quarantine_new` and not be used afterwards.
 */
void mg_quarantine_free(MgQuarantine *q);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASGUARD_H */
