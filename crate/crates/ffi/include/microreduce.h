#ifndef MICROREDUCE_H
#define MICROREDUCE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_ARGUMENT = 1,
  MR_STATUS_INVALID_UTF8 = 2,
  MR_STATUS_INVALID_ARGUMENT = 3,
  MR_STATUS_IO = 4,
  MR_STATUS_JOB_ERROR = 5,
  MR_STATUS_UNAVAILABLE = 6,
  MR_STATUS_PANIC = 99,
} MrStatus;

typedef enum MrOutcome {
  MR_OUTCOME_COMPLETED = 0,
  MR_OUTCOME_STALLED = 1,
  MR_OUTCOME_FAILED = 2,
} MrOutcome;

// Input files held in memory, plus the generator ledger when known.
typedef struct MrDataset MrDataset;

typedef struct MrJob MrJob;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *mr_last_error(void);

// Library version, static storage.
const char *mr_version(void);

// Generates a synthetic dataset in memory.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum MrStatus mr_dataset_generate(uint32_t files,
                                  uint32_t rows_per_file,
                                  uint64_t seed,
                                  double invalid_fraction,
                                  struct MrDataset **out);

// Loads every CSV file of a directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` as for [`mr_dataset_generate`].
enum MrStatus mr_dataset_load_dir(const char *dir, struct MrDataset **out);

// Number of input files in the dataset.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
enum MrStatus mr_dataset_file_count(const struct MrDataset *ds, uint32_t *out);

// Ground-truth ranking of a generated dataset as JSON.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
enum MrStatus mr_dataset_oracle_json(const struct MrDataset *ds, uint32_t limit, char **out);

// # Safety
// `ds` must be null or a handle from this library not yet freed.
void mr_dataset_free(struct MrDataset *ds);

// Runs built-in scenario 1..6 over the dataset. Stalled and failed jobs
// still return [`MrStatus::Ok`] with a handle; see [`mr_job_outcome`].
// The scenario's file count is capped at the dataset's.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
enum MrStatus mr_job_run_builtin(const struct MrDataset *ds,
                                 uint32_t scenario,
                                 uint64_t seed,
                                 bool override_gate,
                                 struct MrJob **out);

// Runs a scenario given as TOML text.
//
// # Safety
// As for [`mr_job_run_builtin`]; `scenario_toml` must be NUL-terminated.
enum MrStatus mr_job_run_toml(const struct MrDataset *ds,
                              const char *scenario_toml,
                              uint64_t seed,
                              bool override_gate,
                              struct MrJob **out);

// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_outcome(const struct MrJob *job, enum MrOutcome *out);

// Final ingested and mapped counter values.
//
// # Safety
// `job` must be a live job handle; both out pointers must be writable.
enum MrStatus mr_job_counters(const struct MrJob *job, uint64_t *ingested, uint64_t *mapped);

// Records lost to the dead-letter queue.
//
// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_dlq_records(const struct MrJob *job, uint64_t *out);

// Phase seconds in the order ingest, prep, gate, aggregate, rank,
// overhead, total. `out` must hold 7 doubles.
//
// # Safety
// `job` must be a live job handle; `out` must point at 7 writable doubles.
enum MrStatus mr_job_phase_seconds(const struct MrJob *job, double *out);

// Ranking JSON of a completed job.
//
// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_ranking_json(const struct MrJob *job, char **out);

// Execution trace as CSV.
//
// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_trace_csv(const struct MrJob *job, char **out);

// Invocation ledger as CSV.
//
// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_ledger_csv(const struct MrJob *job, char **out);

// Execution id.
//
// # Safety
// `job` must be a live job handle; `out` must be writable.
enum MrStatus mr_job_execution_id(const struct MrJob *job, char **out);

// # Safety
// `job` must be null or a handle from this library not yet freed.
void mr_job_free(struct MrJob *job);

// # Safety
// `s` must be null or a string returned by this library not yet freed.
void mr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICROREDUCE_H */
