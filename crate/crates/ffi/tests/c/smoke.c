#include <stdio.h>
#include <string.h>

#include "microreduce.h"

#define CHECK(call)                                                         \
    do {                                                                    \
        MrStatus s_ = (call);                                               \
        if (s_ != MR_STATUS_OK) {                                           \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, mr_last_error());  \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    MrDataset *ds = NULL;
    MrJob *job = NULL;
    MrOutcome outcome;
    char *ranking = NULL;
    char *oracle = NULL;
    uint64_t ingested = 0, mapped = 0;
    double phases[7];

    if (mr_dataset_generate(0, 10, 1, 0.0, &ds) != MR_STATUS_INVALID_ARGUMENT || mr_last_error() == NULL)
        return 2;
    CHECK(mr_dataset_generate(1, 4000, 11, 0.01, &ds));
    CHECK(mr_job_run_builtin(ds, 2, 11, false, &job));
    CHECK(mr_job_outcome(job, &outcome));
    if (outcome != MR_OUTCOME_COMPLETED)
        return 3;
    CHECK(mr_job_counters(job, &ingested, &mapped));
    if (ingested != mapped || ingested == 0)
        return 4;
    CHECK(mr_job_phase_seconds(job, phases));
    CHECK(mr_job_ranking_json(job, &ranking));
    CHECK(mr_dataset_oracle_json(ds, 10, &oracle));
    if (strcmp(ranking, oracle) != 0)
        return 5;
    printf("ok %s total=%.2fs\n", mr_version(), phases[6]);
    mr_string_free(ranking);
    mr_string_free(oracle);
    mr_job_free(job);
    mr_dataset_free(ds);
    return 0;
}
