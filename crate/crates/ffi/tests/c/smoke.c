#include <stdio.h>
#include <string.h>

#include "causal_mesh.h"

#define CHECK(expr)                                                       \
    do {                                                                  \
        if (!(expr)) {                                                    \
            const char *err = cm_last_error();                            \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #expr, \
                    err ? err : "no error");                              \
            return 1;                                                     \
        }                                                                 \
    } while (0)

int main(void) {
    CmSimulation *sim = NULL;
    CHECK(cm_simulation_new("fig2_violation", &sim) == CM_STATUS_OK);
    CHECK(cm_simulation_set_protocol(sim, "rbroadcast") == CM_STATUS_OK);
    CHECK(cm_simulation_run(sim) == CM_STATUS_OK);

    CmSummary s;
    CHECK(cm_simulation_summary(sim, &s) == CM_STATUS_OK);
    CHECK(s.causal_violations == 1 && !s.clean && s.quiescent);

    char *trace = NULL;
    CHECK(cm_simulation_trace_jsonl(sim, &trace) == CM_STATUS_OK);
    bool clean = true;
    CHECK(cm_verify_jsonl(trace, &clean, NULL) == CM_STATUS_OK);
    CHECK(!clean);
    cm_string_free(trace);
    cm_simulation_free(sim);

    CHECK(cm_simulation_new("missing", &sim) == CM_STATUS_CONFIG);
    CHECK(strstr(cm_last_error(), "missing") != NULL);
    printf("ok %s\n", cm_version());
    return 0;
}
