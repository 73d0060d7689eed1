/* Minimal consumer of the C API: run the closed-loop optimizer on the
 * reference two-qubit system and print the QFI trajectory.
 *
 * Build (from the workspace root, after `cargo build -p qfi-grape-ffi`):
 *
 *   cc -std=c99 -Icrates/ffi/include crates/ffi/examples/qfi_demo.c \
 *      -Ltarget/debug -lqfi_grape_ffi -lm -o qfi_demo
 *   LD_LIBRARY_PATH=target/debug ./qfi_demo
 */

#include <stdio.h>
#include <stdlib.h>

#include "qfi_grape.h"

static void fail(const char *what) {
    const char *msg = qfg_last_error();
    fprintf(stderr, "%s failed: %s\n", what, msg ? msg : "(no detail)");
    exit(1);
}

int main(void) {
    printf("library version: %s\n", qfg_version());

    QfgConfig *cfg = qfg_config_preset_paper_2q();
    if (!cfg) fail("preset");
    if (qfg_config_set_seed(cfg, 11) != QFG_STATUS_OK) fail("set_seed");

    QfgTrace *trace = qfg_run_hqc_grape(cfg);
    if (!trace) fail("hqc-grape");

    size_t n = qfg_trace_len(trace);
    double *qfi = malloc(n * sizeof(double));
    if (!qfi) fail("malloc");
    size_t written = qfg_trace_qfi_series(trace, qfi, n);
    printf("trace rows: %zu\n", written);
    for (size_t i = 0; i < written; i += written > 8 ? written / 8 : 1)
        printf("  row %3zu: qfi = %.6f\n", i, qfi[i]);
    printf("final qfi: %.6f\n", qfg_trace_final_qfi(trace));

    size_t k = 0, m = 0;
    if (qfg_trace_controls_shape(trace, &k, &m) != QFG_STATUS_OK) fail("shape");
    printf("controls: %zu lines x %zu slices\n", k, m);

    free(qfi);
    qfg_trace_free(trace);
    qfg_config_free(cfg);
    return 0;
}
