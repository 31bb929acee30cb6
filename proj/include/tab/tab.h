/* C API for the TAB bias-mitigation library.
 *
 * All functions return tab_status; TAB_OK is 0. On failure,
 * tab_last_error() returns a thread-local description of what went wrong.
 * Objects are opaque handles owned by the caller and released with the
 * matching _free function.
 */
#ifndef TAB_TAB_H
#define TAB_TAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TAB_API __declspec(dllexport)
#else
#define TAB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tab_status {
    TAB_OK = 0,
    TAB_ERR_INVALID_ARGUMENT = 1,
    TAB_ERR_IO = 2,
    TAB_ERR_FORMAT = 3,
    TAB_ERR_CONFIG = 4,
    TAB_ERR_RUNTIME = 5
} tab_status;

typedef struct tab_dataset tab_dataset;

TAB_API const char* tab_version(void);

/* Thread-local message for the most recent failure on this thread. */
TAB_API const char* tab_last_error(void);

/* --------------------------------------------------------------------------
 * Datasets (TABD files; even_odd / cmnist generators; optional IDX source)
 * ------------------------------------------------------------------------ */

/* generator: "even_odd" or "cmnist". idx paths may be NULL to use the
 * procedural glyph source. Any out pointer may be NULL to skip that split. */
TAB_API tab_status tab_dataset_generate(const char* generator, uint64_t n_train,
                                        uint64_t n_val, double p, uint64_t seed,
                                        const char* idx_images, const char* idx_labels,
                                        tab_dataset** out_train, tab_dataset** out_val,
                                        tab_dataset** out_test);

TAB_API tab_status tab_dataset_read(const char* path, tab_dataset** out);
TAB_API tab_status tab_dataset_write(const tab_dataset* ds, const char* path);

TAB_API tab_status tab_dataset_info(const tab_dataset* ds, uint64_t* n,
                                    uint32_t* channels, uint32_t* height,
                                    uint32_t* width, uint32_t* num_classes,
                                    uint32_t* num_groups);

TAB_API void tab_dataset_free(tab_dataset* ds);

/* --------------------------------------------------------------------------
 * Training runs
 * ------------------------------------------------------------------------ */

typedef struct tab_train_options {
    const char* model;     /* "mlp" | "cnn6" */
    const char* hidden;    /* comma list of mlp widths, e.g. "64" */
    const char* optimizer; /* "adam" | "sgd" */
    double lr;
    double weight_decay;
    double momentum;
    int32_t batch_size;
    int32_t max_epochs;
    int32_t patience;
    double min_delta;
    double plateau_factor;
    int32_t plateau_patience;
    /* method-specific knobs; ignored by methods that do not use them */
    int32_t jtt_t_id;
    const char* jtt_lambda_up; /* integer string or "ratio" */
    double gdro_gamma;
} tab_train_options;

/* Fills the paper-default configuration. */
TAB_API void tab_train_options_init(tab_train_options* opts);

typedef struct tab_run_metrics {
    double val_acc;
    double val_wga;
    double test_wga;
    double test_acc_weighted;
    double test_acc_plain;
    double bc_fraction_before;   /* tab only, else 0 */
    double bc_fraction_after;    /* tab only, else 0 */
    double identified_fraction;  /* tab only, else 0 */
    int32_t epochs_run;
    int32_t identifier_epochs; /* tab/jtt, else 0 */
    double wall_seconds;
} tab_run_metrics;

/* method: "erm" | "tab" | "jtt" | "gdro". Writes checkpoint.tabm, eval.csv,
 * cell.json (and history.tabh + manifest.json for tab) into out_dir when
 * out_dir is non-NULL. */
TAB_API tab_status tab_run_method(const char* method, const tab_dataset* train,
                                  const tab_dataset* val, const tab_dataset* test,
                                  const tab_train_options* opts, uint64_t seed,
                                  const char* out_dir, tab_run_metrics* out_metrics);

/* Evaluates a TABM checkpoint. weight_ref_train, when non-NULL, supplies the
 * training group distribution for the weighted mean accuracy. out_csv_path,
 * when non-NULL, receives the per-sample eval CSV. */
TAB_API tab_status tab_eval_checkpoint(const char* model_path, const tab_dataset* data,
                                       const tab_dataset* weight_ref_train,
                                       const char* out_csv_path, double* out_mean_acc,
                                       double* out_wga, double* out_weighted_acc);

/* --------------------------------------------------------------------------
 * Grid execution and reporting (config-file driven)
 * ------------------------------------------------------------------------ */

/* Runs every (candidate x seed) cell of the grid config. out_dir_override
 * replaces the config's [grid] out directory when non-NULL. Failed cells are
 * recorded and counted; the call itself succeeds unless the grid could not
 * run at all. */
TAB_API tab_status tab_grid_run(const char* config_path, const char* out_dir_override,
                                int32_t* out_failed_cells);

/* Re-runs one grid cell from config + seed into out_dir (reproducibility
 * path). candidate_id may be NULL when the method has a single candidate. */
TAB_API tab_status tab_cell_run(const char* config_path, const char* method,
                                const char* candidate_id, uint64_t seed,
                                const char* out_dir, tab_run_metrics* out_metrics);

/* Aggregates all cell.json files under results_dir and writes report.txt,
 * report.csv, and sweep.csv there. */
TAB_API tab_status tab_report_write(const char* results_dir);

/* Returns the rendered report text; free it with tab_string_free. */
TAB_API tab_status tab_report_text(const char* results_dir, char** out_text);

TAB_API void tab_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* TAB_TAB_H */
