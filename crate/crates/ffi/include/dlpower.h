#ifndef DLPOWER_H
#define DLPOWER_H

/* Generated by cbindgen from dlpower-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes returned by every API call.
 */
typedef enum DlpStatus {
  /*
   Success.
   */
  DLP_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  DLP_STATUS_NULL_ARGUMENT = 1,
  /*
   Arguments or configuration were rejected.
   */
  DLP_STATUS_INVALID_ARGUMENT = 2,
  /*
   A numeric routine failed (non-finite values, factorization).
   */
  DLP_STATUS_NUMERIC_FAILURE = 3,
  /*
   A solver did not produce a valid allocation.
   */
  DLP_STATUS_SOLVER_FAILURE = 4,
  /*
   File or format error.
   */
  DLP_STATUS_IO_FAILURE = 5,
  /*
   A panic was caught at the boundary; state may be stale.
   */
  DLP_STATUS_INTERNAL_PANIC = 6,
} DlpStatus;

/*
 Opaque network/scenario configuration handle.
 */
typedef struct DlpConfig DlpConfig;

/*
 Opaque Monte-Carlo gain table handle.
 */
typedef struct DlpGainTable DlpGainTable;

/*
 Opaque trained-model handle.
 */
typedef struct DlpModel DlpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing this thread's most recent failure. The pointer stays
 valid until the next failing call on the same thread. Never null.
 */
const char *dlp_last_error_message(void);

/*
 Create a configuration with the scenario defaults (L=4, K=5, M=100).
 Free with `dlp_config_free`.
 */
struct DlpConfig *dlp_config_default(void);

/*
 Parse a configuration from `key = value` text. On success stores a new
 handle in `out`.

 # Safety

 `text` must point to a NUL-terminated string and `out` must be valid for
 a pointer write.
 */
enum DlpStatus dlp_config_from_text(const char *text, struct DlpConfig **out);

/*
 Number of cells (L) and UEs per cell (K) of a configuration.

 # Safety

 `config` must be a live handle from this library; `l_out` and `k_out`
 must be valid for writes.
 */
enum DlpStatus dlp_config_dims(const struct DlpConfig *config, size_t *l_out, size_t *k_out);

/*
 Downlink per-cell power budget (mW) of a configuration.

 # Safety

 `config` must be a live handle from this library; `out` must be valid
 for a write.
 */
enum DlpStatus dlp_config_p_max_mw(const struct DlpConfig *config, double *out);

/*
 Destroy a configuration handle. Null is ignored.

 # Safety

 `config` must be null or a handle from this library not yet freed.
 */
void dlp_config_free(struct DlpConfig *config);

/*
 Simulate one random UE drop under `config` and average the Monte-Carlo
 signal/interference gains over `n_real` fading realizations with the
 chosen precoder (0 = MR, 1 = M-MMSE). Deterministic given `seed`.

 # Safety

 `config` must be a live handle from this library; `out` must be valid
 for a pointer write.
 */
enum DlpStatus dlp_gain_table_simulate(const struct DlpConfig *config,
                                       int32_t precoder,
                                       size_t n_real,
                                       uint64_t seed,
                                       struct DlpGainTable **out);

/*
 Parse a gain table from its CSV serialization.

 # Safety

 `text` must point to a NUL-terminated string and `out` must be valid for
 a pointer write.
 */
enum DlpStatus dlp_gain_table_from_csv(const char *text, struct DlpGainTable **out);

/*
 Serialize a gain table to CSV. The returned string must be released with
 `dlp_string_free`.

 # Safety

 `table` must be a live handle from this library; `out` must be valid for
 a pointer write.
 */
enum DlpStatus dlp_gain_table_to_csv(const struct DlpGainTable *table, char **out);

/*
 Cell count (L) and per-cell UE count (K) of a gain table.

 # Safety

 `table` must be a live handle from this library; `l_out` and `k_out`
 must be valid for writes.
 */
enum DlpStatus dlp_gain_table_dims(const struct DlpGainTable *table, size_t *l_out, size_t *k_out);

/*
 Destroy a gain-table handle. Null is ignored.

 # Safety

 `table` must be null or a handle from this library not yet freed.
 */
void dlp_gain_table_free(struct DlpGainTable *table);

/*
 Release a string returned by this library.

 # Safety

 `s` must be null or a string returned by this library not yet freed.
 */
void dlp_string_free(char *s);

/*
 Solve a power-allocation problem on a gain table. `strategy` is 0
 (max-min SE) or 1 (max-prod SINR); `rho_out` must hold `L*K` doubles and
 receives the optimal per-UE powers (mW). `objective_out` and
 `converged_out` may be null if not wanted.

 # Safety

 `table` must be a live handle from this library and `rho_out` must point
 to at least `L*K` writable doubles; `objective_out` and `converged_out`
 must each be null or valid for a write.
 */
enum DlpStatus dlp_solve(const struct DlpGainTable *table,
                         int32_t strategy,
                         double p_max_mw,
                         double *rho_out,
                         double *objective_out,
                         uint8_t *converged_out);

/*
 Load a trained model file. Free with `dlp_model_free`.

 # Safety

 `path` must point to a NUL-terminated string and `out` must be valid for
 a pointer write.
 */
enum DlpStatus dlp_model_load(const char *path, struct DlpModel **out);

/*
 Input and output dimensions of a model (2KL and K+1).

 # Safety

 `model` must be a live handle from this library; `input_out` and
 `output_out` must be valid for writes.
 */
enum DlpStatus dlp_model_dims(const struct DlpModel *model, size_t *input_out, size_t *output_out);

/*
 Predict a budget-feasible power allocation for one cell. `positions`
 holds `n_positions` raw UE coordinates (the model's input dimension);
 `powers_out` must hold `output_dim - 1` doubles and receives mW values
 with sum <= `p_max_mw`.

 # Safety

 `model` must be a live handle from this library, `positions` must point
 to `n_positions` readable doubles, and `powers_out` must point to at
 least `output_dim - 1` writable doubles.
 */
enum DlpStatus dlp_model_predict(const struct DlpModel *model,
                                 const double *positions,
                                 size_t n_positions,
                                 double p_max_mw,
                                 double *powers_out);

/*
 Destroy a model handle. Null is ignored.

 # Safety

 `model` must be null or a handle from this library not yet freed.
 */
void dlp_model_free(struct DlpModel *model);

/*
 Strategy name for a selector value, for diagnostics; returns a static
 string, or null for an unknown selector.
 */
const char *dlp_strategy_name(int32_t strategy);

/*
 Parse a strategy name ("maxmin" | "maxprod") to its selector; -1 if
 unknown.

 # Safety

 `name` must be null or point to a NUL-terminated string.
 */
int32_t dlp_strategy_from_name(const char *name);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLPOWER_H */
