#ifndef CHARGEPRICE_H
#define CHARGEPRICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 5 match the exit codes of the command line tool.
 */
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  CP_STATUS_INVALID_INPUT = 2,
  CP_STATUS_INFEASIBLE = 3,
  CP_STATUS_SOLVER_FAILURE = 4,
  CP_STATUS_COVERAGE = 5,
  CP_STATUS_NULL_POINTER = 6,
  CP_STATUS_PANIC = 7,
  CP_STATUS_BUFFER_TOO_SMALL = 8,
} CpStatus;

/**
 * Explicit piecewise-affine station demand as a function of prices.
 */
typedef struct CpDemandFunction CpDemandFunction;

/**
 * Coupled traffic network and distribution grid.
 */
typedef struct CpProblem CpProblem;

/**
 * Optimal prices with the dispatch and traffic response.
 */
typedef struct CpResult CpResult;

/**
 * Run settings. Obtain defaults from [`cp_run_options_default`].
 */
typedef struct CpRunOptions {
  /**
   * When false the price box is `[0, 2 max c]` and the bounds are ignored.
   */
  bool has_price_box;
  double price_lo;
  double price_hi;
  uint64_t seed;
  /**
   * Worker threads; 0 uses all cores.
   */
  uint32_t workers;
  double tol_kkt;
  double tol_active;
} CpRunOptions;

/**
 * Cost terms of a pricing solution.
 */
typedef struct CpCosts {
  double idso;
  double dispatch;
  double itso;
  double latency;
  double charging_expense;
  double combined;
} CpCosts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cp_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next `cp_*` call on the same thread.
 */
const char *cp_last_error_message(void);

/**
 * Releases a string returned by a `*_to_json` call.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void cp_string_free(char *s);

struct CpRunOptions cp_run_options_default(void);

/**
 * Reads a traffic file and a grid file.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum CpStatus cp_problem_load(const char *traffic_path,
                              const char *grid_path,
                              struct CpProblem **out);

/**
 * Parses the traffic and grid documents from strings.
 *
 * # Safety
 * Arguments must be NUL-terminated strings; `out` must be writable.
 */
enum CpStatus cp_problem_from_json(const char *traffic_json,
                                   const char *grid_json,
                                   struct CpProblem **out);

/**
 * Number of charging stations, 0 for a NULL handle.
 *
 * # Safety
 * `problem` must be NULL or a live handle.
 */
size_t cp_problem_station_count(const struct CpProblem *problem);

/**
 * # Safety
 * `problem` must be NULL or a handle not yet freed.
 */
void cp_problem_free(struct CpProblem *problem);

/**
 * Computes the explicit demand function over the price box. `opts` may be
 * NULL for defaults.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum CpStatus cp_explore(const struct CpProblem *problem,
                         const struct CpRunOptions *opts,
                         struct CpDemandFunction **out);

/**
 * Number of critical regions, 0 for a NULL handle.
 *
 * # Safety
 * `pi` must be NULL or a live handle.
 */
size_t cp_demand_function_region_count(const struct CpDemandFunction *pi);

/**
 * Station demands at `prices`. Both arrays have one entry per station.
 *
 * # Safety
 * `prices` must hold `n_prices` values and `out` must hold `out_len`.
 */
enum CpStatus cp_demand_function_evaluate(const struct CpDemandFunction *pi,
                                          const double *prices,
                                          size_t n_prices,
                                          double *out,
                                          size_t out_len);

/**
 * Index of the critical region containing `prices`.
 *
 * # Safety
 * `prices` must hold `n_prices` values; `region` must be writable.
 */
enum CpStatus cp_demand_function_locate(const struct CpDemandFunction *pi,
                                        const double *prices,
                                        size_t n_prices,
                                        size_t *region);

/**
 * Partition export as JSON. Release with [`cp_string_free`].
 *
 * # Safety
 * `pi` must be a live handle; `out` must be writable.
 */
enum CpStatus cp_demand_function_to_json(const struct CpDemandFunction *pi, char **out);

/**
 * # Safety
 * `pi` must be NULL or a handle not yet freed.
 */
void cp_demand_function_free(struct CpDemandFunction *pi);

/**
 * Optimal station prices given a demand function computed for `problem`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum CpStatus cp_solve_bilevel(const struct CpProblem *problem,
                               const struct CpDemandFunction *pi,
                               const struct CpRunOptions *opts,
                               struct CpResult **out);

/**
 * Number of stations in the result, 0 for a NULL handle.
 *
 * # Safety
 * `res` must be NULL or a live handle.
 */
size_t cp_result_station_count(const struct CpResult *res);

/**
 * # Safety
 * `out` must hold `out_len` values.
 */
enum CpStatus cp_result_station_prices(const struct CpResult *res, double *out, size_t out_len);

/**
 * # Safety
 * `out` must hold `out_len` values.
 */
enum CpStatus cp_result_station_demands(const struct CpResult *res, double *out, size_t out_len);

/**
 * # Safety
 * `out` must hold `out_len` values, one per bus.
 */
enum CpStatus cp_result_bus_prices(const struct CpResult *res, double *out, size_t out_len);

/**
 * # Safety
 * `res` must be a live handle; `region` must be writable.
 */
enum CpStatus cp_result_region_id(const struct CpResult *res, size_t *region);

/**
 * # Safety
 * `res` must be a live handle; `costs` must be writable.
 */
enum CpStatus cp_result_costs(const struct CpResult *res, struct CpCosts *costs);

/**
 * Result document with the same layout as the `solve` command's output.
 * Release with [`cp_string_free`].
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CpStatus cp_result_to_json(const struct CpResult *res, char **out);

/**
 * # Safety
 * `res` must be NULL or a handle not yet freed.
 */
void cp_result_free(struct CpResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHARGEPRICE_H */
