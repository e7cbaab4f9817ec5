#include <stdio.h>
#include <string.h>

#include "chargeprice.h"

int main(int argc, char **argv) {
    if (argc != 3) {
        return 64;
    }
    CpProblem *problem = NULL;
    if (cp_problem_load(argv[1], argv[2], &problem) != CP_STATUS_OK) {
        fprintf(stderr, "%s\n", cp_last_error_message());
        return 1;
    }
    CpRunOptions opts = cp_run_options_default();
    opts.workers = 1;
    CpDemandFunction *pi = NULL;
    if (cp_explore(problem, &opts, &pi) != CP_STATUS_OK) {
        fprintf(stderr, "%s\n", cp_last_error_message());
        return 2;
    }
    CpResult *res = NULL;
    if (cp_solve_bilevel(problem, pi, &opts, &res) != CP_STATUS_OK) {
        fprintf(stderr, "%s\n", cp_last_error_message());
        return 3;
    }
    size_t n = cp_result_station_count(res);
    double prices[16];
    double demands[16];
    if (n > 16 || cp_result_station_prices(res, prices, n) != CP_STATUS_OK ||
        cp_result_station_demands(res, demands, n) != CP_STATUS_OK) {
        return 4;
    }
    CpCosts costs;
    cp_result_costs(res, &costs);
    printf("regions %zu\n", cp_demand_function_region_count(pi));
    for (size_t k = 0; k < n; k++) {
        printf("station %zu price %.6f demand %.6f\n", k, prices[k], demands[k]);
    }
    printf("combined %.6f\n", costs.combined);

    double small[1];
    if (n > 1 && cp_result_station_prices(res, small, 1) != CP_STATUS_BUFFER_TOO_SMALL) {
        return 5;
    }
    cp_result_free(res);
    cp_demand_function_free(pi);
    cp_problem_free(problem);
    return 0;
}
