//! Experiment drivers behind the command-line tool and their output files.

mod config;
mod experiments;
mod forecast;
mod output;
mod report;
mod verify;

pub use config::{demand_for_level, price_instance, Priced, RunConfig};
pub use experiments::{
    run_baseline_compare, run_cost_sweep, run_demand_sweep, run_regions, run_solve,
    BaselineComparison, ComparisonRow, CostSweepRow, DemandSweepRow,
};
pub use forecast::{
    run_forecast_mc, ForecastReport, ForecastSample, ForecastSpec, ForecastSummary, Realization,
};
pub use output::{
    comparison_table, cost_sweep_tables, demand_sweep_tables, forecast_table, num, write_json,
    CsvTable,
};
pub use report::{
    BusPrice, CostBreakdown, KktRecord, SolveReport, SolveStats, StationOutcome,
    OUTPUT_SCHEMA_VERSION,
};
pub use verify::{run_verify, Check, CheckStatus, Comparison, VerifyOptions, VerifyReport};
