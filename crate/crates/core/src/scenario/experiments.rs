use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{demand_for_level, price_instance, RunConfig};
use super::report::{station_outcomes, SolveReport, StationOutcome, OUTPUT_SCHEMA_VERSION};
use crate::bilevel::{
    baseline_lowest_price, solve_joint, verify_kkt_equilibrium, BaselineOptions, CoupledProblem,
    EquilibriumPoint,
};
use crate::error::{invalid, Error, Result};
use crate::mpqp::PartitionFile;

/// Prices the instance and reports the result with its equilibrium check.
pub fn run_solve(problem: &CoupledProblem, cfg: &RunConfig) -> Result<SolveReport> {
    cfg.validate()?;
    cfg.install(|| {
        let priced = price_instance(problem, cfg)?;
        let kkt = verify_kkt_equilibrium(problem, &EquilibriumPoint::from_bilevel(&priced.result))?;
        Ok(SolveReport::new(problem, &priced.pi, &priced.result, &kkt))
    })?
}

/// Explores the price box and returns the partition export.
pub fn run_regions(problem: &CoupledProblem, cfg: &RunConfig) -> Result<PartitionFile> {
    cfg.validate()?;
    cfg.install(|| {
        let domain = cfg.price_box(problem)?;
        let pi = crate::mpqp::explore(
            &problem.traffic_qp,
            &domain,
            &domain.center(),
            &cfg.explore_options(),
        )?;
        Ok(PartitionFile::from_partition(&pi))
    })?
}

/// Status of one sweep row: `ok` or the error kind.
fn status_of<T>(r: &Result<T>) -> (String, Option<String>) {
    match r {
        Ok(_) => ("ok".into(), None),
        Err(e) => (e.kind().into(), Some(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSweepRow {
    pub m_w: f64,
    pub status: String,
    pub error: Option<String>,
    pub idso_cost: Option<f64>,
    pub joint_idso_cost: Option<f64>,
    pub relative_gap: Option<f64>,
    pub combined_cost: Option<f64>,
    pub regions: Option<usize>,
    pub wall_time_ms: f64,
    pub stations: Vec<StationOutcome>,
}

/// One row per demand level: bilevel and joint costs, region count and
/// per-station outcomes. Failed rows keep their error and the sweep goes on.
pub fn run_demand_sweep(
    problem: &CoupledProblem,
    levels: &[f64],
    cfg: &RunConfig,
) -> Result<Vec<DemandSweepRow>> {
    cfg.validate()?;
    if levels.is_empty() {
        return Err(invalid("demand sweep needs at least one level"));
    }
    for &m in levels {
        demand_for_level(problem, m)?;
    }
    cfg.install(|| {
        levels
            .par_iter()
            .map(|&m_w| {
                let start = Instant::now();
                let outcome = (|| {
                    let p = problem.with_demand(&demand_for_level(problem, m_w)?)?;
                    let priced = price_instance(&p, cfg)?;
                    let joint = solve_joint(&p, &cfg.solver())?;
                    Ok::<_, Error>((p, priced, joint))
                })();
                let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
                let (status, error) = status_of(&outcome);
                match outcome {
                    Ok((p, priced, joint)) => {
                        let r = &priced.result;
                        DemandSweepRow {
                            m_w,
                            status,
                            error,
                            idso_cost: Some(r.idso_cost),
                            joint_idso_cost: Some(joint.idso_cost),
                            relative_gap: Some(
                                (r.idso_cost - joint.idso_cost).abs()
                                    / (1.0 + joint.idso_cost.abs()),
                            ),
                            combined_cost: Some(r.combined_cost),
                            regions: Some(priced.pi.len()),
                            wall_time_ms,
                            stations: station_outcomes(&p, &r.station_prices, &r.station_demands),
                        }
                    }
                    Err(_) => DemandSweepRow {
                        m_w,
                        status,
                        error,
                        idso_cost: None,
                        joint_idso_cost: None,
                        relative_gap: None,
                        combined_cost: None,
                        regions: None,
                        wall_time_ms,
                        stations: Vec::new(),
                    },
                }
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSweepRow {
    pub cost: f64,
    pub status: String,
    pub error: Option<String>,
    pub idso_cost: Option<f64>,
    pub combined_cost: Option<f64>,
    pub regions: Option<usize>,
    pub stations: Vec<StationOutcome>,
}

/// One row per marginal cost of `generator`.
pub fn run_cost_sweep(
    problem: &CoupledProblem,
    generator: &str,
    costs: &[f64],
    cfg: &RunConfig,
) -> Result<Vec<CostSweepRow>> {
    cfg.validate()?;
    if costs.is_empty() {
        return Err(invalid("cost sweep needs at least one value"));
    }
    if problem.grid.generator_index(generator).is_none() {
        return Err(invalid(format!("unknown generator {generator}")));
    }
    cfg.install(|| {
        costs
            .par_iter()
            .map(|&c| {
                let outcome = (|| {
                    let p = problem.with_generator_cost(generator, c)?;
                    let priced = price_instance(&p, cfg)?;
                    Ok::<_, Error>((p, priced))
                })();
                let (status, error) = status_of(&outcome);
                match outcome {
                    Ok((p, priced)) => {
                        let r = &priced.result;
                        CostSweepRow {
                            cost: c,
                            status,
                            error,
                            idso_cost: Some(r.idso_cost),
                            combined_cost: Some(r.combined_cost),
                            regions: Some(priced.pi.len()),
                            stations: station_outcomes(&p, &r.station_prices, &r.station_demands),
                        }
                    }
                    Err(_) => CostSweepRow {
                        cost: c,
                        status,
                        error,
                        idso_cost: None,
                        combined_cost: None,
                        regions: None,
                        stations: Vec::new(),
                    },
                }
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub idso_cost: f64,
    pub itso_cost: f64,
    pub latency_cost: f64,
    pub charging_expense: f64,
    pub combined_cost: f64,
}

/// Bilevel pricing against the cheapest-station baseline and the joint
/// problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub schema_version: u32,
    pub kind: String,
    pub rows: Vec<ComparisonRow>,
    pub bilevel_stations: Vec<StationOutcome>,
    pub baseline_stations: Vec<StationOutcome>,
    pub baseline_rounds: usize,
    /// Change of the baseline's combined cost relative to bilevel pricing.
    pub combined_increase_pct: f64,
}

pub fn run_baseline_compare(
    problem: &CoupledProblem,
    cfg: &RunConfig,
) -> Result<BaselineComparison> {
    cfg.validate()?;
    cfg.install(|| {
        let priced = price_instance(problem, cfg)?;
        let r = &priced.result;
        let opts = BaselineOptions {
            solver: cfg.solver(),
            ..BaselineOptions::default()
        };
        let base = baseline_lowest_price(problem, &opts)?;
        let joint = solve_joint(problem, &cfg.solver())?;
        let rows = vec![
            ComparisonRow {
                method: "bilevel".into(),
                idso_cost: r.idso_cost,
                itso_cost: r.itso_cost,
                latency_cost: r.latency_cost,
                charging_expense: r.charging_expense,
                combined_cost: r.combined_cost,
            },
            ComparisonRow {
                method: "baseline".into(),
                idso_cost: base.idso_cost,
                itso_cost: base.itso_cost,
                latency_cost: base.latency_cost,
                charging_expense: base.charging_expense,
                combined_cost: base.combined_cost,
            },
            ComparisonRow {
                method: "joint".into(),
                idso_cost: joint.idso_cost,
                itso_cost: joint.itso_cost,
                latency_cost: joint.latency_cost,
                charging_expense: joint.charging_expense,
                combined_cost: joint.combined_cost,
            },
        ];
        Ok(BaselineComparison {
            schema_version: OUTPUT_SCHEMA_VERSION,
            kind: "baseline_comparison".into(),
            combined_increase_pct: (base.combined_cost - r.combined_cost)
                / r.combined_cost.abs().max(1e-12)
                * 100.0,
            rows,
            bilevel_stations: station_outcomes(problem, &r.station_prices, &r.station_demands),
            baseline_stations: station_outcomes(
                problem,
                &base.station_prices,
                &base.station_demands,
            ),
            baseline_rounds: base.rounds,
        })
    })?
}
