use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{demand_for_level, price_instance, RunConfig};
use super::report::OUTPUT_SCHEMA_VERSION;
use crate::bilevel::CoupledProblem;
use crate::error::{invalid, Error, Result};
use crate::grid::solve_opf;
use crate::traffic::solve_itso;

/// How a forecast's prices are judged against the true demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Realization {
    /// Prices from the forecast stay fixed; traffic answers at the true
    /// demand and the grid is re-dispatched for that answer.
    FixedPrice,
    /// Compares the dispatch cost planned under the forecast with the one
    /// planned under the true demand.
    FullResolve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSpec {
    /// True demand level of every nonzero O-D pair.
    pub truth: f64,
    /// Half-width of the forecast range in percent, in `[0, 100)`.
    pub deviation_pct: f64,
    pub samples: usize,
    pub realization: Realization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub index: usize,
    pub forecast: f64,
    pub status: String,
    pub error: Option<String>,
    pub realized_cost: Option<f64>,
    pub deviation_pct: Option<f64>,
    /// `max(‖λ_a‖∞, ‖λ_b‖∞) ‖d_a − d_b‖₁ / cost_ref`, in percent: the dispatch
    /// cost is convex in station demand with the prices as subgradients.
    pub bound_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub schema_version: u32,
    pub kind: String,
    pub truth: f64,
    pub deviation_pct: f64,
    pub samples: usize,
    pub seed: u64,
    pub realization: Realization,
    pub reference_cost: f64,
    pub failed: usize,
    pub min_deviation_pct: Option<f64>,
    pub max_deviation_pct: Option<f64>,
    pub mean_deviation_pct: Option<f64>,
    pub max_abs_deviation_pct: Option<f64>,
    pub max_bound_pct: Option<f64>,
    /// Samples whose deviation exceeds their bound by more than round-off.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub summary: ForecastSummary,
    pub samples: Vec<ForecastSample>,
}

/// Dispatch cost, station prices and station demands realized for one level.
#[derive(Debug, Clone)]
struct Outcome {
    cost: f64,
    prices: DVector<f64>,
    demand: DVector<f64>,
}

fn realize(
    problem: &CoupledProblem,
    truth: &DVector<f64>,
    level: f64,
    spec: &ForecastSpec,
    cfg: &RunConfig,
) -> Result<Outcome> {
    let forecast = problem.with_demand(&demand_for_level(problem, level)?)?;
    let priced = price_instance(&forecast, cfg)?;
    let demand = match spec.realization {
        Realization::FixedPrice => {
            let actual = problem.traffic_qp.with_demand(truth)?;
            solve_itso(&actual, &priced.result.station_prices, &cfg.solver())?.station_demand
        }
        Realization::FullResolve => priced.result.station_demands.clone(),
    };
    let dispatch = solve_opf(&problem.grid, &demand, &cfg.solver())?;
    Ok(Outcome {
        cost: dispatch.cost,
        prices: problem.grid.station_prices(&dispatch.lambda),
        demand,
    })
}

/// Integer forecasts drawn uniformly from `truth (1 ± dev)`; each distinct
/// level is priced once and all samples share the truth-level reference.
pub fn run_forecast_mc(
    problem: &CoupledProblem,
    spec: &ForecastSpec,
    cfg: &RunConfig,
) -> Result<ForecastReport> {
    cfg.validate()?;
    if spec.samples == 0 {
        return Err(invalid("forecast study needs at least one sample"));
    }
    if !(0.0..100.0).contains(&spec.deviation_pct) {
        return Err(invalid("forecast deviation must lie in [0, 100)"));
    }
    let truth_m = demand_for_level(problem, spec.truth)?;
    let frac = spec.deviation_pct / 100.0;
    let levels: Vec<f64> = if frac == 0.0 {
        vec![spec.truth; spec.samples]
    } else {
        let lo = (spec.truth * (1.0 - frac)).ceil() as i64;
        let hi = (spec.truth * (1.0 + frac)).floor() as i64;
        if lo > hi {
            return Err(invalid("forecast range contains no integer demand level"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..spec.samples)
            .map(|_| rng.gen_range(lo..=hi) as f64)
            .collect()
    };
    let mut distinct: Vec<f64> = levels.clone();
    distinct.push(spec.truth);
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let outcomes: Vec<(u64, std::result::Result<Outcome, Error>)> = cfg.install(|| {
        distinct
            .par_iter()
            .map(|&m| (m.to_bits(), realize(problem, &truth_m, m, spec, cfg)))
            .collect()
    })?;
    let outcomes: BTreeMap<u64, std::result::Result<Outcome, Error>> =
        outcomes.into_iter().collect();
    let reference = match &outcomes[&spec.truth.to_bits()] {
        Ok(o) => o.clone(),
        Err(e) => {
            return Err(Error::Numerical(format!(
                "the true demand level cannot be priced: {e}"
            )))
        }
    };
    let cost_ref = reference.cost;

    let samples: Vec<ForecastSample> = levels
        .iter()
        .enumerate()
        .map(|(index, &forecast)| match &outcomes[&forecast.to_bits()] {
            Ok(o) => {
                let dev = (o.cost - cost_ref) / cost_ref.abs() * 100.0;
                let price = o.prices.amax().max(reference.prices.amax());
                let shift: f64 = (&o.demand - &reference.demand).abs().sum();
                ForecastSample {
                    index,
                    forecast,
                    status: "ok".into(),
                    error: None,
                    realized_cost: Some(o.cost),
                    deviation_pct: Some(dev),
                    bound_pct: Some(price * shift / cost_ref.abs() * 100.0),
                }
            }
            Err(e) => ForecastSample {
                index,
                forecast,
                status: e.kind().into(),
                error: Some(e.to_string()),
                realized_cost: None,
                deviation_pct: None,
                bound_pct: None,
            },
        })
        .collect();

    let devs: Vec<f64> = samples.iter().filter_map(|s| s.deviation_pct).collect();
    let fold = |f: fn(f64, f64) -> f64, v: &[f64]| v.iter().copied().reduce(f);
    let bound_violations = samples
        .iter()
        .filter(|s| match (s.deviation_pct, s.bound_pct) {
            (Some(d), Some(b)) => d.abs() > b * (1.0 + 1e-6) + 1e-7,
            _ => false,
        })
        .count();
    let bounds: Vec<f64> = samples.iter().filter_map(|s| s.bound_pct).collect();
    let summary = ForecastSummary {
        schema_version: OUTPUT_SCHEMA_VERSION,
        kind: "forecast_mc".into(),
        truth: spec.truth,
        deviation_pct: spec.deviation_pct,
        samples: spec.samples,
        seed: cfg.seed,
        realization: spec.realization,
        reference_cost: cost_ref,
        failed: samples.len() - devs.len(),
        min_deviation_pct: fold(f64::min, &devs),
        max_deviation_pct: fold(f64::max, &devs),
        mean_deviation_pct: if devs.is_empty() {
            None
        } else {
            Some(devs.iter().sum::<f64>() / devs.len() as f64)
        },
        max_abs_deviation_pct: devs.iter().map(|d| d.abs()).reduce(f64::max),
        max_bound_pct: fold(f64::max, &bounds),
        bound_violations,
    };
    Ok(ForecastReport { summary, samples })
}
