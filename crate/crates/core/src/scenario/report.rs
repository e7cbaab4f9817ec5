use serde::{Deserialize, Serialize};

use crate::bilevel::{BilevelResult, CoupledProblem, KktReport};
use crate::mpqp::PiecewiseAffineDemandFunction;

/// Version of every JSON and CSV file written by the scenario drivers.
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPrice {
    pub id: u32,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationOutcome {
    pub id: String,
    pub bus: u32,
    pub price: f64,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Dual objective of the dispatch problem at the induced demand.
    pub idso: f64,
    /// Least dispatch cost at the induced demand.
    pub dispatch: f64,
    pub itso: f64,
    pub latency: f64,
    pub charging_expense: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktRecord {
    pub idso_stationarity: f64,
    pub idso_primal_feasibility: f64,
    pub idso_dual_feasibility: f64,
    pub idso_complementarity: f64,
    pub itso_stationarity: f64,
    pub itso_primal_feasibility: f64,
    pub itso_dual_feasibility: f64,
    pub itso_complementarity: f64,
    pub coupling: f64,
    pub max: f64,
}

impl From<&KktReport> for KktRecord {
    fn from(k: &KktReport) -> Self {
        KktRecord {
            idso_stationarity: k.idso_stationarity,
            idso_primal_feasibility: k.idso_primal,
            idso_dual_feasibility: k.idso_dual,
            idso_complementarity: k.idso_complementarity,
            itso_stationarity: k.itso_stationarity,
            itso_primal_feasibility: k.itso_primal,
            itso_dual_feasibility: k.itso_dual,
            itso_complementarity: k.itso_complementarity,
            coupling: k.coupling,
            max: k.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub regions: usize,
    pub candidates_optimal: usize,
    pub candidates_infeasible: usize,
    pub candidates_unbounded: usize,
    pub candidates_failed: usize,
    pub candidates_convexified: usize,
    pub facets_probed: usize,
    pub boundary_facets: usize,
    pub closed_facets: usize,
    pub failed_probes: usize,
    pub max_condition: f64,
    /// Largest gap between the demand function and a fresh traffic solve at
    /// the optimal prices.
    pub policy_gap: f64,
    /// Relative gap between the dual objective and the dispatch cost.
    pub duality_gap: f64,
}

/// Result file of `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub kind: String,
    pub buses: Vec<BusPrice>,
    pub stations: Vec<StationOutcome>,
    pub region_id: usize,
    pub costs: CostBreakdown,
    pub kkt: KktRecord,
    pub stats: SolveStats,
}

impl SolveReport {
    pub fn new(
        problem: &CoupledProblem,
        pi: &PiecewiseAffineDemandFunction,
        res: &BilevelResult,
        kkt: &KktReport,
    ) -> Self {
        SolveReport {
            schema_version: OUTPUT_SCHEMA_VERSION,
            kind: "bilevel_result".into(),
            buses: bus_prices(problem, res),
            stations: station_outcomes(problem, &res.station_prices, &res.station_demands),
            region_id: res.region_id,
            costs: CostBreakdown {
                idso: res.idso_cost,
                dispatch: res.dispatch_cost,
                itso: res.itso_cost,
                latency: res.latency_cost,
                charging_expense: res.charging_expense,
                combined: res.combined_cost,
            },
            kkt: kkt.into(),
            stats: SolveStats {
                regions: pi.len(),
                candidates_optimal: res.candidates.optimal,
                candidates_infeasible: res.candidates.infeasible,
                candidates_unbounded: res.candidates.unbounded,
                candidates_failed: res.candidates.failed,
                candidates_convexified: res.candidates.convexified,
                facets_probed: pi.stats.facets_probed,
                boundary_facets: pi.stats.boundary_facets,
                closed_facets: pi.stats.closed_facets,
                failed_probes: pi.stats.failed_probes,
                max_condition: pi.stats.max_condition,
                policy_gap: res.policy_gap,
                duality_gap: res.duality_gap(),
            },
        }
    }
}

pub fn bus_prices(problem: &CoupledProblem, res: &BilevelResult) -> Vec<BusPrice> {
    problem
        .grid
        .buses
        .iter()
        .zip(res.bus_prices.iter())
        .map(|(b, &price)| BusPrice { id: b.id, price })
        .collect()
}

pub fn station_outcomes(
    problem: &CoupledProblem,
    prices: &nalgebra::DVector<f64>,
    demands: &nalgebra::DVector<f64>,
) -> Vec<StationOutcome> {
    problem
        .traffic
        .stations
        .iter()
        .enumerate()
        .map(|(s, st)| StationOutcome {
            id: st.id.clone(),
            bus: st.grid_bus,
            price: prices[s],
            demand: demands[s],
        })
        .collect()
}
