use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::problem::CoupledProblem;
use crate::error::{Error, Result};
use crate::grid::{solve_opf, DualProblem, OpfSolution};
use crate::mpqp::{CriticalRegion, PiecewiseAffineDemandFunction};
use crate::qp::{solve_qp, QpProblem, SolverOptions};
use crate::traffic::{solve_itso, TrafficSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Failed,
}

/// Best upper-level point restricted to one critical region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCandidate {
    pub region_id: usize,
    pub status: CandidateStatus,
    /// Dual vector `y`; empty unless optimal.
    pub y: DVector<f64>,
    /// Minimized objective `-(Φ(y) + λ_c'π(λ_c))`; `+inf` unless optimal.
    pub objective: f64,
    /// True when the demand Hessian needed more than round-off repair to be PSD.
    pub convexified: bool,
}

/// Upper-level QP over one region: the dual of the dispatch problem with the
/// region's affine demand `d = Dλ_c + d⁰` substituted into `λ_c'd`, and the
/// region's rows imposed on `λ_c`. Returns the QP and whether the demand
/// Hessian had to be projected onto the PSD cone beyond round-off.
pub fn region_qp(dual: &DualProblem, region: &CriticalRegion) -> (QpProblem, bool) {
    let s = dual.station_selector();
    let d = &region.policy.demand_jacobian;
    let d0 = region.policy.demand_offset();
    let h_c = -(d + d.transpose());
    let (h_c, convexified) = project_psd(&h_c);
    let mut qp = dual.qp.clone();
    qp.hessian += s.transpose() * &h_c * &s;
    qp.linear -= s.transpose() * &d0;
    let rs = &region.halfspaces.a * &s;
    let m0 = qp.num_ineq();
    let extra = rs.nrows();
    let mut ain = DMatrix::zeros(m0 + extra, qp.num_vars());
    ain.view_mut((0, 0), (m0, qp.num_vars()))
        .copy_from(&qp.ineq_matrix);
    ain.view_mut((m0, 0), (extra, qp.num_vars())).copy_from(&rs);
    let mut bin = DVector::zeros(m0 + extra);
    bin.rows_mut(0, m0).copy_from(&qp.ineq_rhs);
    bin.rows_mut(m0, extra).copy_from(&region.halfspaces.b);
    qp.ineq_matrix = ain;
    qp.ineq_rhs = bin;
    (qp, convexified)
}

fn project_psd(h: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = (h + h.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    let eig = sym.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let psd = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let psd = (&psd + psd.transpose()) * 0.5;
    (psd, min < -1e-9 * scale)
}

/// Solves the upper-level QP of one region.
pub fn solve_region(
    dual: &DualProblem,
    region: &CriticalRegion,
    opts: &SolverOptions,
) -> RegionCandidate {
    let (qp, convexified) = region_qp(dual, region);
    let (status, y, objective) = match solve_qp(&qp, opts) {
        Ok(pt) => (CandidateStatus::Optimal, pt.x, pt.objective),
        Err(Error::Infeasible(_)) => (
            CandidateStatus::Infeasible,
            DVector::zeros(0),
            f64::INFINITY,
        ),
        Err(Error::Unbounded(_)) => (CandidateStatus::Unbounded, DVector::zeros(0), f64::INFINITY),
        Err(e) => {
            log::warn!("region {} QP failed: {e}", region.id);
            (CandidateStatus::Failed, DVector::zeros(0), f64::INFINITY)
        }
    };
    RegionCandidate {
        region_id: region.id,
        status,
        y,
        objective,
        convexified,
    }
}

/// Counts of region QP outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CandidateSummary {
    pub optimal: usize,
    pub infeasible: usize,
    pub unbounded: usize,
    pub failed: usize,
    pub convexified: usize,
}

/// Optimal prices with the resulting dispatch and traffic assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelResult {
    pub bus_prices: DVector<f64>,
    pub station_prices: DVector<f64>,
    /// `π(λ*)`.
    pub station_demands: DVector<f64>,
    pub region_id: usize,
    /// Dual objective at the optimum, `Φ(y*) + λ*'d*`.
    pub idso_cost: f64,
    /// Least dispatch cost at `d*`.
    pub dispatch_cost: f64,
    pub itso_cost: f64,
    pub latency_cost: f64,
    pub charging_expense: f64,
    /// IDSO cost plus ITSO cost minus the charging payments between them.
    pub combined_cost: f64,
    pub dual: DVector<f64>,
    pub dispatch: OpfSolution,
    pub traffic: TrafficSolution,
    pub candidates: CandidateSummary,
    /// `‖π(λ*) - J ξ*‖∞` against a fresh lower-level solve.
    pub policy_gap: f64,
}

impl BilevelResult {
    /// Relative gap between the dual objective and the least dispatch cost.
    pub fn duality_gap(&self) -> f64 {
        (self.idso_cost - self.dispatch_cost).abs() / (1.0 + self.dispatch_cost.abs())
    }
}

/// Relative tolerance for treating two region objectives as equal.
pub const TIE_TOL: f64 = 1e-9;

/// Solves the pricing problem by one QP per critical region and keeps the
/// best; near-ties go to the lowest region id.
pub fn solve_bilevel(
    problem: &CoupledProblem,
    pi: &PiecewiseAffineDemandFunction,
    opts: &SolverOptions,
) -> Result<BilevelResult> {
    let candidates: Vec<RegionCandidate> = pi
        .regions
        .par_iter()
        .map(|r| solve_region(&problem.dual, r, opts))
        .collect();
    let mut summary = CandidateSummary::default();
    let mut best: Option<&RegionCandidate> = None;
    for c in &candidates {
        match c.status {
            CandidateStatus::Optimal => summary.optimal += 1,
            CandidateStatus::Infeasible => summary.infeasible += 1,
            CandidateStatus::Unbounded => summary.unbounded += 1,
            CandidateStatus::Failed => summary.failed += 1,
        }
        if c.convexified {
            summary.convexified += 1;
        }
        if c.status != CandidateStatus::Optimal {
            continue;
        }
        best = match best {
            Some(b) if c.objective >= b.objective - TIE_TOL * (1.0 + b.objective.abs()) => Some(b),
            _ => Some(c),
        };
    }
    let Some(win) = best else {
        return Err(if summary.unbounded > 0 {
            Error::Unbounded(
                "upper level is unbounded in every region with a finite optimum".into(),
            )
        } else if summary.failed > 0 {
            Error::Numerical("no region QP could be solved".into())
        } else {
            Error::Infeasible("no critical region admits a feasible upper-level point".into())
        });
    };
    if summary.unbounded > 0 {
        log::warn!(
            "{} region QPs are unbounded; the dispatch problem may be infeasible for some demands",
            summary.unbounded
        );
    }
    finish(problem, pi, win, summary, opts)
}

fn finish(
    problem: &CoupledProblem,
    pi: &PiecewiseAffineDemandFunction,
    win: &RegionCandidate,
    candidates: CandidateSummary,
    opts: &SolverOptions,
) -> Result<BilevelResult> {
    let dual = &problem.dual;
    let y = dual.tighten(&win.y);
    let bus_prices = dual.bus_prices(&y);
    let station_prices = dual.station_prices(&y);
    let region = &pi.regions[win.region_id];
    let station_demands = region.demand_at(&station_prices);
    let dispatch = solve_opf(&problem.grid, &station_demands, opts)?;
    let traffic = solve_itso(&problem.traffic_qp, &station_prices, opts)?;
    let policy_gap = (&traffic.station_demand - &station_demands).amax();
    let idso_cost = dual.objective_value(&y, &station_demands);
    let latency_cost = traffic.latency_cost;
    let charging_expense = station_prices.dot(&station_demands);
    let itso_cost = latency_cost + charging_expense;
    Ok(BilevelResult {
        bus_prices,
        station_prices,
        station_demands,
        region_id: win.region_id,
        idso_cost,
        dispatch_cost: dispatch.cost,
        itso_cost,
        latency_cost,
        charging_expense,
        combined_cost: idso_cost + itso_cost - charging_expense,
        dual: y,
        dispatch,
        traffic,
        candidates,
        policy_gap,
    })
}
