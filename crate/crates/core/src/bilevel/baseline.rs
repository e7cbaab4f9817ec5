use nalgebra::{DMatrix, DVector};

use super::kkt::EquilibriumPoint;
use super::problem::CoupledProblem;
use crate::error::{Error, Result};
use crate::grid::{solve_opf, OpfSolution};
use crate::qp::{solve_qp, QpProblem, SolverOptions};
use crate::traffic::{CompactQp, TrafficSolution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub max_rounds: usize,
    /// Relative change in station demand that ends the iteration.
    pub tol: f64,
    pub solver: SolverOptions,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            max_rounds: 50,
            tol: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

/// Fixed point of marginal-cost pricing with vehicles sent to the cheapest
/// stations first.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub bus_prices: DVector<f64>,
    pub station_prices: DVector<f64>,
    pub station_demands: DVector<f64>,
    pub idso_cost: f64,
    pub latency_cost: f64,
    pub charging_expense: f64,
    pub itso_cost: f64,
    pub combined_cost: f64,
    pub rounds: usize,
    pub dispatch: OpfSolution,
    pub traffic: TrafficSolution,
    pub point: EquilibriumPoint,
}

/// Alternates dispatch at the current station demand with a greedy traffic
/// assignment at the resulting marginal prices: charging flow is packed into
/// stations in ascending price order (ties by index), then the remaining
/// route flows minimize travel time with the charging flows held fixed.
pub fn baseline_lowest_price(
    problem: &CoupledProblem,
    opts: &BaselineOptions,
) -> Result<BaselineResult> {
    let tqp = &problem.traffic_qp;
    let s = problem.num_stations();
    let mut demand = DVector::zeros(s);
    let mut previous = DVector::zeros(s);
    for round in 1..=opts.max_rounds {
        let dispatch = solve_opf(&problem.grid, &demand, &opts.solver)?;
        let prices = problem.grid.station_prices(&dispatch.lambda);
        let charge = greedy_charge_flows(tqp, &prices, &opts.solver)?;
        let traffic = fixed_charge_assignment(tqp, &prices, &charge, &opts.solver)?;
        let next = traffic.station_demand.clone();
        let change = (&next - &demand).amax();
        if change <= opts.tol * (1.0 + demand.amax()) {
            let dispatch = solve_opf(&problem.grid, &next, &opts.solver)?;
            let prices = problem.grid.station_prices(&dispatch.lambda);
            let traffic = tqp.split(&prices, traffic.point);
            let y = problem.dual.from_opf(&dispatch);
            let point = EquilibriumPoint::new(y, &dispatch, &traffic, next.clone());
            let charging_expense = prices.dot(&next);
            return Ok(BaselineResult {
                bus_prices: dispatch.lambda.clone(),
                station_prices: prices,
                station_demands: next,
                idso_cost: dispatch.cost,
                latency_cost: traffic.latency_cost,
                charging_expense,
                itso_cost: traffic.latency_cost + charging_expense,
                combined_cost: dispatch.cost + traffic.latency_cost,
                rounds: round,
                dispatch,
                traffic,
                point,
            });
        }
        previous = std::mem::replace(&mut demand, next);
    }
    Err(Error::NonConvergent {
        last: demand.iter().copied().collect(),
        previous: previous.iter().copied().collect(),
    })
}

/// Lexicographic LP: with the total charging flow fixed at the travel-time
/// optimum, maximize the flow through each station in price order.
fn greedy_charge_flows(
    tqp: &CompactQp,
    prices: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    let s = tqp.num_stations;
    let off = tqp.charge_offset();
    let base = tqp.to_qp(prices)?;
    let free = solve_qp(&base, opts)?;
    let total: f64 = (0..s).map(|k| free.x[off + k]).sum();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]).then(a.cmp(&b)));
    let n = base.num_vars();
    let mut fixed: Vec<(usize, f64)> = Vec::new();
    let mut last = free.x.clone();
    for &k in &order {
        let mut c = DVector::zeros(n);
        c[off + k] = -1.0;
        let mut rows = vec![(
            DVector::from_fn(n, |j, _| {
                if (off..off + s).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            }),
            total,
        )];
        for &(j, v) in &fixed {
            let mut r = DVector::zeros(n);
            r[off + j] = 1.0;
            rows.push((r, v));
        }
        let lp = with_extra_equalities(QpProblem::linear_program(c), &base, &rows);
        let sol = solve_qp(&lp, opts)?;
        fixed.push((k, sol.x[off + k]));
        last = sol.x;
    }
    Ok(DVector::from_fn(s, |k, _| last[off + k]))
}

fn with_extra_equalities(
    mut qp: QpProblem,
    base: &QpProblem,
    rows: &[(DVector<f64>, f64)],
) -> QpProblem {
    let n = base.num_vars();
    let m0 = base.num_eq();
    let mut aeq = DMatrix::zeros(m0 + rows.len(), n);
    aeq.view_mut((0, 0), (m0, n)).copy_from(&base.eq_matrix);
    let mut beq = DVector::zeros(m0 + rows.len());
    beq.rows_mut(0, m0).copy_from(&base.eq_rhs);
    for (i, (r, v)) in rows.iter().enumerate() {
        aeq.row_mut(m0 + i).copy_from(&r.transpose());
        beq[m0 + i] = *v;
    }
    qp.eq_matrix = aeq;
    qp.eq_rhs = beq;
    qp.ineq_matrix = base.ineq_matrix.clone();
    qp.ineq_rhs = base.ineq_rhs.clone();
    qp
}

/// Travel-time optimal assignment with each station's charging flow fixed.
fn fixed_charge_assignment(
    tqp: &CompactQp,
    prices: &DVector<f64>,
    charge: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<TrafficSolution> {
    let base = tqp.to_qp(prices)?;
    let n = base.num_vars();
    let off = tqp.charge_offset();
    let rows: Vec<(DVector<f64>, f64)> = (0..tqp.num_stations)
        .map(|k| {
            let mut r = DVector::zeros(n);
            r[off + k] = 1.0;
            (r, charge[k])
        })
        .collect();
    let qp = with_extra_equalities(
        QpProblem::new(base.hessian.clone(), base.linear.clone()),
        &base,
        &rows,
    );
    let mut point = solve_qp(&qp, opts)?;
    let m = base.num_eq();
    point.eq_duals = point.eq_duals.rows(0, m).into_owned();
    Ok(tqp.split(prices, point))
}
