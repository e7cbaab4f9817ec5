use nalgebra::DVector;

use super::joint::JointSolution;
use super::problem::CoupledProblem;
use super::region_qp::BilevelResult;
use crate::error::{invalid, Result};
use crate::grid::{assemble_opf, OpfLayout, OpfSolution};
use crate::traffic::TrafficSolution;

/// Candidate equilibrium: dispatch primal, dispatch dual `y`, traffic
/// primal-dual and the station demand the grid was asked to serve.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub dual: DVector<f64>,
    pub g: DVector<f64>,
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    pub xi: DVector<f64>,
    pub f: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
    pub delta: DVector<f64>,
    pub station_demand: DVector<f64>,
}

impl EquilibriumPoint {
    pub fn new(
        dual: DVector<f64>,
        dispatch: &OpfSolution,
        traffic: &TrafficSolution,
        station_demand: DVector<f64>,
    ) -> Self {
        EquilibriumPoint {
            dual,
            g: dispatch.g.clone(),
            v: dispatch.v.clone(),
            theta: dispatch.theta.clone(),
            xi: traffic.xi.clone(),
            f: traffic.f.clone(),
            psi: traffic.psi.clone(),
            phi: traffic.phi.clone(),
            delta: traffic.delta.clone(),
            station_demand,
        }
    }

    pub fn from_bilevel(res: &BilevelResult) -> Self {
        Self::new(
            res.dual.clone(),
            &res.dispatch,
            &res.traffic,
            res.station_demands.clone(),
        )
    }

    pub fn from_joint(problem: &CoupledProblem, sol: &JointSolution) -> Self {
        let y = problem.dual.from_opf(&sol.dispatch);
        Self::new(y, &sol.dispatch, &sol.traffic, sol.station_demands.clone())
    }

    /// Copy with every bus price multiplied by `factor`.
    pub fn with_scaled_prices(&self, problem: &CoupledProblem, factor: f64) -> Self {
        let lay = problem.dual.layout;
        let mut out = self.clone();
        for i in 0..lay.buses {
            out.dual[lay.lambda(i)] *= factor;
        }
        out
    }
}

/// Largest scaled residual per condition family. Prices are scaled by
/// `max(max|λ|, 1e-6 (1 + max c))`, power by the total load (at least 1),
/// traffic gradients by `max(1, ‖q(λ_c)‖∞)` and flows by `max(1, ‖m‖∞)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktReport {
    pub idso_stationarity: f64,
    pub idso_primal: f64,
    pub idso_dual: f64,
    pub idso_complementarity: f64,
    pub itso_stationarity: f64,
    pub itso_primal: f64,
    pub itso_dual: f64,
    pub itso_complementarity: f64,
    pub coupling: f64,
}

impl KktReport {
    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("idso_stationarity", self.idso_stationarity),
            ("idso_primal_feasibility", self.idso_primal),
            ("idso_dual_feasibility", self.idso_dual),
            ("idso_complementarity", self.idso_complementarity),
            ("itso_stationarity", self.itso_stationarity),
            ("itso_primal_feasibility", self.itso_primal),
            ("itso_dual_feasibility", self.itso_dual),
            ("itso_complementarity", self.itso_complementarity),
            ("coupling", self.coupling),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, (_, v)| m.max(*v))
    }
}

fn amax(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Checks both operators' optimality conditions and the coupling between
/// them at a candidate point.
pub fn verify_kkt_equilibrium(
    problem: &CoupledProblem,
    point: &EquilibriumPoint,
) -> Result<KktReport> {
    let grid = &problem.grid;
    let dual = &problem.dual;
    let tqp = &problem.traffic_qp;
    let n = grid.num_buses();
    let nl = grid.num_lines();
    let s = problem.num_stations();
    if point.dual.len() != dual.num_vars()
        || point.g.len() != n
        || point.v.len() != n
        || point.theta.len() != n
        || point.xi.len() != tqp.num_arcs()
        || point.f.len() != tqp.num_routes()
        || point.psi.len() != tqp.num_pairs()
        || point.delta.len() != tqp.num_arcs()
        || point.phi.len() != 2 * tqp.num_arcs()
        || point.station_demand.len() != s
    {
        return Err(invalid(
            "equilibrium point dimensions do not match the instance",
        ));
    }
    let lay = dual.layout;
    let y = &point.dual;
    let lambda = dual.bus_prices(y);
    let price_scale = amax(&lambda).max(1e-6 * (1.0 + grid.max_cost()));
    let total_load: f64 = grid.buses.iter().map(|b| b.load.abs()).sum::<f64>()
        + point.station_demand.iter().map(|d| d.abs()).sum::<f64>();
    let power_scale = total_load.max(1.0);

    // Dispatch LP at the served demand with multipliers rebuilt from y.
    let olay = OpfLayout {
        buses: n,
        lines: nl,
    };
    let opf = assemble_opf(grid, &point.station_demand)?;
    let mut x = DVector::zeros(olay.num_vars());
    for i in 0..n {
        x[olay.g(i)] = point.g[i];
        x[olay.v(i)] = point.v[i];
        x[olay.theta(i)] = point.theta[i];
    }
    let mut z = DVector::zeros(olay.num_ineq());
    for i in 0..n {
        z[olay.row_g_hi(i)] = y[lay.tau_hi(i)];
        z[olay.row_g_lo(i)] = dual.costs[i] - y[lay.lambda(i)] + y[lay.tau_hi(i)];
        z[olay.row_v_hi(i)] = y[lay.mu_hi(i)];
        z[olay.row_v_lo(i)] = y[lay.mu_lo(i)];
    }
    for l in 0..nl {
        let (fwd, bwd) = (2 * l, 2 * l + 1);
        z[olay.row_flow_hi(l)] = y[lay.eta_hi(fwd)] + y[lay.eta_lo(bwd)];
        z[olay.row_flow_lo(l)] = y[lay.eta_lo(fwd)] + y[lay.eta_hi(bwd)];
    }
    let mut ye = DVector::zeros(n + 1);
    ye.rows_mut(0, n).copy_from(&lambda);
    let grad0 = &opf.linear + opf.eq_matrix.transpose() * &ye + opf.ineq_matrix.transpose() * &z;
    // The reference-angle multiplier is free; it absorbs its own column.
    ye[n] = -grad0[olay.theta(grid.reference_bus())];
    let grad = &opf.linear + opf.eq_matrix.transpose() * &ye + opf.ineq_matrix.transpose() * &z;
    let mut idso_stationarity = 0.0_f64;
    for col in 0..olay.num_vars() {
        let weight = 1.0
            + opf
                .eq_matrix
                .column(col)
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
            + opf
                .ineq_matrix
                .column(col)
                .iter()
                .map(|v| v.abs())
                .sum::<f64>();
        idso_stationarity = idso_stationarity.max(grad[col].abs() / (price_scale * weight));
    }
    let row_scale = |row: usize| {
        let voltage = (0..n).any(|i| row == olay.row_v_hi(i) || row == olay.row_v_lo(i));
        if voltage {
            1.0_f64.max(opf.ineq_rhs[row].abs())
        } else {
            power_scale
        }
    };
    let eq_res = &opf.eq_matrix * &x - &opf.eq_rhs;
    let mut idso_primal = 0.0_f64;
    for i in 0..n {
        idso_primal = idso_primal.max(eq_res[i].abs() / power_scale);
    }
    idso_primal = idso_primal.max(eq_res[n].abs());
    let slack = &opf.ineq_rhs - &opf.ineq_matrix * &x;
    let mut idso_dual = 0.0_f64;
    let mut idso_comp = 0.0_f64;
    for k in 0..olay.num_ineq() {
        idso_dual = idso_dual.max((-z[k]).max(0.0) / price_scale);
        if opf.ineq_rhs[k].is_finite() {
            let sc = row_scale(k);
            idso_primal = idso_primal.max((-slack[k]).max(0.0) / sc);
            idso_comp = idso_comp.max((z[k] * slack[k]).abs() / (price_scale * sc));
        } else {
            idso_dual = idso_dual.max(z[k].abs() / price_scale);
        }
    }
    let dual_rows = &dual.qp.ineq_matrix * y - &dual.qp.ineq_rhs;
    idso_dual = dual_rows
        .iter()
        .fold(idso_dual, |m, v| m.max(v.max(0.0) / price_scale));

    // Traffic operator at the station prices read from y.
    let prices = dual.station_prices(y);
    let q = tqp.linear_term(&prices)?;
    let grad_scale = amax(&q).max(1.0);
    let flow_scale = amax(&tqp.demand).max(1.0);
    let na = tqp.num_arcs();
    let arc_grad = point.xi.component_mul(&tqp.q_diag) + &q + tqp.g_matrix.transpose() * &point.phi
        - &point.delta;
    let route_grad = &point.f * tqp.route_reg
        + tqp.e_matrix.transpose() * &point.psi
        + tqp.link.transpose() * &point.delta;
    let itso_stationarity = amax(&arc_grad).max(amax(&route_grad)) / grad_scale;
    let demand_res = &tqp.e_matrix * &point.f - &tqp.demand;
    let link_res = &tqp.link * &point.f - &point.xi;
    let cap_slack = &tqp.h - &tqp.g_matrix * &point.xi;
    let mut itso_primal = amax(&demand_res).max(amax(&link_res)) / flow_scale;
    let mut itso_dual = 0.0_f64;
    let mut itso_comp = 0.0_f64;
    for k in 0..2 * na {
        itso_dual = itso_dual.max((-point.phi[k]).max(0.0) / grad_scale);
        if tqp.h[k].is_finite() {
            itso_primal = itso_primal.max((-cap_slack[k]).max(0.0) / flow_scale);
            itso_comp =
                itso_comp.max((point.phi[k] * cap_slack[k]).abs() / (grad_scale * flow_scale));
        } else {
            itso_comp = itso_comp.max(point.phi[k].abs() / grad_scale);
        }
    }
    let coupling = amax(&(tqp.station_demand(&point.xi) - &point.station_demand)) / power_scale;

    Ok(KktReport {
        idso_stationarity,
        idso_primal,
        idso_dual,
        idso_complementarity: idso_comp,
        itso_stationarity,
        itso_primal,
        itso_dual,
        itso_complementarity: itso_comp,
        coupling,
    })
}
