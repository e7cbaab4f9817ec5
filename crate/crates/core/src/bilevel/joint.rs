use nalgebra::{DMatrix, DVector};

use super::problem::CoupledProblem;
use crate::error::{Error, Result};
use crate::grid::{assemble_opf, OpfLayout, OpfSolution};
use crate::qp::{solve_qp, KktResiduals, PrimalDualPoint, QpProblem, SolverOptions};
use crate::traffic::TrafficSolution;

/// Single QP over dispatch and traffic that minimizes generation cost plus
/// travel-time cost, with station demand fed straight into the power balance.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub bus_prices: DVector<f64>,
    pub station_prices: DVector<f64>,
    pub station_demands: DVector<f64>,
    /// Generation cost `c'g`.
    pub idso_cost: f64,
    pub latency_cost: f64,
    pub charging_expense: f64,
    pub itso_cost: f64,
    pub combined_cost: f64,
    pub dispatch: OpfSolution,
    pub traffic: TrafficSolution,
    pub point: PrimalDualPoint,
}

/// Joint problem. Variables are `[g; v; θ; ξ; f]`; rows are the dispatch
/// rows followed by the traffic rows.
pub fn joint_qp(problem: &CoupledProblem) -> Result<QpProblem> {
    let s = problem.num_stations();
    let opf = assemble_opf(&problem.grid, &DVector::zeros(s))?;
    let tqp = &problem.traffic_qp;
    let traffic = tqp.to_qp(&DVector::zeros(s))?;
    let (no, nt) = (opf.num_vars(), traffic.num_vars());
    let n = no + nt;
    let mut hess = DMatrix::zeros(n, n);
    hess.view_mut((no, no), (nt, nt))
        .copy_from(&traffic.hessian);
    let mut c = DVector::zeros(n);
    c.rows_mut(0, no).copy_from(&opf.linear);
    c.rows_mut(no, nt).copy_from(&traffic.linear);

    let (eo, et) = (opf.num_eq(), traffic.num_eq());
    let mut aeq = DMatrix::zeros(eo + et, n);
    aeq.view_mut((0, 0), (eo, no)).copy_from(&opf.eq_matrix);
    aeq.view_mut((eo, no), (et, nt))
        .copy_from(&traffic.eq_matrix);
    let off = tqp.charge_offset();
    for (k, &b) in problem.grid.station_buses.iter().enumerate() {
        aeq[(b, no + off + k)] += tqp.price_injection[k];
    }
    let mut beq = DVector::zeros(eo + et);
    beq.rows_mut(0, eo).copy_from(&opf.eq_rhs);
    beq.rows_mut(eo, et).copy_from(&traffic.eq_rhs);

    let (io, it) = (opf.num_ineq(), traffic.num_ineq());
    let mut ain = DMatrix::zeros(io + it, n);
    ain.view_mut((0, 0), (io, no)).copy_from(&opf.ineq_matrix);
    ain.view_mut((io, no), (it, nt))
        .copy_from(&traffic.ineq_matrix);
    let mut bin = DVector::zeros(io + it);
    bin.rows_mut(0, io).copy_from(&opf.ineq_rhs);
    bin.rows_mut(io, it).copy_from(&traffic.ineq_rhs);

    Ok(QpProblem::new(hess, c)
        .with_equalities(aeq, beq)
        .with_inequalities(ain, bin))
}

/// Solves the joint problem and splits the result.
pub fn solve_joint(problem: &CoupledProblem, opts: &SolverOptions) -> Result<JointSolution> {
    let qp = joint_qp(problem)?;
    let point = solve_qp(&qp, opts).map_err(|e| match e {
        Error::Infeasible(_) => {
            Error::Infeasible("no dispatch can serve the traffic's charging demand".into())
        }
        other => other,
    })?;
    let grid = &problem.grid;
    let tqp = &problem.traffic_qp;
    let lay = OpfLayout {
        buses: grid.num_buses(),
        lines: grid.num_lines(),
    };
    let (no, eo, io) = (lay.num_vars(), grid.num_buses() + 1, lay.num_ineq());
    let nt = qp.num_vars() - no;

    let bus_prices = point.eq_duals.rows(0, grid.num_buses()).into_owned();
    let station_prices = grid.station_prices(&bus_prices);

    let xt = point.x.rows(no, nt).into_owned();
    let tq = tqp.to_qp(&station_prices)?;
    let t_eq = point.eq_duals.rows(eo, tq.num_eq()).into_owned();
    let t_in = point.ineq_duals.rows(io, tq.num_ineq()).into_owned();
    let t_point = sub_point(&tq, xt, t_eq, t_in);
    let traffic = tqp.split(&station_prices, t_point);

    let opf = assemble_opf(grid, &traffic.station_demand)?;
    let o_point = sub_point(
        &opf,
        point.x.rows(0, no).into_owned(),
        point.eq_duals.rows(0, eo).into_owned(),
        point.ineq_duals.rows(0, io).into_owned(),
    );
    let dispatch = OpfSolution::from_point(grid, o_point);

    let idso_cost = dispatch.cost;
    let latency_cost = traffic.latency_cost;
    let charging_expense = traffic.charging_expense;
    Ok(JointSolution {
        bus_prices,
        station_prices,
        station_demands: traffic.station_demand.clone(),
        idso_cost,
        latency_cost,
        charging_expense,
        itso_cost: latency_cost + charging_expense,
        combined_cost: idso_cost + latency_cost,
        dispatch,
        traffic,
        point,
    })
}

fn sub_point(qp: &QpProblem, x: DVector<f64>, y: DVector<f64>, z: DVector<f64>) -> PrimalDualPoint {
    let residuals = KktResiduals::evaluate(qp, &x, &y, &z);
    let slack = &qp.ineq_rhs - &qp.ineq_matrix * &x;
    let active_set = (0..qp.num_ineq())
        .filter(|&k| slack[k].abs() <= 1e-7 * (1.0 + qp.ineq_rhs[k].abs()))
        .collect();
    PrimalDualPoint {
        objective: qp.objective(&x),
        x,
        eq_duals: y,
        ineq_duals: z,
        active_set,
        residuals,
        polished: false,
    }
}
