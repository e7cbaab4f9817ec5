use nalgebra::{DMatrix, DVector};

use super::case::DistributionCase;
use crate::error::{Error, Result};
use crate::qp::{solve_qp, PrimalDualPoint, QpProblem, SolverOptions};

/// Column and row layout of the linearized optimal power flow LP.
///
/// Variables are `[g; v; θ]`, one entry per bus each. Equality rows are the
/// nodal balances followed by `θ_ref = 0`. Inequality rows are, in order,
/// `g ≤ ḡ`, `-g ≤ 0`, `v ≤ v̄`, `-v ≤ -v̲`, `F_l ≤ f̄_l`, `-F_l ≤ f̄_l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpfLayout {
    pub buses: usize,
    pub lines: usize,
}

impl OpfLayout {
    pub fn g(&self, i: usize) -> usize {
        i
    }
    pub fn v(&self, i: usize) -> usize {
        self.buses + i
    }
    pub fn theta(&self, i: usize) -> usize {
        2 * self.buses + i
    }
    pub fn num_vars(&self) -> usize {
        3 * self.buses
    }
    pub fn row_g_hi(&self, i: usize) -> usize {
        i
    }
    pub fn row_g_lo(&self, i: usize) -> usize {
        self.buses + i
    }
    pub fn row_v_hi(&self, i: usize) -> usize {
        2 * self.buses + i
    }
    pub fn row_v_lo(&self, i: usize) -> usize {
        3 * self.buses + i
    }
    pub fn row_flow_hi(&self, l: usize) -> usize {
        4 * self.buses + l
    }
    pub fn row_flow_lo(&self, l: usize) -> usize {
        4 * self.buses + self.lines + l
    }
    pub fn num_ineq(&self) -> usize {
        4 * self.buses + 2 * self.lines
    }
}

/// Optimal dispatch with its multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    pub g: DVector<f64>,
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    /// Locational marginal price of every bus.
    pub lambda: DVector<f64>,
    pub tau_hi: DVector<f64>,
    pub tau_lo: DVector<f64>,
    pub mu_hi: DVector<f64>,
    pub mu_lo: DVector<f64>,
    /// Multipliers of `F_l ≤ f̄_l` per line, in the line's stored direction.
    pub eta_hi: DVector<f64>,
    /// Multipliers of `-F_l ≤ f̄_l` per line.
    pub eta_lo: DVector<f64>,
    pub cost: f64,
    pub point: PrimalDualPoint,
}

impl OpfSolution {
    /// Branch flows `F_l` in each line's stored direction.
    pub fn line_flows(&self, case: &DistributionCase) -> DVector<f64> {
        let k = case.flow_coefficients();
        DVector::from_iterator(
            case.num_lines(),
            case.lines.iter().zip(&k).map(|(l, c)| {
                c.k1 * (self.v[l.from] - self.v[l.to])
                    + c.k2 * (self.theta[l.from] - self.theta[l.to])
            }),
        )
    }
}

/// Linear program of the dispatch problem at the given station demands.
pub fn assemble_opf(case: &DistributionCase, station_demand: &DVector<f64>) -> Result<QpProblem> {
    let n = case.num_buses();
    let nl = case.num_lines();
    let lay = OpfLayout {
        buses: n,
        lines: nl,
    };
    let d = case.bus_demand(station_demand)?;
    let k = case.flow_coefficients();
    let cost = case.cost_per_bus();
    let cap = case.capacity_per_bus();

    let mut c = DVector::zeros(lay.num_vars());
    for i in 0..n {
        c[lay.g(i)] = cost[i];
    }
    let mut aeq = DMatrix::zeros(n + 1, lay.num_vars());
    let mut beq = DVector::zeros(n + 1);
    for (l, line) in case.lines.iter().enumerate() {
        let (i, j) = (line.from, line.to);
        for (row, sign) in [(i, 1.0), (j, -1.0)] {
            aeq[(row, lay.v(i))] += sign * k[l].k1;
            aeq[(row, lay.v(j))] -= sign * k[l].k1;
            aeq[(row, lay.theta(i))] += sign * k[l].k2;
            aeq[(row, lay.theta(j))] -= sign * k[l].k2;
        }
    }
    for i in 0..n {
        aeq[(i, lay.g(i))] = -1.0;
        beq[i] = -(case.buses[i].load + d[i]);
    }
    aeq[(n, lay.theta(case.reference_bus()))] = 1.0;

    let mut ain = DMatrix::zeros(lay.num_ineq(), lay.num_vars());
    let mut bin = DVector::zeros(lay.num_ineq());
    for i in 0..n {
        ain[(lay.row_g_hi(i), lay.g(i))] = 1.0;
        bin[lay.row_g_hi(i)] = cap[i];
        ain[(lay.row_g_lo(i), lay.g(i))] = -1.0;
        ain[(lay.row_v_hi(i), lay.v(i))] = 1.0;
        bin[lay.row_v_hi(i)] = case.buses[i].v_max;
        ain[(lay.row_v_lo(i), lay.v(i))] = -1.0;
        bin[lay.row_v_lo(i)] = -case.buses[i].v_min;
    }
    for (l, line) in case.lines.iter().enumerate() {
        let (i, j) = (line.from, line.to);
        for (row, sign) in [(lay.row_flow_hi(l), 1.0), (lay.row_flow_lo(l), -1.0)] {
            ain[(row, lay.v(i))] = sign * k[l].k1;
            ain[(row, lay.v(j))] = -sign * k[l].k1;
            ain[(row, lay.theta(i))] = sign * k[l].k2;
            ain[(row, lay.theta(j))] = -sign * k[l].k2;
            bin[row] = line.flow_limit;
        }
    }
    Ok(QpProblem::linear_program(c)
        .with_equalities(aeq, beq)
        .with_inequalities(ain, bin))
}

/// Least-cost dispatch at fixed station demands.
pub fn solve_opf(
    case: &DistributionCase,
    station_demand: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<OpfSolution> {
    let lp = assemble_opf(case, station_demand)?;
    let point = solve_qp(&lp, opts).map_err(|e| match e {
        Error::Infeasible(_) => Error::Infeasible(
            "power flow cannot serve the load within generator, voltage and line limits".into(),
        ),
        other => other,
    })?;
    Ok(OpfSolution::from_point(case, point))
}

/// Flags dispatch points whose marginal prices are not unique: the prices
/// move by more than `1e-3` when every load is shifted by `±1e-7` kW.
pub fn lmp_degenerate(
    case: &DistributionCase,
    station_demand: &DVector<f64>,
    sol: &OpfSolution,
    opts: &SolverOptions,
) -> Result<bool> {
    for shift in [1e-7, -1e-7] {
        let mut shifted = case.clone();
        for b in shifted.buses.iter_mut() {
            b.load += shift;
        }
        let other = solve_opf(&shifted, station_demand, opts)?;
        if (&other.lambda - &sol.lambda).amax() > 1e-3 {
            return Ok(true);
        }
    }
    Ok(false)
}

impl OpfSolution {
    /// Splits a solved dispatch LP (or a problem that starts with its rows
    /// and variables) into named parts.
    pub fn from_point(case: &DistributionCase, point: PrimalDualPoint) -> OpfSolution {
        let n = case.num_buses();
        let nl = case.num_lines();
        let lay = OpfLayout {
            buses: n,
            lines: nl,
        };
        let x = &point.x;
        let z = &point.ineq_duals;
        let pick = |f: &dyn Fn(usize) -> usize, len: usize, v: &DVector<f64>| {
            DVector::from_iterator(len, (0..len).map(|i| v[f(i)]))
        };
        OpfSolution {
            g: pick(&|i| lay.g(i), n, x),
            v: pick(&|i| lay.v(i), n, x),
            theta: pick(&|i| lay.theta(i), n, x),
            lambda: point.eq_duals.rows(0, n).into_owned(),
            tau_hi: pick(&|i| lay.row_g_hi(i), n, z),
            tau_lo: pick(&|i| lay.row_g_lo(i), n, z),
            mu_hi: pick(&|i| lay.row_v_hi(i), n, z),
            mu_lo: pick(&|i| lay.row_v_lo(i), n, z),
            eta_hi: pick(&|l| lay.row_flow_hi(l), nl, z),
            eta_lo: pick(&|l| lay.row_flow_lo(l), nl, z),
            cost: point.objective,
            point,
        }
    }
}
