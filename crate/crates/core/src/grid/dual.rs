use nalgebra::{DMatrix, DVector};

use super::case::DistributionCase;
use super::opf::OpfSolution;
use crate::error::{invalid, Result};
use crate::qp::QpProblem;

/// Index map of the dual variables `y = (τ̄, μ̄, μ̲, λ, η̲, η̄)`.
///
/// Line flow multipliers are kept for both directions of every line: pair
/// `2l` is the line's stored direction and pair `2l + 1` the reverse one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualLayout {
    pub buses: usize,
    pub lines: usize,
}

impl DualLayout {
    pub fn tau_hi(&self, i: usize) -> usize {
        i
    }
    pub fn mu_hi(&self, i: usize) -> usize {
        self.buses + i
    }
    pub fn mu_lo(&self, i: usize) -> usize {
        2 * self.buses + i
    }
    pub fn lambda(&self, i: usize) -> usize {
        3 * self.buses + i
    }
    pub fn eta_lo(&self, pair: usize) -> usize {
        4 * self.buses + pair
    }
    pub fn eta_hi(&self, pair: usize) -> usize {
        4 * self.buses + 2 * self.lines + pair
    }
    pub fn num_pairs(&self) -> usize {
        2 * self.lines
    }
    pub fn num_vars(&self) -> usize {
        4 * self.buses + 4 * self.lines
    }
}

/// Dual of the dispatch LP, written as a minimization of `-Φ(y)`.
///
/// `Φ(y) = λ'l - τ̄'ḡ - μ̄'v̄ + μ̲'v̲ - Σ f̄(η̲ + η̄)` collects every term that
/// does not depend on the station demands; the full dual objective at demand
/// `d` is `Φ(y) + Σ_s λ_{bus(s)} d_s`. Generator lower-bound multipliers are
/// eliminated, leaving `λ_i - τ̄_i ≤ c_i`. The angle stationarity row of the
/// reference bus is implied by the others and omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProblem {
    pub layout: DualLayout,
    pub qp: QpProblem,
    pub station_buses: Vec<usize>,
    pub costs: DVector<f64>,
    pub reference_bus: usize,
}

impl DualProblem {
    pub fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    /// Demand-independent part of the dual objective.
    pub fn phi(&self, y: &DVector<f64>) -> f64 {
        -self.qp.linear.dot(y)
    }

    /// Dual objective at the given station demands.
    pub fn objective_value(&self, y: &DVector<f64>, station_demand: &DVector<f64>) -> f64 {
        self.phi(y) + self.station_prices(y).dot(station_demand)
    }

    pub fn bus_prices(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(self.layout.lambda(0), self.layout.buses)
            .into_owned()
    }

    pub fn station_prices(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.station_buses.len(),
            self.station_buses.iter().map(|&b| y[self.layout.lambda(b)]),
        )
    }

    /// `S` with `S y = λ_c`.
    pub fn station_selector(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.station_buses.len(), self.num_vars());
        for (k, &b) in self.station_buses.iter().enumerate() {
            s[(k, self.layout.lambda(b))] = 1.0;
        }
        s
    }

    /// Dual LP at fixed station demands.
    pub fn with_fixed_demand(&self, station_demand: &DVector<f64>) -> Result<QpProblem> {
        if station_demand.len() != self.station_buses.len() {
            return Err(invalid("station demand length does not match stations"));
        }
        let mut qp = self.qp.clone();
        for (s, &b) in self.station_buses.iter().enumerate() {
            qp.linear[self.layout.lambda(b)] -= station_demand[s];
        }
        Ok(qp)
    }

    /// Largest constraint violation of `y`, unscaled.
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        let eq = if self.qp.num_eq() > 0 {
            (&self.qp.eq_matrix * y - &self.qp.eq_rhs).amax()
        } else {
            0.0
        };
        let ain = &self.qp.ineq_matrix * y - &self.qp.ineq_rhs;
        eq.max(ain.iter().fold(0.0, |m, v| m.max(*v)))
    }

    /// Removes multiplier offsets that cancel in every constraint: a common
    /// part of `μ̄_i, μ̲_i`, of the two bounds of a generator, and of opposite
    /// flow limits of a line. Prices and feasibility are unchanged and the
    /// objective can only improve.
    pub fn tighten(&self, y: &DVector<f64>) -> DVector<f64> {
        let lay = self.layout;
        let mut out = y.clone();
        for i in 0..lay.buses {
            let m = out[lay.mu_hi(i)].min(out[lay.mu_lo(i)]).max(0.0);
            out[lay.mu_hi(i)] -= m;
            out[lay.mu_lo(i)] -= m;
            let tau_lo = self.costs[i] - out[lay.lambda(i)] + out[lay.tau_hi(i)];
            let m = out[lay.tau_hi(i)].min(tau_lo).max(0.0);
            out[lay.tau_hi(i)] -= m;
        }
        for l in 0..lay.lines {
            let (fwd, bwd) = (2 * l, 2 * l + 1);
            let hi = out[lay.eta_hi(fwd)] + out[lay.eta_lo(bwd)];
            let lo = out[lay.eta_lo(fwd)] + out[lay.eta_hi(bwd)];
            if hi < 0.0 || lo < 0.0 {
                continue;
            }
            let m = hi.min(lo);
            out[lay.eta_hi(fwd)] = hi - m;
            out[lay.eta_lo(fwd)] = lo - m;
            out[lay.eta_hi(bwd)] = 0.0;
            out[lay.eta_lo(bwd)] = 0.0;
        }
        out
    }

    /// Dual vector of a solved dispatch problem.
    pub fn from_opf(&self, sol: &OpfSolution) -> DVector<f64> {
        let lay = self.layout;
        let mut y = DVector::zeros(lay.num_vars());
        for i in 0..lay.buses {
            y[lay.tau_hi(i)] = sol.tau_hi[i];
            y[lay.mu_hi(i)] = sol.mu_hi[i];
            y[lay.mu_lo(i)] = sol.mu_lo[i];
            y[lay.lambda(i)] = sol.lambda[i];
        }
        for l in 0..lay.lines {
            y[lay.eta_hi(2 * l)] = sol.eta_hi[l];
            y[lay.eta_lo(2 * l)] = sol.eta_lo[l];
        }
        y
    }
}

/// Builds the dual of the dispatch problem.
pub fn assemble_dual(case: &DistributionCase) -> Result<DualProblem> {
    case.validate()?;
    let n = case.num_buses();
    let nl = case.num_lines();
    let lay = DualLayout {
        buses: n,
        lines: nl,
    };
    let nv = lay.num_vars();
    let k = case.flow_coefficients();
    let cap = case.capacity_per_bus();
    let cost = case.cost_per_bus();
    let r = case.reference_bus();

    let mut c = DVector::zeros(nv);
    for i in 0..n {
        c[lay.tau_hi(i)] = cap[i];
        c[lay.mu_hi(i)] = case.buses[i].v_max;
        c[lay.mu_lo(i)] = -case.buses[i].v_min;
        c[lay.lambda(i)] = -case.buses[i].load;
    }
    let mut infinite_pairs = Vec::new();
    for (l, line) in case.lines.iter().enumerate() {
        for p in [2 * l, 2 * l + 1] {
            if line.flow_limit.is_finite() {
                c[lay.eta_lo(p)] = line.flow_limit;
                c[lay.eta_hi(p)] = line.flow_limit;
            } else {
                infinite_pairs.push(p);
            }
        }
    }

    // Rows 0..n are angle stationarity, rows n..2n voltage stationarity.
    let mut rows = DMatrix::zeros(2 * n, nv);
    for (l, line) in case.lines.iter().enumerate() {
        let (i, j) = (line.from, line.to);
        let (fwd, bwd) = (2 * l, 2 * l + 1);
        for (base, kk) in [(0, k[l].k2), (n, k[l].k1)] {
            for (a, b, out, back) in [(i, j, fwd, bwd), (j, i, bwd, fwd)] {
                let row = base + a;
                rows[(row, lay.lambda(a))] += kk;
                rows[(row, lay.lambda(b))] -= kk;
                rows[(row, lay.eta_hi(out))] += kk;
                rows[(row, lay.eta_hi(back))] -= kk;
                rows[(row, lay.eta_lo(out))] -= kk;
                rows[(row, lay.eta_lo(back))] += kk;
            }
        }
    }
    for i in 0..n {
        rows[(n + i, lay.mu_hi(i))] += 1.0;
        rows[(n + i, lay.mu_lo(i))] -= 1.0;
    }
    let keep: Vec<usize> = (0..2 * n).filter(|&row| row != r).collect();
    let mut aeq = DMatrix::zeros(keep.len(), nv);
    for (out, &row) in keep.iter().enumerate() {
        aeq.row_mut(out).copy_from(&rows.row(row));
    }
    let beq = DVector::zeros(keep.len());

    let m_in = n + 3 * n + 2 * lay.num_pairs() + 2 * infinite_pairs.len();
    let mut ain = DMatrix::zeros(m_in, nv);
    let mut bin = DVector::zeros(m_in);
    let mut row = 0;
    for i in 0..n {
        ain[(row, lay.lambda(i))] = 1.0;
        ain[(row, lay.tau_hi(i))] = -1.0;
        bin[row] = cost[i];
        row += 1;
    }
    for i in 0..n {
        for col in [lay.tau_hi(i), lay.mu_hi(i), lay.mu_lo(i)] {
            ain[(row, col)] = -1.0;
            row += 1;
        }
    }
    for p in 0..lay.num_pairs() {
        for col in [lay.eta_lo(p), lay.eta_hi(p)] {
            ain[(row, col)] = -1.0;
            row += 1;
        }
    }
    for &p in &infinite_pairs {
        for col in [lay.eta_lo(p), lay.eta_hi(p)] {
            ain[(row, col)] = 1.0;
            row += 1;
        }
    }
    debug_assert_eq!(row, m_in);

    Ok(DualProblem {
        layout: lay,
        qp: QpProblem::linear_program(c)
            .with_equalities(aeq, beq)
            .with_inequalities(ain, bin),
        station_buses: case.station_buses.clone(),
        costs: cost,
        reference_bus: r,
    })
}
