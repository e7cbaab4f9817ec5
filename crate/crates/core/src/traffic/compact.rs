use nalgebra::{DMatrix, DVector};

use super::network::{ArcKind, ExtendedTrafficNetwork};
use crate::error::{invalid, Result};
use crate::qp::{solve_qp, PrimalDualPoint, QpProblem, SolverOptions};

/// Traffic assignment in matrix form, parametric in the station prices λ:
///
/// ```text
/// minimize   ½ ξ'Qξ + q(λ)'ξ + ½ε‖f‖²
/// subject to E f = m,  A f = ξ,  G ξ ≤ h
/// ```
///
/// with `q(λ) = q_base + [0; 0; Jλ]`. `Q` is diagonal and stored as a vector.
/// The QP variable is `x = [ξ; f]`; equality multipliers are `[ψ; δ]` and the
/// inequality multipliers are `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactQp {
    pub q_diag: DVector<f64>,
    pub q_base: DVector<f64>,
    /// Diagonal of J: average energy per charging EV of each station.
    pub price_injection: DVector<f64>,
    pub e_matrix: DMatrix<f64>,
    pub demand: DVector<f64>,
    pub link: DMatrix<f64>,
    pub g_matrix: DMatrix<f64>,
    pub h: DVector<f64>,
    pub route_reg: f64,
    pub num_stations: usize,
}

impl CompactQp {
    pub fn num_arcs(&self) -> usize {
        self.q_diag.len()
    }

    pub fn num_routes(&self) -> usize {
        self.link.ncols()
    }

    pub fn num_pairs(&self) -> usize {
        self.demand.len()
    }

    /// Index of the first charge arc.
    pub fn charge_offset(&self) -> usize {
        self.num_arcs() - self.num_stations
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.q_diag)
    }

    pub fn j_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.price_injection)
    }

    fn check_prices(&self, prices: &DVector<f64>) -> Result<()> {
        if prices.len() != self.num_stations {
            return Err(invalid(format!(
                "expected {} station prices, got {}",
                self.num_stations,
                prices.len()
            )));
        }
        if prices.iter().any(|v| !v.is_finite()) {
            return Err(invalid("station prices must be finite"));
        }
        Ok(())
    }

    /// `q(λ)`.
    pub fn linear_term(&self, prices: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_prices(prices)?;
        let mut q = self.q_base.clone();
        let off = self.charge_offset();
        for s in 0..self.num_stations {
            q[off + s] += self.price_injection[s] * prices[s];
        }
        Ok(q)
    }

    /// Lower-level QP at fixed prices.
    pub fn to_qp(&self, prices: &DVector<f64>) -> Result<QpProblem> {
        let q = self.linear_term(prices)?;
        let na = self.num_arcs();
        let nr = self.num_routes();
        let nw = self.num_pairs();
        let n = na + nr;
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..na {
            hess[(a, a)] = self.q_diag[a];
        }
        for r in 0..nr {
            hess[(na + r, na + r)] = self.route_reg;
        }
        let mut c = DVector::zeros(n);
        c.rows_mut(0, na).copy_from(&q);
        let mut aeq = DMatrix::zeros(nw + na, n);
        aeq.view_mut((0, na), (nw, nr)).copy_from(&self.e_matrix);
        for a in 0..na {
            aeq[(nw + a, a)] = -1.0;
        }
        aeq.view_mut((nw, na), (na, nr)).copy_from(&self.link);
        let mut beq = DVector::zeros(nw + na);
        beq.rows_mut(0, nw).copy_from(&self.demand);
        let mut ain = DMatrix::zeros(2 * na, n);
        ain.view_mut((0, 0), (2 * na, na)).copy_from(&self.g_matrix);
        Ok(QpProblem::new(hess, c)
            .with_equalities(aeq, beq)
            .with_inequalities(ain, self.h.clone()))
    }

    /// Copy with different O-D demands.
    pub fn with_demand(&self, demand: &DVector<f64>) -> Result<CompactQp> {
        if demand.len() != self.num_pairs() {
            return Err(invalid("demand vector length does not match O-D pairs"));
        }
        if demand.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("O-D demands must be finite and nonnegative"));
        }
        let mut out = self.clone();
        out.demand = demand.clone();
        Ok(out)
    }

    /// Total travel-time cost `½ξ'Qξ + q_base'ξ`.
    pub fn latency_cost(&self, xi: &DVector<f64>) -> f64 {
        0.5 * xi.component_mul(&self.q_diag).dot(xi) + self.q_base.dot(xi)
    }

    /// Energy drawn at each station, `J ξ_charge`.
    pub fn station_demand(&self, xi: &DVector<f64>) -> DVector<f64> {
        let off = self.charge_offset();
        DVector::from_iterator(
            self.num_stations,
            (0..self.num_stations).map(|s| self.price_injection[s] * xi[off + s]),
        )
    }

    /// Splits a solved lower-level QP into its named parts.
    pub fn split(&self, prices: &DVector<f64>, point: PrimalDualPoint) -> TrafficSolution {
        let na = self.num_arcs();
        let nr = self.num_routes();
        let nw = self.num_pairs();
        let xi = point.x.rows(0, na).into_owned();
        let f = point.x.rows(na, nr).into_owned();
        let psi = point.eq_duals.rows(0, nw).into_owned();
        let delta = point.eq_duals.rows(nw, na).into_owned();
        let phi = point.ineq_duals.clone();
        let station_demand = self.station_demand(&xi);
        let latency_cost = self.latency_cost(&xi);
        let charging_expense = prices.dot(&station_demand);
        TrafficSolution {
            xi,
            f,
            psi,
            phi,
            delta,
            station_demand,
            latency_cost,
            charging_expense,
            point,
        }
    }
}

/// Optimal traffic assignment at fixed prices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSolution {
    pub xi: DVector<f64>,
    pub f: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi: DVector<f64>,
    pub delta: DVector<f64>,
    pub station_demand: DVector<f64>,
    pub latency_cost: f64,
    pub charging_expense: f64,
    pub point: PrimalDualPoint,
}

impl TrafficSolution {
    /// Lower-level objective: travel-time cost plus charging expense.
    pub fn cost(&self) -> f64 {
        self.latency_cost + self.charging_expense
    }
}

/// Builds the matrix form of the traffic assignment problem.
pub fn assemble_traffic_qp(net: &ExtendedTrafficNetwork) -> Result<CompactQp> {
    let na = net.num_arcs();
    let nr = net.num_routes();
    let nw = net.od_pairs.len();
    let mut q_diag = DVector::zeros(na);
    let mut q_base = DVector::zeros(na);
    for (i, a) in net.arcs.iter().enumerate() {
        match a.kind {
            ArcKind::NoCharge => {}
            ArcKind::Physical => {
                q_diag[i] = 2.0 * a.time_value / a.capacity_slope;
                q_base[i] = a.time_value * a.free_flow_time;
            }
            ArcKind::Charge => {
                let st = &net.stations[a.station.expect("charge arc has a station")];
                q_diag[i] = 2.0 * a.time_value / a.capacity_slope;
                q_base[i] = a.time_value * (a.free_flow_time + st.charging_time());
            }
        }
    }
    let mut e_matrix = DMatrix::zeros(nw, nr);
    let mut link = DMatrix::zeros(na, nr);
    let mut r = 0;
    for (w, pair) in net.od_pairs.iter().enumerate() {
        for route in &pair.routes {
            e_matrix[(w, r)] = 1.0;
            for &a in route {
                link[(a, r)] += 1.0;
            }
            r += 1;
        }
    }
    let mut g_matrix = DMatrix::zeros(2 * na, na);
    let mut h = DVector::zeros(2 * na);
    for a in 0..na {
        g_matrix[(a, a)] = -1.0;
        g_matrix[(na + a, a)] = 1.0;
        h[na + a] = net.arcs[a].flow_cap;
    }
    let demand = DVector::from_iterator(nw, net.od_pairs.iter().map(|p| p.demand));
    let price_injection = DVector::from_iterator(
        net.num_stations(),
        net.stations.iter().map(|s| s.avg_demand),
    );
    Ok(CompactQp {
        q_diag,
        q_base,
        price_injection,
        e_matrix,
        demand,
        link,
        g_matrix,
        h,
        route_reg: net.route_reg,
        num_stations: net.num_stations(),
    })
}

/// Traffic operator's response to station prices.
pub fn solve_itso(
    qp: &CompactQp,
    prices: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<TrafficSolution> {
    let problem = qp.to_qp(prices)?;
    let point = solve_qp(&problem, opts)?;
    Ok(qp.split(prices, point))
}

/// Energy demand per station from a vector of extended-network arc flows.
pub fn demand_from_flows(
    net: &ExtendedTrafficNetwork,
    flows: &DVector<f64>,
) -> Result<DVector<f64>> {
    if flows.len() != net.num_arcs() {
        return Err(invalid(format!(
            "expected {} arc flows, got {}",
            net.num_arcs(),
            flows.len()
        )));
    }
    if flows.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid("arc flows must be finite and nonnegative"));
    }
    Ok(DVector::from_iterator(
        net.num_stations(),
        (0..net.num_stations()).map(|s| net.stations[s].avg_demand * flows[net.charge_arc(s)]),
    ))
}
