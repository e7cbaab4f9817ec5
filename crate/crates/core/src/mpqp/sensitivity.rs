use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::traffic::{CompactQp, TrafficSolution};

/// Offsets of the stacked lower-level solution `[ξ; f; ψ; φ; δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolutionLayout {
    pub arcs: usize,
    pub routes: usize,
    pub pairs: usize,
}

impl SolutionLayout {
    pub fn of(qp: &CompactQp) -> Self {
        SolutionLayout {
            arcs: qp.num_arcs(),
            routes: qp.num_routes(),
            pairs: qp.num_pairs(),
        }
    }
    pub fn xi(&self) -> usize {
        0
    }
    pub fn f(&self) -> usize {
        self.arcs
    }
    pub fn psi(&self) -> usize {
        self.arcs + self.routes
    }
    pub fn phi(&self) -> usize {
        self.arcs + self.routes + self.pairs
    }
    pub fn delta(&self) -> usize {
        3 * self.arcs + self.routes + self.pairs
    }
    pub fn len(&self) -> usize {
        4 * self.arcs + self.routes + self.pairs
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear system `M0 z = b0 + N0 λ` whose solution is the lower-level
/// primal-dual point for every price that keeps the basis optimal.
///
/// Row blocks are arc stationarity, route stationarity, demand rows, link
/// rows and one complementarity row per bound. A bound in the basis holds
/// with equality (`G_k ξ = h_k`); any other bound has a zero multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySystem {
    pub m0: DMatrix<f64>,
    pub n0: DMatrix<f64>,
    pub rhs_const: DVector<f64>,
    pub basis: Vec<usize>,
    pub layout: SolutionLayout,
}

/// Assembles the sensitivity system for a given basis of bound rows.
pub fn assemble_sensitivity(qp: &CompactQp, basis: &[usize]) -> SensitivitySystem {
    let lay = SolutionLayout::of(qp);
    let (na, nr, nw) = (lay.arcs, lay.routes, lay.pairs);
    let t = lay.len();
    let mut m0 = DMatrix::zeros(t, t);
    let mut n0 = DMatrix::zeros(t, qp.num_stations);
    let mut b0 = DVector::zeros(t);

    for a in 0..na {
        m0[(a, lay.xi() + a)] = qp.q_diag[a];
        for k in 0..2 * na {
            let g = qp.g_matrix[(k, a)];
            if g != 0.0 {
                m0[(a, lay.phi() + k)] = g;
            }
        }
        m0[(a, lay.delta() + a)] = -1.0;
        b0[a] = -qp.q_base[a];
    }
    let off = qp.charge_offset();
    for s in 0..qp.num_stations {
        n0[(off + s, s)] = -qp.price_injection[s];
    }
    let r0 = na;
    for r in 0..nr {
        m0[(r0 + r, lay.f() + r)] = qp.route_reg;
        for w in 0..nw {
            m0[(r0 + r, lay.psi() + w)] = qp.e_matrix[(w, r)];
        }
        for a in 0..na {
            m0[(r0 + r, lay.delta() + a)] = qp.link[(a, r)];
        }
    }
    let w0 = na + nr;
    for w in 0..nw {
        for r in 0..nr {
            m0[(w0 + w, lay.f() + r)] = qp.e_matrix[(w, r)];
        }
        b0[w0 + w] = qp.demand[w];
    }
    let a0 = w0 + nw;
    for a in 0..na {
        m0[(a0 + a, lay.xi() + a)] = -1.0;
        for r in 0..nr {
            m0[(a0 + a, lay.f() + r)] = qp.link[(a, r)];
        }
    }
    let c0 = a0 + na;
    for k in 0..2 * na {
        if basis.contains(&k) {
            for a in 0..na {
                m0[(c0 + k, lay.xi() + a)] = qp.g_matrix[(k, a)];
            }
            b0[c0 + k] = qp.h[k];
        } else {
            m0[(c0 + k, lay.phi() + k)] = 1.0;
        }
    }
    let mut sorted = basis.to_vec();
    sorted.sort_unstable();
    SensitivitySystem {
        m0,
        n0,
        rhs_const: b0,
        basis: sorted,
        layout: lay,
    }
}

/// Picks a linearly independent subset of the active bounds, strongest
/// multipliers first (ties by lowest row index). Independence is tested
/// together with the demand rows in route-flow space, where every bound row
/// `G_k ξ ≤ h_k` reads `G_k A f ≤ h_k`.
pub fn select_basis(qp: &CompactQp, active: &[usize], duals: &DVector<f64>) -> Vec<usize> {
    let nr = qp.num_routes();
    let mut order: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&k| qp.h[k].is_finite())
        .collect();
    order.sort_by(|&a, &b| duals[b].total_cmp(&duals[a]).then(a.cmp(&b)));
    let mut span: Vec<DVector<f64>> = Vec::new();
    let absorb = |v: DVector<f64>, span: &mut Vec<DVector<f64>>| -> bool {
        let nrm = v.norm();
        if nrm <= 1e-12 {
            return false;
        }
        let mut r = v;
        for _ in 0..2 {
            for q in span.iter() {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn <= 1e-9 * nrm {
            return false;
        }
        span.push(r / rn);
        true
    };
    for w in 0..qp.num_pairs() {
        let row = DVector::from_iterator(nr, qp.e_matrix.row(w).iter().copied());
        absorb(row, &mut span);
    }
    let gl = &qp.g_matrix * &qp.link;
    let mut basis = Vec::new();
    for k in order {
        let row = DVector::from_iterator(nr, gl.row(k).iter().copied());
        if absorb(row, &mut span) {
            basis.push(k);
        }
    }
    basis.sort_unstable();
    basis
}

/// Affine map from station prices to the lower-level primal-dual solution,
/// valid on one critical region.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    /// Bound rows held with equality, ascending.
    pub basis: Vec<usize>,
    pub base_point: DVector<f64>,
    /// Stacked `[ξ; f; ψ; φ; δ]` at `base_point`.
    pub base_solution: DVector<f64>,
    /// Derivative of the stacked solution with respect to the prices.
    pub jacobian: DMatrix<f64>,
    /// `D`: derivative of the station demands with respect to the prices.
    pub demand_jacobian: DMatrix<f64>,
    pub demand_base: DVector<f64>,
    pub layout: SolutionLayout,
    /// One-norm condition estimate of the row-equilibrated `M0`.
    pub condition_number: f64,
}

impl AffinePolicy {
    pub fn solution_at(&self, prices: &DVector<f64>) -> DVector<f64> {
        &self.base_solution + &self.jacobian * (prices - &self.base_point)
    }

    pub fn demand_at(&self, prices: &DVector<f64>) -> DVector<f64> {
        &self.demand_base + &self.demand_jacobian * (prices - &self.base_point)
    }

    /// `d⁰` in `d(λ) = Dλ + d⁰`.
    pub fn demand_offset(&self) -> DVector<f64> {
        &self.demand_base - &self.demand_jacobian * &self.base_point
    }

    pub fn arc_flows_at(&self, prices: &DVector<f64>) -> DVector<f64> {
        self.solution_at(prices)
            .rows(self.layout.xi(), self.layout.arcs)
            .into_owned()
    }

    fn xi_jacobian(&self) -> DMatrix<f64> {
        self.jacobian
            .rows(self.layout.xi(), self.layout.arcs)
            .into_owned()
    }

    fn phi_jacobian(&self) -> DMatrix<f64> {
        self.jacobian
            .rows(self.layout.phi(), 2 * self.layout.arcs)
            .into_owned()
    }

    pub(crate) fn primal_parts(&self) -> (DVector<f64>, DMatrix<f64>) {
        (
            self.base_solution
                .rows(self.layout.xi(), self.layout.arcs)
                .into_owned(),
            self.xi_jacobian(),
        )
    }

    pub(crate) fn dual_parts(&self) -> (DVector<f64>, DMatrix<f64>) {
        (
            self.base_solution
                .rows(self.layout.phi(), 2 * self.layout.arcs)
                .into_owned(),
            self.phi_jacobian(),
        )
    }
}

/// Largest condition estimate accepted for `M0`.
pub const MAX_CONDITION: f64 = 1e13;

/// Solves the sensitivity system for a fixed basis.
pub fn policy_for_basis(
    qp: &CompactQp,
    basis: &[usize],
    prices: &DVector<f64>,
) -> Result<AffinePolicy> {
    let sys = assemble_sensitivity(qp, basis);
    let t = sys.layout.len();
    let mut m0 = sys.m0.clone();
    let mut n0 = sys.n0.clone();
    let mut b0 = sys.rhs_const.clone();
    for i in 0..t {
        let s = m0.row(i).amax();
        if s > 0.0 {
            m0.row_mut(i).scale_mut(1.0 / s);
            n0.row_mut(i).scale_mut(1.0 / s);
            b0[i] /= s;
        }
    }
    let inv = m0.clone().lu().try_inverse().ok_or(Error::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let norm1 = |m: &DMatrix<f64>| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let condition = norm1(&m0) * norm1(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularSystem { condition });
    }
    let jacobian = &inv * &n0;
    let base_solution = &inv * (&b0 + &n0 * prices);
    let off = qp.charge_offset();
    let ns = qp.num_stations;
    let mut demand_jacobian = DMatrix::zeros(ns, ns);
    let mut demand_base = DVector::zeros(ns);
    for s in 0..ns {
        let e = qp.price_injection[s];
        demand_base[s] = e * base_solution[off + s];
        for c in 0..ns {
            demand_jacobian[(s, c)] = e * jacobian[(off + s, c)];
        }
    }
    Ok(AffinePolicy {
        basis: sys.basis,
        base_point: prices.clone(),
        base_solution,
        jacobian,
        demand_jacobian,
        demand_base,
        layout: sys.layout,
        condition_number: condition,
    })
}

/// Affine policy around a solved lower-level problem.
///
/// Fails with [`Error::Degenerate`] when the chosen basis does not reproduce
/// the solver's solution, and with [`Error::SingularSystem`] when `M0` cannot
/// be inverted reliably.
pub fn sensitivity_at(
    qp: &CompactQp,
    prices: &DVector<f64>,
    sol: &TrafficSolution,
) -> Result<AffinePolicy> {
    let basis = select_basis(qp, &sol.point.active_set, &sol.phi);
    let policy = policy_for_basis(qp, &basis, prices)?;
    let (xi, _) = policy.primal_parts();
    let gap = (&xi - &sol.xi).amax();
    if gap > 1e-6 * (1.0 + sol.xi.amax()) {
        return Err(Error::Degenerate(format!(
            "basis {:?} misses the solver flows by {gap:.3e}",
            policy.basis
        )));
    }
    Ok(policy)
}
