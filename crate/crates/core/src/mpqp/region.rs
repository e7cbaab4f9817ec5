use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;

use super::sensitivity::AffinePolicy;
use crate::error::{invalid, Error, Result};
use crate::qp::{chebyshev_center, remove_redundant, HalfSpaces};
use crate::traffic::CompactQp;

/// Box `Λ = {lo ≤ λ ≤ hi}` of admissible station prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl PriceBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(invalid("price box bounds have different lengths"));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("price box bounds must be finite"));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l >= h) {
            return Err(invalid("price box needs lo < hi in every coordinate"));
        }
        Ok(PriceBox { lo, hi })
    }

    /// Same interval for every station.
    pub fn uniform(stations: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(stations, lo),
            DVector::from_element(stations, hi),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn max_width(&self) -> f64 {
        (&self.hi - &self.lo).max()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| x[i].clamp(self.lo[i], self.hi[i])),
        )
    }

    pub fn halfspaces(&self) -> HalfSpaces {
        HalfSpaces::from_box(&self.lo, &self.hi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| rng.gen_range(self.lo[i]..=self.hi[i])),
        )
    }

    /// Whether a normalized row coincides with a face of the box.
    pub fn is_box_facet(&self, a: &RowDVector<f64>, b: f64) -> bool {
        for i in 0..self.dim() {
            for (sign, bound) in [(1.0, self.hi[i]), (-1.0, -self.lo[i])] {
                let aligned = (0..self.dim()).all(|j| {
                    let target = if j == i { sign } else { 0.0 };
                    (a[j] - target).abs() <= 1e-12
                });
                if aligned && (b - bound).abs() <= 1e-9 * (1.0 + bound.abs()) {
                    return true;
                }
            }
        }
        false
    }

    /// Largest value of `a x` over the box.
    fn support(&self, a: &RowDVector<f64>) -> f64 {
        (0..self.dim())
            .map(|i| (a[i] * self.lo[i]).max(a[i] * self.hi[i]))
            .sum()
    }

    fn infimum(&self, a: &RowDVector<f64>) -> f64 {
        (0..self.dim())
            .map(|i| (a[i] * self.lo[i]).min(a[i] * self.hi[i]))
            .sum()
    }
}

/// Polyhedral set of prices on which one affine policy is optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRegion {
    pub id: usize,
    /// Normalized, irredundant rows `R λ ≤ r`, box rows included.
    pub halfspaces: HalfSpaces,
    /// Basis of the policy; identifies the region.
    pub fingerprint: Vec<usize>,
    pub policy: AffinePolicy,
    pub interior_point: DVector<f64>,
    pub chebyshev_radius: f64,
}

impl CriticalRegion {
    pub fn contains(&self, prices: &DVector<f64>, tol: f64) -> bool {
        self.halfspaces.contains(prices, tol)
    }

    pub fn demand_at(&self, prices: &DVector<f64>) -> DVector<f64> {
        self.policy.demand_at(prices)
    }
}

/// Smallest Chebyshev radius of a full-dimensional region.
pub const DIM_TOL: f64 = 1e-8;

/// Set of prices where `policy` stays optimal, intersected with the box.
///
/// The rows are the inactive bounds `G_k ξ(λ) ≤ h_k` and the nonnegativity of
/// the basis multipliers `φ_k(λ) ≥ 0`. Rows whose normal vanishes are checked
/// once and dropped.
pub fn build_region(
    qp: &CompactQp,
    policy: AffinePolicy,
    domain: &PriceBox,
    dim_tol: f64,
) -> Result<CriticalRegion> {
    let nc = domain.dim();
    let (xi0, dxi) = policy.primal_parts();
    let (phi0, dphi) = policy.dual_parts();
    let lam0 = &policy.base_point;
    let primal_scale = dxi.amax();
    let dual_scale = dphi.amax();

    let mut rows = HalfSpaces::empty(nc);
    let mut add = |a: RowDVector<f64>, b: f64, jac_scale: f64, value_scale: f64| -> Result<()> {
        if a.norm() <= 1e-10 * jac_scale {
            if b < -1e-7 * (1.0 + value_scale) {
                return Err(Error::EmptyPolyhedron);
            }
            return Ok(());
        }
        let tol = 1e-12 * (1.0 + b.abs());
        if domain.support(&a) <= b - tol {
            return Ok(());
        }
        if domain.infimum(&a) > b + tol {
            return Err(Error::EmptyPolyhedron);
        }
        rows.push(&a, b);
        Ok(())
    };
    for k in 0..qp.g_matrix.nrows() {
        if policy.basis.binary_search(&k).is_ok() {
            let a = -dphi.row(k).into_owned();
            let b = phi0[k] + a.dot(&lam0.transpose());
            add(a, b, dual_scale, phi0.amax())?;
        } else if qp.h[k].is_finite() {
            let gk = qp.g_matrix.row(k);
            let a = gk * &dxi;
            let b = qp.h[k] - gk.dot(&xi0.transpose()) + a.dot(&lam0.transpose());
            add(a, b, primal_scale, qp.h[k].abs())?;
        }
    }
    let bx = domain.halfspaces();
    for k in 0..bx.len() {
        rows.push(&bx.a.row(k).into_owned(), bx.b[k]);
    }
    let reduced = remove_redundant(&rows)?;
    let (center, radius) = chebyshev_center(&reduced)?;
    if radius <= dim_tol {
        return Err(Error::LowerDimensional { radius });
    }
    Ok(CriticalRegion {
        id: 0,
        fingerprint: policy.basis.clone(),
        halfspaces: reduced,
        policy,
        interior_point: center,
        chebyshev_radius: radius,
    })
}

/// Region covering the whole box with a constant policy, used when the
/// traffic feasible set is a single point (all O-D demands zero).
pub(crate) fn constant_region(policy: AffinePolicy, domain: &PriceBox) -> CriticalRegion {
    let mut policy = policy;
    let (t, nc) = policy.jacobian.shape();
    policy.jacobian = DMatrix::zeros(t, nc);
    policy.demand_jacobian = DMatrix::zeros(nc, nc);
    let halfspaces = domain.halfspaces();
    let radius = 0.5 * (&domain.hi - &domain.lo).min();
    CriticalRegion {
        id: 0,
        fingerprint: policy.basis.clone(),
        halfspaces,
        policy,
        interior_point: domain.center(),
        chebyshev_radius: radius,
    }
}
