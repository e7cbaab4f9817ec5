use nalgebra::{DMatrix, DVector, RowDVector};

use super::problem::QpProblem;
use super::solver::{solve_qp, SolverOptions};
use crate::error::{Error, Result};

/// Polyhedron `{x : a x ≤ b}` stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaces {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl HalfSpaces {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.nrows(), b.len(), "row count mismatch");
        HalfSpaces { a, b }
    }

    pub fn empty(dim: usize) -> Self {
        HalfSpaces {
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
        }
    }

    /// Axis-aligned box `lo ≤ x ≤ hi` as `2n` rows (upper bounds first).
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let n = lo.len();
        let mut h = HalfSpaces::empty(n);
        for i in 0..n {
            let mut row = RowDVector::zeros(n);
            row[i] = 1.0;
            h.push(&row, hi[i]);
        }
        for i in 0..n {
            let mut row = RowDVector::zeros(n);
            row[i] = -1.0;
            h.push(&row, -lo[i]);
        }
        h
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn push(&mut self, row: &RowDVector<f64>, rhs: f64) {
        let m = self.len();
        let a = std::mem::replace(&mut self.a, DMatrix::zeros(0, 0));
        self.a = a.insert_row(m, 0.0);
        self.a.row_mut(m).copy_from(row);
        let b = std::mem::replace(&mut self.b, DVector::zeros(0));
        self.b = b.push(rhs);
    }

    pub fn select(&self, rows: &[usize]) -> HalfSpaces {
        let mut a = DMatrix::zeros(rows.len(), self.dim());
        let mut b = DVector::zeros(rows.len());
        for (i, &k) in rows.iter().enumerate() {
            a.row_mut(i).copy_from(&self.a.row(k));
            b[i] = self.b[k];
        }
        HalfSpaces { a, b }
    }

    /// Largest value of `a_k x - b_k`; negative inside, `-inf` with no rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.len())
            .map(|k| ax[k] - self.b[k])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Rows rescaled to unit Euclidean norm. Rows with zero normal are kept as is.
    pub fn normalized(&self) -> HalfSpaces {
        let mut out = self.clone();
        for k in 0..self.len() {
            let nrm = self.a.row(k).norm();
            if nrm > 0.0 {
                out.a.row_mut(k).scale_mut(1.0 / nrm);
                out.b[k] /= nrm;
            }
        }
        out
    }
}

/// Removes rows that do not change the polyhedron.
///
/// Row `k` is dropped when maximizing `a_k x` over the remaining rows (plus
/// the cap `a_k x ≤ b_k + 1`) cannot exceed `b_k`. Rows are tested in order
/// against the rows still kept, so of two identical rows the first is removed.
/// Returned rows are normalized and keep their original relative order.
pub fn remove_redundant(h: &HalfSpaces) -> Result<HalfSpaces> {
    let opts = SolverOptions::default();
    let mut rows = Vec::new();
    let mut work = HalfSpaces::empty(h.dim());
    for k in 0..h.len() {
        let nrm = h.a.row(k).norm();
        if nrm <= 1e-14 {
            if h.b[k] < -1e-12 {
                return Err(Error::EmptyPolyhedron);
            }
            continue;
        }
        work.push(&(h.a.row(k) / nrm), h.b[k] / nrm);
        rows.push(k);
    }
    if work.is_empty() {
        return Ok(work);
    }
    center_lp(&work, Some(1.0))?;

    let mut kept: Vec<bool> = vec![true; work.len()];
    for k in 0..work.len() {
        let others: Vec<usize> = (0..work.len()).filter(|&j| j != k && kept[j]).collect();
        let mut lp = work.select(&others);
        let ak = work.a.row(k).into_owned();
        lp.push(&ak, work.b[k] + 1.0);
        let problem = QpProblem::linear_program(-ak.transpose()).with_inequalities(lp.a, lp.b);
        let best = match solve_qp(&problem, &opts) {
            Ok(pt) => -pt.objective,
            Err(Error::Infeasible(_)) => return Err(Error::EmptyPolyhedron),
            Err(e) => return Err(e),
        };
        if best <= work.b[k] + 1e-9 * (1.0 + work.b[k].abs()) {
            kept[k] = false;
        }
    }
    let keep: Vec<usize> = (0..work.len()).filter(|&k| kept[k]).collect();
    Ok(work.select(&keep))
}

/// Center and radius of the largest Euclidean ball inside the polyhedron.
pub fn chebyshev_center(h: &HalfSpaces) -> Result<(DVector<f64>, f64)> {
    center_lp(h, None)
}

/// Chebyshev center with the radius capped at `cap`; always bounded.
pub fn chebyshev_center_capped(h: &HalfSpaces, cap: f64) -> Result<(DVector<f64>, f64)> {
    center_lp(h, Some(cap))
}

fn center_lp(h: &HalfSpaces, cap: Option<f64>) -> Result<(DVector<f64>, f64)> {
    let n = h.dim();
    let extra = 1 + usize::from(cap.is_some());
    let mut a = DMatrix::zeros(h.len() + extra, n + 1);
    let mut b = DVector::zeros(h.len() + extra);
    for k in 0..h.len() {
        a.view_mut((k, 0), (1, n)).copy_from(&h.a.row(k));
        a[(k, n)] = h.a.row(k).norm();
        b[k] = h.b[k];
    }
    a[(h.len(), n)] = -1.0;
    if let Some(c) = cap {
        a[(h.len() + 1, n)] = 1.0;
        b[h.len() + 1] = c;
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let lp = QpProblem::linear_program(c).with_inequalities(a, b);
    match solve_qp(&lp, &SolverOptions::default()) {
        Ok(pt) => Ok((pt.x.rows(0, n).into_owned(), pt.x[n].max(0.0))),
        Err(Error::Infeasible(_)) => Err(Error::EmptyPolyhedron),
        Err(Error::Unbounded(_)) => Err(Error::Unbounded(
            "polyhedron contains balls of any radius".into(),
        )),
        Err(e) => Err(e),
    }
}

/// Whether `inner ⊆ outer`, up to `tol` per normalized row of `outer`.
/// `inner` must be bounded.
pub fn contains_polytope(outer: &HalfSpaces, inner: &HalfSpaces, tol: f64) -> Result<bool> {
    for k in 0..outer.len() {
        let row = outer.a.row(k);
        let nrm = row.norm();
        if nrm == 0.0 {
            continue;
        }
        let lp = QpProblem::linear_program(-row.transpose())
            .with_inequalities(inner.a.clone(), inner.b.clone());
        let pt = solve_qp(&lp, &SolverOptions::default())?;
        if row.dot(&pt.x.transpose()) > outer.b[k] + tol * nrm {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Chebyshev radius of `a ∩ b`, zero when the intersection is empty.
pub fn overlap_radius(a: &HalfSpaces, b: &HalfSpaces) -> Result<f64> {
    let mut both = a.clone();
    for k in 0..b.len() {
        both.push(&b.a.row(k).into_owned(), b.b[k]);
    }
    match chebyshev_center(&both) {
        Ok((_, r)) => Ok(r),
        Err(Error::EmptyPolyhedron) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Center of the largest ball inside facet `k`, measured within the facet
/// hyperplane. The radius is capped at `cap` so one-dimensional facets and
/// unbounded facets stay well posed.
pub fn facet_center(h: &HalfSpaces, k: usize, cap: f64) -> Result<(DVector<f64>, f64)> {
    let n = h.dim();
    let ak = h.a.row(k).into_owned();
    let ak2 = ak.norm_squared();
    let m = h.len() - 1;
    let mut a = DMatrix::zeros(m + 2, n + 1);
    let mut b = DVector::zeros(m + 2);
    let mut i = 0;
    for j in 0..h.len() {
        if j == k {
            continue;
        }
        let aj = h.a.row(j);
        let proj = &aj - &ak * (aj.dot(&ak) / ak2);
        a.view_mut((i, 0), (1, n)).copy_from(&aj);
        a[(i, n)] = proj.norm();
        b[i] = h.b[j];
        i += 1;
    }
    a[(m, n)] = -1.0;
    a[(m + 1, n)] = 1.0;
    b[m + 1] = cap;
    let mut eq = DMatrix::zeros(1, n + 1);
    eq.view_mut((0, 0), (1, n)).copy_from(&ak);
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let lp = QpProblem::linear_program(c)
        .with_equalities(eq, DVector::from_element(1, h.b[k]))
        .with_inequalities(a, b);
    match solve_qp(&lp, &SolverOptions::default()) {
        Ok(pt) => Ok((pt.x.rows(0, n).into_owned(), pt.x[n].max(0.0))),
        Err(Error::Infeasible(_)) => Err(Error::EmptyPolyhedron),
        Err(e) => Err(e),
    }
}
