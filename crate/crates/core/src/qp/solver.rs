use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};
use nalgebra::{DMatrix, DVector};

use super::problem::{KktResiduals, PrimalDualPoint, QpProblem};
use crate::error::{Error, Result};

/// Tolerances used by [`solve_qp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// A row is active when its slack is at most this multiple of the row norm.
    pub active_tol: f64,
    /// Target for the largest scaled KKT residual of a returned point.
    pub kkt_tol: f64,
    /// Points with residuals above this are reported as non-converged.
    pub accept_tol: f64,
    pub max_iter: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            active_tol: 1e-7,
            kkt_tol: 1e-8,
            accept_tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Solves a convex QP with the Clarabel interior-point method and refines the
/// iterate with one equality-constrained KKT solve on the detected active set.
///
/// The refinement is kept only if the refined point is primal feasible with
/// nonnegative multipliers, which makes it an exact optimum of the convex
/// problem up to round-off.
pub fn solve_qp(p: &QpProblem, opts: &SolverOptions) -> Result<PrimalDualPoint> {
    p.validate()?;
    let n = p.num_vars();
    let m_eq = p.num_eq();
    let finite_rows: Vec<usize> = (0..p.num_ineq())
        .filter(|&k| p.ineq_rhs[k].is_finite())
        .collect();

    let (x0, y0, z0, s0, converged) = if m_eq + finite_rows.len() == 0 {
        let zero = DVector::zeros(0);
        (DVector::zeros(n), zero.clone(), zero.clone(), zero, false)
    } else {
        interior_point(p, &finite_rows, opts)?
    };

    let mut z_full = DVector::zeros(p.num_ineq());
    let mut s_full = DVector::from_element(p.num_ineq(), f64::INFINITY);
    for (i, &k) in finite_rows.iter().enumerate() {
        z_full[k] = z0[i].max(0.0);
        s_full[k] = s0[i];
    }

    let mut candidates: Vec<Vec<usize>> = Vec::new();
    let ipm_set: Vec<usize> = finite_rows
        .iter()
        .copied()
        .filter(|&k| s_full[k] < z_full[k])
        .collect();
    candidates.push(ipm_set);
    let loose: Vec<usize> = finite_rows
        .iter()
        .copied()
        .filter(|&k| s_full[k] <= 1e-6 * (1.0 + p.ineq_rhs[k].abs()))
        .collect();
    if !candidates.contains(&loose) {
        candidates.push(loose);
    }

    let mut best: Option<(DVector<f64>, DVector<f64>, DVector<f64>, bool)> = None;
    for set in &candidates {
        if let Some((x, y, z)) = polish(p, set) {
            // A rank-deficient system can yield a consistent solution with a
            // huge null-space component; keep it only if it is a KKT point.
            if KktResiduals::evaluate(p, &x, &y, &z).max() <= opts.accept_tol {
                best = Some((x, y, z, true));
                break;
            }
        }
    }
    let (x, y, z, polished) = match best {
        Some(b) => b,
        None => {
            if !converged {
                if m_eq + finite_rows.len() == 0 {
                    return Err(Error::Unbounded(
                        "unconstrained objective has no minimizer".into(),
                    ));
                }
                let r = KktResiduals::evaluate(p, &x0, &y0, &z_full).max();
                if r > opts.accept_tol {
                    return Err(Error::MaxIterations {
                        message: "interior-point method stopped early".into(),
                        residual: r,
                    });
                }
            }
            (x0, y0, z_full, false)
        }
    };

    let residuals = KktResiduals::evaluate(p, &x, &y, &z);
    if residuals.max() > opts.accept_tol {
        return Err(Error::MaxIterations {
            message: "KKT residuals above acceptance tolerance".into(),
            residual: residuals.max(),
        });
    }
    if residuals.max() > opts.kkt_tol {
        log::debug!("QP solved with scaled KKT residual {:.2e}", residuals.max());
    }

    let ax = &p.ineq_matrix * &x;
    let active_set = (0..p.num_ineq())
        .filter(|&k| {
            let b = p.ineq_rhs[k];
            b.is_finite() && b - ax[k] <= opts.active_tol * p.ineq_matrix.row(k).norm().max(1e-300)
        })
        .collect();
    Ok(PrimalDualPoint {
        objective: p.objective(&x),
        x,
        eq_duals: y,
        ineq_duals: z,
        active_set,
        residuals,
        polished,
    })
}

type IpmIterate = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, bool);

fn interior_point(p: &QpProblem, rows: &[usize], opts: &SolverOptions) -> Result<IpmIterate> {
    let n = p.num_vars();
    let m_eq = p.num_eq();
    let m = m_eq + rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    for i in 0..m_eq {
        a.row_mut(i).copy_from(&p.eq_matrix.row(i));
        b[i] = p.eq_rhs[i];
    }
    for (i, &k) in rows.iter().enumerate() {
        a.row_mut(m_eq + i).copy_from(&p.ineq_matrix.row(k));
        b[m_eq + i] = p.ineq_rhs[k];
    }
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if m_eq > 0 {
        cones.push(ZeroConeT(m_eq));
    }
    if !rows.is_empty() {
        cones.push(NonnegativeConeT(rows.len()));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .tol_ktratio(1e-8)
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::Numerical(format!("solver settings: {e:?}")))?;
    let hp = to_csc(&p.hessian, true);
    let am = to_csc(&a, false);
    let q: Vec<f64> = p.linear.iter().copied().collect();
    let mut solver = DefaultSolver::new(&hp, &q, &am, &b, &cones, settings)
        .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let converged = match sol.status {
        SolverStatus::Solved => true,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible("QP constraints admit no point".into()))
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::Unbounded("QP objective is unbounded below".into()))
        }
        _ => false,
    };
    let x = DVector::from_column_slice(&sol.x);
    let y = DVector::from_iterator(m_eq, sol.z[..m_eq].iter().copied());
    let z = DVector::from_iterator(rows.len(), sol.z[m_eq..].iter().copied());
    let s = DVector::from_iterator(rows.len(), sol.s[m_eq..].iter().copied());
    Ok((x, y, z, s, converged))
}

/// Active-set refinement from `start`: solves the equality-constrained
/// problem on the current set, then adds the most violated row or drops the
/// most negative multiplier until the point satisfies the KKT conditions of
/// `p`. Gives up after a bounded number of changes.
fn polish(p: &QpProblem, start: &[usize]) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let mut set = start.to_vec();
    let max_changes = 2 * p.num_ineq().min(25) + 2;
    for _ in 0..max_changes {
        match polish_step(p, &set)? {
            Step::Done(x, y, z) => return Some((x, y, z)),
            Step::Add(k) => {
                set.push(k);
                set.sort_unstable();
            }
            Step::Drop(k) => set.retain(|&r| r != k),
        }
    }
    None
}

enum Step {
    Done(DVector<f64>, DVector<f64>, DVector<f64>),
    Add(usize),
    Drop(usize),
}

/// One equality-constrained KKT solve with rows in `set` held at equality.
fn polish_step(p: &QpProblem, set: &[usize]) -> Option<Step> {
    let n = p.num_vars();
    let m_eq = p.num_eq();
    let k_act = set.len();
    let dim = n + m_eq + k_act;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    for i in 0..n {
        rhs[i] = -p.linear[i];
    }
    for i in 0..m_eq {
        for j in 0..n {
            let v = p.eq_matrix[(i, j)];
            kkt[(n + i, j)] = v;
            kkt[(j, n + i)] = v;
        }
        rhs[n + i] = p.eq_rhs[i];
    }
    for (i, &k) in set.iter().enumerate() {
        let r = n + m_eq + i;
        for j in 0..n {
            let v = p.ineq_matrix[(k, j)];
            kkt[(r, j)] = v;
            kkt[(j, r)] = v;
        }
        rhs[r] = p.ineq_rhs[k];
    }
    let sol = solve_square(&kkt, &rhs)?;
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, m_eq).into_owned();
    let z_act = sol.rows(n + m_eq, k_act).into_owned();

    let tol = 1e-9;
    let xs = x.amax();
    if m_eq > 0 {
        let scale = 1.0 + p.eq_rhs.amax() + p.eq_matrix.amax() * xs;
        if (&p.eq_matrix * &x - &p.eq_rhs).amax() > tol * scale {
            return None;
        }
    }
    let ax = &p.ineq_matrix * &x;
    let amax = if p.num_ineq() > 0 {
        p.ineq_matrix.amax()
    } else {
        0.0
    };
    let mut worst: Option<(usize, f64)> = None;
    for k in 0..p.num_ineq() {
        let b = p.ineq_rhs[k];
        let excess = (ax[k] - b) / (1.0 + b.abs() + amax * xs);
        if b.is_finite() && excess > tol && worst.map_or(true, |(_, w)| excess > w) {
            worst = Some((k, excess));
        }
    }
    if let Some((k, _)) = worst {
        return if set.contains(&k) {
            None
        } else {
            Some(Step::Add(k))
        };
    }
    let dual_scale = 1.0 + p.linear.amax() + if k_act > 0 { z_act.amax() } else { 0.0 };
    if k_act > 0 && z_act.min() < -tol * dual_scale {
        return Some(Step::Drop(set[z_act.imin()]));
    }
    let mut z = DVector::zeros(p.num_ineq());
    for (i, &k) in set.iter().enumerate() {
        z[k] = z_act[i].max(0.0);
    }
    Some(Step::Done(x, y, z))
}

/// Solves a square, possibly rank-deficient, consistent linear system. Returns
/// `None` when the system is inconsistent.
fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = b.len();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let scale = a.amax().max(1e-300);
    let ok = |x: &DVector<f64>| {
        let r = a * x - b;
        r.amax() <= 1e-11 * (b.amax() + scale * x.amax()).max(1e-300)
    };
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) && ok(&x) {
            return Some(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let eps = 1e-13 * svd.singular_values.max();
    let mut x = svd.solve(b, eps).ok()?;
    for _ in 0..3 {
        let r = b - a * &x;
        if let Ok(dx) = svd.solve(&r, eps) {
            x += dx;
        }
    }
    if x.iter().all(|v| v.is_finite()) && ok(&x) {
        Some(x)
    } else {
        None
    }
}

fn to_csc(m: &DMatrix<f64>, upper_only: bool) -> CscMatrix<f64> {
    let (nr, nc) = m.shape();
    let mut colptr = Vec::with_capacity(nc + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..nc {
        let last = if upper_only { (j + 1).min(nr) } else { nr };
        for i in 0..last {
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(nr, nc, colptr, rowval, nzval)
}
