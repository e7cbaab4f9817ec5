use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Convex quadratic program
///
/// ```text
/// minimize   ½ x'Hx + c'x
/// subject to Aeq x = beq      (multiplier y)
///            Ain x ≤ bin      (multiplier z ≥ 0)
/// ```
///
/// Stationarity reads `Hx + c + Aeq'y + Ain'z = 0`. Entries of `bin` equal to
/// `+inf` mark rows that can never bind; they are skipped by the solver and
/// receive a zero multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with the given objective.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QpProblem {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    /// Linear program `min c'x`.
    pub fn linear_program(linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self::new(DMatrix::zeros(n, n), linear)
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Checks dimensions, finiteness and symmetry of the data.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.hessian.shape() != (n, n) {
            return Err(invalid(format!(
                "Hessian is {:?}, expected {n}x{n}",
                self.hessian.shape()
            )));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(invalid("equality block has inconsistent dimensions"));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(invalid("inequality block has inconsistent dimensions"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.hessian)
            || !self.linear.iter().all(|v| v.is_finite())
            || !finite(&self.eq_matrix)
            || !self.eq_rhs.iter().all(|v| v.is_finite())
            || !finite(&self.ineq_matrix)
        {
            return Err(invalid("QP data contains non-finite entries"));
        }
        if self
            .ineq_rhs
            .iter()
            .any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(invalid("inequality right-hand side contains NaN or -inf"));
        }
        let scale = 1.0 + self.hessian.amax();
        for i in 0..n {
            for j in 0..i {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-10 * scale {
                    return Err(invalid("Hessian is not symmetric"));
                }
            }
        }
        if !is_diagonal(&self.hessian) {
            let eig = self.hessian.clone().symmetric_eigen();
            if eig.eigenvalues.min() < -1e-9 * scale {
                return Err(invalid(format!(
                    "Hessian is not positive semidefinite (min eigenvalue {:.3e})",
                    eig.eigenvalues.min()
                )));
            }
        } else if self.hessian.diagonal().iter().any(|&d| d < -1e-9 * scale) {
            return Err(invalid("Hessian has a negative diagonal entry"));
        }
        Ok(())
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let (r, c) = m.shape();
    (0..c).all(|j| (0..r).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Scaled first-order optimality residuals of a primal-dual point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    pub fn evaluate(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Self {
        let hx = &p.hessian * x;
        let grad = &hx + &p.linear + p.eq_matrix.transpose() * y + p.ineq_matrix.transpose() * z;
        let stat_scale = 1.0 + p.linear.amax().max(hx.amax());
        let eq_res = if p.num_eq() > 0 {
            (&p.eq_matrix * x - &p.eq_rhs).amax() / (1.0 + p.eq_rhs.amax())
        } else {
            0.0
        };
        let ax = &p.ineq_matrix * x;
        let finite_rhs = p
            .ineq_rhs
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut viol = 0.0_f64;
        let mut comp = 0.0_f64;
        for k in 0..p.num_ineq() {
            if p.ineq_rhs[k].is_finite() {
                let slack = p.ineq_rhs[k] - ax[k];
                viol = viol.max(-slack);
                comp = comp.max((z[k] * slack).abs());
            } else {
                comp = comp.max(z[k].abs());
            }
        }
        let zmax = if z.is_empty() { 0.0 } else { z.amax() };
        let dual = if z.is_empty() {
            0.0
        } else {
            (-z.min()).max(0.0)
        };
        KktResiduals {
            stationarity: if grad.is_empty() {
                0.0
            } else {
                grad.amax() / stat_scale
            },
            primal_eq: eq_res,
            primal_ineq: viol.max(0.0) / (1.0 + finite_rhs),
            dual_feasibility: dual / (1.0 + zmax),
            complementarity: comp / ((1.0 + zmax) * (1.0 + finite_rhs.max(x.amax()))),
        }
    }
}

/// Optimal primal-dual pair returned by [`crate::qp::solve_qp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    /// Inequality rows whose slack is within the active tolerance, ascending.
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// True when the interior-point iterate was refined by an active-set solve.
    pub polished: bool,
}

impl PrimalDualPoint {
    /// Slack `bin - Ain x` of every inequality row (`+inf` for free rows).
    pub fn slacks(&self, p: &QpProblem) -> DVector<f64> {
        let ax = &p.ineq_matrix * &self.x;
        DVector::from_iterator(
            p.num_ineq(),
            (0..p.num_ineq()).map(|k| p.ineq_rhs[k] - ax[k]),
        )
    }
}
