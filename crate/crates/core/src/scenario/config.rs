use nalgebra::DVector;

use crate::bilevel::{solve_bilevel, BilevelResult, CoupledProblem};
use crate::error::{invalid, Error, Result};
use crate::mpqp::{explore, ExploreOptions, PiecewiseAffineDemandFunction, PriceBox};
use crate::qp::SolverOptions;

/// Settings shared by every experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Per-station price bounds; `[0, 2 max c]` when absent.
    pub lambda_box: Option<(f64, f64)>,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Largest scaled KKT residual accepted by `verify`.
    pub tol_kkt: f64,
    /// Slack below which an inequality counts as active.
    pub tol_active: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda_box: None,
            seed: 0,
            workers: 0,
            tol_kkt: 1e-6,
            tol_active: 1e-7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.lambda_box {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("price box needs finite bounds with lo < hi"));
            }
        }
        if !(self.tol_kkt > 0.0 && self.tol_active > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            active_tol: self.tol_active,
            ..SolverOptions::default()
        }
    }

    /// Exploration settings; threads come from [`RunConfig::install`].
    pub fn explore_options(&self) -> ExploreOptions {
        ExploreOptions {
            audit_seed: self.seed,
            workers: 0,
            solver: self.solver(),
            ..ExploreOptions::default()
        }
    }

    pub fn price_box(&self, problem: &CoupledProblem) -> Result<PriceBox> {
        match self.lambda_box {
            Some((lo, hi)) => PriceBox::uniform(problem.num_stations(), lo, hi),
            None => problem.default_price_box(),
        }
    }

    /// Runs `f` on a pool with the configured number of threads.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// O-D demand vector for a sweep level: every pair with nonzero demand in
/// the input gets `m_w`, pairs with zero demand stay at zero.
pub fn demand_for_level(problem: &CoupledProblem, m_w: f64) -> Result<DVector<f64>> {
    if !(m_w.is_finite() && m_w >= 0.0) {
        return Err(invalid(format!(
            "demand level {m_w} must be finite and nonnegative"
        )));
    }
    Ok(problem.demand().map(|m| if m != 0.0 { m_w } else { 0.0 }))
}

/// Explicit demand function and optimal prices of one instance.
#[derive(Debug, Clone)]
pub struct Priced {
    pub pi: PiecewiseAffineDemandFunction,
    pub result: BilevelResult,
}

/// Explores the price box from its center, then solves the pricing problem.
pub fn price_instance(problem: &CoupledProblem, cfg: &RunConfig) -> Result<Priced> {
    let domain = cfg.price_box(problem)?;
    let pi = explore(
        &problem.traffic_qp,
        &domain,
        &domain.center(),
        &cfg.explore_options(),
    )?;
    let result = solve_bilevel(problem, &pi, &cfg.solver())?;
    Ok(Priced { pi, result })
}
