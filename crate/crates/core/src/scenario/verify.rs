use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{price_instance, RunConfig};
use super::report::OUTPUT_SCHEMA_VERSION;
use crate::bilevel::{
    baseline_lowest_price, solve_joint, verify_kkt_equilibrium, BaselineOptions, CoupledProblem,
    EquilibriumPoint,
};
use crate::error::{Error, Result};
use crate::mpqp::{PiecewiseAffineDemandFunction, LOCATE_TOL};
use crate::qp::{facet_center, SolverOptions};
use crate::traffic::{solve_itso, CompactQp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// Passes when `value <= threshold`.
    Le,
    /// Passes when `value >= threshold`.
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub threshold: f64,
    pub comparison: Comparison,
    pub status: CheckStatus,
    pub note: Option<String>,
}

impl Check {
    fn new(name: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let ok = match comparison {
            Comparison::Le => value <= threshold,
            Comparison::Ge => value >= threshold,
        };
        Check {
            name: name.into(),
            value: Some(value),
            threshold,
            comparison,
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            note: None,
        }
    }

    fn skipped(name: &str, comparison: Comparison, threshold: f64, note: String) -> Self {
        Check {
            name: name.into(),
            value: None,
            threshold,
            comparison,
            status: CheckStatus::Skipped,
            note: Some(note),
        }
    }

    fn failed(name: &str, comparison: Comparison, threshold: f64, err: &Error) -> Self {
        Check {
            name: name.into(),
            value: None,
            threshold,
            comparison,
            status: CheckStatus::Fail,
            note: Some(err.to_string()),
        }
    }

    /// One line of the `verify` console summary.
    pub fn line(&self) -> String {
        let value = self
            .value
            .map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        let op = match self.comparison {
            Comparison::Le => "<=",
            Comparison::Ge => ">=",
        };
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        format!("{status} {} {value} {op} {:.1e}", self.name, self.threshold)
    }
}

/// Settings of the oracle checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub jacobian_points: usize,
    pub fd_step: f64,
    pub facet_margin: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 200,
            jacobian_points: 5,
            fd_step: 1e-5,
            facet_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub stations: usize,
    pub regions: usize,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failed_names(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Runs every oracle on the instance: the demand function against fresh
/// traffic solves, the partition, facet continuity, finite-difference
/// Jacobians, the joint problem, the equilibrium conditions and the
/// baseline.
pub fn run_verify(
    problem: &CoupledProblem,
    cfg: &RunConfig,
    vopts: &VerifyOptions,
) -> Result<VerifyReport> {
    cfg.validate()?;
    cfg.install(|| verify_inner(problem, cfg, vopts))?
}

fn verify_inner(
    problem: &CoupledProblem,
    cfg: &RunConfig,
    vopts: &VerifyOptions,
) -> Result<VerifyReport> {
    let solver = cfg.solver();
    let priced = price_instance(problem, cfg)?;
    let pi = &priced.pi;
    let res = &priced.result;
    let qp = &problem.traffic_qp;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<DVector<f64>> = (0..vopts.samples)
        .map(|_| pi.domain.sample(&mut rng))
        .collect();
    let mut checks = Vec::new();

    let errors: Vec<Result<f64>> = samples
        .par_iter()
        .map(|lam| {
            let fresh = solve_itso(qp, lam, &solver)?.station_demand;
            Ok((pi.evaluate(lam)? - fresh).amax())
        })
        .collect();
    checks.push(fold_max("demand_function_error", errors, 1e-6));

    let (ambiguous, uncovered) = partition_counts(pi, &samples, vopts.facet_margin);
    checks.push(Check::new(
        "partition_ambiguous_samples",
        ambiguous as f64,
        Comparison::Le,
        0.0,
    ));
    checks.push(Check::new(
        "partition_uncovered_samples",
        uncovered as f64,
        Comparison::Le,
        0.0,
    ));

    checks.push(match facet_continuity(pi) {
        Ok(v) => Check::new("facet_continuity_gap", v, Comparison::Le, 1e-6),
        Err(e) => Check::failed("facet_continuity_gap", Comparison::Le, 1e-6, &e),
    });

    checks.push(match jacobian_error(qp, pi, vopts, cfg.seed, &solver) {
        Ok(Some(v)) => Check::new("jacobian_fd_error", v, Comparison::Le, 1e-4),
        Ok(None) => Check::skipped(
            "jacobian_fd_error",
            Comparison::Le,
            1e-4,
            "no region is wide enough for the difference step".into(),
        ),
        Err(e) => Check::failed("jacobian_fd_error", Comparison::Le, 1e-4, &e),
    });

    let joint = solve_joint(problem, &solver);
    checks.push(match &joint {
        Ok(j) => Check::new(
            "bilevel_joint_idso_gap",
            (res.idso_cost - j.idso_cost).abs() / (1.0 + j.idso_cost.abs()),
            Comparison::Le,
            1e-5,
        ),
        Err(e) => Check::failed("bilevel_joint_idso_gap", Comparison::Le, 1e-5, e),
    });

    let point = EquilibriumPoint::from_bilevel(res);
    let kkt = verify_kkt_equilibrium(problem, &point)?;
    checks.push(Check::new(
        "kkt_residual",
        kkt.max(),
        Comparison::Le,
        cfg.tol_kkt,
    ));
    if res.bus_prices.amax() > 0.0 {
        let perturbed = verify_kkt_equilibrium(problem, &point.with_scaled_prices(problem, 1.01))?;
        checks.push(Check::new(
            "kkt_residual_perturbed",
            perturbed.max(),
            Comparison::Ge,
            1e-3,
        ));
    } else {
        checks.push(Check::skipped(
            "kkt_residual_perturbed",
            Comparison::Ge,
            1e-3,
            "all prices are zero, scaling them changes nothing".into(),
        ));
    }

    let identity = res.combined_cost - (res.idso_cost + res.itso_cost - res.charging_expense);
    checks.push(Check::new(
        "combined_cost_identity",
        identity.abs() / (1.0 + res.combined_cost.abs()),
        Comparison::Le,
        1e-6,
    ));
    let region = &pi.regions[res.region_id];
    checks.push(Check::new(
        "region_inclusion",
        region
            .halfspaces
            .max_violation(&res.station_prices)
            .max(0.0),
        Comparison::Le,
        1e-9,
    ));

    let bopts = BaselineOptions {
        solver,
        ..BaselineOptions::default()
    };
    checks.push(match baseline_lowest_price(problem, &bopts) {
        Ok(b) => Check::new(
            "baseline_dominance",
            (b.combined_cost - res.combined_cost) / (1.0 + res.combined_cost.abs()),
            Comparison::Ge,
            -1e-6,
        ),
        Err(e @ Error::NonConvergent { .. }) => {
            Check::skipped("baseline_dominance", Comparison::Ge, -1e-6, e.to_string())
        }
        Err(e) => Check::failed("baseline_dominance", Comparison::Ge, -1e-6, &e),
    });

    Ok(VerifyReport {
        schema_version: OUTPUT_SCHEMA_VERSION,
        kind: "verify".into(),
        seed: cfg.seed,
        stations: problem.num_stations(),
        regions: pi.len(),
        checks,
    })
}

fn fold_max(name: &str, values: Vec<Result<f64>>, threshold: f64) -> Check {
    let mut worst = 0.0_f64;
    for v in values {
        match v {
            Ok(v) => worst = worst.max(v),
            Err(e) => return Check::failed(name, Comparison::Le, threshold, &e),
        }
    }
    Check::new(name, worst, Comparison::Le, threshold)
}

/// Samples farther than `margin` from every region facet that are not in
/// exactly one region, and samples in no region at all.
fn partition_counts(
    pi: &PiecewiseAffineDemandFunction,
    samples: &[DVector<f64>],
    margin: f64,
) -> (usize, usize) {
    let mut ambiguous = 0;
    let mut uncovered = 0;
    for lam in samples {
        let tol = LOCATE_TOL * (1.0 + lam.amax());
        if !pi.regions.iter().any(|r| r.contains(lam, tol)) {
            uncovered += 1;
            continue;
        }
        let near_facet = pi.regions.iter().any(|r| {
            let h = r.halfspaces.normalized();
            let s = &h.b - &h.a * lam;
            s.iter().any(|v| v.abs() < margin)
        });
        if near_facet {
            continue;
        }
        let count = pi.regions.iter().filter(|r| r.contains(lam, 0.0)).count();
        if count != 1 {
            ambiguous += 1;
        }
    }
    (ambiguous, uncovered)
}

/// Largest jump of the demand function across interior facets, measured at
/// each facet's center.
fn facet_continuity(pi: &PiecewiseAffineDemandFunction) -> Result<f64> {
    let cap = pi.domain.max_width();
    let gaps: Vec<Result<f64>> = pi
        .regions
        .par_iter()
        .map(|r| {
            let h = r.halfspaces.normalized();
            let mut worst = 0.0_f64;
            for k in 0..h.len() {
                if pi.domain.is_box_facet(&h.a.row(k).into_owned(), h.b[k]) {
                    continue;
                }
                let (x, radius) = facet_center(&h, k, cap)?;
                if radius <= 1e-9 {
                    continue;
                }
                let step = 1e-6 * (1.0 + x.amax());
                let outside = &x + h.a.row(k).transpose() * step;
                if !pi.domain.contains(&outside, 0.0) {
                    continue;
                }
                let j = match pi.locate(&outside) {
                    Ok(j) => j,
                    Err(_) => continue,
                };
                if j == r.id {
                    continue;
                }
                worst = worst.max((r.demand_at(&x) - pi.regions[j].demand_at(&x)).amax());
            }
            Ok(worst)
        })
        .collect();
    gaps.into_iter().try_fold(0.0_f64, |m, g| Ok(m.max(g?)))
}

/// Largest entrywise gap between each region's demand Jacobian and central
/// differences of fresh traffic solves at points inside the region. `None`
/// when no region is wide enough for the step.
fn jacobian_error(
    qp: &CompactQp,
    pi: &PiecewiseAffineDemandFunction,
    vopts: &VerifyOptions,
    seed: u64,
    solver: &SolverOptions,
) -> Result<Option<f64>> {
    let eps = vopts.fd_step;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a61_636f_6269_616e);
    let n = pi.domain.dim();
    let mut points = Vec::new();
    for r in &pi.regions {
        if r.chebyshev_radius <= 4.0 * eps {
            continue;
        }
        points.push((r.id, r.interior_point.clone()));
        for _ in 1..vopts.jacobian_points {
            let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let dir = if dir.norm() > 0.0 {
                dir.normalize()
            } else {
                DVector::from_element(n, 1.0).normalize()
            };
            points.push((r.id, &r.interior_point + dir * (0.5 * r.chebyshev_radius)));
        }
    }
    if points.is_empty() {
        return Ok(None);
    }
    let errs: Vec<Result<f64>> = points
        .par_iter()
        .map(|(id, x)| {
            let mut fd = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut hi = x.clone();
                hi[j] += eps;
                let mut lo = x.clone();
                lo[j] -= eps;
                let dh = solve_itso(qp, &hi, solver)?.station_demand;
                let dl = solve_itso(qp, &lo, solver)?.station_demand;
                fd.set_column(j, &((dh - dl) / (2.0 * eps)));
            }
            Ok((fd - &pi.regions[*id].policy.demand_jacobian).amax())
        })
        .collect();
    errs.into_iter()
        .try_fold(0.0_f64, |m, e| Ok(m.max(e?)))
        .map(Some)
}
