use std::collections::{BTreeMap, VecDeque};

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::region::{build_region, constant_region, CriticalRegion, PriceBox, DIM_TOL};
use super::sensitivity::{policy_for_basis, sensitivity_at};
use crate::error::{invalid, Error, Result};
use crate::qp::{contains_polytope, facet_center, overlap_radius, SolverOptions};
use crate::traffic::{solve_itso, CompactQp};

/// Settings of the region exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploreOptions {
    pub dim_tol: f64,
    /// Step across a facet, relative to `1 + ‖x‖∞` of the facet point.
    pub step_rel: f64,
    pub max_regions: usize,
    /// Randomized retries for seeds and stuck facets.
    pub retries: usize,
    /// Size of a random perturbation, relative to `1 + ‖x‖∞`.
    pub perturb_rel: f64,
    pub audit_samples: usize,
    pub audit_seed: u64,
    pub audit_rounds: usize,
    /// Worker threads; zero uses the ambient thread pool.
    pub workers: usize,
    pub solver: SolverOptions,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            dim_tol: DIM_TOL,
            step_rel: 1e-6,
            max_regions: 100_000,
            retries: 5,
            perturb_rel: 1e-5,
            audit_samples: 1000,
            audit_seed: 0x5eed,
            audit_rounds: 3,
            workers: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExploreStats {
    pub facets_probed: usize,
    pub boundary_facets: usize,
    pub closed_facets: usize,
    pub failed_probes: usize,
    /// Regions found from audit samples rather than from a facet crossing.
    pub audit_regions: usize,
    /// Regions replaced by a larger region found from a degenerate basis.
    pub merged_regions: usize,
    pub audit_samples: usize,
    pub max_condition: f64,
}

/// Explicit traffic response `d = π(λ)`: one affine map per critical region.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineDemandFunction {
    pub domain: PriceBox,
    pub regions: Vec<CriticalRegion>,
    pub stats: ExploreStats,
    index: BTreeMap<Vec<usize>, usize>,
}

/// Containment tolerance of [`PiecewiseAffineDemandFunction::locate`].
pub const LOCATE_TOL: f64 = 1e-9;

impl PiecewiseAffineDemandFunction {
    pub fn new(
        domain: PriceBox,
        regions: Vec<CriticalRegion>,
        stats: ExploreStats,
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, r) in regions.iter().enumerate() {
            if r.id != i {
                return Err(invalid(format!("region at position {i} has id {}", r.id)));
            }
            if index.insert(r.fingerprint.clone(), i).is_some() {
                return Err(invalid(format!(
                    "fingerprint {:?} appears twice",
                    r.fingerprint
                )));
            }
        }
        Ok(PiecewiseAffineDemandFunction {
            domain,
            regions,
            stats,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn num_stations(&self) -> usize {
        self.domain.dim()
    }

    pub fn by_fingerprint(&self, fingerprint: &[usize]) -> Option<&CriticalRegion> {
        self.index.get(fingerprint).map(|&i| &self.regions[i])
    }

    /// Lowest-id region containing the price vector.
    pub fn locate(&self, prices: &DVector<f64>) -> Result<usize> {
        if prices.len() != self.num_stations() {
            return Err(invalid(format!(
                "expected {} station prices, got {}",
                self.num_stations(),
                prices.len()
            )));
        }
        if !self.domain.contains(prices, LOCATE_TOL) {
            return Err(Error::OutsideDomain {
                point: prices.iter().copied().collect(),
            });
        }
        self.regions
            .iter()
            .find(|r| r.contains(prices, LOCATE_TOL * (1.0 + prices.amax())))
            .map(|r| r.id)
            .ok_or_else(|| Error::CoverageGap {
                uncovered: vec![prices.iter().copied().collect()],
            })
    }

    pub fn evaluate(&self, prices: &DVector<f64>) -> Result<DVector<f64>> {
        let id = self.locate(prices)?;
        Ok(self.regions[id].demand_at(prices))
    }
}

/// Evaluates the demand function at a price vector.
pub fn evaluate(pi: &PiecewiseAffineDemandFunction, prices: &DVector<f64>) -> Result<DVector<f64>> {
    pi.evaluate(prices)
}

/// Critical region containing the given prices, from one lower-level solve.
pub fn region_at(
    qp: &CompactQp,
    domain: &PriceBox,
    prices: &DVector<f64>,
    opts: &ExploreOptions,
) -> Result<CriticalRegion> {
    let sol = solve_itso(qp, prices, &opts.solver)?;
    let policy = sensitivity_at(qp, prices, &sol)?;
    build_region(qp, policy, domain, opts.dim_tol)
}

fn perturbed(domain: &PriceBox, x: &DVector<f64>, rel: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = x.len();
    let mut d = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
    let nrm = d.norm();
    if nrm > 0.0 {
        d /= nrm;
    }
    domain.clamp(&(x + d * rel * (1.0 + x.amax())))
}

fn region_near(
    qp: &CompactQp,
    domain: &PriceBox,
    prices: &DVector<f64>,
    opts: &ExploreOptions,
    salt: u64,
) -> Result<CriticalRegion> {
    let mut last = match region_at(qp, domain, prices, opts) {
        Ok(r) => return Ok(r),
        Err(e @ (Error::Infeasible(_) | Error::InvalidInput(_))) => return Err(e),
        Err(e) => e,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    for _ in 0..opts.retries {
        let p = perturbed(domain, prices, opts.perturb_rel, &mut rng);
        match region_at(qp, domain, &p, opts) {
            Ok(r) => return Ok(r),
            Err(e) => last = e,
        }
    }
    Err(last)
}

enum Probe {
    Boundary,
    Closed,
    Found(Box<CriticalRegion>),
    Failed,
}

fn probe_facet(
    qp: &CompactQp,
    domain: &PriceBox,
    source: &CriticalRegion,
    k: usize,
    known: &[CriticalRegion],
    dropped: &[bool],
    opts: &ExploreOptions,
) -> Probe {
    let h = &source.halfspaces;
    let normal = h.a.row(k).transpose();
    let Ok((xf, _)) = facet_center(h, k, domain.max_width()) else {
        return Probe::Failed;
    };
    let base_step = opts.step_rel * (1.0 + xf.amax());
    let mut step = base_step;
    for _ in 0..3 {
        let p = &xf + &normal * step;
        if !domain.contains(&p, 0.0) {
            return Probe::Boundary;
        }
        if known
            .iter()
            .zip(dropped)
            .any(|(r, &gone)| !gone && r.id != source.id && r.contains(&p, 0.0))
        {
            return Probe::Closed;
        }
        if let Ok(r) = region_at(qp, domain, &p, opts) {
            if r.fingerprint != source.fingerprint {
                return Probe::Found(Box::new(r));
            }
        }
        step *= 10.0;
    }
    let salt = (source.id as u64) << 20 | k as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    for _ in 0..opts.retries {
        let p = perturbed(domain, &(&xf + &normal * step), opts.perturb_rel, &mut rng);
        if h.a.row(k).dot(&p.transpose()) <= h.b[k] {
            continue;
        }
        if let Ok(r) = region_at(qp, domain, &p, opts) {
            if r.fingerprint != source.fingerprint {
                return Probe::Found(Box::new(r));
            }
        }
    }
    Probe::Failed
}

struct Partition<'a> {
    qp: &'a CompactQp,
    domain: &'a PriceBox,
    opts: &'a ExploreOptions,
    regions: Vec<CriticalRegion>,
    dropped: Vec<bool>,
    index: BTreeMap<Vec<usize>, usize>,
    stats: ExploreStats,
}

/// Outcome of adding a region to the partition.
enum Insert {
    New(usize),
    /// The region contains an earlier one, which it replaced.
    Replaced(usize),
    Known,
}

impl Partition<'_> {
    /// Adds a region unless its basis is known or it lies inside a known
    /// region. Under dual degeneracy several bases describe nested pieces of
    /// the same affine map; a region that contains known regions takes the
    /// place of the first one and the others are dropped at the end.
    fn insert(&mut self, mut r: CriticalRegion) -> Result<Insert> {
        if self.index.contains_key(&r.fingerprint) {
            return Ok(Insert::Known);
        }
        let tol = self.opts.dim_tol;
        let mut swallowed = Vec::new();
        for (id, e) in self.regions.iter().enumerate() {
            if self.dropped[id] || overlap_radius(&e.halfspaces, &r.halfspaces)? <= tol {
                continue;
            }
            if contains_polytope(&e.halfspaces, &r.halfspaces, tol)? {
                self.index.insert(r.fingerprint.clone(), id);
                return Ok(Insert::Known);
            }
            if contains_polytope(&r.halfspaces, &e.halfspaces, tol)? {
                swallowed.push(id);
            }
        }
        self.stats.max_condition = self.stats.max_condition.max(r.policy.condition_number);
        if let Some((&first, rest)) = swallowed.split_first() {
            for &id in rest {
                self.dropped[id] = true;
                self.index
                    .insert(self.regions[id].fingerprint.clone(), first);
            }
            self.stats.merged_regions += swallowed.len();
            r.id = first;
            self.index.insert(r.fingerprint.clone(), first);
            self.regions[first] = r;
            return Ok(Insert::Replaced(first));
        }
        if self.regions.len() >= self.opts.max_regions {
            return Err(Error::RegionLimit(self.opts.max_regions));
        }
        let id = self.regions.len();
        r.id = id;
        self.index.insert(r.fingerprint.clone(), id);
        self.regions.push(r);
        self.dropped.push(false);
        Ok(Insert::New(id))
    }

    /// Live regions with consecutive ids.
    fn into_regions(self) -> Vec<CriticalRegion> {
        self.regions
            .into_iter()
            .zip(self.dropped)
            .filter(|(_, gone)| !gone)
            .enumerate()
            .map(|(id, (mut r, _))| {
                r.id = id;
                r
            })
            .collect()
    }

    /// Breadth-first growth: all facets of one wave are probed in parallel
    /// against the regions known when the wave starts, and new regions are
    /// inserted in task order so ids do not depend on scheduling.
    fn grow(&mut self, mut queue: VecDeque<usize>) -> Result<()> {
        while !queue.is_empty() {
            let wave: Vec<usize> = queue.drain(..).collect();
            let tasks: Vec<(usize, usize)> = wave
                .iter()
                .filter(|&&id| !self.dropped[id])
                .flat_map(|&id| {
                    let h = &self.regions[id].halfspaces;
                    (0..h.len())
                        .filter(|&k| !self.domain.is_box_facet(&h.a.row(k).into_owned(), h.b[k]))
                        .map(move |k| (id, k))
                })
                .collect();
            self.stats.facets_probed += tasks.len();
            let (known, dropped) = (&self.regions, &self.dropped);
            let (qp, domain, opts) = (self.qp, self.domain, self.opts);
            let results: Vec<Probe> = tasks
                .par_iter()
                .map(|&(id, k)| probe_facet(qp, domain, &known[id], k, known, dropped, opts))
                .collect();
            for probe in results {
                match probe {
                    Probe::Boundary => self.stats.boundary_facets += 1,
                    Probe::Closed => self.stats.closed_facets += 1,
                    Probe::Failed => self.stats.failed_probes += 1,
                    Probe::Found(r) => match self.insert(*r)? {
                        Insert::New(id) | Insert::Replaced(id) => {
                            if !queue.contains(&id) {
                                queue.push_back(id);
                            }
                        }
                        Insert::Known => self.stats.closed_facets += 1,
                    },
                }
            }
        }
        Ok(())
    }

    fn live(&self) -> Vec<&CriticalRegion> {
        self.regions
            .iter()
            .zip(&self.dropped)
            .filter(|(_, &gone)| !gone)
            .map(|(r, _)| r)
            .collect()
    }

    fn uncovered(&self, samples: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let live = self.live();
        let flags: Vec<bool> = samples
            .par_iter()
            .map(|p| {
                live.iter()
                    .any(|r| r.contains(p, LOCATE_TOL * (1.0 + p.amax())))
            })
            .collect();
        samples
            .iter()
            .zip(flags)
            .filter(|(_, covered)| !covered)
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// Samples the box; uncovered samples seed further exploration.
    fn audit(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.audit_seed);
        let samples: Vec<DVector<f64>> = (0..self.opts.audit_samples)
            .map(|_| self.domain.sample(&mut rng))
            .collect();
        self.stats.audit_samples = samples.len();
        let mut missing = self.uncovered(&samples);
        for round in 0..self.opts.audit_rounds {
            if missing.is_empty() {
                return Ok(());
            }
            for (i, p) in missing.iter().enumerate() {
                if self
                    .live()
                    .iter()
                    .any(|r| r.contains(p, LOCATE_TOL * (1.0 + p.amax())))
                {
                    continue;
                }
                let salt = 0xa0d1_u64 << 32 | (round as u64) << 24 | i as u64;
                if let Ok(r) = region_near(self.qp, self.domain, p, self.opts, salt) {
                    if let Insert::New(id) | Insert::Replaced(id) = self.insert(r)? {
                        self.stats.audit_regions += 1;
                        self.grow(VecDeque::from([id]))?;
                    }
                }
            }
            missing = self.uncovered(&missing);
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::CoverageGap {
                uncovered: missing
                    .iter()
                    .map(|p| p.iter().copied().collect())
                    .collect(),
            })
        }
    }
}

/// Partitions the price box into critical regions of the traffic problem.
///
/// Starts from the region of `seed`, crosses every facet by a small step
/// along its outward normal and solves the lower level there, until every
/// facet either lies on the box boundary or leads to a known region. A
/// seeded sample audit then checks coverage; uncovered samples start new
/// searches before a [`Error::CoverageGap`] is reported.
pub fn explore(
    qp: &CompactQp,
    domain: &PriceBox,
    seed: &DVector<f64>,
    opts: &ExploreOptions,
) -> Result<PiecewiseAffineDemandFunction> {
    if domain.dim() != qp.num_stations {
        return Err(invalid(format!(
            "price box has {} coordinates for {} stations",
            domain.dim(),
            qp.num_stations
        )));
    }
    if qp.num_stations == 0 {
        return Err(invalid("the traffic network has no charging stations"));
    }
    if !domain.contains(seed, 0.0) {
        return Err(Error::OutsideDomain {
            point: seed.iter().copied().collect(),
        });
    }
    let run = || explore_inner(qp, domain, seed, opts);
    if opts.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

fn explore_inner(
    qp: &CompactQp,
    domain: &PriceBox,
    seed: &DVector<f64>,
    opts: &ExploreOptions,
) -> Result<PiecewiseAffineDemandFunction> {
    let mut part = Partition {
        qp,
        domain,
        opts,
        regions: Vec::new(),
        dropped: Vec::new(),
        index: BTreeMap::new(),
        stats: ExploreStats::default(),
    };
    if qp.demand.iter().all(|&m| m == 0.0) {
        let sol = solve_itso(qp, seed, &opts.solver)?;
        let basis = super::sensitivity::select_basis(qp, &sol.point.active_set, &sol.phi);
        let policy = policy_for_basis(qp, &basis, seed)?;
        part.insert(constant_region(policy, domain))?;
    } else {
        let first = region_near(qp, domain, seed, opts, 0x5eed_0001)?;
        part.insert(first)?;
        part.grow(VecDeque::from([0]))?;
        part.audit()?;
    }
    let stats = std::mem::take(&mut part.stats);
    PiecewiseAffineDemandFunction::new(domain.clone(), part.into_regions(), stats)
}
