use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::explore::{ExploreStats, PiecewiseAffineDemandFunction};
use super::region::{CriticalRegion, PriceBox};
use super::sensitivity::{AffinePolicy, SolutionLayout};
use crate::error::{invalid, Result};
use crate::qp::HalfSpaces;

pub const PARTITION_SCHEMA_VERSION: u32 = 1;

/// Serialized critical-region partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub schema_version: u32,
    pub kind: String,
    pub stations: usize,
    pub lambda_lo: Vec<f64>,
    pub lambda_hi: Vec<f64>,
    pub regions: Vec<RegionRecord>,
    pub stats: StatsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: usize,
    pub fingerprint: Vec<usize>,
    /// Rows of `R` in `R λ ≤ r`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub interior_point: Vec<f64>,
    pub chebyshev_radius: f64,
    /// `D` and `d⁰` of `d(λ) = Dλ + d⁰`.
    pub demand_matrix: Vec<Vec<f64>>,
    pub demand_offset: Vec<f64>,
    pub policy: PolicyRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub arcs: usize,
    pub routes: usize,
    pub pairs: usize,
    pub base_point: Vec<f64>,
    pub base_solution: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
    pub demand_base: Vec<f64>,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub facets_probed: usize,
    pub boundary_facets: usize,
    pub closed_facets: usize,
    pub failed_probes: usize,
    pub audit_regions: usize,
    /// Regions replaced by a larger region found from a degenerate basis.
    #[serde(default)]
    pub merged_regions: usize,
    pub audit_samples: usize,
    pub max_condition: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid("matrix rows have inconsistent lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl PartitionFile {
    pub fn from_partition(pi: &PiecewiseAffineDemandFunction) -> PartitionFile {
        let s = &pi.stats;
        PartitionFile {
            schema_version: PARTITION_SCHEMA_VERSION,
            kind: "critical_region_partition".into(),
            stations: pi.num_stations(),
            lambda_lo: pi.domain.lo.iter().copied().collect(),
            lambda_hi: pi.domain.hi.iter().copied().collect(),
            regions: pi
                .regions
                .iter()
                .map(|r| RegionRecord {
                    id: r.id,
                    fingerprint: r.fingerprint.clone(),
                    a: rows(&r.halfspaces.a),
                    b: r.halfspaces.b.iter().copied().collect(),
                    interior_point: r.interior_point.iter().copied().collect(),
                    chebyshev_radius: r.chebyshev_radius,
                    demand_matrix: rows(&r.policy.demand_jacobian),
                    demand_offset: r.policy.demand_offset().iter().copied().collect(),
                    policy: PolicyRecord {
                        arcs: r.policy.layout.arcs,
                        routes: r.policy.layout.routes,
                        pairs: r.policy.layout.pairs,
                        base_point: r.policy.base_point.iter().copied().collect(),
                        base_solution: r.policy.base_solution.iter().copied().collect(),
                        jacobian: rows(&r.policy.jacobian),
                        demand_base: r.policy.demand_base.iter().copied().collect(),
                        condition_number: r.policy.condition_number,
                    },
                })
                .collect(),
            stats: StatsRecord {
                facets_probed: s.facets_probed,
                boundary_facets: s.boundary_facets,
                closed_facets: s.closed_facets,
                failed_probes: s.failed_probes,
                audit_regions: s.audit_regions,
                merged_regions: s.merged_regions,
                audit_samples: s.audit_samples,
                max_condition: s.max_condition,
            },
        }
    }

    pub fn into_partition(self) -> Result<PiecewiseAffineDemandFunction> {
        if self.schema_version != PARTITION_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported partition schema version {}",
                self.schema_version
            )));
        }
        let nc = self.stations;
        let domain = PriceBox::new(
            DVector::from_vec(self.lambda_lo.clone()),
            DVector::from_vec(self.lambda_hi.clone()),
        )?;
        let mut regions = Vec::with_capacity(self.regions.len());
        for r in self.regions {
            let p = &r.policy;
            let layout = SolutionLayout {
                arcs: p.arcs,
                routes: p.routes,
                pairs: p.pairs,
            };
            if p.base_solution.len() != layout.len() || p.jacobian.len() != layout.len() {
                return Err(invalid(format!("region {} has a malformed policy", r.id)));
            }
            let mut basis = r.fingerprint.clone();
            basis.sort_unstable();
            if basis != r.fingerprint {
                return Err(invalid(format!(
                    "region {} fingerprint is not sorted",
                    r.id
                )));
            }
            let policy = AffinePolicy {
                basis,
                base_point: DVector::from_vec(p.base_point.clone()),
                base_solution: DVector::from_vec(p.base_solution.clone()),
                jacobian: matrix(&p.jacobian, nc)?,
                demand_jacobian: matrix(&r.demand_matrix, nc)?,
                demand_base: DVector::from_vec(p.demand_base.clone()),
                layout,
                condition_number: p.condition_number,
            };
            if r.a.len() != r.b.len() {
                return Err(invalid(format!("region {} has mismatched rows", r.id)));
            }
            regions.push(CriticalRegion {
                id: r.id,
                halfspaces: HalfSpaces::new(matrix(&r.a, nc)?, DVector::from_vec(r.b)),
                fingerprint: r.fingerprint,
                policy,
                interior_point: DVector::from_vec(r.interior_point),
                chebyshev_radius: r.chebyshev_radius,
            });
        }
        let s = self.stats;
        let stats = ExploreStats {
            facets_probed: s.facets_probed,
            boundary_facets: s.boundary_facets,
            closed_facets: s.closed_facets,
            failed_probes: s.failed_probes,
            audit_regions: s.audit_regions,
            merged_regions: s.merged_regions,
            audit_samples: s.audit_samples,
            max_condition: s.max_condition,
        };
        PiecewiseAffineDemandFunction::new(domain, regions, stats)
    }
}
