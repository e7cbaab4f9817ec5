//! Explicit solution of the traffic problem as a function of station prices.

mod explore;
mod export;
mod region;
mod sensitivity;

pub use explore::{
    evaluate, explore, region_at, ExploreOptions, ExploreStats, PiecewiseAffineDemandFunction,
    LOCATE_TOL,
};
pub use export::{PartitionFile, PolicyRecord, RegionRecord, PARTITION_SCHEMA_VERSION};
pub use region::{build_region, CriticalRegion, PriceBox, DIM_TOL};
pub use sensitivity::{
    assemble_sensitivity, policy_for_basis, select_basis, sensitivity_at, AffinePolicy,
    SensitivitySystem, SolutionLayout, MAX_CONDITION,
};
