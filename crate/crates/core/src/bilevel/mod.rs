//! Upper-level pricing: one QP per critical region, plus the joint problem,
//! equilibrium checks and the marginal-cost baseline used for comparison.

mod baseline;
mod joint;
mod kkt;
mod problem;
mod region_qp;

pub use baseline::{baseline_lowest_price, BaselineOptions, BaselineResult};
pub use joint::{joint_qp, solve_joint, JointSolution};
pub use kkt::{verify_kkt_equilibrium, EquilibriumPoint, KktReport};
pub use problem::CoupledProblem;
pub use region_qp::{
    region_qp, solve_bilevel, solve_region, BilevelResult, CandidateStatus, CandidateSummary,
    RegionCandidate, TIE_TOL,
};
