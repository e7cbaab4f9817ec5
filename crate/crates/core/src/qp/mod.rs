//! Dense convex QP solving and polyhedral utilities.

mod polytope;
mod problem;
mod solver;

pub use polytope::{
    chebyshev_center, chebyshev_center_capped, contains_polytope, facet_center, overlap_radius,
    remove_redundant, HalfSpaces,
};
pub use problem::{KktResiduals, PrimalDualPoint, QpProblem};
pub use solver::{solve_qp, SolverOptions};
