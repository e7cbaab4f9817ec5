//! Distribution network, its dispatch LP and the dual used by the upper level.

mod case;
mod dual;
mod io;
mod opf;

pub use case::{Bus, DistributionCase, FlowCoefficients, Generator, Line};
pub use dual::{assemble_dual, DualLayout, DualProblem};
pub use io::{
    load_grid, parse_grid, BusRecord, GeneratorRecord, GridFile, LineRecord, GRID_SCHEMA_VERSION,
};
pub use opf::{assemble_opf, lmp_degenerate, solve_opf, OpfLayout, OpfSolution};
