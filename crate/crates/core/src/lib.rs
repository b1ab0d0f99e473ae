//! Solver and verification toolkit for common-agency games: truthful bidding
//! responses, truthful-equilibrium search and certification, sampled audits
//! of the structural assumptions, and Pareto-efficiency checks.

pub mod agent_opt;
pub mod assumptions;
pub mod builtin;
pub mod efficiency;
pub mod equilibrium;
pub mod error;
pub mod expr;
pub mod game;
pub mod report;
pub mod truthful;

pub use assumptions::{classify_structure, validity_report, AuditConfig, StructureProfile, ValidityReport, Verdict};
pub use builtin::{catalogue, get_default, get_game, Builtin, ClosedForm};
pub use efficiency::{check_efficiency, frontier_sample, DominanceWitness, Efficiency};
pub use equilibrium::{solve_truthful, verify_truthful_equilibrium, Candidate, ConditionReport, SolveConfig};
pub use error::{Error, Result};
pub use game::{
    ActionSpace, Allocation, BiddingProfile, Direction, Flag, GameDefinition, GameSpec, Knot, UtilityVector,
};
pub use truthful::{is_truthful, truthful_profile, truthful_response};
