//! Variational equation, its delay-free Volterra form and the first-order expansion check.

mod equivalence;
mod expansion;
mod linearize;
mod svie;
mod variational;

pub use equivalence::{equivalence_study, EquivalenceLevel, EquivalenceReport};
pub use expansion::{expansion_gap, ExpansionGap};
pub use linearize::{linearize, Linearization, PathField};
pub use svie::{
    assemble_svie, simulate_svie, DelayIndicator, FubiniConvention, SvieOptions, SvieSystem, SvieTrajectories,
};
pub use variational::{control_forcing, simulate_variational, Forcing, VariationalSystem};
