//! Linear-quadratic problems with mixed control delays: closed-form optimum, Monte Carlo
//! optimality verification and a Nash-equilibrium checker for stacked-control games.

mod closed_form;
mod model;
mod nash;
mod verify;


pub use closed_form::{lq_closed_form, lq_stated_candidate};
pub use model::{DenominatorReading, LqDiffusion, LqModel, LqSpec, TimeFunction};
pub use nash::{nash_check, GameSpec, NashOptions, NashReport, Player, PlayerVerdict};
pub use verify::{
    direction_bank, lq_verify_optimality, unilateral_check, DirectionFit, OptimalityReport, PerturbationEntry,
    VerifyOptions,
};
