//! Forward simulation of the controlled delay system and the Picard fixed-point solver.

mod control;
mod picard;
mod simulate;
mod system;

pub use control::ControlProcess;
pub use picard::{picard_solve, PicardReport, PicardWeights};
pub use simulate::{simulate, Trajectories};
pub(crate) use simulate::{control_memories, run_forward, Coefficients, ForwardParts};
pub use system::{
    fd_step, Arg, DelaySystem, Dims, InitialPath, LinearCoefficients, Orientation, QuadraticForm, ScalarCoefficient,
    LinearSchedule, QuadraticSchedule, ScalarFn, VectorCoefficient, VectorFn,
};
