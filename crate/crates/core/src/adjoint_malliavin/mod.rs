//! Backward adjoint solvers by least-squares Monte Carlo, a finite-difference Malliavin
//! oracle, the duality identity and the maximum condition.

mod absde;
mod bsde;
mod bsvie;
mod duality;
mod malliavin;
mod maximum;
mod problem;
mod regression;

pub use absde::solve_absde;
pub use bsde::{solve_bsde_terminal, BsdeSolution};
pub use bsvie::solve_bsvie_linear;
pub use duality::{duality_check, duality_experiment, random_linear_instance, DualityReport};
pub use malliavin::{
    clark_ocone_check, default_bump, malliavin_fd, BrownianTerminal, BrownianTerminalSquared, ClarkOconeOptions,
    ClarkOconeReport, MalliavinSample, PathFunctional, StateTerminal,
};
pub use maximum::{hamiltonian, maximum_condition, HamiltonianEval, MaximumOptions, MaximumReport};
pub use problem::{AdjointMethod, AdjointOptions, AdjointProblem, AdjointSolution, BsvieParts};
pub use regression::{constant_value, Features, RegressionOptions, StepRegression};

#[cfg(test)]
mod tests;
