//! Numerical toolkit for controlled stochastic differential equations with extended mixed
//! delays: point delay, distributed delay and noisy memory in both state and control.

pub mod adjoint_malliavin;
pub mod cli;
pub mod cost_opt;
pub mod error;
pub mod grid_rng;
pub mod kernels;
pub mod lq_game;
pub mod sdde_forward;
pub mod stats;
pub mod svie_variation;

pub use error::{Error, Result};
