use serde::{Deserialize, Serialize};

use super::closed_form::lq_closed_form;
use super::model::{block_system, player_costs, LqModel, LqSpec};
use super::verify::{direction_bank, unilateral_check, OptimalityReport, VerifyOptions};
use crate::adjoint_malliavin::{
    maximum_condition, solve_absde, solve_bsvie_linear, AdjointOptions, AdjointProblem, MaximumOptions,
    MaximumReport,
};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::sdde_forward::{ControlProcess, DelaySystem, ScalarCoefficient};

/// One player: a block of control components and a private cost.
#[derive(Debug, Clone)]
pub struct Player {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub running_cost: ScalarCoefficient,
    pub terminal_cost: ScalarCoefficient,
}

/// Shared dynamics with stacked controls, per-player costs and a candidate profile.
#[derive(Debug, Clone)]
pub struct GameSpec {
    /// Dynamics and kernels; its own costs are ignored.
    pub sys: DelaySystem,
    pub players: Vec<Player>,
    pub candidate: ControlProcess,
}

impl GameSpec {
    /// Independent LQ problems on separate state and control components. The candidate is the
    /// stack of the solo closed forms.
    pub fn decoupled_lq(grid: TimeGrid, models: &[LqModel]) -> Result<Self> {
        let sys = block_system(grid, models)?;
        let mut players = Vec::with_capacity(models.len());
        let mut candidate = ControlProcess::zero(&grid, models.len());
        for (i, m) in models.iter().enumerate() {
            let (running_cost, terminal_cost) = player_costs(grid, sys.dims, i, m);
            players.push(Player {
                name: format!("player{}", i + 1),
                offset: i,
                width: 1,
                running_cost,
                terminal_cost,
            });
            let solo = lq_closed_form(&LqSpec::new(grid, m.clone())?)?;
            candidate = solo.embed(&candidate, i)?;
        }
        let game = GameSpec {
            sys,
            players,
            candidate,
        };
        game.validate()?;
        Ok(game)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.sys.dims.m;
        if self.candidate.m != m || self.candidate.n_steps != self.sys.grid.n_steps {
            return Err(Error::InvalidInput("candidate does not match the game dimensions".into()));
        }
        let mut owned = vec![false; m];
        for p in &self.players {
            if p.width == 0 || p.offset + p.width > m {
                return Err(Error::config("players", format!("{} controls components outside 0..{m}", p.name)));
            }
            for c in &mut owned[p.offset..p.offset + p.width] {
                if *c {
                    return Err(Error::config("players", format!("{} shares a control component", p.name)));
                }
                *c = true;
            }
        }
        Ok(())
    }

    /// The system seen by player `i`: shared dynamics with that player's costs.
    pub fn player_system(&self, i: usize) -> DelaySystem {
        let p = &self.players[i];
        DelaySystem {
            running_cost: p.running_cost.clone(),
            terminal_cost: p.terminal_cost.clone(),
            ..self.sys.clone()
        }
    }

    /// Replaces player `i`'s block of the candidate by `candidate_i + rho·v`.
    pub fn deviate(&self, i: usize, v: &ControlProcess, rho: f64) -> Result<ControlProcess> {
        let p = &self.players[i];
        let full = v.embed(&ControlProcess::zero(&self.sys.grid, self.sys.dims.m), p.offset)?;
        self.candidate.plus_scaled(&full, rho)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashOptions {
    pub verify: VerifyOptions,
    pub adjoint: AdjointOptions,
    pub maximum: MaximumOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerVerdict {
    pub player: String,
    pub deviation: OptimalityReport,
    /// Stationarity residual restricted to the player's own components; absent when neither
    /// adjoint route applies.
    pub maximum: Option<MaximumReport>,
}

impl PlayerVerdict {
    pub fn passed(&self) -> bool {
        self.deviation.passed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub players: Vec<PlayerVerdict>,
}

impl NashReport {
    pub fn passed(&self) -> bool {
        self.players.iter().all(|p| p.passed())
    }

    pub fn failing_players(&self) -> Vec<&str> {
        self.players
            .iter()
            .filter(|p| !p.passed())
            .map(|p| p.player.as_str())
            .collect()
    }
}

/// Unilateral deviation test for every player with the others held at the candidate, plus the
/// player's own maximum-condition residual.
pub fn nash_check(game: &GameSpec, w: &BrownianEnsemble, opts: &NashOptions) -> Result<NashReport> {
    game.validate()?;
    let mut players = Vec::with_capacity(game.players.len());
    for (i, pl) in game.players.iter().enumerate() {
        let sys = game.player_system(i);
        let seed = opts.verify.direction_seed.wrapping_add(i as u64);
        let bank = direction_bank(&sys.grid, pl.width, opts.verify.directions, seed)?;
        let deviation = unilateral_check(&sys, &game.candidate, pl.offset, &bank, w, &opts.verify)?;
        let maximum = player_residual(&sys, &game.candidate, pl, w, opts)?;
        players.push(PlayerVerdict {
            player: pl.name.clone(),
            deviation,
            maximum,
        });
    }
    Ok(NashReport { players })
}

fn player_residual(
    sys: &DelaySystem,
    candidate: &ControlProcess,
    pl: &Player,
    w: &BrownianEnsemble,
    opts: &NashOptions,
) -> Result<Option<MaximumReport>> {
    let prob = AdjointProblem::new(sys, candidate, w, opts.adjoint)?;
    let adj = if sys.phi1.is_zero() {
        solve_absde(&prob)?
    } else if sys.psi1.is_zero() {
        solve_bsvie_linear(&prob)?
    } else {
        return Ok(None);
    };
    let full = maximum_condition(&prob, &adj, &opts.maximum)?;
    let m = full.m;
    let pick = |v: &[f64]| -> Vec<f64> {
        v.chunks(m)
            .flat_map(|c| c[pl.offset..pl.offset + pl.width].to_vec())
            .collect()
    };
    Ok(Some(MaximumReport {
        m: pl.width,
        mean: pick(&full.mean),
        std_err: pick(&full.std_err),
        ..full
    }))
}
