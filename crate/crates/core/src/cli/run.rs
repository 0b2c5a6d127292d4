use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde_json::{json, Value};

use super::config::{AdjointRoute, ControlConfig, ExperimentConfig, FunctionalConfig, SvieMode};
use super::report::{Check, RunReport, Series};
use crate::adjoint_malliavin::{
    clark_ocone_check, duality_experiment, maximum_condition, random_linear_instance, solve_absde,
    solve_bsvie_linear, AdjointOptions, AdjointProblem, AdjointSolution, BrownianTerminal, BrownianTerminalSquared,
    MaximumOptions, MaximumReport, PathFunctional, StateTerminal,
};
use crate::cost_opt::{cost_samples, gateaux, GateauxMode};
use crate::error::{Error, Result};
use crate::grid_rng::{sample_brownian, BrownianEnsemble, TimeGrid};
use crate::lq_game::{
    lq_closed_form, lq_stated_candidate, lq_verify_optimality, nash_check, GameSpec, LqSpec, OptimalityReport,
};
use crate::sdde_forward::{picard_solve, simulate, ControlProcess, DelaySystem, PicardWeights};
use crate::stats::{mean_var, McEstimate};
use crate::svie_variation::{equivalence_study, expansion_gap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    SvieCheck,
    Cost,
    GradCheck,
    AbsdeSolve,
    DualityCheck,
    ClarkOcone,
    LqVerify,
    NashCheck,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Simulate,
        Command::SvieCheck,
        Command::Cost,
        Command::GradCheck,
        Command::AbsdeSolve,
        Command::DualityCheck,
        Command::ClarkOcone,
        Command::LqVerify,
        Command::NashCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SvieCheck => "svie-check",
            Command::Cost => "cost",
            Command::GradCheck => "grad-check",
            Command::AbsdeSolve => "absde-solve",
            Command::DualityCheck => "duality-check",
            Command::ClarkOcone => "clark-ocone",
            Command::LqVerify => "lq-verify",
            Command::NashCheck => "nash-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown command `{s}`")))
    }
}

/// A finished run: the report plus named CSV tables.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<(String, Vec<u8>)>,
}

#[derive(Default)]
struct Collector {
    checks: Vec<Check>,
    estimates: BTreeMap<String, McEstimate>,
    series: Vec<Series>,
    details: serde_json::Map<String, Value>,
    tables: Vec<(String, Vec<u8>)>,
}

impl Collector {
    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn estimate(&mut self, name: impl Into<String>, e: McEstimate) {
        self.estimates.insert(name.into(), e);
    }

    fn detail(&mut self, key: &str, v: impl serde::Serialize) {
        self.details
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn table(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.tables.push((name.into(), buf));
        Ok(())
    }
}

/// Validates `config` and executes `command`.
pub fn run(command: Command, config: &ExperimentConfig, config_text: &str) -> Result<RunOutput> {
    let start = Instant::now();
    let grid = config.validate()?;
    let mut out = Collector::default();
    match command {
        Command::Simulate => cmd_simulate(config, grid, &mut out)?,
        Command::SvieCheck => cmd_svie_check(config, grid, &mut out)?,
        Command::Cost => cmd_cost(config, grid, &mut out)?,
        Command::GradCheck => cmd_grad_check(config, grid, &mut out)?,
        Command::AbsdeSolve => cmd_absde(config, grid, &mut out)?,
        Command::DualityCheck => cmd_duality(config, grid, &mut out)?,
        Command::ClarkOcone => cmd_clark_ocone(config, grid, &mut out)?,
        Command::LqVerify => cmd_lq_verify(config, grid, &mut out)?,
        Command::NashCheck => cmd_nash(config, grid, &mut out)?,
    }
    let report = RunReport {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_text: config_text.into(),
        config: config.clone(),
        passed: out.checks.iter().all(|c| c.passed),
        checks: out.checks,
        estimates: out.estimates,
        series: out.series,
        details: Value::Object(out.details),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        report,
        tables: out.tables,
    })
}

fn noise(cfg: &ExperimentConfig, grid: TimeGrid) -> Result<BrownianEnsemble> {
    sample_brownian(grid, cfg.mc.n_paths()?, cfg.mc.seed)
}

fn lq_spec(cfg: &ExperimentConfig, grid: TimeGrid) -> Result<Option<LqSpec>> {
    cfg.lq.as_ref().map(|m| LqSpec::new(grid, m.clone())).transpose()
}

fn problem(cfg: &ExperimentConfig, grid: TimeGrid) -> Result<(DelaySystem, Option<LqSpec>)> {
    if let Some(s) = &cfg.system {
        return Ok((s.build(grid)?, None));
    }
    match lq_spec(cfg, grid)? {
        Some(spec) => Ok((spec.build_system()?, Some(spec))),
        None => Err(Error::config("system", "this command needs a [system] or [lq] table")),
    }
}

fn control(
    spec: Option<&ControlConfig>,
    field: &str,
    grid: &TimeGrid,
    m: usize,
    lq: Option<&LqSpec>,
    fallback: impl FnOnce() -> Result<ControlProcess>,
) -> Result<ControlProcess> {
    let need_lq = || lq.ok_or_else(|| Error::config(field, "LQ candidates need an [lq] table"));
    match spec {
        None => fallback(),
        Some(ControlConfig::Path { components }) => ControlConfig::build_path(components, grid, m, field),
        Some(ControlConfig::LqClosedForm) => lq_closed_form(need_lq()?),
        Some(ControlConfig::LqStated) => lq_stated_candidate(need_lq()?),
    }
}

/// Configured control; the closed form for LQ problems and zero otherwise when absent.
fn candidate(cfg: &ExperimentConfig, sys: &DelaySystem, lq: Option<&LqSpec>) -> Result<ControlProcess> {
    control(cfg.control.as_ref(), "control", &sys.grid, sys.dims.m, lq, || match lq {
        Some(s) => lq_closed_form(s),
        None => Ok(ControlProcess::zero(&sys.grid, sys.dims.m)),
    })
}

/// Configured direction; the constant one when absent.
fn direction(cfg: &ExperimentConfig, sys: &DelaySystem, lq: Option<&LqSpec>) -> Result<ControlProcess> {
    control(cfg.direction.as_ref(), "direction", &sys.grid, sys.dims.m, lq, || {
        Ok(ControlProcess::constant(&sys.grid, &vec![1.0; sys.dims.m]))
    })
}

fn gateaux_estimate(g: &crate::cost_opt::GateauxEstimate) -> McEstimate {
    McEstimate {
        mean: g.value,
        std_err: g.std_err,
        n_paths: g.n_paths,
        seed: g.seed,
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let (sys, lq) = problem(cfg, grid)?;
    let u = candidate(cfg, &sys, lq.as_ref())?;
    let w = noise(cfg, grid)?;
    let tr = simulate(&sys, &u, &w)?;
    let cost = McEstimate::from_samples(&cost_samples(&sys, &tr)?, w.seed);
    out.estimate("cost", cost);
    for c in 0..sys.dims.n {
        let mut s = Series::new(format!("mean_x{c}"));
        for k in 0..=grid.n_steps {
            let xs: Vec<f64> = (0..w.n_paths).map(|p| tr.x(p, k)[c]).collect();
            let (m, v) = mean_var(&xs);
            s.push(grid.t(k), m, (v / w.n_paths as f64).sqrt());
        }
        out.series.push(s);
    }
    let finite = tr.x.iter().all(|v| v.is_finite());
    out.check(Check::new("finite_paths", finite, cost.mean, f64::NAN));
    if cfg.simulate.write_paths {
        out.table("trajectories.csv", |b| tr.write_csv(b))?;
    }
    if let Some(pc) = &cfg.simulate.picard {
        let weights = PicardWeights::for_system(&sys, pc.lipschitz);
        let (fixed, rep) = picard_solve(&sys, &u, &w, weights, pc.tol, pc.max_iter)?;
        let worst = rep.ratios.iter().skip(1).copied().fold(0.0, f64::max);
        out.check(Check::new("picard_contraction", worst <= pc.max_ratio, worst, pc.max_ratio));
        let agree = fixed.x.iter().zip(&tr.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.detail("picard_vs_euler_max_diff", agree);
        let mut s = Series::new("picard_gap");
        for (i, g) in rep.gaps.iter().enumerate() {
            s.push((i + 1) as f64, *g, 0.0);
        }
        out.series.push(s);
        out.detail("picard", &rep);
    }
    Ok(())
}

fn cmd_svie_check(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let (sys, lq) = problem(cfg, grid)?;
    let u = candidate(cfg, &sys, lq.as_ref())?;
    let v = direction(cfg, &sys, lq.as_ref())?;
    let w = noise(cfg, grid)?;
    let opts = &cfg.svie_check;
    match opts.mode {
        SvieMode::Expansion => {
            let mut gaps = expansion_gap(&sys, &u, &v, &opts.rhos, &w)?;
            gaps.sort_by(|a, b| b.rho.total_cmp(&a.rho));
            let mut s = Series::new("gap");
            for g in &gaps {
                s.push(g.rho, g.gap, g.std_err);
            }
            out.series.push(s);
            let linear = sys.drift.has_constant_jacobian() && sys.diffusion.has_constant_jacobian();
            let largest = gaps.first().map_or(f64::NAN, |g| g.gap);
            let smallest = gaps.last().map_or(f64::NAN, |g| g.gap);
            if linear {
                let worst = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
                out.check(Check::new("expansion_exact_for_linear", worst <= opts.linear_tolerance, worst, opts.linear_tolerance));
            } else {
                let decreasing = gaps.windows(2).all(|p| p[1].gap < p[0].gap);
                out.check(Check::new("expansion_gap_decreasing", decreasing, smallest, largest));
                let bound = largest / opts.reduction_factor;
                out.check(Check::new("expansion_gap_reduction", smallest <= bound, smallest, bound));
            }
            out.detail("gaps", &gaps);
        }
        SvieMode::Equivalence => {
            let rep = equivalence_study(&sys, &u, &v, &w, &opts.factors, opts.svie)?;
            let mut s = Series::new("discrepancy");
            for l in &rep.levels {
                s.push(l.dt, l.discrepancy, l.std_err);
            }
            out.series.push(s);
            let [lo, hi] = opts.order_range;
            out.check(Check::new("equivalence_decreasing", rep.strictly_decreasing(), rep.fitted_order, f64::NAN));
            out.check(
                Check::new("equivalence_order", (lo..=hi).contains(&rep.fitted_order), rep.fitted_order, hi)
                    .note(format!("admissible range [{lo}, {hi}]")),
            );
            out.detail("equivalence", &rep);
        }
    }
    Ok(())
}

fn cmd_cost(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let (sys, lq) = problem(cfg, grid)?;
    let u = candidate(cfg, &sys, lq.as_ref())?;
    let w = noise(cfg, grid)?;
    let samples = cost_samples(&sys, &simulate(&sys, &u, &w)?)?;
    let est = McEstimate::from_samples(&samples, w.seed);
    out.estimate("cost", est);
    out.check(Check::new("finite_cost", est.mean.is_finite(), est.mean, f64::NAN));
    Ok(())
}

fn cmd_grad_check(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let (sys, lq) = problem(cfg, grid)?;
    let u = candidate(cfg, &sys, lq.as_ref())?;
    let v = direction(cfg, &sys, lq.as_ref())?;
    let w = noise(cfg, grid)?;
    let opts = &cfg.grad_check;
    let analytic = gateaux(&sys, &u, &v, &w, GateauxMode::AnalyticVariational)?;
    let fd = gateaux(&sys, &u, &v, &w, opts.finite_difference)?;
    let diff = (analytic.value - fd.value).abs();
    let tol = opts.sigmas * analytic.std_err.hypot(fd.std_err) + opts.relative_bias * (1.0 + analytic.value.abs());
    out.estimate("gateaux_analytic", gateaux_estimate(&analytic));
    out.estimate("gateaux_finite_difference", gateaux_estimate(&fd));
    out.check(Check::new("gateaux_agreement", diff <= tol, diff, tol));
    Ok(())
}

fn solve_adjoint(prob: &AdjointProblem, route: AdjointRoute) -> Result<AdjointSolution> {
    match route {
        AdjointRoute::Absde => solve_absde(prob),
        AdjointRoute::Bsvie => solve_bsvie_linear(prob),
        AdjointRoute::Auto if prob.sys.phi1.is_zero() => solve_absde(prob),
        AdjointRoute::Auto => solve_bsvie_linear(prob),
    }
}

fn stationarity(
    sys: &DelaySystem,
    u: &ControlProcess,
    w: &BrownianEnsemble,
    adjoint: AdjointOptions,
    opts: MaximumOptions,
    bias_dt: f64,
) -> Result<(AdjointSolution, MaximumReport)> {
    let prob = AdjointProblem::new(sys, u, w, adjoint)?;
    let adj = solve_adjoint(&prob, AdjointRoute::Auto)?;
    let opts = MaximumOptions {
        bias: opts.bias + bias_dt * sys.grid.dt,
        ..opts
    };
    let rep = maximum_condition(&prob, &adj, &opts)?;
    Ok((adj, rep))
}

fn residual_series(name: &str, rep: &MaximumReport) -> Series {
    let mut s = Series::new(name);
    for (k, t) in rep.times.iter().enumerate() {
        s.push(*t, rep.mean[k * rep.m], rep.std_err[k * rep.m]);
    }
    s
}

fn cmd_absde(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let (sys, lq) = problem(cfg, grid)?;
    let u = candidate(cfg, &sys, lq.as_ref())?;
    let w = noise(cfg, grid)?;
    let opts = &cfg.absde;
    let prob = AdjointProblem::new(&sys, &u, &w, opts.adjoint)?;
    let adj = solve_adjoint(&prob, opts.route)?;
    out.detail("method", format!("{:?}", adj.method));
    let n = sys.dims.n;
    for c in 0..n {
        let mut sp = Series::new(format!("p{c}_mean"));
        let mut sq = Series::new(format!("q{c}_mean"));
        for k in 0..=grid.n_steps {
            let (pm, ps) = adj.moments(false, c, k);
            let (qm, qs) = adj.moments(true, c, k);
            let root = (w.n_paths as f64).sqrt();
            sp.push(grid.t(k), pm, ps / root);
            sq.push(grid.t(k), qm, qs / root);
        }
        out.series.push(sp);
        out.series.push(sq);
    }
    if let Some(e) = opts.expected_p {
        let dp = adj.p.iter().map(|p| (p - e).abs()).fold(0.0, f64::max);
        let dq = adj.q.iter().map(|q| q.abs()).fold(0.0, f64::max);
        out.check(Check::new("adjoint_p_constant", dp <= opts.tolerance, dp, opts.tolerance));
        out.check(Check::new("adjoint_q_zero", dq <= opts.tolerance, dq, opts.tolerance));
    }
    out.table("adjoint.csv", |b| adj.write_csv(b))?;
    if opts.maximum {
        let mo = MaximumOptions {
            bias: opts.maximum_options.bias + opts.maximum_bias_dt * grid.dt,
            ..opts.maximum_options
        };
        let rep = maximum_condition(&prob, &adj, &mo)?;
        out.check(Check::new("maximum_condition", rep.passed(), rep.worst_excess(), 0.0));
        out.series.push(residual_series("residual", &rep));
        out.table("maximum.csv", |b| rep.write_csv(b))?;
    }
    Ok(())
}

fn cmd_duality(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let opts = &cfg.duality;
    let w = noise(cfg, grid)?;
    let instances: Vec<(DelaySystem, ControlProcess, ControlProcess)> = match opts.instances {
        Some(count) => (0..count as u64)
            .map(|i| random_linear_instance(grid, opts.instance_seed + i))
            .collect::<Result<_>>()?,
        None => {
            let (sys, lq) = problem(cfg, grid)?;
            let u = candidate(cfg, &sys, lq.as_ref())?;
            let v = direction(cfg, &sys, lq.as_ref())?;
            vec![(sys, u, v)]
        }
    };
    let mut lhs = Series::new("lhs");
    let mut rhs = Series::new("rhs");
    let mut reports = Vec::new();
    for (i, (sys, u, v)) in instances.iter().enumerate() {
        let rep = duality_experiment(sys, u, v, &w, opts.adjoint, opts.sigmas, opts.budget)?;
        lhs.push(i as f64, rep.lhs.mean, rep.lhs.std_err);
        rhs.push(i as f64, rep.rhs.mean, rep.rhs.std_err);
        out.estimate(format!("duality[{i}].lhs"), rep.lhs);
        out.estimate(format!("duality[{i}].rhs"), rep.rhs);
        out.check(Check::new(format!("duality[{i}]"), rep.passed(), rep.gap(), rep.tolerance));
        reports.push(rep);
    }
    out.series.push(lhs);
    out.series.push(rhs);
    out.detail("duality", &reports);
    Ok(())
}

fn cmd_clark_ocone(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let opts = &cfg.clark_ocone;
    let w = noise(cfg, grid)?;
    let mut reports = Vec::new();
    for fc in &opts.functionals {
        let f: Box<dyn PathFunctional> = match fc {
            FunctionalConfig::BrownianTerminal => Box::new(BrownianTerminal),
            FunctionalConfig::BrownianTerminalSquared => Box::new(BrownianTerminalSquared),
            FunctionalConfig::StateTerminal { component } => {
                let (sys, lq) = problem(cfg, grid)?;
                let u = candidate(cfg, &sys, lq.as_ref())?;
                Box::new(StateTerminal::new(sys, u, *component)?)
            }
        };
        let rep = clark_ocone_check(f.as_ref(), &w, None, &opts.options)?;
        let label = rep.functional.clone();
        out.check(Check::new(
            format!("reconstruction[{label}]"),
            rep.relative_l2_error <= opts.max_relative_error,
            rep.relative_l2_error,
            opts.max_relative_error,
        ));
        out.check(Check::new(
            format!("isometry[{label}]"),
            rep.isometry_passed(),
            rep.isometry_gap(),
            rep.isometry_tolerance,
        ));
        out.estimate(format!("mean[{label}]"), rep.mean);
        out.estimate(format!("isometry[{label}]"), rep.isometry);
        reports.push(rep);
    }
    out.detail("clark_ocone", &reports);
    Ok(())
}

fn verdict_summary(rep: &OptimalityReport) -> Value {
    json!({
        "passed": rep.passed(),
        "violations": rep.violations,
        "max_abs_rho_star": rep.max_abs_rho_star(),
        "cost": rep.base,
    })
}

fn cmd_lq_verify(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let spec = lq_spec(cfg, grid)?.ok_or_else(|| Error::config("lq", "lq-verify needs an [lq] table"))?;
    let opts = &cfg.lq_verify;
    let w = noise(cfg, grid)?;
    let candidates = [
        ("closed_form", lq_closed_form(&spec)?),
        ("stated", lq_stated_candidate(&spec)?),
    ];
    let mut passing = Vec::new();
    let mut summaries = serde_json::Map::new();
    for (name, u) in &candidates {
        let rep = lq_verify_optimality(&spec, u, &w, &opts.verify)?;
        if rep.passed() {
            passing.push(*name);
        }
        out.estimate(format!("cost[{name}]"), rep.base);
        summaries.insert((*name).into(), verdict_summary(&rep));
        out.table(&format!("lq_verify_{name}.csv"), |b| rep.write_csv(b))?;
        for f in &rep.fits {
            let mut s = Series::new(format!("{name}/direction{}", f.direction));
            s.push(0.0, rep.base.mean, rep.base.std_err);
            for e in rep.entries.iter().filter(|e| e.direction == f.direction) {
                s.push(e.rho, e.cost.mean, e.cost.std_err);
            }
            s.points.sort_by(|a, b| a.x.total_cmp(&b.x));
            out.series.push(s);
        }
    }
    out.detail("candidates", summaries);
    out.check(
        Check::new("exactly_one_candidate_passes", passing.len() == 1, passing.len() as f64, 1.0)
            .note(format!("passing: {passing:?}")),
    );
    let winner = (passing.len() == 1).then(|| passing[0]);
    out.detail("winner", winner);
    let Some(winner) = winner else {
        return Ok(());
    };
    let u_star = &candidates.iter().find(|(n, _)| *n == winner).expect("winner is a candidate").1;
    out.detail(
        "resolved_control",
        (0..grid.n_steps).map(|k| [grid.t(k), u_star.at(0, k)[0]]).collect::<Vec<_>>(),
    );
    if opts.stationarity {
        let sys = spec.build_system()?;
        let (_, at_opt) = stationarity(&sys, u_star, &w, opts.adjoint, opts.maximum, opts.maximum_bias_dt)?;
        out.check(Check::new("stationarity_at_optimum", at_opt.passed(), at_opt.max_abs_mean(), at_opt.bias));
        out.series.push(residual_series("residual_at_optimum", &at_opt));
        out.table("maximum_at_optimum.csv", |b| at_opt.write_csv(b))?;

        let shifted = u_star.plus_scaled(&ControlProcess::constant(&grid, &[opts.shift]), 1.0)?;
        let (_, off) = stationarity(&sys, &shifted, &w, opts.adjoint, opts.maximum, opts.maximum_bias_dt)?;
        let r1_min = (0..grid.n_steps)
            .map(|k| spec.model.r1.at(grid.t(k)))
            .fold(f64::INFINITY, f64::min);
        let worst_se = off.std_err.iter().copied().fold(0.0, f64::max);
        let floor = opts.shift.abs() * r1_min - off.sigmas * worst_se - off.bias;
        let min_interior = off.min_abs_mean_between(grid.t0, grid.t_end);
        out.check(
            Check::new("residual_off_optimum", min_interior >= floor, min_interior, floor)
                .note(format!("control shifted by {}", opts.shift)),
        );
        out.series.push(residual_series("residual_shifted", &off));
    }
    Ok(())
}

fn cmd_nash(cfg: &ExperimentConfig, grid: TimeGrid, out: &mut Collector) -> Result<()> {
    let game_cfg = cfg
        .game
        .as_ref()
        .ok_or_else(|| Error::config("game", "nash-check needs a [game] table"))?;
    let mut game = GameSpec::decoupled_lq(grid, &game_cfg.players)?;
    if let Some(d) = &game_cfg.deviation {
        if d.player == 0 || d.player > game.players.len() {
            return Err(Error::config("game.deviation.player", format!("no player {}", d.player)));
        }
        let i = d.player - 1;
        let v = ControlConfig::build_path(&d.components, &grid, game.players[i].width, "game.deviation.components")?;
        game.candidate = game.deviate(i, &v, d.rho)?;
    }
    let w = noise(cfg, grid)?;
    let rep = nash_check(&game, &w, &cfg.nash)?;
    for pv in &rep.players {
        out.check(Check::new(
            format!("unilateral[{}]", pv.player),
            pv.passed(),
            pv.deviation.violations as f64,
            0.0,
        ).note(format!("max |rho*| = {:.4}", pv.deviation.max_abs_rho_star())));
        out.estimate(format!("cost[{}]", pv.player), pv.deviation.base);
        if let Some(m) = &pv.maximum {
            out.series.push(residual_series(&format!("residual[{}]", pv.player), m));
        }
    }
    out.detail("failing_players", rep.failing_players());
    out.detail(
        "players",
        rep.players
            .iter()
            .map(|p| (p.player.clone(), verdict_summary(&p.deviation)))
            .collect::<BTreeMap<_, _>>(),
    );
    Ok(())
}
