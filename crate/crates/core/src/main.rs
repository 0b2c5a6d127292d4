use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xdelay::cli::{load_config, run, write_outputs, Command, Overrides};

#[derive(Parser)]
#[command(name = "xdelay", version, about = "Monte Carlo experiments for controlled SDEs with mixed delays")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Forward Euler simulation, optionally with the Picard contraction study.
    Simulate(Common),
    /// First-order expansion gap or Volterra-form refinement study.
    SvieCheck(Common),
    /// Monte Carlo cost of the configured control.
    Cost(Common),
    /// Analytic directional derivative against finite differences.
    GradCheck(Common),
    /// Adjoint equation and, optionally, the maximum condition.
    AbsdeSolve(Common),
    /// Duality identity between the variational equation and the adjoint.
    DualityCheck(Common),
    /// Clark-Ocone reconstruction and isometry.
    ClarkOcone(Common),
    /// Optimality test of both LQ candidates.
    LqVerify(Common),
    /// Unilateral deviation test for every player.
    NashCheck(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    paths: Option<i64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    t0: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Output directory for report.json, plot.csv and command tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::SvieCheck(c) => (Command::SvieCheck, c),
        Sub::Cost(c) => (Command::Cost, c),
        Sub::GradCheck(c) => (Command::GradCheck, c),
        Sub::AbsdeSolve(c) => (Command::AbsdeSolve, c),
        Sub::DualityCheck(c) => (Command::DualityCheck, c),
        Sub::ClarkOcone(c) => (Command::ClarkOcone, c),
        Sub::LqVerify(c) => (Command::LqVerify, c),
        Sub::NashCheck(c) => (Command::NashCheck, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        paths: common.paths,
        steps: common.steps,
        t0: common.t0,
        t_end: common.t_end,
        delta: common.delta,
    };
    let result = load_config(&common.config, &overrides).and_then(|(cfg, text)| {
        let output = run(command, &cfg, &text)?;
        if let Some(dir) = &common.out {
            write_outputs(dir, &output)?;
        }
        Ok(output)
    });
    match result {
        Ok(output) => {
            let r = &output.report;
            for c in &r.checks {
                let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
                let tol = c.tolerance.map_or(String::new(), |t| format!(" (tolerance {t:.6e})"));
                println!("{} {}: {value}{tol}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
            println!("{} finished in {:.2}s", r.command, r.wall_time_s);
            if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
