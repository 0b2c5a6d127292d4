//! Acceptance suite: one line per criterion, each driven by a bundled config.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use xdelay::cli::{load_config, run, Command, Overrides, RunReport};
use xdelay::Result;

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"))
}

fn execute(command: Command, name: &str, overrides: &Overrides) -> Result<(RunReport, f64)> {
    let start = Instant::now();
    let (cfg, text) = load_config(&config_path(name), overrides)?;
    let out = run(command, &cfg, &text)?;
    Ok((out.report, start.elapsed().as_secs_f64()))
}

fn check(r: &RunReport, name: &str) -> bool {
    r.check(name).is_some_and(|c| c.passed)
}

fn value(r: &RunReport, name: &str) -> f64 {
    r.check(name).and_then(|c| c.value).unwrap_or(f64::NAN)
}

fn within(secs: f64, budget: f64) -> (bool, String) {
    (secs <= budget, format!("{secs:.1}s of {budget:.0}s"))
}

fn lq_criteria(out: &mut Vec<Outcome>) -> Result<()> {
    let (r, secs) = execute(Command::LqVerify, "lq_worked_example", &Overrides::default())?;
    let cands = &r.details["candidates"];
    let winner = r.details["winner"].as_str().unwrap_or("none").to_string();
    let (fast, time) = within(secs, 120.0);
    out.push(Outcome {
        id: 1,
        title: "LQ closed form, exactly one candidate optimal",
        passed: check(&r, "exactly_one_candidate_passes") && fast,
        detail: format!(
            "winner = {winner}; closed_form passed = {}, stated (T-t+1) passed = {}; max |rho*| {:.4} vs {:.4}; {time}",
            cands["closed_form"]["passed"],
            cands["stated"]["passed"],
            cands["closed_form"]["max_abs_rho_star"].as_f64().unwrap_or(f64::NAN),
            cands["stated"]["max_abs_rho_star"].as_f64().unwrap_or(f64::NAN),
        ),
    });
    let at = r.check("stationarity_at_optimum");
    let off = r.check("residual_off_optimum");
    out.push(Outcome {
        id: 8,
        title: "maximum condition at the optimum and off it",
        passed: check(&r, "stationarity_at_optimum") && check(&r, "residual_off_optimum") && fast,
        detail: format!(
            "max |G| at u* = {:.3e} (bound 3 SE + {:.3e}); min interior |G| at u*+1 = {:.4} (floor {:.4}); shares run of criterion 1",
            value(&r, "stationarity_at_optimum"),
            at.and_then(|c| c.tolerance).unwrap_or(f64::NAN),
            value(&r, "residual_off_optimum"),
            off.and_then(|c| c.tolerance).unwrap_or(f64::NAN),
        ),
    });
    Ok(())
}

fn adjoint_degeneracy() -> Result<Outcome> {
    let (r, secs) = execute(Command::AbsdeSolve, "lq_adjoint_degeneracy", &Overrides::default())?;
    let (fast, time) = within(secs, 30.0);
    Ok(Outcome {
        id: 2,
        title: "adjoint degeneracy p = 1, q = 0",
        passed: check(&r, "adjoint_p_constant") && check(&r, "adjoint_q_zero") && fast,
        detail: format!(
            "max |p - 1| = {:.1e}, max |q| = {:.1e} (tolerance 1e-8); method {}; {time}",
            value(&r, "adjoint_p_constant"),
            value(&r, "adjoint_q_zero"),
            r.details["method"],
        ),
    })
}

fn duality() -> Result<Outcome> {
    let (r, secs) = execute(Command::DualityCheck, "duality_random_linear", &Overrides::default())?;
    let (fast, time) = within(secs, 300.0);
    let rows: Vec<&_> = r.checks.iter().filter(|c| c.name.starts_with("duality[")).collect();
    let worst = rows
        .iter()
        .map(|c| c.value.unwrap_or(f64::NAN) / c.tolerance.unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    Ok(Outcome {
        id: 3,
        title: "duality identity on 5 random linear instances",
        passed: rows.len() == 5 && rows.iter().all(|c| c.passed) && fast,
        detail: format!(
            "{} of {} within 3 SE + 0.5 sqrt(dt) scale; worst gap/tolerance {worst:.3}; {time}",
            rows.iter().filter(|c| c.passed).count(),
            rows.len()
        ),
    })
}

fn equivalence() -> Result<Outcome> {
    let (r, secs) = execute(Command::SvieCheck, "svie_equivalence", &Overrides::default())?;
    let (fast, time) = within(secs, 180.0);
    let levels: Vec<String> = r.details["equivalence"]["levels"]
        .as_array()
        .map(|ls| {
            ls.iter()
                .map(|l| format!("dt=1/{} {:.4}", l["n_steps"], l["discrepancy"].as_f64().unwrap_or(f64::NAN)))
                .collect()
        })
        .unwrap_or_default();
    Ok(Outcome {
        id: 4,
        title: "SDDE to SVIE equivalence under refinement",
        passed: check(&r, "equivalence_decreasing") && check(&r, "equivalence_order") && fast,
        detail: format!(
            "{}; fitted order {:.3} (range [0.35, 0.65]); reference dt=1/{}; {time}",
            levels.join(", "),
            value(&r, "equivalence_order"),
            r.details["equivalence"]["reference_steps"],
        ),
    })
}

fn expansion() -> Result<Outcome> {
    let (q, s1) = execute(Command::SvieCheck, "svie_expansion_quadratic", &Overrides::default())?;
    let (l, s2) = execute(Command::SvieCheck, "svie_expansion_linear", &Overrides::default())?;
    let (fast, time) = within(s1 + s2, 120.0);
    let gaps: Vec<String> = q.series[0].points.iter().map(|p| format!("{:.2e}", p.y)).collect();
    Ok(Outcome {
        id: 5,
        title: "first-order expansion gap",
        passed: check(&q, "expansion_gap_decreasing")
            && check(&q, "expansion_gap_reduction")
            && check(&l, "expansion_exact_for_linear")
            && fast,
        detail: format!(
            "quadratic gaps at rho 0.4..0.05: [{}]; linear max gap {:.1e} (bound 1e-10); {time}",
            gaps.join(", "),
            value(&l, "expansion_exact_for_linear"),
        ),
    })
}

fn clark_ocone() -> Result<Outcome> {
    let (r, secs) = execute(Command::ClarkOcone, "clark_ocone", &Overrides::default())?;
    let (fast, time) = within(secs, 60.0);
    let parts: Vec<String> = ["W(T)", "W(T)^2"]
        .iter()
        .map(|f| {
            format!(
                "{f}: rel L2 {:.4}, isometry gap {:.4} (5 SE {:.4})",
                value(&r, &format!("reconstruction[{f}]")),
                value(&r, &format!("isometry[{f}]")),
                r.check(&format!("isometry[{f}]")).and_then(|c| c.tolerance).unwrap_or(f64::NAN),
            )
        })
        .collect();
    Ok(Outcome {
        id: 6,
        title: "Clark-Ocone reconstruction and isometry",
        passed: r.passed && r.checks.len() == 4 && fast,
        detail: format!("{}; {time}", parts.join("; ")),
    })
}

fn picard() -> Result<Outcome> {
    let (r, secs) = execute(Command::Simulate, "picard_contraction", &Overrides::default())?;
    let (fast, time) = within(secs, 30.0);
    Ok(Outcome {
        id: 7,
        title: "Picard contraction",
        passed: check(&r, "picard_contraction") && fast,
        detail: format!(
            "worst ratio after the first iteration {:.3e} (bound 0.5); {} iterations; {time}",
            value(&r, "picard_contraction"),
            r.details["picard"]["iterations"],
        ),
    })
}

fn nash() -> Result<Outcome> {
    let (ok, s1) = execute(Command::NashCheck, "nash_decoupled", &Overrides::default())?;
    let (dev, s2) = execute(Command::NashCheck, "nash_deviation", &Overrides::default())?;
    let (fast, time) = within(s1 + s2, 180.0);
    let failing = &dev.details["failing_players"];
    Ok(Outcome {
        id: 9,
        title: "Nash check on a decoupled two-player game",
        passed: ok.passed && *failing == serde_json::json!(["player1"]) && fast,
        detail: format!(
            "solo closed forms: failing {}; player 1 deviated: failing {failing}; {time}",
            ok.details["failing_players"]
        ),
    })
}

fn determinism() -> Result<Outcome> {
    let small = Overrides {
        paths: Some(1000),
        ..Overrides::default()
    };
    let runs: [(Command, &str, &Overrides); 13] = [
        (Command::LqVerify, "lq_worked_example", &small),
        (Command::DualityCheck, "duality_random_linear", &small),
        (Command::AbsdeSolve, "lq_adjoint_degeneracy", &Overrides::default()),
        (Command::SvieCheck, "svie_equivalence", &Overrides::default()),
        (Command::SvieCheck, "svie_expansion_quadratic", &Overrides::default()),
        (Command::SvieCheck, "svie_expansion_linear", &Overrides::default()),
        (Command::ClarkOcone, "clark_ocone", &Overrides::default()),
        (Command::Simulate, "picard_contraction", &Overrides::default()),
        (Command::Simulate, "simulate", &Overrides::default()),
        (Command::Cost, "cost", &Overrides::default()),
        (Command::GradCheck, "grad_check", &Overrides::default()),
        (Command::NashCheck, "nash_decoupled", &Overrides::default()),
        (Command::NashCheck, "nash_deviation", &Overrides::default()),
    ];
    let mut mismatched = Vec::new();
    for (command, name, ov) in runs {
        let (first, _) = execute(command, name, ov)?;
        let (cfg, text) = (first.config.clone(), first.config_text.clone());
        let again = run(command, &cfg, &text)?.report;
        if first.without_timing().to_json()? != again.without_timing().to_json()? {
            mismatched.push(name);
        }
    }
    Ok(Outcome {
        id: 10,
        title: "bit-exact reproduction from the embedded config",
        passed: mismatched.is_empty(),
        detail: format!(
            "{} bundled configs re-run from their report echo, {} mismatched {mismatched:?}; lq_worked_example and duality_random_linear at 1000 paths",
            runs.len(),
            mismatched.len()
        ),
    })
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let record = |outcomes: &mut Vec<Outcome>, id: usize, title: &'static str, r: Result<Outcome>| match r {
        Ok(o) => outcomes.push(o),
        Err(e) => outcomes.push(Outcome {
            id,
            title,
            passed: false,
            detail: format!("error: {e}"),
        }),
    };
    if let Err(e) = lq_criteria(&mut outcomes) {
        for (id, title) in [(1, "LQ closed form"), (8, "maximum condition")] {
            outcomes.push(Outcome {
                id,
                title,
                passed: false,
                detail: format!("error: {e}"),
            });
        }
    }
    record(&mut outcomes, 2, "adjoint degeneracy", adjoint_degeneracy());
    record(&mut outcomes, 3, "duality identity", duality());
    record(&mut outcomes, 4, "SDDE to SVIE equivalence", equivalence());
    record(&mut outcomes, 5, "first-order expansion gap", expansion());
    record(&mut outcomes, 6, "Clark-Ocone", clark_ocone());
    record(&mut outcomes, 7, "Picard contraction", picard());
    record(&mut outcomes, 9, "Nash check", nash());
    record(&mut outcomes, 10, "determinism", determinism());
    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!(
            "criterion {:>2} [{}] {}: {}",
            o.id,
            if o.passed { "PASS" } else { "FAIL" },
            o.title,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
