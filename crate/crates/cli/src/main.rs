//! Command-line front end over the library: four workflows with exit
//! codes suitable for CI.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numeric failure
//! (positivity violation), 3 no applicable criterion, 4 verification
//! failure (residual above tolerance).

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dde_permanence::experiments::{
    estimate_permanence, make_ensemble, verify_exact_solution, EnsembleSpec, ExactSolution,
};
use dde_permanence::hypotheses::{analyze, CheckOptions, GridSpec, VerdictKind};
use dde_permanence::integrator::{integrate, InitialSegment, IntegrateError, IntegrateOptions};
use dde_permanence::models::{builtin, ModelFixture, BUILTIN_NAMES};
use dde_permanence::schema;
use dde_permanence::system::SystemSpec;
use dde_permanence::timefn::CoefficientFn;

#[derive(Parser)]
#[command(
    name = "ddeperm",
    version,
    about = "Simulate delay systems and certify persistence/permanence conditions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a system and write a CSV trajectory plus a JSON summary.
    Simulate(SimulateArgs),
    /// Run the hypothesis certificates and the verdict logic.
    Check(CheckArgs),
    /// Check a closed-form solution against the right-hand side.
    Verify(VerifyArgs),
    /// Ensemble estimate of empirical floors and ceilings.
    Permanence(PermanenceArgs),
}

#[derive(Args)]
struct Source {
    /// Path to a JSON spec file.
    #[arg(long, conflicts_with = "builtin")]
    spec: Option<PathBuf>,
    /// Name of a built-in model (see --list).
    #[arg(long)]
    builtin: Option<String>,
}

impl Source {
    fn load(&self) -> Result<(SystemSpec, Option<ModelFixture>)> {
        match (&self.spec, &self.builtin) {
            (Some(path), None) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let sys = schema::from_json(&text).context("parsing the spec file")?;
                Ok((sys, None))
            }
            (None, Some(name)) => {
                let fx = builtin(name).ok_or_else(|| {
                    anyhow!(
                        "unknown builtin `{name}`; available: {}",
                        BUILTIN_NAMES.join(", ")
                    )
                })?;
                Ok((fx.spec.clone(), Some(fx)))
            }
            _ => bail!("exactly one of --spec or --builtin is required"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// Initial segment: comma-separated constants, or `exact` for the
    /// built-in closed form. Defaults to the fixture's default data.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value_t = 100.0)]
    horizon: f64,
    /// Fixed integration step (default min(tau/4, 1e-2)).
    #[arg(long)]
    step: Option<f64>,
    /// Disable the positivity monitor.
    #[arg(long, default_value_t = false)]
    no_floor: bool,
    /// CSV output path.
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
    /// Print the summary as JSON (always on; kept for symmetry).
    #[arg(long, default_value_t = true)]
    json: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 10.0)]
    tcheck: f64,
    #[arg(long, default_value_t = 1e4)]
    tmax: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 400)]
    grid: usize,
    /// Write the JSON report here as well.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the text summary.
    #[arg(long, default_value_t = false)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    /// JSON file with {"components": [coefficient...], "valid_from": t}
    /// (defaults to the builtin's attached closed form).
    #[arg(long)]
    solution: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    from: f64,
    #[arg(long, default_value_t = 100.0)]
    to: f64,
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = false)]
    json: bool,
}

#[derive(Args)]
struct PermanenceArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    #[arg(long)]
    step: Option<f64>,
    /// Ensemble size (log-uniform constant segments plus the vector of
    /// ones; built-ins with a closed form also include it).
    #[arg(long, default_value_t = 50)]
    ensemble: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lo: f64,
    #[arg(long, default_value_t = 10.0)]
    hi: f64,
    /// Fraction of the horizon treated as transient.
    #[arg(long, default_value_t = 0.5)]
    transient: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = true)]
    json: bool,
}

#[derive(Deserialize)]
struct SolutionFile {
    components: Vec<CoefficientFn>,
    #[serde(default)]
    valid_from: f64,
}

fn default_step(sys: &SystemSpec, requested: Option<f64>) -> f64 {
    let cap = if sys.tau > 0.0 { sys.tau / 4.0 } else { 1e-2 };
    requested.unwrap_or_else(|| cap.min(1e-2))
}

fn parse_init(
    arg: &Option<String>,
    fixture: Option<&ModelFixture>,
    n: usize,
) -> Result<InitialSegment> {
    match arg.as_deref() {
        None => Ok(match fixture {
            Some(fx) => fx.default_init.clone(),
            None => InitialSegment::Constant(vec![1.0; n]),
        }),
        Some("exact") => {
            let fx = fixture.ok_or_else(|| anyhow!("--init exact needs a --builtin source"))?;
            let sol = fx
                .exact
                .as_ref()
                .ok_or_else(|| anyhow!("builtin `{}` has no closed-form solution", fx.name))?;
            Ok(sol.initial_segment())
        }
        Some(csv) => {
            let vals: Vec<f64> = csv
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("parsing --init constants")?;
            if vals.len() != n {
                bail!("--init has {} entries, the system has {n}", vals.len());
            }
            Ok(InitialSegment::Constant(vals))
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    t_end: f64,
    rows: usize,
    step: f64,
    final_state: Vec<f64>,
    min_per_component: Vec<f64>,
    max_per_component: Vec<f64>,
    csv: String,
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let (sys, fixture) = args.source.load()?;
    let init = parse_init(&args.init, fixture.as_ref(), sys.n)?;
    let step = default_step(&sys, args.step);
    let mut opts = IntegrateOptions::with_step(step);
    if args.no_floor {
        opts.positivity_floor = None;
    }
    let t_end = sys.domain_start + args.horizon;
    let traj = match integrate(&sys, &init, t_end, &opts) {
        Ok(t) => t,
        Err(e @ IntegrateError::PositivityViolation { .. }) => {
            eprintln!("numeric failure: {e}");
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    let mut csv = Vec::new();
    traj.export_csv(&mut csv, sys.domain_start, traj.t_end, traj.stats.step_size)?;
    fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    let rows = ((traj.t_end - sys.domain_start) / traj.stats.step_size).round() as usize + 1;
    let mut min_c = vec![f64::INFINITY; sys.n];
    let mut max_c = vec![f64::NEG_INFINITY; sys.n];
    for k in 0..rows {
        let t = sys.domain_start + k as f64 * traj.stats.step_size;
        if let Ok(x) = traj.value_at(t.min(traj.t_end)) {
            for i in 0..sys.n {
                min_c[i] = min_c[i].min(x[i]);
                max_c[i] = max_c[i].max(x[i]);
            }
        }
    }
    let summary = SimulateSummary {
        t_end: traj.t_end,
        rows,
        step: traj.stats.step_size,
        final_state: traj.value_at(traj.t_end)?,
        min_per_component: min_c,
        max_per_component: max_c,
        csv: args.out.display().to_string(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<i32> {
    let (sys, _fixture) = args.source.load()?;
    if !(args.tcheck < args.tmax) || args.grid < 2 {
        bail!("need tcheck < tmax and at least two grid points");
    }
    let grid = GridSpec::new(args.tcheck.max(sys.domain_start), args.tmax, args.grid);
    let report = analyze(&sys, &grid, &CheckOptions::default())?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.text_summary());
    }
    if report.verdict.kind == VerdictKind::NoVerdict {
        if let Some(first) = report.verdict.blocking.first() {
            eprintln!("no applicable criterion: {first}");
        }
        return Ok(3);
    }
    Ok(0)
}

#[derive(Serialize)]
struct VerifySummary {
    max_residual: f64,
    worst_time: f64,
    tolerance: f64,
    pass: bool,
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let (sys, fixture) = args.source.load()?;
    let sol = match &args.solution {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let f: SolutionFile = serde_json::from_str(&text).context("parsing the solution")?;
            ExactSolution {
                components: f.components,
                valid_from: f.valid_from,
            }
        }
        None => fixture
            .as_ref()
            .and_then(|fx| fx.exact.clone())
            .ok_or_else(|| anyhow!("no --solution given and the source has no closed form"))?,
    };
    if sol.components.len() != sys.n {
        bail!(
            "solution has {} components, the system has {}",
            sol.components.len(),
            sys.n
        );
    }
    let from = args.from.max(sys.domain_start);
    let report = verify_exact_solution(&sys, &sol, from, args.to, args.grid)?;
    let pass = report.max_residual <= args.tol;
    let summary = VerifySummary {
        max_residual: report.max_residual,
        worst_time: report.worst_time,
        tolerance: args.tol,
        pass,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "max residual {:.3e} at t = {:.3} (tolerance {:.1e}): {}",
            report.max_residual,
            report.worst_time,
            args.tol,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if pass { 0 } else { 4 })
}

#[derive(Serialize)]
struct PermanenceSummary {
    seed: u64,
    ensemble: usize,
    horizon: f64,
    step: f64,
    estimate: dde_permanence::experiments::PermanenceEstimate,
}

fn cmd_permanence(args: PermanenceArgs) -> Result<i32> {
    let (sys, fixture) = args.source.load()?;
    if args.ensemble == 0 {
        bail!("ensemble must not be empty");
    }
    let step = default_step(&sys, args.step);
    let mut ensemble = make_ensemble(
        sys.n,
        &EnsembleSpec {
            size: args.ensemble,
            lo: args.lo,
            hi: args.hi,
            seed: args.seed,
        },
    );
    if let Some(sol) = fixture.as_ref().and_then(|fx| fx.exact.as_ref()) {
        ensemble.push(sol.initial_segment());
    }
    let est = estimate_permanence(
        &sys,
        &ensemble,
        args.horizon,
        args.transient,
        &IntegrateOptions::with_step(step),
    );
    let summary = PermanenceSummary {
        seed: args.seed,
        ensemble: ensemble.len(),
        horizon: args.horizon,
        step,
        estimate: est,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    if let Some(path) = &args.out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(0)
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's default exit code for usage errors collides with the
            // numeric-failure code; route everything usage-like to 1
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let out = match cli.cmd {
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Permanence(a) => cmd_permanence(a),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn main() {
    std::process::exit(real_main());
}
