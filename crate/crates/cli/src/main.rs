//! `skt`: batch driver for the forward and adjoint solvers and the
//! verification campaigns.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 invariant
//! violation (verify only). Errors go to stderr prefixed `SKT-ERR:<code>:`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use skt_core::adjoint::{eps_cauchy_study, run_adjoint, AdjointBoundsReport};
use skt_core::algebra::{check_conditions, max_alpha, ALPHA_SAMPLE_BUDGET};
use skt_core::config::parse_config;
use skt_core::experiments::{
    algebra_suite, continuous_dependence_experiment, uniqueness_experiment, Check,
};
use skt_core::forward::{
    manufactured_convergence, run_forward, temporal_convergence, DtRule, HeatMode,
    PolynomialProfile, Trajectory,
};
use skt_core::io::{
    read_forward_outputs, render_report, write_adjoint_outputs, write_forward_outputs, INDEX_FILE,
    SNAPSHOT_DIR,
};
use skt_core::{Coefficients, RunConfig, SktError};

#[derive(Parser)]
#[command(
    name = "skt",
    version,
    about = "SKT cross-diffusion solver and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the coefficient conditions and the certified alpha.
    Check(Args),
    /// Integrate the forward system and write snapshots and diagnostics.
    Simulate(Args),
    /// Solve the adjoint around the stored (or a fresh) forward run.
    Adjoint(Args),
    /// Run a verification campaign; exits 4 if any invariant fails.
    Verify {
        #[command(flatten)]
        args: Args,
        #[arg(long, value_enum)]
        campaign: Campaign,
    },
    /// Render the CSV files of an output directory into text and plot data.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Campaign {
    Uniqueness,
    Dependence,
    EpsCauchy,
    Mms,
    Algebra,
}

impl Campaign {
    fn stem(self) -> &'static str {
        match self {
            Campaign::Uniqueness => "uniqueness",
            Campaign::Dependence => "dependence",
            Campaign::EpsCauchy => "eps_cauchy",
            Campaign::Mms => "mms",
            Campaign::Algebra => "algebra",
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<SktError> for Failure {
    fn from(e: SktError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("SKT-ERR:2: {e}");
                return ExitCode::from(2);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let outcome = configure_threads().and_then(|_| dispatch(cli.command));
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("SKT-ERR:{}: {}", f.code, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SKT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        config_failure(format!(
            "SKT_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(config_failure)
}

fn load(args: &Args) -> Result<(RunConfig, PathBuf), Failure> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| config_failure("--config <path> is required"))?;
    let mut cfg = parse_config(path)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Check(args) => check(&load(&args)?.0),
        Command::Simulate(args) => {
            let (cfg, out) = load(&args)?;
            simulate(&cfg, &out)
        }
        Command::Adjoint(args) => {
            let (cfg, out) = load(&args)?;
            adjoint(&cfg, &out)
        }
        Command::Verify { args, campaign } => {
            let (cfg, out) = load(&args)?;
            verify(&cfg, &out, campaign)
        }
        Command::Report(args) => {
            let dir = match &args.out {
                Some(dir) => dir.clone(),
                None => load(&args)?.1,
            };
            print!("{}", render_report(&dir)?);
            Ok(0)
        }
    }
}

fn check(cfg: &RunConfig) -> Result<u8, Failure> {
    let c = &cfg.coeffs;
    let r = check_conditions(c);
    println!("holds_1_5c = {}", r.holds_1_5c);
    println!("holds_coef_cond = {}", r.holds_coef_cond);
    println!("margin_1_5c = {:e}", r.margin_1_5c);
    println!(
        "margins_coef_cond = {:e}, {:e}",
        r.margins_coef_cond.0, r.margins_coef_cond.1
    );
    println!("d0 = {:e}", c.d0());
    match max_alpha(c, ALPHA_SAMPLE_BUDGET) {
        Ok(a) => println!("max_alpha = {a:.9}"),
        Err(e) => println!("max_alpha = unavailable ({e})"),
    }
    println!("alpha = {:e}", c.alpha);
    Ok(0)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<u8, Failure> {
    let traj = run_forward(cfg)?;
    write_forward_outputs(out, cfg, &traj)?;
    let last = traj.diagnostics.last().expect("at least the initial level");
    println!(
        "steps = {}, t = {:e}, mass_u = {:e}, mass_v = {:e}, min_u = {:e}, min_v = {:e}",
        traj.time.steps, last.t, last.mass_u, last.mass_v, last.min_u, last.min_v
    );
    println!("wrote {}", out.display());
    Ok(0)
}

/// The stored run under `out` if there is one, otherwise a fresh run.
fn forward_for_adjoint(cfg: &RunConfig, out: &Path) -> Result<Trajectory, Failure> {
    if out.join(SNAPSHOT_DIR).join(INDEX_FILE).exists() {
        let (stored, traj) = read_forward_outputs(out)?;
        if stored.grid()? != cfg.grid()?
            || stored.time_grid()? != cfg.time_grid()?
            || stored.bc != cfg.bc
        {
            return Err(SktError::Mismatch(format!(
                "stored run in {} has a different grid, time grid or boundary condition",
                out.display()
            ))
            .into());
        }
        return Ok(traj);
    }
    Ok(run_forward(cfg)?)
}

fn adjoint(cfg: &RunConfig, out: &Path) -> Result<u8, Failure> {
    let traj = forward_for_adjoint(cfg, out)?;
    let chi = cfg.terminal_field()?;
    let run = run_adjoint(cfg, &traj, &traj, cfg.eps, cfg.rhs, cfg.adjoint_mode, &chi)?;
    write_adjoint_outputs(out, &run)?;
    for line in run.report.lines() {
        println!("{line}");
    }
    println!("wrote {}", out.display());
    Ok(0)
}

fn verify(cfg: &RunConfig, out: &Path, campaign: Campaign) -> Result<u8, Failure> {
    fs::create_dir_all(out).map_err(SktError::from)?;
    let (csvs, checks) = match campaign {
        Campaign::Uniqueness => {
            let r = uniqueness_experiment(cfg)?;
            (vec![(String::new(), r.to_csv())], r.checks())
        }
        Campaign::Dependence => {
            let r = continuous_dependence_experiment(cfg, &[1e-3, 1e-2, 1e-1])?;
            (vec![(String::new(), r.to_csv())], r.checks())
        }
        Campaign::EpsCauchy => eps_campaign(cfg)?,
        Campaign::Mms => mms_campaign(cfg)?,
        Campaign::Algebra => {
            let r = algebra_suite(&cfg.coeffs, 100_000, 100_000, 1_000_000, 10_000, cfg.seed)?;
            let csv = format!(
                "alpha,mean_value_max_rel_err,implication_counterexamples,positivity_min_margin,inverse_violations,jacobian_err_h1,jacobian_err_h2\n{:e},{:e},{},{:e},{},{:e},{:e}\n",
                r.alpha,
                r.mean_value_max_rel_err,
                r.implication_counterexamples,
                r.positivity_min_margin,
                r.inverse_violations,
                r.jacobian_max_err.0,
                r.jacobian_max_err.1
            );
            (vec![(String::new(), csv)], r.checks())
        }
    };
    let stem = campaign.stem();
    for (suffix, csv) in &csvs {
        fs::write(out.join(format!("{stem}{suffix}.csv")), csv).map_err(SktError::from)?;
    }
    let mut summary = String::new();
    for c in &checks {
        summary.push_str(&c.line());
        summary.push('\n');
    }
    fs::write(out.join(format!("{stem}_summary.txt")), &summary).map_err(SktError::from)?;
    print!("{summary}");
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 4,
            message: format!("{failed} of {} {stem} invariants failed", checks.len()),
        });
    }
    Ok(0)
}

type CampaignOutput = (Vec<(String, String)>, Vec<Check>);

fn eps_campaign(cfg: &RunConfig) -> Result<CampaignOutput, Failure> {
    let traj = run_forward(cfg)?;
    let chi = cfg.terminal_field()?;
    let top = traj
        .snapshots
        .iter()
        .map(|s| s.max())
        .fold(0.0f64, |m, s| m.max(s.u).max(s.v));

    let sweep = [1.0, 0.5, 0.25, 0.125];
    let reports: Vec<AdjointBoundsReport> = sweep
        .par_iter()
        .map(|&eps| {
            run_adjoint(cfg, &traj, &traj, eps, cfg.rhs, cfg.adjoint_mode, &chi).map(|r| r.report)
        })
        .collect::<Result<_, _>>()?;
    let spreads: Vec<f64> = (0..3)
        .map(|i| {
            let ks = reports.iter().map(|r| r.kappas[i]);
            let max = ks.clone().fold(f64::NEG_INFINITY, f64::max);
            let min = ks.fold(f64::INFINITY, f64::min);
            max / min - 1.0
        })
        .collect();
    let gronwall = reports
        .iter()
        .all(|r| r.gronwall.as_ref().is_none_or(|g| g.holds()));

    // Halve until two consecutive values sit below the truncation threshold.
    let mut eps_list = vec![1.0];
    while eps_list.len() < 5 || 1.0 / eps_list[eps_list.len() - 2] <= top {
        eps_list.push(eps_list.last().unwrap() / 2.0);
    }
    let table = eps_cauchy_study(cfg, &traj, &traj, &chi, &eps_list)?;
    let inactive: Vec<_> = table
        .rows
        .iter()
        .filter(|r| 1.0 / r.eps > table.max_u_tilde)
        .collect();
    let checks = vec![
        Check::new(
            "bound ratios vary < 10% across eps in {1, 1/2, 1/4, 1/8}",
            spreads.iter().all(|&s| s < 0.1),
            format!("relative spreads {spreads:?}"),
        ),
        Check::new(
            "discrete energy inequality holds at every step",
            gronwall,
            "all eps",
        ),
        Check::new(
            "differences exactly zero once 1/eps > max of the mean state",
            !inactive.is_empty()
                && inactive
                    .iter()
                    .all(|r| r.h1_diff == 0.0 && r.lap_diff == 0.0),
            format!(
                "max {:.6}, {} rows checked",
                table.max_u_tilde,
                inactive.len()
            ),
        ),
    ];
    Ok((vec![(String::new(), table.to_csv())], checks))
}

fn mms_campaign(cfg: &RunConfig) -> Result<CampaignOutput, Failure> {
    let heat = Coefficients::heat(1.0, 1.0)?;
    let mode = HeatMode {
        diffusivity: 1.0,
        length: 1.0,
        dim: 1,
    };
    let mut base = RunConfig::new(1, 16, 1.0, 0.1, 0.01, heat);
    let space = manufactured_convergence(&base, &mode, &[16, 32, 64, 128], DtRule::Parabolic(0.1))?;
    base.n = 512;
    let time = temporal_convergence(&base, &mode, &[10, 20, 40, 80])?;
    let coupled = RunConfig::new(1, 16, 1.0, 0.1, 0.01, cfg.coeffs);
    let poly = manufactured_convergence(
        &coupled,
        &PolynomialProfile,
        &[16, 32, 64, 128],
        DtRule::Parabolic(0.1),
    )?;

    let mut c = cfg.coeffs;
    (c.b1, c.b2, c.c1, c.c2, c.a1, c.a2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut drift_cfg = cfg.clone();
    drift_cfg.coeffs = c;
    drift_cfg.bc = skt_core::BoundaryCondition::Neumann;
    let traj = run_forward(&drift_cfg)?;
    let first = traj.diagnostics[0];
    let drift = traj
        .diagnostics
        .iter()
        .map(|d| {
            (d.mass_u - first.mass_u)
                .abs()
                .max((d.mass_v - first.mass_v).abs())
        })
        .fold(0.0f64, f64::max)
        / cfg.t_final;

    let checks = vec![
        Check::new(
            "heat limit spatial order 2.0 +/- 0.2",
            space.orders.iter().all(|o| (o - 2.0).abs() <= 0.2),
            format!("orders {:?}", space.orders),
        ),
        Check::new(
            "heat limit temporal order >= 0.9",
            time.orders.iter().all(|&o| o >= 0.9),
            format!("orders {:?}", time.orders),
        ),
        Check::new(
            "full-coupling manufactured solution spatial order >= 1.8",
            poly.orders.iter().all(|&o| o >= 1.8),
            format!("orders {:?}", poly.orders),
        ),
        Check::new(
            "Neumann zero-reaction mass drift <= 1e-10 per unit time",
            drift <= 1e-10,
            format!(
                "{} scheme, drift {drift:e} per unit time",
                drift_cfg.scheme.name()
            ),
        ),
    ];
    let csvs = vec![
        ("_heat_space".to_string(), space.to_csv()),
        ("_heat_time".to_string(), time.to_csv()),
        ("_coupled".to_string(), poly.to_csv()),
    ];
    Ok((csvs, checks))
}
