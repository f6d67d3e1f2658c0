//! `pulsepair`: simulate captures, process events into SNR-sorted trials,
//! and analyze per-RA-bin binomial likelihoods.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pulsepair::pipeline::{self, AnalyzeOptions, RenderMode};
use pulsepair::stats::{self, CoincidenceMode, CoincidenceParams};
use pulsepair::{RaBin, RunConfig};

#[derive(Parser)]
#[command(name = "pulsepair", version, about = "Polarized pulse pair survey pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene into a capture event file.
    Simulate(SimulateArgs),
    /// Filter events, match pairs and write the SNR-sorted pair file.
    Process(ProcessArgs),
    /// Per-RA-bin likelihood report from a pair file.
    Analyze(AnalyzeArgs),
    /// Δf coincidence probability by Monte Carlo and in closed form.
    Coincidence(CoincidenceArgs),
    /// Built-in numerical and end-to-end checks.
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Event-level rendering (default).
    #[arg(long, conflicts_with = "iq")]
    events: bool,
    /// Full IQ synthesis and channelization; slow, meant for short spans.
    #[arg(long)]
    iq: bool,
    /// Output event file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProcessArgs {
    /// Capture event file.
    #[arg(long)]
    events: PathBuf,
    /// Static mask file (`lo_hz,hi_hz,label`).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output pair file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Prior probability for the posterior column.
    #[arg(long)]
    prior: Option<f64>,
    /// Limit the frequency-difference histogram to one RA bin (0-79).
    #[arg(long)]
    hist_ra_bin: Option<usize>,
    /// Also write one SVG plot per bin.
    #[arg(long)]
    svg: bool,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AnyMatchPair,
    TargetMatch,
}

#[derive(Args)]
struct CoincidenceArgs {
    #[arg(long, default_value_t = 14)]
    n_pairs: u32,
    #[arg(long, default_value_t = 80.0)]
    df_min: f64,
    #[arg(long, default_value_t = 1100.0)]
    df_max: f64,
    #[arg(long, default_value_t = 3.7)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::AnyMatchPair)]
    mode: ModeArg,
    /// Comma-separated target Δf values, Hz.
    #[arg(long, value_delimiter = ',', default_values_t = stats::REFERENCE_TARGETS_HZ)]
    targets: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    /// Optional file for the printed report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.observation.rng_seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => {
            let cfg = load_config(cli)?;
            let mode = if a.iq { RenderMode::Iq } else { RenderMode::Events };
            let m = pipeline::run_simulate(&a.scene, &cfg, config_path, mode, &a.out)?;
            println!("{} events written to {}", m.survival[0].count, a.out.display());
        }
        Command::Process(a) => {
            let cfg = load_config(cli)?;
            let m = pipeline::run_process(&a.events, &cfg, config_path, a.mask.as_deref(), &a.out)?;
            for s in &m.survival {
                println!("{:<13} {}", s.stage, s.count);
            }
        }
        Command::Analyze(a) => {
            let cfg = load_config(cli)?;
            let histogram_bin = match a.hist_ra_bin {
                Some(i) => Some(RaBin::new(i).ok_or_else(|| {
                    pulsepair::Error::Argument(format!("RA bin {i} outside 0..80"))
                })?),
                None => None,
            };
            if let Some(p) = a.prior {
                if !(p > 0.0 && p < 1.0) {
                    return Err(pulsepair::Error::Argument(format!("prior {p} outside (0, 1)")).into());
                }
            }
            let opts = AnalyzeOptions {
                prior: a.prior,
                histogram_bin,
                svg: a.svg,
            };
            let (_, analysis) = pipeline::run_analyze(&a.pairs, &cfg, config_path, &opts, &a.out)?;
            for w in &analysis.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", pipeline::report_text(&analysis, &opts));
        }
        Command::Coincidence(a) => {
            let seed = match cli.seed {
                Some(s) => s,
                None => load_config(cli)?.observation.rng_seed,
            };
            let params = CoincidenceParams {
                n_pairs: a.n_pairs,
                df_min_hz: a.df_min,
                df_max_hz: a.df_max,
                tolerance_hz: a.tol,
                mode: match a.mode {
                    ModeArg::AnyMatchPair => CoincidenceMode::AnyMatchPair,
                    ModeArg::TargetMatch => CoincidenceMode::TargetMatch,
                },
                targets_hz: a.targets.clone(),
            };
            let mc = stats::df_coincidence_mc(&params, a.trials, seed)?;
            let analytic = match stats::df_coincidence_analytic(&params) {
                Ok(v) => format!("{v:.6}"),
                Err(pulsepair::Error::Unsupported(why)) => format!("n/a ({why})"),
                Err(e) => return Err(e.into()),
            };
            let text = format!(
                "monte carlo: {:.6} +/- {:.6} ({} trials, seed {seed})\nanalytic:    {analytic}\n",
                mc.probability, mc.std_error, mc.trials
            );
            print!("{text}");
            if let Some(out) = &a.out {
                pulsepair::io::write_file(out, text.as_bytes())?;
            }
        }
        Command::Selftest => {
            let checks = pipeline::selftest()?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += !c.passed as usize;
            }
            if failed > 0 {
                bail!("{failed} self-test check(s) failed");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pulsepair::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
