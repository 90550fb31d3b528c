use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use garchmix_cli::{run, Command, ModelConfig, RunConfig, WORKERS_ENV};

/// Semi-contractive GARCH/INGARCH simulation and coupling experiments.
///
/// Exit status: 0 when every check passes, 1 when a check fails or the run
/// hits an invariant violation, 2 for configuration errors.
#[derive(Parser, Debug)]
#[command(name = "garchmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed (overrides experiment.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replicate count (overrides experiment.replicates).
    #[arg(long, global = true)]
    replicates: Option<usize>,

    /// Steps per run (overrides experiment.horizon).
    #[arg(long, global = true)]
    horizon: Option<usize>,

    /// Worker threads; 0 uses every core. Never changes the output.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,

    /// Output file. With csv format the summary goes to <stem>.summary.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Simulate one path. Columns: t, y, lambda.
    Simulate,
    /// Run a coupled pair. Columns: t, y, y_prime, hit, lambda, lambda_prime, gap.
    Couple,
    /// Coalescence frequency against exp(-δK/(1-c)) over experiment.gaps.
    /// Columns: gap, bound, successes, replicates, frequency, std_error,
    /// ci_lo, ci_hi, gap_sum_ratio, gap_sum_violations.
    CoalescenceLemma,
    /// Coupling estimate of beta_n and the ρ^√n fit. Columns: n, beta_hat,
    /// ci_lo, ci_hi.
    MixingRate,
    /// Drift constants, inequalities and Monte Carlo drift probes. Columns:
    /// probe, v, bound, mean, std_error, passed.
    DriftCheck,
    /// Forward-iteration intensity reconstruction against its error bound.
    /// Columns: k, max_error, bound, violations.
    Reconstruct,
    /// Exact recovery of the past from the intensity of y/2 + g(λ). Columns:
    /// t, y, lambda, recovered_y_prev, recovered_lambda_prev, exact.
    Counterexample,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Couple => Command::Couple,
            Cmd::CoalescenceLemma => Command::CoalescenceLemma,
            Cmd::MixingRate => Command::MixingRate,
            Cmd::DriftCheck => Command::DriftCheck,
            Cmd::Reconstruct => Command::Reconstruct,
            Cmd::Counterexample => Command::Counterexample,
        }
    }
}

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig {
            // The only model the counterexample accepts.
            model: match cli.command {
                Cmd::Counterexample => ModelConfig::HalfCountLink {
                    base: 0.2,
                    scale: 0.25,
                },
                _ => RunConfig::default().model,
            },
            ..RunConfig::default()
        },
    };
    cfg.command = cli.command.into();
    let e = &mut cfg.experiment;
    if let Some(s) = cli.seed {
        e.seed = s;
    }
    if let Some(r) = cli.replicates {
        e.replicates = Some(r);
    }
    if let Some(h) = cli.horizon {
        e.horizon = Some(h);
    }
    if let Some(w) = cli.workers {
        e.workers = w;
    }
    Ok(cfg)
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.summary.json"))
}

fn emit(cli: &Cli, csv: &str, summary: &serde_json::Value) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(summary)? + "\n";
    match (cli.format, &cli.out) {
        (Format::Json, Some(p)) => std::fs::write(p, json)?,
        (Format::Json, None) => print!("{json}"),
        (Format::Csv, Some(p)) => {
            std::fs::write(p, csv)?;
            std::fs::write(summary_path(p), json)?;
        }
        (Format::Csv, None) => {
            print!("{csv}");
            eprint!("{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(out) => {
            if let Err(e) = emit(&cli, &out.csv, &out.summary) {
                eprintln!("error: writing output: {e:#}");
                return ExitCode::from(1);
            }
            if out.passed {
                ExitCode::SUCCESS
            } else {
                for c in out.summary["checks"].as_array().into_iter().flatten() {
                    if c["passed"] == false {
                        eprintln!("check failed: {}: {}", c["name"], c["detail"]);
                    }
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
