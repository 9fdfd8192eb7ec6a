//! `parafreq` command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use parafreq::scenario::{run_fit, run_suite, write_artifacts, RunOutput, ScenarioConfig};
use parafreq::{CheckStatus, Error};

const EXIT_PASS: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "parafreq", version, about = "Parabolic frequency laboratory under Ricci flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (default: the scenario's `output.dir`, else `out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Multiplies every check tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,

    /// Worker threads for `sweep` (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline and every check.
    Run { config: PathBuf },
    /// Flow and PDE only, then fit the estimate constants.
    Fit { config: PathBuf },
    /// Repeat `run` over values of one parameter.
    Sweep {
        config: PathBuf,
        /// One of a, lambda, p, N, dt, h_scale.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        let error = match (&e, e.stage()) {
            (Error::Config { .. }, _) => anyhow::Error::new(e).context("configuration error"),
            (_, Some(stage)) => anyhow::Error::new(e).context(format!("pipeline failed in the {stage} stage")),
            _ => anyhow::Error::new(e).context("pipeline failed"),
        };
        Failure { code, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    if !(cli.tol_scale > 0.0) {
        return Err(Error::Config {
            field: "--tol-scale".into(),
            reason: format!("must be positive, got {}", cli.tol_scale),
        }
        .into());
    }
    match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Fit { config } => cmd_fit(cli, config),
        Command::Sweep { config, param, values } => cmd_sweep(cli, config, param, values),
    }
}

fn out_dir(cli: &Cli, cfg: &ScenarioConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

fn exit_for(status: CheckStatus) -> u8 {
    match status {
        CheckStatus::Fail => EXIT_FAIL,
        CheckStatus::Pass | CheckStatus::Inconclusive => EXIT_PASS,
    }
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let cfg = ScenarioConfig::load(path)?;
    let out = run_suite(&cfg, cli.tol_scale)?;
    let dir = out_dir(cli, &cfg);
    write_artifacts(&out, &dir)?;
    let mut stdout = std::io::stdout().lock();
    for r in &out.reports {
        writeln!(stdout, "{}", r.verdict()).context("writing to stdout")?;
    }
    writeln!(stdout, "{}: {} ({})", cfg.name, out.status().label(), dir.display()).context("writing to stdout")?;
    Ok(exit_for(out.status()))
}

fn cmd_fit(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let cfg = ScenarioConfig::load(path)?;
    let (fitted, registry) = run_fit(&cfg)?;
    let dir = out_dir(cli, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = dir.join("registry.json");
    std::fs::write(&file, registry.to_json()? + "\n").with_context(|| format!("writing {}", file.display()))?;
    for name in parafreq::constants::FREE_CONSTANTS {
        if let Some(a) = fitted.audit.get(name) {
            println!(
                "{name:<5} fitted {:.6e}, used {:.6e}  (max at t = {:.6}, cell {}, {})",
                a.value,
                registry.get(name).unwrap_or(f64::NAN),
                a.t,
                a.cell,
                a.source
            );
        }
    }
    println!("registry written to {}", file.display());
    Ok(EXIT_PASS)
}

/// Worst margin among reports whose id starts with `prefix`.
fn worst_margin(out: &RunOutput, prefix: &str) -> f64 {
    out.reports
        .iter()
        .filter(|r| r.id.starts_with(prefix))
        .map(|r| r.margin)
        .fold(f64::NAN, f64::min)
}

fn cmd_sweep(cli: &Cli, path: &Path, param: &str, values: &[f64]) -> Result<u8, Failure> {
    let base = ScenarioConfig::load(path)?;
    if values.is_empty() {
        return Err(Error::Config {
            field: "--values".into(),
            reason: "need at least one value".into(),
        }
        .into());
    }
    let configs = values
        .iter()
        .map(|&v| base.with_param(param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .context("building the thread pool")?;
    let tol_scale = cli.tol_scale;
    let runs: Vec<_> = pool.install(|| configs.par_iter().map(|c| run_suite(c, tol_scale)).collect());
    let dir = out_dir(cli, &base);
    let mut outputs = Vec::with_capacity(runs.len());
    for (run, v) in runs.into_iter().zip(values) {
        let out = run?;
        write_artifacts(&out, &dir.join(format!("{param}={v}")))?;
        outputs.push(out);
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&file).with_context(|| format!("writing {}", file.display()))?;
    w.write_record([
        "value",
        "status",
        "monotonicity_margin",
        "harnack_margin",
        "B1",
        "B(n)",
        "C1",
        "C(n)",
    ])
    .context("writing sweep.csv")?;
    let mut worst = CheckStatus::Pass;
    for (out, v) in outputs.iter().zip(values) {
        worst = worst.max(out.status());
        let fitted = out.fitted.as_ref().unwrap_or(&out.registry);
        let row = [
            v.to_string(),
            out.status().label().to_string(),
            worst_margin(out, "monotonicity").to_string(),
            worst_margin(out, "harnack").to_string(),
            fitted.b1.to_string(),
            fitted.b_n.to_string(),
            fitted.c1.to_string(),
            fitted.c_n.to_string(),
        ];
        w.write_record(&row).context("writing sweep.csv")?;
        println!("{param} = {v}: {}", row[1..4].join(" "));
    }
    w.flush().context("writing sweep.csv")?;
    println!("summary written to {}", file.display());
    Ok(exit_for(worst))
}
