//! `smoothctl`: run, sweep and certify data-driven one-step control episodes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::Value;

use commands::RunManifest;
use config::parse_override;
use error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    /// Run one episode.
    Run,
    /// Run a grid of episodes in parallel.
    Sweep,
    /// Re-check regret guarantees on a finished run.
    Certify,
    /// Tabulate side-information bounds on -log NormalCDF.
    Fig4,
    /// Tabulate worst-case average regret curves.
    Curves,
}

#[derive(Debug, Parser)]
#[command(name = "smoothctl", version, about)]
struct Args {
    command: Command,

    /// JSON config; partial documents are layered over a preset.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, default_value = "smoothctl-out")]
    out: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    /// Dotted-path override, e.g. `spec.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Preset: unicycle_case1, unicycle_case2, aircraft or lq.
    #[arg(long)]
    env: Option<String>,

    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,

    /// Lipschitz constant of the cost gradient.
    #[arg(long)]
    lc: Option<f64>,

    /// Number of seeding steps.
    #[arg(long = "N")]
    n_init: Option<usize>,

    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<usize>,

    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,

    /// Worker threads for `sweep` (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    /// Run directory for `certify`.
    #[arg(long)]
    input: Option<PathBuf>,
}

impl Args {
    fn manifest(self) -> CliResult<RunManifest> {
        let mut overrides = Vec::new();
        let flags = [
            ("spec.alpha", self.alpha.map(Value::from)),
            ("spec.beta", self.beta.map(Value::from)),
            ("spec.lipschitz_gradient", self.lc.map(Value::from)),
            ("N", self.n_init.map(Value::from)),
            ("T", self.horizon.map(Value::from)),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        }
        // Explicit --set wins over the shorthand flags.
        for s in &self.set {
            overrides.push(parse_override(s)?);
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        let command = format!("{:?}", self.command).to_lowercase();
        // certify writes next to its input unless --out is given explicitly.
        let out = match self.command {
            Command::Certify if self.out.as_os_str() == "smoothctl-out" => PathBuf::new(),
            _ => self.out,
        };
        Ok(RunManifest {
            command,
            config: self.config,
            out,
            seed: self.seed,
            overrides,
            env: self.env,
            svg: self.svg,
            jobs: self.jobs,
            input: self.input,
        })
    }
}

fn dispatch(cmd: Command, m: &RunManifest) -> CliResult<()> {
    match cmd {
        Command::Run => commands::cmd_run(m),
        Command::Sweep => commands::cmd_sweep(m),
        Command::Certify => commands::cmd_certify(m),
        Command::Fig4 => commands::cmd_fig4(m),
        Command::Curves => commands::cmd_curves(m),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are config errors; --help and --version are not.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cmd = args.command;
    let result = args.manifest().and_then(|m| {
        log::debug!("{m:?}");
        dispatch(cmd, &m)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
