use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cdb_cli::commands::SweepSpec;
use cdb_cli::settings::ENV_OUTPUT_ROOT;
use cdb_cli::{exit_code, Settings, UsageError};
use clap::{Args, Parser, Subcommand};

/// Class-difficulty weighted losses and sampling for long-tailed data.
///
/// Every setting can be given as `--section.key value` after the
/// subcommand's own flags, e.g. `cdb train --loss cdb_w_ce --tau sigmoid`.
#[derive(Parser)]
#[command(name = "cdb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the imbalanced train and balanced val/test splits.
    Prepare(Common),
    /// Train one configuration on the prepared splits.
    Train(Common),
    /// Run the Cartesian product of a sweep file.
    Sweep {
        /// Sweep file with `key = v1 | v2` lines; omitted means one run.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Runs to execute concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild the report tables from the experiment's finished runs.
    Report {
        /// Experiment directory; defaults to `<experiment.root>/<experiment.id>`.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting overrides: `--section.key value` or `--section.key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "SETTINGS")]
    overrides: Vec<String>,
}

/// Pulls `--name value` / `--name=value` out of the trailing tokens, for
/// subcommand flags written after the first setting.
fn take_flag(tokens: &mut Vec<String>, name: &str) -> Result<Option<String>> {
    let flag = format!("--{name}");
    let prefix = format!("--{name}=");
    let mut found = None;
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == flag {
            let v = tokens
                .get(i + 1)
                .cloned()
                .ok_or_else(|| UsageError(format!("{flag} needs a value")))?;
            tokens.drain(i..i + 2);
            found = Some(v);
        } else if let Some(v) = tokens[i].strip_prefix(&prefix) {
            found = Some(v.to_string());
            tokens.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(found)
}

fn settings(common: &mut Common) -> Result<Settings> {
    if let Some(c) = take_flag(&mut common.overrides, "config")? {
        common.config = Some(PathBuf::from(c));
    }
    Settings::resolve(common.config.as_deref(), std::env::var(ENV_OUTPUT_ROOT).ok(), &common.overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(mut common) => {
            let s = settings(&mut common)?;
            let m = cdb_cli::prepare(&s)?;
            println!(
                "prepared {} classes in {} (train {:?}, imbalance ratio {:.1})",
                m.num_classes,
                s.experiment_dir().join("data").display(),
                m.counts["train"],
                m.train_imbalance_ratio
            );
        }
        Command::Train(mut common) => {
            let s = settings(&mut common)?;
            let out = cdb_cli::train(&s)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: top-1 error {:.2}%, macro recall {:.4} ({})",
                out.run_id,
                out.summary.metrics.error_pct(),
                out.summary.metrics.macro_recall,
                out.dir.display()
            );
        }
        Command::Sweep { mut spec, mut jobs, mut common } => {
            if let Some(p) = take_flag(&mut common.overrides, "spec")? {
                spec = Some(PathBuf::from(p));
            }
            if let Some(j) = take_flag(&mut common.overrides, "jobs")? {
                jobs = j.parse().map_err(|_| UsageError(format!("--jobs: cannot parse {j:?}")))?;
            }
            let s = settings(&mut common)?;
            let spec = match spec {
                Some(p) => SweepSpec::load(&p)?,
                None => SweepSpec::default(),
            };
            let out = cdb_cli::sweep(&s, &spec, jobs)?;
            for (p, r) in &out.runs {
                match r {
                    Ok(o) => println!("{} {:?}: top-1 error {:.2}%", o.run_id, p.params, o.summary.metrics.error_pct()),
                    Err(e) => eprintln!("failed {:?}: {e}", p.params),
                }
            }
            if let Some(t) = &out.tables {
                print!("{}", t.summary_csv);
            }
            let failed = out.failures();
            if failed > 0 {
                anyhow::bail!("{failed} of {} sweep runs failed; see manifest.json", out.runs.len());
            }
        }
        Command::Report { mut dir, mut common } => {
            if let Some(d) = take_flag(&mut common.overrides, "dir")? {
                dir = Some(PathBuf::from(d));
            }
            let dir = match dir {
                Some(d) => d,
                None => settings(&mut common)?.experiment_dir(),
            };
            let t = cdb_cli::report(&dir)?;
            print!("{}", t.summary_csv);
            if let Some(d) = &t.decoupled_csv {
                print!("\n{d}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
