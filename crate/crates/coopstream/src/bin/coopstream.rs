//! Command-line front end: single runs from a config file, named experiment
//! presets, the fluid oracle, and config validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use coopstream::metrics;
use coopstream::model::{validate_config, SimConfig};
use coopstream::oracle::{solve_fluid, FluidInstance};
use coopstream::presets::{run_preset, PresetName};

#[derive(Parser)]
#[command(
    name = "coopstream",
    version,
    about = "Slotted-time simulator of cooperative mobile-device content streaming"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation from a config file; writes trace and summary files.
    Run {
        /// Path to a key-value config file.
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for output files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Summary file format; the per-slot trace is always CSV.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Override the config's horizon (slots).
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Run a named experiment preset; writes one aggregated CSV.
    Preset {
        /// One of: fig3-rate-vs-n, fig3c-overhead, fig4-queues,
        /// fig5-rate-vs-loss, fig6-queues-vs-loss, oracle-gap.
        name: String,
        /// Root seed for the preset's seed fan-out.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Parallel runs; never changes file contents.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the per-run horizon (slots).
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Solve the fluid benchmark for a config's mean capacities; prints JSON.
    Oracle {
        /// Path to a key-value config file describing the instance.
        instance: PathBuf,
    },
    /// Check a config file; exits nonzero listing any violations.
    Validate { config: PathBuf },
}

fn load_config(path: &Path) -> Result<SimConfig> {
    let cfg = SimConfig::from_file(path)
        .with_context(|| format!("unreadable config '{}'", path.display()))?;
    let violations = validate_config(&cfg);
    if !violations.is_empty() {
        bail!(
            "invalid config '{}':\n  {}",
            path.display(),
            violations.join("\n  ")
        );
    }
    Ok(cfg)
}

fn write_output(out_dir: &Path, file: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("unwritable out-dir '{}'", out_dir.display()))?;
    let path = out_dir.join(file);
    std::fs::write(&path, contents)
        .with_context(|| format!("unwritable out-dir '{}'", out_dir.display()))?;
    Ok(path)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            seed,
            out_dir,
            format,
            horizon,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = horizon {
                cfg.horizon = t;
            }
            let trace = coopstream::run(&cfg)?;
            let summary = metrics::summarize(&trace)?;
            let trace_path = write_output(&out_dir, "trace.csv", &metrics::trace_csv_string(&trace))?;
            let summary_path = match format {
                Format::Csv => {
                    write_output(&out_dir, "summary.csv", &metrics::summary_csv_string(&summary))?
                }
                Format::Json => write_output(
                    &out_dir,
                    "summary.json",
                    &metrics::summary_json_string(&summary),
                )?,
            };
            println!("wrote {}", trace_path.display());
            println!("wrote {}", summary_path.display());
        }
        Cmd::Preset {
            name,
            seed,
            out_dir,
            jobs,
            horizon,
        } => {
            let preset: PresetName = name.parse()?;
            let (file, csv) = run_preset(preset, seed, jobs, horizon)?;
            let path = write_output(&out_dir, &file, &csv)?;
            println!("wrote {}", path.display());
        }
        Cmd::Oracle { instance } => {
            let cfg = load_config(&instance)?;
            let solution = solve_fluid(&FluidInstance::from_config(&cfg))?;
            println!("{}", serde_json::to_string_pretty(&solution)?);
        }
        Cmd::Validate { config } => {
            load_config(&config)?;
            println!("ok");
        }
    }
    Ok(())
}
