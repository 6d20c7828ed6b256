//! Named experiment presets: parameter sweeps over population size, loss
//! probability, and the utility weight, with seed fan-out and deterministic
//! aggregated CSV output. Re-running a preset with the same root seed
//! regenerates byte-identical files regardless of the parallelism level.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::channels::splitmix64;
use crate::engine::{self, RunError};
use crate::metrics::{self, MetricsError, QueueFamilyMeans, RunSummary, SummaryAccumulator};
use crate::model::{off_diagonal_sum, ChannelConfig, LocalMode, Scheme, SimConfig};
use crate::oracle::{solve_fluid, FluidInstance, OracleError};

pub const PRESET_NAMES: &[&str] = &[
    "fig3-rate-vs-n",
    "fig3c-overhead",
    "fig4-queues",
    "fig5-rate-vs-loss",
    "fig6-queues-vs-loss",
    "oracle-gap",
];

/// Seeds per sweep point; aggregates report mean and sample std.
pub const REPLICATIONS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    RateVsN,
    Overhead,
    Queues,
    RateVsLoss,
    QueuesVsLoss,
    OracleGap,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::RateVsN => "fig3-rate-vs-n",
            PresetName::Overhead => "fig3c-overhead",
            PresetName::Queues => "fig4-queues",
            PresetName::RateVsLoss => "fig5-rate-vs-loss",
            PresetName::QueuesVsLoss => "fig6-queues-vs-loss",
            PresetName::OracleGap => "oracle-gap",
        }
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = PresetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3-rate-vs-n" => Ok(PresetName::RateVsN),
            "fig3c-overhead" => Ok(PresetName::Overhead),
            "fig4-queues" => Ok(PresetName::Queues),
            "fig5-rate-vs-loss" => Ok(PresetName::RateVsLoss),
            "fig6-queues-vs-loss" => Ok(PresetName::QueuesVsLoss),
            "oracle-gap" => Ok(PresetName::OracleGap),
            _ => Err(PresetError::UnknownPreset {
                name: s.to_string(),
                known: PRESET_NAMES.join(", "),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset '{name}' (known presets: {known})")]
    UnknownPreset { name: String, known: String },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Per-run seed: a fixed hash chain over (root, sweep point, replicate) so
/// every run draws from an independent stream and reruns are reproducible.
pub fn derive_seed(root: u64, point: u64, rep: u64) -> u64 {
    let x = splitmix64(root ^ 0x5052_4553_4554_5353);
    let x = splitmix64(x ^ point);
    splitmix64(x ^ rep)
}

fn base_config() -> SimConfig {
    SimConfig {
        n_devices: 3,
        cellular: ChannelConfig::Constant { rate: 1.0 },
        local: ChannelConfig::Constant { rate: 1.0 },
        cellular_loss_prob: 0.0,
        horizon: 5_000,
        ..SimConfig::default()
    }
}

fn summarize_config(cfg: &SimConfig) -> Result<RunSummary, PresetError> {
    let mut acc = SummaryAccumulator::new(cfg, cfg.horizon);
    engine::run_with(cfg, |r| acc.push(r))?;
    Ok(acc.finish()?)
}

/// Runs every config, up to `jobs` at a time, returning summaries in input
/// order. Output is independent of `jobs`: each run is seeded in the config
/// and results land at their input index.
pub fn run_summaries(cfgs: &[SimConfig], jobs: usize) -> Result<Vec<RunSummary>, PresetError> {
    let jobs = jobs.max(1).min(cfgs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunSummary, PresetError>>>> =
        cfgs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cfgs.len() {
                    break;
                }
                let out = summarize_config(&cfgs[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every run visited"))
        .collect()
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The rate the sweeps plot: the admitted per-device rate. Real queues drain
/// only by delivered amounts, so admission tracks downlink loss.
fn per_device_rate(summary: &RunSummary) -> f64 {
    summary.mean_rate_per_device.iter().sum::<f64>()
        / summary.mean_rate_per_device.len().max(1) as f64
}

const SCHEMES: [Scheme; 2] = [Scheme::Dcc, Scheme::Scc];
const MODES: [LocalMode; 2] = [LocalMode::Unicast, LocalMode::Broadcast];

/// Runs one preset and returns (file name, CSV contents).
pub fn run_preset(
    name: PresetName,
    root_seed: u64,
    jobs: usize,
    horizon_override: Option<u64>,
) -> Result<(String, String), PresetError> {
    let csv = match name {
        PresetName::RateVsN => rate_vs_n(root_seed, jobs, horizon_override)?,
        PresetName::Overhead => overhead_csv(),
        PresetName::Queues => queues_csv(root_seed, horizon_override)?,
        PresetName::RateVsLoss => loss_sweep(root_seed, jobs, horizon_override)?.0,
        PresetName::QueuesVsLoss => loss_sweep(root_seed, jobs, horizon_override)?.1,
        PresetName::OracleGap => oracle_gap_csv(root_seed, jobs, horizon_override)?,
    };
    Ok((format!("{name}.csv"), csv))
}

/// Per-device rate against population size, lossless unit capacities.
fn rate_vs_n(root_seed: u64, jobs: usize, horizon: Option<u64>) -> Result<String, PresetError> {
    let populations = [2usize, 5, 10, 20, 50];
    let mut cfgs = Vec::new();
    let mut point = 0u64;
    for &n in &populations {
        for scheme in SCHEMES {
            for mode in MODES {
                for rep in 0..REPLICATIONS {
                    cfgs.push(SimConfig {
                        n_devices: n,
                        scheme,
                        local_mode: mode,
                        seed: derive_seed(root_seed, point, rep),
                        horizon: horizon.unwrap_or(5_000),
                        ..base_config()
                    });
                }
                point += 1;
            }
        }
    }
    let summaries = run_summaries(&cfgs, jobs)?;

    let mut out = String::from("n,scheme,local_mode,mean_rate,std_rate\n");
    let mut it = summaries.chunks(REPLICATIONS as usize);
    for &n in &populations {
        for scheme in SCHEMES {
            for mode in MODES {
                let chunk = it.next().expect("chunk per point");
                let rates: Vec<f64> = chunk.iter().map(per_device_rate).collect();
                let (mean, std) = mean_std(&rates);
                out.push_str(&format!("{n},{scheme},{mode},{mean:.6},{std:.6}\n"));
            }
        }
    }
    Ok(out)
}

/// Control overhead against population size; closed form, no simulation.
fn overhead_csv() -> String {
    let cfg = SimConfig::default();
    let mut out = String::from("n,scheme,overhead_percent\n");
    for n in [1usize, 2, 5, 10, 20, 50] {
        for scheme in SCHEMES {
            let pct =
                metrics::overhead_percent(scheme, n, cfg.control_msg_bytes, cfg.data_packet_bytes);
            out.push_str(&format!("{n},{scheme},{pct:.1}\n"));
        }
    }
    out
}

/// Per-slot pooled queue-family means for both schemes, N=3 lossless.
fn queues_csv(root_seed: u64, horizon: Option<u64>) -> Result<String, PresetError> {
    let mut out = String::from("slot,scheme,lambda_avg,eta_avg,q_real_avg,mu_avg,nu_avg\n");
    for (point, scheme) in SCHEMES.into_iter().enumerate() {
        let cfg = SimConfig {
            scheme,
            seed: derive_seed(root_seed, point as u64, 0),
            horizon: horizon.unwrap_or(2_000),
            ..base_config()
        };
        let n = cfg.n_devices as f64;
        let pairs = n * (n - 1.0);
        let mut rows = String::new();
        engine::run_with(&cfg, |r| {
            let q = &r.queues_after;
            rows.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.slot,
                scheme,
                q.lambda.iter().sum::<f64>() / n,
                off_diagonal_sum(&q.eta) / pairs,
                off_diagonal_sum(&q.q_real) / pairs,
                q.mu.iter().sum::<f64>() / n,
                off_diagonal_sum(&q.nu) / pairs,
            ));
        })?;
        out.push_str(&rows);
    }
    Ok(out)
}

/// Shared sweep behind the loss presets: rate CSV and queue CSV over the
/// downlink loss grid p in {0, 0.1, ..., 0.5}.
fn loss_sweep(
    root_seed: u64,
    jobs: usize,
    horizon: Option<u64>,
) -> Result<(String, String), PresetError> {
    let losses: Vec<f64> = (0..=5).map(|i| i as f64 / 10.0).collect();
    let mut cfgs = Vec::new();
    let mut point = 0u64;
    for &p in &losses {
        for scheme in SCHEMES {
            for mode in MODES {
                for rep in 0..REPLICATIONS {
                    cfgs.push(SimConfig {
                        scheme,
                        local_mode: mode,
                        cellular_loss_prob: p,
                        seed: derive_seed(root_seed, point, rep),
                        horizon: horizon.unwrap_or(5_000),
                        ..base_config()
                    });
                }
                point += 1;
            }
        }
    }
    let summaries = run_summaries(&cfgs, jobs)?;

    let mut rates = String::from("loss_prob,scheme,local_mode,mean_rate,std_rate\n");
    let mut queues =
        String::from("loss_prob,scheme,local_mode,lambda_avg,eta_avg,q_real_avg,mu_avg,nu_avg\n");
    let mut it = summaries.chunks(REPLICATIONS as usize);
    for &p in &losses {
        for scheme in SCHEMES {
            for mode in MODES {
                let chunk = it.next().expect("chunk per point");
                let rs: Vec<f64> = chunk.iter().map(per_device_rate).collect();
                let (mean, std) = mean_std(&rs);
                rates.push_str(&format!("{p},{scheme},{mode},{mean:.6},{std:.6}\n"));
                let k = chunk.len() as f64;
                let fam = chunk.iter().fold(
                    QueueFamilyMeans {
                        lambda: 0.0,
                        eta: 0.0,
                        q_real: 0.0,
                        mu: 0.0,
                        nu: 0.0,
                    },
                    |acc, s| QueueFamilyMeans {
                        lambda: acc.lambda + s.mean_queue.lambda / k,
                        eta: acc.eta + s.mean_queue.eta / k,
                        q_real: acc.q_real + s.mean_queue.q_real / k,
                        mu: acc.mu + s.mean_queue.mu / k,
                        nu: acc.nu + s.mean_queue.nu / k,
                    },
                );
                queues.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    p, scheme, mode, fam.lambda, fam.eta, fam.q_real, fam.mu, fam.nu,
                ));
            }
        }
    }
    Ok((rates, queues))
}

/// Achieved utility against the fluid optimum across the utility weight M.
fn oracle_gap_csv(root_seed: u64, jobs: usize, horizon: Option<u64>) -> Result<String, PresetError> {
    let weights = [5.0, 50.0, 500.0];
    let mut cfgs = Vec::new();
    let mut point = 0u64;
    for &m in &weights {
        for mode in MODES {
            cfgs.push(SimConfig {
                local_mode: mode,
                m_const: m,
                seed: derive_seed(root_seed, point, 0),
                horizon: horizon.unwrap_or(30_000),
                ..base_config()
            });
            point += 1;
        }
    }
    let summaries = run_summaries(&cfgs, jobs)?;

    let mut out = String::from("m_const,local_mode,sim_utility,oracle_utility,gap_percent\n");
    let mut it = summaries.iter();
    for &m in &weights {
        for mode in MODES {
            let s = it.next().expect("summary per point");
            let sol = solve_fluid(&FluidInstance::from_config(&SimConfig {
                local_mode: mode,
                ..base_config()
            }))?;
            let gap = crate::oracle::utility_gap(s, &sol)?;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.4}\n",
                m,
                mode,
                s.utility,
                sol.utility_star,
                100.0 * gap,
            ));
        }
    }
    Ok(out)
}
