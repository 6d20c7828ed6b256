//! Trace post-processing: warm-up-excluded time averages, queue statistics,
//! Little's-law delay, overhead accounting, and file export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;
use crate::model::{off_diagonal_sum, Scheme, SimConfig};

/// Per-family queue averages: pooled across devices/pairs, then over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueFamilyMeans {
    pub lambda: f64,
    pub eta: f64,
    pub q_real: f64,
    pub mu: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub n_devices: usize,
    /// Warm-up-excluded time average of the admitted rate, packets/slot.
    pub mean_rate_per_device: Vec<f64>,
    /// Warm-up-excluded time average of content actually reaching each
    /// device (direct downlink plus relayed local deliveries), packets/slot.
    /// Equals the admitted rate in lossless equilibrium; under downlink loss
    /// the admitted rate stops tracking what devices receive.
    pub mean_goodput_per_device: Vec<f64>,
    pub mean_queue: QueueFamilyMeans,
    /// Little's-law estimate, slots.
    pub delay_estimate: f64,
    pub overhead_percent: f64,
    /// Sum over devices of log(1 + mean rate).
    pub utility: f64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("horizon shorter than warm-up window: no slots left to average")]
    EmptyWindow,
    #[error("delay undefined: zero delivered throughput")]
    ZeroThroughput,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn warmup_slots(cfg: &SimConfig, horizon: u64) -> u64 {
    (cfg.warmup_fraction * horizon as f64).floor() as u64
}

/// Streaming summary builder, so sweeps at large populations never need to
/// hold a full trace in memory. Feed every record in slot order.
#[derive(Debug, Clone)]
pub struct SummaryAccumulator {
    scheme: Scheme,
    n: usize,
    from_slot: u64,
    control_msg_bytes: u64,
    data_packet_bytes: u64,
    slots: u64,
    rate_sum: Vec<f64>,
    goodput_sum: Vec<f64>,
    fam_sum: QueueFamilyMeans,
    backlog_sum: f64,
    delivered_sum: f64,
}

impl SummaryAccumulator {
    /// `horizon` is the run length the warm-up window is taken from.
    pub fn new(cfg: &SimConfig, horizon: u64) -> Self {
        SummaryAccumulator {
            scheme: cfg.scheme,
            n: cfg.n_devices,
            from_slot: warmup_slots(cfg, horizon),
            control_msg_bytes: cfg.control_msg_bytes,
            data_packet_bytes: cfg.data_packet_bytes,
            slots: 0,
            rate_sum: vec![0.0; cfg.n_devices],
            goodput_sum: vec![0.0; cfg.n_devices],
            fam_sum: QueueFamilyMeans {
                lambda: 0.0,
                eta: 0.0,
                q_real: 0.0,
                mu: 0.0,
                nu: 0.0,
            },
            backlog_sum: 0.0,
            delivered_sum: 0.0,
        }
    }

    pub fn push(&mut self, r: &crate::engine::TraceRecord) {
        if r.slot < self.from_slot {
            return;
        }
        self.slots += 1;
        let n = self.n;
        let pairs = (n * n.saturating_sub(1)) as f64;
        let admitted = match self.scheme {
            Scheme::Dcc => &r.decision.y,
            Scheme::Scc => &r.decision.x_admit,
        };
        for k in 0..n {
            self.rate_sum[k] += admitted[k];
        }
        self.fam_sum.lambda += r.queues_after.lambda.iter().sum::<f64>() / n as f64;
        self.fam_sum.mu += r.queues_after.mu.iter().sum::<f64>() / n as f64;
        if pairs > 0.0 {
            self.fam_sum.eta += off_diagonal_sum(&r.queues_after.eta) / pairs;
            self.fam_sum.q_real += off_diagonal_sum(&r.queues_after.q_real) / pairs;
            self.fam_sum.nu += off_diagonal_sum(&r.queues_after.nu) / pairs;
        }
        self.backlog_sum += match self.scheme {
            Scheme::Dcc => off_diagonal_sum(&r.queues_after.q_real),
            Scheme::Scc => {
                r.queues_after.mu.iter().sum::<f64>() + off_diagonal_sum(&r.queues_after.nu)
            }
        };
        for k in 0..n {
            let mut got = r.delivered_cellular[k][k];
            for tx in 0..n {
                if tx != k {
                    got += r.delivered_local[tx][k];
                }
            }
            self.goodput_sum[k] += got;
            self.delivered_sum += got;
        }
    }

    pub fn finish(self) -> Result<RunSummary, MetricsError> {
        if self.slots == 0 {
            return Err(MetricsError::EmptyWindow);
        }
        let slots = self.slots as f64;
        let mean_rate: Vec<f64> = self.rate_sum.iter().map(|s| s / slots).collect();
        let mean_goodput: Vec<f64> = self.goodput_sum.iter().map(|s| s / slots).collect();
        let fam = QueueFamilyMeans {
            lambda: self.fam_sum.lambda / slots,
            eta: self.fam_sum.eta / slots,
            q_real: self.fam_sum.q_real / slots,
            mu: self.fam_sum.mu / slots,
            nu: self.fam_sum.nu / slots,
        };
        let backlog = self.backlog_sum / slots;
        let delivered = self.delivered_sum / slots;
        let delay = if backlog == 0.0 {
            0.0
        } else if delivered <= 0.0 {
            return Err(MetricsError::ZeroThroughput);
        } else {
            backlog / delivered
        };
        let utility = mean_rate.iter().map(|&r| (1.0 + r).ln()).sum();
        Ok(RunSummary {
            scheme: self.scheme,
            n_devices: self.n,
            mean_rate_per_device: mean_rate,
            mean_goodput_per_device: mean_goodput,
            mean_queue: fam,
            delay_estimate: delay,
            overhead_percent: overhead_percent(
                self.scheme,
                self.n,
                self.control_msg_bytes,
                self.data_packet_bytes,
            ),
            utility,
        })
    }
}

/// Warm-up-excluded run statistics.
pub fn summarize(trace: &Trace) -> Result<RunSummary, MetricsError> {
    let mut acc = SummaryAccumulator::new(&trace.config, trace.records.len() as u64);
    for r in &trace.records {
        acc.push(r);
    }
    acc.finish()
}

/// Control overhead relative to one data packet per slot. The source-centric
/// uplink carries N quantities per device (linear in N); the device-centric
/// uplink carries one request message regardless of N.
pub fn overhead_percent(
    scheme: Scheme,
    n_devices: usize,
    control_msg_bytes: u64,
    data_packet_bytes: u64,
) -> f64 {
    let per_msg = 100.0 * control_msg_bytes as f64 / data_packet_bytes as f64;
    match scheme {
        Scheme::Scc => per_msg * n_devices as f64,
        Scheme::Dcc => per_msg,
    }
}

/// Average delay in slots: time-average stored real backlog over time-average
/// delivered rate. Virtual queues are counters holding no data, so the
/// device-centric estimate counts only the real relay queues.
pub fn littles_law_delay(trace: &Trace) -> Result<f64, MetricsError> {
    Ok(summarize(trace)?.delay_estimate)
}

/// Stable per-slot CSV schema: see the README for column documentation.
pub fn trace_csv_string(trace: &Trace) -> String {
    let n = trace.config.n_devices;
    let mut out = String::new();
    out.push_str("slot");
    for k in 0..n {
        out.push_str(&format!(",rate_{k}"));
    }
    out.push_str(
        ",lambda_total,eta_total,q_real_total,mu_total,nu_total,\
         delivered_cellular_total,delivered_local_total,control_bytes_uplink,data_bytes_down\n",
    );
    for r in &trace.records {
        out.push_str(&r.slot.to_string());
        let admitted = match trace.config.scheme {
            Scheme::Dcc => &r.decision.y,
            Scheme::Scc => &r.decision.x_admit,
        };
        for v in admitted {
            out.push_str(&format!(",{v}"));
        }
        let q = &r.queues_after;
        out.push_str(&format!(
            ",{},{},{},{},{},{},{},{},{}\n",
            q.lambda.iter().sum::<f64>(),
            off_diagonal_sum(&q.eta),
            off_diagonal_sum(&q.q_real),
            q.mu.iter().sum::<f64>(),
            off_diagonal_sum(&q.nu),
            r.delivered_cellular.iter().flatten().sum::<f64>(),
            r.delivered_local.iter().flatten().sum::<f64>(),
            r.control_bytes_uplink,
            r.data_bytes_down,
        ));
    }
    out
}

pub fn summary_json_string(summary: &RunSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes")
}

/// Single-row CSV rendering of a summary.
pub fn summary_csv_string(summary: &RunSummary) -> String {
    let mut out = String::from(
        "scheme,n_devices,mean_rate,mean_goodput,delay_estimate,overhead_percent,utility,\
         lambda_avg,eta_avg,q_real_avg,mu_avg,nu_avg\n",
    );
    let mean_rate = summary.mean_rate_per_device.iter().sum::<f64>()
        / summary.mean_rate_per_device.len().max(1) as f64;
    let mean_goodput = summary.mean_goodput_per_device.iter().sum::<f64>()
        / summary.mean_goodput_per_device.len().max(1) as f64;
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        summary.scheme,
        summary.n_devices,
        mean_rate,
        mean_goodput,
        summary.delay_estimate,
        summary.overhead_percent,
        summary.utility,
        summary.mean_queue.lambda,
        summary.mean_queue.eta,
        summary.mean_queue.q_real,
        summary.mean_queue.mu,
        summary.mean_queue.nu,
    ));
    out
}

pub fn write_file<P: AsRef<Path>>(path: P, contents: &str) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let io_err = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(contents.as_bytes()).map_err(io_err)
}

pub fn export_trace_csv<P: AsRef<Path>>(trace: &Trace, path: P) -> Result<(), MetricsError> {
    write_file(path, &trace_csv_string(trace))
}

pub fn export_summary_json<P: AsRef<Path>>(summary: &RunSummary, path: P) -> Result<(), MetricsError> {
    write_file(path, &summary_json_string(summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Trace, TraceRecord};
    use crate::model::{zero_matrix, QueueBank, SimConfig, SlotDecision};

    fn synthetic_trace<F: Fn(u64, &mut TraceRecord)>(cfg: SimConfig, slots: u64, fill: F) -> Trace {
        let n = cfg.n_devices;
        let records = (0..slots)
            .map(|slot| {
                let mut r = TraceRecord {
                    slot,
                    decision: SlotDecision::zeros(n),
                    queues_after: QueueBank::zeros(n),
                    delivered_cellular: zero_matrix(n),
                    delivered_local: zero_matrix(n),
                    control_bytes_uplink: 0,
                    data_bytes_down: 0.0,
                };
                fill(slot, &mut r);
                r
            })
            .collect();
        Trace {
            config: cfg,
            records,
        }
    }

    #[test]
    fn all_zero_trace_gives_zero_summary() {
        let trace = synthetic_trace(SimConfig::default(), 100, |_, _| {});
        let s = summarize(&trace).unwrap();
        assert_eq!(s.mean_rate_per_device, vec![0.0; 3]);
        assert_eq!(s.delay_estimate, 0.0);
        assert_eq!(s.utility, 0.0);
        assert_eq!(s.mean_queue.lambda, 0.0);
    }

    #[test]
    fn constant_rate_is_exact() {
        let trace = synthetic_trace(SimConfig::default(), 200, |_, r| {
            r.decision.y = vec![1.0; 3];
        });
        let s = summarize(&trace).unwrap();
        assert_eq!(s.mean_rate_per_device, vec![1.0; 3]);
        assert!((s.utility - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn overhead_anchor_values() {
        assert_eq!(overhead_percent(Scheme::Scc, 50, 4, 1000), 20.0);
        assert_eq!(overhead_percent(Scheme::Dcc, 50, 4, 1000), 0.4);
        assert_eq!(
            overhead_percent(Scheme::Scc, 1, 4, 1000),
            overhead_percent(Scheme::Dcc, 1, 4, 1000)
        );
    }

    #[test]
    fn overhead_shapes_in_n() {
        let mut prev = 0.0;
        for n in 1..=60 {
            let scc = overhead_percent(Scheme::Scc, n, 4, 1000);
            assert!(scc > prev);
            assert!((scc - 0.4 * n as f64).abs() < 1e-12);
            prev = scc;
            assert_eq!(overhead_percent(Scheme::Dcc, n, 4, 1000), 0.4);
        }
    }

    #[test]
    fn littles_law_examples() {
        // Constant real backlog 2, constant delivered rate 1 -> 2 slots.
        let trace = synthetic_trace(SimConfig::default(), 100, |_, r| {
            r.queues_after.q_real[1][0] = 2.0;
            r.delivered_cellular[0][0] = 1.0;
        });
        assert!((littles_law_delay(&trace).unwrap() - 2.0).abs() < 1e-12);

        // Zero backlog -> 0 regardless of throughput.
        let idle = synthetic_trace(SimConfig::default(), 10, |_, _| {});
        assert_eq!(littles_law_delay(&idle).unwrap(), 0.0);

        // Backlog with zero throughput -> explicit error.
        let stuck = synthetic_trace(SimConfig::default(), 10, |_, r| {
            r.queues_after.q_real[1][0] = 2.0;
        });
        assert!(matches!(
            littles_law_delay(&stuck),
            Err(MetricsError::ZeroThroughput)
        ));
    }

    #[test]
    fn summary_json_round_trips() {
        let trace = synthetic_trace(SimConfig::default(), 50, |_, r| {
            r.decision.y = vec![0.5, 1.0, 1.5];
            r.delivered_cellular[0][0] = 1.0;
            r.queues_after.q_real[1][0] = 0.25;
        });
        let s = summarize(&trace).unwrap();
        let back: RunSummary = serde_json::from_str(&summary_json_string(&s)).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn trace_csv_shape() {
        let trace = synthetic_trace(SimConfig::default(), 25, |_, _| {});
        let csv = trace_csv_string(&trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 26);
        assert_eq!(
            lines[0],
            "slot,rate_0,rate_1,rate_2,lambda_total,eta_total,q_real_total,mu_total,nu_total,\
             delivered_cellular_total,delivered_local_total,control_bytes_uplink,data_bytes_down"
        );
    }

    #[test]
    fn zero_warmup_matches_plain_mean() {
        let cfg = SimConfig {
            warmup_fraction: 0.0,
            ..SimConfig::default()
        };
        let trace = synthetic_trace(cfg, 10, |slot, r| {
            r.decision.y = vec![slot as f64; 3];
        });
        let s = summarize(&trace).unwrap();
        assert_eq!(s.mean_rate_per_device[0], 4.5);
    }
}
