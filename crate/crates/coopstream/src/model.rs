//! Domain types, configuration schema, and validation shared by the rest of
//! the simulator.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense square matrix of per-pair quantities, indexed `[row][col]`.
/// Relay-queue matrices keep their diagonal at zero; the cellular virtual-rate
/// matrix uses its diagonal for self-traffic.
pub type Matrix = Vec<Vec<f64>>;

pub fn zero_matrix(n: usize) -> Matrix {
    vec![vec![0.0; n]; n]
}

/// Sum of the off-diagonal entries of a pair matrix.
pub fn off_diagonal_sum(m: &Matrix) -> f64 {
    let mut total = 0.0;
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if r != c {
                total += v;
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Device-centric cooperation: every decision is computed at the devices.
    Dcc,
    /// Source-centric cooperation: the source decides from uplinked state.
    Scc,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Dcc => write!(f, "dcc"),
            Scheme::Scc => write!(f, "scc"),
        }
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dcc" => Ok(Scheme::Dcc),
            "scc" => Ok(Scheme::Scc),
            other => Err(format!("unknown scheme `{other}` (expected dcc or scc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalMode {
    Unicast,
    Broadcast,
}

impl fmt::Display for LocalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalMode::Unicast => write!(f, "unicast"),
            LocalMode::Broadcast => write!(f, "broadcast"),
        }
    }
}

impl FromStr for LocalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "unicast" => Ok(LocalMode::Unicast),
            "broadcast" => Ok(LocalMode::Broadcast),
            other => Err(format!(
                "unknown local mode `{other}` (expected unicast or broadcast)"
            )),
        }
    }
}

/// Per-link capacity process, i.i.d. across slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelConfig {
    Constant { rate: f64 },
    /// `rate` with probability `p_on`, else 0.
    BernoulliOnOff { rate: f64, p_on: f64 },
}

impl ChannelConfig {
    pub fn rate(&self) -> f64 {
        match *self {
            ChannelConfig::Constant { rate } => rate,
            ChannelConfig::BernoulliOnOff { rate, .. } => rate,
        }
    }

    pub fn p_on(&self) -> f64 {
        match *self {
            ChannelConfig::Constant { .. } => 1.0,
            ChannelConfig::BernoulliOnOff { p_on, .. } => p_on,
        }
    }

    /// Long-run mean capacity.
    pub fn mean(&self) -> f64 {
        self.rate() * self.p_on()
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of cooperating devices N.
    pub n_devices: usize,
    pub scheme: Scheme,
    pub local_mode: LocalMode,
    /// Utility weight M in the rate controller.
    pub m_const: f64,
    /// Admission cap per device, packets/slot.
    pub r_max: f64,
    /// Cellular real-rate back-off subtracted from cooperative virtual rates.
    pub beta: f64,
    /// Distribution of the cellular downlink capacities.
    pub cellular: ChannelConfig,
    /// Distribution of the local-area link capacities.
    pub local: ChannelConfig,
    /// Per-slot delivery-failure probability on each cellular downlink.
    pub cellular_loss_prob: f64,
    /// Per-slot delivery-failure probability on local-area links (0 = lossless).
    pub local_loss_prob: f64,
    /// Bytes per control message.
    pub control_msg_bytes: u64,
    /// Bytes per data packet.
    pub data_packet_bytes: u64,
    /// Number of slots T.
    pub horizon: u64,
    /// Root of all randomness.
    pub seed: u64,
    /// Fraction of slots excluded from time averages.
    pub warmup_fraction: f64,
    /// When set, bypasses the rate controller and admits this fixed rate every
    /// slot (used for stability experiments).
    pub pinned_admission: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_devices: 3,
            scheme: Scheme::Dcc,
            local_mode: LocalMode::Unicast,
            m_const: 50.0,
            r_max: 2.0,
            beta: 0.001,
            cellular: ChannelConfig::Constant { rate: 1.0 },
            local: ChannelConfig::Constant { rate: 1.0 },
            cellular_loss_prob: 0.0,
            local_loss_prob: 0.0,
            control_msg_bytes: 4,
            data_packet_bytes: 1000,
            horizon: 10_000,
            seed: 1,
            warmup_fraction: 0.1,
            pinned_admission: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Malformed { line: usize, content: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
}

impl SimConfig {
    /// Parses the flat `key = value` config format. Lines starting with `#`
    /// and blank lines are ignored; unset keys take their defaults.
    pub fn parse_str(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        let mut cellular_kind = String::from("constant");
        let mut cellular_rate = cfg.cellular.rate();
        let mut cellular_p_on = cfg.cellular.p_on();
        let mut local_kind = String::from("constant");
        let mut local_rate = cfg.local.rate();
        let mut local_p_on = cfg.local.p_on();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: line_no,
                content: line.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |reason: String| ConfigError::BadValue {
                line: line_no,
                key: key.to_string(),
                reason,
            };
            macro_rules! num {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| bad(e.to_string()))?
                };
            }
            match key {
                "n_devices" => cfg.n_devices = num!(usize),
                "scheme" => cfg.scheme = value.parse().map_err(bad)?,
                "local_mode" => cfg.local_mode = value.parse().map_err(bad)?,
                "m_const" => cfg.m_const = num!(f64),
                "r_max" => cfg.r_max = num!(f64),
                "beta" => cfg.beta = num!(f64),
                "cellular_kind" => cellular_kind = value.to_ascii_lowercase(),
                "cellular_rate" => cellular_rate = num!(f64),
                "cellular_p_on" => cellular_p_on = num!(f64),
                "local_kind" => local_kind = value.to_ascii_lowercase(),
                "local_rate" => local_rate = num!(f64),
                "local_p_on" => local_p_on = num!(f64),
                "cellular_loss_prob" => cfg.cellular_loss_prob = num!(f64),
                "local_loss_prob" => cfg.local_loss_prob = num!(f64),
                "control_msg_bytes" => cfg.control_msg_bytes = num!(u64),
                "data_packet_bytes" => cfg.data_packet_bytes = num!(u64),
                "horizon" => cfg.horizon = num!(u64),
                "seed" => cfg.seed = num!(u64),
                "warmup_fraction" => cfg.warmup_fraction = num!(f64),
                "pinned_admission" => cfg.pinned_admission = Some(num!(f64)),
                other => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: other.to_string(),
                    })
                }
            }
        }

        cfg.cellular = channel_from_parts(&cellular_kind, cellular_rate, cellular_p_on)
            .map_err(|reason| ConfigError::BadValue {
                line: 0,
                key: "cellular_kind".to_string(),
                reason,
            })?;
        cfg.local = channel_from_parts(&local_kind, local_rate, local_p_on).map_err(|reason| {
            ConfigError::BadValue {
                line: 0,
                key: "local_kind".to_string(),
                reason,
            }
        })?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<SimConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SimConfig::parse_str(&text)
    }

    /// Renders the config in the same `key = value` format `parse_str` reads.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("n_devices", self.n_devices.to_string());
        push("scheme", self.scheme.to_string());
        push("local_mode", self.local_mode.to_string());
        push("m_const", self.m_const.to_string());
        push("r_max", self.r_max.to_string());
        push("beta", self.beta.to_string());
        push("cellular_kind", channel_kind_name(&self.cellular).to_string());
        push("cellular_rate", self.cellular.rate().to_string());
        push("cellular_p_on", self.cellular.p_on().to_string());
        push("local_kind", channel_kind_name(&self.local).to_string());
        push("local_rate", self.local.rate().to_string());
        push("local_p_on", self.local.p_on().to_string());
        push("cellular_loss_prob", self.cellular_loss_prob.to_string());
        push("local_loss_prob", self.local_loss_prob.to_string());
        push("control_msg_bytes", self.control_msg_bytes.to_string());
        push("data_packet_bytes", self.data_packet_bytes.to_string());
        push("horizon", self.horizon.to_string());
        push("seed", self.seed.to_string());
        push("warmup_fraction", self.warmup_fraction.to_string());
        if let Some(p) = self.pinned_admission {
            push("pinned_admission", p.to_string());
        }
        out
    }
}

fn channel_kind_name(c: &ChannelConfig) -> &'static str {
    match c {
        ChannelConfig::Constant { .. } => "constant",
        ChannelConfig::BernoulliOnOff { .. } => "bernoulli",
    }
}

fn channel_from_parts(kind: &str, rate: f64, p_on: f64) -> Result<ChannelConfig, String> {
    match kind {
        "constant" => Ok(ChannelConfig::Constant { rate }),
        "bernoulli" => Ok(ChannelConfig::BernoulliOnOff { rate, p_on }),
        other => Err(format!(
            "unknown channel kind `{other}` (expected constant or bernoulli)"
        )),
    }
}

/// Checks every config invariant; returns one message per violation.
pub fn validate_config(cfg: &SimConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if cfg.n_devices < 1 {
        errs.push("n_devices must be at least 1".to_string());
    }
    if cfg.horizon < 1 {
        errs.push("horizon must be at least 1".to_string());
    }
    if !(cfg.m_const > 0.0) {
        errs.push("m_const must be positive".to_string());
    }
    if !(cfg.r_max > 0.0) {
        errs.push("r_max must be positive".to_string());
    }
    if !(cfg.beta >= 0.0) {
        errs.push("beta must be nonnegative".to_string());
    }
    for (name, ch) in [("cellular", &cfg.cellular), ("local", &cfg.local)] {
        if !(ch.rate() >= 0.0) {
            errs.push(format!("{name} rate must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&ch.p_on()) {
            errs.push(format!("{name} p_on must be in [0, 1]"));
        }
    }
    if cfg.cellular.rate() > 0.0 && cfg.beta >= cfg.cellular.rate() {
        errs.push(format!(
            "beta exceeds capacity: beta = {} must be below the minimum positive cellular rate {}",
            cfg.beta,
            cfg.cellular.rate()
        ));
    }
    if !(0.0..=1.0).contains(&cfg.cellular_loss_prob) {
        errs.push("cellular_loss_prob must be in [0, 1]".to_string());
    }
    if !(0.0..=1.0).contains(&cfg.local_loss_prob) {
        errs.push("local_loss_prob must be in [0, 1]".to_string());
    }
    if cfg.control_msg_bytes < 1 {
        errs.push("control_msg_bytes must be positive".to_string());
    }
    if cfg.data_packet_bytes < 1 {
        errs.push("data_packet_bytes must be positive".to_string());
    }
    if !(0.0..1.0).contains(&cfg.warmup_fraction) {
        errs.push("warmup_fraction must be in [0, 1)".to_string());
    }
    if let Some(p) = cfg.pinned_admission {
        if !(p >= 0.0) {
            errs.push("pinned_admission must be nonnegative".to_string());
        }
    }
    errs
}

/// All queue backlogs for one run. The scheme decides which families move;
/// the other scheme's families stay identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueBank {
    /// Virtual admission queues lambda_k (device-centric).
    pub lambda: Vec<f64>,
    /// Virtual relay queues eta[n][k]: at device n, on behalf of device k.
    pub eta: Matrix,
    /// Real relay queues q_real[n][k]: content held at n for k (device-centric).
    pub q_real: Matrix,
    /// Source queues mu_k (source-centric).
    pub mu: Vec<f64>,
    /// Relay queues nu[n][k] at device n for device k (source-centric).
    pub nu: Matrix,
}

impl QueueBank {
    pub fn zeros(n: usize) -> Self {
        QueueBank {
            lambda: vec![0.0; n],
            eta: zero_matrix(n),
            q_real: zero_matrix(n),
            mu: vec![0.0; n],
            nu: zero_matrix(n),
        }
    }

    pub fn n_devices(&self) -> usize {
        self.lambda.len()
    }

    /// Total backlog across every family (virtual and real).
    pub fn total_backlog(&self) -> f64 {
        self.lambda.iter().sum::<f64>()
            + off_diagonal_sum(&self.eta)
            + off_diagonal_sum(&self.q_real)
            + self.mu.iter().sum::<f64>()
            + off_diagonal_sum(&self.nu)
    }
}

/// All backlogs start at zero; independent of seed.
pub fn fresh_queue_bank(cfg: &SimConfig) -> QueueBank {
    QueueBank::zeros(cfg.n_devices)
}

/// One broadcast activation: transmitter, addressed receiver set, rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastPick {
    pub tx: usize,
    pub receivers: Vec<usize>,
    pub rate: f64,
}

/// One slot's control outputs across both schemes; fields the active scheme
/// does not produce stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    /// Admitted virtual rates y_k (device-centric).
    pub y: Vec<f64>,
    /// Admitted source rates x_k (source-centric).
    pub x_admit: Vec<f64>,
    /// Virtual cellular rates g_cell[k][n]: at device k on behalf of n;
    /// diagonal is self-traffic.
    pub g_cell: Matrix,
    /// Real cellular rates x_cell[k][n]: toward device k to help device n.
    pub x_cell: Matrix,
    /// Virtual local rates g_local[k][n]: content for k requested from n.
    pub g_local: Matrix,
    /// Real local rates h_local[n][k]: transmitted from n to k.
    pub h_local: Matrix,
    /// Broadcast allocations (empty in unicast mode).
    pub f_bcast: Vec<BroadcastPick>,
    /// Packets requested on each downlink: max over n of x_cell[k][n].
    pub cellular_request: Vec<f64>,
}

impl SlotDecision {
    pub fn zeros(n: usize) -> Self {
        SlotDecision {
            y: vec![0.0; n],
            x_admit: vec![0.0; n],
            g_cell: zero_matrix(n),
            x_cell: zero_matrix(n),
            g_local: zero_matrix(n),
            h_local: zero_matrix(n),
            f_bcast: Vec::new(),
            cellular_request: vec![0.0; n],
        }
    }
}
