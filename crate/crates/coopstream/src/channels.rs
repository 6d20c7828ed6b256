//! Per-slot channel realizations, feasible-rate checks, and the link loss
//! processes. Everything here is a pure function of (seed, slot, index), so
//! runs are reproducible and sweeps can share nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ChannelConfig, Matrix, SimConfig};

/// Realized capacities for one slot. `local[n][k]` is the link from n to k;
/// the matrix is sampled per ordered pair and need not be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub cellular: Vec<f64>,
    pub local: Matrix,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("broadcast receiver set must be nonempty")]
    EmptyReceiverSet,
}

const DOMAIN_CHANNEL: u64 = 1;
const DOMAIN_CELL_LOSS: u64 = 2;
const DOMAIN_CONTROL: u64 = 3;
const DOMAIN_LOCAL_LOSS: u64 = 4;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One uniform in [0, 1) keyed by (seed, domain, slot, index).
fn keyed_uniform(seed: u64, domain: u64, slot: u64, index: u64) -> f64 {
    let mut s = seed;
    for v in [domain, slot, index] {
        s = splitmix64(s ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(splitmix64(s)).gen::<f64>()
}

fn realize(ch: &ChannelConfig, u: f64) -> f64 {
    if u < ch.p_on() {
        ch.rate()
    } else {
        0.0
    }
}

/// Draws this slot's channel state. Every entry consumes exactly one uniform,
/// so `Constant(r)` and `BernoulliOnOff(r, 1.0)` produce identical snapshots.
pub fn sample_snapshot(seed: u64, slot: u64, cfg: &SimConfig) -> ChannelSnapshot {
    let n = cfg.n_devices;
    let cellular: Vec<f64> = (0..n)
        .map(|k| {
            realize(
                &cfg.cellular,
                keyed_uniform(seed, DOMAIN_CHANNEL, slot, k as u64),
            )
        })
        .collect();
    let mut local = crate::model::zero_matrix(n);
    for (tx, row) in local.iter_mut().enumerate() {
        for (rx, cap) in row.iter_mut().enumerate() {
            if tx != rx {
                let index = (n + tx * n + rx) as u64;
                *cap = realize(&cfg.local, keyed_uniform(seed, DOMAIN_CHANNEL, slot, index));
            }
        }
    }
    ChannelSnapshot { cellular, local }
}

/// Cellular links are interference free: each downlink just needs its own
/// request under its own capacity.
pub fn cellular_feasible(requests: &[f64], snapshot: &ChannelSnapshot) -> bool {
    requests
        .iter()
        .zip(&snapshot.cellular)
        .all(|(r, cap)| *r <= *cap)
}

/// Protocol model: at most one point-to-point local transmission per slot,
/// within its link capacity.
pub fn unicast_feasible(h: &Matrix, snapshot: &ChannelSnapshot) -> bool {
    let mut active: Option<(usize, usize)> = None;
    for (tx, row) in h.iter().enumerate() {
        for (rx, rate) in row.iter().enumerate() {
            if *rate > 0.0 {
                if active.is_some() {
                    return false;
                }
                if *rate > snapshot.local[tx][rx] {
                    return false;
                }
                active = Some((tx, rx));
            }
        }
    }
    true
}

/// Weakest-receiver rule: a broadcast to set J is decodable by every member
/// only at the minimum member link rate.
pub fn broadcast_rate(
    transmitter: usize,
    receivers: &[usize],
    snapshot: &ChannelSnapshot,
) -> Result<f64, ChannelError> {
    if receivers.is_empty() {
        return Err(ChannelError::EmptyReceiverSet);
    }
    Ok(receivers
        .iter()
        .map(|&k| snapshot.local[transmitter][k])
        .fold(f64::INFINITY, f64::min))
}

/// Whether this slot's transfer on cellular downlink `link` survives.
pub fn cellular_link_kept(seed: u64, slot: u64, link: usize, loss_prob: f64) -> bool {
    keyed_uniform(seed, DOMAIN_CELL_LOSS, slot, link as u64) >= loss_prob
}

/// Slot-level Bernoulli erasure of a cellular transfer.
pub fn apply_cellular_loss(seed: u64, slot: u64, link: usize, amount: f64, cfg: &SimConfig) -> f64 {
    if cellular_link_kept(seed, slot, link, cfg.cellular_loss_prob) {
        amount
    } else {
        0.0
    }
}

/// Whether the local-area transfer on ordered pair (tx, rx) survives.
pub fn local_link_kept(seed: u64, slot: u64, tx: usize, rx: usize, n: usize, loss_prob: f64) -> bool {
    if loss_prob <= 0.0 {
        return true;
    }
    keyed_uniform(seed, DOMAIN_LOCAL_LOSS, slot, (tx * n + rx) as u64) >= loss_prob
}

/// Whether device `device`'s uplink control report reaches the source.
pub fn control_report_kept(seed: u64, slot: u64, device: usize, loss_prob: f64) -> bool {
    keyed_uniform(seed, DOMAIN_CONTROL, slot, device as u64) >= loss_prob
}
