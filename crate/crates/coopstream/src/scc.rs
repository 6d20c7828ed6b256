//! Source-centric controller: the source decides rate control and cellular
//! scheduling from a possibly stale uplinked view of device state, while
//! local-area scheduling stays device-local on true relay backlogs.

use crate::channels::{control_report_kept, ChannelSnapshot};
use crate::model::{zero_matrix, BroadcastPick, Matrix, SlotDecision};
use crate::search::{best_broadcast, BroadcastSearch, ScheduleError};

/// The source's last-received copy of device state. Each device's uplink
/// report carries its whole relay-queue row and its channel measurement; a
/// lost report leaves the previous values in place (hold-last-sample).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlaneView {
    /// Last-received nu[n][k] values.
    pub nu_view: Matrix,
    /// Last-received cellular capacity report per device.
    pub chan_view: Vec<f64>,
    /// Slots since device n's report last got through.
    pub age: Vec<u64>,
}

impl ControlPlaneView {
    pub fn new(n: usize) -> Self {
        ControlPlaneView {
            nu_view: zero_matrix(n),
            chan_view: vec![0.0; n],
            age: vec![0; n],
        }
    }
}

/// Admitted source rate, same closed form as the device-centric controller
/// with the source queue in place of the virtual admission queue.
pub fn scc_rate_control(mu: f64, m_const: f64, r_max: f64) -> f64 {
    if mu <= 0.0 {
        r_max
    } else {
        (m_const / mu - 1.0).clamp(0.0, r_max)
    }
}

/// Cellular rates pushed for device k's flow: x[n] is the rate on downlink n
/// helping k. Bang-bang per coordinate against the *viewed* queue and channel
/// state, which is where staleness bites.
pub fn scc_cellular_schedule(k: usize, mu_k: f64, nu_view_col: &[f64], chan_view: &[f64]) -> Vec<f64> {
    let n = chan_view.len();
    let mut x = vec![0.0; n];
    if mu_k > 0.0 {
        x[k] = chan_view[k];
    }
    for dev in 0..n {
        if dev != k && mu_k - nu_view_col[dev] > 0.0 {
            x[dev] = chan_view[dev];
        }
    }
    x
}

/// Single max-weight local link on true relay backlogs; ties break to the
/// smallest (relay, receiver) pair. Returns h[n][k].
pub fn scc_unicast_schedule(nu: &Matrix, snapshot: &ChannelSnapshot) -> Matrix {
    let n = nu.len();
    let mut h = zero_matrix(n);
    let mut best: Option<(usize, usize, f64)> = None;
    for tx in 0..n {
        for k in 0..n {
            if tx == k {
                continue;
            }
            let score = nu[tx][k] * snapshot.local[tx][k];
            if nu[tx][k] > 0.0 && score > 0.0 && best.map_or(true, |(_, _, s)| score > s) {
                best = Some((tx, k, score));
            }
        }
    }
    if let Some((tx, k, _)) = best {
        h[tx][k] = snapshot.local[tx][k];
    }
    h
}

/// Max-weight broadcast on true relay backlogs; same search and tie-breaks
/// as the device-centric broadcast scheduler.
pub fn scc_broadcast_schedule(
    nu: &Matrix,
    snapshot: &ChannelSnapshot,
    search: BroadcastSearch,
) -> Result<(Vec<BroadcastPick>, Matrix), ScheduleError> {
    let n = nu.len();
    let mut h = zero_matrix(n);
    let mut picks = Vec::new();
    if let Some(choice) = best_broadcast(nu, snapshot, search)? {
        for &k in &choice.receivers {
            h[choice.tx][k] = choice.rate;
        }
        picks.push(BroadcastPick {
            tx: choice.tx,
            receivers: choice.receivers,
            rate: choice.rate,
        });
    }
    Ok((picks, h))
}

/// Source-centric queue dynamics: real queues on both sides see only what
/// the lossy downlink actually delivered. Content whose slot was erased
/// stays in the source queue (there is no phantom drain), which is what
/// couples the source's admission control to the downlink loss rate.
pub fn scc_update_queues(
    mu: &mut [f64],
    nu: &mut Matrix,
    decision: &SlotDecision,
    h_actual: &Matrix,
    delivered_cellular: &Matrix,
) {
    let n = mu.len();
    for k in 0..n {
        let pushed: f64 = (0..n).map(|dev| delivered_cellular[dev][k]).sum();
        mu[k] = (mu[k] - pushed).max(0.0) + decision.x_admit[k];
    }
    for tx in 0..n {
        for k in 0..n {
            if tx != k {
                nu[tx][k] =
                    (nu[tx][k] - h_actual[tx][k]).max(0.0) + delivered_cellular[tx][k];
            }
        }
    }
}

/// One slot of the uplink control plane: each device reports its relay-queue
/// row and channel measurement; the report is erased with the cellular loss
/// probability. On success the view refreshes and its age resets.
pub fn control_plane_step(
    seed: u64,
    slot: u64,
    true_nu: &Matrix,
    true_caps: &[f64],
    view: &mut ControlPlaneView,
    loss_prob: f64,
) {
    let n = true_caps.len();
    for dev in 0..n {
        if control_report_kept(seed, slot, dev, loss_prob) {
            view.nu_view[dev].clone_from(&true_nu[dev]);
            view.chan_view[dev] = true_caps[dev];
            view.age[dev] = 0;
        } else {
            view.age[dev] += 1;
        }
    }
}

/// Uplink control bytes per slot for the whole group: each device carries its
/// N-1 queue entries plus one channel entry, one message per device per slot.
pub fn scc_control_bytes_per_slot(n_devices: u64, control_msg_bytes: u64) -> u64 {
    n_devices * control_msg_bytes * n_devices
}
