//! The slotted simulation loop: per-slot ordering of control, transmission,
//! loss, and queue updates, producing a Trace.
//!
//! Slot order: sample channels; (source-centric) uplink control reports; rate
//! control; cellular scheduling; local-area scheduling; cellular loss; real
//! queue updates; (device-centric) virtual queue updates.

use thiserror::Error;

use crate::channels::{
    cellular_link_kept, local_link_kept, sample_snapshot, ChannelSnapshot,
};
use crate::dcc::{
    dcc_broadcast_schedule, dcc_cellular_schedule, dcc_rate_control, dcc_unicast_schedule,
};
use crate::model::{
    fresh_queue_bank, validate_config, zero_matrix, LocalMode, Matrix, QueueBank, Scheme,
    SimConfig, SlotDecision,
};
use crate::scc::{
    control_plane_step, scc_broadcast_schedule, scc_cellular_schedule, scc_control_bytes_per_slot,
    scc_rate_control, scc_unicast_schedule, ControlPlaneView,
};
use crate::search::{BroadcastSearch, EXACT_SEARCH_MAX_DEVICES};

/// Everything recorded about one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub slot: u64,
    pub decision: SlotDecision,
    pub queues_after: QueueBank,
    /// Post-loss cellular amounts, indexed like `x_cell`.
    pub delivered_cellular: Matrix,
    /// Actually transferred local amounts (backlog-capped, post local loss),
    /// indexed like `h_local`.
    pub delivered_local: Matrix,
    pub control_bytes_uplink: u64,
    pub data_bytes_down: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: SimConfig,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}

/// Mutable state threaded through the run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub queues: QueueBank,
    pub view: ControlPlaneView,
}

impl SimState {
    pub fn new(cfg: &SimConfig) -> Self {
        SimState {
            queues: fresh_queue_bank(cfg),
            view: ControlPlaneView::new(cfg.n_devices),
        }
    }
}

fn broadcast_search_for(cfg: &SimConfig) -> BroadcastSearch {
    if cfg.n_devices <= EXACT_SEARCH_MAX_DEVICES {
        BroadcastSearch::Exact
    } else {
        BroadcastSearch::Greedy
    }
}

/// Advances one slot and returns its record. Never fails mid-run: the search
/// mode is picked to fit the population.
pub fn step(state: &mut SimState, cfg: &SimConfig, slot: u64) -> TraceRecord {
    let snap = sample_snapshot(cfg.seed, slot, cfg);
    match cfg.scheme {
        Scheme::Dcc => step_dcc(state, cfg, slot, &snap),
        Scheme::Scc => step_scc(state, cfg, slot, &snap),
    }
}

fn step_dcc(state: &mut SimState, cfg: &SimConfig, slot: u64, snap: &ChannelSnapshot) -> TraceRecord {
    let n = cfg.n_devices;
    let mut decision = SlotDecision::zeros(n);

    for k in 0..n {
        decision.y[k] = match cfg.pinned_admission {
            Some(rate) => rate,
            None => dcc_rate_control(state.queues.lambda[k], cfg.m_const, cfg.r_max),
        };
    }

    for k in 0..n {
        let cell = dcc_cellular_schedule(
            k,
            state.queues.lambda[k],
            &state.queues.eta[k],
            &state.queues.q_real[k],
            snap.cellular[k],
            cfg.beta,
        );
        decision.g_cell[k] = cell.g_row;
        decision.x_cell[k] = cell.x_row;
        decision.cellular_request[k] = cell.request;
    }

    match cfg.local_mode {
        LocalMode::Unicast => {
            let (g_local, h_local) = dcc_unicast_schedule(&state.queues, snap);
            decision.g_local = g_local;
            decision.h_local = h_local;
        }
        LocalMode::Broadcast => {
            let (picks, g_local, h_local) =
                dcc_broadcast_schedule(&state.queues, snap, broadcast_search_for(cfg))
                    .expect("search mode fits the population");
            decision.f_bcast = picks;
            decision.g_local = g_local;
            decision.h_local = h_local;
        }
    }

    let (delivered_cellular, data_bytes_down) = apply_downlink_loss(cfg, slot, &decision, snap);

    // Real transfers are backlog-capped: a relay cannot forward content it
    // does not yet hold.
    let mut h_actual = zero_matrix(n);
    let mut delivered_local = zero_matrix(n);
    for tx in 0..n {
        for rx in 0..n {
            if tx != rx {
                h_actual[tx][rx] = decision.h_local[tx][rx].min(state.queues.q_real[tx][rx]);
                delivered_local[tx][rx] =
                    if local_link_kept(cfg.seed, slot, tx, rx, n, cfg.local_loss_prob) {
                        h_actual[tx][rx]
                    } else {
                        0.0
                    };
            }
        }
    }

    for tx in 0..n {
        for rx in 0..n {
            if tx != rx {
                state.queues.q_real[tx][rx] = (state.queues.q_real[tx][rx] - h_actual[tx][rx])
                    .max(0.0)
                    + delivered_cellular[tx][rx];
            }
        }
    }

    crate::dcc::dcc_update_virtual_queues(&mut state.queues, &decision);

    TraceRecord {
        slot,
        decision,
        queues_after: state.queues.clone(),
        delivered_cellular,
        delivered_local,
        control_bytes_uplink: n as u64 * cfg.control_msg_bytes,
        data_bytes_down,
    }
}

fn step_scc(state: &mut SimState, cfg: &SimConfig, slot: u64, snap: &ChannelSnapshot) -> TraceRecord {
    let n = cfg.n_devices;
    let mut decision = SlotDecision::zeros(n);

    control_plane_step(
        cfg.seed,
        slot,
        &state.queues.nu,
        &snap.cellular,
        &mut state.view,
        cfg.cellular_loss_prob,
    );

    for k in 0..n {
        decision.x_admit[k] = match cfg.pinned_admission {
            Some(rate) => rate,
            None => scc_rate_control(state.queues.mu[k], cfg.m_const, cfg.r_max),
        };
    }

    for k in 0..n {
        let nu_col: Vec<f64> = (0..n).map(|dev| state.view.nu_view[dev][k]).collect();
        let x_col = scc_cellular_schedule(k, state.queues.mu[k], &nu_col, &state.view.chan_view);
        for dev in 0..n {
            decision.x_cell[dev][k] = x_col[dev];
        }
    }
    for dev in 0..n {
        decision.cellular_request[dev] = decision.x_cell[dev].iter().cloned().fold(0.0, f64::max);
    }

    match cfg.local_mode {
        LocalMode::Unicast => {
            decision.h_local = scc_unicast_schedule(&state.queues.nu, snap);
        }
        LocalMode::Broadcast => {
            let (picks, h_local) =
                scc_broadcast_schedule(&state.queues.nu, snap, broadcast_search_for(cfg))
                    .expect("search mode fits the population");
            decision.f_bcast = picks;
            decision.h_local = h_local;
        }
    }

    let (delivered_cellular, data_bytes_down) = apply_downlink_loss(cfg, slot, &decision, snap);

    let mut h_actual = zero_matrix(n);
    let mut delivered_local = zero_matrix(n);
    for tx in 0..n {
        for rx in 0..n {
            if tx != rx {
                h_actual[tx][rx] = decision.h_local[tx][rx].min(state.queues.nu[tx][rx]);
                delivered_local[tx][rx] =
                    if local_link_kept(cfg.seed, slot, tx, rx, n, cfg.local_loss_prob) {
                        h_actual[tx][rx]
                    } else {
                        0.0
                    };
            }
        }
    }

    let mut mu = std::mem::take(&mut state.queues.mu);
    crate::scc::scc_update_queues(
        &mut mu,
        &mut state.queues.nu,
        &decision,
        &h_actual,
        &delivered_cellular,
    );
    state.queues.mu = mu;

    TraceRecord {
        slot,
        decision,
        queues_after: state.queues.clone(),
        delivered_cellular,
        delivered_local,
        control_bytes_uplink: scc_control_bytes_per_slot(n as u64, cfg.control_msg_bytes),
        data_bytes_down,
    }
}

/// One erasure draw per downlink per slot; delivered amounts are additionally
/// truncated at the realized capacity (stale capacity views cannot conjure
/// throughput).
fn apply_downlink_loss(
    cfg: &SimConfig,
    slot: u64,
    decision: &SlotDecision,
    snap: &ChannelSnapshot,
) -> (Matrix, f64) {
    let n = cfg.n_devices;
    let mut delivered = zero_matrix(n);
    let mut data_bytes = 0.0;
    for link in 0..n {
        if cellular_link_kept(cfg.seed, slot, link, cfg.cellular_loss_prob) {
            for helped in 0..n {
                delivered[link][helped] = decision.x_cell[link][helped].min(snap.cellular[link]);
            }
            let got = delivered[link].iter().cloned().fold(0.0, f64::max);
            data_bytes += got * cfg.data_packet_bytes as f64;
        }
    }
    (delivered, data_bytes)
}

/// Folds `step` over the horizon from empty queues, handing each record to
/// the visitor without retaining it. Deterministic in (config, seed).
pub fn run_with<F: FnMut(&TraceRecord)>(cfg: &SimConfig, mut visit: F) -> Result<(), RunError> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(RunError::InvalidConfig(violations));
    }
    let mut state = SimState::new(cfg);
    for slot in 0..cfg.horizon {
        let record = step(&mut state, cfg, slot);
        visit(&record);
    }
    Ok(())
}

/// Folds `step` over the horizon from empty queues, keeping the full trace.
/// Deterministic in (config, seed).
pub fn run(cfg: &SimConfig) -> Result<Trace, RunError> {
    let mut records = Vec::with_capacity(cfg.horizon as usize);
    run_with(cfg, |r| records.push(r.clone()))?;
    Ok(Trace {
        config: cfg.clone(),
        records,
    })
}
