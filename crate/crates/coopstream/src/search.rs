//! Local-area max-weight activation searches shared by the two controllers.
//! Weights are indexed `[transmitter][receiver]`; the winning activation is
//! the positive-score maximum, with ties resolved to the smallest transmitter
//! and then the smallest subset encoding.

use thiserror::Error;

use crate::channels::ChannelSnapshot;
use crate::model::Matrix;

/// How broadcast receiver sets are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastSearch {
    /// All subsets; only valid up to 12 devices.
    Exact,
    /// Rate-sorted prefix sets; exact when all receiver weights are positive.
    Greedy,
    /// Singleton receiver sets only; collapses to unicast scheduling.
    SingletonOnly,
}

/// Largest population exact subset enumeration accepts.
pub const EXACT_SEARCH_MAX_DEVICES: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error(
        "exact broadcast enumeration supports at most {EXACT_SEARCH_MAX_DEVICES} devices, got {n_devices}"
    )]
    ExactTooLarge { n_devices: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BroadcastChoice {
    pub tx: usize,
    pub receivers: Vec<usize>,
    pub rate: f64,
    pub score: f64,
}

/// Best single broadcast activation, or `None` when no set scores positive.
pub(crate) fn best_broadcast(
    weights: &Matrix,
    snapshot: &ChannelSnapshot,
    search: BroadcastSearch,
) -> Result<Option<BroadcastChoice>, ScheduleError> {
    let n = weights.len();
    if search == BroadcastSearch::Exact && n > EXACT_SEARCH_MAX_DEVICES {
        return Err(ScheduleError::ExactTooLarge { n_devices: n });
    }
    let mut best: Option<BroadcastChoice> = None;
    let mut consider = |tx: usize, receivers: Vec<usize>, rate: f64| {
        if rate <= 0.0 {
            return;
        }
        let score: f64 = rate * receivers.iter().map(|&k| weights[tx][k]).sum::<f64>();
        if score > 0.0 && best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(BroadcastChoice {
                tx,
                receivers,
                rate,
                score,
            });
        }
    };

    for tx in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != tx).collect();
        match search {
            BroadcastSearch::Exact => {
                for mask in 1u32..(1u32 << others.len()) {
                    let receivers: Vec<usize> = others
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, &k)| k)
                        .collect();
                    let rate = receivers
                        .iter()
                        .map(|&k| snapshot.local[tx][k])
                        .fold(f64::INFINITY, f64::min);
                    consider(tx, receivers, rate);
                }
            }
            BroadcastSearch::Greedy => {
                let mut sorted = others.clone();
                sorted.sort_by(|&a, &b| {
                    snapshot.local[tx][b]
                        .partial_cmp(&snapshot.local[tx][a])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                for len in 1..=sorted.len() {
                    let receivers = sorted[..len].to_vec();
                    let rate = snapshot.local[tx][sorted[len - 1]];
                    consider(tx, receivers, rate);
                }
            }
            BroadcastSearch::SingletonOnly => {
                for &rx in &others {
                    consider(tx, vec![rx], snapshot.local[tx][rx]);
                }
            }
        }
    }
    Ok(best)
}
